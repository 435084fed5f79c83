//! Model directories: encoder and decoder tensors as FMAT files plus a
//! `model.txt` description.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array1;

use super::config::parse_kv;
use super::fmat;
use crate::edn::{DecoderParams, EdnModel, EncoderParams, Layer};
use crate::error::{Error, Result};
use crate::matrix::Dictionary;

pub const MODEL_META: &str = "model.txt";
pub const MODEL_FORMAT: &str = "ednsc-model";
pub const MODEL_VERSION: u32 = 1;

fn layer_files(i: usize) -> (String, String) {
    (format!("encoder_w{i}.fmat"), format!("encoder_b{i}.fmat"))
}

pub fn enmf_files(k: usize) -> (String, String) {
    (format!("enmf_{k}_ux.fmat"), format!("enmf_{k}_uy.fmat"))
}

/// Writes the model tensors and `model.txt`. `extra` lines are appended to
/// the description verbatim.
pub fn save_model(dir: &Path, model: &EdnModel<f64>, extra: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let enc = &model.encoder;
    for (i, layer) in enc.layers.iter().enumerate() {
        let (w, b) = layer_files(i + 1);
        fmat::write_file(&dir.join(w), &layer.weight)?;
        fmat::write_row(&dir.join(b), layer.bias.as_slice().expect("contiguous bias"))?;
    }
    fmat::write_file(&dir.join("ax_pre.fmat"), &model.decoders.ax_pre)?;
    fmat::write_file(&dir.join("ay_pre.fmat"), &model.decoders.ay_pre)?;

    let [h1, h2] = enc.hidden_dims();
    let mut meta = String::new();
    let _ = writeln!(meta, "format = {MODEL_FORMAT}");
    let _ = writeln!(meta, "version = {MODEL_VERSION}");
    let _ = writeln!(meta, "input_dim = {}", enc.input_dim());
    let _ = writeln!(meta, "hidden_1 = {h1}");
    let _ = writeln!(meta, "hidden_2 = {h2}");
    let _ = writeln!(meta, "code_dim = {}", enc.code_dim());
    meta.push_str(extra);
    fs::write(dir.join(MODEL_META), meta)?;
    Ok(())
}

fn meta_value<'a>(meta: &'a [(String, String)], key: &str, path: &Path) -> Result<&'a str> {
    meta.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Format {
            path: path.display().to_string(),
            reason: format!("missing `{key}`"),
        })
}

fn meta_usize(meta: &[(String, String)], key: &str, path: &Path) -> Result<usize> {
    meta_value(meta, key, path)?.parse().map_err(|_| Error::Format {
        path: path.display().to_string(),
        reason: format!("invalid `{key}`"),
    })
}

pub fn load_model(dir: &Path) -> Result<EdnModel<f64>> {
    let meta_path = dir.join(MODEL_META);
    let meta = parse_kv(&fs::read_to_string(&meta_path)?)?;
    if meta_value(&meta, "format", &meta_path)? != MODEL_FORMAT {
        return Err(Error::Format {
            path: meta_path.display().to_string(),
            reason: "not a model description".into(),
        });
    }
    if meta_usize(&meta, "version", &meta_path)? != MODEL_VERSION as usize {
        return Err(Error::Format {
            path: meta_path.display().to_string(),
            reason: "unsupported model version".into(),
        });
    }
    let dims = [
        meta_usize(&meta, "input_dim", &meta_path)?,
        meta_usize(&meta, "hidden_1", &meta_path)?,
        meta_usize(&meta, "hidden_2", &meta_path)?,
        meta_usize(&meta, "code_dim", &meta_path)?,
    ];

    let mut layers = Vec::with_capacity(3);
    for i in 0..3 {
        let (w, b) = layer_files(i + 1);
        let weight = fmat::read_file(&dir.join(&w))?;
        let bias = Array1::from(fmat::read_row(&dir.join(&b))?);
        if weight.dim() != (dims[i + 1], dims[i]) {
            return Err(Error::DimensionMismatch {
                context: "encoder weight shape",
                expected: dims[i + 1] * dims[i],
                found: weight.len(),
            });
        }
        layers.push(Layer { weight, bias });
    }
    let layers: [Layer<f64>; 3] = layers.try_into().map_err(|_| Error::Domain("layer count".into()))?;
    let encoder = EncoderParams::new(layers)?;

    let ax_pre = fmat::read_file(&dir.join("ax_pre.fmat"))?;
    let ay_pre = fmat::read_file(&dir.join("ay_pre.fmat"))?;
    for (name, a) in [("ax_pre.fmat", &ax_pre), ("ay_pre.fmat", &ay_pre)] {
        if a.dim() != (dims[0], dims[3]) {
            return Err(Error::DimensionMismatch {
                context: name,
                expected: dims[0] * dims[3],
                found: a.len(),
            });
        }
    }
    Ok(EdnModel {
        encoder,
        decoders: DecoderParams { ax_pre, ay_pre },
    })
}

pub fn save_dictionary_pair(dir: &Path, ux: &Dictionary<f64>, uy: &Dictionary<f64>) -> Result<()> {
    let (fx, fy) = enmf_files(ux.n_bases());
    fmat::write_file(&dir.join(fx), ux.as_array())?;
    fmat::write_file(&dir.join(fy), uy.as_array())?;
    Ok(())
}

pub fn load_dictionary_pair(dir: &Path, k: usize) -> Result<(Dictionary<f64>, Dictionary<f64>)> {
    let (fx, fy) = enmf_files(k);
    let ux = Dictionary::new(fmat::read_file(&dir.join(&fx))?)?;
    let uy = Dictionary::new(fmat::read_file(&dir.join(&fy))?)?;
    if ux.dim() != uy.dim() || ux.n_bases() != uy.n_bases() || ux.n_bases() != k {
        return Err(Error::Format {
            path: dir.join(fy).display().to_string(),
            reason: format!("dictionary pair does not hold {k} matching bases"),
        });
    }
    Ok((ux, uy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use crate::matrix::FrameMatrix;

    #[test]
    fn reload_reproduces_conversion_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let encoder = EncoderParams::he_init(6, [5, 4], 3, 11);
        let a = Array2::from_shape_fn((6, 3), |(i, j)| 0.1 + ((i * 7 + j * 3) % 5) as f64);
        let model = EdnModel {
            encoder,
            decoders: DecoderParams {
                ax_pre: a.clone(),
                ay_pre: a.t().as_standard_layout().t().to_owned() * 0.5 - 0.2,
            },
        };
        save_model(dir.path(), &model, "stage = 2\n").unwrap();
        let back = load_model(dir.path()).unwrap();
        let x = FrameMatrix::from_nonnegative(Array2::from_shape_fn((6, 4), |(i, j)| 1.0 + (i + 2 * j) as f64)).unwrap();
        let y1 = model.convert(&x).unwrap();
        let y2 = back.convert(&x).unwrap();
        assert!(y1.as_array().iter().zip(y2.as_array()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rejects_foreign_description() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MODEL_META), "format = other\nversion = 1\n").unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::Format { .. })));
    }
}
