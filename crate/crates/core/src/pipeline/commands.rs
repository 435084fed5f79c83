//! The five pipeline stages. Each reads and writes plain directories; every
//! output directory ends with a `MANIFEST`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::checkpoint::{load_dictionary_pair, load_model, save_dictionary_pair, save_model};
use super::config::{parse_kv, PipelineConfig, Split, System};
use super::fmat;
use super::manifest::write_manifest;
use crate::edn::{train_stage1, train_stage2, DecoderParams, EdnModel, EncoderParams, EpochRecord};
use crate::error::{Error, Result};
use crate::eval::{build_report, format_table, score_utterance, sparsity_stats, write_report_csv, write_summary_csv, EvalReport};
use crate::features::{
    dtw_align, energy_compensate, f0_convert, f0_stats, normalize_utterance, synth_corpus, AlignmentMap, F0Domain,
    F0Stats, MelCepstrum, Utterance,
};
use crate::matrix::{Activation, FrameMatrix};
use crate::nmf::{build_exemplar_dictionaries, enmf_convert_with_codes};

pub const CORPUS_META: &str = "corpus.txt";
pub const PREPARED_META: &str = "prepared.txt";
pub const CONVERTED_META: &str = "converted.txt";
pub const F0_STATS: &str = "f0_stats.txt";
pub const CONFIG_SNAPSHOT: &str = "config.txt";
pub const TRAIN_LOG: &str = "train_log.csv";

pub fn utterance_id(i: usize) -> String {
    format!("utt{i:04}")
}

/// Key/value description file shared by all output directories.
#[derive(Debug, Clone, Default)]
struct Meta(Vec<(String, String)>);

impl Meta {
    fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Format {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Ok(Self(parse_kv(&text)?))
    }

    fn push(&mut self, k: &str, v: impl ToString) {
        self.0.push((k.to_string(), v.to_string()));
    }

    fn get(&self, k: &str, path: &Path) -> Result<&str> {
        self.0
            .iter()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Format {
                path: path.display().to_string(),
                reason: format!("missing `{k}`"),
            })
    }

    fn parse<T: std::str::FromStr>(&self, k: &str, path: &Path) -> Result<T> {
        self.get(k, path)?.parse().map_err(|_| Error::Format {
            path: path.display().to_string(),
            reason: format!("invalid `{k}`"),
        })
    }

    fn ids(&self, k: &str, path: &Path) -> Result<Vec<String>> {
        Ok(self
            .get(k, path)?
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect())
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for (k, v) in &self.0 {
            let _ = writeln!(s, "{k} = {v}");
        }
        fs::write(path, s)?;
        Ok(())
    }
}

fn write_snapshot(dir: &Path, cfg: &PipelineConfig) -> Result<()> {
    fs::write(dir.join(CONFIG_SNAPSHOT), cfg.to_text())?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

// ---------------------------------------------------------------- synth

pub struct SynthSummary {
    pub dir: PathBuf,
    pub train: Vec<String>,
    pub eval: Vec<String>,
}

/// Draws a synthetic parallel corpus into `out_dir`.
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<SynthSummary> {
    let out = PipelineConfig::require(&cfg.out_dir, "output directory (--out)")?;
    cfg.synth.validate()?;
    let corpus = synth_corpus::<f64>(&cfg.synth, cfg.seed)?;
    ensure_dir(out)?;
    for side in ["source", "target", "truth"] {
        ensure_dir(&out.join(side))?;
    }

    let ids: Vec<String> = (0..corpus.source.len()).map(utterance_id).collect();
    for (i, id) in ids.iter().enumerate() {
        for (side, u) in [("source", &corpus.source[i]), ("target", &corpus.target[i])] {
            fmat::write_file(&out.join(side).join(format!("{id}.fmat")), u.frames())?;
            fmat::write_row(&out.join(side).join(format!("{id}.f0.fmat")), u.f0())?;
        }
        fmat::write_file(&out.join("truth").join(format!("{id}.codes.fmat")), &corpus.codes[i])?;
    }
    fmat::write_file(&out.join("truth/ux.fmat"), corpus.ux.as_array())?;
    fmat::write_file(&out.join("truth/uy.fmat"), corpus.uy.as_array())?;

    let train: Vec<String> = corpus.train_ids().map(utterance_id).collect();
    let eval: Vec<String> = corpus.eval_ids().map(utterance_id).collect();
    let mut meta = Meta::default();
    meta.push("format", "ednsc-corpus");
    meta.push("seed", cfg.seed);
    meta.push("dim", cfg.synth.dim);
    meta.push("n_bases", cfg.synth.n_bases);
    meta.push("frame_period_ms", cfg.synth.frame_period_ms);
    meta.push("silence_frames", corpus.silence_frames);
    meta.push("train", train.join(","));
    meta.push("eval", eval.join(","));
    meta.write(&out.join(CORPUS_META))?;
    write_snapshot(out, cfg)?;
    write_manifest(out)?;
    log::info!("synth: {} utterances written to {}", ids.len(), out.display());
    Ok(SynthSummary {
        dir: out.to_path_buf(),
        train,
        eval,
    })
}

// ---------------------------------------------------------------- prepare

fn load_utterance(dir: &Path, id: &str, frame_period_ms: f64) -> Result<Utterance<f64>> {
    let frames = fmat::read_file(&dir.join(format!("{id}.fmat")))?;
    let f0 = fmat::read_row(&dir.join(format!("{id}.f0.fmat")))?;
    Utterance::new(frames, f0, frame_period_ms)
}

fn pair_path(dir: &Path, id: &str, ext: &str) -> PathBuf {
    dir.join("pairs").join(format!("{id}.{ext}"))
}

fn stats_lines(meta: &mut Meta, prefix: &str, s: &F0Stats<f64>) {
    meta.push(&format!("{prefix}_mean"), s.mean);
    meta.push(&format!("{prefix}_std"), s.std);
}

/// VAD, normalization, mel-cepstra and DTW for every utterance pair, plus
/// F0 statistics over the training split.
pub fn cmd_prepare(cfg: &PipelineConfig) -> Result<PathBuf> {
    let corpus = PipelineConfig::require(&cfg.corpus_dir, "corpus directory (--corpus)")?;
    let out = PipelineConfig::require(&cfg.out_dir, "output directory (--out)")?;
    let meta_path = corpus.join(CORPUS_META);
    let meta = Meta::read(&meta_path)?;
    let period: f64 = meta.parse("frame_period_ms", &meta_path)?;
    let train = meta.ids("train", &meta_path)?;
    let eval = meta.ids("eval", &meta_path)?;
    ensure_dir(&out.join("pairs"))?;

    let mut extractor: Option<MelCepstrum<f64>> = None;
    let mut f0_src = Vec::new();
    let mut f0_tgt = Vec::new();
    let mut dim = None;
    for (id, is_train) in train.iter().map(|i| (i, true)).chain(eval.iter().map(|i| (i, false))) {
        let src = load_utterance(&corpus.join("source"), id, period)?;
        let tgt = load_utterance(&corpus.join("target"), id, period)?;
        if src.frames().nrows() != tgt.frames().nrows() {
            return Err(Error::DimensionMismatch {
                context: "spectral dimension of a pair",
                expected: src.frames().nrows(),
                found: tgt.frames().nrows(),
            });
        }
        let m = src.frames().nrows();
        let expected = *dim.get_or_insert(m);
        if expected != m {
            return Err(Error::DimensionMismatch {
                context: "spectral dimension of a pair",
                expected,
                found: m,
            });
        }
        let mcc = match &extractor {
            Some(e) => e,
            None => extractor.insert(MelCepstrum::new(cfg.mcc(), m)?),
        };

        let ns = normalize_utterance(&src, cfg.vad_floor_db)?;
        let nt = normalize_utterance(&tgt, cfg.vad_floor_db)?;
        let align = dtw_align(mcc.extract(ns.frames.view())?.view(), mcc.extract(nt.frames.view())?.view())?;
        let aligned = nt.frames.select_columns(align.as_slice());

        fmat::write_file(&pair_path(out, id, "src.fmat"), ns.frames.as_array())?;
        fmat::write_file(&pair_path(out, id, "tgt.fmat"), aligned.as_array())?;
        fmat::write_row(&pair_path(out, id, "energy.fmat"), &ns.energies)?;
        fmat::write_row(&pair_path(out, id, "f0.fmat"), &ns.f0)?;
        let idx: Vec<f64> = align.as_slice().iter().map(|&j| j as f64).collect();
        fmat::write_row(&pair_path(out, id, "align.fmat"), &idx)?;
        if is_train {
            f0_src.extend_from_slice(&ns.f0);
            f0_tgt.extend_from_slice(&nt.f0);
        }
    }

    let src_stats = f0_stats(&f0_src, cfg.f0_domain)?;
    let tgt_stats = f0_stats(&f0_tgt, cfg.f0_domain)?;
    let mut stats = Meta::default();
    stats.push("domain", domain_name(cfg.f0_domain));
    stats_lines(&mut stats, "source", &src_stats);
    stats_lines(&mut stats, "target", &tgt_stats);
    stats.write(&out.join(F0_STATS))?;

    let mut pm = Meta::default();
    pm.push("format", "ednsc-prepared");
    pm.push("dim", dim.unwrap_or(0));
    pm.push("train", train.join(","));
    pm.push("eval", eval.join(","));
    pm.write(&out.join(PREPARED_META))?;
    write_snapshot(out, cfg)?;
    write_manifest(out)?;
    log::info!("prepare: {} pairs aligned into {}", train.len() + eval.len(), out.display());
    Ok(out.to_path_buf())
}

fn domain_name(d: F0Domain) -> &'static str {
    match d {
        F0Domain::Log => "log",
        F0Domain::Linear => "linear",
    }
}

/// Reads `f0_stats.txt` from a prepared directory.
pub fn read_f0_stats(dir: &Path) -> Result<(F0Stats<f64>, F0Stats<f64>)> {
    let path = dir.join(F0_STATS);
    let m = Meta::read(&path)?;
    let domain = match m.get("domain", &path)? {
        "log" => F0Domain::Log,
        "linear" => F0Domain::Linear,
        other => {
            return Err(Error::Format {
                path: path.display().to_string(),
                reason: format!("unknown domain `{other}`"),
            })
        }
    };
    let src = F0Stats::new(m.parse("source_mean", &path)?, m.parse("source_std", &path)?, domain)?;
    let tgt = F0Stats::new(m.parse("target_mean", &path)?, m.parse("target_std", &path)?, domain)?;
    Ok((src, tgt))
}

/// Prepared pair `id`: normalized source frames and DTW-aligned target frames.
pub fn load_pair(dir: &Path, id: &str) -> Result<(FrameMatrix<f64>, FrameMatrix<f64>)> {
    let src = FrameMatrix::new(fmat::read_file(&pair_path(dir, id, "src.fmat"))?)?;
    let tgt = FrameMatrix::new(fmat::read_file(&pair_path(dir, id, "tgt.fmat"))?)?;
    if (src.nrows(), src.ncols()) != (tgt.nrows(), tgt.ncols()) {
        return Err(Error::DimensionMismatch {
            context: "prepared pair shape",
            expected: src.ncols(),
            found: tgt.ncols(),
        });
    }
    Ok((src, tgt))
}

fn prepared_split(dir: &Path, split: Split) -> Result<Vec<String>> {
    let path = dir.join(PREPARED_META);
    let m = Meta::read(&path)?;
    Ok(match split {
        Split::Train => m.ids("train", &path)?,
        Split::Eval => m.ids("eval", &path)?,
        Split::All => {
            let mut v = m.ids("train", &path)?;
            v.extend(m.ids("eval", &path)?);
            v
        }
    })
}

// ---------------------------------------------------------------- train

pub struct TrainSummary {
    pub dir: PathBuf,
    pub log: Vec<EpochRecord>,
}

fn write_train_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut s = String::from("epoch,stage,lr,loss,recon_kld,conv_kld\n");
    for r in log {
        let conv = r.conv_kld.map(|c| c.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{},{},{conv}", r.epoch, r.stage, r.lr, r.loss, r.recon_kld);
    }
    fs::write(path, s)?;
    Ok(())
}

/// Builds the exemplar dictionaries for every configured size, then trains
/// the network in two stages starting from the EDN-sized exemplar pair.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainSummary> {
    let prepared = PipelineConfig::require(&cfg.prepared_dir, "prepared directory (--prepared)")?;
    let out = PipelineConfig::require(&cfg.out_dir, "output directory (--out)")?;
    cfg.validate()?;
    let ids = prepared_split(prepared, Split::Train)?;
    if ids.is_empty() {
        return Err(Error::EmptyInput("training split"));
    }
    let mut xs = Vec::with_capacity(ids.len());
    let mut ys = Vec::with_capacity(ids.len());
    for id in &ids {
        let (x, y) = load_pair(prepared, id)?;
        xs.push(x);
        ys.push(y);
    }
    let x = FrameMatrix::concat(&xs.iter().collect::<Vec<_>>())?;
    let y = FrameMatrix::concat(&ys.iter().collect::<Vec<_>>())?;
    let align = AlignmentMap::identity(x.ncols());
    ensure_dir(out)?;

    let exemplar_seed = cfg.seed.wrapping_add(1);
    for &k in &cfg.dict_sizes {
        let ex = build_exemplar_dictionaries(&x, &y, &align, k, exemplar_seed)?;
        save_dictionary_pair(out, &ex.ux, &ex.uy)?;
    }

    let k = cfg.edn_dict_size()?;
    let ex = build_exemplar_dictionaries(&x, &y, &align, k, exemplar_seed)?;
    let tc = cfg.train_config();
    let theta = EncoderParams::data_init(&x, cfg.hidden, k, cfg.seed.wrapping_add(2), cfg.code_bias)?;
    log::info!("train: {} frames, K = {k}, stage 1", x.ncols());
    let s1 = train_stage1(&x, theta, &ex.ux, &tc)?;
    log::info!("train: stage 2");
    let s2 = train_stage2(&x, &y, s1.encoder, DecoderParams::from_dictionaries(&ex.ux, &ex.uy)?, &tc)?;
    let model = EdnModel {
        encoder: s2.encoder,
        decoders: s2.decoders,
    };
    let mut log = s1.log;
    log.extend(s2.log);

    let mut extra = Meta::default();
    extra.push("seed", cfg.seed);
    extra.push("train_frames", x.ncols());
    extra.push("dict_sizes", cfg.dict_sizes.iter().map(ToString::to_string).collect::<Vec<_>>().join(","));
    let mut extra_text = String::new();
    for (k, v) in &extra.0 {
        let _ = writeln!(extra_text, "{k} = {v}");
    }
    save_model(out, &model, &extra_text)?;
    write_train_log(&out.join(TRAIN_LOG), &log)?;
    write_snapshot(out, cfg)?;
    write_manifest(out)?;
    Ok(TrainSummary {
        dir: out.to_path_buf(),
        log,
    })
}

// ---------------------------------------------------------------- convert

enum Loaded {
    Edn(Box<EdnModel<f64>>),
    Enmf(crate::matrix::Dictionary<f64>, crate::matrix::Dictionary<f64>),
}

/// Converts the prepared source frames of the configured split. Output frames
/// are energy-compensated; F0 goes through the mean-variance transform.
pub fn cmd_convert(cfg: &PipelineConfig) -> Result<PathBuf> {
    let model_dir = PipelineConfig::require(&cfg.model_dir, "model directory (--model)")?;
    let input = PipelineConfig::require(&cfg.input_dir, "prepared input directory (--input)")?;
    let out = PipelineConfig::require(&cfg.out_dir, "output directory (--out)")?;
    let (label, loaded) = match cfg.system {
        System::Edn => {
            let model = load_model(model_dir)?;
            (format!("EDN-{}", model.decoders.n_bases()), Loaded::Edn(Box::new(model)))
        }
        System::Enmf => {
            let k = cfg.edn_dict_size()?;
            let (ux, uy) = load_dictionary_pair(model_dir, k)?;
            (format!("ENMF-{k}"), Loaded::Enmf(ux, uy))
        }
    };
    let (src_stats, tgt_stats) = read_f0_stats(input)?;
    let ids = prepared_split(input, cfg.convert_split)?;
    let opts = cfg.solve_options();
    ensure_dir(out)?;

    for id in &ids {
        let x = FrameMatrix::new(fmat::read_file(&pair_path(input, id, "src.fmat"))?)?;
        let energies = fmat::read_row(&pair_path(input, id, "energy.fmat"))?;
        let f0 = fmat::read_row(&pair_path(input, id, "f0.fmat"))?;
        let (y, codes) = match &loaded {
            Loaded::Edn(m) => {
                if m.encoder.input_dim() != x.nrows() {
                    return Err(Error::DimensionMismatch {
                        context: "model input dimension",
                        expected: m.encoder.input_dim(),
                        found: x.nrows(),
                    });
                }
                (m.convert(&x)?, m.raw_codes(&x)?)
            }
            Loaded::Enmf(ux, uy) => enmf_convert_with_codes(&x, ux, uy, &opts)?,
        };
        fmat::write_file(&out.join(format!("{id}.fmat")), &energy_compensate(&y, &energies)?)?;
        fmat::write_row(&out.join(format!("{id}.f0.fmat")), &f0_convert(&f0, &src_stats, &tgt_stats)?)?;
        fmat::write_file(&out.join(format!("{id}.codes.fmat")), codes.as_array())?;
    }

    let mut meta = Meta::default();
    meta.push("format", "ednsc-converted");
    meta.push("system", &label);
    meta.push("ids", ids.join(","));
    meta.write(&out.join(CONVERTED_META))?;
    write_snapshot(out, cfg)?;
    write_manifest(out)?;
    log::info!("convert: {label} on {} utterances into {}", ids.len(), out.display());
    Ok(out.to_path_buf())
}

// ---------------------------------------------------------------- evaluate

/// Scores every converted directory against the prepared reference and
/// writes `report.csv`, `summary.csv` and `report.txt` when an output
/// directory is configured.
pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<Vec<EvalReport<f64>>> {
    let reference = PipelineConfig::require(&cfg.reference_dir, "reference directory (--reference)")?;
    if cfg.converted_dirs.is_empty() {
        return Err(Error::Config("missing required path: converted directory (--converted)".into()));
    }
    let ref_meta_path = reference.join(PREPARED_META);
    let dim: usize = Meta::read(&ref_meta_path)?.parse("dim", &ref_meta_path)?;
    let mcc = MelCepstrum::<f64>::new(cfg.mcc(), dim)?;

    let mut reports = Vec::with_capacity(cfg.converted_dirs.len());
    for dir in &cfg.converted_dirs {
        let path = dir.join(CONVERTED_META);
        let meta = Meta::read(&path)?;
        let label = meta.get("system", &path)?.to_string();
        let mut scores = Vec::new();
        let mut codes = Vec::new();
        for id in meta.ids("ids", &path)? {
            let converted = FrameMatrix::from_nonnegative(fmat::read_file(&dir.join(format!("{id}.fmat")))?)?;
            let (_, target) = load_pair(reference, &id)?;
            scores.push(score_utterance(&id, &converted, &target, &mcc)?);
            let cp = dir.join(format!("{id}.codes.fmat"));
            if cp.exists() {
                codes.push(fmat::read_file(&cp)?);
            }
        }
        let sparsity = if codes.is_empty() {
            None
        } else {
            let views: Vec<_> = codes.iter().map(|c| c.view()).collect();
            let all = ndarray::concatenate(ndarray::Axis(1), &views).map_err(|e| Error::Domain(e.to_string()))?;
            Some(sparsity_stats(&Activation::new(all)?, cfg.zero_tol))
        };
        reports.push(build_report(label, scores, sparsity));
    }

    if let Some(out) = &cfg.out_dir {
        ensure_dir(out)?;
        let mut csv = Vec::new();
        write_report_csv(&reports, &mut csv)?;
        fs::write(out.join("report.csv"), csv)?;
        let mut summary = Vec::new();
        write_summary_csv(&reports, &mut summary)?;
        fs::write(out.join("summary.csv"), summary)?;
        fs::write(out.join("report.txt"), format_table(&reports))?;
        write_snapshot(out, cfg)?;
        write_manifest(out)?;
    }
    Ok(reports)
}

/// Writes a converted directory holding the prepared targets themselves,
/// which scores zero distortion.
pub fn write_reference_as_converted(reference: &Path, out: &Path, split: Split) -> Result<PathBuf> {
    let ids = prepared_split(reference, split)?;
    ensure_dir(out)?;
    for id in &ids {
        let (_, tgt) = load_pair(reference, id)?;
        fmat::write_file(&out.join(format!("{id}.fmat")), tgt.as_array())?;
    }
    let mut meta = Meta::default();
    meta.push("format", "ednsc-converted");
    meta.push("system", "reference");
    meta.push("ids", ids.join(","));
    meta.write(&out.join(CONVERTED_META))?;
    write_manifest(out)?;
    Ok(out.to_path_buf())
}
