//! Objective evaluation: mel-cepstral distortion, divergence and code
//! sparsity for a list of conversion systems.

use std::fmt::Write as _;
use std::io::{self, Write};

use ndarray::{ArrayView2, Axis};

use crate::edn::EdnModel;
use crate::error::{check_dim, Result};
use crate::features::MelCepstrum;
use crate::matrix::{Activation, Dictionary, FrameMatrix};
use crate::nmf::{enmf_convert_with_codes, kld_columns, SolveOptions, DEFAULT_EPSILON_FLOOR};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Mcd<T> {
    pub per_frame: Vec<T>,
    pub mean: T,
}

/// `10 / ln 10 * sqrt(2 * sum_d (c_d - c'_d)^2)` per frame, in dB.
pub fn mcd<T: Scalar>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>, exclude_c0: bool) -> Result<Mcd<T>> {
    check_dim("mcd coefficient count", a.nrows(), b.nrows())?;
    check_dim("mcd frame count", a.ncols(), b.ncols())?;
    let first = usize::from(exclude_c0);
    let scale = T::lit(10.0 / std::f64::consts::LN_10);
    let two = T::lit(2.0);
    let per_frame: Vec<T> = a
        .axis_iter(Axis(1))
        .zip(b.axis_iter(Axis(1)))
        .map(|(ca, cb)| {
            let sq: T = (first..a.nrows()).map(|d| (ca[d] - cb[d]) * (ca[d] - cb[d])).sum();
            scale * (two * sq).sqrt()
        })
        .collect();
    let mean = per_frame.iter().copied().sum::<T>() / T::lit(per_frame.len().max(1) as f64);
    Ok(Mcd { per_frame, mean })
}

/// Summary of how many code entries are active.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsitySummary {
    pub n_bases: usize,
    /// Fraction of entries `<= zero_tol`.
    pub zero_fraction: f64,
    pub active_min: usize,
    pub active_median: f64,
    pub active_max: usize,
    pub active_mean: f64,
    /// Mean over frames of largest entry / column sum.
    pub dominance: f64,
}

pub fn sparsity_stats<T: Scalar>(v: &Activation<T>, zero_tol: T) -> SparsitySummary {
    let k = v.nrows();
    let n = v.ncols();
    let mut counts: Vec<usize> = Vec::with_capacity(n);
    let mut dominance = 0.0;
    let mut dominance_frames = 0usize;
    for col in v.as_array().axis_iter(Axis(1)) {
        counts.push(col.iter().filter(|&&e| e > zero_tol).count());
        let s = col.sum();
        if s > T::zero() {
            let top = col.iter().copied().fold(T::zero(), T::max);
            dominance += (top / s).as_f64();
            dominance_frames += 1;
        }
    }
    let total = (k * n).max(1) as f64;
    let active: usize = counts.iter().sum();
    let mut sorted = counts.clone();
    sorted.sort_unstable();
    let median = match sorted.len() {
        0 => 0.0,
        len if len % 2 == 1 => sorted[len / 2] as f64,
        len => (sorted[len / 2 - 1] + sorted[len / 2]) as f64 / 2.0,
    };
    SparsitySummary {
        n_bases: k,
        zero_fraction: 1.0 - active as f64 / total,
        active_min: sorted.first().copied().unwrap_or(0),
        active_median: median,
        active_max: sorted.last().copied().unwrap_or(0),
        active_mean: active as f64 / n.max(1) as f64,
        dominance: if dominance_frames > 0 {
            dominance / dominance_frames as f64
        } else {
            0.0
        },
    }
}

/// Anything that maps source frames to converted target frames.
pub trait Converter<T: Scalar> {
    fn label(&self) -> String;

    fn convert(&self, x: &FrameMatrix<T>) -> Result<FrameMatrix<T>>;

    /// Codes used for sparsity statistics, if the system has them.
    fn codes(&self, _x: &FrameMatrix<T>) -> Result<Option<Activation<T>>> {
        Ok(None)
    }
}

/// Exemplar NMF conversion.
#[derive(Debug, Clone)]
pub struct EnmfSystem<T: Scalar> {
    pub label: String,
    pub ux: Dictionary<T>,
    pub uy: Dictionary<T>,
    pub opts: SolveOptions<T>,
}

impl<T: Scalar> Converter<T> for EnmfSystem<T> {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn convert(&self, x: &FrameMatrix<T>) -> Result<FrameMatrix<T>> {
        enmf_convert_with_codes(x, &self.ux, &self.uy, &self.opts).map(|(y, _)| y)
    }

    fn codes(&self, x: &FrameMatrix<T>) -> Result<Option<Activation<T>>> {
        enmf_convert_with_codes(x, &self.ux, &self.uy, &self.opts).map(|(_, v)| Some(v))
    }
}

/// Encoder-decoder conversion.
#[derive(Debug, Clone)]
pub struct EdnSystem<T: Scalar> {
    pub label: String,
    pub model: EdnModel<T>,
}

impl<T: Scalar> Converter<T> for EdnSystem<T> {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn convert(&self, x: &FrameMatrix<T>) -> Result<FrameMatrix<T>> {
        self.model.convert(x)
    }

    fn codes(&self, x: &FrameMatrix<T>) -> Result<Option<Activation<T>>> {
        self.model.raw_codes(x).map(Some)
    }
}

/// Returns its input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentitySystem;

impl<T: Scalar> Converter<T> for IdentitySystem {
    fn label(&self) -> String {
        "identity".into()
    }

    fn convert(&self, x: &FrameMatrix<T>) -> Result<FrameMatrix<T>> {
        Ok(x.clone())
    }
}

/// One evaluation utterance: source frames and the time-aligned reference.
#[derive(Debug, Clone)]
pub struct TestPair<T: Scalar> {
    pub id: String,
    pub source: FrameMatrix<T>,
    pub reference: FrameMatrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceScore<T> {
    pub id: String,
    pub frames: usize,
    pub mcd_db: T,
    pub mean_kld: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport<T> {
    pub system: String,
    pub utterances: Vec<UtteranceScore<T>>,
    /// Frame-weighted corpus means.
    pub mean_mcd_db: T,
    pub mean_kld: T,
    pub sparsity: Option<SparsitySummary>,
}

/// Scores a converted utterance against its reference.
pub fn score_utterance<T: Scalar>(
    id: &str,
    converted: &FrameMatrix<T>,
    reference: &FrameMatrix<T>,
    mcc: &MelCepstrum<T>,
) -> Result<UtteranceScore<T>> {
    check_dim("evaluation frame count", reference.ncols(), converted.ncols())?;
    let d = mcd(mcc.extract(converted.view())?.view(), mcc.extract(reference.view())?.view(), true)?;
    let klds = kld_columns(reference, converted, T::lit(DEFAULT_EPSILON_FLOOR))?;
    let mean_kld = klds.iter().copied().sum::<T>() / T::lit(klds.len().max(1) as f64);
    Ok(UtteranceScore {
        id: id.to_string(),
        frames: converted.ncols(),
        mcd_db: d.mean,
        mean_kld,
    })
}

/// Aggregates per-utterance scores (frame-weighted) into a report.
pub fn build_report<T: Scalar>(
    system: String,
    utterances: Vec<UtteranceScore<T>>,
    sparsity: Option<SparsitySummary>,
) -> EvalReport<T> {
    let frames: usize = utterances.iter().map(|u| u.frames).sum();
    let w = T::lit(frames.max(1) as f64);
    let weighted = |f: fn(&UtteranceScore<T>) -> T| {
        utterances.iter().map(|u| f(u) * T::lit(u.frames as f64)).sum::<T>() / w
    };
    EvalReport {
        mean_mcd_db: weighted(|u| u.mcd_db),
        mean_kld: weighted(|u| u.mean_kld),
        system,
        utterances,
        sparsity,
    }
}

/// Converts every test utterance with every system and scores the result.
/// Reports follow the order of `systems`.
pub fn compare_systems<T: Scalar>(
    pairs: &[TestPair<T>],
    systems: &[&dyn Converter<T>],
    mcc: &MelCepstrum<T>,
    zero_tol: T,
) -> Result<Vec<EvalReport<T>>> {
    let mut reports = Vec::with_capacity(systems.len());
    for sys in systems {
        let mut scores = Vec::with_capacity(pairs.len());
        let mut codes = Vec::new();
        for p in pairs {
            let y = sys.convert(&p.source)?;
            scores.push(score_utterance(&p.id, &y, &p.reference, mcc)?);
            if let Some(c) = sys.codes(&p.source)? {
                codes.push(c.into_inner());
            }
        }
        let sparsity = if codes.is_empty() {
            None
        } else {
            let views: Vec<_> = codes.iter().map(|c| c.view()).collect();
            let all = ndarray::concatenate(Axis(1), &views)
                .map_err(|e| crate::Error::Domain(e.to_string()))?;
            Some(sparsity_stats(&Activation::from_trusted(all), zero_tol))
        };
        reports.push(build_report(sys.label(), scores, sparsity));
    }
    Ok(reports)
}

/// Per-utterance CSV: `system,utterance,frames,mcd_db,mean_kld`.
pub fn write_report_csv<T: Scalar, W: Write>(reports: &[EvalReport<T>], mut w: W) -> io::Result<()> {
    writeln!(w, "system,utterance,frames,mcd_db,mean_kld")?;
    for r in reports {
        for u in &r.utterances {
            writeln!(w, "{},{},{},{},{}", r.system, u.id, u.frames, u.mcd_db, u.mean_kld)?;
        }
    }
    Ok(())
}

/// One summary row per system.
pub fn write_summary_csv<T: Scalar, W: Write>(reports: &[EvalReport<T>], mut w: W) -> io::Result<()> {
    writeln!(
        w,
        "system,utterances,mean_mcd_db,mean_kld,zero_fraction,active_median,active_max,dominance"
    )?;
    for r in reports {
        let (zf, med, max, dom) = match &r.sparsity {
            Some(s) => (
                s.zero_fraction.to_string(),
                s.active_median.to_string(),
                s.active_max.to_string(),
                s.dominance.to_string(),
            ),
            None => Default::default(),
        };
        writeln!(
            w,
            "{},{},{},{},{zf},{med},{max},{dom}",
            r.system,
            r.utterances.len(),
            r.mean_mcd_db,
            r.mean_kld
        )?;
    }
    Ok(())
}

/// Human-readable summary table.
pub fn format_table<T: Scalar>(reports: &[EvalReport<T>]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:>6} {:>10} {:>12} {:>8} {:>8}",
        "system", "utts", "MCD [dB]", "mean KLD", "zeros", "active"
    );
    for r in reports {
        let (zeros, active) = match &r.sparsity {
            Some(sp) => (format!("{:.3}", sp.zero_fraction), format!("{:.1}", sp.active_median)),
            None => ("-".into(), "-".into()),
        };
        let _ = writeln!(
            s,
            "{:<16} {:>6} {:>10.4} {:>12.6} {:>8} {:>8}",
            r.system,
            r.utterances.len(),
            r.mean_mcd_db.as_f64(),
            r.mean_kld.as_f64(),
            zeros,
            active
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::MccConfig;
    use ndarray::{array, Array2};

    #[test]
    fn mcd_identity_and_single_coefficient() {
        let a = array![[3.0], [1.0], [0.0]];
        assert_eq!(mcd(a.view(), a.view(), true).unwrap().mean, 0.0);
        let b = array![[7.0], [2.0], [0.0]];
        let d = mcd(a.view(), b.view(), true).unwrap().mean;
        assert!((d - 10.0 / std::f64::consts::LN_10 * 2f64.sqrt()).abs() < 1e-12);
        assert!((d - 6.141851).abs() < 1e-6);
        assert_eq!(mcd(b.view(), a.view(), true).unwrap().mean, d);
        assert!(mcd(a.view(), array![[1.0], [2.0]].view(), true).is_err());
    }

    #[test]
    fn sparsity_closed_forms() {
        let one_hot = Activation::new(Array2::<f64>::eye(4)).unwrap();
        let s = sparsity_stats(&one_hot, 0.0);
        assert_eq!(s.zero_fraction, 0.75);
        assert_eq!((s.active_min, s.active_max), (1, 1));
        assert_eq!(s.dominance, 1.0);

        let uniform = Activation::new(Array2::from_elem((4, 3), 0.25)).unwrap();
        let s = sparsity_stats(&uniform, 0.0);
        assert_eq!(s.zero_fraction, 0.0);
        assert_eq!(s.active_median, 4.0);
    }

    #[test]
    fn oracle_and_identity_systems() {
        let src = FrameMatrix::from_nonnegative(array![[1.0, 2.0], [3.0, 1.0], [1.0, 1.0], [2.0, 5.0]]).unwrap();
        let tgt = FrameMatrix::from_nonnegative(array![[2.0, 1.0], [1.0, 1.0], [4.0, 2.0], [1.0, 1.0]]).unwrap();
        let mcc = MelCepstrum::new(
            MccConfig {
                order: 2,
                n_mel: 3,
                sample_rate_hz: 8000.0,
            },
            4,
        )
        .unwrap();
        struct Oracle(FrameMatrix<f64>);
        impl Converter<f64> for Oracle {
            fn label(&self) -> String {
                "oracle".into()
            }
            fn convert(&self, _: &FrameMatrix<f64>) -> Result<FrameMatrix<f64>> {
                Ok(self.0.clone())
            }
        }
        let pairs = vec![TestPair {
            id: "u0".into(),
            source: src,
            reference: tgt.clone(),
        }];
        let oracle = Oracle(tgt);
        let reports = compare_systems(&pairs, &[&oracle, &IdentitySystem], &mcc, 0.0).unwrap();
        assert_eq!(reports[0].mean_mcd_db, 0.0);
        assert!(reports[1].mean_mcd_db > 0.0);
        assert_eq!(reports[1].system, "identity");

        let mut csv = Vec::new();
        write_report_csv(&reports, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
    }
}
