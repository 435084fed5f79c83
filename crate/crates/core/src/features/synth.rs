//! Synthetic parallel corpus with known ground-truth factorization.
//!
//! Two "speakers" share sparse codes: source frames are `Ux* V*` and target
//! frames are `Uy* V*`, where the target dictionary is a frequency-warped,
//! re-tilted copy of the source one. Codes are piecewise-stationary segments
//! with small per-frame jitter so that consecutive frames look alike.

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Utterance;
use crate::error::{Error, Result};
use crate::matrix::{normalize_columns_in_place, Dictionary, FrameMatrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Spectral dimension M.
    pub dim: usize,
    /// Ground-truth number of bases K*.
    pub n_bases: usize,
    /// Total utterances; the last `n_eval` of them form the evaluation split.
    pub n_utterances: usize,
    pub n_eval: usize,
    /// Speech frames per source utterance (silence padding excluded).
    pub frames_per_utterance: usize,
    /// Fraction of active bases per code, in (0, 1].
    pub sparsity: f64,
    /// Mixing weight of a random unit-sum spectrum added to source frames.
    pub noise: f64,
    /// Relative jitter of target segment durations; 0 keeps timelines equal.
    pub time_warp: f64,
    /// Low-energy frames prepended and appended to every utterance.
    pub silence_frames: usize,
    pub min_segment: usize,
    pub max_segment: usize,
    pub frame_period_ms: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            n_bases: 32,
            n_utterances: 24,
            n_eval: 4,
            frames_per_utterance: 100,
            sparsity: 0.1,
            noise: 0.0,
            time_warp: 0.0,
            silence_frames: 0,
            min_segment: 4,
            max_segment: 12,
            frame_period_ms: 5.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim < 2 || self.n_bases == 0 || self.n_utterances == 0 || self.frames_per_utterance == 0 {
            return fail("synthetic corpus dimensions must be positive (dim >= 2)".into());
        }
        if self.n_eval >= self.n_utterances {
            return fail(format!(
                "n_eval ({}) must be smaller than n_utterances ({})",
                self.n_eval, self.n_utterances
            ));
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return fail(format!("sparsity must lie in (0, 1], got {}", self.sparsity));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return fail(format!("noise must lie in [0, 1), got {}", self.noise));
        }
        if !(0.0..1.0).contains(&self.time_warp) {
            return fail(format!("time_warp must lie in [0, 1), got {}", self.time_warp));
        }
        if self.min_segment == 0 || self.min_segment > self.max_segment {
            return fail("segment lengths must satisfy 1 <= min <= max".into());
        }
        if !(self.frame_period_ms > 0.0) {
            return fail("frame period must be positive".into());
        }
        Ok(())
    }

    /// Active bases per frame.
    pub fn active_bases(&self) -> usize {
        ((self.sparsity * self.n_bases as f64).round() as usize).clamp(1, self.n_bases)
    }
}

/// Generated corpus plus the factors that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus<T: Scalar> {
    pub source: Vec<Utterance<T>>,
    pub target: Vec<Utterance<T>>,
    pub ux: Dictionary<T>,
    pub uy: Dictionary<T>,
    /// Per source utterance: K* × (speech frames) codes on the source timeline.
    pub codes: Vec<Array2<T>>,
    /// Per target utterance: codes on the (possibly warped) target timeline.
    pub target_codes: Vec<Array2<T>>,
    pub silence_frames: usize,
    pub n_eval: usize,
}

impl<T: Scalar> SynthCorpus<T> {
    pub fn n_train(&self) -> usize {
        self.source.len() - self.n_eval
    }

    pub fn train_ids(&self) -> std::ops::Range<usize> {
        0..self.n_train()
    }

    pub fn eval_ids(&self) -> std::ops::Range<usize> {
        self.n_train()..self.source.len()
    }

    /// Normalized source speech frames of utterance `i`.
    pub fn source_frames(&self, i: usize) -> FrameMatrix<T> {
        speech_frames(&self.source[i], self.silence_frames)
    }

    /// Normalized target speech frames of utterance `i` (target timeline).
    pub fn target_frames(&self, i: usize) -> FrameMatrix<T> {
        speech_frames(&self.target[i], self.silence_frames)
    }

    /// Source frames and the exactly aligned ground-truth target frames
    /// `Uy* V*` on the source timeline, concatenated over `ids`.
    pub fn oracle_pairs(&self, ids: impl IntoIterator<Item = usize>) -> (FrameMatrix<T>, FrameMatrix<T>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in ids {
            xs.push(self.source_frames(i));
            ys.push(FrameMatrix::from_trusted(self.uy.as_array().dot(&self.codes[i])));
        }
        let xr: Vec<_> = xs.iter().collect();
        let yr: Vec<_> = ys.iter().collect();
        (
            FrameMatrix::concat(&xr).expect("matching dims"),
            FrameMatrix::concat(&yr).expect("matching dims"),
        )
    }

    /// Ground-truth codes concatenated over `ids`.
    pub fn oracle_codes(&self, ids: impl IntoIterator<Item = usize>) -> Array2<T> {
        let parts: Vec<_> = ids.into_iter().map(|i| self.codes[i].view()).collect();
        ndarray::concatenate(Axis(1), &parts).expect("matching dims")
    }
}

fn speech_frames<T: Scalar>(u: &Utterance<T>, pad: usize) -> FrameMatrix<T> {
    let n = u.n_frames();
    let slice = u.frames().slice(ndarray::s![.., pad..n - pad]).to_owned();
    FrameMatrix::from_nonnegative(slice).expect("synthetic speech frames have positive energy")
}

/// Spectral floor under every basis, relative to a unit peak.
const BASIS_FLOOR: f64 = 1e-3;

struct Bump {
    center: f64,
    width: f64,
    amp: f64,
}

fn render(bumps: &[Bump], tilt: f64, dim: usize) -> Vec<f64> {
    let mut col: Vec<f64> = (0..dim)
        .map(|m| {
            let peaks: f64 = bumps
                .iter()
                .map(|b| {
                    let z = (m as f64 - b.center) / b.width;
                    b.amp * (-0.5 * z * z).exp()
                })
                .sum();
            (peaks + BASIS_FLOOR) * (-tilt * m as f64 / dim as f64).exp()
        })
        .collect();
    let s: f64 = col.iter().sum();
    col.iter_mut().for_each(|v| *v /= s);
    col
}

/// Paired ground-truth dictionaries. The target warps every peak position by a
/// shared power law and broadens it slightly.
fn draw_dictionaries(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Array2<f64>, Array2<f64>) {
    let (m, k) = (cfg.dim, cfg.n_bases);
    let top = (m - 1) as f64;
    let gamma = rng.random_range(0.8..0.95);
    let src_tilt = rng.random_range(0.5..1.5);
    let tgt_tilt = rng.random_range(1.5..2.5);
    let mut ux = Array2::zeros((m, k));
    let mut uy = Array2::zeros((m, k));
    let mut slots: Vec<usize> = (0..k).collect();
    slots.shuffle(rng);
    let slot_center = |slot: f64| top * (0.03 + 0.94 * slot / k as f64);
    for j in 0..k {
        let bumps = vec![Bump {
            center: slot_center(slots[j] as f64 + rng.random_range(0.3..0.7)),
            width: rng.random_range(0.5..0.9),
            amp: 1.0,
        }];
        let warped: Vec<Bump> = bumps
            .iter()
            .map(|b| Bump {
                center: top * (b.center / top).powf(gamma),
                width: b.width * 1.15,
                amp: b.amp,
            })
            .collect();
        for (i, v) in render(&bumps, src_tilt, m).into_iter().enumerate() {
            ux[[i, j]] = v;
        }
        for (i, v) in render(&warped, tgt_tilt, m).into_iter().enumerate() {
            uy[[i, j]] = v;
        }
    }
    (ux, uy)
}

struct Segment {
    len: usize,
    voiced: bool,
    f0_factor: f64,
    gain: f64,
}

fn random_unit_sum(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Draws a corpus. Output is a pure function of `cfg` and `seed`.
pub fn synth_corpus<T: Scalar>(cfg: &SynthConfig, seed: u64) -> Result<SynthCorpus<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ux, uy) = draw_dictionaries(cfg, &mut rng);
    let (m, k) = (cfg.dim, cfg.n_bases);
    let active = cfg.active_bases();
    let jitter = Normal::new(0.0f64, 0.08).expect("valid normal");
    let src_f0 = 130.0;
    let tgt_f0 = 210.0;
    let pad = cfg.silence_frames;

    let mut source = Vec::with_capacity(cfg.n_utterances);
    let mut target = Vec::with_capacity(cfg.n_utterances);
    let mut codes = Vec::with_capacity(cfg.n_utterances);
    let mut target_codes = Vec::with_capacity(cfg.n_utterances);

    for _ in 0..cfg.n_utterances {
        // Segment layout on the source timeline.
        let mut segments = Vec::new();
        let mut total = 0;
        while total < cfg.frames_per_utterance {
            let len = rng
                .random_range(cfg.min_segment..=cfg.max_segment)
                .min(cfg.frames_per_utterance - total);
            segments.push(Segment {
                len,
                voiced: rng.random::<f64>() < 0.8,
                f0_factor: jitter.sample(&mut rng).exp(),
                gain: 10f64.powf(rng.random_range(1.0..3.0)),
            });
            total += len;
        }

        let n = cfg.frames_per_utterance;
        let mut v = Array2::<f64>::zeros((k, n));
        let mut col = 0;
        for seg in &segments {
            let support = sample(&mut rng, k, active).into_vec();
            let weights: Vec<f64> = support.iter().map(|_| rng.random_range(0.2..1.0)).collect();
            for _ in 0..seg.len {
                let mut s = 0.0;
                for (&b, &w) in support.iter().zip(&weights) {
                    let x = w * rng.random_range(0.85..1.15);
                    v[[b, col]] = x;
                    s += x;
                }
                for &b in &support {
                    v[[b, col]] /= s;
                }
                col += 1;
            }
        }

        // Source utterance.
        let clean = ux.dot(&v);
        let mut raw_src = Array2::<f64>::zeros((m, n + 2 * pad));
        let mut f0_src = vec![0.0; n + 2 * pad];
        let mut col = 0;
        for seg in &segments {
            for _ in 0..seg.len {
                let noise = if cfg.noise > 0.0 {
                    random_unit_sum(m, &mut rng)
                } else {
                    vec![0.0; m]
                };
                let g = seg.gain * rng.random_range(0.9..1.1);
                for i in 0..m {
                    raw_src[[i, pad + col]] = g * ((1.0 - cfg.noise) * clean[[i, col]] + cfg.noise * noise[i]);
                }
                if seg.voiced {
                    f0_src[pad + col] = src_f0 * seg.f0_factor;
                }
                col += 1;
            }
        }

        // Target timeline: each segment stretched by an independent factor.
        let mut tgt_cols: Vec<usize> = Vec::new();
        let mut tgt_seg: Vec<usize> = Vec::new();
        let mut start = 0;
        for (si, seg) in segments.iter().enumerate() {
            let len = if cfg.time_warp > 0.0 {
                let f = rng.random_range((1.0 - cfg.time_warp)..(1.0 + cfg.time_warp));
                ((seg.len as f64 * f).round() as usize).max(1)
            } else {
                seg.len
            };
            for t in 0..len {
                tgt_cols.push(start + t * seg.len / len);
                tgt_seg.push(si);
            }
            start += seg.len;
        }
        let nt = tgt_cols.len();
        let vt = v.select(Axis(1), &tgt_cols);
        let clean_t = uy.dot(&vt);
        let mut raw_tgt = Array2::<f64>::zeros((m, nt + 2 * pad));
        let mut f0_tgt = vec![0.0; nt + 2 * pad];
        for c in 0..nt {
            let seg = &segments[tgt_seg[c]];
            let g = seg.gain * rng.random_range(0.7..1.3);
            for i in 0..m {
                raw_tgt[[i, pad + c]] = g * clean_t[[i, c]];
            }
            if seg.voiced {
                f0_tgt[pad + c] = tgt_f0 * seg.f0_factor.powf(0.8);
            }
        }

        // Silence padding: far below the VAD floor.
        for raw in [&mut raw_src, &mut raw_tgt] {
            let cols = raw.ncols();
            for c in (0..pad).chain(cols - pad..cols) {
                let floor = random_unit_sum(m, &mut rng);
                for i in 0..m {
                    raw[[i, c]] = 1e-5 * floor[i];
                }
            }
        }

        let period = T::lit(cfg.frame_period_ms);
        source.push(Utterance::new(raw_src.mapv(T::lit), f0_src.into_iter().map(T::lit).collect(), period)?);
        target.push(Utterance::new(raw_tgt.mapv(T::lit), f0_tgt.into_iter().map(T::lit).collect(), period)?);
        codes.push(v.mapv(T::lit));
        target_codes.push(vt.mapv(T::lit));
    }

    let mut ux = ux.mapv(T::lit);
    let mut uy = uy.mapv(T::lit);
    normalize_columns_in_place(&mut ux);
    normalize_columns_in_place(&mut uy);
    Ok(SynthCorpus {
        source,
        target,
        ux: Dictionary::new(ux)?,
        uy: Dictionary::new(uy)?,
        codes,
        target_codes,
        silence_frames: pad,
        n_eval: cfg.n_eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmf::kld;

    fn small() -> SynthConfig {
        SynthConfig {
            dim: 24,
            n_bases: 8,
            n_utterances: 3,
            n_eval: 1,
            frames_per_utterance: 40,
            sparsity: 0.25,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn noiseless_frames_are_exact_products() {
        let c = synth_corpus::<f64>(&small(), 3).unwrap();
        for i in 0..3 {
            let x = c.source_frames(i);
            let recon = c.ux.as_array().dot(&c.codes[i]);
            for n in 0..x.ncols() {
                let d = kld(x.column(n), recon.column(n), 1e-12).unwrap();
                assert!(d.abs() < 1e-12, "frame {n}: {d}");
            }
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = SynthConfig {
            time_warp: 0.3,
            silence_frames: 3,
            noise: 0.05,
            ..small()
        };
        let a = synth_corpus::<f64>(&cfg, 9).unwrap();
        let b = synth_corpus::<f64>(&cfg, 9).unwrap();
        assert_eq!(a, b);
        let c = synth_corpus::<f64>(&cfg, 10).unwrap();
        assert_ne!(a.ux, c.ux);
    }

    #[test]
    fn codes_have_configured_support() {
        let cfg = small();
        let c = synth_corpus::<f64>(&cfg, 1).unwrap();
        for v in &c.codes {
            for col in v.axis_iter(Axis(1)) {
                assert_eq!(col.iter().filter(|&&x| x > 0.0).count(), cfg.active_bases());
                assert!((col.sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn warped_target_and_silence() {
        let cfg = SynthConfig {
            time_warp: 0.4,
            silence_frames: 2,
            ..small()
        };
        let c = synth_corpus::<f64>(&cfg, 5).unwrap();
        assert_eq!(c.source[0].n_frames(), 44);
        assert_eq!(c.target[0].n_frames(), c.target_codes[0].ncols() + 4);
        let t = c.target_frames(0);
        let recon = c.uy.as_array().dot(&c.target_codes[0]);
        for n in 0..t.ncols() {
            assert!(kld(t.column(n), recon.column(n), 1e-12).unwrap() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SynthConfig {
            sparsity: 0.0,
            ..small()
        };
        assert!(synth_corpus::<f64>(&cfg, 0).is_err());
    }
}
