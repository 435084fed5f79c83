//! Parallel-corpus preparation: normalization, VAD, mel-cepstra, DTW
//! alignment, F0 statistics and the synthetic corpus generator.

mod dtw;
mod f0;
mod mcc;
pub mod synth;

pub use dtw::{dtw, dtw_align, AlignmentMap, DtwResult};
pub use f0::{f0_convert, f0_stats, F0Domain, F0Stats};
pub use mcc::{mcc_extract, MccConfig, MelCepstrum, LOG_FLOOR};
pub use synth::{synth_corpus, SynthConfig, SynthCorpus};

use ndarray::{Array1, Array2, Axis};

use crate::error::{check_dim, Error, Result};
use crate::matrix::FrameMatrix;
use crate::scalar::Scalar;

/// Default VAD floor: frames more than this many dB below the loudest are dropped.
pub const DEFAULT_VAD_FLOOR_DB: f64 = 40.0;

/// Raw spectral frames of one utterance with its F0 track.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance<T: Scalar> {
    frames: Array2<T>,
    f0: Vec<T>,
    frame_period_ms: T,
}

impl<T: Scalar> Utterance<T> {
    pub fn new(frames: Array2<T>, f0: Vec<T>, frame_period_ms: T) -> Result<Self> {
        check_dim("utterance f0 length", frames.ncols(), f0.len())?;
        if !(frame_period_ms > T::zero()) {
            return Err(Error::Domain(format!(
                "frame period must be positive, got {frame_period_ms}"
            )));
        }
        if let Some(v) = frames.iter().find(|v| !(**v >= T::zero())) {
            return Err(Error::Domain(format!("negative or NaN spectral entry {v}")));
        }
        if let Some(v) = f0.iter().find(|v| !(**v >= T::zero())) {
            return Err(Error::Domain(format!("negative or NaN F0 value {v}")));
        }
        Ok(Self {
            frames,
            f0,
            frame_period_ms,
        })
    }

    pub fn frames(&self) -> &Array2<T> {
        &self.frames
    }

    pub fn f0(&self) -> &[T] {
        &self.f0
    }

    pub fn frame_period_ms(&self) -> T {
        self.frame_period_ms
    }

    pub fn n_frames(&self) -> usize {
        self.frames.ncols()
    }
}

/// Voiced, unit-sum frames together with everything needed to undo the
/// normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedUtterance<T: Scalar> {
    pub frames: FrameMatrix<T>,
    /// Column sums of the raw retained frames.
    pub energies: Vec<T>,
    pub voiced_mask: Vec<bool>,
    /// F0 of the retained frames.
    pub f0: Vec<T>,
    /// Indices of the retained frames in the raw utterance.
    pub kept: Vec<usize>,
}

impl<T: Scalar> NormalizedUtterance<T> {
    pub fn n_frames(&self) -> usize {
        self.frames.ncols()
    }
}

/// Drops silent frames and scales the remaining ones to unit sum.
///
/// A frame is silent when its energy (column sum, in dB) lies more than
/// `vad_floor_db` below the loudest frame. Zero-energy frames are always
/// dropped. Pass `f64::INFINITY` to disable VAD.
pub fn normalize_utterance<T: Scalar>(
    u: &Utterance<T>,
    vad_floor_db: f64,
) -> Result<NormalizedUtterance<T>> {
    if vad_floor_db.is_nan() || vad_floor_db < 0.0 {
        return Err(Error::Config(format!(
            "vad_floor_db must be nonnegative, got {vad_floor_db}"
        )));
    }
    let sums: Array1<T> = u.frames.sum_axis(Axis(0));
    let max = sums.iter().copied().fold(T::zero(), T::max);
    if !(max > T::zero()) {
        return Err(Error::EmptyUtterance);
    }
    let max_db = 10.0 * max.as_f64().log10();
    let kept: Vec<usize> = sums
        .iter()
        .enumerate()
        .filter(|&(_, &e)| e > T::zero() && 10.0 * e.as_f64().log10() >= max_db - vad_floor_db)
        .map(|(n, _)| n)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyUtterance);
    }

    let mut frames = u.frames.select(Axis(1), &kept);
    let energies: Vec<T> = kept.iter().map(|&n| sums[n]).collect();
    for (mut col, &e) in frames.axis_iter_mut(Axis(1)).zip(&energies) {
        col.mapv_inplace(|v| v / e);
    }
    let f0: Vec<T> = kept.iter().map(|&n| u.f0[n]).collect();
    let voiced_mask = f0.iter().map(|&f| f > T::zero()).collect();
    Ok(NormalizedUtterance {
        frames: FrameMatrix::from_trusted(frames),
        energies,
        voiced_mask,
        f0,
        kept,
    })
}

/// Restores raw magnitudes: column `n` becomes `energies[n] * f[:, n]`.
pub fn energy_compensate<T: Scalar>(f: &FrameMatrix<T>, energies: &[T]) -> Result<Array2<T>> {
    check_dim("energy compensation", f.ncols(), energies.len())?;
    let mut out = f.as_array().clone();
    for (mut col, &e) in out.axis_iter_mut(Axis(1)).zip(energies) {
        col.mapv_inplace(|v| v * e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_frame_normalizes_to_quarters() {
        let u = Utterance::new(array![[1.0], [3.0]], vec![0.0], 5.0).unwrap();
        let n = normalize_utterance(&u, DEFAULT_VAD_FLOOR_DB).unwrap();
        assert_eq!(n.frames.as_array(), &array![[0.25], [0.75]]);
        assert_eq!(n.energies, vec![4.0]);
        assert_eq!(n.voiced_mask, vec![false]);
    }

    #[test]
    fn vad_drops_frame_sixty_db_down() {
        let u = Utterance::new(array![[50.0, 50e-6], [50.0, 50e-6]], vec![100.0, 0.0], 5.0)
            .unwrap();
        let n = normalize_utterance(&u, 40.0).unwrap();
        assert_eq!(n.n_frames(), 1);
        assert_eq!(n.kept, vec![0]);
        assert_eq!(n.energies, vec![100.0]);
    }

    #[test]
    fn all_silent_is_an_error() {
        let u = Utterance::new(Array2::<f64>::zeros((3, 4)), vec![0.0; 4], 5.0).unwrap();
        assert!(matches!(
            normalize_utterance(&u, 40.0),
            Err(Error::EmptyUtterance)
        ));
    }

    #[test]
    fn negative_entry_is_a_domain_error() {
        let r = Utterance::new(array![[1.0], [-1.0]], vec![0.0], 5.0);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn random_matrices_normalize_to_unit_sum() {
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = Array2::from_shape_fn((20, 50), |_| rng.random::<f64>() * 10.0 + 1e-3);
            let u = Utterance::new(raw.clone(), vec![0.0; 50], 5.0).unwrap();
            let n = normalize_utterance(&u, f64::INFINITY).unwrap();
            assert_eq!(n.n_frames(), 50);
            for col in n.frames.as_array().axis_iter(Axis(1)) {
                assert!((col.sum() - 1.0).abs() < 1e-9);
            }
            let back = energy_compensate(&n.frames, &n.energies).unwrap();
            for (a, b) in back.iter().zip(raw.iter()) {
                assert!((a - b).abs() <= 1e-12 * b.abs());
            }
        }
    }

    #[test]
    fn compensate_inverts_single_frame() {
        let f = FrameMatrix::new(array![[0.25], [0.75]]).unwrap();
        assert_eq!(energy_compensate(&f, &[4.0]).unwrap(), array![[1.0], [3.0]]);
        let ones = energy_compensate(&f, &[1.0]).unwrap();
        assert_eq!(&ones, f.as_array());
        assert!(energy_compensate(&f, &[1.0, 2.0]).is_err());
    }
}
