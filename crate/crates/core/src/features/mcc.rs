//! Mel-cepstral coefficients: log mel-filterbank energies followed by an
//! orthonormal DCT-II.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::matrix::FrameMatrix;
use crate::scalar::Scalar;

/// Floor applied to filterbank energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MccConfig {
    /// Highest cepstral index kept; output has `order + 1` rows (row 0 is c0).
    pub order: usize,
    pub n_mel: usize,
    pub sample_rate_hz: f64,
}

impl Default for MccConfig {
    fn default() -> Self {
        Self {
            order: 24,
            n_mel: 40,
            sample_rate_hz: 16_000.0,
        }
    }
}

impl MccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::Config("mel-cepstrum order must be at least 1".into()));
        }
        if self.n_mel <= self.order {
            return Err(Error::Config(format!(
                "n_mel ({}) must exceed the cepstral order ({})",
                self.n_mel, self.order
            )));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(())
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Precomputed filterbank and DCT for a fixed spectrum dimension.
#[derive(Debug, Clone)]
pub struct MelCepstrum<T: Scalar> {
    config: MccConfig,
    /// n_mel × n_bins, rows sum to one.
    filterbank: Array2<T>,
    /// (order + 1) × n_mel rows of the orthonormal DCT-II.
    dct: Array2<T>,
}

impl<T: Scalar> MelCepstrum<T> {
    /// `n_bins` spectral bins spanning 0 Hz to Nyquist inclusive.
    pub fn new(config: MccConfig, n_bins: usize) -> Result<Self> {
        config.validate()?;
        if n_bins < 2 {
            return Err(Error::Config(format!(
                "spectrum needs at least 2 bins, got {n_bins}"
            )));
        }
        let nyquist = config.sample_rate_hz / 2.0;
        let bin_hz = |i: usize| i as f64 * nyquist / (n_bins - 1) as f64;
        let mel_max = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..config.n_mel + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (config.n_mel + 1) as f64))
            .collect();

        let mut filterbank = Array2::<f64>::zeros((config.n_mel, n_bins));
        for j in 0..config.n_mel {
            let (lo, mid, hi) = (edges[j], edges[j + 1], edges[j + 2]);
            let mut row = filterbank.row_mut(j);
            for i in 0..n_bins {
                let f = bin_hz(i);
                row[i] = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
            }
            let s = row.sum();
            if s > 0.0 {
                row.mapv_inplace(|w| w / s);
            } else {
                // Filter narrower than the bin spacing: sample the nearest bin.
                let nearest = ((mid / nyquist) * (n_bins - 1) as f64).round() as usize;
                row[nearest.min(n_bins - 1)] = 1.0;
            }
        }

        let n = config.n_mel as f64;
        let dct = Array2::from_shape_fn((config.order + 1, config.n_mel), |(k, m)| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            scale * (std::f64::consts::PI * k as f64 * (2 * m + 1) as f64 / (2.0 * n)).cos()
        });

        Ok(Self {
            config,
            filterbank: filterbank.mapv(T::lit),
            dct: dct.mapv(T::lit),
        })
    }

    pub fn config(&self) -> &MccConfig {
        &self.config
    }

    pub fn n_bins(&self) -> usize {
        self.filterbank.ncols()
    }

    pub fn filterbank(&self) -> &Array2<T> {
        &self.filterbank
    }

    /// Floored natural-log filterbank energies, n_mel × N.
    pub fn log_mel(&self, frames: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if frames.nrows() != self.n_bins() {
            return Err(Error::DimensionMismatch {
                context: "mel-cepstrum input bins",
                expected: self.n_bins(),
                found: frames.nrows(),
            });
        }
        if let Some(v) = frames.iter().find(|v| !(**v >= T::zero())) {
            return Err(Error::Domain(format!("negative spectral entry {v}")));
        }
        let floor = T::lit(LOG_FLOOR);
        Ok(self.filterbank.dot(&frames).mapv(|e| e.max(floor).ln()))
    }

    /// (order + 1) × N cepstra, row 0 = c0.
    pub fn extract(&self, frames: ArrayView2<'_, T>) -> Result<Array2<T>> {
        Ok(self.dct.dot(&self.log_mel(frames)?))
    }

    /// Cepstra of a single frame.
    pub fn extract_frame(&self, frame: &[T]) -> Result<Array1<T>> {
        let view = ArrayView2::from_shape((frame.len(), 1), frame)
            .map_err(|e| Error::Domain(e.to_string()))?;
        Ok(self.extract(view)?.column(0).to_owned())
    }
}

/// One-shot extraction; build a [`MelCepstrum`] to reuse the filterbank.
pub fn mcc_extract<T: Scalar>(f: &FrameMatrix<T>, config: MccConfig) -> Result<Array2<T>> {
    MelCepstrum::new(config, f.nrows())?.extract(f.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Axis;

    #[test]
    fn constant_spectrum_has_only_c0() {
        for &bins in &[16usize, 64, 513] {
            let frames = FrameMatrix::from_nonnegative(Array2::<f64>::ones((bins, 2))).unwrap();
            let c = mcc_extract(&frames, MccConfig::default()).unwrap();
            assert_eq!(c.nrows(), 25);
            for k in 1..c.nrows() {
                assert!(c[[k, 0]].abs() < 1e-9, "bins {bins} c{k} = {}", c[[k, 0]]);
            }
            assert_eq!(c.column(0), c.column(1));
        }
    }

    #[test]
    fn order_must_be_below_filter_count() {
        let cfg = MccConfig {
            order: 10,
            n_mel: 10,
            sample_rate_hz: 16_000.0,
        };
        assert!(matches!(MelCepstrum::<f64>::new(cfg, 64), Err(Error::Config(_))));
    }

    #[test]
    fn zero_frame_uses_log_floor() {
        let mc = MelCepstrum::<f64>::new(MccConfig::default(), 32).unwrap();
        let lm = mc.log_mel(Array2::zeros((32, 1)).view()).unwrap();
        assert!(lm.iter().all(|&v| (v - LOG_FLOOR.ln()).abs() < 1e-12));
    }

    #[test]
    fn four_filter_order_two_matches_direct_dct() {
        let cfg = MccConfig {
            order: 2,
            n_mel: 4,
            sample_rate_hz: 8_000.0,
        };
        let mc = MelCepstrum::<f64>::new(cfg, 9).unwrap();
        let spectrum = [0.05, 0.2, 0.3, 0.1, 0.08, 0.07, 0.1, 0.06, 0.04];
        let c = mc.extract_frame(&spectrum).unwrap();

        // Filterbank energies by hand from the stored weights, then the DCT-II sum.
        let fb = mc.filterbank();
        let logs: Vec<f64> = (0..4)
            .map(|j| {
                let e: f64 = (0..9).map(|i| fb[[j, i]] * spectrum[i]).sum();
                e.max(LOG_FLOOR).ln()
            })
            .collect();
        for k in 0..3 {
            let scale = if k == 0 { 0.5 } else { (0.5f64).sqrt() };
            let mut acc = 0.0;
            for (m, l) in logs.iter().enumerate() {
                acc += l * (std::f64::consts::PI * k as f64 * (2 * m + 1) as f64 / 8.0).cos();
            }
            assert!((c[k] - scale * acc).abs() < 1e-12, "c{k}");
        }
    }

    #[test]
    fn filters_are_normalized() {
        let mc = MelCepstrum::<f64>::new(MccConfig::default(), 64).unwrap();
        for row in mc.filterbank().axis_iter(Axis(0)) {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
