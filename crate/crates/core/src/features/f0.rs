//! F0 statistics and the mean-variance transform.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Domain in which the mean-variance transform is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum F0Domain {
    #[default]
    Log,
    Linear,
}

impl F0Domain {
    fn forward<T: Scalar>(self, f: T) -> T {
        match self {
            F0Domain::Log => f.ln(),
            F0Domain::Linear => f,
        }
    }

    fn inverse<T: Scalar>(self, v: T) -> T {
        match self {
            F0Domain::Log => v.exp(),
            F0Domain::Linear => v,
        }
    }
}

/// Mean and population standard deviation of voiced F0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0Stats<T: Scalar> {
    pub mean: T,
    pub std: T,
    pub domain: F0Domain,
}

impl<T: Scalar> F0Stats<T> {
    pub fn new(mean: T, std: T, domain: F0Domain) -> Result<Self> {
        if !mean.is_finite() || !(std > T::zero()) || !std.is_finite() {
            return Err(Error::Domain(format!(
                "invalid F0 statistics (mean {mean}, std {std})"
            )));
        }
        Ok(Self { mean, std, domain })
    }
}

/// Statistics over voiced frames (`f0 > 0`). Needs at least two voiced frames
/// with a nonzero spread.
pub fn f0_stats<T: Scalar>(f0: &[T], domain: F0Domain) -> Result<F0Stats<T>> {
    let voiced: Vec<T> = f0
        .iter()
        .filter(|&&f| f > T::zero())
        .map(|&f| domain.forward(f))
        .collect();
    if voiced.len() < 2 {
        return Err(Error::TooFewVoiced { found: voiced.len() });
    }
    let n = T::lit(voiced.len() as f64);
    let mean = voiced.iter().copied().sum::<T>() / n;
    let var = voiced.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let std = var.sqrt();
    if !(std > T::zero()) {
        return Err(Error::TooFewVoiced { found: voiced.len() });
    }
    F0Stats::new(mean, std, domain)
}

/// Maps voiced F0 from the source distribution onto the target one; unvoiced
/// frames stay at 0.
pub fn f0_convert<T: Scalar>(f0: &[T], src: &F0Stats<T>, tgt: &F0Stats<T>) -> Result<Vec<T>> {
    if src.domain != tgt.domain {
        return Err(Error::Domain("F0 statistics computed in different domains".into()));
    }
    if src == tgt {
        return Ok(f0.to_vec());
    }
    let ratio = tgt.std / src.std;
    let domain = src.domain;
    Ok(f0
        .iter()
        .map(|&f| {
            if f > T::zero() {
                let out = domain.inverse((domain.forward(f) - src.mean) * ratio + tgt.mean);
                // Linear-domain transforms can cross zero; keep such frames voiced-but-tiny
                // rather than negative.
                out.max(T::min_positive_value())
            } else {
                T::zero()
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, LogNormal};

    #[test]
    fn equal_voiced_values_are_rejected() {
        let e = 1f64.exp();
        assert!(matches!(
            f0_stats(&[e, e], F0Domain::Log),
            Err(Error::TooFewVoiced { .. })
        ));
        assert!(f0_stats(&[0.0, 150.0, 0.0], F0Domain::Log).is_err());
    }

    #[test]
    fn log_domain_closed_form() {
        let s = f0_stats(&[1f64.exp(), 0.0, 3f64.exp()], F0Domain::Log).unwrap();
        assert!((s.mean - 2.0).abs() < 1e-12);
        assert!((s.std - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lognormal_sample_recovers_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = LogNormal::new(5.0, 0.2).unwrap();
        let f0: Vec<f64> = (0..100).map(|_| d.sample(&mut rng)).collect();
        let s = f0_stats(&f0, F0Domain::Log).unwrap();
        let se_mean = 0.2 / 10.0;
        let se_std = 0.2 / (2.0f64 * 100.0).sqrt();
        assert!((s.mean - 5.0).abs() < 3.0 * se_mean, "mean {}", s.mean);
        assert!((s.std - 0.2).abs() < 3.0 * se_std, "std {}", s.std);
    }

    #[test]
    fn convert_identity_and_unvoiced() {
        let s = F0Stats::new(5.0, 0.3, F0Domain::Log).unwrap();
        let f0 = vec![0.0, 120.0, 131.5];
        assert_eq!(f0_convert(&f0, &s, &s).unwrap(), f0);
    }

    #[test]
    fn convert_direct_formula() {
        let src = F0Stats::new(2.0, 1.0, F0Domain::Log).unwrap();
        let tgt = F0Stats::new(3.0, 2.0, F0Domain::Log).unwrap();
        let out = f0_convert(&[3f64.exp(), 0.0], &src, &tgt).unwrap();
        assert!((out[0] - 5f64.exp()).abs() < 1e-9 * 5f64.exp());
        assert_eq!(out[1], 0.0);
    }

    #[test]
    fn linear_domain() {
        let s = f0_stats(&[100.0f64, 200.0], F0Domain::Linear).unwrap();
        assert_eq!((s.mean, s.std), (150.0, 50.0));
        let t = F0Stats::new(200.0, 25.0, F0Domain::Linear).unwrap();
        assert_eq!(f0_convert(&[200.0], &s, &t).unwrap(), vec![225.0]);
    }

    #[test]
    fn convert_is_monotone_in_voiced_f0() {
        let src = F0Stats::new(4.8, 0.25, F0Domain::Log).unwrap();
        let tgt = F0Stats::new(5.4, 0.15, F0Domain::Log).unwrap();
        let f0: Vec<f64> = (1..200).map(|i| 50.0 + i as f64).collect();
        let out = f0_convert(&f0, &src, &tgt).unwrap();
        assert!(out.windows(2).all(|w| w[1] > w[0]));
    }
}
