use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::matrix::{Activation, FrameMatrix};
use crate::scalar::{relu, Scalar};

/// Codes whose rectified sum falls below this are replaced by the uniform code.
pub const CODE_EPSILON: f64 = 1e-12;

/// Code-layer bias used by [`EncoderParams::data_init`] in the pipeline.
pub const DEFAULT_CODE_BIAS: f64 = 2.0;

/// Dense layer `W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T: Scalar> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    fn apply(&self, x: &ArrayView2<'_, T>) -> Array2<T> {
        let mut a = self.weight.dot(x);
        a += &self.bias.view().insert_axis(Axis(1));
        a
    }
}

/// Three ReLU layers M → H1 → H2 → K.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T: Scalar> {
    pub layers: [Layer<T>; 3],
}

impl<T: Scalar> EncoderParams<T> {
    pub fn new(layers: [Layer<T>; 3]) -> Result<Self> {
        for l in &layers {
            check_dim("encoder bias length", l.outputs(), l.bias.len())?;
        }
        check_dim("encoder layer 2 inputs", layers[0].outputs(), layers[1].inputs())?;
        check_dim("encoder layer 3 inputs", layers[1].outputs(), layers[2].inputs())?;
        Ok(Self { layers })
    }

    pub fn zeros(input: usize, hidden: [usize; 2], code: usize) -> Self {
        Self {
            layers: [
                Layer::zeros(input, hidden[0]),
                Layer::zeros(hidden[0], hidden[1]),
                Layer::zeros(hidden[1], code),
            ],
        }
    }

    /// He-scaled Gaussian weights (std = sqrt(2 / fan_in)) and zero biases.
    pub fn he_init(input: usize, hidden: [usize; 2], code: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(input, hidden, code);
        for layer in &mut p.layers {
            let std = (2.0 / layer.inputs() as f64).sqrt();
            layer.weight.mapv_inplace(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::lit(std * z)
            });
        }
        p
    }

    /// [`Self::he_init`] followed by [`Self::calibrate`] on the training frames.
    pub fn data_init(x: &FrameMatrix<T>, hidden: [usize; 2], code: usize, seed: u64, code_bias: T) -> Result<Self> {
        let mut p = Self::he_init(x.nrows(), hidden, code, seed);
        p.calibrate(x, code_bias)?;
        Ok(p)
    }

    /// Rescales the first layer so its pre-activations on `x` have unit RMS
    /// and sets every code-layer bias to `code_bias`. A positive bias starts
    /// all code units active on every frame.
    pub fn calibrate(&mut self, x: &FrameMatrix<T>, code_bias: T) -> Result<()> {
        check_dim("encoder input dim", self.input_dim(), x.nrows())?;
        if x.ncols() == 0 {
            return Err(Error::EmptyInput("calibration frames"));
        }
        let a = self.layers[0].weight.dot(x.as_array());
        let rms = (a.iter().map(|v| *v * *v).sum::<T>() / T::lit(a.len() as f64)).sqrt();
        if rms > T::zero() && rms.is_finite() {
            self.layers[0].weight.mapv_inplace(|w| w / rms);
        }
        self.layers[2].bias.fill(code_bias);
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn hidden_dims(&self) -> [usize; 2] {
        [self.layers[0].outputs(), self.layers[1].outputs()]
    }

    pub fn code_dim(&self) -> usize {
        self.layers[2].outputs()
    }

    /// Flat views of W1, b1, W2, b2, W3, b3 in that order.
    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Intermediate values of a batch forward pass, kept for back-propagation.
#[derive(Debug, Clone)]
pub(crate) struct ForwardCache<T: Scalar> {
    /// Pre-activations of the three layers.
    pub pre: [Array2<T>; 3],
    /// Rectified outputs of the three layers; `post[2]` is the raw code.
    pub post: [Array2<T>; 3],
    /// Per-frame sum of the raw code.
    pub code_sums: Array1<T>,
    /// Unit-sum codes.
    pub codes: Array2<T>,
    /// Frames that fell back to the uniform code.
    pub degenerate: Vec<bool>,
}

pub(crate) fn forward_cached<T: Scalar>(x: ArrayView2<'_, T>, theta: &EncoderParams<T>) -> Result<ForwardCache<T>> {
    check_dim("encoder input dim", theta.input_dim(), x.nrows())?;
    let a1 = theta.layers[0].apply(&x);
    let h1 = a1.mapv(relu);
    let a2 = theta.layers[1].apply(&h1.view());
    let h2 = a2.mapv(relu);
    let a3 = theta.layers[2].apply(&h2.view());
    let z = a3.mapv(relu);

    let k = theta.code_dim();
    let eps = T::lit(CODE_EPSILON);
    let code_sums = z.sum_axis(Axis(0));
    let mut codes = z.clone();
    let mut degenerate = vec![false; z.ncols()];
    for (n, mut col) in codes.axis_iter_mut(Axis(1)).enumerate() {
        let s = code_sums[n];
        if s < eps {
            degenerate[n] = true;
            col.fill(T::one() / T::lit(k as f64));
        } else {
            col.mapv_inplace(|v| v / s);
        }
    }
    Ok(ForwardCache {
        pre: [a1, a2, a3],
        post: [h1, h2, z],
        code_sums,
        codes,
        degenerate,
    })
}

/// Unit-sum codes `f(x)` for every frame.
pub fn encoder_forward<T: Scalar>(x: &FrameMatrix<T>, theta: &EncoderParams<T>) -> Result<Activation<T>> {
    let cache = forward_cached(x.view(), theta)?;
    if cache.codes.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("encoder produced a non-finite code".into()));
    }
    Ok(Activation::from_trusted(cache.codes))
}

/// Rectified codes before unit-sum normalization. Zero positions match the
/// normalized codes except for degenerate frames.
pub fn encode_raw<T: Scalar>(x: &FrameMatrix<T>, theta: &EncoderParams<T>) -> Result<Activation<T>> {
    let cache = forward_cached(x.view(), theta)?;
    Ok(Activation::from_trusted(cache.post[2].clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::normalize_columns_in_place;
    use rand::Rng;

    fn frames(seed: u64, m: usize, n: usize) -> FrameMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array2::from_shape_fn((m, n), |_| rng.random::<f64>());
        normalize_columns_in_place(&mut a);
        FrameMatrix::new(a).unwrap()
    }

    #[test]
    fn zero_network_gives_uniform_codes() {
        let theta = EncoderParams::<f64>::zeros(6, [5, 5], 4);
        let v = encoder_forward(&frames(0, 6, 3), &theta).unwrap();
        assert!(v.as_array().iter().all(|&e| e == 0.25));
    }

    #[test]
    fn codes_are_unit_sum() {
        for seed in 0..20 {
            let theta = EncoderParams::<f64>::he_init(8, [16, 12], 6, seed);
            let v = encoder_forward(&frames(seed, 8, 10), &theta).unwrap();
            for col in v.as_array().axis_iter(Axis(1)) {
                assert!((col.sum() - 1.0).abs() < 1e-9);
                assert!(col.iter().all(|&e| e >= 0.0));
            }
        }
    }

    #[test]
    fn matches_straight_line_evaluation() {
        let mut theta = EncoderParams::<f64>::he_init(7, [9, 6], 5, 42);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for l in &mut theta.layers {
            l.bias.mapv_inplace(|_| rng.random_range(-0.1..0.3));
        }
        let x = frames(44, 7, 5);
        let v = encoder_forward(&x, &theta).unwrap();
        for n in 0..5 {
            let mut h: Vec<f64> = x.column(n).to_vec();
            for l in &theta.layers {
                let mut out = vec![0.0; l.outputs()];
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = l.bias[i];
                    for (j, hj) in h.iter().enumerate() {
                        acc += l.weight[[i, j]] * hj;
                    }
                    *o = acc.max(0.0);
                }
                h = out;
            }
            let s: f64 = h.iter().sum();
            for (k, hk) in h.iter().enumerate() {
                let expected = if s < CODE_EPSILON { 0.2 } else { hk / s };
                assert!((v.as_array()[[k, n]] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn calibration_sets_unit_rms_and_code_bias() {
        let x = frames(5, 8, 40);
        let theta = EncoderParams::<f64>::data_init(&x, [16, 12], 6, 3, 2.0).unwrap();
        let a = theta.layers[0].weight.dot(x.as_array());
        let rms = (a.mapv(|v| v * v).sum() / a.len() as f64).sqrt();
        assert!((rms - 1.0).abs() < 1e-12);
        assert!(theta.layers[2].bias.iter().all(|&b| b == 2.0));
        assert!(encode_raw(&x, &theta).unwrap().as_array().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn dimension_mismatch() {
        let theta = EncoderParams::<f64>::zeros(5, [3, 3], 2);
        assert!(encoder_forward(&frames(1, 6, 2), &theta).is_err());
    }

    #[test]
    fn tiny_perturbation_changes_code_slightly() {
        let theta = EncoderParams::<f64>::he_init(10, [12, 12], 6, 9);
        let x = frames(9, 10, 1);
        let mut y = x.as_array().clone();
        y[[0, 0]] += 1e-8;
        y[[1, 0]] -= 1e-8;
        let a = encoder_forward(&x, &theta).unwrap();
        let b = encoder_forward(&FrameMatrix::new(y).unwrap(), &theta).unwrap();
        let d: f64 = (a.as_array() - b.as_array()).mapv(f64::abs).sum();
        assert!(d < 1e-4);
    }
}
