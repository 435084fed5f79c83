//! Training objectives and their analytic gradients.

use ndarray::{Array2, ArrayView2, Axis, Zip};

use super::decoder::{reparam_cached, DecoderParams, Reparam};
use super::encoder::{forward_cached, EncoderParams, ForwardCache};
use crate::error::{check_dim, Error, Result};
use crate::matrix::{Dictionary, FrameMatrix};
use crate::nmf::{kld_unchecked, DEFAULT_EPSILON_FLOOR};
use crate::scalar::Scalar;

/// Which tensors are trained and against which targets.
#[derive(Debug, Clone, Copy)]
pub enum Stage<'a, T: Scalar> {
    /// Encoder only, reconstructing the input through a fixed dictionary.
    Encoder { ux: &'a Dictionary<T> },
    /// Encoder and both dictionaries; `alpha` weights self-reconstruction.
    Joint {
        decoders: &'a DecoderParams<T>,
        alpha: T,
    },
}

/// Batch-mean loss and its two components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    pub total: T,
    /// Mean KLD of the source reconstruction.
    pub recon: T,
    /// Mean KLD of the target decoding; `None` in the encoder stage.
    pub conv: Option<T>,
}

/// Gradients mirroring the trainable tensors.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar> {
    pub encoder: EncoderParams<T>,
    /// Present only in the joint stage.
    pub ax_pre: Option<Array2<T>>,
    pub ay_pre: Option<Array2<T>>,
    pub loss: LossParts<T>,
}

fn floor<T: Scalar>() -> T {
    T::lit(DEFAULT_EPSILON_FLOOR)
}

fn mean_kld_cols<T: Scalar>(x: ArrayView2<'_, T>, xhat: ArrayView2<'_, T>) -> T {
    let total: T = x
        .axis_iter(Axis(1))
        .zip(xhat.axis_iter(Axis(1)))
        .map(|(a, b)| kld_unchecked(a, b, floor()))
        .sum();
    total / T::lit(x.ncols() as f64)
}

/// `d loss / d xhat` for `weight * mean_n kld(x_n, xhat_n)`.
fn kld_grad<T: Scalar>(x: ArrayView2<'_, T>, xhat: &Array2<T>, weight: T) -> Array2<T> {
    let scale = weight / T::lit(x.ncols() as f64);
    let f = floor::<T>();
    Zip::from(&x).and(xhat).map_collect(|&a, &b| {
        if a > T::zero() && b > f {
            -scale * a / b
        } else {
            T::zero()
        }
    })
}

fn check_batch<T: Scalar>(x: &FrameMatrix<T>, y: Option<&FrameMatrix<T>>) -> Result<()> {
    if x.ncols() == 0 {
        return Err(Error::EmptyInput("training batch"));
    }
    if let Some(y) = y {
        check_dim("stage-2 pair count", x.ncols(), y.ncols())?;
        check_dim("stage-2 target dim", x.nrows(), y.nrows())?;
    }
    Ok(())
}

fn check_alpha<T: Scalar>(alpha: T) -> Result<()> {
    if alpha >= T::zero() && alpha <= T::one() {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

/// Mean KLD between each frame and its reconstruction through `ux`.
pub fn loss_stage1<T: Scalar>(x: &FrameMatrix<T>, theta: &EncoderParams<T>, ux: &Dictionary<T>) -> Result<T> {
    check_batch(x, None)?;
    check_dim("stage-1 dictionary size", theta.code_dim(), ux.n_bases())?;
    check_dim("stage-1 dictionary dim", x.nrows(), ux.dim())?;
    let cache = forward_cached(x.view(), theta)?;
    let xhat = ux.as_array().dot(&cache.codes);
    Ok(mean_kld_cols(x.view(), xhat.view()))
}

/// `alpha * recon + (1 - alpha) * conv`, both batch means.
pub fn loss_stage2<T: Scalar>(
    x: &FrameMatrix<T>,
    y: &FrameMatrix<T>,
    theta: &EncoderParams<T>,
    decoders: &DecoderParams<T>,
    alpha: T,
) -> Result<T> {
    loss_stage2_parts(x, y, theta, decoders, alpha).map(|p| p.total)
}

pub fn loss_stage2_parts<T: Scalar>(
    x: &FrameMatrix<T>,
    y: &FrameMatrix<T>,
    theta: &EncoderParams<T>,
    decoders: &DecoderParams<T>,
    alpha: T,
) -> Result<LossParts<T>> {
    check_batch(x, Some(y))?;
    check_alpha(alpha)?;
    check_dim("stage-2 dictionary size", theta.code_dim(), decoders.n_bases())?;
    check_dim("stage-2 dictionary dim", x.nrows(), decoders.dim())?;
    let cache = forward_cached(x.view(), theta)?;
    let ux = reparam_cached(decoders.ax_pre.view());
    let uy = reparam_cached(decoders.ay_pre.view());
    let recon = mean_kld_cols(x.view(), ux.dict.dot(&cache.codes).view());
    let conv = mean_kld_cols(y.view(), uy.dict.dot(&cache.codes).view());
    Ok(LossParts {
        total: alpha * recon + (T::one() - alpha) * conv,
        recon,
        conv: Some(conv),
    })
}

/// Back-propagates `d loss / d U` through the rectify + unit-sum map.
fn reparam_backward<T: Scalar>(a_pre: &Array2<T>, rp: &Reparam<T>, d_dict: &Array2<T>) -> Array2<T> {
    let mut grad = Array2::zeros(a_pre.dim());
    for k in 0..a_pre.ncols() {
        if rp.degenerate[k] {
            continue;
        }
        let gcol = d_dict.column(k);
        let ucol = rp.dict.column(k);
        let inner: T = gcol.iter().zip(ucol.iter()).map(|(&g, &u)| g * u).sum();
        let c = rp.col_sums[k];
        for m in 0..a_pre.nrows() {
            if a_pre[[m, k]] > T::zero() {
                grad[[m, k]] = (gcol[m] - inner) / c;
            }
        }
    }
    grad
}

/// Back-propagates `d loss / d codes` through normalization and the three
/// ReLU layers.
fn encoder_backward<T: Scalar>(
    x: ArrayView2<'_, T>,
    theta: &EncoderParams<T>,
    cache: &ForwardCache<T>,
    d_codes: &Array2<T>,
) -> EncoderParams<T> {
    // Quotient rule for v = z / sum(z).
    let mut delta = Array2::zeros(d_codes.dim());
    for n in 0..d_codes.ncols() {
        if cache.degenerate[n] {
            continue;
        }
        let g = d_codes.column(n);
        let v = cache.codes.column(n);
        let inner: T = g.iter().zip(v.iter()).map(|(&a, &b)| a * b).sum();
        let s = cache.code_sums[n];
        for k in 0..d_codes.nrows() {
            delta[[k, n]] = (g[k] - inner) / s;
        }
    }

    let mut grads = EncoderParams::zeros(theta.input_dim(), theta.hidden_dims(), theta.code_dim());
    for layer in (0..3).rev() {
        Zip::from(&mut delta)
            .and(&cache.pre[layer])
            .for_each(|d, &a| {
                if a <= T::zero() {
                    *d = T::zero();
                }
            });
        let input = if layer == 0 { x } else { cache.post[layer - 1].view() };
        grads.layers[layer].weight = delta.dot(&input.t());
        grads.layers[layer].bias = delta.sum_axis(Axis(1));
        if layer > 0 {
            delta = theta.layers[layer].weight.t().dot(&delta);
        }
    }
    grads
}

/// Exact gradients of the stage loss over the batch `x` (and aligned `y` in
/// the joint stage). Frames or dictionary columns on a uniform fallback
/// contribute no gradient.
pub fn compute_gradients<T: Scalar>(
    x: &FrameMatrix<T>,
    y: Option<&FrameMatrix<T>>,
    theta: &EncoderParams<T>,
    stage: Stage<'_, T>,
) -> Result<Gradients<T>> {
    check_batch(x, y)?;
    let cache = forward_cached(x.view(), theta)?;

    let out = match stage {
        Stage::Encoder { ux } => {
            check_dim("stage-1 dictionary size", theta.code_dim(), ux.n_bases())?;
            check_dim("stage-1 dictionary dim", x.nrows(), ux.dim())?;
            let u = ux.as_array();
            let xhat = u.dot(&cache.codes);
            let recon = mean_kld_cols(x.view(), xhat.view());
            let gx = kld_grad(x.view(), &xhat, T::one());
            let d_codes = u.t().dot(&gx);
            Gradients {
                encoder: encoder_backward(x.view(), theta, &cache, &d_codes),
                ax_pre: None,
                ay_pre: None,
                loss: LossParts {
                    total: recon,
                    recon,
                    conv: None,
                },
            }
        }
        Stage::Joint { decoders, alpha } => {
            check_alpha(alpha)?;
            let y = y.ok_or(Error::EmptyInput("stage-2 target batch"))?;
            check_dim("stage-2 dictionary size", theta.code_dim(), decoders.n_bases())?;
            check_dim("stage-2 dictionary dim", x.nrows(), decoders.dim())?;
            let rx = reparam_cached(decoders.ax_pre.view());
            let ry = reparam_cached(decoders.ay_pre.view());
            let xhat = rx.dict.dot(&cache.codes);
            let yhat = ry.dict.dot(&cache.codes);
            let recon = mean_kld_cols(x.view(), xhat.view());
            let conv = mean_kld_cols(y.view(), yhat.view());

            let beta = T::one() - alpha;
            let (k, m) = (decoders.n_bases(), decoders.dim());
            let mut d_codes = Array2::zeros((k, x.ncols()));
            let mut d_ux = Array2::zeros((m, k));
            let mut d_uy = Array2::zeros((m, k));
            if alpha > T::zero() {
                let gx = kld_grad(x.view(), &xhat, alpha);
                d_codes += &rx.dict.t().dot(&gx);
                d_ux = gx.dot(&cache.codes.t());
            }
            if beta > T::zero() {
                let gy = kld_grad(y.view(), &yhat, beta);
                d_codes += &ry.dict.t().dot(&gy);
                d_uy = gy.dot(&cache.codes.t());
            }
            Gradients {
                encoder: encoder_backward(x.view(), theta, &cache, &d_codes),
                ax_pre: Some(reparam_backward(&decoders.ax_pre, &rx, &d_ux)),
                ay_pre: Some(reparam_backward(&decoders.ay_pre, &ry, &d_uy)),
                loss: LossParts {
                    total: alpha * recon + beta * conv,
                    recon,
                    conv: Some(conv),
                },
            }
        }
    };

    if !out.loss.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "training loss is {} (recon {}, conv {:?})",
            out.loss.total, out.loss.recon, out.loss.conv
        )));
    }
    Ok(out)
}

/// Per-frame losses, used for whole-corpus evaluation in chunks.
pub(crate) fn total_loss_chunked<T: Scalar>(
    x: &FrameMatrix<T>,
    y: Option<&FrameMatrix<T>>,
    theta: &EncoderParams<T>,
    stage: Stage<'_, T>,
    chunk: usize,
) -> Result<LossParts<T>> {
    let n = x.ncols();
    let mut recon = T::zero();
    let mut conv = T::zero();
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let xb = x.select_columns(&idx);
        let w = T::lit((end - start) as f64);
        match stage {
            Stage::Encoder { ux } => recon += loss_stage1(&xb, theta, ux)? * w,
            Stage::Joint { decoders, alpha } => {
                let y = y.ok_or(Error::EmptyInput("stage-2 target frames"))?;
                let yb = y.select_columns(&idx);
                let p = loss_stage2_parts(&xb, &yb, theta, decoders, alpha)?;
                recon += p.recon * w;
                conv += p.conv.unwrap_or_else(T::zero) * w;
            }
        }
        start = end;
    }
    let nn = T::lit(n.max(1) as f64);
    let (recon, conv) = (recon / nn, conv / nn);
    Ok(match stage {
        Stage::Encoder { .. } => LossParts {
            total: recon,
            recon,
            conv: None,
        },
        Stage::Joint { alpha, .. } => LossParts {
            total: alpha * recon + (T::one() - alpha) * conv,
            recon,
            conv: Some(conv),
        },
    })
}

