//! Exemplar NMF baseline: KL divergence, exemplar dictionaries, multiplicative
//! activation solving and dictionary-swap conversion.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::features::AlignmentMap;
use crate::matrix::{Activation, Dictionary, FrameMatrix};
use crate::scalar::Scalar;

pub const DEFAULT_EPSILON_FLOOR: f64 = 1e-12;

/// KL divergence `sum x ln(x / xhat)` between two unit-sum vectors, with
/// `0 ln(0/q) = 0` and `xhat` floored at `floor`.
pub fn kld<T: Scalar>(x: ArrayView1<'_, T>, xhat: ArrayView1<'_, T>, floor: T) -> Result<T> {
    check_dim("kld vector length", x.len(), xhat.len())?;
    let tol = T::unit_sum_tol();
    for (name, v) in [("x", &x), ("xhat", &xhat)] {
        if let Some(bad) = v.iter().find(|e| !(**e >= T::zero())) {
            return Err(Error::Domain(format!("kld: {name} has negative entry {bad}")));
        }
        let s = v.sum();
        if (s - T::one()).abs() > tol {
            return Err(Error::Domain(format!("kld: {name} sums to {s}, expected 1")));
        }
    }
    Ok(kld_unchecked(x, xhat, floor))
}

pub(crate) fn kld_unchecked<T: Scalar>(x: ArrayView1<'_, T>, xhat: ArrayView1<'_, T>, floor: T) -> T {
    x.iter()
        .zip(xhat.iter())
        .filter(|(&a, _)| a > T::zero())
        .map(|(&a, &b)| a * (a / b.max(floor)).ln())
        .sum()
}

/// Column-wise KLD between two frame matrices of equal shape.
pub fn kld_columns<T: Scalar>(x: &FrameMatrix<T>, xhat: &FrameMatrix<T>, floor: T) -> Result<Vec<T>> {
    check_dim("kld frame count", x.ncols(), xhat.ncols())?;
    check_dim("kld frame dim", x.nrows(), xhat.nrows())?;
    Ok(x.view()
        .axis_iter(Axis(1))
        .zip(xhat.view().axis_iter(Axis(1)))
        .map(|(a, b)| kld_unchecked(a, b, floor))
        .collect())
}

/// Mean column-wise KLD.
pub fn mean_kld<T: Scalar>(x: &FrameMatrix<T>, xhat: &FrameMatrix<T>, floor: T) -> Result<T> {
    let d = kld_columns(x, xhat, floor)?;
    Ok(d.iter().copied().sum::<T>() / T::lit(d.len().max(1) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions<T: Scalar> {
    pub max_iters: usize,
    /// L1 weight on the activations.
    pub sparsity_lambda: T,
    /// A frame stops iterating once its objective improves by less than this.
    pub tol: T,
    pub epsilon_floor: T,
}

impl<T: Scalar> Default for SolveOptions<T> {
    fn default() -> Self {
        Self {
            max_iters: 200,
            sparsity_lambda: T::zero(),
            tol: T::lit(1e-10),
            epsilon_floor: T::lit(DEFAULT_EPSILON_FLOOR),
        }
    }
}

impl<T: Scalar> SolveOptions<T> {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.sparsity_lambda >= T::zero()) {
            return Err(Error::Config("sparsity_lambda must be nonnegative".into()));
        }
        if !(self.tol >= T::zero()) || !(self.epsilon_floor > T::zero()) {
            return Err(Error::Config("tol must be nonnegative and epsilon_floor positive".into()));
        }
        Ok(())
    }
}

/// Generalized KL objective per column plus the L1 penalty.
fn column_objectives<T: Scalar>(
    x: ArrayView2<'_, T>,
    recon: ArrayView2<'_, T>,
    v: ArrayView2<'_, T>,
    opts: &SolveOptions<T>,
) -> Array1<T> {
    let mut obj = Array1::zeros(x.ncols());
    Zip::from(&mut obj)
        .and(x.axis_iter(Axis(1)))
        .and(recon.axis_iter(Axis(1)))
        .and(v.axis_iter(Axis(1)))
        .for_each(|o, xc, rc, vc| {
            let mut acc = T::zero();
            for (&a, &r) in xc.iter().zip(rc.iter()) {
                let r = r.max(opts.epsilon_floor);
                if a > T::zero() {
                    acc += a * (a / r).ln();
                }
                acc += r - a;
            }
            *o = acc + opts.sparsity_lambda * vc.sum();
        });
    obj
}

/// Solver output with the total objective recorded before the first and after
/// every iteration.
#[derive(Debug, Clone)]
pub struct SolveTrace<T: Scalar> {
    pub activation: Activation<T>,
    pub objective: Vec<T>,
    pub iterations: usize,
}

/// Multiplicative KL updates for `X ≈ U V` with `U` fixed, starting from the
/// uniform code 1/K.
pub fn solve_activation<T: Scalar>(
    x: &FrameMatrix<T>,
    u: &Dictionary<T>,
    opts: &SolveOptions<T>,
) -> Result<Activation<T>> {
    solve_activation_traced(x, u, opts).map(|t| t.activation)
}

pub fn solve_activation_traced<T: Scalar>(
    x: &FrameMatrix<T>,
    u: &Dictionary<T>,
    opts: &SolveOptions<T>,
) -> Result<SolveTrace<T>> {
    opts.validate()?;
    check_dim("activation solve: frame dim vs dictionary dim", u.dim(), x.nrows())?;
    let (k, n) = (u.n_bases(), x.ncols());
    let ua = u.as_array();
    let ut = ua.t();
    let xv = x.view();
    let denom: Array1<T> = ua.sum_axis(Axis(0)).mapv(|s| s + opts.sparsity_lambda);

    let mut v = Array2::from_elem((k, n), T::one() / T::lit(k as f64));
    let mut recon = ua.dot(&v);
    let mut obj = column_objectives(xv, recon.view(), v.view(), opts);
    let mut trace = vec![obj.sum()];
    let mut active = vec![true; n];
    let mut iterations = 0;

    for _ in 0..opts.max_iters {
        if !active.iter().any(|&a| a) {
            break;
        }
        iterations += 1;
        let ratio = Zip::from(&xv)
            .and(&recon)
            .map_collect(|&a, &r| a / r.max(opts.epsilon_floor));
        let grad = ut.dot(&ratio);
        for (j, on) in active.iter().enumerate() {
            if !*on {
                continue;
            }
            let mut col = v.column_mut(j);
            for kk in 0..k {
                col[kk] = col[kk] * grad[[kk, j]] / denom[kk];
            }
        }
        recon = ua.dot(&v);
        let new_obj = column_objectives(xv, recon.view(), v.view(), opts);
        for j in 0..n {
            if active[j] {
                if obj[j] - new_obj[j] < opts.tol {
                    active[j] = false;
                }
                obj[j] = new_obj[j];
            }
        }
        trace.push(obj.sum());
    }

    Ok(SolveTrace {
        activation: Activation::from_trusted(v),
        objective: trace,
        iterations,
    })
}

/// Paired exemplar dictionaries and the source frame indices they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarDictionaries<T: Scalar> {
    pub ux: Dictionary<T>,
    pub uy: Dictionary<T>,
    pub indices: Vec<usize>,
}

/// Picks `k` distinct source frames uniformly at random and pairs each with
/// its aligned target frame. The choice is a prefix of a seeded permutation,
/// so a larger `k` with the same seed extends a smaller dictionary.
pub fn build_exemplar_dictionaries<T: Scalar>(
    src: &FrameMatrix<T>,
    tgt: &FrameMatrix<T>,
    align: &AlignmentMap,
    k: usize,
    seed: u64,
) -> Result<ExemplarDictionaries<T>> {
    check_dim("exemplar alignment length", src.ncols(), align.len())?;
    check_dim("exemplar alignment target length", tgt.ncols(), align.target_len())?;
    check_dim("exemplar frame dim", src.nrows(), tgt.nrows())?;
    if k == 0 || k > src.ncols() {
        return Err(Error::NotEnoughFrames {
            requested: k,
            available: src.ncols(),
        });
    }
    let mut order: Vec<usize> = (0..src.ncols()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.truncate(k);

    let tgt_idx: Vec<usize> = order.iter().map(|&i| align.as_slice()[i]).collect();
    let ux = FrameMatrix::from_nonnegative(src.select_columns(&order).into_inner())?;
    let uy = FrameMatrix::from_nonnegative(tgt.select_columns(&tgt_idx).into_inner())?;
    Ok(ExemplarDictionaries {
        ux: Dictionary::from_trusted(ux.into_inner()),
        uy: Dictionary::from_trusted(uy.into_inner()),
        indices: order,
    })
}

/// Solves codes against `ux`, renormalizes them and decodes with `uy`.
pub fn enmf_convert<T: Scalar>(
    x: &FrameMatrix<T>,
    ux: &Dictionary<T>,
    uy: &Dictionary<T>,
    opts: &SolveOptions<T>,
) -> Result<FrameMatrix<T>> {
    enmf_convert_with_codes(x, ux, uy, opts).map(|(y, _)| y)
}

/// As [`enmf_convert`], also returning the raw solver activations.
pub fn enmf_convert_with_codes<T: Scalar>(
    x: &FrameMatrix<T>,
    ux: &Dictionary<T>,
    uy: &Dictionary<T>,
    opts: &SolveOptions<T>,
) -> Result<(FrameMatrix<T>, Activation<T>)> {
    check_dim("enmf dictionary sizes", ux.n_bases(), uy.n_bases())?;
    let v = solve_activation(x, ux, opts)?;
    let y = uy.as_array().dot(v.unit_sum().as_array());
    Ok((FrameMatrix::from_trusted(y), v))
}
