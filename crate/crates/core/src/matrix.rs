//! Column-stochastic matrix newtypes.
//!
//! All three types store columns as the unit of meaning: a frame, a basis, or
//! a per-frame code. Constructors validate nonnegativity and (where required)
//! unit-sum columns so downstream code can rely on them.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_nonnegative<T: Scalar>(a: &ArrayView2<'_, T>, what: &str) -> Result<()> {
    for (idx, &v) in a.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{what} entry {idx:?} is {v}")));
        }
        if v < T::zero() {
            return Err(Error::Domain(format!("{what} entry {idx:?} is negative ({v})")));
        }
    }
    Ok(())
}

fn check_unit_sum<T: Scalar>(a: &ArrayView2<'_, T>, what: &str) -> Result<()> {
    let tol = T::unit_sum_tol();
    for (j, col) in a.axis_iter(Axis(1)).enumerate() {
        let s = col.sum();
        if (s - T::one()).abs() > tol {
            return Err(Error::Domain(format!(
                "{what} column {j} sums to {s}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Scales every column of `a` to unit sum in place. Columns whose sum is not
/// positive are left untouched and their indices returned.
pub fn normalize_columns_in_place<T: Scalar>(a: &mut Array2<T>) -> Vec<usize> {
    let mut degenerate = Vec::new();
    for (j, mut col) in a.axis_iter_mut(Axis(1)).enumerate() {
        let s = col.sum();
        if s > T::zero() {
            col.mapv_inplace(|v| v / s);
        } else {
            degenerate.push(j);
        }
    }
    degenerate
}

macro_rules! column_matrix {
    ($(#[$meta:meta])* $name:ident, $what:literal, $unit:expr) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name<T: Scalar>(Array2<T>);

        impl<T: Scalar> $name<T> {
            /// Validates and wraps `a`.
            pub fn new(a: Array2<T>) -> Result<Self> {
                check_nonnegative(&a.view(), $what)?;
                if $unit {
                    check_unit_sum(&a.view(), $what)?;
                }
                Ok(Self(a))
            }

            /// Wraps `a` without validation. Callers guarantee the invariants hold.
            pub(crate) fn from_trusted(a: Array2<T>) -> Self {
                debug_assert!(check_nonnegative(&a.view(), $what).is_ok());
                Self(a)
            }

            pub fn view(&self) -> ArrayView2<'_, T> {
                self.0.view()
            }

            pub fn as_array(&self) -> &Array2<T> {
                &self.0
            }

            pub fn into_inner(self) -> Array2<T> {
                self.0
            }

            pub fn nrows(&self) -> usize {
                self.0.nrows()
            }

            pub fn ncols(&self) -> usize {
                self.0.ncols()
            }

            pub fn column(&self, j: usize) -> ArrayView1<'_, T> {
                self.0.column(j)
            }

            /// New matrix made of the selected columns, in order.
            pub fn select_columns(&self, idx: &[usize]) -> Self {
                Self(self.0.select(Axis(1), idx))
            }
        }
    };
}

column_matrix!(
    /// Nonnegative M×N matrix whose columns (frames) each sum to one.
    FrameMatrix,
    "frame",
    true
);

column_matrix!(
    /// Nonnegative M×K matrix of unit-sum basis columns.
    Dictionary,
    "dictionary",
    true
);

column_matrix!(
    /// Nonnegative K×N code matrix. Unit-sum is not enforced because solver
    /// output and pre-normalization codes are also carried in this type.
    Activation,
    "activation",
    false
);

impl<T: Scalar> FrameMatrix<T> {
    /// Normalizes the columns of a nonnegative matrix. Fails on a zero column.
    pub fn from_nonnegative(mut a: Array2<T>) -> Result<Self> {
        check_nonnegative(&a.view(), "frame")?;
        if let Some(&j) = normalize_columns_in_place(&mut a).first() {
            return Err(Error::Domain(format!("frame column {j} has zero sum")));
        }
        Ok(Self(a))
    }

    /// Concatenates frame matrices along the time axis.
    pub fn concat(parts: &[&FrameMatrix<T>]) -> Result<Self> {
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        let joined = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| Error::Domain(format!("cannot concatenate frames: {e}")))?;
        Ok(Self(joined))
    }
}

impl<T: Scalar> Dictionary<T> {
    pub fn n_bases(&self) -> usize {
        self.ncols()
    }

    pub fn dim(&self) -> usize {
        self.nrows()
    }
}

impl<T: Scalar> Activation<T> {
    /// Returns a copy with unit-sum columns; all-zero columns become uniform.
    pub fn unit_sum(&self) -> Self {
        let mut a = self.0.clone();
        let k = a.nrows();
        for j in normalize_columns_in_place(&mut a) {
            a.column_mut(j).fill(T::one() / T::lit(k as f64));
        }
        Self(a)
    }
}
