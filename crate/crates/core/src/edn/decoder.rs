use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{check_dim, Result};
use crate::matrix::{Activation, Dictionary, FrameMatrix};
use crate::scalar::{relu, Scalar};

/// Rectified column sums below this fall back to the uniform column.
pub const DICT_EPSILON: f64 = 1e-12;

/// Effective dictionary plus what back-propagation needs from the forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Reparam<T: Scalar> {
    pub dict: Array2<T>,
    pub col_sums: Vec<T>,
    pub degenerate: Vec<bool>,
}

pub(crate) fn reparam_cached<T: Scalar>(a_pre: ArrayView2<'_, T>) -> Reparam<T> {
    let m = a_pre.nrows();
    let mut dict = a_pre.mapv(relu);
    let eps = T::lit(DICT_EPSILON);
    let mut col_sums = Vec::with_capacity(dict.ncols());
    let mut degenerate = Vec::with_capacity(dict.ncols());
    for mut col in dict.axis_iter_mut(Axis(1)) {
        let s = col.sum();
        col_sums.push(s);
        if s < eps {
            degenerate.push(true);
            col.fill(T::one() / T::lit(m as f64));
        } else {
            degenerate.push(false);
            col.mapv_inplace(|v| v / s);
        }
    }
    Reparam {
        dict,
        col_sums,
        degenerate,
    }
}

/// Rectifies every column and rescales it to unit sum. Columns with no
/// positive entry become uniform.
pub fn dict_reparam<T: Scalar>(a_pre: ArrayView2<'_, T>) -> Dictionary<T> {
    Dictionary::from_trusted(reparam_cached(a_pre).dict)
}

/// Linear decoder `U V`.
pub fn decode<T: Scalar>(v: &Activation<T>, u: &Dictionary<T>) -> Result<FrameMatrix<T>> {
    check_dim("decode: code dim vs dictionary size", u.n_bases(), v.nrows())?;
    Ok(FrameMatrix::from_trusted(u.as_array().dot(v.as_array())))
}

/// Unconstrained parameters behind the two trainable dictionaries.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<T: Scalar> {
    pub ax_pre: Array2<T>,
    pub ay_pre: Array2<T>,
}

impl<T: Scalar> DecoderParams<T> {
    /// Starts from existing dictionaries; unit-sum nonnegative columns are a
    /// fixed point of the reparameterization.
    pub fn from_dictionaries(ux: &Dictionary<T>, uy: &Dictionary<T>) -> Result<Self> {
        check_dim("decoder dictionary sizes", ux.n_bases(), uy.n_bases())?;
        check_dim("decoder dictionary dims", ux.dim(), uy.dim())?;
        Ok(Self {
            ax_pre: ux.as_array().as_standard_layout().into_owned(),
            ay_pre: uy.as_array().as_standard_layout().into_owned(),
        })
    }

    pub fn ux(&self) -> Dictionary<T> {
        dict_reparam(self.ax_pre.view())
    }

    pub fn uy(&self) -> Dictionary<T> {
        dict_reparam(self.ay_pre.view())
    }

    pub fn n_bases(&self) -> usize {
        self.ax_pre.ncols()
    }

    pub fn dim(&self) -> usize {
        self.ax_pre.nrows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn unit_sum_input_is_a_fixed_point() {
        let a = array![[0.2, 0.5], [0.8, 0.5]];
        assert_eq!(dict_reparam(a.view()).as_array(), &a);
    }

    #[test]
    fn nonpositive_column_falls_back_to_uniform() {
        let a = array![[-1.0], [-2.0]];
        assert_eq!(dict_reparam(a.view()).as_array(), &array![[0.5], [0.5]]);
    }

    #[test]
    fn rectify_then_normalize() {
        let a = array![[2.0], [-1.0], [2.0]];
        assert_eq!(dict_reparam(a.view()).as_array(), &array![[0.5], [0.0], [0.5]]);
    }

    #[test]
    fn one_hot_codes_select_columns() {
        let u = Dictionary::<f64>::new(array![[0.1, 0.6, 0.3], [0.9, 0.4, 0.7]]).unwrap();
        let v = Activation::new(Array2::eye(3)).unwrap();
        assert_eq!(decode(&v, &u).unwrap().as_array(), u.as_array());
        let uniform = Activation::new(Array2::from_elem((3, 1), 1.0 / 3.0)).unwrap();
        let mean = decode(&uniform, &u).unwrap();
        assert!((mean.as_array()[[0, 0]] - 1.0 / 3.0).abs() < 1e-15);
        assert!(decode(&Activation::new(Array2::eye(2)).unwrap(), &u).is_err());
    }
}
