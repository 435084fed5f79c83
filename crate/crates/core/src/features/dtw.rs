//! Dynamic time warping on mel-cepstral sequences.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// For every source frame, the index of its target frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentMap {
    target_index: Vec<usize>,
    target_len: usize,
}

impl AlignmentMap {
    /// Validates monotonicity and range.
    pub fn new(target_index: Vec<usize>, target_len: usize) -> Result<Self> {
        if let Some(&bad) = target_index.iter().find(|&&t| t >= target_len) {
            return Err(Error::Domain(format!(
                "alignment index {bad} out of range for target length {target_len}"
            )));
        }
        if target_index.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Domain("alignment map is not monotone".into()));
        }
        Ok(Self {
            target_index,
            target_len,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            target_index: (0..n).collect(),
            target_len: n,
        }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.target_index
    }

    pub fn len(&self) -> usize {
        self.target_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_index.is_empty()
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }
}

#[derive(Debug, Clone)]
pub struct DtwResult<T> {
    pub map: AlignmentMap,
    /// Optimal warping path from (0, 0) to (N - 1, T - 1).
    pub path: Vec<(usize, usize)>,
    /// Accumulated local cost along `path`.
    pub cost: T,
}

/// Squared Euclidean distance between columns, skipping row 0 (c0).
fn local_cost<T: Scalar>(src: &ArrayView2<'_, T>, tgt: &ArrayView2<'_, T>) -> Array2<T> {
    let (n, t) = (src.ncols(), tgt.ncols());
    Array2::from_shape_fn((n, t), |(i, j)| {
        (1..src.nrows())
            .map(|d| {
                let diff = src[[d, i]] - tgt[[d, j]];
                diff * diff
            })
            .sum()
    })
}

/// Full DTW with the symmetric step set {(1,0), (0,1), (1,1)} and pinned
/// endpoints. Path recovery breaks ties toward the diagonal, then (1,0).
pub fn dtw<T: Scalar>(src_mcc: ArrayView2<'_, T>, tgt_mcc: ArrayView2<'_, T>) -> Result<DtwResult<T>> {
    if src_mcc.ncols() == 0 || tgt_mcc.ncols() == 0 {
        return Err(Error::EmptyInput("dtw sequence"));
    }
    if src_mcc.nrows() != tgt_mcc.nrows() {
        return Err(Error::DimensionMismatch {
            context: "dtw coefficient count",
            expected: src_mcc.nrows(),
            found: tgt_mcc.nrows(),
        });
    }
    let local = local_cost(&src_mcc, &tgt_mcc);
    let (n, t) = local.dim();
    let mut acc = Array2::from_elem((n, t), T::infinity());
    for i in 0..n {
        for j in 0..t {
            let best_prev = if i == 0 && j == 0 {
                T::zero()
            } else {
                let mut b = T::infinity();
                if i > 0 && j > 0 {
                    b = b.min(acc[[i - 1, j - 1]]);
                }
                if i > 0 {
                    b = b.min(acc[[i - 1, j]]);
                }
                if j > 0 {
                    b = b.min(acc[[i, j - 1]]);
                }
                b
            };
            acc[[i, j]] = best_prev + local[[i, j]];
        }
    }

    let mut path = vec![(n - 1, t - 1)];
    let (mut i, mut j) = (n - 1, t - 1);
    while i > 0 || j > 0 {
        // Candidates in tie-break priority order.
        let mut best: Option<((usize, usize), T)> = None;
        let candidates = [
            (i > 0 && j > 0).then(|| (i - 1, j - 1)),
            (i > 0).then(|| (i - 1, j)),
            (j > 0).then(|| (i, j - 1)),
        ];
        for cell in candidates.into_iter().flatten() {
            let v = acc[cell];
            if best.is_none_or(|(_, bv)| v < bv) {
                best = Some((cell, v));
            }
        }
        let ((pi, pj), _) = best.expect("at least one predecessor");
        i = pi;
        j = pj;
        path.push((i, j));
    }
    path.reverse();

    let mut target_index = vec![usize::MAX; n];
    for &(pi, pj) in &path {
        if target_index[pi] == usize::MAX {
            target_index[pi] = pj;
        }
    }
    let cost = path.iter().map(|&c| local[c]).sum();
    Ok(DtwResult {
        map: AlignmentMap::new(target_index, t)?,
        path,
        cost,
    })
}

/// Aligns a source MCC sequence to a target one; see [`dtw`].
pub fn dtw_align<T: Scalar>(src_mcc: ArrayView2<'_, T>, tgt_mcc: ArrayView2<'_, T>) -> Result<AlignmentMap> {
    dtw(src_mcc, tgt_mcc).map(|r| r.map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn identical_sequences_align_to_identity() {
        let s = Array2::from_shape_fn((3, 5), |(d, j)| (d * 7 + j * j) as f64);
        let r = dtw(s.view(), s.view()).unwrap();
        assert_eq!(r.map.as_slice(), &[0, 1, 2, 3, 4]);
        assert_eq!(r.cost, 0.0);
    }

    #[test]
    fn c0_is_ignored() {
        let a = array![[0.0, 100.0], [1.0, 2.0]];
        let b = array![[50.0, -3.0], [1.0, 2.0]];
        let r = dtw(a.view(), b.view()).unwrap();
        assert_eq!(r.cost, 0.0);
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        let a = Array2::<f64>::zeros((3, 0));
        let b = Array2::<f64>::zeros((3, 2));
        assert!(matches!(dtw(a.view(), b.view()), Err(Error::EmptyInput(_))));
        let c = Array2::<f64>::zeros((4, 2));
        assert!(matches!(
            dtw(b.view(), c.view()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn alignment_map_validation() {
        assert!(AlignmentMap::new(vec![0, 2, 1], 3).is_err());
        assert!(AlignmentMap::new(vec![0, 3], 3).is_err());
        assert!(AlignmentMap::new(vec![0, 0, 2], 3).is_ok());
    }
}
