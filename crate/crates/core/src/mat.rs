//! Minimal square-matrix container (row-major) plus the symmetric PSD
//! square root used for correlation models.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense square matrix, row-major storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(dim: usize) -> Self {
        Mat {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Mat::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for r in rows {
            assert_eq!(r.len(), dim, "matrix rows must be square");
            data.extend_from_slice(r);
        }
        Mat { dim, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    /// y = M x, writing into `out` (len == dim).
    #[inline]
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim;
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(out.len(), n);
        for i in 0..n {
            let row = &self.data[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x.iter()) {
                acc += a * b;
            }
            out[i] = acc;
        }
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        let dim = m.nrows();
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(m[(i, j)]);
            }
        }
        Mat { dim, data }
    }
}

/// Eigenvalue tolerance for PSD repair: eigenvalues in [-PSD_TOL, 0) are
/// clamped to 0, anything below -PSD_TOL is an error.
pub const PSD_TOL: f64 = 1e-8;

/// Repair a symmetric matrix to PSD by eigenvalue clamping, renormalize its
/// diagonal to 1, and return the repaired matrix together with its symmetric
/// square root R (R Rᵀ = repaired).
pub fn psd_repair_and_sqrt(corr: &Mat) -> Result<(Mat, Mat)> {
    let n = corr.dim;
    let sym = corr.to_nalgebra().symmetric_eigen();
    let min_eig = sym.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -PSD_TOL {
        return Err(Error::NotPsd {
            eigenvalue: min_eig,
        });
    }

    let clamped: Vec<f64> = sym.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let v = &sym.eigenvectors;
    let mut repaired = DMatrix::zeros(n, n);
    for (k, &l) in clamped.iter().enumerate() {
        let col = v.column(k);
        for i in 0..n {
            for j in 0..n {
                repaired[(i, j)] += l * col[i] * col[j];
            }
        }
    }
    // symmetrize and renormalize the diagonal to exactly 1
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (repaired[(i, j)] + repaired[(j, i)]);
            repaired[(i, j)] = avg;
            repaired[(j, i)] = avg;
        }
    }
    let diag: Vec<f64> = (0..n).map(|i| repaired[(i, i)]).collect();
    if diag.iter().any(|&d| d <= 0.0) {
        return Err(Error::NotPsd { eigenvalue: 0.0 });
    }
    for i in 0..n {
        for j in 0..n {
            repaired[(i, j)] /= (diag[i] * diag[j]).sqrt();
        }
    }
    for i in 0..n {
        repaired[(i, i)] = 1.0;
    }

    // square root of the renormalized matrix; residual negatives after the
    // renormalization are floating-point dust and clamp the same way
    let sym2 = repaired.clone().symmetric_eigen();
    let min2 = sym2.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min2 < -PSD_TOL {
        return Err(Error::NotPsd { eigenvalue: min2 });
    }
    let v2 = &sym2.eigenvectors;
    let mut root = DMatrix::zeros(n, n);
    for k in 0..n {
        let l = sym2.eigenvalues[k].max(0.0).sqrt();
        let col = v2.column(k);
        for i in 0..n {
            for j in 0..n {
                root[(i, j)] += l * col[i] * col[j];
            }
        }
    }

    Ok((Mat::from_nalgebra(&repaired), Mat::from_nalgebra(&root)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sqrt_of_identity_is_identity() {
        let (rep, root) = psd_repair_and_sqrt(&Mat::identity(3)).unwrap();
        assert_eq!(rep, Mat::identity(3));
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(root.get(i, j), want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn root_squares_back() {
        let corr = Mat::from_rows(&[
            vec![1.0, 0.8, 0.5],
            vec![0.8, 1.0, 0.7],
            vec![0.5, 0.7, 1.0],
        ]);
        let (rep, root) = psd_repair_and_sqrt(&corr).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += root.get(i, k) * root.get(j, k);
                }
                assert_relative_eq!(acc, rep.get(i, j), epsilon = 1e-10);
                assert_relative_eq!(rep.get(i, j), corr.get(i, j), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn rank_deficient_is_clamped() {
        // duplicated coordinate: off-diagonal exactly 1
        let corr = Mat::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let (rep, root) = psd_repair_and_sqrt(&corr).unwrap();
        assert_relative_eq!(rep.get(0, 1), 1.0, epsilon = 1e-12);
        let mut acc = 0.0;
        for k in 0..2 {
            acc += root.get(0, k) * root.get(1, k);
        }
        assert_relative_eq!(acc, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn indefinite_is_rejected() {
        let corr = Mat::from_rows(&[
            vec![1.0, 0.9, -0.9],
            vec![0.9, 1.0, 0.9],
            vec![-0.9, 0.9, 1.0],
        ]);
        assert!(matches!(
            psd_repair_and_sqrt(&corr),
            Err(Error::NotPsd { .. })
        ));
    }
}
