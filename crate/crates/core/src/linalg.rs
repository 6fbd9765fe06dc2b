//! Dense Cholesky factorization for the small covariance matrices used here.

/// Lower-triangular factor `L` with `A = L L^T`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

/// Pivots at or below this fraction of the largest diagonal entry count as
/// a failed factorization.
const PIVOT_REL_TOL: f64 = 1e-12;

impl Cholesky {
    /// Factorizes a symmetric `n x n` row-major matrix; `None` if it is not
    /// numerically positive-definite.
    pub fn factor(a: &[f64], n: usize) -> Option<Self> {
        assert_eq!(a.len(), n * n);
        let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
        if !(scale > 0.0 && scale.is_finite()) {
            return None;
        }
        let tol = PIVOT_REL_TOL * scale;
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let dot: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
                if i == j {
                    let pivot = a[i * n + i] - dot;
                    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN pivots fail too
                    if !(pivot > tol) {
                        return None;
                    }
                    l[i * n + i] = pivot.sqrt();
                } else {
                    l[i * n + j] = (a[i * n + j] - dot) / l[j * n + j];
                }
            }
        }
        Some(Cholesky { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `L y = b` by forward substitution.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let dot: f64 = (0..i).map(|k| self.l[i * n + k] * y[k]).sum();
            y[i] = (b[i] - dot) / self.l[i * n + i];
        }
        y
    }

    /// `b^T A^{-1} b` without forming the inverse.
    pub fn quad_form(&self, b: &[f64]) -> f64 {
        self.forward(b).iter().map(|y| y * y).sum()
    }

    pub fn factor_matrix(&self) -> &[f64] {
        &self.l
    }
}
