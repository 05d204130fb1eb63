use nalgebra::{DMatrix, DVector};

/// Singular values below `RANK_TOLERANCE · σ_max` are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub solution: DVector<f64>,
    pub rank: usize,
}

/// Minimum-norm solution of `min ‖A x − b‖₂` via the SVD.
pub fn solve_min_norm(a: &DMatrix<f64>, b: &DVector<f64>) -> LeastSquares {
    let n = a.ncols();
    if a.nrows() == 0 || n == 0 {
        return LeastSquares {
            solution: DVector::zeros(n),
            rank: 0,
        };
    }
    let svd = a.clone().svd(true, true);
    let (u, v_t) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let sigma_max = svd.singular_values.max();
    let cutoff = RANK_TOLERANCE * sigma_max;
    let ut_b = u.transpose() * b;
    let mut coeff = DVector::zeros(svd.singular_values.len());
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            coeff[i] = ut_b[i] / s;
            rank += 1;
        }
    }
    LeastSquares {
        solution: v_t.transpose() * coeff,
        rank,
    }
}
