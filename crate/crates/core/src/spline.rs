//! Basis systems for weight curves: identity (pointwise), constant, and
//! clamped B-spline bases, plus difference penalties and the roughness-
//! penalized smoother matrix.
//!
//! A weight curve over the probability grid is represented as `B * beta`
//! where `B` is an `M x L` basis matrix and `beta` holds `L` coefficients
//! per expert. Three families are supported:
//!
//! - **identity**: `B = I`, one coefficient per grid point (pointwise
//!   learning, the default);
//! - **constant**: `B` is a single all-ones column, one shared coefficient
//!   (one learning rate for the whole curve);
//! - **B-spline**: clamped B-splines of degree 0 to 3 on equidistant knots
//!   over `(0, 1)`, evaluated with the Cox-de Boor recursion. Basis functions
//!   that vanish at every grid point are dropped, so `B` never carries dead
//!   columns.
//!
//! The smoother matrix `S = B (B'B + lambda * P(alpha))^-1 B'` with penalty
//! `P(alpha) = alpha D1'D1 + (1 - alpha) D2'D2` shrinks a curve toward
//! smoothness; as `lambda -> inf` it flattens the curve to a constant, and at
//! `lambda = 0` (full-rank basis) it is the plain projection onto the basis
//! span.

use crate::grid::{ProbGrid, WeightSurface};
use nalgebra::DMatrix;
use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SplineError {
    #[error("degree {0} is not supported; valid degrees are 0 through 3")]
    BadDegree(usize),
    #[error("knot distance {0} must lie in (0, 0.5]")]
    BadKnotDistance(f64),
    #[error("alpha = {0} must lie in [0, 1]")]
    BadAlpha(f64),
    #[error("lambda = {0} must be finite and nonnegative")]
    BadLambda(f64),
    #[error("difference order {order} requires at least {} basis functions, got {len}", order + 1)]
    TooFewForDifference { order: usize, len: usize },
    #[error(
        "smoothing system is singular at lambda = {lambda} (rank-deficient basis needs lambda > 0)"
    )]
    SingularSystem { lambda: f64 },
    #[error("no basis function is active on the grid")]
    EmptyBasis,
}

/// Which family a [`BasisSystem`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasisKind {
    Identity,
    Constant,
    BSpline { degree: usize, knot_distance: f64 },
}

/// A basis matrix over a probability grid together with its first- and
/// second-order difference matrices.
#[derive(Debug, Clone)]
pub struct BasisSystem {
    kind: BasisKind,
    matrix: Array2<f64>,
    knots: Vec<f64>,
    d1: Array2<f64>,
    d2: Array2<f64>,
}

impl BasisSystem {
    /// The pointwise basis: `B` is the `M x M` identity.
    pub fn identity(grid: &ProbGrid) -> Self {
        let m = grid.len();
        Self {
            kind: BasisKind::Identity,
            matrix: Array2::eye(m),
            knots: grid.probs().to_vec(),
            d1: difference_or_empty(m, 1),
            d2: difference_or_empty(m, 2),
        }
    }

    /// The constant basis: `B` is a single all-ones column, so every grid
    /// point shares one coefficient per expert.
    pub fn constant(grid: &ProbGrid) -> Self {
        let m = grid.len();
        Self {
            kind: BasisKind::Constant,
            matrix: Array2::ones((m, 1)),
            knots: vec![0.0, 1.0],
            d1: difference_or_empty(1, 1),
            d2: difference_or_empty(1, 2),
        }
    }

    /// Clamped B-spline basis of the given degree on equidistant knots.
    ///
    /// The number of knot intervals is `round(1 / knot_distance)`, so the
    /// realized spacing is the closest exact divisor of the unit interval.
    /// Boundary knots are repeated `degree` extra times (clamping), and basis
    /// functions with no support on the grid are dropped.
    pub fn bspline(
        grid: &ProbGrid,
        knot_distance: f64,
        degree: usize,
    ) -> Result<Self, SplineError> {
        if degree > 3 {
            return Err(SplineError::BadDegree(degree));
        }
        if !knot_distance.is_finite() || knot_distance <= 0.0 || knot_distance > 0.5 {
            return Err(SplineError::BadKnotDistance(knot_distance));
        }
        let intervals = (1.0 / knot_distance).round().max(1.0) as usize;
        let mut knots = Vec::with_capacity(intervals + 1 + 2 * degree);
        for _ in 0..degree {
            knots.push(0.0);
        }
        for i in 0..=intervals {
            knots.push(i as f64 / intervals as f64);
        }
        for _ in 0..degree {
            knots.push(1.0);
        }
        let n_funcs = knots.len() - degree - 1;

        let m = grid.len();
        let mut raw = Array2::zeros((m, n_funcs));
        for (row, &p) in grid.iter().enumerate() {
            let vals = cox_de_boor_all(p, &knots, degree);
            for (col, &v) in vals.iter().enumerate() {
                raw[[row, col]] = v;
            }
        }

        // Drop basis functions that vanish at every grid point (they can
        // occur near the boundaries when knots are denser than the grid).
        let keep: Vec<usize> = (0..n_funcs)
            .filter(|&col| (0..m).any(|row| raw[[row, col]] != 0.0))
            .collect();
        if keep.is_empty() {
            return Err(SplineError::EmptyBasis);
        }
        let l = keep.len();
        let matrix = Array2::from_shape_fn((m, l), |(row, col)| raw[[row, keep[col]]]);

        Ok(Self {
            kind: BasisKind::BSpline {
                degree,
                knot_distance,
            },
            matrix,
            knots,
            d1: difference_or_empty(l, 1),
            d2: difference_or_empty(l, 2),
        })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    /// The `M x L` basis matrix.
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    /// Full knot vector (clamped copies included) for B-spline bases; grid
    /// levels for the identity basis; `[0, 1]` for the constant basis.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn grid_len(&self) -> usize {
        self.matrix.dim().0
    }

    pub fn n_basis(&self) -> usize {
        self.matrix.dim().1
    }

    pub fn first_difference(&self) -> &Array2<f64> {
        &self.d1
    }

    pub fn second_difference(&self) -> &Array2<f64> {
        &self.d2
    }

    /// The combined difference penalty `alpha D1'D1 + (1 - alpha) D2'D2`.
    pub fn penalty(&self, alpha: f64) -> Array2<f64> {
        let p1 = self.d1.t().dot(&self.d1);
        let p2 = self.d2.t().dot(&self.d2);
        alpha * &p1 + (1.0 - alpha) * &p2
    }

    /// The `M x M` smoother matrix `B (B'B + lambda P(alpha))^-1 B'`.
    ///
    /// Fails when the system is singular, which happens exactly when the
    /// basis is rank-deficient (more active functions than grid points) and
    /// `lambda = 0` supplies no regularization.
    pub fn smoother(&self, lambda: f64, alpha: f64) -> Result<Array2<f64>, SplineError> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(SplineError::BadLambda(lambda));
        }
        if !alpha.is_finite() || !(0.0..=1.0).contains(&alpha) {
            return Err(SplineError::BadAlpha(alpha));
        }
        let (m, l) = self.matrix.dim();
        if lambda == 0.0 && l > m {
            return Err(SplineError::SingularSystem { lambda });
        }
        let b = &self.matrix;
        let mut gram = b.t().dot(b);
        if lambda > 0.0 {
            gram = gram + lambda * &self.penalty(alpha);
        }
        let gram_na = DMatrix::from_fn(l, l, |i, j| gram[[i, j]]);
        let chol = gram_na
            .cholesky()
            .ok_or(SplineError::SingularSystem { lambda })?;
        let mut inv = chol.inverse();
        // Symmetrize the inverse so the smoother is symmetric to rounding.
        for i in 0..l {
            for j in (i + 1)..l {
                let avg = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = avg;
                inv[(j, i)] = avg;
            }
        }
        let inv_nd = Array2::from_shape_fn((l, l), |(i, j)| inv[(i, j)]);
        Ok(b.dot(&inv_nd).dot(&b.t()))
    }
}

/// Forward difference matrix of the given order (1 or 2) acting on vectors of
/// length `len`: order 1 maps `v` to adjacent differences, order 2 to second
/// differences.
pub fn difference_matrix(len: usize, order: usize) -> Result<Array2<f64>, SplineError> {
    assert!(order == 1 || order == 2, "only orders 1 and 2 are used");
    if len <= order {
        return Err(SplineError::TooFewForDifference { order, len });
    }
    Ok(difference_or_empty(len, order))
}

/// Like [`difference_matrix`] but yields an empty (0-row) matrix when the
/// coefficient vector is too short to difference, which makes the penalty
/// vanish instead of failing; used for the constant basis.
fn difference_or_empty(len: usize, order: usize) -> Array2<f64> {
    if len <= order {
        return Array2::zeros((0, len));
    }
    let first = |n: usize| {
        let mut d = Array2::zeros((n - 1, n));
        for i in 0..n - 1 {
            d[[i, i]] = -1.0;
            d[[i, i + 1]] = 1.0;
        }
        d
    };
    match order {
        1 => first(len),
        2 => first(len - 1).dot(&first(len)),
        _ => unreachable!("only orders 1 and 2 are used"),
    }
}

/// Least-squares initialization of basis coefficients from a prior weight
/// surface: `beta0 = pinv(B) * W0`, shape `(L, K)`.
///
/// For the identity basis the pseudo-inverse is the identity, so the prior is
/// returned exactly; other bases go through an SVD pseudo-inverse. When the
/// prior surface lies in the basis span (the uniform prior always does, since
/// every basis here reproduces constants), `B * beta0` recovers it.
pub fn pinv_init(basis: &BasisSystem, prior: &WeightSurface) -> Array2<f64> {
    assert_eq!(
        prior.grid_len(),
        basis.grid_len(),
        "prior surface has {} grid rows, basis has {}",
        prior.grid_len(),
        basis.grid_len()
    );
    if basis.kind() == BasisKind::Identity {
        return prior.weights().clone();
    }
    let (m, l) = basis.matrix().dim();
    let b_na = DMatrix::from_fn(m, l, |i, j| basis.matrix()[[i, j]]);
    let svd = b_na.svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let pinv = svd
        .pseudo_inverse(max_sv * 1e-12)
        .expect("pseudo-inverse tolerance is nonnegative");
    let w = prior.weights();
    let k = w.dim().1;
    Array2::from_shape_fn((l, k), |(row, col)| {
        let mut acc = 0.0;
        for inner in 0..m {
            acc += pinv[(row, inner)] * w[[inner, col]];
        }
        acc
    })
}

/// Evaluates every B-spline of the given degree on the knot vector at `x`
/// via the Cox-de Boor triangle. Zero-width spans (from clamped knots)
/// contribute nothing.
fn cox_de_boor_all(x: f64, knots: &[f64], degree: usize) -> Vec<f64> {
    let n_funcs = knots.len() - degree - 1;
    let mut vals = vec![0.0; knots.len() - 1];
    for j in 0..knots.len() - 1 {
        if knots[j] <= x && x < knots[j + 1] {
            vals[j] = 1.0;
        }
    }
    for d in 1..=degree {
        let width = knots.len() - d - 1;
        let mut next = vec![0.0; width];
        for (j, slot) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            let den_left = knots[j + d] - knots[j];
            if den_left > 0.0 && vals[j] != 0.0 {
                acc += (x - knots[j]) / den_left * vals[j];
            }
            let den_right = knots[j + d + 1] - knots[j + 1];
            if den_right > 0.0 && vals[j + 1] != 0.0 {
                acc += (knots[j + d + 1] - x) / den_right * vals[j + 1];
            }
            *slot = acc;
        }
        vals = next;
    }
    vals.truncate(n_funcs);
    vals
}
