//! B-spline bases on an interval and least-squares projection of gridded
//! curves onto them.

pub mod mortality;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::SpaceSpec;

/// Clamped B-spline basis with equally spaced interior knots.
#[derive(Debug, Clone)]
pub struct BSplineBasis {
    domain: (f64, f64),
    order: usize,
    knots: Vec<f64>,
    gram: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct GriddedCurve {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl GriddedCurve {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() || grid.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "{} grid points but {} values",
                grid.len(),
                values.len()
            )));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("grid must be strictly increasing".into()));
        }
        if values.iter().chain(&grid).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("curve has non-finite values".into()));
        }
        Ok(GriddedCurve { grid, values })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Builds a clamped basis of `dim` B-splines of the given `order`
/// (polynomial degree `order − 1`) on `[a, b]`.
pub fn build_bspline(domain: (f64, f64), dim: usize, order: usize) -> Result<BSplineBasis> {
    let (a, b) = domain;
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidInput(format!("invalid domain [{a}, {b}]")));
    }
    if order < 2 || dim < order {
        return Err(Error::InvalidInput(format!("need dim >= order >= 2, got dim={dim}, order={order}")));
    }
    let interior = dim - order;
    let mut knots = vec![a; order];
    for m in 1..=interior {
        knots.push(a + (b - a) * m as f64 / (interior + 1) as f64);
    }
    knots.extend(std::iter::repeat(b).take(order));
    let mut basis = BSplineBasis { domain, order, knots, gram: DMatrix::zeros(dim, dim) };
    basis.gram = basis.quadrature_gram();
    Ok(basis)
}

impl BSplineBasis {
    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.knots.len() - self.order
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.knots[self.order..self.dim()]
    }

    /// `∫ φ_j φ_k` over the domain.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn space(&self) -> Result<SpaceSpec> {
        SpaceSpec::functional(self.gram.clone())
    }

    /// Knot span index `s` with `knots[s] <= x < knots[s+1]` (closed at `b`).
    fn span(&self, x: f64) -> usize {
        let (p, n) = (self.order - 1, self.dim());
        if x >= self.knots[n] {
            return n - 1;
        }
        let mut s = p;
        while s + 1 < n && x >= self.knots[s + 1] {
            s += 1;
        }
        s
    }

    /// Values of all basis functions at `x` (zero outside the domain).
    pub fn eval_all(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        let (a, b) = self.domain;
        if x < a || x > b {
            return out;
        }
        let p = self.order - 1;
        let s = self.span(x);
        // Cox–de Boor triangle for the p+1 functions supported on span s.
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - self.knots[s + 1 - j];
            right[j] = self.knots[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let tmp = if denom == 0.0 { 0.0 } else { n[r] / denom };
                n[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            n[j] = saved;
        }
        for (r, v) in n.into_iter().enumerate() {
            out[s - p + r] = v;
        }
        out
    }

    /// `Σ_j c_j φ_j(x)`.
    pub fn evaluate(&self, coeffs: &[f64], x: f64) -> f64 {
        self.eval_all(x).iter().zip(coeffs).map(|(b, c)| b * c).sum()
    }

    /// `K × dim` matrix of basis values on a grid.
    pub fn design_matrix(&self, grid: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(grid.len(), self.dim());
        for (k, &x) in grid.iter().enumerate() {
            for (j, v) in self.eval_all(x).into_iter().enumerate() {
                m[(k, j)] = v;
            }
        }
        m
    }

    fn quadrature_gram(&self) -> DMatrix<f64> {
        let d = self.dim();
        let (nodes, weights) = gauss_legendre(self.order);
        let mut g = DMatrix::zeros(d, d);
        for w in self.knots.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi <= lo {
                continue;
            }
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (x, wt) in nodes.iter().zip(&weights) {
                let vals = self.eval_all(mid + half * x);
                for j in 0..d {
                    if vals[j] == 0.0 {
                        continue;
                    }
                    for k in 0..d {
                        g[(j, k)] += half * wt * vals[j] * vals[k];
                    }
                }
            }
        }
        crate::panel::symmetrize(&mut g);
        g
    }
}

/// Least-squares coefficients of a gridded curve in the basis.
pub fn project_curve(basis: &BSplineBasis, curve: &GriddedCurve) -> Result<DVector<f64>> {
    let (a, b) = basis.domain();
    if curve.grid.first().is_some_and(|&x| x < a) || curve.grid.last().is_some_and(|&x| x > b) {
        return Err(Error::InvalidInput(format!("curve grid leaves the domain [{a}, {b}]")));
    }
    if curve.grid.len() < basis.dim() {
        return Err(Error::InvalidInput(format!(
            "need at least {} grid points, got {}",
            basis.dim(),
            curve.grid.len()
        )));
    }
    Projector::new(basis, &curve.grid)?.project(&curve.values)
}

/// Reusable least-squares projector for a fixed grid.
#[derive(Debug, Clone)]
pub struct Projector {
    pinv: DMatrix<f64>,
}

impl Projector {
    pub fn new(basis: &BSplineBasis, grid: &[f64]) -> Result<Self> {
        let design = basis.design_matrix(grid);
        let svd = design.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 1e-10 * smax) {
            return Err(Error::Collinear(format!(
                "B-spline design on this grid has condition number {:e}",
                smax / smin
            )));
        }
        let pinv = svd.pseudo_inverse(0.0).map_err(|e| Error::Collinear(e.to_string()))?;
        Ok(Projector { pinv })
    }

    pub fn project(&self, values: &[f64]) -> Result<DVector<f64>> {
        if values.len() != self.pinv.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "projector expects {} values, got {}",
                self.pinv.ncols(),
                values.len()
            )));
        }
        Ok(&self.pinv * DVector::from_column_slice(values))
    }
}
