//! Bézier curves over parameter vectors.
//!
//! A curve of degree `K` is given by `K + 1` control points
//! `theta_0..theta_K` and evaluates to `b(t) = sum_k B_{k,K}(t) theta_k`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, distance, norm, Matrix};

/// Largest degree served from the precomputed log-binomial table.
const TABLE_DEGREE: usize = 64;

fn ln_binomial_table() -> &'static Vec<Vec<f64>> {
    static TABLE: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..=TABLE_DEGREE).map(ln_binomial_row).collect())
}

fn ln_binomial_row(n: usize) -> Vec<f64> {
    let mut row = vec![0.0; n + 1];
    for k in 1..=n {
        row[k] = row[k - 1] + ((n - k + 1) as f64).ln() - (k as f64).ln();
    }
    row
}

/// `ln C(n, k)`.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    if n <= TABLE_DEGREE {
        ln_binomial_table()[n][k]
    } else {
        ln_binomial_row(n)[k]
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::input(format!(
            "curve parameter t = {t} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Bernstein basis `C(K,k) (1-t)^(K-k) t^k` for `k = 0..=K`.
pub fn bernstein_weights(degree: usize, t: f64) -> Result<Vec<f64>> {
    check_t(t)?;
    Ok(bernstein_unchecked(degree, t))
}

pub(crate) fn bernstein_unchecked(degree: usize, t: f64) -> Vec<f64> {
    let mut w = vec![0.0; degree + 1];
    if t == 0.0 {
        w[0] = 1.0;
        return w;
    }
    if t == 1.0 {
        w[degree] = 1.0;
        return w;
    }
    let (lt, lu) = (t.ln(), (-t).ln_1p());
    for (k, wk) in w.iter_mut().enumerate() {
        *wk = (ln_binomial(degree, k) + k as f64 * lt + (degree - k) as f64 * lu).exp();
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureRule {
    #[default]
    CompositeSimpson,
    GaussLegendre,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub rule: QuadratureRule,
    /// Subintervals for Simpson (rounded up to even), nodes for Gauss–Legendre.
    pub n_nodes: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            rule: QuadratureRule::CompositeSimpson,
            n_nodes: 256,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 8 {
            return Err(Error::Config(format!(
                "quadrature needs at least 8 nodes, got {}",
                self.n_nodes
            )));
        }
        Ok(())
    }

    /// Nodes and weights on `[a, b]`.
    pub fn nodes(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let h = b - a;
        match self.rule {
            QuadratureRule::CompositeSimpson => {
                let n = self.n_nodes + self.n_nodes % 2;
                let step = h / n as f64;
                (0..=n)
                    .map(|i| {
                        let w = if i == 0 || i == n {
                            1.0
                        } else if i % 2 == 1 {
                            4.0
                        } else {
                            2.0
                        };
                        let x = if i == n { b } else { a + i as f64 * step };
                        (x, w * step / 3.0)
                    })
                    .collect()
            }
            QuadratureRule::GaussLegendre => gauss_legendre(self.n_nodes)
                .iter()
                .map(|&(x, w)| (a + 0.5 * h * (x + 1.0), 0.5 * h * w))
                .collect(),
        }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on
/// the Legendre recurrence.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 0.0); n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out[i] = (-x, w);
        out[n - 1 - i] = (x, w);
    }
    out
}

/// Control points of a Bézier curve, one row per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPoints {
    points: Matrix,
}

impl ControlPoints {
    pub fn new(points: Matrix) -> Result<Self> {
        if points.rows() == 0 || points.cols() == 0 {
            return Err(Error::input(
                "a curve needs at least one control point of positive dimension",
            ));
        }
        if let Some(i) = points.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "control points",
                index: i,
            });
        }
        Ok(Self { points })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn degree(&self) -> usize {
        self.points.rows() - 1
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        self.points.row(k)
    }

    pub fn point_mut(&mut self, k: usize) -> &mut [f64] {
        self.points.row_mut(k)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.points
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.iter_rows()
    }

    /// Same curve traversed backwards: `b_rev(t) = b(1 - t)`.
    pub fn reversed(&self) -> Self {
        let idx: Vec<usize> = (0..=self.degree()).rev().collect();
        Self {
            points: self.points.select_rows(&idx),
        }
    }

    fn combine(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (w, row) in weights.iter().zip(self.iter()) {
            if *w != 0.0 {
                axpy(*w, row, &mut out);
            }
        }
        out
    }

    pub fn evaluate(&self, t: f64) -> Result<Vec<f64>> {
        check_t(t)?;
        Ok(self.combine(&bernstein_unchecked(self.degree(), t)))
    }

    /// Control points of the `order`-th derivative curve (degree `K - order`),
    /// scaled by `K! / (K - order)!`.
    pub fn hodograph(&self, order: usize) -> Result<ControlPoints> {
        let k = self.degree();
        if order == 0 || order > k {
            return Err(Error::input(format!(
                "derivative order {order} outside 1..={k} for a degree-{k} curve"
            )));
        }
        let mut rows: Vec<Vec<f64>> = self.iter().map(<[f64]>::to_vec).collect();
        for j in 0..order {
            let factor = (k - j) as f64;
            rows = rows
                .windows(2)
                .map(|w| {
                    w[1].iter()
                        .zip(&w[0])
                        .map(|(b, a)| factor * (b - a))
                        .collect()
                })
                .collect();
        }
        ControlPoints::from_rows(&rows)
    }

    /// `d^order b / dt^order` at `t`, for `1 <= order <= K`.
    pub fn derivative(&self, t: f64, order: usize) -> Result<Vec<f64>> {
        check_t(t)?;
        let h = self.hodograph(order)?;
        Ok(h.combine(&bernstein_unchecked(h.degree(), t)))
    }

    /// Like [`derivative`](Self::derivative) but returns the zero vector,
    /// flagged `true`, when `order > K` (the derivative vanishes identically).
    pub fn derivative_or_zero(&self, t: f64, order: usize) -> Result<(Vec<f64>, bool)> {
        if order > self.degree() {
            check_t(t)?;
            return Ok((vec![0.0; self.dim()], true));
        }
        Ok((self.derivative(t, order)?, false))
    }

    pub fn speed(&self, t: f64) -> Result<f64> {
        if self.degree() == 0 {
            check_t(t)?;
            return Ok(0.0);
        }
        Ok(norm(&self.derivative(t, 1)?))
    }

    /// `int_a^b |b'(u)| du`.
    pub fn arc_length(&self, a: f64, b: f64, quad: &QuadratureConfig) -> Result<f64> {
        check_t(a)?;
        check_t(b)?;
        if a > b {
            return Err(Error::input(format!(
                "arc length interval [{a}, {b}] is reversed"
            )));
        }
        quad.validate()?;
        if self.degree() == 0 || a == b {
            return Ok(0.0);
        }
        let hodo = self.hodograph(1)?;
        let deg = hodo.degree();
        Ok(quad
            .nodes(a, b)
            .into_iter()
            .map(|(x, w)| w * norm(&hodo.combine(&bernstein_unchecked(deg, x))))
            .sum())
    }

    pub fn total_length(&self, quad: &QuadratureConfig) -> Result<f64> {
        self.arc_length(0.0, 1.0, quad)
    }

    /// Inverts `s(t) = arc_length(0, t)` by bisection. `tol` defaults to
    /// `1e-8 * S`.
    pub fn arc_to_time(&self, s: f64, tol: Option<f64>, quad: &QuadratureConfig) -> Result<f64> {
        let total = self.total_length(quad)?;
        self.arc_to_time_with_total(s, total, tol, quad)
    }

    pub fn arc_to_time_with_total(
        &self,
        s: f64,
        total: f64,
        tol: Option<f64>,
        quad: &QuadratureConfig,
    ) -> Result<f64> {
        if !(0.0..=total).contains(&s) {
            return Err(Error::input(format!("arc length {s} outside [0, {total}]")));
        }
        if s == 0.0 || total == 0.0 {
            return Ok(0.0);
        }
        if s == total {
            return Ok(1.0);
        }
        let tol = tol.unwrap_or(1e-8 * total);
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        let mut mid = 0.5;
        for _ in 0..200 {
            mid = 0.5 * (lo + hi);
            let sm = self.arc_length(0.0, mid, quad)?;
            if (sm - s).abs() < tol {
                break;
            }
            if sm < s {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-16 {
                break;
            }
        }
        Ok(mid)
    }

    /// `||theta_K - theta_0||`.
    pub fn chord(&self) -> f64 {
        distance(self.point(0), self.point(self.degree()))
    }
}
