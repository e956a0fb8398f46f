//! Coordinate tensor calculus at a point.
//!
//! Index conventions, used throughout the crate:
//!
//! * `Γ^a_{bc}` is stored at `[a][b][c]`; `(Γ_b)^a_c = Γ^a_{bc}` is the
//!   connection matrix of `∇_{∂_b}`.
//! * `R(∂_a, ∂_b)∂_c = R^d_{cab} ∂_d`, stored with index order `(d, c, a, b)`,
//!   so `R(∂_a,∂_b) = ∂_aΓ_b − ∂_bΓ_a + [Γ_a, Γ_b]`.
//! * `∇R` is stored as `(d, c, a, b, e)` with `e` the differentiation slot.
//! * The Weyl connection of `(g, ω)` satisfies `∇g = −2ω⊗g`.

use std::collections::{BTreeSet, HashMap};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exprlang::{EvalError, Expr, JetEnv};
use crate::jets::Jet;

type J = Jet<f64>;

pub const DEFAULT_RECURRENCE_TOL: f64 = 1e-8;
pub const DEFAULT_RANK_TOL: f64 = 1e-7;
/// Below this `‖∇_e R‖` the recurrence residual is absolute.
const RELATIVE_FLOOR: f64 = 1e-8;
/// `w` is only fitted when `‖ω‖` exceeds this.
const OMEGA_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("point violates domain constraint '{0} > 0'")]
    Domain(String),
    #[error("metric is singular at the point")]
    SingularMetric,
    #[error("metric signature is ({negative}, {positive}), expected Lorentzian")]
    Signature { negative: usize, positive: usize },
    #[error("curvature vanishes at the point; recurrence is not applicable")]
    NotApplicable,
    #[error("invalid chart: {0}")]
    Chart(String),
    #[error("invalid structure: {0}")]
    Structure(String),
    #[error("point has {got} coordinates, chart has {want}")]
    PointDim { got: usize, want: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Coordinates plus the open domain `{constraint > 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    names: Vec<String>,
    constraints: Vec<Expr>,
}

impl Chart {
    pub fn new(names: &[&str], constraints: Vec<Expr>) -> Result<Self, TensorError> {
        if names.len() < 3 {
            return Err(TensorError::Chart(format!("dimension {} < 3", names.len())));
        }
        let unique: BTreeSet<&str> = names.iter().copied().collect();
        if unique.len() != names.len() {
            return Err(TensorError::Chart("coordinate names must be unique".into()));
        }
        for c in &constraints {
            if let Some(v) = c.variables().into_iter().find(|v| !unique.contains(v.as_str())) {
                return Err(TensorError::Chart(format!("constraint '{c}' references unknown '{v}'")));
            }
        }
        Ok(Chart { names: names.iter().map(|s| s.to_string()).collect(), constraints })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn constraints(&self) -> &[Expr] {
        &self.constraints
    }

    pub fn add_constraint(&mut self, c: Expr) {
        self.constraints.push(c);
    }

    pub fn env_f64<'a>(&'a self, point: &[f64]) -> HashMap<&'a str, f64> {
        self.names.iter().map(String::as_str).zip(point.iter().copied()).collect()
    }

    /// Checks that every constraint is strictly positive at `point`.
    pub fn check(&self, point: &[f64]) -> Result<(), TensorError> {
        if point.len() != self.dim() {
            return Err(TensorError::PointDim { got: point.len(), want: self.dim() });
        }
        let env = self.env_f64(point);
        for c in &self.constraints {
            match c.eval_f64(&env) {
                Ok(v) if v > 0.0 => {}
                _ => return Err(TensorError::Domain(c.to_string())),
            }
        }
        Ok(())
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        self.check(point).is_ok()
    }

    fn jet_env(&self, point: &[f64], order: usize) -> JetEnv<f64> {
        let names: Vec<&str> = self.names.iter().map(String::as_str).collect();
        JetEnv::coordinates(&names, point, order)
    }
}

/// A metric and Weyl 1-form given by expressions over a chart.
#[derive(Debug, Clone, PartialEq)]
pub struct WeylStructure {
    pub chart: Chart,
    pub metric: Vec<Vec<Expr>>,
    pub omega: Vec<Expr>,
}

impl WeylStructure {
    pub fn new(chart: Chart, metric: Vec<Vec<Expr>>, omega: Vec<Expr>) -> Result<Self, TensorError> {
        let d = chart.dim();
        if metric.len() != d || metric.iter().any(|r| r.len() != d) || omega.len() != d {
            return Err(TensorError::Structure(format!("component arrays must be {d}x{d} and {d}")));
        }
        for a in 0..d {
            for b in 0..a {
                if metric[a][b] != metric[b][a] {
                    return Err(TensorError::Structure(format!("g is not symmetric in ({a},{b})")));
                }
            }
        }
        let known: BTreeSet<&str> = chart.names.iter().map(String::as_str).collect();
        for e in metric.iter().flatten().chain(&omega) {
            if let Some(v) = e.variables().into_iter().find(|v| !known.contains(v.as_str())) {
                return Err(TensorError::Structure(format!("'{e}' references unknown '{v}'")));
            }
        }
        Ok(WeylStructure { chart, metric, omega })
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    /// The same Weyl structure with metric `e^{2f} g` (and 1-form `ω − df`).
    pub fn rescaled(&self, f: &Expr) -> WeylStructure {
        let factor = (Expr::int(2) * f.clone()).exp();
        let metric = self
            .metric
            .iter()
            .map(|row| row.iter().map(|g| factor.clone() * g.clone()).collect())
            .collect();
        let omega = self
            .chart
            .names
            .iter()
            .zip(&self.omega)
            .map(|(x, w)| w.clone() - f.diff(x))
            .collect();
        WeylStructure { chart: self.chart.clone(), metric, omega }
    }

    /// The Levi-Civita structure of the same metric (`ω = 0`).
    pub fn metric_only(&self) -> WeylStructure {
        WeylStructure {
            chart: self.chart.clone(),
            metric: self.metric.clone(),
            omega: vec![Expr::int(0); self.dim()],
        }
    }

    /// Metric components at a point.
    pub fn metric_at(&self, point: &[f64]) -> Result<DMatrix<f64>, TensorError> {
        self.chart.check(point)?;
        let env = self.chart.env_f64(point);
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for a in 0..d {
            for b in 0..d {
                m[(a, b)] = self.metric[a][b].eval_f64(&env)?;
            }
        }
        Ok(m)
    }

    pub fn omega_at(&self, point: &[f64]) -> Result<Vec<f64>, TensorError> {
        self.chart.check(point)?;
        let env = self.chart.env_f64(point);
        Ok(self.omega.iter().map(|w| w.eval_f64(&env)).collect::<Result<_, _>>()?)
    }

    /// Numbers of negative and positive eigenvalues of `g` at the point.
    pub fn signature_at(&self, point: &[f64]) -> Result<(usize, usize), TensorError> {
        let g = self.metric_at(point)?;
        let eig = SymmetricEigen::new(g.clone());
        let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
        if eig.eigenvalues.iter().any(|l| l.abs() <= 1e-13 * scale) {
            return Err(TensorError::SingularMetric);
        }
        let neg = eig.eigenvalues.iter().filter(|l| **l < 0.0).count();
        Ok((neg, g.nrows() - neg))
    }

    fn fields(&self, point: &[f64], order: usize) -> Result<FieldJets, TensorError> {
        self.chart.check(point)?;
        let (negative, positive) = self.signature_at(point)?;
        if negative != 1 {
            return Err(TensorError::Signature { negative, positive });
        }
        let env = self.chart.jet_env(point, order);
        let d = self.dim();
        let mut g = Vec::with_capacity(d * d);
        for row in &self.metric {
            for e in row {
                g.push(e.eval_jet(&env)?);
            }
        }
        let omega = self.omega.iter().map(|e| e.eval_jet(&env)).collect::<Result<Vec<_>, _>>()?;
        let ginv = invert(d, &g)?;
        Ok(FieldJets { d, order, g, ginv, omega })
    }
}

struct FieldJets {
    d: usize,
    order: usize,
    g: Vec<J>,
    ginv: Vec<J>,
    omega: Vec<J>,
}

/// Gauss-Jordan inverse of a `d × d` matrix of jets.
fn invert(d: usize, m: &[J]) -> Result<Vec<J>, TensorError> {
    let mut a: Vec<J> = m.to_vec();
    let mut inv: Vec<J> = (0..d * d)
        .map(|i| m[0].constant_like(if i / d == i % d { 1.0 } else { 0.0 }))
        .collect();
    let scale = m.iter().map(|j| j.value().abs()).fold(0.0, f64::max);
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&r, &s| a[r * d + col].value().abs().total_cmp(&a[s * d + col].value().abs()))
            .unwrap();
        if a[pivot * d + col].value().abs() <= 1e-14 * scale {
            return Err(TensorError::SingularMetric);
        }
        if pivot != col {
            for k in 0..d {
                a.swap(pivot * d + k, col * d + k);
                inv.swap(pivot * d + k, col * d + k);
            }
        }
        let p = a[col * d + col].recip().map_err(|_| TensorError::SingularMetric)?;
        for k in 0..d {
            a[col * d + k] = &a[col * d + k] * &p;
            inv[col * d + k] = &inv[col * d + k] * &p;
        }
        for r in 0..d {
            if r == col || a[r * d + col].coeffs().iter().all(|c| *c == 0.0) {
                continue;
            }
            let factor = a[r * d + col].clone();
            for k in 0..d {
                a[r * d + k] = &a[r * d + k] - &(&factor * &a[col * d + k]);
                inv[r * d + k] = &inv[r * d + k] - &(&factor * &inv[col * d + k]);
            }
        }
    }
    Ok(inv)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variance {
    Up,
    Down,
}

/// Dense component array at a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointTensor {
    pub dim: usize,
    pub variance: Vec<Variance>,
    pub data: Vec<f64>,
}

impl PointTensor {
    pub fn zeros(dim: usize, variance: Vec<Variance>) -> Self {
        let len = dim.pow(variance.len() as u32);
        PointTensor { dim, variance, data: vec![0.0; len] }
    }

    pub fn rank(&self) -> usize {
        self.variance.len()
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.rank());
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    /// Frobenius norm of the components.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// The `d × d` endomorphism `R(∂_a, ∂_b)` of a curvature tensor (`(d,c,a,b)` layout).
    pub fn endomorphism(&self, a: usize, b: usize) -> DMatrix<f64> {
        let d = self.dim;
        DMatrix::from_fn(d, d, |row, col| self.get(&[row, col, a, b]))
    }
}

/// Christoffel symbols with their jets up to `depth`.
#[derive(Debug, Clone)]
pub struct Connection {
    pub dim: usize,
    pub point: Vec<f64>,
    pub depth: usize,
    gamma: Vec<J>,
}

impl Connection {
    fn idx(&self, a: usize, b: usize, c: usize) -> usize {
        (a * self.dim + b) * self.dim + c
    }

    /// `Γ^a_{bc}` at the point.
    pub fn gamma(&self, a: usize, b: usize, c: usize) -> f64 {
        *self.gamma[self.idx(a, b, c)].value()
    }

    pub fn gamma_jet(&self, a: usize, b: usize, c: usize) -> &J {
        &self.gamma[self.idx(a, b, c)]
    }

    pub fn values(&self) -> PointTensor {
        let mut t = PointTensor::zeros(self.dim, vec![Variance::Up, Variance::Down, Variance::Down]);
        t.data = self.gamma.iter().map(|j| *j.value()).collect();
        t
    }

    pub fn max_torsion(&self) -> f64 {
        let d = self.dim;
        let mut m: f64 = 0.0;
        for a in 0..d {
            for b in 0..d {
                for c in 0..b {
                    m = m.max((self.gamma(a, b, c) - self.gamma(a, c, b)).abs());
                }
            }
        }
        m
    }

    /// Curvature components as jets of order `depth − 1`, layout `(d, c, a, b)`.
    pub fn curvature_jets(&self) -> Vec<J> {
        assert!(self.depth >= 1, "curvature needs connection depth >= 1");
        let d = self.dim;
        let low: Vec<J> = self.gamma.iter().map(|j| j.truncate(self.depth - 1)).collect();
        let deriv: Vec<Vec<J>> = (0..d)
            .map(|v| self.gamma.iter().map(|j| j.derivative(v).expect("depth >= 1")).collect())
            .collect();
        let gi = |a: usize, b: usize, c: usize| (a * d + b) * d + c;
        let zero = low[0].zero_like();
        let mut out = Vec::with_capacity(d.pow(4));
        for dd in 0..d {
            for c in 0..d {
                for a in 0..d {
                    for b in 0..d {
                        if a == b {
                            out.push(zero.clone());
                            continue;
                        }
                        let mut r = &deriv[a][gi(dd, b, c)] - &deriv[b][gi(dd, a, c)];
                        for e in 0..d {
                            let p = &low[gi(dd, a, e)] * &low[gi(e, b, c)];
                            let q = &low[gi(dd, b, e)] * &low[gi(e, a, c)];
                            r = &(&r + &p) - &q;
                        }
                        out.push(r);
                    }
                }
            }
        }
        out
    }

    pub fn curvature(&self) -> PointTensor {
        let jets = self.curvature_jets();
        let mut t = PointTensor::zeros(self.dim, curvature_variance());
        t.data = jets.iter().map(|j| *j.value()).collect();
        t
    }

    /// Full covariant derivative of the curvature, layout `(d, c, a, b, e)`.
    pub fn nabla_curvature(&self) -> PointTensor {
        assert!(self.depth >= 2, "∇R needs connection depth >= 2");
        let d = self.dim;
        let rj = self.curvature_jets();
        let r: Vec<f64> = rj.iter().map(|j| *j.value()).collect();
        let ri = |dd: usize, c: usize, a: usize, b: usize| ((dd * d + c) * d + a) * d + b;
        let mut variance = curvature_variance();
        variance.push(Variance::Down);
        let mut out = PointTensor::zeros(d, variance);
        for dd in 0..d {
            for c in 0..d {
                for a in 0..d {
                    for b in 0..d {
                        for e in 0..d {
                            let mut v = rj[ri(dd, c, a, b)].partial(&unit(d, e));
                            for f in 0..d {
                                v += self.gamma(dd, e, f) * r[ri(f, c, a, b)]
                                    - self.gamma(f, e, c) * r[ri(dd, f, a, b)]
                                    - self.gamma(f, e, a) * r[ri(dd, c, f, b)]
                                    - self.gamma(f, e, b) * r[ri(dd, c, a, f)];
                            }
                            out.set(&[dd, c, a, b, e], v);
                        }
                    }
                }
            }
        }
        out
    }
}

fn unit(d: usize, e: usize) -> Vec<u8> {
    let mut u = vec![0u8; d];
    u[e] = 1;
    u
}

fn curvature_variance() -> Vec<Variance> {
    vec![Variance::Up, Variance::Down, Variance::Down, Variance::Down]
}

fn christoffel(f: &FieldJets, weyl: bool) -> Vec<J> {
    let d = f.d;
    let k = f.order - 1;
    let dg: Vec<Vec<J>> = (0..d)
        .map(|v| f.g.iter().map(|j| j.derivative(v).expect("order >= 1")).collect())
        .collect();
    let ginv: Vec<J> = f.ginv.iter().map(|j| j.truncate(k)).collect();
    let g: Vec<J> = f.g.iter().map(|j| j.truncate(k)).collect();
    let omega: Vec<J> = f.omega.iter().map(|j| j.truncate(k)).collect();
    let mut out = Vec::with_capacity(d * d * d);
    // ω^a = g^{ad} ω_d
    let omega_up: Vec<J> = (0..d)
        .map(|a| {
            let mut s = omega[0].zero_like();
            for dd in 0..d {
                s = &s + &(&ginv[a * d + dd] * &omega[dd]);
            }
            s
        })
        .collect();
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                let mut s = g[0].zero_like();
                for dd in 0..d {
                    let bracket = &(&dg[b][dd * d + c] + &dg[c][b * d + dd]) - &dg[dd][b * d + c];
                    s = &s + &(&ginv[a * d + dd] * &bracket);
                }
                s = s.scale(&0.5);
                if weyl {
                    if a == b {
                        s = &s + &omega[c];
                    }
                    if a == c {
                        s = &s + &omega[b];
                    }
                    s = &s - &(&g[b * d + c] * &omega_up[a]);
                }
                out.push(s);
            }
        }
    }
    out
}

/// Levi-Civita connection of the metric, with jets to `depth`.
pub fn levi_civita(s: &WeylStructure, point: &[f64], depth: usize) -> Result<Connection, TensorError> {
    let f = s.fields(point, depth + 1)?;
    Ok(Connection { dim: f.d, point: point.to_vec(), depth, gamma: christoffel(&f, false) })
}

/// Weyl connection `Γ^{LC} + K`, with jets to `depth`.
pub fn weyl_connection(s: &WeylStructure, point: &[f64], depth: usize) -> Result<Connection, TensorError> {
    let f = s.fields(point, depth + 1)?;
    Ok(Connection { dim: f.d, point: point.to_vec(), depth, gamma: christoffel(&f, true) })
}

/// Curvature of the Weyl connection.
pub fn curvature(s: &WeylStructure, point: &[f64]) -> Result<PointTensor, TensorError> {
    Ok(weyl_connection(s, point, 1)?.curvature())
}

/// `∇R` of the Weyl connection.
pub fn nabla_r(s: &WeylStructure, point: &[f64]) -> Result<PointTensor, TensorError> {
    Ok(weyl_connection(s, point, 2)?.nabla_curvature())
}

/// `max |∇g + 2ω⊗g|` relative to the size of the terms involved.
pub fn metric_compatibility(s: &WeylStructure, point: &[f64]) -> Result<f64, TensorError> {
    let f = s.fields(point, 1)?;
    let conn = Connection { dim: f.d, point: point.to_vec(), depth: 0, gamma: christoffel(&f, true) };
    let d = f.d;
    let g = |a: usize, b: usize| *f.g[a * d + b].value();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for c in 0..d {
        let w = *f.omega[c].value();
        for a in 0..d {
            for b in 0..d {
                let dg = f.g[a * d + b].partial(&unit(d, c));
                let mut v = dg + 2.0 * w * g(a, b);
                scale = scale.max(dg.abs()).max((w * g(a, b)).abs());
                for e in 0..d {
                    let t1 = conn.gamma(e, c, a) * g(e, b);
                    let t2 = conn.gamma(e, c, b) * g(a, e);
                    v -= t1 + t2;
                    scale = scale.max(t1.abs()).max(t2.abs());
                }
                worst = worst.max(v.abs());
            }
        }
    }
    Ok(if scale > 0.0 { worst / scale } else { worst })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceReport {
    pub recurrent: bool,
    pub theta: Vec<f64>,
    pub max_residual: f64,
    /// Least-squares fit of `θ = −w ω`; `None` when `ω` vanishes at the point.
    pub weight: Option<f64>,
    pub weight_residual: Option<f64>,
    pub closed_at_point: bool,
    pub curvature_norm: f64,
}

/// Fits `∇R = θ ⊗ R` at the point.
pub fn recurrence_theta(s: &WeylStructure, point: &[f64], tol: f64) -> Result<RecurrenceReport, TensorError> {
    let conn = weyl_connection(s, point, 2)?;
    let r = conn.curvature();
    let nr = conn.nabla_curvature();
    let omega: Vec<f64> = s.omega_at(point)?;
    recurrence_from(&r, &nr, &omega, tol)
}

pub(crate) fn recurrence_from(
    r: &PointTensor,
    nr: &PointTensor,
    omega: &[f64],
    tol: f64,
) -> Result<RecurrenceReport, TensorError> {
    let d = r.dim;
    let rr: f64 = r.data.iter().map(|x| x * x).sum();
    let rnorm = rr.sqrt();
    if rnorm <= 1e-12 {
        return Err(TensorError::NotApplicable);
    }
    let n = r.data.len();
    let mut theta = vec![0.0; d];
    let mut max_residual: f64 = 0.0;
    for (e, th) in theta.iter_mut().enumerate() {
        let slice: Vec<f64> = (0..n).map(|i| nr.data[i * d + e]).collect();
        let dot: f64 = slice.iter().zip(&r.data).map(|(x, y)| x * y).sum();
        *th = dot / rr;
        let res: f64 = slice.iter().zip(&r.data).map(|(x, y)| (x - *th * y).powi(2)).sum::<f64>().sqrt();
        let size: f64 = slice.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rel = if size > RELATIVE_FLOOR { res / size } else { res };
        max_residual = max_residual.max(rel);
    }
    let ww: f64 = omega.iter().map(|x| x * x).sum();
    let (weight, weight_residual, closed_at_point) = if ww.sqrt() > OMEGA_FLOOR {
        let w = -theta.iter().zip(omega).map(|(t, o)| t * o).sum::<f64>() / ww;
        let res = theta.iter().zip(omega).map(|(t, o)| (t + w * o).powi(2)).sum::<f64>().sqrt();
        let tn = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
        (Some(w), Some(if tn > 0.0 { res / tn } else { res }), false)
    } else {
        (None, None, true)
    };
    Ok(RecurrenceReport {
        recurrent: max_residual <= tol,
        theta,
        max_residual,
        weight,
        weight_residual,
        closed_at_point,
        curvature_norm: rnorm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolonomyReport {
    pub span_dim: usize,
    pub singular_values: Vec<f64>,
    /// A null vector that every `R(∂_a,∂_b)` maps into its own line, when one exists.
    pub null_direction: Option<Vec<f64>>,
}

/// Numerical rank of `{R(∂_a,∂_b) : a < b}` as `d²`-vectors.
pub fn holonomy_span_dim(s: &WeylStructure, point: &[f64], rank_tol: f64) -> Result<HolonomyReport, TensorError> {
    let r = curvature(s, point)?;
    let g = s.metric_at(point)?;
    Ok(holonomy_from(&r, &g, rank_tol))
}

pub(crate) fn holonomy_from(r: &PointTensor, g: &DMatrix<f64>, rank_tol: f64) -> HolonomyReport {
    let d = r.dim;
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|a| (a + 1..d).map(move |b| (a, b))).collect();
    let mut m = DMatrix::zeros(pairs.len(), d * d);
    let mut endos = Vec::with_capacity(pairs.len());
    for (row, &(a, b)) in pairs.iter().enumerate() {
        let e = r.endomorphism(a, b);
        for (k, v) in e.iter().enumerate() {
            m[(row, k)] = *v;
        }
        endos.push(e);
    }
    let mut sv: Vec<f64> = m.svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let top = sv.first().copied().unwrap_or(0.0);
    let span_dim = if top <= 1e-12 { 0 } else { sv.iter().filter(|s| **s > rank_tol * top).count() };
    HolonomyReport { span_dim, singular_values: sv, null_direction: common_null_eigenvector(&endos, g) }
}

fn common_null_eigenvector(endos: &[DMatrix<f64>], g: &DMatrix<f64>) -> Option<Vec<f64>> {
    let d = g.nrows();
    let mut combo = DMatrix::zeros(d, d);
    let scale = endos.iter().map(|e| e.amax()).fold(0.0, f64::max);
    if scale <= 1e-12 {
        return None;
    }
    // fixed irrational weights make accidental eigenvalue collisions unlikely
    for (k, e) in endos.iter().enumerate() {
        combo += e * (1.0 + (k as f64 * 0.618_033_988_75).fract());
    }
    let mut candidates = Vec::new();
    let Some(schur) = nalgebra::linalg::Schur::try_new(combo.clone(), f64::EPSILON, 2000) else {
        return None;
    };
    for ev in schur.complex_eigenvalues().iter() {
        if ev.im.abs() > 1e-8 * scale {
            continue;
        }
        let shifted = &combo - DMatrix::identity(d, d) * ev.re;
        let svd = shifted.svd(false, true);
        let vt = svd.v_t.expect("requested");
        let top = svd.singular_values.max().max(scale);
        for (i, s) in svd.singular_values.iter().enumerate() {
            if *s <= 1e-8 * top {
                candidates.push(vt.row(i).transpose());
            }
        }
    }
    candidates.into_iter().find_map(|v| {
        let v = &v / v.norm();
        let null = (v.transpose() * g * &v)[(0, 0)].abs() <= 1e-8 * g.amax();
        let invariant = endos.iter().all(|e| {
            let w = e * &v;
            let along = v.dot(&w);
            (&w - &v * along).norm() <= 1e-8 * scale
        });
        (null && invariant).then(|| {
            // fix the sign so the largest component is positive
            let k = v.iamax();
            let v = if v[k] < 0.0 { -v } else { v };
            v.iter().copied().collect()
        })
    })
}

/// Ricci contraction `Ric(∂_b, ∂_c) = R^a_{c a b}` of a curvature tensor.
pub fn ricci_from(r: &PointTensor) -> DMatrix<f64> {
    let d = r.dim;
    DMatrix::from_fn(d, d, |b, c| (0..d).map(|a| r.get(&[a, c, a, b])).sum())
}

/// Conformal Weyl tensor of the metric (all indices down, `C(∂_a,∂_b,∂_c,∂_w)`).
pub fn conformal_weyl_tensor(s: &WeylStructure, point: &[f64]) -> Result<PointTensor, TensorError> {
    let lc = s.metric_only();
    let r = levi_civita(&lc, point, 1)?.curvature();
    let g = s.metric_at(point)?;
    let ginv = g.clone().try_inverse().ok_or(TensorError::SingularMetric)?;
    let d = r.dim;
    let n = d as f64;
    let ric = ricci_from(&r);
    let scal: f64 = (0..d).flat_map(|b| (0..d).map(move |c| (b, c))).map(|(b, c)| ginv[(b, c)] * ric[(b, c)]).sum();
    let p = (&ric - &g * (scal / (2.0 * (n - 1.0)))) / (n - 2.0);
    let mut out = PointTensor::zeros(d, vec![Variance::Down; 4]);
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                for w in 0..d {
                    // Rm(a,b,c,w) = g(R(∂_a,∂_b)∂_c, ∂_w)
                    let rm: f64 = (0..d).map(|e| g[(w, e)] * r.get(&[e, c, a, b])).sum();
                    let kn = p[(a, w)] * g[(b, c)] + p[(b, c)] * g[(a, w)]
                        - p[(a, c)] * g[(b, w)]
                        - p[(b, w)] * g[(a, c)];
                    out.set(&[a, b, c, w], rm - kn);
                }
            }
        }
    }
    Ok(out)
}

/// Size of the Levi-Civita Riemann tensor (all indices down), used to normalize `‖C‖`.
pub fn riemann_norm(s: &WeylStructure, point: &[f64]) -> Result<f64, TensorError> {
    let r = levi_civita(&s.metric_only(), point, 1)?.curvature();
    let g = s.metric_at(point)?;
    let d = r.dim;
    let mut acc = 0.0;
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                for w in 0..d {
                    let rm: f64 = (0..d).map(|e| g[(w, e)] * r.get(&[e, c, a, b])).sum();
                    acc += rm * rm;
                }
            }
        }
    }
    Ok(acc.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LieReport {
    pub lambda: f64,
    pub metric_residual: f64,
    pub form_residual: f64,
    /// `max(1, ‖L_Y g‖)`, the scale the residuals are compared against.
    pub scale: f64,
}

impl LieReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.metric_residual <= tol * self.scale && self.form_residual <= tol * self.scale
    }
}

/// Checks `L_Y g = 2λg` and `L_Y ω = −dλ` at a point.
pub fn lie_derivative_check(s: &WeylStructure, field: &[Expr], point: &[f64]) -> Result<LieReport, TensorError> {
    let d = s.dim();
    if field.len() != d {
        return Err(TensorError::Structure(format!("vector field needs {d} components")));
    }
    let f = s.fields(point, 2)?;
    let env = s.chart.jet_env(point, 2);
    let y: Vec<J> = field.iter().map(|e| e.eval_jet(&env)).collect::<Result<_, _>>()?;
    let y1: Vec<J> = y.iter().map(|j| j.truncate(1)).collect();
    let g1: Vec<J> = f.g.iter().map(|j| j.truncate(1)).collect();
    let ginv1: Vec<J> = f.ginv.iter().map(|j| j.truncate(1)).collect();
    let dy: Vec<Vec<J>> = (0..d).map(|a| y.iter().map(|j| j.derivative(a).unwrap()).collect()).collect();
    let dg: Vec<Vec<J>> = (0..d).map(|c| f.g.iter().map(|j| j.derivative(c).unwrap()).collect()).collect();
    let mut lg = Vec::with_capacity(d * d);
    for a in 0..d {
        for b in 0..d {
            let mut s = g1[0].zero_like();
            for c in 0..d {
                s = &s + &(&y1[c] * &dg[c][a * d + b]);
                s = &s + &(&g1[c * d + b] * &dy[a][c]);
                s = &s + &(&g1[a * d + c] * &dy[b][c]);
            }
            lg.push(s);
        }
    }
    let mut lambda = g1[0].zero_like();
    for (gi, l) in ginv1.iter().zip(&lg) {
        lambda = &lambda + &(gi * l);
    }
    let lambda = lambda.scale(&(1.0 / (2.0 * d as f64)));
    let lam0 = *lambda.value();
    let metric_residual = lg
        .iter()
        .zip(&g1)
        .map(|(l, g)| (l.value() - 2.0 * lam0 * g.value()).powi(2))
        .sum::<f64>()
        .sqrt();
    let mut form_sq = 0.0;
    for a in 0..d {
        let mut v = lambda.partial(&unit(d, a));
        for c in 0..d {
            v += y[c].value() * f.omega[a].partial(&unit(d, c)) + f.omega[c].value() * dy[a][c].value();
        }
        form_sq += v * v;
    }
    let lnorm = lg.iter().map(|l| l.value().powi(2)).sum::<f64>().sqrt();
    Ok(LieReport { lambda: lam0, metric_residual, form_residual: form_sq.sqrt(), scale: lnorm.max(1.0) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::parse;
    use approx::assert_relative_eq;

    fn structure(names: &[&str], metric: &[&[&str]], omega: &[&str], constraints: &[&str]) -> WeylStructure {
        let chart = Chart::new(names, constraints.iter().map(|c| parse(c).unwrap()).collect()).unwrap();
        let metric = metric.iter().map(|r| r.iter().map(|e| parse(e).unwrap()).collect()).collect();
        let omega = omega.iter().map(|e| parse(e).unwrap()).collect();
        WeylStructure::new(chart, metric, omega).unwrap()
    }

    fn flat3() -> WeylStructure {
        structure(&["v", "x", "u"], &[&["0", "0", "1"], &["0", "1", "0"], &["1", "0", "0"]], &["0", "0", "0"], &[])
    }

    #[test]
    fn flat_metric_has_zero_connection_and_curvature() {
        let s = flat3();
        let p = [0.3, -0.2, 1.1];
        let c = levi_civita(&s, &p, 2).unwrap();
        assert!(c.values().max_abs() == 0.0);
        assert_eq!(curvature(&s, &p).unwrap().max_abs(), 0.0);
        assert_eq!(nabla_r(&s, &p).unwrap().max_abs(), 0.0);
        assert_eq!(holonomy_span_dim(&s, &p, DEFAULT_RANK_TOL).unwrap().span_dim, 0);
        assert_eq!(recurrence_theta(&s, &p, 1e-8).unwrap_err(), TensorError::NotApplicable);
    }

    #[test]
    fn polar_christoffels() {
        // -dz^2 + dr^2 + r^2 dφ^2 at r = 2
        let s = structure(
            &["z", "r", "phi"],
            &[&["-1", "0", "0"], &["0", "1", "0"], &["0", "0", "r^2"]],
            &["0", "0", "0"],
            &["r"],
        );
        let c = levi_civita(&s, &[0.0, 2.0, 0.5], 1).unwrap();
        assert_relative_eq!(c.gamma(1, 2, 2), -2.0, epsilon = 1e-14);
        assert_relative_eq!(c.gamma(2, 1, 2), 0.5, epsilon = 1e-14);
        assert_relative_eq!(c.gamma(2, 2, 1), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn three_d_case_one_symbols_and_curvature() {
        // F = x*u: Γ^x_xx = -∂_x F = -u, Γ^u_uu = 2Ḟ = 2x
        let s = structure(
            &["v", "x", "u"],
            &[&["0", "0", "1"], &["0", "exp(-2*x*u)", "0"], &["1", "0", "0"]],
            &["0", "0", "x"],
            &[],
        );
        let p = [0.4, 0.7, 1.3];
        let c = weyl_connection(&s, &p, 2).unwrap();
        assert_relative_eq!(c.gamma(1, 1, 1), -1.3, epsilon = 1e-13);
        assert_relative_eq!(c.gamma(2, 2, 2), 1.4, epsilon = 1e-13);
        for a in 0..3 {
            for b in 0..3 {
                for cc in 0..3 {
                    if (a, b, cc) != (1, 1, 1) && (a, b, cc) != (2, 2, 2) {
                        assert!(c.gamma(a, b, cc).abs() < 1e-13, "{a}{b}{cc}");
                    }
                }
            }
        }
        let r = c.curvature();
        // R(∂_x,∂_u) = ∂_xḞ diag(0,1,2), ∂_xḞ = 1
        let e = r.endomorphism(1, 2);
        let expect = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.0, 1.0, 2.0]));
        assert!((e - expect).amax() < 1e-12);
        assert!(r.endomorphism(0, 1).amax() < 1e-13);
        assert!(r.endomorphism(0, 2).amax() < 1e-13);
        let h = holonomy_span_dim(&s, &p, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(h.span_dim, 1);
        let nd = h.null_direction.unwrap();
        assert_relative_eq!(nd[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn metric_compatibility_holds() {
        let s = structure(
            &["v", "x", "u"],
            &[&["0", "0", "1"], &["0", "exp(-2*x*u)", "0"], &["1", "0", "x*v+u^2"]],
            &["sin(x)", "v*u", "x"],
            &[],
        );
        assert!(metric_compatibility(&s, &[0.2, 0.5, -0.4]).unwrap() < 1e-13);
    }

    #[test]
    fn domain_and_signature_errors() {
        let s = structure(&["t", "x", "y"], &[&["1", "0", "0"], &["0", "1", "0"], &["0", "0", "1"]], &["0", "0", "0"], &["t"]);
        assert!(matches!(curvature(&s, &[-1.0, 0.0, 0.0]), Err(TensorError::Domain(_))));
        assert!(matches!(curvature(&s, &[1.0, 0.0, 0.0]), Err(TensorError::Signature { negative: 0, positive: 3 })));
        assert!(Chart::new(&["x", "x", "y"], vec![]).is_err());
        assert!(Chart::new(&["x", "y"], vec![]).is_err());
    }

    #[test]
    fn schwarzschild_like_is_not_conformally_flat() {
        let s = structure(
            &["t", "r", "th", "ph"],
            &[
                &["-(1-2/r)", "0", "0", "0"],
                &["0", "1/(1-2/r)", "0", "0"],
                &["0", "0", "r^2", "0"],
                &["0", "0", "0", "r^2*sin(th)^2"],
            ],
            &["0", "0", "0", "0"],
            &["r-2", "th", "3-th"],
        );
        let c = conformal_weyl_tensor(&s, &[0.0, 3.0, 1.0, 0.2]).unwrap();
        assert!(c.norm() > 1e-3);
        // conformally flat control: e^{2f} times Minkowski
        let f = structure(
            &["t", "x", "y", "z"],
            &[
                &["-exp(t*x+y^2)", "0", "0", "0"],
                &["0", "exp(t*x+y^2)", "0", "0"],
                &["0", "0", "exp(t*x+y^2)", "0"],
                &["0", "0", "0", "exp(t*x+y^2)"],
            ],
            &["0", "0", "0", "0"],
            &[],
        );
        let c = conformal_weyl_tensor(&f, &[0.3, 0.2, -0.5, 1.0]).unwrap();
        assert!(c.norm() < 1e-12, "{}", c.norm());
    }

    #[test]
    fn rescaling_preserves_the_connection() {
        let s = structure(
            &["v", "x", "u"],
            &[&["0", "0", "1"], &["0", "exp(-2*x*u)", "0"], &["1", "0", "0"]],
            &["0", "0", "x"],
            &[],
        );
        let t = s.rescaled(&parse("x^2 - u/3 + v").unwrap());
        let p = [0.1, 0.3, 0.6];
        let a = weyl_connection(&s, &p, 1).unwrap();
        let b = weyl_connection(&t, &p, 1).unwrap();
        assert!((a.values().data.iter().zip(&b.values().data)).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn lie_derivative_of_killing_and_non_killing() {
        let s = flat3();
        let p = [0.3, 0.5, 0.7];
        let ok = lie_derivative_check(&s, &[parse("x").unwrap(), parse("-u").unwrap(), Expr::int(0)], &p).unwrap();
        assert!(ok.passes(1e-12));
        assert_eq!(ok.lambda, 0.0);
        let homothety = [parse("v").unwrap(), parse("x").unwrap(), parse("u").unwrap()];
        let h = lie_derivative_check(&s, &homothety, &p).unwrap();
        assert!(h.passes(1e-12));
        assert_relative_eq!(h.lambda, 1.0, epsilon = 1e-14);
        let bad = [parse("x^2").unwrap(), Expr::int(0), Expr::int(0)];
        assert!(!lie_derivative_check(&s, &bad, &p).unwrap().passes(1e-6));
    }
}
