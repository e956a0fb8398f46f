//! Symmetry kernels of the invariance ODEs, cohomogeneity classification and
//! Lie-bracket closure of polynomial vector fields.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exprlang::{parse, EvalError, Expr, JetEnv, ParseError};
use crate::invariants::{signature_curve, CurveSource};
use crate::sampling::{sample_interval, DEFAULT_SEED};
use crate::tensor::{lie_derivative_check, LieReport, TensorError, WeylStructure};

pub const KERNEL_TOL: f64 = 1e-9;
pub const PATTERN_TOL: f64 = 1e-7;
pub const DEFAULT_KERNEL_SAMPLES: usize = 16;
const CHECK_SAMPLES: usize = 50;

#[derive(Debug, Error)]
pub enum SymmetryError {
    #[error("need at least {need} sample points, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("evaluation failed at {param} = {value}: {source}")]
    Eval { param: &'static str, value: f64, source: EvalError },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("inconsistent evidence: {0}")]
    Inconsistent(String),
    #[error("not a polynomial vector field: {0}")]
    NotPolynomial(String),
    #[error("fields must have {want} components, found {got}")]
    FieldDim { got: usize, want: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Invariant(#[from] crate::invariants::InvariantError),
}

type Res<T> = Result<T, SymmetryError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryKernel {
    pub samples: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub dim: usize,
    /// Unit vectors, sign fixed so the largest component is positive.
    pub basis: Vec<Vec<f64>>,
    /// Singular values relative to the largest one, descending.
    pub singular_values: Vec<f64>,
    /// Smallest singular value above the kernel threshold.
    pub smallest_nonzero: f64,
}

fn unit_row(mut r: Vec<f64>) -> Vec<f64> {
    let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        r.iter_mut().for_each(|x| *x /= n);
    }
    r
}

fn normalize_sign(mut v: Vec<f64>) -> Vec<f64> {
    let big = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let s = if big < 0.0 { -1.0 / n } else { 1.0 / n };
    v.iter_mut().for_each(|x| {
        *x *= s;
        if x.abs() < 1e-15 {
            *x = 0.0;
        }
    });
    v
}

/// Null space of the row-normalized system.
fn kernel_of(samples: Vec<f64>, rows: Vec<Vec<f64>>) -> SymmetryKernel {
    let cols = rows[0].len();
    let scaled: Vec<Vec<f64>> = rows.iter().cloned().map(unit_row).collect();
    let m = DMatrix::from_fn(scaled.len(), cols, |i, j| scaled[i][j]);
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let mut pairs: Vec<(f64, Vec<f64>)> =
        (0..cols).map(|k| (svd.singular_values[k], vt.row(k).iter().copied().collect())).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let top = pairs[0].0.max(f64::MIN_POSITIVE);
    let singular_values: Vec<f64> = pairs.iter().map(|p| p.0 / top).collect();
    let cutoff = KERNEL_TOL;
    let dim = singular_values.iter().filter(|s| **s <= cutoff).count();
    let mut basis: Vec<Vec<f64>> = pairs[cols - dim..].iter().map(|p| p.1.clone()).collect();
    basis = reduce_basis(basis);
    let smallest_nonzero = singular_values.iter().copied().filter(|s| *s > cutoff).fold(f64::INFINITY, f64::min);
    SymmetryKernel { samples, rows, dim, basis, singular_values, smallest_nonzero }
}

/// Reduced row echelon form of the basis (rows), so that exact pattern vectors show up directly.
fn reduce_basis(basis: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    if basis.len() < 2 {
        return basis.into_iter().map(normalize_sign).collect();
    }
    let mut b = basis;
    let cols = b[0].len();
    let mut r = 0;
    for c in 0..cols {
        if r == b.len() {
            break;
        }
        let p = (r..b.len()).max_by(|i, j| b[*i][c].abs().total_cmp(&b[*j][c].abs())).unwrap();
        if b[p][c].abs() < 1e-8 {
            continue;
        }
        b.swap(r, p);
        let piv = b[r][c];
        b[r].iter_mut().for_each(|x| *x /= piv);
        for i in 0..b.len() {
            if i != r {
                let f = b[i][c];
                let row = b[r].clone();
                b[i].iter_mut().zip(&row).for_each(|(x, y)| *x -= f * y);
            }
        }
        r += 1;
    }
    b.into_iter().map(normalize_sign).collect()
}

fn eval_1d(e: &Expr, name: &'static str, at: f64, order: usize) -> Res<Vec<f64>> {
    let env = JetEnv::coordinates(&[name], &[at], order);
    e.eval_jet(&env)
        .map(|j| j.derivatives())
        .map_err(|source| SymmetryError::Eval { param: name, value: at, source })
}

fn psi_row(psi: &Expr, t: f64) -> Res<Vec<f64>> {
    let d = eval_1d(psi, "t", t, 1)?;
    let (p, dp) = (d[0], d[1]);
    Ok(vec![dp, 2.0 * t * dp, 1.0, -2.0 * p, p * p])
}

/// Unknowns `(a₁ … a₅)` of `(a₁ + 2ta₂)ψ′ + a₅ψ² − 2a₄ψ + a₃ = 0`.
pub fn psi_symmetry_kernel(psi: &Expr, ts: &[f64]) -> Res<SymmetryKernel> {
    if ts.len() < 8 {
        return Err(SymmetryError::TooFewSamples { got: ts.len(), need: 8 });
    }
    let rows = ts.iter().map(|t| psi_row(psi, *t)).collect::<Res<Vec<_>>>()?;
    Ok(kernel_of(ts.to_vec(), rows))
}

fn case2_rows(a: &Expr, c: &Expr, u: f64) -> Res<[Vec<f64>; 2]> {
    let da = eval_1d(a, "u", u, 1)?;
    let dc = eval_1d(c, "u", u, 1)?;
    let (a0, a1, c0, c1) = (da[0], da[1], dc[0], dc[1]);
    Ok([vec![a1, 0.0, u * a1 + a0, u * a1 + 2.0 * a0], vec![c1, a0, u * c1 + 2.0 * c0, u * c1 + c0]])
}

/// Unknowns `(A₁ … A₄)` of the two invariance equations for `(a, c)`.
pub fn kernel_3d2(a: &Expr, c: &Expr, us: &[f64]) -> Res<SymmetryKernel> {
    if us.len() < 4 {
        return Err(SymmetryError::TooFewSamples { got: us.len(), need: 4 });
    }
    let mut rows = Vec::with_capacity(2 * us.len());
    for u in us {
        rows.extend(case2_rows(a, c, *u)?);
    }
    Ok(kernel_of(us.to_vec(), rows))
}

/// Largest relative residual of `vector` against fresh rows.
fn max_relative_residual(rows: &[Vec<f64>], vector: &[f64]) -> f64 {
    rows.iter()
        .map(|r| {
            let s: f64 = r.iter().zip(vector).map(|(x, y)| x * y).sum();
            let scale: f64 = r.iter().zip(vector).map(|(x, y)| (x * y).abs()).sum::<f64>().max(f64::MIN_POSITIVE);
            s.abs() / scale
        })
        .fold(0.0, f64::max)
}

/// Residuals of each kernel vector of the ψ-system at 50 fresh points.
pub fn psi_kernel_residuals(psi: &Expr, kernel: &SymmetryKernel, interval: (f64, f64), seed: u64) -> Res<Vec<f64>> {
    let ts = sample_interval(interval.0, interval.1, CHECK_SAMPLES, seed ^ 0x5eed);
    let rows = ts.iter().map(|t| psi_row(psi, *t)).collect::<Res<Vec<_>>>()?;
    Ok(kernel.basis.iter().map(|v| max_relative_residual(&rows, v)).collect())
}

pub fn case2_kernel_residuals(
    a: &Expr,
    c: &Expr,
    kernel: &SymmetryKernel,
    interval: (f64, f64),
    seed: u64,
) -> Res<Vec<f64>> {
    let us = sample_interval(interval.0, interval.1, CHECK_SAMPLES, seed ^ 0x5eed);
    let mut rows = Vec::new();
    for u in us {
        rows.extend(case2_rows(a, c, u)?);
    }
    Ok(kernel.basis.iter().map(|v| max_relative_residual(&rows, v)).collect())
}

// ------------------------------------------------------------ classification

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ClassifyInput {
    Psi { psi: String, interval: (f64, f64) },
    Case2 { a: String, c: String, interval: (f64, f64) },
    Case1 { f: String, x_range: (f64, f64), u_range: (f64, f64) },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kind {
    Homogeneous,
    Exp,
    Tan,
    Log,
    TanLog,
    Power,
    Generic,
    /// `a ≡ 1, c ≡ 0`, two extra symmetries.
    EinsteinWeylModel,
    /// `a` constant, `c` linear.
    Case2Linear,
    /// `a = 1/u, c = C/u²`.
    Case2Inverse,
    /// `a = u^{−(A₃+2)/(A₃+1)}`, `c = C u^{−(2A₃+1)/(A₃+1)}`.
    Case2Power,
    Case2Generic,
    Case1Homogeneous,
    Case1CohomogeneityOne,
    Case1Generic,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Homogeneous => "Homogeneous",
            Kind::Exp => "Exp",
            Kind::Tan => "Tan",
            Kind::Log => "Log",
            Kind::TanLog => "TanLog",
            Kind::Power => "Power",
            Kind::Generic => "Generic",
            Kind::EinsteinWeylModel => "EinsteinWeylModel",
            Kind::Case2Linear => "Case2Linear",
            Kind::Case2Inverse => "Case2Inverse",
            Kind::Case2Power => "Case2Power",
            Kind::Case2Generic => "Case2Generic",
            Kind::Case1Homogeneous => "Case1Homogeneous",
            Kind::Case1CohomogeneityOne => "Case1CohomogeneityOne",
            Kind::Case1Generic => "Case1Generic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub kernel: Option<SymmetryKernel>,
    pub kernel_residuals: Vec<f64>,
    /// Relative spread of the invariant tuples over the sampled range.
    pub invariant_spread: Option<f64>,
    /// Fraction of samples on the singular stratum.
    pub singular_fraction: f64,
    /// Rank of the invariant map (3D case one only).
    pub invariant_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub cohomogeneity: usize,
    pub kind: Kind,
    /// Recovered parameters, e.g. `A` for the Log/TanLog/Power families.
    pub params: Vec<(String, f64)>,
    pub evidence: Evidence,
}

impl ClassificationResult {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Affine and `sl₂` types of a single ψ-kernel vector.
fn psi_pattern(k: &[f64]) -> (Kind, Option<f64>) {
    let (a2, a3, a4, a5) = (k[1], k[2], k[3], k[4]);
    let sl_norm = (a3 * a3 + a4 * a4 + a5 * a5).sqrt();
    let disc = a4 * a4 - a3 * a5;
    let dilation = a2.abs() > PATTERN_TOL;
    let sl_type = if disc.abs() <= PATTERN_TOL * sl_norm * sl_norm {
        0
    } else {
        disc.signum() as i8
    };
    match (dilation, sl_type) {
        (false, 1) => (Kind::Exp, None),
        (false, -1) => (Kind::Tan, None),
        (false, _) => (Kind::Homogeneous, None),
        (true, 1) => {
            let a = disc.sqrt() / a2.abs();
            if (a - 1.0).abs() <= 1e-6 {
                (Kind::Homogeneous, None)
            } else {
                (Kind::Power, Some(a))
            }
        }
        // the parabolic scale is not a conjugation invariant; it is read off the normal form
        (true, 0) => (Kind::Log, Some((-a3 / (2.0 * a2)).abs())),
        (true, _) => (Kind::TanLog, Some((-disc).sqrt() / (2.0 * a2.abs()))),
    }
}

fn classify_psi(psi: &str, interval: (f64, f64), seed: u64) -> Res<ClassificationResult> {
    let expr = parse(psi)?;
    let ts = sample_interval(interval.0, interval.1, DEFAULT_KERNEL_SAMPLES, seed);
    let kernel = psi_symmetry_kernel(&expr, &ts)?;
    let residuals = psi_kernel_residuals(&expr, &kernel, interval, seed)?;
    let curve = signature_curve(&CurveSource::Psi { psi: psi.into() }, &[interval], 32);
    let (spread, singular_fraction) = match &curve {
        Ok(c) => (Some(c.spread), c.singular_count as f64 / c.samples.len() as f64),
        Err(_) => (None, 1.0),
    };
    let evidence = Evidence {
        kernel: Some(kernel.clone()),
        kernel_residuals: residuals,
        invariant_spread: spread,
        singular_fraction,
        invariant_rank: None,
    };
    let degenerate = spread.is_none_or(|s| s < crate::invariants::DEGENERATE_TOL);
    let singular = singular_fraction == 1.0;
    if kernel.dim > 2 {
        return Err(SymmetryError::Inconsistent(format!("kernel dimension {} exceeds 2", kernel.dim)));
    }
    if (kernel.dim >= 1) != degenerate || (kernel.dim == 2) != singular {
        return Err(SymmetryError::Inconsistent(format!(
            "kernel dimension {} but invariant curve degenerate = {degenerate}, singular = {singular}",
            kernel.dim
        )));
    }
    let (kind, a) = match kernel.dim {
        2 => (Kind::Homogeneous, None),
        1 => psi_pattern(&kernel.basis[0]),
        _ => (Kind::Generic, None),
    };
    let cohomogeneity = if kind == Kind::Homogeneous { 0 } else { 2 - kernel.dim };
    Ok(ClassificationResult {
        cohomogeneity,
        kind,
        params: a.map(|a| vec![("A".to_string(), a)]).unwrap_or_default(),
        evidence,
    })
}

fn classify_case2(a: &str, c: &str, interval: (f64, f64), seed: u64) -> Res<ClassificationResult> {
    let (ae, ce) = (parse(a)?, parse(c)?);
    let us = sample_interval(interval.0, interval.1, DEFAULT_KERNEL_SAMPLES, seed);
    let kernel = kernel_3d2(&ae, &ce, &us)?;
    let residuals = case2_kernel_residuals(&ae, &ce, &kernel, interval, seed)?;
    let curve = signature_curve(&CurveSource::Case2 { a: a.into(), c: c.into() }, &[interval], 32);
    let (spread, singular_fraction) = match &curve {
        Ok(c) => (Some(c.spread), c.singular_count as f64 / c.samples.len() as f64),
        Err(_) => (None, 1.0),
    };
    let mut params = Vec::new();
    let kind = match kernel.dim {
        0 => Kind::Case2Generic,
        1 => {
            let k = &kernel.basis[0];
            let (a3, a4) = (k[2], k[3]);
            let small = |x: f64| x.abs() <= PATTERN_TOL;
            if small(a3) && small(a4) {
                if small(k[1]) {
                    Kind::EinsteinWeylModel
                } else {
                    params.push(("A2/A1".to_string(), k[1] / k[0]));
                    Kind::Case2Linear
                }
            } else if small(a4) {
                Kind::Case2Inverse
            } else {
                params.push(("A3".to_string(), a3 / a4));
                Kind::Case2Power
            }
        }
        _ => Kind::EinsteinWeylModel,
    };
    if let (Ok(curve), Kind::Case2Inverse) = (&curve, kind) {
        // I = −C on this family
        if let Some(v) = curve.points().first() {
            params.push(("C".to_string(), -v[0]));
        }
    }
    let degenerate = spread.is_none_or(|s| s < crate::invariants::DEGENERATE_TOL);
    if kernel.dim >= 1 && !degenerate {
        return Err(SymmetryError::Inconsistent(format!(
            "kernel dimension {} but the invariants vary along u",
            kernel.dim
        )));
    }
    // orbit dimension of ∂_v together with the kernel fields
    let cohomogeneity = 2 - kernel.dim.min(2);
    Ok(ClassificationResult {
        cohomogeneity,
        kind,
        params,
        evidence: Evidence {
            kernel: Some(kernel),
            kernel_residuals: residuals,
            invariant_spread: spread,
            singular_fraction,
            invariant_rank: None,
        },
    })
}

/// Numerical rank of the invariant map `(x, u) ↦ (I, J, ∇₁I, ∇₂I)`.
fn classify_case1(f: &str, xr: (f64, f64), ur: (f64, f64)) -> Res<ClassificationResult> {
    let fe = parse(f)?;
    let inv = |x: f64, u: f64| -> Option<Vec<f64>> {
        let jet = crate::invariants::f_jet(&fe, x, u, 5).ok()?;
        let v = crate::invariants::invariants_3d1(&jet).ok()?;
        let (n1, n2) = v.nabla?;
        Some(vec![v.i, v.j, n1, n2])
    };
    let n = 5;
    let mut rank = 0;
    let mut evaluated = 0;
    let mut values: Vec<Vec<f64>> = Vec::new();
    let h = 1e-4;
    for i in 0..n {
        for j in 0..n {
            let x = xr.0 + (xr.1 - xr.0) * (i as f64 + 0.5) / n as f64;
            let u = ur.0 + (ur.1 - ur.0) * (j as f64 + 0.5) / n as f64;
            let (Some(c), Some(xp), Some(xm), Some(up), Some(um)) =
                (inv(x, u), inv(x + h, u), inv(x - h, u), inv(x, u + h), inv(x, u - h))
            else {
                continue;
            };
            evaluated += 1;
            let scale = c.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let jac = DMatrix::from_fn(c.len(), 2, |r, k| {
                let (p, m) = if k == 0 { (&xp, &xm) } else { (&up, &um) };
                (p[r] - m[r]) / (2.0 * h) / scale
            });
            let sv = jac.singular_values();
            rank = rank.max(sv.iter().filter(|s| **s > 1e-5).count());
            values.push(c);
        }
    }
    if evaluated == 0 {
        return Err(SymmetryError::Inconsistent("no regular sample in the range".into()));
    }
    let pts: Vec<&Vec<f64>> = values.iter().collect();
    let spread = (0..4)
        .map(|k| {
            let lo = pts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
            (hi - lo) / lo.abs().max(hi.abs()).max(1.0)
        })
        .fold(0.0, f64::max);
    let kind = match rank {
        0 => Kind::Case1Homogeneous,
        1 => Kind::Case1CohomogeneityOne,
        _ => Kind::Case1Generic,
    };
    Ok(ClassificationResult {
        cohomogeneity: rank,
        kind,
        params: Vec::new(),
        evidence: Evidence {
            kernel: None,
            kernel_residuals: Vec::new(),
            invariant_spread: Some(spread),
            singular_fraction: 1.0 - evaluated as f64 / (n * n) as f64,
            invariant_rank: Some(rank),
        },
    })
}

pub fn classify(input: &ClassifyInput, seed: u64) -> Res<ClassificationResult> {
    match input {
        ClassifyInput::Psi { psi, interval } => classify_psi(psi, *interval, seed),
        ClassifyInput::Case2 { a, c, interval } => classify_case2(a, c, *interval, seed),
        ClassifyInput::Case1 { f, x_range, u_range } => classify_case1(f, *x_range, *u_range),
    }
}

pub fn classify_default(input: &ClassifyInput) -> Res<ClassificationResult> {
    classify(input, DEFAULT_SEED)
}

/// Lie-derivative residuals of `A(x)∂_x + B(u)∂_u + (C₀ + C₁v)∂_v` on a `(v, x, u)` chart.
pub fn case1_candidate_check(
    s: &WeylStructure,
    a: &Expr,
    b: &Expr,
    c0: f64,
    c1: f64,
    points: &[Vec<f64>],
) -> Res<Vec<LieReport>> {
    if s.dim() != 3 {
        return Err(SymmetryError::FieldDim { got: s.dim(), want: 3 });
    }
    if a.variables().iter().any(|v| v != "x") || b.variables().iter().any(|v| v != "u") {
        return Err(SymmetryError::Inconsistent("A may depend on x only and B on u only".into()));
    }
    let num = crate::catalog::number;
    let field = vec![num(c0) + num(c1) * Expr::var("v"), a.clone(), b.clone()];
    Ok(points.iter().map(|p| lie_derivative_check(s, &field, p)).collect::<Result<_, _>>()?)
}

// ------------------------------------------------------------ bracket closure

pub mod poly {
    //! Sparse multivariate polynomials with rational coefficients.

    use std::collections::BTreeMap;

    use num_rational::BigRational;
    use num_traits::{One, Signed, ToPrimitive, Zero};

    use crate::exprlang::{BinOp, Expr, ExprKind};

    #[derive(Debug, Clone, PartialEq, Default)]
    pub struct Poly {
        pub terms: BTreeMap<Vec<u32>, BigRational>,
    }

    impl Poly {
        pub fn zero() -> Self {
            Poly::default()
        }

        pub fn constant(nvars: usize, c: BigRational) -> Self {
            let mut p = Poly::zero();
            if !c.is_zero() {
                p.terms.insert(vec![0; nvars], c);
            }
            p
        }

        pub fn var(nvars: usize, i: usize) -> Self {
            let mut e = vec![0; nvars];
            e[i] = 1;
            let mut p = Poly::zero();
            p.terms.insert(e, BigRational::one());
            p
        }

        pub fn is_zero(&self) -> bool {
            self.terms.is_empty()
        }

        fn insert(&mut self, e: Vec<u32>, c: BigRational) {
            let entry = self.terms.entry(e.clone()).or_insert_with(BigRational::zero);
            *entry += c;
            if entry.is_zero() {
                self.terms.remove(&e);
            }
        }

        pub fn add(&self, o: &Poly) -> Poly {
            let mut r = self.clone();
            for (e, c) in &o.terms {
                r.insert(e.clone(), c.clone());
            }
            r
        }

        pub fn scale(&self, k: &BigRational) -> Poly {
            let mut r = Poly::zero();
            if k.is_zero() {
                return r;
            }
            for (e, c) in &self.terms {
                r.terms.insert(e.clone(), c * k);
            }
            r
        }

        pub fn sub(&self, o: &Poly) -> Poly {
            self.add(&o.scale(&-BigRational::one()))
        }

        pub fn mul(&self, o: &Poly) -> Poly {
            let mut r = Poly::zero();
            for (e1, c1) in &self.terms {
                for (e2, c2) in &o.terms {
                    let e: Vec<u32> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                    r.insert(e, c1 * c2);
                }
            }
            r
        }

        pub fn diff(&self, i: usize) -> Poly {
            let mut r = Poly::zero();
            for (e, c) in &self.terms {
                if e[i] > 0 {
                    let mut e2 = e.clone();
                    e2[i] -= 1;
                    r.insert(e2, c * BigRational::from_integer(e[i].into()));
                }
            }
            r
        }

        fn as_constant(&self) -> Option<BigRational> {
            match self.terms.len() {
                0 => Some(BigRational::zero()),
                1 => {
                    let (e, c) = self.terms.iter().next().unwrap();
                    e.iter().all(|k| *k == 0).then(|| c.clone())
                }
                _ => None,
            }
        }

        /// Polynomial form of `e` in `vars`; `None` for non-polynomial or inexact input.
        pub fn from_expr(e: &Expr, vars: &[&str]) -> Option<Poly> {
            let n = vars.len();
            match &e.kind {
                ExprKind::Const(l) => Some(Poly::constant(n, l.exact.clone()?)),
                ExprKind::Var(v) => Some(Poly::var(n, vars.iter().position(|x| x == v)?)),
                ExprKind::Neg(a) => Some(Poly::from_expr(a, vars)?.scale(&-BigRational::one())),
                ExprKind::Binary(op, a, b) => {
                    let pa = Poly::from_expr(a, vars)?;
                    match op {
                        BinOp::Add => Some(pa.add(&Poly::from_expr(b, vars)?)),
                        BinOp::Sub => Some(pa.sub(&Poly::from_expr(b, vars)?)),
                        BinOp::Mul => Some(pa.mul(&Poly::from_expr(b, vars)?)),
                        BinOp::Div => {
                            let d = Poly::from_expr(b, vars)?.as_constant()?;
                            if d.is_zero() {
                                return None;
                            }
                            Some(pa.scale(&d.recip()))
                        }
                        BinOp::Pow => {
                            let k = Poly::from_expr(b, vars)?.as_constant()?;
                            if !k.is_integer() || k.is_negative() {
                                return None;
                            }
                            let k = k.to_integer().to_u32()?;
                            let mut r = Poly::constant(n, BigRational::one());
                            for _ in 0..k {
                                r = r.mul(&pa);
                            }
                            Some(r)
                        }
                    }
                }
                ExprKind::Call(..) => None,
            }
        }

        pub fn to_f64_terms(&self) -> Vec<(Vec<u32>, f64)> {
            self.terms.iter().map(|(e, c)| (e.clone(), c.to_f64().unwrap_or(f64::NAN))).collect()
        }
    }
}

use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use poly::Poly;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub i: usize,
    pub j: usize,
    /// `[X_i, X_j] = Σ_k c_k X_k`; `None` when the bracket leaves the span.
    pub coefficients: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketReport {
    pub closed: bool,
    /// Every pair `i < j`.
    pub brackets: Vec<Bracket>,
}

impl BracketReport {
    /// Coefficients of `[X_i, X_j]`, for either order of the pair.
    pub fn constants(&self, i: usize, j: usize) -> Option<Vec<f64>> {
        let (a, b, sign) = if i < j { (i, j, 1.0) } else { (j, i, -1.0) };
        let br = self.brackets.iter().find(|b2| b2.i == a && b2.j == b)?;
        br.coefficients.as_ref().map(|c| c.iter().map(|x| sign * x).collect())
    }
}

fn lie_bracket(x: &[Poly], y: &[Poly]) -> Vec<Poly> {
    let d = x.len();
    (0..d)
        .map(|i| {
            let mut acc = Poly::zero();
            for j in 0..d {
                acc = acc.add(&x[j].mul(&y[i].diff(j))).sub(&y[j].mul(&x[i].diff(j)));
            }
            acc
        })
        .collect()
}

fn flatten(f: &[Poly]) -> HashMap<(usize, Vec<u32>), BigRational> {
    let mut m = HashMap::new();
    for (i, p) in f.iter().enumerate() {
        for (e, c) in &p.terms {
            m.insert((i, e.clone()), c.clone());
        }
    }
    m
}

/// Exact solve of `Σ c_k F_k = B` by Gauss-Jordan elimination.
fn express(fields: &[HashMap<(usize, Vec<u32>), BigRational>], target: &HashMap<(usize, Vec<u32>), BigRational>) -> Option<Vec<BigRational>> {
    let mut keys: Vec<&(usize, Vec<u32>)> = fields.iter().flat_map(|f| f.keys()).chain(target.keys()).collect();
    keys.sort();
    keys.dedup();
    let m = fields.len();
    let mut rows: Vec<Vec<BigRational>> = keys
        .iter()
        .map(|k| {
            let mut r: Vec<BigRational> =
                fields.iter().map(|f| f.get(*k).cloned().unwrap_or_else(BigRational::zero)).collect();
            r.push(target.get(*k).cloned().unwrap_or_else(BigRational::zero));
            r
        })
        .collect();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..m {
        let Some(p) = (r..rows.len()).find(|i| !rows[*i][c].is_zero()) else { continue };
        rows.swap(r, p);
        let piv = rows[r][c].clone();
        for x in rows[r].iter_mut() {
            *x = &*x / &piv;
        }
        for i in 0..rows.len() {
            if i != r && !rows[i][c].is_zero() {
                let f = rows[i][c].clone();
                let pr = rows[r].clone();
                for (x, y) in rows[i].iter_mut().zip(&pr) {
                    *x = &*x - &(&f * y);
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    if rows[r..].iter().any(|row| !row[m].is_zero()) {
        return None;
    }
    let mut sol = vec![BigRational::zero(); m];
    for (i, c) in pivots.iter().enumerate() {
        sol[*c] = rows[i][m].clone();
    }
    Some(sol)
}

/// Pairwise brackets of polynomial fields over `vars`, expressed in their span.
pub fn bracket_closure(fields: &[Vec<Expr>], vars: &[&str]) -> Res<BracketReport> {
    let polys: Vec<Vec<Poly>> = fields
        .iter()
        .map(|f| {
            if f.len() != vars.len() {
                return Err(SymmetryError::FieldDim { got: f.len(), want: vars.len() });
            }
            f.iter()
                .map(|c| Poly::from_expr(c, vars).ok_or_else(|| SymmetryError::NotPolynomial(c.to_string())))
                .collect()
        })
        .collect::<Res<_>>()?;
    let flat: Vec<_> = polys.iter().map(|p| flatten(p)).collect();
    let mut brackets = Vec::new();
    let mut closed = true;
    for i in 0..polys.len() {
        for j in i + 1..polys.len() {
            let b = lie_bracket(&polys[i], &polys[j]);
            let coefficients = if b.iter().all(Poly::is_zero) {
                Some(vec![0.0; polys.len()])
            } else {
                express(&flat, &flatten(&b)).map(|s| s.iter().map(|c| c.to_f64().unwrap_or(f64::NAN)).collect())
            };
            closed &= coefficients.is_some();
            brackets.push(Bracket { i, j, coefficients });
        }
    }
    Ok(BracketReport { closed, brackets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    fn ts(lo: f64, hi: f64) -> Vec<f64> {
        sample_interval(lo, hi, DEFAULT_KERNEL_SAMPLES, 3)
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        a.iter().zip(b).all(|(x, y)| (x - y / nb).abs() < 1e-7)
    }

    #[test]
    fn psi_kernels() {
        let k = psi_symmetry_kernel(&parse("t").unwrap(), &ts(0.5, 2.0)).unwrap();
        assert_eq!(k.dim, 2);
        // reduced basis: (1,0,−1,0,0) and (0,1,0,1,0)
        assert!(close(&k.basis[0], &[1.0, 0.0, -1.0, 0.0, 0.0]), "{:?}", k.basis);
        assert!(close(&k.basis[1], &[0.0, 1.0, 0.0, 1.0, 0.0]), "{:?}", k.basis);
        let k = psi_symmetry_kernel(&parse("exp(t)").unwrap(), &ts(-1.0, 1.0)).unwrap();
        assert_eq!(k.dim, 1);
        assert!(close(&k.basis[0], &[2.0, 0.0, 0.0, 1.0, 0.0]));
        let k = psi_symmetry_kernel(&parse("t^3 + t").unwrap(), &ts(0.5, 2.0)).unwrap();
        assert_eq!(k.dim, 0);
        assert!(k.smallest_nonzero > KERNEL_TOL);
    }

    #[test]
    fn case2_kernels() {
        let one = parse("1").unwrap();
        let k = kernel_3d2(&one, &parse("0").unwrap(), &ts(0.5, 1.5)).unwrap();
        assert_eq!(k.dim, 2);
        let k = kernel_3d2(&parse("1/u").unwrap(), &parse("3/u^2").unwrap(), &ts(0.5, 1.5)).unwrap();
        assert_eq!(k.dim, 1);
        assert!(close(&k.basis[0], &[0.0, 0.0, 1.0, 0.0]));
        let k = kernel_3d2(&parse("exp(u)").unwrap(), &parse("u").unwrap(), &ts(0.5, 1.5)).unwrap();
        assert_eq!(k.dim, 0);
    }

    #[test]
    fn classify_psi_examples() {
        let c = |s: &str, lo, hi| classify_default(&ClassifyInput::Psi { psi: s.into(), interval: (lo, hi) }).unwrap();
        let r = c("t^2", 0.5, 2.0);
        assert_eq!((r.cohomogeneity, r.kind), (1, Kind::Power));
        assert!((r.param("A").unwrap() - 2.0).abs() < 1e-6);
        let r = c("3*ln(t)", 0.5, 2.0);
        assert_eq!(r.kind, Kind::Log);
        assert!((r.param("A").unwrap() - 3.0).abs() < 1e-6);
        let r = c("tan(0.7*ln(t))", 0.5, 2.0);
        assert_eq!(r.kind, Kind::TanLog);
        assert!((r.param("A").unwrap() - 0.7).abs() < 1e-6);
        assert_eq!(c("t", 0.5, 2.0).cohomogeneity, 0);
        assert_eq!(c("exp(t)", -1.0, 1.0).kind, Kind::Exp);
        assert_eq!(c("tan(t)", -1.0, 1.0).kind, Kind::Tan);
        let r = c("t^3 + t", 0.5, 2.0);
        assert_eq!((r.cohomogeneity, r.kind), (2, Kind::Generic));
    }

    #[test]
    fn classify_3d() {
        let r = classify_default(&ClassifyInput::Case2 { a: "1/u".into(), c: "2/u^2".into(), interval: (0.5, 1.5) })
            .unwrap();
        assert_eq!(r.kind, Kind::Case2Inverse);
        assert!((r.param("C").unwrap() - 2.0).abs() < 1e-9);
        let r = classify_default(&ClassifyInput::Case2 { a: "1".into(), c: "0".into(), interval: (0.5, 1.5) }).unwrap();
        assert_eq!(r.kind, Kind::EinsteinWeylModel);
        let r = classify_default(&ClassifyInput::Case1 {
            f: "ln(u - x)/2".into(),
            x_range: (-1.0, 0.0),
            u_range: (0.5, 1.5),
        })
        .unwrap();
        assert_eq!(r.cohomogeneity, 0);
        let r = classify_default(&ClassifyInput::Case1 {
            f: "x*u + x^3*u^2".into(),
            x_range: (0.5, 1.5),
            u_range: (0.5, 1.5),
        })
        .unwrap();
        assert_eq!(r.cohomogeneity, 2);
    }

    #[test]
    fn d_v_is_a_case1_symmetry() {
        let e = catalog::make_3d_case1(&parse("x*u + sin(x)*u^2").unwrap()).unwrap();
        let pts = e.sample_points(5, 1).unwrap();
        let reports = case1_candidate_check(&e.structure, &parse("0").unwrap(), &parse("0").unwrap(), 1.0, 0.0, &pts)
            .unwrap();
        assert!(reports.iter().all(|r| r.passes(1e-12) && r.lambda.abs() < 1e-12));
        let reports = case1_candidate_check(&e.structure, &parse("1").unwrap(), &parse("0").unwrap(), 0.0, 0.0, &pts)
            .unwrap();
        assert!(reports.iter().any(|r| !r.passes(1e-6)));
    }

    #[test]
    fn brackets() {
        let names = catalog::psi_chart_names(3);
        let vars: Vec<&str> = names.iter().map(String::as_str).collect();
        let killing: Vec<Vec<Expr>> = catalog::killing_fields(3).into_iter().map(|f| f.components).collect();
        let r = bracket_closure(&killing, &vars).unwrap();
        assert!(r.closed);
        let model: Vec<Vec<Expr>> = catalog::homogeneous_model_fields(3).into_iter().map(|f| f.components).collect();
        let r = bracket_closure(&model, &vars).unwrap();
        assert!(r.closed);
        let (x, y) = (model.len() - 2, model.len() - 1);
        let c = r.constants(x, y).unwrap();
        // [X, Y] = X
        assert!((c[x] - 1.0).abs() < 1e-15 && c.iter().enumerate().all(|(k, v)| k == x || *v == 0.0));
        let t = |s: &str| vec![parse(s).unwrap()];
        let r = bracket_closure(&[t("1"), t("t"), t("t^2"), t("t^3")], &["t"]).unwrap();
        assert!(!r.closed);
        assert!(r.constants(0, 1).is_some());
        assert!(r.constants(2, 3).is_none());
    }
}
