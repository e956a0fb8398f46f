//! Explicit local models and their symmetry fields.
//!
//! Chart orders:
//!
//! * dimension `n + 2 ≥ 4` (ψ family and the homogeneous model): `(t, v, x1 … x{n-1}, u)`
//! * Riccati form: `(v, x1 … xn, u)`; user expressions use `x` for `xn`
//! * three dimensions: `(v, x, u)`

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exprlang::{parse, Expr, ParseError};
use crate::sampling::{sample_interval, sample_points, SamplingBox, SamplingError, DEFAULT_SEED};
use crate::tensor::{Chart, TensorError, WeylStructure};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CatalogError {
    #[error("parameter '{name}': {source}")]
    Parse { name: String, source: ParseError },
    #[error("missing parameter '{0}'")]
    Missing(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("unknown catalog entry '{0}'")]
    UnknownEntry(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FamilyTag {
    DimGe4,
    RiccatiForm,
    ThreeDCaseOne,
    ThreeDCaseTwo,
    HomogeneousModel,
    EinsteinWeylModel,
}

impl FamilyTag {
    pub fn name(self) -> &'static str {
        match self {
            FamilyTag::DimGe4 => "DimGe4",
            FamilyTag::RiccatiForm => "RiccatiForm",
            FamilyTag::ThreeDCaseOne => "ThreeDCaseOne",
            FamilyTag::ThreeDCaseTwo => "ThreeDCaseTwo",
            FamilyTag::HomogeneousModel => "HomogeneousModel",
            FamilyTag::EinsteinWeylModel => "EinsteinWeylModel",
        }
    }
}

/// Serializable description from which a catalog entry is rebuilt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub family: FamilyTag,
    /// Dimension is `n + 2`.
    pub n: usize,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    #[serde(default = "default_branch")]
    pub branch: i8,
    /// Extra domain constraints `expr > 0` in chart variables.
    #[serde(default)]
    pub constraints: Vec<String>,
    /// Sampling ranges by coordinate name; `x` also addresses the distinguished `xn`.
    #[serde(default)]
    pub ranges: BTreeMap<String, (f64, f64)>,
}

fn default_branch() -> i8 {
    1
}

impl FamilySpec {
    pub fn new(family: FamilyTag, n: usize) -> Self {
        FamilySpec { family, n, params: BTreeMap::new(), branch: 1, constraints: vec![], ranges: BTreeMap::new() }
    }

    pub fn param(mut self, key: &str, value: &str) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }

    pub fn constraint(mut self, c: &str) -> Self {
        self.constraints.push(c.into());
        self
    }

    pub fn range(mut self, coord: &str, lo: f64, hi: f64) -> Self {
        self.ranges.insert(coord.into(), (lo, hi));
        self
    }

    pub fn branch(mut self, b: i8) -> Self {
        self.branch = b;
        self
    }

    /// Parsed value of a parameter.
    pub fn expr(&self, key: &str) -> Result<Expr, CatalogError> {
        let src = self.params.get(key).ok_or_else(|| CatalogError::Missing(key.into()))?;
        parse(src).map_err(|source| CatalogError::Parse { name: key.into(), source })
    }

    fn extra_constraints(&self) -> Result<Vec<Expr>, CatalogError> {
        self.constraints
            .iter()
            .map(|c| parse(c).map_err(|source| CatalogError::Parse { name: "constraint".into(), source }))
            .collect()
    }
}

/// A vector field with the factor it is expected to have on the entry's `structure` (`L_Y g = 2λg`).
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryField {
    pub name: String,
    pub components: Vec<Expr>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expected {
    pub holonomy_dim: usize,
    pub recurrent: bool,
    pub einstein_weyl: bool,
    /// Weight `w` with `θ = −w ω_h` for the preferred representative.
    pub weight: Option<f64>,
    pub conformally_flat: Option<bool>,
    pub symmetry_count: usize,
}

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub name: String,
    pub spec: FamilySpec,
    pub structure: WeylStructure,
    /// Representative `h` of the conformal class in which `θ = −w ω_h`.
    pub preferred: WeylStructure,
    pub sampling: SamplingBox,
    pub expected: Expected,
    pub fields: Vec<SymmetryField>,
}

impl CatalogEntry {
    pub fn family(&self) -> FamilyTag {
        self.spec.family
    }

    pub fn dim(&self) -> usize {
        self.structure.dim()
    }

    pub fn sample_points(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>, SamplingError> {
        sample_points(&self.structure.chart, &self.sampling, count, seed)
    }

    fn with_fields(mut self, name: &str, fields: Vec<SymmetryField>) -> Self {
        self.name = name.to_string();
        self.expected.symmetry_count += fields.len();
        self.fields.extend(fields);
        self
    }
}

fn var(s: &str) -> Expr {
    Expr::var(s)
}

fn int(n: i64) -> Expr {
    Expr::int(n)
}

/// Integer literal when `x` is integral, float otherwise.
pub fn number(x: f64) -> Expr {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        Expr::int(x as i64)
    } else {
        Expr::float(x)
    }
}

fn fixed(src: &str) -> Expr {
    parse(src).expect("built-in expression parses")
}

fn x_names(count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("x{i}")).collect()
}

/// `(t, v, x1 … x{n-1}, u)`.
pub fn psi_chart_names(n: usize) -> Vec<String> {
    let mut names = vec!["t".to_string(), "v".to_string()];
    names.extend(x_names(n - 1));
    names.push("u".into());
    names
}

fn chart(names: &[String], constraints: Vec<Expr>) -> Result<Chart, TensorError> {
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Chart::new(&refs, constraints)
}

fn zero_matrix(d: usize) -> Vec<Vec<Expr>> {
    vec![vec![int(0); d]; d]
}

fn resolve_ranges(names: &[String], defaults: Vec<(f64, f64)>, spec: &FamilySpec, alias_x: Option<&str>) -> SamplingBox {
    let ranges = names
        .iter()
        .zip(defaults)
        .map(|(name, def)| {
            let key = if Some(name.as_str()) == alias_x && !spec.ranges.contains_key(name) { "x" } else { name };
            spec.ranges.get(key).copied().unwrap_or(def)
        })
        .collect();
    SamplingBox::new(ranges)
}

/// Builds the structure described by `spec`.
pub fn build(spec: &FamilySpec) -> Result<CatalogEntry, CatalogError> {
    match spec.family {
        FamilyTag::DimGe4 => build_dim_ge4(spec),
        FamilyTag::RiccatiForm => build_riccati(spec),
        FamilyTag::ThreeDCaseOne => build_3d_case1(spec),
        FamilyTag::ThreeDCaseTwo | FamilyTag::EinsteinWeylModel => build_3d_case2(spec),
        FamilyTag::HomogeneousModel => build_homogeneous(spec),
    }
}

/// `h = dt² + ψ′/(u+ψ)² (2dv du + Σ dx²)`, `ω_h = (ψ′/(u+ψ) − ψ″/(2ψ′)) dt`.
pub fn make_dim_ge4(psi: &Expr, n: usize, branch: i8) -> Result<CatalogEntry, CatalogError> {
    build_dim_ge4(&FamilySpec::new(FamilyTag::DimGe4, n).param("psi", &psi.to_string()).branch(branch))
}

fn build_dim_ge4(spec: &FamilySpec) -> Result<CatalogEntry, CatalogError> {
    let n = spec.n;
    if n < 2 {
        return Err(CatalogError::Precondition(format!("n = {n} < 2")));
    }
    if spec.branch != 1 && spec.branch != -1 {
        return Err(CatalogError::Precondition("branch must be +1 or -1".into()));
    }
    let psi = spec.expr("psi")?;
    if let Some(v) = psi.variables().into_iter().find(|v| v != "t") {
        return Err(CatalogError::Precondition(format!("psi may only depend on t, found '{v}'")));
    }
    let d1 = psi.diff("t");
    let d2 = d1.diff("t");
    let (t_lo, t_hi) = spec.ranges.get("t").copied().unwrap_or((-1.0, 1.0));
    let mut psi_min = f64::INFINITY;
    let mut psi_max = f64::NEG_INFINITY;
    for t in sample_interval(t_lo, t_hi, 16, DEFAULT_SEED).into_iter().chain([t_lo, t_hi]) {
        let env = [("t", t)].into_iter().collect();
        let slope = d1.eval_f64(&env).map_err(|e| CatalogError::Precondition(format!("psi' at t={t}: {e}")))?;
        if !(slope > 0.0) {
            return Err(CatalogError::Precondition(format!("psi'(t) = {slope} <= 0 at t = {t}")));
        }
        let value = psi.eval_f64(&env).map_err(|e| CatalogError::Precondition(format!("psi at t={t}: {e}")))?;
        psi_min = psi_min.min(value);
        psi_max = psi_max.max(value);
    }
    let names = psi_chart_names(n);
    let d = n + 2;
    let u = var("u");
    let upsi = u.clone() + psi.clone();
    let mut constraints = vec![d1.clone(), number(spec.branch as f64) * upsi.clone()];
    constraints.extend(spec.extra_constraints()?);
    let chart = chart(&names, constraints)?;
    let conf = d1.clone() / upsi.clone().powi(2);
    let mut g = zero_matrix(d);
    g[0][0] = int(1);
    g[1][d - 1] = conf.clone();
    g[d - 1][1] = conf.clone();
    for (i, row) in g.iter_mut().enumerate().take(d - 1).skip(2) {
        row[i] = conf.clone();
    }
    let mut omega = vec![int(0); d];
    omega[0] = d1.clone() / upsi - d2 / (int(2) * d1);
    let structure = WeylStructure::new(chart, g, omega)?;
    let u_range = if spec.branch > 0 { (-psi_min + 0.5, -psi_min + 2.0) } else { (-psi_max - 2.0, -psi_max - 0.5) };
    let mut defaults = vec![(t_lo, t_hi), (-1.0, 1.0)];
    defaults.extend(std::iter::repeat_n((-1.0, 1.0), n - 1));
    defaults.push(u_range);
    let sampling = resolve_ranges(&names, defaults, spec, None);
    let fields = killing_fields(n);
    Ok(CatalogEntry {
        name: format!("dim{d}-custom"),
        spec: spec.clone(),
        preferred: structure.clone(),
        structure,
        sampling,
        expected: Expected {
            holonomy_dim: n,
            recurrent: true,
            einstein_weyl: false,
            weight: Some(3.0),
            conformally_flat: Some(true),
            symmetry_count: fields.len(),
        },
        fields,
    })
}

/// `g = 2dv du + Σ_{i<n}(dxⁱ)² + e^{−2F}(dxⁿ)² + a(u)Σ_{i<n}(xⁱ)²(du)²`, `ω = Ḟ du`.
pub fn make_riccati_form(f: &Expr, a: &Expr, n: usize) -> Result<CatalogEntry, CatalogError> {
    build_riccati(&FamilySpec::new(FamilyTag::RiccatiForm, n).param("F", &f.to_string()).param("a", &a.to_string()))
}

/// `F̈ − Ḟ² + a(u)`, with dots denoting `∂_u`; `F` in variables `x, u`.
pub fn riccati_residual(f: &Expr, a: &Expr, x: f64, u: f64) -> Result<f64, crate::exprlang::EvalError> {
    let fu = f.diff("u");
    let fuu = fu.diff("u");
    let env = [("x", x), ("u", u)].into_iter().collect();
    Ok(fuu.eval_f64(&env)? - fu.eval_f64(&env)?.powi(2) + a.eval_f64(&env)?)
}

fn check_nonvanishing(
    what: &str,
    e: &Expr,
    chart: &Chart,
    sampling: &SamplingBox,
) -> Result<(), CatalogError> {
    let pts = sample_points(chart, sampling, 20, DEFAULT_SEED)?;
    for p in pts {
        let v = e.eval_f64(&chart.env_f64(&p)).map_err(|err| CatalogError::Precondition(format!("{what}: {err}")))?;
        if !(v.abs() > 1e-12) {
            return Err(CatalogError::Precondition(format!("{what} vanishes at {p:?}")));
        }
    }
    Ok(())
}

fn build_riccati(spec: &FamilySpec) -> Result<CatalogEntry, CatalogError> {
    let n = spec.n;
    if n < 2 {
        return Err(CatalogError::Precondition(format!("n = {n} < 2")));
    }
    let xn = format!("x{n}");
    let rename = |e: Expr| e.substitute("x", &var(&xn));
    let f = rename(spec.expr("F")?);
    let a = rename(spec.expr("a")?);
    if a.depends_on("v") || a.variables().iter().any(|v| v != "u") {
        return Err(CatalogError::Precondition("a may only depend on u".into()));
    }
    if f.variables().iter().any(|v| v != "u" && *v != xn) {
        return Err(CatalogError::Precondition("F may only depend on x and u".into()));
    }
    let mut names = vec!["v".to_string()];
    names.extend(x_names(n));
    names.push("u".into());
    let d = n + 2;
    let constraints = spec.extra_constraints()?.into_iter().map(rename).collect();
    let chart = chart(&names, constraints)?;
    let fdot = f.diff("u");
    let key = fdot.diff(&xn);
    let mut defaults = vec![(-1.0, 1.0); d];
    defaults[n] = (0.5, 1.5);
    defaults[d - 1] = (0.5, 1.5);
    let sampling = resolve_ranges(&names, defaults, spec, Some(&xn));
    check_nonvanishing("∂_x Ḟ", &key, &chart, &sampling)?;
    let mut g = zero_matrix(d);
    g[0][d - 1] = int(1);
    g[d - 1][0] = int(1);
    for (i, row) in g.iter_mut().enumerate().take(n).skip(1) {
        row[i] = int(1);
    }
    g[n][n] = (int(-2) * f.clone()).exp();
    let mut quad = int(0);
    for x in &names[1..n] {
        quad = quad + var(x).powi(2);
    }
    g[d - 1][d - 1] = a * quad;
    let mut omega = vec![int(0); d];
    omega[d - 1] = fdot;
    let structure = WeylStructure::new(chart, g, omega)?;
    let phi = f + Expr::call(crate::exprlang::Func::Abs, key).ln();
    let preferred = structure.rescaled(&(phi / int(3)));
    Ok(CatalogEntry {
        name: format!("riccati{d}-custom"),
        spec: spec.clone(),
        structure,
        preferred,
        sampling,
        expected: Expected {
            holonomy_dim: n,
            recurrent: true,
            einstein_weyl: false,
            weight: Some(3.0),
            conformally_flat: Some(true),
            symmetry_count: 1,
        },
        fields: vec![SymmetryField { name: "d_v".into(), components: unit_field(d, 0), lambda: 0.0 }],
    })
}

fn unit_field(d: usize, k: usize) -> Vec<Expr> {
    let mut c = vec![int(0); d];
    c[k] = int(1);
    c
}

/// `g = 2dv du + e^{−2F}(dx)²`, `ω = Ḟ du`.
pub fn make_3d_case1(f: &Expr) -> Result<CatalogEntry, CatalogError> {
    build_3d_case1(&FamilySpec::new(FamilyTag::ThreeDCaseOne, 1).param("F", &f.to_string()))
}

fn three_d_names() -> Vec<String> {
    vec!["v".into(), "x".into(), "u".into()]
}

fn build_3d_case1(spec: &FamilySpec) -> Result<CatalogEntry, CatalogError> {
    let f = spec.expr("F")?;
    if f.depends_on("v") {
        return Err(CatalogError::Precondition("F may only depend on x and u".into()));
    }
    let names = three_d_names();
    let chart = chart(&names, spec.extra_constraints()?)?;
    let sampling = resolve_ranges(&names, vec![(-1.0, 1.0), (0.5, 1.5), (0.5, 1.5)], spec, None);
    let fdot = f.diff("u");
    let key = fdot.diff("x");
    check_nonvanishing("∂_x Ḟ", &key, &chart, &sampling)?;
    let mut g = zero_matrix(3);
    g[0][2] = int(1);
    g[2][0] = int(1);
    g[1][1] = (int(-2) * f.clone()).exp();
    let omega = vec![int(0), int(0), fdot];
    let structure = WeylStructure::new(chart, g, omega)?;
    let phi = f + Expr::call(crate::exprlang::Func::Abs, key).ln();
    let preferred = structure.rescaled(&(phi / int(3)));
    Ok(CatalogEntry {
        name: "3d1-custom".into(),
        spec: spec.clone(),
        structure,
        preferred,
        sampling,
        expected: Expected {
            holonomy_dim: 1,
            recurrent: true,
            einstein_weyl: false,
            weight: Some(3.0),
            conformally_flat: None,
            symmetry_count: 1,
        },
        fields: vec![SymmetryField { name: "d_v".into(), components: unit_field(3, 0), lambda: 0.0 }],
    })
}

/// `H = a v x + a²x⁴/12 − ȧx³/3 + c x`.
pub fn case2_h(a: &Expr, c: &Expr) -> Expr {
    let (v, x) = (var("v"), var("x"));
    a.clone() * v * x.clone() + a.clone().powi(2) * x.clone().powi(4) / int(12)
        - a.diff("u") * x.clone().powi(3) / int(3)
        + c.clone() * x
}

/// `g = 2dv du + (dx)² + H(du)²`, `ω = a x du`.
pub fn make_3d_case2(a: &Expr, c: &Expr) -> Result<CatalogEntry, CatalogError> {
    build_3d_case2(&FamilySpec::new(FamilyTag::ThreeDCaseTwo, 1).param("a", &a.to_string()).param("c", &c.to_string()))
}

fn build_3d_case2(spec: &FamilySpec) -> Result<CatalogEntry, CatalogError> {
    let (a, c) = if spec.family == FamilyTag::EinsteinWeylModel {
        (int(1), int(0))
    } else {
        (spec.expr("a")?, spec.expr("c")?)
    };
    for (name, e) in [("a", &a), ("c", &c)] {
        if e.variables().iter().any(|v| v != "u") {
            return Err(CatalogError::Precondition(format!("{name} may only depend on u")));
        }
    }
    let names = three_d_names();
    let chart = chart(&names, spec.extra_constraints()?)?;
    let sampling = resolve_ranges(&names, vec![(-1.0, 1.0), (-1.0, 1.0), (0.5, 1.5)], spec, None);
    check_nonvanishing("a(u)", &a, &chart, &sampling)?;
    let h = case2_h(&a, &c);
    let mut g = zero_matrix(3);
    g[0][2] = int(1);
    g[2][0] = int(1);
    g[1][1] = int(1);
    g[2][2] = h;
    let omega = vec![int(0), int(0), a.clone() * var("x")];
    let structure = WeylStructure::new(chart, g, omega)?;
    let phi = Expr::call(crate::exprlang::Func::Abs, a).ln();
    let preferred = structure.rescaled(&(int(2) * phi / int(5)));
    Ok(CatalogEntry {
        name: "3d2-custom".into(),
        spec: spec.clone(),
        structure,
        preferred,
        sampling,
        expected: Expected {
            holonomy_dim: 2,
            recurrent: true,
            einstein_weyl: true,
            weight: Some(2.5),
            conformally_flat: None,
            symmetry_count: 0,
        },
        fields: vec![],
    })
}

/// The 3D case-2 field `A₁∂_u + A₂∂_v + A₃(u∂_u − v∂_v) + A₄(u∂_u + v∂_v + x∂_x)` in `(v, x, u)`.
pub fn case2_field(coeffs: [f64; 4]) -> Vec<Expr> {
    let [a1, a2, a3, a4] = coeffs.map(number);
    let (v, x, u) = (var("v"), var("x"), var("u"));
    vec![
        a2 - a3.clone() * v.clone() + a4.clone() * v,
        a4.clone() * x,
        a1 + (a3 + a4) * u,
    ]
}

/// `b = 4/(2t+u²)² (dt² + 2dv du + Σdx²)` with its Weyl form, over `(t, v, x…, u)`.
pub fn make_homogeneous_model(n: usize) -> Result<CatalogEntry, CatalogError> {
    build_homogeneous(&FamilySpec::new(FamilyTag::HomogeneousModel, n))
}

fn build_homogeneous(spec: &FamilySpec) -> Result<CatalogEntry, CatalogError> {
    let n = spec.n;
    if n < 2 {
        return Err(CatalogError::Precondition(format!("n = {n} < 2")));
    }
    let names = psi_chart_names(n);
    let d = n + 2;
    let q = fixed("2*t + u^2");
    let mut constraints = vec![q.clone()];
    constraints.extend(spec.extra_constraints()?);
    let chart = chart(&names, constraints)?;
    let conf = int(4) / q.clone().powi(2);
    let mut g = zero_matrix(d);
    g[0][0] = conf.clone();
    g[1][d - 1] = conf.clone();
    g[d - 1][1] = conf.clone();
    for (i, row) in g.iter_mut().enumerate().take(d - 1).skip(2) {
        row[i] = conf.clone();
    }
    let mut omega = vec![int(0); d];
    omega[0] = int(2) / q.clone();
    omega[d - 1] = int(2) * var("u") / q.clone() - int(1) / q.sqrt();
    let structure = WeylStructure::new(chart, g, omega)?;
    let mut defaults = vec![(0.5, 2.0), (-1.0, 1.0)];
    defaults.extend(std::iter::repeat_n((-1.0, 1.0), n - 1));
    defaults.push((-1.0, 1.0));
    let sampling = resolve_ranges(&names, defaults, spec, None);
    let fields = homogeneous_model_fields(n);
    Ok(CatalogEntry {
        name: format!("homogeneous{d}"),
        spec: spec.clone(),
        preferred: structure.clone(),
        structure,
        sampling,
        expected: Expected {
            holonomy_dim: n,
            recurrent: true,
            einstein_weyl: false,
            weight: None,
            conformally_flat: Some(true),
            symmetry_count: fields.len(),
        },
        fields,
    })
}

/// `∂_v, ∂_{xⁱ}, xⁱ∂_v − u∂_{xⁱ}, xⁱ∂_{xʲ} − xʲ∂_{xⁱ}` over `(t, v, x…, u)`; all Killing.
pub fn killing_fields(n: usize) -> Vec<SymmetryField> {
    let d = n + 2;
    let xs = x_names(n - 1);
    let mut out = vec![SymmetryField { name: "d_v".into(), components: unit_field(d, 1), lambda: 0.0 }];
    for (i, x) in xs.iter().enumerate() {
        out.push(SymmetryField { name: format!("d_{x}"), components: unit_field(d, 2 + i), lambda: 0.0 });
    }
    for (i, x) in xs.iter().enumerate() {
        let mut c = vec![int(0); d];
        c[1] = var(x);
        c[2 + i] = -var("u");
        out.push(SymmetryField { name: format!("{x}*d_v - u*d_{x}"), components: c, lambda: 0.0 });
    }
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            let mut c = vec![int(0); d];
            c[2 + j] = var(&xs[i]);
            c[2 + i] = -var(&xs[j]);
            out.push(SymmetryField {
                name: format!("{xi}*d_{xj} - {xj}*d_{xi}", xi = xs[i], xj = xs[j]),
                components: c,
                lambda: 0.0,
            });
        }
    }
    out
}

/// Number of Killing-type fields, `(2n−1) + C(n−1, 2)`.
pub fn killing_count(n: usize) -> usize {
    (2 * n - 1) + (n - 1) * (n.saturating_sub(2)) / 2
}

/// `Z₁ … Z₅` over `(t, v, x…, u)`.
pub fn extra_fields(n: usize) -> [Vec<Expr>; 5] {
    let d = n + 2;
    let xs = x_names(n - 1);
    let (t, v, u) = (var("t"), var("v"), var("u"));
    let z1 = unit_field(d, 0);
    let mut z2 = vec![int(0); d];
    z2[0] = int(2) * t;
    z2[1] = int(6) * v;
    let z3 = unit_field(d, d - 1);
    let mut z4 = vec![int(0); d];
    z4[d - 1] = int(2) * u.clone();
    let mut z5 = vec![int(0); d];
    z5[d - 1] = u.clone().powi(2);
    let mut sq = int(0);
    for (i, x) in xs.iter().enumerate() {
        z2[2 + i] = int(3) * var(x);
        z4[2 + i] = var(x);
        z5[2 + i] = u.clone() * var(x);
        sq = sq + var(x).powi(2);
    }
    z5[1] = -(sq / int(2));
    [z1, z2, z3, z4, z5]
}

/// `Σ aᵢ Zᵢ`.
pub fn extra_combination(n: usize, a: [f64; 5]) -> Vec<Expr> {
    let zs = extra_fields(n);
    (0..n + 2)
        .map(|k| {
            zs.iter()
                .zip(a)
                .filter(|(_, c)| *c != 0.0)
                .fold(int(0), |acc, (z, c)| acc + number(c) * z[k].clone())
        })
        .collect()
}

/// The extended model algebra: Killing list plus `X = ∂_u + t∂_v − u∂_t` and
/// `Y = 2t∂_t + u∂_u + 2Σxⁱ∂_{xⁱ} + 3v∂_v`.
pub fn homogeneous_model_fields(n: usize) -> Vec<SymmetryField> {
    let d = n + 2;
    let mut out = killing_fields(n);
    let mut x = vec![int(0); d];
    x[0] = -var("u");
    x[1] = var("t");
    x[d - 1] = int(1);
    out.push(SymmetryField { name: "X".into(), components: x, lambda: 0.0 });
    let mut y = vec![int(0); d];
    y[0] = int(2) * var("t");
    y[1] = int(3) * var("v");
    for (i, name) in x_names(n - 1).iter().enumerate() {
        y[2 + i] = int(2) * var(name);
    }
    y[d - 1] = var("u");
    out.push(SymmetryField { name: "Y".into(), components: y, lambda: 0.0 });
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PsiKind {
    Exp,
    Tan,
    Log,
    TanLog,
    Power,
}

/// A normal form of the cohomogeneity-one list with its working interval.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiFamily {
    pub kind: PsiKind,
    pub a: f64,
    pub psi: Expr,
    pub interval: (f64, f64),
    pub constraints: Vec<Expr>,
    /// Coefficients `(a₁ … a₅)` of the extra symmetry `Σ aᵢ Zᵢ`.
    pub symmetry: [f64; 5],
}

pub fn symmetric_psi_family(kind: PsiKind, a: f64) -> Result<PsiFamily, CatalogError> {
    let needs_positive = matches!(kind, PsiKind::Log | PsiKind::TanLog);
    if needs_positive && !(a > 0.0) {
        return Err(CatalogError::Precondition(format!("{kind:?} needs A > 0")));
    }
    let t = var("t");
    let fam = |psi, interval, constraints, symmetry| PsiFamily { kind, a, psi, interval, constraints, symmetry };
    Ok(match kind {
        PsiKind::Exp => fam(t.exp(), (-1.0, 1.0), vec![], [2.0, 0.0, 0.0, 1.0, 0.0]),
        PsiKind::Tan => fam(
            Expr::call(crate::exprlang::Func::Tan, t),
            (-1.0, 1.0),
            vec![fixed("cos(t)")],
            [1.0, 0.0, -1.0, 0.0, -1.0],
        ),
        PsiKind::Log => fam(number(a) * t.ln(), (0.5, 2.0), vec![fixed("t")], [0.0, 1.0, -2.0 * a, 0.0, 0.0]),
        PsiKind::TanLog => {
            // keep A ln t inside (−π/2, π/2)
            let r = (1.2 / a).min(2.0);
            fam(
                Expr::call(crate::exprlang::Func::Tan, number(a) * t.ln()),
                ((-r).exp(), r.exp()),
                vec![fixed("t"), Expr::call(crate::exprlang::Func::Cos, number(a) * var("t").ln())],
                [0.0, 1.0, -2.0 * a, 0.0, -2.0 * a],
            )
        }
        PsiKind::Power => {
            if a == 1.0 || a == 0.0 || !a.is_finite() {
                return Err(CatalogError::Precondition("power family needs A not in {0, 1}".into()));
            }
            if a > 0.0 {
                fam(t.pow(number(a)), (0.5, 2.0), vec![fixed("t")], [0.0, 1.0, 0.0, a, 0.0])
            } else {
                fam((-t).pow(number(a)), (-2.0, -0.5), vec![fixed("-t")], [0.0, 1.0, 0.0, a, 0.0])
            }
        }
    })
}

fn psi_spec(n: usize, psi: &Expr, interval: (f64, f64), constraints: &[Expr]) -> FamilySpec {
    let mut spec = FamilySpec::new(FamilyTag::DimGe4, n).param("psi", &psi.to_string()).range("t", interval.0, interval.1);
    for c in constraints {
        spec = spec.constraint(&c.to_string());
    }
    spec
}

fn extra_field(n: usize, name: &str, a: [f64; 5]) -> SymmetryField {
    // only Z₂ rescales h: L_{Z₂} h = 4h
    SymmetryField { name: name.into(), components: extra_combination(n, a), lambda: 2.0 * a[1] }
}

/// The cohomogeneity-one entry for a normal form.
pub fn psi_family_entry(fam: &PsiFamily, n: usize) -> Result<CatalogEntry, CatalogError> {
    let entry = build(&psi_spec(n, &fam.psi, fam.interval, &fam.constraints))?;
    let label = match fam.kind {
        PsiKind::Exp => "exp".to_string(),
        PsiKind::Tan => "tan".to_string(),
        PsiKind::Log => format!("log{}", fam.a),
        PsiKind::TanLog => format!("tanlog{}", fam.a),
        PsiKind::Power => format!("pow{}", fam.a),
    };
    let name = format!("dim{}-psi-{label}", n + 2);
    Ok(entry.with_fields(&name, vec![extra_field(n, "extra", fam.symmetry)]))
}

/// Every named catalog entry.
pub fn entries() -> Vec<CatalogEntry> {
    names().iter().map(|n| entry(n).expect("built-in entries are valid")).collect()
}

pub fn names() -> Vec<&'static str> {
    vec![
        "dim4-psi-t",
        "dim4-psi-exp",
        "dim4-psi-tan",
        "dim4-psi-log3",
        "dim4-psi-tanlog1",
        "dim4-psi-pow2",
        "dim4-psi-cubic",
        "dim5-psi-exp",
        "dim6-psi-cubic",
        "dim5-psi-t-neg",
        "riccati4",
        "riccati5-tan",
        "homogeneous4",
        "homogeneous5",
        "3d1-homogeneous",
        "3d1-xu",
        "3d2-ew",
        "3d2-inv-u",
        "3d2-exp",
    ]
}

/// Looks up a named entry.
pub fn entry(name: &str) -> Result<CatalogEntry, CatalogError> {
    let psi_entry = |kind, a, n| psi_family_entry(&symmetric_psi_family(kind, a)?, n);
    let cubic = |n: usize, name: &str| -> Result<CatalogEntry, CatalogError> {
        let mut e = build(&psi_spec(n, &fixed("t^3 + t"), (-1.0, 1.0), &[]))?;
        e.name = name.into();
        Ok(e)
    };
    match name {
        "dim4-psi-t" | "dim5-psi-t-neg" => {
            let (n, branch) = if name == "dim4-psi-t" { (2, 1) } else { (3, -1) };
            let spec = psi_spec(n, &var("t"), (-1.0, 1.0), &[]).branch(branch);
            let e = build(&spec)?;
            let fields = vec![
                extra_field(n, "Z1 - Z3", [1.0, 0.0, -1.0, 0.0, 0.0]),
                extra_field(n, "Z2 + Z4", [0.0, 1.0, 0.0, 1.0, 0.0]),
            ];
            Ok(e.with_fields(name, fields))
        }
        "dim4-psi-exp" => psi_entry(PsiKind::Exp, 1.0, 2),
        "dim5-psi-exp" => psi_entry(PsiKind::Exp, 1.0, 3),
        "dim4-psi-tan" => psi_entry(PsiKind::Tan, 1.0, 2),
        "dim4-psi-log3" => psi_entry(PsiKind::Log, 3.0, 2),
        "dim4-psi-tanlog1" => psi_entry(PsiKind::TanLog, 1.0, 2),
        "dim4-psi-pow2" => psi_entry(PsiKind::Power, 2.0, 2),
        "dim4-psi-cubic" => cubic(2, name),
        "dim6-psi-cubic" => cubic(4, name),
        "riccati4" => {
            let spec = FamilySpec::new(FamilyTag::RiccatiForm, 2)
                .param("F", "-ln(u + x)")
                .param("a", "0")
                .constraint("u + x");
            let mut e = build(&spec)?;
            e.name = name.into();
            Ok(e)
        }
        "riccati5-tan" => {
            // Ḟ = tan(u + x) solves F̈ − Ḟ² = 1 = −a
            let spec = FamilySpec::new(FamilyTag::RiccatiForm, 3)
                .param("F", "-ln(cos(u + x))")
                .param("a", "-1")
                .constraint("cos(u + x)")
                .range("x", -0.3, 0.3)
                .range("u", -0.3, 0.3);
            let mut e = build(&spec)?;
            e.name = name.into();
            Ok(e)
        }
        "homogeneous4" => make_homogeneous_model(2),
        "homogeneous5" => make_homogeneous_model(3),
        "3d1-homogeneous" => {
            let spec = FamilySpec::new(FamilyTag::ThreeDCaseOne, 1)
                .param("F", "ln(u - x)/2")
                .constraint("u - x")
                .range("x", -1.0, 0.0)
                .range("u", 0.5, 1.5);
            let e = build(&spec)?;
            let fields = vec![
                SymmetryField { name: "d_x + d_u".into(), components: vec![int(0), int(1), int(1)], lambda: 0.0 },
                SymmetryField { name: "x*d_x + u*d_u".into(), components: vec![int(0), var("x"), var("u")], lambda: 0.5 },
            ];
            Ok(e.with_fields(name, fields))
        }
        "3d1-xu" => {
            let mut e = build(&FamilySpec::new(FamilyTag::ThreeDCaseOne, 1).param("F", "x*u"))?;
            e.name = name.into();
            Ok(e)
        }
        "3d2-ew" => {
            let e = build(&FamilySpec::new(FamilyTag::EinsteinWeylModel, 1))?;
            let fields = vec![
                SymmetryField { name: "d_u".into(), components: case2_field([1.0, 0.0, 0.0, 0.0]), lambda: 0.0 },
                SymmetryField {
                    name: "u*d_u - 3v*d_v - x*d_x".into(),
                    components: case2_field([0.0, 0.0, 2.0, -1.0]),
                    lambda: -1.0,
                },
            ];
            Ok(e.with_fields(name, fields))
        }
        "3d2-inv-u" => {
            let spec = FamilySpec::new(FamilyTag::ThreeDCaseTwo, 1).param("a", "1/u").param("c", "2/u^2").constraint("u");
            let e = build(&spec)?;
            let fields = vec![SymmetryField {
                name: "u*d_u - v*d_v".into(),
                components: case2_field([0.0, 0.0, 1.0, 0.0]),
                lambda: 0.0,
            }];
            Ok(e.with_fields(name, fields))
        }
        "3d2-exp" => {
            let mut e = build(&FamilySpec::new(FamilyTag::ThreeDCaseTwo, 1).param("a", "exp(u)").param("c", "u"))?;
            e.name = name.into();
            Ok(e)
        }
        other => Err(CatalogError::UnknownEntry(other.to_string())),
    }
}
