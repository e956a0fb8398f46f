//! Structure files, check reports and the verification driver.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{build, CatalogEntry, CatalogError, FamilySpec, FamilyTag};
use crate::einsteinweyl::ew_residual_entry;
use crate::invariants::CurveSource;
use crate::sampling::{DEFAULT_SAMPLES, DEFAULT_SEED};
use crate::symmetry::ClassifyInput;
use crate::tensor::{
    conformal_weyl_tensor, holonomy_span_dim, lie_derivative_check, metric_compatibility, nabla_r, recurrence_theta,
    riemann_norm, DEFAULT_RANK_TOL, DEFAULT_RECURRENCE_TOL,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("malformed structure file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported format version {0} (expected {FORMAT_VERSION})")]
    Format(u32),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("{0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureFile {
    pub format: u32,
    pub spec: FamilySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl StructureFile {
    pub fn new(spec: FamilySpec) -> Self {
        StructureFile { format: FORMAT_VERSION, spec, samples: None, seed: None }
    }

    pub fn from_entry(entry: &CatalogEntry) -> Self {
        StructureFile::new(entry.spec.clone())
    }

    pub fn parse(text: &str) -> Result<Self, IoError> {
        let f: StructureFile = serde_json::from_str(text)?;
        if f.format != FORMAT_VERSION {
            return Err(IoError::Format(f.format));
        }
        Ok(f)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }

    pub fn build(&self) -> Result<CatalogEntry, IoError> {
        Ok(build(&self.spec)?)
    }

    fn range_of(entry: &CatalogEntry, coord: &str) -> Option<(f64, f64)> {
        entry.structure.chart.index_of(coord).map(|i| entry.sampling.ranges[i])
    }

    /// Invariant source and default parameter ranges for the signature commands.
    pub fn curve_source(&self) -> Result<(CurveSource, Vec<(f64, f64)>), IoError> {
        let entry = self.build()?;
        let p = |k: &str| self.spec.params.get(k).cloned().ok_or_else(|| CatalogError::Missing(k.into()));
        Ok(match self.spec.family {
            FamilyTag::DimGe4 => {
                (CurveSource::Psi { psi: p("psi")? }, vec![Self::range_of(&entry, "t").expect("t coordinate")])
            }
            FamilyTag::ThreeDCaseTwo => (
                CurveSource::Case2 { a: p("a")?, c: p("c")? },
                vec![Self::range_of(&entry, "u").expect("u coordinate")],
            ),
            FamilyTag::EinsteinWeylModel => (
                CurveSource::Case2 { a: "1".into(), c: "0".into() },
                vec![Self::range_of(&entry, "u").expect("u coordinate")],
            ),
            FamilyTag::ThreeDCaseOne => (
                CurveSource::Case1 { f: p("F")? },
                vec![Self::range_of(&entry, "x").expect("x"), Self::range_of(&entry, "u").expect("u")],
            ),
            other => {
                return Err(IoError::Unsupported(format!("no differential invariants for family {}", other.name())))
            }
        })
    }

    pub fn classify_input(&self, ranges: Option<&[(f64, f64)]>) -> Result<ClassifyInput, IoError> {
        let (src, default) = self.curve_source()?;
        let r = ranges.unwrap_or(&default);
        let want = default.len();
        if r.len() != want {
            return Err(IoError::Unsupported(format!("expected {want} parameter range(s)")));
        }
        Ok(match src {
            CurveSource::Psi { psi } => ClassifyInput::Psi { psi, interval: r[0] },
            CurveSource::Case2 { a, c } => ClassifyInput::Case2 { a, c, interval: r[0] },
            CurveSource::Case1 { f } => ClassifyInput::Case1 { f, x_range: r[0], u_range: r[1] },
        })
    }
}

pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub status: Status,
    pub evidence: Value,
}

impl CheckRecord {
    fn new(name: &str, ok: bool, evidence: Value) -> Self {
        CheckRecord { name: name.into(), status: if ok { Status::Pass } else { Status::Fail }, evidence }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool_version: String,
    pub input_digest: String,
    pub entry: String,
    pub seed: u64,
    pub samples: usize,
    pub checks: Vec<CheckRecord>,
    /// Only filled on request, so that default output is byte-reproducible.
    pub wall_time_ms: Option<u64>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status == Status::Pass)
    }

    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub compatibility: f64,
    pub recurrence: f64,
    pub weight: f64,
    pub rank: f64,
    pub conformal: f64,
    pub ew: f64,
    pub dkp: f64,
    /// Lower bound on the EW residual for entries that are not Einstein-Weyl.
    pub ew_separation: f64,
    pub lie: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            compatibility: 1e-10,
            recurrence: DEFAULT_RECURRENCE_TOL,
            weight: 1e-8,
            rank: DEFAULT_RANK_TOL,
            conformal: 1e-9,
            ew: 1e-9,
            dkp: 1e-10,
            ew_separation: 1e-3,
            lie: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub tol: Tolerances,
    pub samples: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { tol: Tolerances::default(), samples: DEFAULT_SAMPLES, seed: DEFAULT_SEED }
    }
}

fn t<T>(r: Result<T, crate::tensor::TensorError>) -> Result<T, IoError> {
    r.map_err(|e| IoError::Catalog(e.into()))
}

fn max(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

/// Runs every applicable check of an entry against its expectations.
pub fn verify_entry(entry: &CatalogEntry, opts: &VerifyOptions, input_digest: &str) -> Result<Report, IoError> {
    let tol = opts.tol;
    let pts = entry.sample_points(opts.samples, opts.seed).map_err(CatalogError::from)?;
    let mut checks = Vec::new();
    let d = entry.dim();

    let compat = max(pts.iter().map(|p| t(metric_compatibility(&entry.structure, p))).collect::<Result<Vec<_>, _>>()?);
    checks.push(CheckRecord::new(
        "metric_compatibility",
        compat <= tol.compatibility,
        json!({"max_relative": compat, "tol": tol.compatibility}),
    ));

    let mut rec_res: f64 = 0.0;
    let mut all_recurrent = true;
    let mut weight_dev: f64 = 0.0;
    let mut weights = Vec::new();
    for p in &pts {
        let r = t(recurrence_theta(&entry.preferred, p, tol.recurrence))?;
        rec_res = rec_res.max(r.max_residual);
        all_recurrent &= r.recurrent;
        if let Some(w) = entry.expected.weight {
            let omega = t(entry.preferred.omega_at(p))?;
            let dev = max(r.theta.iter().zip(&omega).map(|(th, om)| (th + w * om).abs()));
            weight_dev = weight_dev.max(dev);
            weights.push(r.weight.unwrap_or(f64::NAN));
        }
    }
    checks.push(CheckRecord::new(
        "recurrence",
        all_recurrent == entry.expected.recurrent,
        json!({"recurrent": all_recurrent, "max_residual": rec_res, "tol": tol.recurrence}),
    ));
    if let Some(w) = entry.expected.weight {
        let wmin = weights.iter().copied().fold(f64::INFINITY, f64::min);
        let wmax = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        checks.push(CheckRecord::new(
            "weight",
            weight_dev <= tol.weight,
            json!({"expected": w, "max_component_deviation": weight_dev, "fitted_min": wmin, "fitted_max": wmax}),
        ));
    }

    let mut dims = Vec::new();
    for p in &pts {
        dims.push(t(holonomy_span_dim(&entry.structure, p, tol.rank))?.span_dim);
    }
    checks.push(CheckRecord::new(
        "holonomy",
        dims.iter().all(|k| *k == entry.expected.holonomy_dim),
        json!({"expected": entry.expected.holonomy_dim, "observed": dims}),
    ));

    let nabla = max(pts.iter().map(|p| t(nabla_r(&entry.structure, p)).map(|r| r.max_abs())).collect::<Result<Vec<_>, _>>()?);
    checks.push(CheckRecord::new("not_locally_symmetric", nabla > 1e-8, json!({"max_abs_nabla_r": nabla})));

    if d >= 4 {
        let mut worst: f64 = 0.0;
        for p in &pts {
            let c = t(conformal_weyl_tensor(&entry.structure, p))?.norm();
            worst = worst.max(c / t(riemann_norm(&entry.structure, p))?.max(1.0));
        }
        let ok = match entry.expected.conformally_flat {
            Some(true) => worst <= tol.conformal,
            Some(false) => worst > 1e-3,
            None => true,
        };
        checks.push(CheckRecord::new(
            "conformal_flatness",
            ok,
            json!({"max_relative_weyl": worst, "expected_flat": entry.expected.conformally_flat}),
        ));
    }

    let mut ew_max: f64 = 0.0;
    let mut ew_min = f64::INFINITY;
    let mut dkp_max: Option<f64> = None;
    let mut lambdas = Vec::new();
    for p in &pts {
        let r = ew_residual_entry(entry, p)?;
        ew_max = ew_max.max(r.residual);
        ew_min = ew_min.min(r.residual);
        lambdas.push(r.lambda);
        if let Some(k) = r.dkp_residual {
            dkp_max = Some(dkp_max.unwrap_or(0.0).max(k.abs()));
        }
    }
    let ew_ok = if entry.expected.einstein_weyl {
        ew_max <= tol.ew && dkp_max.is_none_or(|k| k <= tol.dkp)
    } else {
        ew_min > tol.ew_separation
    };
    checks.push(CheckRecord::new(
        "einstein_weyl",
        ew_ok,
        json!({"expected": entry.expected.einstein_weyl, "max_residual": ew_max, "min_residual": ew_min,
               "max_dkp_residual": dkp_max, "max_abs_lambda": max(lambdas.iter().map(|l| l.abs()))}),
    ));

    let mut worst_lie: f64 = 0.0;
    let mut failures = Vec::new();
    for f in &entry.fields {
        for p in &pts {
            let r = t(lie_derivative_check(&entry.structure, &f.components, p))?;
            let dev = (r.metric_residual.max(r.form_residual)) / r.scale + (r.lambda - f.lambda).abs();
            worst_lie = worst_lie.max(dev);
            if dev > tol.lie {
                failures.push(f.name.clone());
                break;
            }
        }
    }
    checks.push(CheckRecord::new(
        "symmetries",
        failures.is_empty(),
        json!({"fields": entry.fields.len(), "max_deviation": worst_lie, "failed": failures}),
    ));

    Ok(Report {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        input_digest: input_digest.into(),
        entry: entry.name.clone(),
        seed: opts.seed,
        samples: opts.samples,
        checks,
        wall_time_ms: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    #[test]
    fn structure_file_round_trip_and_rejection() {
        let e = catalog::entry("dim4-psi-exp").unwrap();
        let f = StructureFile::from_entry(&e);
        let text = f.to_json();
        assert_eq!(StructureFile::parse(&text).unwrap(), f);
        assert!(text.contains("\"psi\": \"exp(t)\""));
        assert!(matches!(StructureFile::parse("{\"format\": 1}"), Err(IoError::Json(_))));
        let extra = text.replacen("\"format\": 1", "\"format\": 1, \"bogus\": 3", 1);
        assert!(StructureFile::parse(&extra).is_err());
        let v2 = text.replacen("\"format\": 1", "\"format\": 2", 1);
        assert!(matches!(StructureFile::parse(&v2), Err(IoError::Format(2))));
    }

    #[test]
    fn verify_is_deterministic_and_green() {
        let e = catalog::entry("dim4-psi-exp").unwrap();
        let opts = VerifyOptions { samples: 4, ..Default::default() };
        let a = verify_entry(&e, &opts, "x").unwrap();
        let b = verify_entry(&e, &opts, "x").unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.passed(), "{a:#?}");
    }

    #[test]
    fn broken_riccati_fails_recurrence() {
        let spec = catalog::entry("riccati4").unwrap().spec;
        let mut broken = spec.clone();
        broken.params.insert("F".into(), "-1.1*ln(u + x)".into());
        let e = build(&broken).unwrap();
        let r = verify_entry(&e, &VerifyOptions { samples: 4, ..Default::default() }, "").unwrap();
        assert_eq!(r.check("recurrence").unwrap().status, Status::Fail);
    }
}
