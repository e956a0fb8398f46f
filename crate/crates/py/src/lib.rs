//! Python bindings (`import pyrecweyl`).

use std::collections::HashMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use recweyl::catalog::{self, CatalogEntry};
use recweyl::einsteinweyl::ew_residual_entry;
use recweyl::exprlang::{parse, Expr};
use recweyl::invariants::{
    equivalence_test, f_jet, invariant_ij, invariants_3d1, invariants_3d2, pushforward_psi, signature_curve, Case2Jet,
    CurveSource, GroupElemD4, PsiJet, EQUIVALENCE_TOL,
};
use recweyl::io::{digest, verify_entry, StructureFile, VerifyOptions};
use recweyl::sampling::{sample_interval, DEFAULT_SAMPLES, DEFAULT_SEED};
use recweyl::scalar::{parse_rational, Exact, Scalar};
use recweyl::symmetry::{classify, psi_symmetry_kernel};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py(py: Python<'_>, v: &Value) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (v.to_string(),))?.unbind())
}

fn fraction(py: Python<'_>, q: &Exact) -> PyResult<Py<PyAny>> {
    Ok(py.import("fractions")?.getattr("Fraction")?.call1((q.to_string(),))?.unbind())
}

/// A parsed expression.
#[pyclass(name = "Expr", frozen)]
struct PyExpr {
    inner: Expr,
}

#[pymethods]
impl PyExpr {
    #[new]
    fn new(source: &str) -> PyResult<Self> {
        Ok(PyExpr { inner: parse(source).map_err(err)? })
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Expr({:?})", self.inner.to_string())
    }

    fn diff(&self, var: &str) -> PyExpr {
        PyExpr { inner: self.inner.diff(var) }
    }

    fn variables(&self) -> Vec<String> {
        self.inner.variables().into_iter().collect()
    }

    /// Evaluates with variables given as keyword arguments.
    #[pyo3(signature = (**vars))]
    fn eval(&self, vars: Option<&Bound<'_, PyDict>>) -> PyResult<f64> {
        let owned: HashMap<String, f64> = match vars {
            Some(d) => d.extract()?,
            None => HashMap::new(),
        };
        let env: HashMap<&str, f64> = owned.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        self.inner.eval_f64(&env).map_err(err)
    }
}

/// A structure built from a structure file or a catalog entry.
#[pyclass(name = "Structure", frozen)]
struct PyStructure {
    file: StructureFile,
    entry: CatalogEntry,
    text: String,
}

impl PyStructure {
    fn from_file(file: StructureFile, text: String) -> PyResult<Self> {
        let entry = file.build().map_err(err)?;
        Ok(PyStructure { file, entry, text })
    }
}

#[pymethods]
impl PyStructure {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        PyStructure::from_file(StructureFile::parse(text).map_err(err)?, text.to_string())
    }

    #[staticmethod]
    fn from_catalog(name: &str) -> PyResult<Self> {
        let entry = catalog::entry(name).map_err(err)?;
        let file = StructureFile::from_entry(&entry);
        let text = file.to_json();
        Ok(PyStructure { file, entry, text })
    }

    #[getter]
    fn name(&self) -> String {
        self.entry.name.clone()
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.entry.family().name()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.entry.dim()
    }

    #[getter]
    fn holonomy_dim(&self) -> usize {
        self.entry.expected.holonomy_dim
    }

    #[getter]
    fn coordinates(&self) -> Vec<String> {
        self.entry.structure.chart.names().to_vec()
    }

    fn to_json(&self) -> String {
        self.file.to_json()
    }

    fn sample_points(&self, count: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        self.entry.sample_points(count, seed).map_err(err)
    }

    /// Runs every check; returns the report as a dict.
    #[pyo3(signature = (samples = None, seed = None))]
    fn verify(&self, py: Python<'_>, samples: Option<usize>, seed: Option<u64>) -> PyResult<Py<PyAny>> {
        let opts = VerifyOptions {
            samples: samples.or(self.file.samples).unwrap_or(DEFAULT_SAMPLES),
            seed: seed.or(self.file.seed).unwrap_or(DEFAULT_SEED),
            ..VerifyOptions::default()
        };
        let report = verify_entry(&self.entry, &opts, &digest(self.text.as_bytes())).map_err(err)?;
        let mut v = serde_json::to_value(&report).map_err(err)?;
        v["passed"] = json!(report.passed());
        to_py(py, &v)
    }

    /// Symmetrized Ricci tensor, Λ and the Einstein-Weyl residual at a point (3D only).
    fn einstein_weyl(&self, py: Python<'_>, point: Vec<f64>) -> PyResult<Py<PyAny>> {
        let r = ew_residual_entry(&self.entry, &point).map_err(err)?;
        to_py(py, &json!({"ric_sym": r.ric_sym, "lambda": r.lambda, "residual": r.residual,
                          "dkp_residual": r.dkp_residual}))
    }

    #[pyo3(signature = (samples = 64, ranges = None))]
    fn signature(&self, samples: usize, ranges: Option<Vec<(f64, f64)>>) -> PyResult<PySignature> {
        let (src, default) = self.file.curve_source().map_err(err)?;
        let curve = signature_curve(&src, &ranges.unwrap_or(default), samples).map_err(err)?;
        Ok(PySignature { inner: curve })
    }

    #[pyo3(signature = (ranges = None, seed = None))]
    fn classify(&self, py: Python<'_>, ranges: Option<Vec<(f64, f64)>>, seed: Option<u64>) -> PyResult<Py<PyAny>> {
        let input = self.file.classify_input(ranges.as_deref()).map_err(err)?;
        let res = classify(&input, seed.or(self.file.seed).unwrap_or(DEFAULT_SEED)).map_err(err)?;
        let mut v = json!({"cohomogeneity": res.cohomogeneity, "kind": res.kind.name(),
                           "evidence": serde_json::to_value(&res.evidence).map_err(err)?});
        for (k, x) in &res.params {
            v[k] = json!(x);
        }
        to_py(py, &v)
    }
}

#[pyclass(name = "SignatureCurve", frozen)]
struct PySignature {
    inner: recweyl::invariants::SignatureCurve,
}

#[pymethods]
impl PySignature {
    #[getter]
    fn points(&self) -> Vec<Vec<f64>> {
        self.inner.points().into_iter().map(|p| p.to_vec()).collect()
    }

    #[getter]
    fn signs(&self) -> Vec<i8> {
        self.inner.signs().into_iter().collect()
    }

    #[getter]
    fn degenerate(&self) -> bool {
        self.inner.degenerate
    }

    #[getter]
    fn singular_count(&self) -> usize {
        self.inner.singular_count
    }

    fn csv_header(&self) -> Vec<String> {
        self.inner.csv_header()
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.inner.csv_rows()
    }
}

/// Verdict, reason and normalized distance for two signature curves.
#[pyfunction]
#[pyo3(name = "equivalence_test", signature = (a, b, tol = EQUIVALENCE_TOL))]
fn py_equivalence_test(py: Python<'_>, a: &PySignature, b: &PySignature, tol: f64) -> PyResult<Py<PyAny>> {
    let r = equivalence_test(&a.inner, &b.inner, tol).map_err(err)?;
    to_py(py, &serde_json::to_value(&r).map_err(err)?)
}

/// Element of the point-symmetry group acting on ψ (normalized to determinant one).
#[pyclass(name = "GroupElemD4", frozen)]
struct PyGroupElem {
    inner: GroupElemD4,
}

#[pymethods]
impl PyGroupElem {
    #[new]
    #[pyo3(signature = (s1, s2, a, b, c, d, eps = 1))]
    fn new(s1: f64, s2: f64, a: f64, b: f64, c: f64, d: f64, eps: i8) -> PyResult<Self> {
        Ok(PyGroupElem { inner: GroupElemD4::new(s1, s2, [a, b, c, d], eps).map_err(err)? })
    }

    #[staticmethod]
    fn random(seed: u64) -> Self {
        PyGroupElem { inner: GroupElemD4::random(&mut ChaCha8Rng::seed_from_u64(seed)) }
    }

    fn map_interval(&self, lo: f64, hi: f64) -> (f64, f64) {
        self.inner.map_interval(lo, hi)
    }

    /// Expression of the transformed ψ.
    fn pushforward(&self, psi: &str) -> PyResult<String> {
        Ok(pushforward_psi(&self.inner, &parse(psi).map_err(err)?).to_string())
    }
}

fn exact_point(p: &str) -> PyResult<Exact> {
    parse_rational(p).ok_or_else(|| PyValueError::new_err(format!("{p:?} is not a rational number")))
}

fn psi_values<S: Scalar>(psi: &Expr, t: S) -> PyResult<(S, S, i8)> {
    let v = invariant_ij(&PsiJet::from_expr(psi, t, 5).map_err(err)?).map_err(err)?;
    Ok((v.i, v.j, v.sign_d))
}

/// `(I, J, sign D)` of ψ at `t`. With `exact=True`, `t` is a rational string and
/// the invariants come back as `Fraction`s.
#[pyfunction]
#[pyo3(signature = (psi, t, exact = false))]
fn psi_invariants(py: Python<'_>, psi: &str, t: &Bound<'_, PyAny>, exact: bool) -> PyResult<Py<PyAny>> {
    let e = parse(psi).map_err(err)?;
    if exact {
        let (i, j, s) = psi_values(&e, exact_point(&t.str()?.to_cow()?)?)?;
        Ok((fraction(py, &i)?, fraction(py, &j)?, s).into_pyobject(py)?.into_any().unbind())
    } else {
        let (i, j, s) = psi_values(&e, t.extract::<f64>()?)?;
        Ok((i, j, s).into_pyobject(py)?.into_any().unbind())
    }
}

/// `(I, J, K)` of the 3D case-two pair `(a, c)` at `u`.
#[pyfunction]
#[pyo3(signature = (a, c, u, exact = false))]
fn case2_invariants(py: Python<'_>, a: &str, c: &str, u: &Bound<'_, PyAny>, exact: bool) -> PyResult<Py<PyAny>> {
    let (a, c) = (parse(a).map_err(err)?, parse(c).map_err(err)?);
    if exact {
        let v = invariants_3d2(&Case2Jet::from_exprs(&a, &c, exact_point(&u.str()?.to_cow()?)?, 2).map_err(err)?)
            .map_err(err)?;
        Ok((fraction(py, &v[0])?, fraction(py, &v[1])?, fraction(py, &v[2])?).into_pyobject(py)?.into_any().unbind())
    } else {
        let v = invariants_3d2(&Case2Jet::from_exprs(&a, &c, u.extract::<f64>()?, 2).map_err(err)?).map_err(err)?;
        Ok((v[0], v[1], v[2]).into_pyobject(py)?.into_any().unbind())
    }
}

/// `(I, J)` of the 3D case-one function `F(x, u)`.
#[pyfunction]
#[pyo3(signature = (f, x, u, exact = false))]
fn case1_invariants(
    py: Python<'_>,
    f: &str,
    x: &Bound<'_, PyAny>,
    u: &Bound<'_, PyAny>,
    exact: bool,
) -> PyResult<Py<PyAny>> {
    let f = parse(f).map_err(err)?;
    if exact {
        let (x, u) = (exact_point(&x.str()?.to_cow()?)?, exact_point(&u.str()?.to_cow()?)?);
        let v = invariants_3d1(&f_jet(&f, x, u, 4).map_err(err)?).map_err(err)?;
        Ok((fraction(py, &v.i)?, fraction(py, &v.j)?).into_pyobject(py)?.into_any().unbind())
    } else {
        let v = invariants_3d1(&f_jet(&f, x.extract::<f64>()?, u.extract::<f64>()?, 4).map_err(err)?).map_err(err)?;
        Ok((v.i, v.j).into_pyobject(py)?.into_any().unbind())
    }
}

/// Kernel of the ψ symmetry system sampled at `count` seeded points of `(lo, hi)`.
#[pyfunction]
#[pyo3(signature = (psi, lo, hi, count = 16, seed = 7))]
fn symmetry_kernel(py: Python<'_>, psi: &str, lo: f64, hi: f64, count: usize, seed: u64) -> PyResult<Py<PyAny>> {
    let k = psi_symmetry_kernel(&parse(psi).map_err(err)?, &sample_interval(lo, hi, count, seed)).map_err(err)?;
    to_py(py, &json!({"dim": k.dim, "basis": k.basis, "singular_values": k.singular_values,
                      "smallest_nonzero": k.smallest_nonzero}))
}

#[pyfunction]
fn catalog_names() -> Vec<&'static str> {
    catalog::names()
}

/// Signature curve of ψ on `(lo, hi)`.
#[pyfunction]
#[pyo3(signature = (psi, lo, hi, samples = 64))]
fn psi_signature(psi: &str, lo: f64, hi: f64, samples: usize) -> PyResult<PySignature> {
    let src = CurveSource::Psi { psi: psi.to_string() };
    Ok(PySignature { inner: signature_curve(&src, &[(lo, hi)], samples).map_err(err)? })
}

#[pymodule]
fn pyrecweyl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyExpr>()?;
    m.add_class::<PyStructure>()?;
    m.add_class::<PySignature>()?;
    m.add_class::<PyGroupElem>()?;
    m.add_function(wrap_pyfunction!(py_equivalence_test, m)?)?;
    m.add_function(wrap_pyfunction!(psi_invariants, m)?)?;
    m.add_function(wrap_pyfunction!(case2_invariants, m)?)?;
    m.add_function(wrap_pyfunction!(case1_invariants, m)?)?;
    m.add_function(wrap_pyfunction!(symmetry_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(psi_signature, m)?)?;
    m.add_function(wrap_pyfunction!(catalog_names, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
