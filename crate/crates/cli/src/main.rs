//! `recweyl` command-line driver.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 on bad input.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use recweyl::catalog;
use recweyl::exprlang::parse;
use recweyl::invariants::{
    derived_invariant, equivalence_test, f_jet, invariant_ij, invariants_3d1, invariants_3d2, signature_curve, Case2Jet,
    CurveSource, PsiJet, SignatureCurve, Verdict, EQUIVALENCE_TOL,
};
use recweyl::io::{digest, verify_entry, StructureFile, Tolerances, VerifyOptions};
use recweyl::sampling::{DEFAULT_SAMPLES, DEFAULT_SEED};
use recweyl::scalar::{parse_rational, Exact, Scalar};
use recweyl::symmetry::classify;

#[derive(Parser)]
#[command(name = "recweyl", version, about = "Recurrent Lorentzian Weyl structures")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Built-in catalog of structures.
    Catalog {
        #[command(subcommand)]
        action: CatalogCmd,
    },
    /// Check a structure against the expectations of its family.
    Verify(VerifyArgs),
    /// Differential invariants at given points.
    Invariants(InvariantsArgs),
    /// Sample the signature curve of a structure.
    Signature(SignatureArgs),
    /// Decide local equivalence of two structures from their signature curves.
    Equiv(EquivArgs),
    /// Symmetry dimension, cohomogeneity and normal form.
    Classify(ClassifyArgs),
}

#[derive(Subcommand)]
enum CatalogCmd {
    /// Table of entries.
    List {
        #[arg(long)]
        json: bool,
    },
    /// Write the structure file of an entry (stdout when no path is given).
    Emit { entry: String, path: Option<PathBuf> },
}

#[derive(Args)]
struct Seeded {
    /// Sampling seed; the WEYL_SEED environment variable takes precedence.
    #[arg(long)]
    seed: Option<u64>,
}

impl Seeded {
    fn resolve(&self, file: Option<u64>) -> Result<u64, String> {
        if let Ok(v) = std::env::var("WEYL_SEED") {
            return v.trim().parse().map_err(|_| format!("WEYL_SEED is not an unsigned integer: {v:?}"));
        }
        Ok(self.seed.or(file).unwrap_or(DEFAULT_SEED))
    }
}

#[derive(Args)]
struct VerifyArgs {
    file: PathBuf,
    /// Tolerance override `name=value`; repeatable. Names: compatibility, recurrence, weight,
    /// rank, conformal, ew, dkp, ew_separation, lie.
    #[arg(long = "tol", value_name = "NAME=VALUE")]
    tol: Vec<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[command(flatten)]
    seed: Seeded,
    /// Jet order for curvature; third-order jets are needed for ∇R, higher orders are accepted.
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// Record wall time in the report (breaks byte reproducibility).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct InvariantsArgs {
    file: PathBuf,
    /// Evaluation point: `t` (or `u`) for one-parameter families, `x,u` for 3D case one. Repeatable;
    /// defaults to the centre of the sampling range.
    #[arg(long, allow_hyphen_values = true)]
    at: Vec<String>,
    /// Exact rational arithmetic; points must be rationals such as `1`, `-3/4` or `0.25`.
    #[arg(long)]
    exact: bool,
    /// Jet order (at least the minimum the family needs).
    #[arg(long)]
    order: Option<usize>,
}

#[derive(Args)]
struct SignatureArgs {
    file: PathBuf,
    /// Parameter range `lo:hi`; give twice for 3D case one (x then u).
    #[arg(long, allow_hyphen_values = true)]
    range: Vec<String>,
    /// Grid points per parameter axis.
    #[arg(long, default_value_t = 64)]
    samples: usize,
    /// Write the samples as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct EquivArgs {
    a: PathBuf,
    b: PathBuf,
    /// Range `lo:hi` for the first file, then optionally for the second.
    #[arg(long, allow_hyphen_values = true)]
    range: Vec<String>,
    #[arg(long, default_value_t = 64)]
    samples: usize,
    /// Relative Hausdorff tolerance.
    #[arg(long, default_value_t = EQUIVALENCE_TOL)]
    tol: f64,
}

#[derive(Args)]
struct ClassifyArgs {
    file: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    range: Vec<String>,
    #[command(flatten)]
    seed: Seeded,
}

/// A failure that maps to exit code 2.
struct InputError(String);

impl<E: std::fmt::Display> From<E> for InputError {
    fn from(e: E) -> Self {
        InputError(e.to_string())
    }
}

type Outcome = Result<bool, InputError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match cli.cmd {
        Cmd::Catalog { action } => cmd_catalog(action),
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Invariants(a) => cmd_invariants(a),
        Cmd::Signature(a) => cmd_signature(a),
        Cmd::Equiv(a) => cmd_equiv(a),
        Cmd::Classify(a) => cmd_classify(a),
    };
    match run {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(InputError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn emit(v: &Value) {
    // a closed pipe (e.g. `| head`) is not an error worth reporting
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn read(path: &Path) -> Result<(StructureFile, String), InputError> {
    let bytes = fs::read(path).map_err(|e| InputError(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| InputError(format!("{}: not UTF-8", path.display())))?;
    let file = StructureFile::parse(&text).map_err(|e| InputError(format!("{}: {e}", path.display())))?;
    Ok((file, digest(&bytes)))
}

fn parse_range(s: &str) -> Result<(f64, f64), InputError> {
    let (a, b) = s.split_once(':').ok_or_else(|| InputError(format!("range {s:?} is not of the form lo:hi")))?;
    let lo: f64 = a.trim().parse().map_err(|_| InputError(format!("bad range bound {a:?}")))?;
    let hi: f64 = b.trim().parse().map_err(|_| InputError(format!("bad range bound {b:?}")))?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(InputError(format!("empty or non-finite range {s:?}")));
    }
    Ok((lo, hi))
}

fn ranges(args: &[String]) -> Result<Option<Vec<(f64, f64)>>, InputError> {
    if args.is_empty() {
        return Ok(None);
    }
    args.iter().map(|s| parse_range(s)).collect::<Result<_, _>>().map(Some)
}

fn cmd_catalog(action: CatalogCmd) -> Outcome {
    match action {
        CatalogCmd::List { json } => {
            let entries = catalog::entries();
            if json {
                let rows: Vec<Value> = entries
                    .iter()
                    .map(|e| {
                        json!({"name": e.name, "family": e.family().name(), "dim": e.dim(),
                               "holonomy_dim": e.expected.holonomy_dim})
                    })
                    .collect();
                emit(&Value::Array(rows));
            } else {
                let mut out = std::io::stdout().lock();
                let _ = writeln!(out, "{:<22} {:<18} {:>3} {:>8}", "entry", "family", "dim", "holonomy");
                for e in &entries {
                    let (name, fam, holo) = (&e.name, e.family().name(), e.expected.holonomy_dim);
                    let _ = writeln!(out, "{name:<22} {fam:<18} {:>3} {holo:>8}", e.dim());
                }
            }
            Ok(true)
        }
        CatalogCmd::Emit { entry, path } => {
            let e = catalog::entry(&entry)?;
            let text = StructureFile::from_entry(&e).to_json();
            match path {
                Some(p) => fs::write(&p, text).map_err(|err| InputError(format!("{}: {err}", p.display())))?,
                None => {
                    let _ = std::io::stdout().lock().write_all(text.as_bytes());
                }
            }
            Ok(true)
        }
    }
}

fn apply_tolerances(tol: &mut Tolerances, overrides: &[String]) -> Result<(), InputError> {
    let mut v = serde_json::to_value(*tol)?;
    for o in overrides {
        let (k, x) = o.split_once('=').ok_or_else(|| InputError(format!("tolerance {o:?} is not NAME=VALUE")))?;
        let x: f64 = x.parse().map_err(|_| InputError(format!("bad tolerance value in {o:?}")))?;
        let slot = v.get_mut(k.trim()).ok_or_else(|| InputError(format!("unknown tolerance {k:?}")))?;
        *slot = json!(x);
    }
    *tol = serde_json::from_value(v)?;
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Outcome {
    if a.order < 3 {
        return Err(InputError(format!("--order {} is below 3, the order needed for ∇R", a.order)));
    }
    let start = Instant::now();
    let (file, dig) = read(&a.file)?;
    let entry = file.build()?;
    let mut opts = VerifyOptions {
        tol: Tolerances::default(),
        samples: a.samples.or(file.samples).unwrap_or(DEFAULT_SAMPLES),
        seed: a.seed.resolve(file.seed)?,
    };
    if opts.samples == 0 {
        return Err(InputError("--samples must be positive".into()));
    }
    apply_tolerances(&mut opts.tol, &a.tol)?;
    let mut report = verify_entry(&entry, &opts, &dig)?;
    if a.timing {
        report.wall_time_ms = Some(start.elapsed().as_millis() as u64);
    }
    let mut v = serde_json::to_value(&report)?;
    v["passed"] = json!(report.passed());
    v["tolerances"] = serde_json::to_value(opts.tol)?;
    emit(&v);
    Ok(report.passed())
}

fn rational(s: &str) -> Result<Exact, InputError> {
    parse_rational(s).ok_or_else(|| InputError(format!("{s:?} is not a rational number")))
}

fn invariants_at<S: Scalar>(src: &CurveSource, p: &[S], order: Option<usize>, num: fn(&S) -> Value) -> Result<Value, InputError> {
    let mut out = Map::new();
    out.insert("at".into(), Value::Array(p.iter().map(num).collect()));
    match src {
        CurveSource::Psi { psi } => {
            let j = PsiJet::from_expr(&parse(psi)?, p[0].clone(), order.unwrap_or(6))?;
            match invariant_ij(&j) {
                Ok(v) => {
                    out.insert("I".into(), num(&v.i));
                    out.insert("J".into(), num(&v.j));
                    out.insert("sign_D".into(), json!(v.sign_d));
                    if j.order() >= 6 {
                        out.insert("dJ/dI".into(), derived_invariant(&j).map(|d| num(&d)).unwrap_or(Value::Null));
                    }
                    out.insert("singular".into(), json!(false));
                }
                Err(recweyl::invariants::InvariantError::Singular(..)) => {
                    out.insert("singular".into(), json!(true));
                }
                Err(e) => return Err(e.into()),
            }
        }
        CurveSource::Case2 { a, c } => {
            let j = Case2Jet::from_exprs(&parse(a)?, &parse(c)?, p[0].clone(), order.unwrap_or(2))?;
            let v = invariants_3d2(&j)?;
            for (k, x) in ["I", "J", "K"].iter().zip(&v) {
                out.insert(k.to_string(), num(x));
            }
        }
        CurveSource::Case1 { f } => {
            let v = invariants_3d1(&f_jet(&parse(f)?, p[0].clone(), p[1].clone(), order.unwrap_or(5))?)?;
            out.insert("I".into(), num(&v.i));
            out.insert("J".into(), num(&v.j));
            if let Some((n1, n2)) = v.nabla {
                out.insert("nabla1_I".into(), num(&n1));
                out.insert("nabla2_I".into(), num(&n2));
            }
        }
    }
    Ok(Value::Object(out))
}

fn cmd_invariants(a: InvariantsArgs) -> Outcome {
    let (file, _) = read(&a.file)?;
    let (src, default) = file.curve_source()?;
    let width = default.len();
    let points: Vec<Vec<String>> = if a.at.is_empty() {
        vec![default.iter().map(|(lo, hi)| format!("{}", 0.5 * (lo + hi))).collect()]
    } else {
        a.at.iter().map(|s| s.split(',').map(|x| x.trim().to_string()).collect()).collect()
    };
    let mut rows = Vec::new();
    for p in &points {
        if p.len() != width {
            return Err(InputError(format!("point {:?} needs {width} coordinate(s)", p.join(","))));
        }
        rows.push(if a.exact {
            let q = p.iter().map(|s| rational(s)).collect::<Result<Vec<_>, _>>()?;
            invariants_at(&src, &q, a.order, |x| json!(x.to_string()))?
        } else {
            let x = p
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| InputError(format!("bad coordinate {s:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            invariants_at(&src, &x, a.order, |v: &f64| json!(v))?
        });
    }
    emit(&json!({"source": src, "exact": a.exact, "points": rows}));
    Ok(true)
}

fn curve(file: &StructureFile, r: Option<Vec<(f64, f64)>>, samples: usize) -> Result<SignatureCurve, InputError> {
    if samples < 2 {
        return Err(InputError("--samples must be at least 2".into()));
    }
    let (src, default) = file.curve_source()?;
    let r = r.unwrap_or(default);
    Ok(signature_curve(&src, &r, samples)?)
}

fn summary(c: &SignatureCurve) -> Value {
    json!({"source": c.source, "ranges": c.ranges, "samples": c.samples.len(),
           "singular_count": c.singular_count, "degenerate": c.degenerate, "spread": c.spread,
           "signs": c.signs()})
}

fn cmd_signature(a: SignatureArgs) -> Outcome {
    let (file, _) = read(&a.file)?;
    let c = curve(&file, ranges(&a.range)?, a.samples)?;
    let mut out = summary(&c);
    match &a.csv {
        Some(path) => {
            let mut w = csv::Writer::from_path(path).map_err(|e| InputError(format!("{}: {e}", path.display())))?;
            w.write_record(c.csv_header())?;
            for row in c.csv_rows() {
                w.write_record(row)?;
            }
            w.flush()?;
            out["csv"] = json!(path.display().to_string());
        }
        None => out["rows"] = json!(c.csv_rows()),
    }
    emit(&out);
    Ok(true)
}

fn cmd_equiv(a: EquivArgs) -> Outcome {
    let r = ranges(&a.range)?.unwrap_or_default();
    if r.len() > 2 {
        return Err(InputError("at most two --range values".into()));
    }
    let (fa, _) = read(&a.a)?;
    let (fb, _) = read(&a.b)?;
    let ra = r.first().map(|x| vec![*x]);
    let rb = r.get(1).map(|x| vec![*x]).or_else(|| ra.clone());
    let ca = curve(&fa, ra, a.samples)?;
    let cb = curve(&fb, rb, a.samples)?;
    let rep = equivalence_test(&ca, &cb, a.tol)?;
    emit(&json!({"verdict": rep.verdict, "reason": rep.reason, "distance": rep.distance,
                 "signs": rep.signs, "degenerate": rep.degenerate, "tol": a.tol,
                 "curves": [summary(&ca), summary(&cb)]}));
    Ok(rep.verdict == Verdict::Equivalent)
}

fn cmd_classify(a: ClassifyArgs) -> Outcome {
    let (file, _) = read(&a.file)?;
    let r = ranges(&a.range)?;
    let input = file.classify_input(r.as_deref())?;
    let res = classify(&input, a.seed.resolve(file.seed)?)?;
    let mut out = Map::new();
    out.insert("cohomogeneity".into(), json!(res.cohomogeneity));
    out.insert("kind".into(), json!(res.kind.name()));
    for (k, v) in &res.params {
        out.insert(k.clone(), json!(v));
    }
    out.insert("evidence".into(), serde_json::to_value(&res.evidence)?);
    emit(&Value::Object(out));
    Ok(true)
}
