//! Acceptance suite: one line per criterion, then a single assertion over all of them.

use std::collections::HashMap;

use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use recweyl::catalog::{self, FamilyTag};
use recweyl::einsteinweyl::ew_residual_entry;
use recweyl::exprlang::{parse, Expr};
use recweyl::invariants::{
    act_3d1, act_3d2, act_d4, equivalence_test, f_jet, invariant_ij, invariants_3d1, invariants_3d2, pushforward_3d2,
    pushforward_psi, signature_curve, Case2Jet, CurveSource, GroupElem3D2, GroupElemD4, PseudoElem3D1, PsiJet,
    Verdict, EQUIVALENCE_TOL,
};
use recweyl::sampling::{sample_interval, DEFAULT_SEED};
use recweyl::scalar::Exact;
use recweyl::symmetry::{classify_default, psi_symmetry_kernel, ClassifyInput, Kind};
use recweyl::tensor::{
    conformal_weyl_tensor, holonomy_span_dim, lie_derivative_check, metric_compatibility, recurrence_theta,
    riemann_norm, Chart, WeylStructure, DEFAULT_RANK_TOL,
};

const POINTS: usize = 20;

struct Outcome {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn report(id: usize, title: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, title, pass, detail }
}

fn points(e: &catalog::CatalogEntry) -> Vec<Vec<f64>> {
    e.sample_points(POINTS, DEFAULT_SEED).expect("sample points")
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn q(n: i64, d: i64) -> Exact {
    BigRational::new(n.into(), d.into())
}

fn construction_identity(entries: &[catalog::CatalogEntry]) -> Outcome {
    let mut worst: f64 = 0.0;
    for e in entries {
        for p in points(e) {
            worst = worst.max(metric_compatibility(&e.structure, &p).unwrap());
        }
    }
    report(1, "construction identity", worst <= 1e-10, format!("max relative |nabla g + 2 omega g| = {worst:.2e} (tol 1e-10)"))
}

fn recurrence_and_weight(entries: &[catalog::CatalogEntry]) -> Outcome {
    let mut worst_res: f64 = 0.0;
    let mut all = true;
    let mut theta_dev: f64 = 0.0;
    let mut w_dev: f64 = 0.0;
    for e in entries {
        for p in points(e) {
            let r = recurrence_theta(&e.preferred, &p, 1e-8).unwrap();
            all &= r.recurrent;
            worst_res = worst_res.max(r.max_residual);
            if e.dim() >= 4 && e.expected.weight == Some(3.0) {
                let om = e.preferred.omega_at(&p).unwrap();
                for (th, o) in r.theta.iter().zip(&om) {
                    theta_dev = theta_dev.max((th + 3.0 * o).abs());
                }
            }
            if e.family() == FamilyTag::ThreeDCaseTwo {
                w_dev = w_dev.max((r.weight.unwrap() - 2.5).abs());
            }
        }
    }
    let pass = all && worst_res <= 1e-8 && theta_dev <= 1e-8 && w_dev <= 1e-6;
    report(
        2,
        "recurrence and weight",
        pass,
        format!("residual {worst_res:.2e} (tol 1e-8), |theta + 3 omega_h| {theta_dev:.2e} (tol 1e-8), |w - 5/2| {w_dev:.2e} (tol 1e-6)"),
    )
}

fn holonomy(entries: &[catalog::CatalogEntry]) -> Outcome {
    let mut seen: HashMap<String, Vec<usize>> = HashMap::new();
    let mut pass = true;
    let mut tested_n = std::collections::BTreeSet::new();
    for e in entries {
        let want = match e.family() {
            FamilyTag::ThreeDCaseOne => 1,
            FamilyTag::ThreeDCaseTwo | FamilyTag::EinsteinWeylModel => 2,
            _ => {
                tested_n.insert(e.dim() - 2);
                e.dim() - 2
            }
        };
        for p in points(e) {
            let k = holonomy_span_dim(&e.structure, &p, DEFAULT_RANK_TOL).unwrap().span_dim;
            pass &= k == want;
            seen.entry(format!("dim{}:{:?}", e.dim(), e.family())).or_default().push(k);
        }
    }
    pass &= [2, 3, 4].iter().all(|n| tested_n.contains(n));
    let mut summary: Vec<String> = seen
        .iter()
        .map(|(k, v)| {
            let mut u = v.clone();
            u.sort();
            u.dedup();
            format!("{k}={u:?}")
        })
        .collect();
    summary.sort();
    report(3, "holonomy span dimensions", pass, summary.join(" "))
}

fn conformal_flatness(entries: &[catalog::CatalogEntry]) -> Outcome {
    let mut worst_abs: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    for e in entries.iter().filter(|e| e.dim() >= 4) {
        for p in points(e) {
            let c = conformal_weyl_tensor(&e.structure, &p).unwrap().norm();
            worst_abs = worst_abs.max(c);
            worst_rel = worst_rel.max(c / riemann_norm(&e.structure, &p).unwrap().max(1.0));
        }
    }
    let chart = Chart::new(&["t", "r", "th", "ph"], vec![parse("r-2").unwrap(), parse("th").unwrap()]).unwrap();
    let m = |rows: [[&str; 4]; 4]| -> Vec<Vec<Expr>> {
        rows.iter().map(|r| r.iter().map(|s| parse(s).unwrap()).collect()).collect()
    };
    let g = m([
        ["-(1-2/r)", "0", "0", "0"],
        ["0", "1/(1-2/r)", "0", "0"],
        ["0", "0", "r^2", "0"],
        ["0", "0", "0", "r^2*sin(th)^2"],
    ]);
    let zero = vec![Expr::int(0); 4];
    let control = WeylStructure::new(chart, g, zero).unwrap();
    let ctrl = conformal_weyl_tensor(&control, &[0.0, 3.0, 1.0, 0.2]).unwrap().norm();
    let pass = worst_rel <= 1e-9 && ctrl > 1e-3;
    report(
        4,
        "conformal flatness",
        pass,
        format!("max |C| {worst_abs:.2e}, max |C|/max(1,|Rm|) {worst_rel:.2e} (tol 1e-9); control |C| = {ctrl:.3e} (> 1e-3)"),
    )
}

fn riccati_gate() -> Outcome {
    let good = catalog::entry("riccati4").unwrap();
    let mut spec = good.spec.clone();
    let f = spec.params["F"].clone();
    // F = −ln(u + x) perturbed by 10% of itself
    spec.params.insert("F".into(), format!("1.1*({f})"));
    let bad = catalog::build(&spec).unwrap();
    let mut good_res: f64 = 0.0;
    let mut good_ok = true;
    for p in points(&good) {
        let r = recurrence_theta(&good.structure, &p, 1e-8).unwrap();
        good_ok &= r.recurrent;
        good_res = good_res.max(r.max_residual);
    }
    let mut bad_res = f64::INFINITY;
    for p in points(&bad) {
        bad_res = bad_res.min(recurrence_theta(&bad.structure, &p, 1e-8).unwrap().max_residual);
    }
    report(
        5,
        "Riccati gate",
        good_ok && bad_res > 1e-2,
        format!("F = {f}: residual {good_res:.2e}; perturbed F: min residual {bad_res:.3e} (> 1e-2)"),
    )
}

fn invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED);
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
    let mut d4: f64 = 0.0;
    let mut rejected = 0;
    let psi = parse("t^3 + t").unwrap();
    for _ in 0..100 {
        let t = rng.gen_range(0.5..1.5);
        let j = PsiJet::from_expr(&psi, t, 5).unwrap();
        // elements whose Möbius pole sits next to ψ(t) amplify rounding by |ψ̃|^k; draw away from it
        let mut g = GroupElemD4::random(&mut rng);
        while (g.c * j.psi[0] + g.d).abs() < 0.3 {
            g = GroupElemD4::random(&mut rng);
            rejected += 1;
        }
        let before = invariant_ij(&j).unwrap();
        let after = invariant_ij(&act_d4(&g, &j).unwrap()).unwrap();
        d4 = d4.max(rel(before.i, after.i)).max(rel(before.j, after.j));
        if before.sign_d != after.sign_d {
            d4 = f64::INFINITY;
        }
    }
    let mut c2: f64 = 0.0;
    let (a, c) = (parse("exp(u) + u^2").unwrap(), parse("sin(u)").unwrap());
    for _ in 0..100 {
        let u = rng.gen_range(0.2..1.2);
        let j = Case2Jet::from_exprs(&a, &c, u, 2).unwrap();
        let g = GroupElem3D2::random(&mut rng);
        let before = invariants_3d2(&j).unwrap();
        let after = invariants_3d2(&act_3d2(&g, &j)).unwrap();
        for k in 0..3 {
            c2 = c2.max(rel(before[k], after[k]));
        }
    }
    let mut c1: f64 = 0.0;
    let f = parse("x*u + sin(x)*u^2 + x^3/5").unwrap();
    for _ in 0..100 {
        let (x, u) = (rng.gen_range(0.1..0.5), rng.gen_range(0.4..0.8));
        let jet = f_jet(&f, x, u, 5).unwrap();
        let g = PseudoElem3D1::random(&mut rng, x, u, 6);
        let before = invariants_3d1(&jet).unwrap();
        let after = invariants_3d1(&act_3d1(&g, &jet).unwrap()).unwrap();
        let (b, a2) = (before.nabla.unwrap(), after.nabla.unwrap());
        c1 = c1.max(rel(before.i, after.i)).max(rel(before.j, after.j)).max(rel(b.0, a2.0)).max(rel(b.1, a2.1));
    }
    let pass = d4 <= 1e-8 && c2 <= 1e-8 && c1 <= 1e-8;
    report(6, "invariance under the group actions", pass, format!("max relative change: D4 {d4:.2e} ({rejected} near-pole draws replaced), 3D case 2 {c2:.2e}, 3D case 1 {c1:.2e} (tol 1e-8)"))
}

/// ψ-derivatives by repeated symbolic differentiation.
fn oracle_derivs(e: &Expr, var: &str, env: &HashMap<&str, f64>, k: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut cur = e.clone();
    for _ in 0..=k {
        out.push(cur.eval_f64(env).unwrap());
        cur = cur.diff(var);
    }
    out
}

fn oracle_ij(p: &[f64]) -> (f64, f64) {
    let d = 2.0 * p[1] * p[3] - 3.0 * p[2] * p[2];
    let n = p[1] * p[1] * p[4] - 4.0 * p[1] * p[2] * p[3] + 3.0 * p[2].powi(3);
    let m = p[1] * (p[1] * p[1] * p[5] - 5.0 * p[1] * p[2] * p[4] + 5.0 * p[2] * p[2] * p[3]);
    (n * n / d.powi(3), m / (d * d))
}

fn derived_values() -> Outcome {
    let mut pass = true;
    let mut float_dev: f64 = 0.0;
    let mut notes = Vec::new();
    let psi_cases: [(&str, f64, i64, (f64, f64), (Exact, Exact)); 3] = [
        ("exp(t)", 0.0, 0, (0.0, 1.0), (q(0, 1), q(1, 1))),
        ("t^2", 1.0, 1, (-1.0 / 3.0, 0.0), (q(-1, 3), q(0, 1))),
        ("t^3 + t", 1.0, 1, (-3.0 / 125.0, 1.2), (q(-3, 125), q(6, 5))),
    ];
    for (src, t, t_exact, want, want_exact) in psi_cases {
        let e = parse(src).unwrap();
        let env = HashMap::from([("t", t)]);
        let oracle = oracle_ij(&oracle_derivs(&e, "t", &env, 5));
        let exact = invariant_ij(&PsiJet::from_expr(&e, q(t_exact, 1), 5).unwrap()).unwrap();
        let float = invariant_ij(&PsiJet::from_expr(&e, t, 5).unwrap()).unwrap();
        pass &= (exact.i.clone(), exact.j.clone()) == want_exact;
        pass &= rel_close(oracle.0, want.0, 1e-12) && rel_close(oracle.1, want.1, 1e-12);
        float_dev = float_dev.max((float.i - want.0).abs()).max((float.j - want.1).abs());
        notes.push(format!("{src}: ({}, {})", exact.i, exact.j));
    }
    // e^t and t² are constant along t; check away from the base point too
    for (src, t, want) in [("exp(t)", 0.7, (0.0, 1.0)), ("t^2", 1.9, (-1.0 / 3.0, 0.0))] {
        let v = invariant_ij(&PsiJet::from_expr(&parse(src).unwrap(), t, 5).unwrap()).unwrap();
        float_dev = float_dev.max((v.i - want.0).abs()).max((v.j - want.1).abs());
    }
    let (a, c) = (parse("1/u").unwrap(), parse("2/u^2").unwrap());
    let exact = invariants_3d2(&Case2Jet::from_exprs(&a, &c, q(1, 1), 2).unwrap()).unwrap();
    pass &= exact == [q(-2, 1), q(2, 1), q(-8, 1)];
    let env = HashMap::from([("u", 1.0)]);
    let (da, dc) = (oracle_derivs(&a, "u", &env, 2), oracle_derivs(&c, "u", &env, 2));
    let oracle = [
        (da[0] * dc[1] - dc[0] * da[1]) * (da[0] / da[1]).powi(4),
        da[0] * da[2] / (da[1] * da[1]),
        (da[0] * dc[2] - dc[0] * da[2]) * (da[0] / da[1]).powi(5),
    ];
    pass &= rel_close(oracle[0], -2.0, 1e-12) && rel_close(oracle[1], 2.0, 1e-12) && rel_close(oracle[2], -8.0, 1e-12);
    for u in [1.0, 0.6] {
        let v = invariants_3d2(&Case2Jet::from_exprs(&a, &c, u, 2).unwrap()).unwrap();
        float_dev = float_dev.max((v[0] + 2.0).abs()).max((v[1] - 2.0).abs()).max((v[2] + 8.0).abs());
    }
    notes.push(format!("(1/u, 2/u^2): ({}, {}, {})", exact[0], exact[1], exact[2]));
    let f = parse("ln(u - x)/2").unwrap();
    let exact = invariants_3d1(&f_jet(&f, q(0, 1), q(1, 1), 4).unwrap()).unwrap();
    pass &= (exact.i.clone(), exact.j.clone()) == (q(-9, 1), q(-13, 1));
    let env = HashMap::from([("x", 0.0), ("u", 1.0)]);
    let d = |vars: &[&str]| vars.iter().fold(f.clone(), |e, v| e.diff(v)).eval_f64(&env).unwrap();
    let (fu, fx, fux, fuux, fuxx, fuuxx) = (d(&["u"]), d(&["x"]), d(&["u", "x"]), d(&["u", "u", "x"]), d(&["u", "x", "x"]), d(&["u", "u", "x", "x"]));
    let oi = (-2.0 * fu * fux + fuux) * (fx * fux + fuxx) / fux.powi(3);
    let oj = (-2.0 * fu * fx * fux - 2.0 * fu * fuxx + fx * fuux + fuuxx) / (fux * fux);
    pass &= rel_close(oi, -9.0, 1e-12) && rel_close(oj, -13.0, 1e-12);
    for (x, u) in [(0.0, 1.0), (-0.4, 0.9)] {
        let v = invariants_3d1(&f_jet(&f, x, u, 4).unwrap()).unwrap();
        float_dev = float_dev.max((v.i + 9.0).abs()).max((v.j + 13.0).abs());
    }
    notes.push(format!("ln(u-x)/2: ({}, {})", exact.i, exact.j));
    pass &= float_dev <= 1e-12;
    report(7, "derived signature values", pass, format!("exact {}; float max dev {float_dev:.2e} (tol 1e-12)", notes.join("; ")))
}

fn symmetry_kernels() -> Outcome {
    let cases: [(&str, (f64, f64), usize, Option<[f64; 5]>); 7] = [
        ("t", (0.5, 2.0), 2, None),
        ("exp(t)", (-1.0, 1.0), 1, Some([2.0, 0.0, 0.0, 1.0, 0.0])),
        ("tan(t)", (-1.0, 1.0), 1, Some([1.0, 0.0, -1.0, 0.0, -1.0])),
        ("t^2", (0.5, 2.0), 1, Some([0.0, 1.0, 0.0, 2.0, 0.0])),
        ("3*ln(t)", (0.5, 2.0), 1, Some([0.0, 1.0, -6.0, 0.0, 0.0])),
        ("tan(ln(t))", (0.5, 2.0), 1, Some([0.0, 1.0, -2.0, 0.0, -2.0])),
        ("t^3 + t", (0.5, 2.0), 0, None),
    ];
    let mut pass = true;
    let mut dims = Vec::new();
    for (src, iv, want, pattern) in cases {
        let ts = sample_interval(iv.0, iv.1, 16, DEFAULT_SEED);
        let k = psi_symmetry_kernel(&parse(src).unwrap(), &ts).unwrap();
        pass &= k.dim == want;
        if let Some(p) = pattern {
            let n = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            let b = &k.basis[0];
            // kernel vectors are defined up to sign
            let same = |sg: f64| b.iter().zip(p).all(|(x, y)| (x - sg * y / n).abs() <= 1e-7);
            pass &= same(1.0) || same(-1.0);
        }
        dims.push(format!("{src}:{}", k.dim));
    }
    let (r1, r2) = (
        classify_default(&ClassifyInput::Psi { psi: "3*ln(t)".into(), interval: (0.5, 2.0) }).unwrap(),
        classify_default(&ClassifyInput::Psi { psi: "t^2".into(), interval: (0.5, 2.0) }).unwrap(),
    );
    let a_log = r1.param("A").unwrap();
    let a_pow = r2.param("A").unwrap();
    pass &= r1.kind == Kind::Log && (a_log - 3.0).abs() <= 1e-6;
    pass &= r2.kind == Kind::Power && (a_pow - 2.0).abs() <= 1e-6;
    report(8, "symmetry kernels", pass, format!("dims {}; A(Log) = {a_log:.9}, A(Power) = {a_pow:.9}", dims.join(" ")))
}

fn killing_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED ^ 9);
    let mut worst: f64 = 0.0;
    let mut lam: f64 = 0.0;
    let mut count = 0;
    for i in 0..5 {
        let (c2, c3) = (rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
        let psi = parse(&format!("t + {c2}*t^2 + {c3}*t^3")).unwrap();
        let n = 2 + i % 2;
        let e = catalog::make_dim_ge4(&psi, n, 1).unwrap();
        for f in catalog::killing_fields(n) {
            for p in e.sample_points(5, DEFAULT_SEED + i as u64).unwrap() {
                let r = lie_derivative_check(&e.structure, &f.components, &p).unwrap();
                worst = worst.max(r.metric_residual.max(r.form_residual) / r.scale);
                lam = lam.max(r.lambda.abs());
                count += 1;
            }
        }
    }
    let mut model: f64 = 0.0;
    for name in ["homogeneous4", "homogeneous5"] {
        let e = catalog::entry(name).unwrap();
        for f in &e.fields {
            for p in e.sample_points(5, DEFAULT_SEED).unwrap() {
                let r = lie_derivative_check(&e.structure, &f.components, &p).unwrap();
                model = model.max(r.metric_residual.max(r.form_residual) / r.scale).max(r.lambda.abs());
            }
        }
    }
    let pass = worst <= 1e-9 && lam <= 1e-9 && model <= 1e-9;
    report(9, "Killing suite", pass, format!("{count} checks: residual {worst:.2e}, |lambda| {lam:.2e}; homogeneous model algebra {model:.2e} (tol 1e-9)"))
}

fn equivalence() -> Outcome {
    let psi = |s: &str| CurveSource::Psi { psi: s.into() };
    let cubic = signature_curve(&psi("t^3 + t"), &[(0.5, 2.0)], 64).unwrap();
    let mut pass = true;
    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED ^ 3);
    let mut worst_d: f64 = 0.0;
    for _ in 0..3 {
        let g = GroupElemD4::random(&mut rng);
        let pushed = pushforward_psi(&g, &parse("t^3 + t").unwrap());
        let (lo, hi) = g.map_interval(0.5, 2.0);
        let img = signature_curve(&psi(&pushed.to_string()), &[(lo, hi)], 64).unwrap();
        let r = equivalence_test(&cubic, &img, EQUIVALENCE_TOL).unwrap();
        pass &= r.verdict == Verdict::Equivalent;
        worst_d = worst_d.max(r.distance.unwrap_or(f64::INFINITY));
    }
    let (a, c) = (parse("exp(u) + u^2").unwrap(), parse("sin(u)").unwrap());
    let base = signature_curve(&CurveSource::Case2 { a: a.to_string(), c: c.to_string() }, &[(0.2, 1.2)], 64).unwrap();
    let g = GroupElem3D2::new(0.4, -0.3, 1.3, -0.7).unwrap();
    let (pa, pc) = pushforward_3d2(&g, &a, &c);
    let (lo, hi) = (g.map_u(0.2).min(g.map_u(1.2)), g.map_u(0.2).max(g.map_u(1.2)));
    let img = signature_curve(&CurveSource::Case2 { a: pa.to_string(), c: pc.to_string() }, &[(lo, hi)], 64).unwrap();
    let r = equivalence_test(&base, &img, EQUIVALENCE_TOL).unwrap();
    pass &= r.verdict == Verdict::Equivalent;
    worst_d = worst_d.max(r.distance.unwrap_or(f64::INFINITY));
    let quintic = signature_curve(&psi("t^5 + t"), &[(0.5, 2.0)], 64).unwrap();
    let distinct = equivalence_test(&cubic, &quintic, EQUIVALENCE_TOL).unwrap();
    pass &= distinct.verdict == Verdict::Distinct;
    let exp = signature_curve(&psi("exp(t)"), &[(-1.0, 1.0)], 32).unwrap();
    let tan = signature_curve(&psi("tan(t)"), &[(-1.0, 1.0)], 32).unwrap();
    let deg = equivalence_test(&exp, &tan, EQUIVALENCE_TOL).unwrap();
    pass &= deg.verdict == Verdict::Degenerate && deg.signs == (vec![-1], vec![1]);
    report(
        10,
        "equivalence decider",
        pass,
        format!(
            "pushforwards Equivalent (max distance {worst_d:.2e}); cubic vs quintic {:?} ({}); exp vs tan {:?} signs {:?}",
            distinct.verdict,
            distinct.reason,
            deg.verdict,
            deg.signs
        ),
    )
}

fn einstein_weyl(entries: &[catalog::CatalogEntry]) -> Outcome {
    let mut dkp: f64 = 0.0;
    let mut ew: f64 = 0.0;
    let mut others = f64::INFINITY;
    for e in entries {
        let is_case2 = matches!(e.family(), FamilyTag::ThreeDCaseTwo | FamilyTag::EinsteinWeylModel);
        let non_ew = e.dim() >= 4 || e.family() == FamilyTag::ThreeDCaseOne;
        for p in points(e) {
            let r = ew_residual_entry(e, &p).unwrap();
            if is_case2 {
                dkp = dkp.max(r.dkp_residual.unwrap().abs());
                ew = ew.max(r.residual);
            } else if non_ew {
                others = others.min(r.residual);
            }
        }
    }
    let pass = dkp <= 1e-10 && ew <= 1e-9 && others > 1e-3;
    report(
        11,
        "Einstein-Weyl",
        pass,
        format!("3D case 2: dKP {dkp:.2e} (tol 1e-10), EW {ew:.2e} (tol 1e-9); others: min EW residual {others:.3e} (> 1e-3)"),
    )
}

// Runs without the libtest harness so the criterion lines are never captured.
fn main() {
    let entries = catalog::entries();
    let outcomes = vec![
        construction_identity(&entries),
        recurrence_and_weight(&entries),
        holonomy(&entries),
        conformal_flatness(&entries),
        riccati_gate(),
        invariance(),
        derived_values(),
        symmetry_kernels(),
        killing_suite(),
        equivalence(),
        einstein_weyl(&entries),
    ];
    for o in &outcomes {
        println!("criterion {:>2} {} {}: {}", o.id, if o.pass { "PASS" } else { "FAIL" }, o.title, o.detail);
    }
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: {} of {} criteria pass", outcomes.len(), outcomes.len());
}
