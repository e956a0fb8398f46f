//! Properties of jet arithmetic and jet evaluation of expressions.

use std::collections::HashMap;

use num_rational::BigRational;
use proptest::prelude::*;

use recweyl::exprlang::{parse, JetEnv};
use recweyl::jets::{Jet, JetShape};
use recweyl::scalar::Exact;

const ORDER: usize = 4;

fn jet2(base: [f64; 2], c: &[f64]) -> Jet<f64> {
    let n = JetShape::get(2, ORDER).len();
    Jet::from_coeffs(2, ORDER, &base, c[..n].to_vec())
}

fn coeffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, 15)
}

fn close(a: &Jet<f64>, b: &Jet<f64>, tol: f64) -> bool {
    let scale = a.coeffs().iter().chain(b.coeffs()).fold(1.0f64, |m, x| m.max(x.abs()));
    a.coeffs().iter().zip(b.coeffs()).all(|(x, y)| (x - y).abs() <= tol * scale)
}

/// Random smooth expressions in `x`, `y`, defined everywhere.
fn expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![Just("x".to_string()), Just("y".to_string()), (-3i32..4).prop_map(|k| format!("({k})"))];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})*({b})")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.clone().prop_map(|a| format!("exp(({a})/4)")),
            inner.clone().prop_map(|a| format!("ln(1 + ({a})^2)")),
        ]
    })
}

fn eval(src: &str, at: [f64; 2], order: usize) -> Jet<f64> {
    parse(src).unwrap().eval_jet(&JetEnv::coordinates(&["x", "y"], &at, order)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn truncation_commutes_with_evaluation(src in expr(), x in -1.0..1.0f64, y in -1.0..1.0f64, k in 1usize..5) {
        let hi = eval(&src, [x, y], k).truncate(k - 1);
        let lo = eval(&src, [x, y], k - 1);
        prop_assert!(close(&hi, &lo, 1e-12), "{src}");
    }

    #[test]
    fn ring_axioms(a in coeffs(), b in coeffs(), c in coeffs()) {
        let (a, b, c) = (jet2([0.1, 0.2], &a), jet2([0.1, 0.2], &b), jet2([0.1, 0.2], &c));
        prop_assert!(close(&(&(&a * &b) * &c), &(&a * &(&b * &c)), 1e-13));
        prop_assert!(close(&(&a * &(&b + &c)), &(&(&a * &b) + &(&a * &c)), 1e-13));
        prop_assert!(close(&(&(&a + &b) - &b), &a, 1e-14));
        prop_assert!(close(&(&a * &b), &(&b * &a), 4.0 * f64::EPSILON));
    }

    #[test]
    fn exp_inverts_ln(mut c in coeffs(), v in 0.2..3.0f64) {
        c[0] = v;
        let j = jet2([0.0, 0.0], &c);
        prop_assert!(close(&j.ln().unwrap().exp().unwrap(), &j, 1e-11));
    }

    #[test]
    fn chain_rule(mut c in coeffs(), v in 0.2..1.2f64, which in 0usize..6) {
        c[0] = v;
        let j = jet2([0.0, 0.0], &c);
        let low = j.truncate(ORDER - 1);
        let (f, df): (Jet<f64>, Jet<f64>) = match which {
            0 => (j.exp().unwrap(), low.exp().unwrap()),
            1 => (j.ln().unwrap(), low.recip().unwrap()),
            2 => (j.sin().unwrap(), low.cos().unwrap()),
            3 => (j.cos().unwrap(), -&low.sin().unwrap()),
            4 => { let t = low.tan().unwrap(); (j.tan().unwrap(), (&t * &t).add_scalar(&1.0)) }
            _ => (j.sqrt().unwrap(), low.sqrt().unwrap().recip().unwrap().scale(&0.5)),
        };
        for var in 0..2 {
            let lhs = f.derivative(var).unwrap();
            let rhs = &df * &j.derivative(var).unwrap();
            prop_assert!(close(&lhs, &rhs, 1e-12), "function {which} var {var}");
        }
    }

    #[test]
    fn polynomial_partials_are_exact(c in prop::collection::vec(-5i64..6, 15), x0 in -4i64..5, y0 in -4i64..5) {
        // P = Σ c_ab x^a y^b, a + b ≤ 4
        let monos: Vec<(u32, u32)> = (0..=4u32).flat_map(|d| (0..=d).map(move |a| (a, d - a))).collect();
        let src = monos.iter().zip(&c).map(|((a, b), k)| format!("({k})*x^{a}*y^{b}")).collect::<Vec<_>>().join(" + ");
        let q = |n: i64| BigRational::from_integer(n.into());
        let at = [q(x0), q(y0)];
        let jet: Jet<Exact> = parse(&src).unwrap().eval_jet(&JetEnv::coordinates(&["x", "y"], &at, 4)).unwrap();
        let falling = |n: u32, k: u32| (0..k).map(|i| (n - i) as i64).product::<i64>();
        for (i, j) in &monos {
            let mut want = q(0);
            for ((a, b), k) in monos.iter().zip(&c) {
                if a >= i && b >= j {
                    want += q(k * falling(*a, *i) * falling(*b, *j) * x0.pow(a - i) * y0.pow(b - j));
                }
            }
            prop_assert_eq!(jet.partial(&[*i as u8, *j as u8]), want);
        }
    }
}

#[test]
fn central_differences_converge_quadratically() {
    let src = "sin(x)*exp(y) + x^3*y";
    let e = parse(src).unwrap();
    let at = [0.4, -0.3];
    let jet = eval(src, at, 1);
    let f = |x: f64, y: f64| e.eval_f64(&HashMap::from([("x", x), ("y", y)])).unwrap();
    for var in 0..2 {
        let exact = jet.partial(if var == 0 { &[1, 0] } else { &[0, 1] });
        let err = |h: f64| {
            let (dx, dy) = if var == 0 { (h, 0.0) } else { (0.0, h) };
            ((f(at[0] + dx, at[1] + dy) - f(at[0] - dx, at[1] - dy)) / (2.0 * h) - exact).abs()
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((3.5..4.5).contains(&ratio), "var {var}: ratio {ratio}");
    }
}
