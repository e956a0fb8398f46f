//! Differential invariants of the three coordinate-freedom actions, signature
//! curves, and the local-equivalence decider.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exprlang::{EvalError, Expr, JetEnv, ParseError};
use crate::jets::{Jet, JetError};
use crate::scalar::Scalar;

/// `|D| ≤ SINGULAR_TOL · max(|ψ₁ψ₃|, ψ₂²)` marks a homogeneous-stratum jet.
pub const SINGULAR_TOL: f64 = 1e-10;
pub const DEGENERATE_TOL: f64 = 1e-6;
pub const EQUIVALENCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InvariantError {
    #[error("singular jet: {0}")]
    Singular(&'static str),
    #[error("jet order {have} is below the required {need}")]
    OrderTooLow { have: usize, need: usize },
    #[error("Möbius pole: cψ + d = 0 at the base point")]
    MobiusPole,
    #[error("non-invertible coordinate change: {0}")]
    NonInvertible(&'static str),
    #[error("invalid group element: {0}")]
    BadElement(String),
    #[error("curves of different kinds cannot be compared")]
    FamilyMismatch,
    #[error("empty signature curve")]
    EmptyCurve,
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Jet(#[from] JetError),
}

type Res<T> = Result<T, InvariantError>;

// ------------------------------------------------------------------ ψ family

/// Raw derivatives `ψ₀ … ψ_k` at `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiJet<S: Scalar> {
    pub t: S,
    pub psi: Vec<S>,
}

impl<S: Scalar> PsiJet<S> {
    pub fn new(t: S, psi: Vec<S>) -> Self {
        PsiJet { t, psi }
    }

    pub fn from_expr(psi: &Expr, t: S, order: usize) -> Res<Self> {
        let env = JetEnv::coordinates(&["t"], std::slice::from_ref(&t), order);
        let j = psi.eval_jet(&env)?;
        Ok(PsiJet { t, psi: j.derivatives() })
    }

    pub fn order(&self) -> usize {
        self.psi.len() - 1
    }

    pub fn to_jet(&self) -> Jet<S> {
        Jet::from_derivatives(self.t.clone(), &self.psi)
    }

    fn require(&self, need: usize) -> Res<()> {
        if self.order() < need {
            return Err(InvariantError::OrderTooLow { have: self.order(), need });
        }
        Ok(())
    }

    /// `ψ_k` as a jet in `t` carrying `ψ_k … ψ_{k+depth}`.
    fn lifted(&self, k: usize, depth: usize) -> Jet<S> {
        Jet::from_derivatives(self.t.clone(), &self.psi[k..=k + depth])
    }
}

/// `D = 2ψ₁ψ₃ − 3ψ₂²`.
pub fn discriminant<S: Scalar>(j: &PsiJet<S>) -> S {
    let p = &j.psi;
    S::from_i64(2) * p[1].clone() * p[3].clone() - S::from_i64(3) * p[2].clone() * p[2].clone()
}

fn discriminant_singular<S: Scalar>(j: &PsiJet<S>) -> bool {
    let p = &j.psi;
    let a = (p[1].clone() * p[3].clone()).abs();
    let b = p[2].clone() * p[2].clone();
    let scale = if a.to_f64() >= b.to_f64() { a } else { b };
    discriminant(j).is_negligible(&scale, SINGULAR_TOL)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsiInvariants<S: Scalar> {
    pub i: S,
    pub j: S,
    pub sign_d: i8,
}

/// `(I, J)` as jets over `ψ₁ … ψ₅` lifted to the given depth.
fn ij_jets<S: Scalar>(p: &[Jet<S>]) -> Res<(Jet<S>, Jet<S>)> {
    let c = |k: i64| S::from_i64(k);
    let d = &(&p[1] * &p[3]).scale(&c(2)) - &(&p[2] * &p[2]).scale(&c(3));
    let p11 = &p[1] * &p[1];
    let p22 = &p[2] * &p[2];
    let n = &(&(&p11 * &p[4]) - &(&(&p[1] * &p[2]) * &p[3]).scale(&c(4))) + &(&p22 * &p[2]).scale(&c(3));
    let m = &p[1]
        * &(&(&(&p11 * &p[5]) - &(&(&p[1] * &p[2]) * &p[4]).scale(&c(5))) + &(&p22 * &p[3]).scale(&c(5)));
    let d2 = &d * &d;
    let i = (&n * &n).try_div(&(&d2 * &d))?;
    let jj = m.try_div(&d2)?;
    Ok((i, jj))
}

/// `I = (ψ₁²ψ₄ − 4ψ₁ψ₂ψ₃ + 3ψ₂³)²/D³`, `J = ψ₁(ψ₁²ψ₅ − 5ψ₁ψ₂ψ₄ + 5ψ₂²ψ₃)/D²`.
pub fn invariant_ij<S: Scalar>(j: &PsiJet<S>) -> Res<PsiInvariants<S>> {
    j.require(5)?;
    if discriminant_singular(j) {
        return Err(InvariantError::Singular("discriminant 2ψ₁ψ₃ − 3ψ₂² vanishes"));
    }
    let lifted: Vec<Jet<S>> = (0..=5).map(|k| j.lifted(k, 0)).collect();
    let (i, jj) = ij_jets(&lifted)?;
    Ok(PsiInvariants { i: i.value().clone(), j: jj.value().clone(), sign_d: discriminant(j).sign() })
}

/// `∂̂_I J = D_t J / D_t I`.
pub fn derived_invariant<S: Scalar>(j: &PsiJet<S>) -> Res<S> {
    j.require(6)?;
    if discriminant_singular(j) {
        return Err(InvariantError::Singular("discriminant 2ψ₁ψ₃ − 3ψ₂² vanishes"));
    }
    let lifted: Vec<Jet<S>> = (0..=5).map(|k| j.lifted(k, 1)).collect();
    let (i, jj) = ij_jets(&lifted)?;
    let di = i.partial(&[1]);
    let scale = S::one() + i.value().abs();
    if di.is_negligible(&scale, 1e-9) {
        return Err(InvariantError::Singular("D_t I vanishes"));
    }
    Ok(jj.partial(&[1]) / di)
}

/// Element of `SAff₁(ℝ) × PSL₂(ℝ) × ℤ₂` acting on graphs `(t, ψ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupElemD4 {
    pub s1: f64,
    pub s2: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub eps: i8,
}

impl GroupElemD4 {
    /// Rescales `(a, b, c, d)` to unit determinant.
    pub fn new(s1: f64, s2: f64, m: [f64; 4], eps: i8) -> Res<Self> {
        let [a, b, c, d] = m;
        let det = a * d - b * c;
        if !(det > 0.0) {
            return Err(InvariantError::BadElement(format!("ad − bc = {det} must be positive")));
        }
        if eps != 1 && eps != -1 {
            return Err(InvariantError::BadElement("flip must be ±1".into()));
        }
        let r = det.sqrt();
        Ok(GroupElemD4 { s1, s2, a: a / r, b: b / r, c: c / r, d: d / r, eps })
    }

    pub fn identity() -> Self {
        GroupElemD4 { s1: 0.0, s2: 0.0, a: 1.0, b: 0.0, c: 0.0, d: 1.0, eps: 1 }
    }

    /// A random element with a mild Möbius part.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        loop {
            let a = rng.gen_range(0.5..2.0);
            let b = rng.gen_range(-1.0..1.0);
            let c = rng.gen_range(-0.2..0.2);
            let d = rng.gen_range(0.5..2.0);
            let eps = if rng.gen_bool(0.5) { 1 } else { -1 };
            if let Ok(g) = GroupElemD4::new(rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5), [a, b, c, d], eps) {
                return g;
            }
        }
    }

    /// Image of the source interval.
    pub fn map_interval(&self, lo: f64, hi: f64) -> (f64, f64) {
        let f = |t: f64| self.eps as f64 * ((2.0 * self.s2).exp() * t + self.s1);
        let (x, y) = (f(lo), f(hi));
        (x.min(y), x.max(y))
    }
}

/// Jet of the transformed function: affine source change, then Möbius target, then the flip.
pub fn act_d4(g: &GroupElemD4, j: &PsiJet<f64>) -> Res<PsiJet<f64>> {
    let scale = (-2.0 * g.s2).exp();
    let t1 = (2.0 * g.s2).exp() * j.t + g.s1;
    let mut f = 1.0;
    let derivs: Vec<f64> = j
        .psi
        .iter()
        .map(|p| {
            let v = p * f;
            f *= scale;
            v
        })
        .collect();
    let jet = Jet::from_derivatives(t1, &derivs);
    let den = jet.scale(&g.c).add_scalar(&g.d);
    if den.value().abs() <= 1e-14 * (g.c * jet.value()).abs().max(g.d.abs()) {
        return Err(InvariantError::MobiusPole);
    }
    let num = jet.scale(&g.a).add_scalar(&g.b);
    let mob = num.try_div(&den)?;
    let mut out = PsiJet { t: t1, psi: mob.derivatives() };
    if g.eps < 0 {
        out.t = -out.t;
        for (k, p) in out.psi.iter_mut().enumerate() {
            if k % 2 == 0 {
                *p = -*p;
            }
        }
    }
    Ok(out)
}

/// The transformed function as an expression in `t`.
pub fn pushforward_psi(g: &GroupElemD4, psi: &Expr) -> Expr {
    let num = crate::catalog::number;
    let t = Expr::var("t");
    let src = if g.eps < 0 { -t } else { t };
    let pre = (src - num(g.s1)) * num((-2.0 * g.s2).exp());
    let inner = psi.substitute("t", &pre);
    let mob = (num(g.a) * inner.clone() + num(g.b)) / (num(g.c) * inner + num(g.d));
    if g.eps < 0 {
        -mob
    } else {
        mob
    }
}

// ------------------------------------------------------------- 3D case two

/// Raw derivatives of `a` and `c` at `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Case2Jet<S: Scalar> {
    pub u: S,
    pub a: Vec<S>,
    pub c: Vec<S>,
}

impl<S: Scalar> Case2Jet<S> {
    pub fn from_exprs(a: &Expr, c: &Expr, u: S, order: usize) -> Res<Self> {
        let env = JetEnv::coordinates(&["u"], std::slice::from_ref(&u), order);
        Ok(Case2Jet { a: a.eval_jet(&env)?.derivatives(), c: c.eval_jet(&env)?.derivatives(), u })
    }
}

/// `A₁, A₂ ∈ ℝ`, `A₃, A₄ ≠ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupElem3D2 {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
}

impl GroupElem3D2 {
    pub fn new(a1: f64, a2: f64, a3: f64, a4: f64) -> Res<Self> {
        if a3 == 0.0 || a4 == 0.0 || !(a1.is_finite() && a2.is_finite() && a3.is_finite() && a4.is_finite()) {
            return Err(InvariantError::BadElement("A₃ and A₄ must be finite and non-zero".into()));
        }
        Ok(GroupElem3D2 { a1, a2, a3, a4 })
    }

    pub fn identity() -> Self {
        GroupElem3D2 { a1: 0.0, a2: 0.0, a3: 1.0, a4: 1.0 }
    }

    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let mag = |rng: &mut R| {
            let m: f64 = rng.gen_range(0.5..2.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        };
        let a3 = mag(rng);
        let a4 = mag(rng);
        GroupElem3D2 { a1: rng.gen_range(-1.0..1.0), a2: rng.gen_range(-1.0..1.0), a3, a4 }
    }

    pub fn map_u(&self, u: f64) -> f64 {
        self.a3 * self.a4 * u + self.a1
    }
}

/// `(u, a, c) ↦ (A₃A₄u + A₁, a/(A₃A₄²), c/(A₃²A₄) − A₂a/(A₃A₄²))` on jets.
pub fn act_3d2(g: &GroupElem3D2, j: &Case2Jet<f64>) -> Case2Jet<f64> {
    let s = g.a3 * g.a4;
    let fa = 1.0 / (g.a3 * g.a4 * g.a4);
    let fc = 1.0 / (g.a3 * g.a3 * g.a4);
    let mut pw = 1.0;
    let mut a = Vec::with_capacity(j.a.len());
    let mut c = Vec::with_capacity(j.c.len());
    for (ak, ck) in j.a.iter().zip(&j.c) {
        a.push(ak * fa * pw);
        c.push((ck * fc - g.a2 * ak * fa) * pw);
        pw /= s;
    }
    Case2Jet { u: g.map_u(j.u), a, c }
}

/// Evaluates `a, c` at the preimage of `u` and returns the transformed jets at `u`.
pub fn act_3d2_exprs(g: &GroupElem3D2, a: &Expr, c: &Expr, u: f64, order: usize) -> Res<Case2Jet<f64>> {
    let ubar = (u - g.a1) / (g.a3 * g.a4);
    Ok(act_3d2(g, &Case2Jet::from_exprs(a, c, ubar, order)?))
}

pub fn pushforward_3d2(g: &GroupElem3D2, a: &Expr, c: &Expr) -> (Expr, Expr) {
    let num = crate::catalog::number;
    let ubar = (Expr::var("u") - num(g.a1)) / num(g.a3 * g.a4);
    let ab = a.substitute("u", &ubar);
    let cb = c.substitute("u", &ubar);
    let fa = num(1.0 / (g.a3 * g.a4 * g.a4));
    let fc = num(1.0 / (g.a3 * g.a3 * g.a4));
    (fa.clone() * ab.clone(), fc * cb - num(g.a2) * fa * ab)
}

/// `I = (a₀c₁ − c₀a₁)a₀⁴/a₁⁴`, `J = a₀a₂/a₁²`, `K = (a₀c₂ − c₀a₂)a₀⁵/a₁⁵`.
pub fn invariants_3d2<S: Scalar>(j: &Case2Jet<S>) -> Res<[S; 3]> {
    if j.a.len() < 3 || j.c.len() < 3 {
        return Err(InvariantError::OrderTooLow { have: j.a.len().min(j.c.len()).saturating_sub(1), need: 2 });
    }
    let (a, c) = (&j.a, &j.c);
    if a[1].is_negligible(&a[0], 1e-12) {
        return Err(InvariantError::Singular("a′ vanishes"));
    }
    let r = a[0].clone() / a[1].clone();
    let r4 = r.powi(4);
    let i = (a[0].clone() * c[1].clone() - c[0].clone() * a[1].clone()) * r4.clone();
    let jj = a[0].clone() * a[2].clone() / (a[1].clone() * a[1].clone());
    let k = (a[0].clone() * c[2].clone() - c[0].clone() * a[2].clone()) * r4 * r;
    Ok([i, jj, k])
}

// ------------------------------------------------------------- 3D case one

/// `F` jets are two-variable jets in `(x, u)`.
pub fn f_jet<S: Scalar>(f: &Expr, x: S, u: S, order: usize) -> Res<Jet<S>> {
    let env = JetEnv::coordinates(&["x", "u"], &[x, u], order);
    Ok(f.eval_jet(&env)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Case1Invariants<S: Scalar> {
    pub i: S,
    pub j: S,
    /// `(∇₁I, ∇₂I)`, available from order-5 jets.
    pub nabla: Option<(S, S)>,
}

/// `I`, `J` and the invariant derivatives of `I` from an `F`-jet of order ≥ 4.
pub fn invariants_3d1<S: Scalar>(f: &Jet<S>) -> Res<Case1Invariants<S>> {
    let k = f.order();
    if k < 4 {
        return Err(InvariantError::OrderTooLow { have: k, need: 4 });
    }
    let (x, u) = (0, 1);
    let fx = f.derivative(x)?;
    let fu = f.derivative(u)?;
    let fux = fu.derivative(x)?;
    let fuux = fux.derivative(u)?;
    let fuxx = fux.derivative(x)?;
    let fuuxx = fuux.derivative(x)?;
    let scale = S::one() + fx.value().abs() + fu.value().abs();
    if fux.value().is_negligible(&scale, 1e-12) {
        return Err(InvariantError::Singular("F_ux vanishes"));
    }
    let o = k - 4;
    let [fx, fu, fux, fuux, fuxx] = [fx, fu, fux, fuux, fuxx].map(|j| j.truncate(o));
    let two = S::from_i64(2);
    let p = &fuux - &(&fu * &fux).scale(&two);
    let q = &(&fx * &fux) + &fuxx;
    let fux2 = &fux * &fux;
    let i = (&p * &q).try_div(&(&fux2 * &fux))?;
    let jnum = &(&(&(&(&fu * &fx) * &fux).scale(&-two.clone()) - &(&fu * &fuxx).scale(&two)) + &(&fx * &fuux))
        + &fuuxx;
    let jj = jnum.try_div(&fux2)?;
    let nabla = if o >= 1 {
        let n1 = q.try_div(&fux2)?.value().clone() * i.partial(&[0, 1]);
        let n2 = p.try_div(&fux2)?.value().clone() * i.partial(&[1, 0]);
        Some((n1, n2))
    } else {
        None
    };
    Ok(Case1Invariants { i: i.value().clone(), j: jj.value().clone(), nabla })
}

/// Jets of `α(x)`, `β(u)` and a constant `C₁` with `C₁β′ > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoElem3D1 {
    pub alpha: Jet<f64>,
    pub beta: Jet<f64>,
    pub c1: f64,
}

impl PseudoElem3D1 {
    pub fn new(alpha: Jet<f64>, beta: Jet<f64>, c1: f64) -> Res<Self> {
        if alpha.nvars() != 1 || beta.nvars() != 1 {
            return Err(InvariantError::BadElement("α and β must be univariate jets".into()));
        }
        if alpha.order() < 1 || beta.order() < 1 {
            return Err(InvariantError::OrderTooLow { have: alpha.order().min(beta.order()), need: 1 });
        }
        if alpha.coeffs()[1] == 0.0 {
            return Err(InvariantError::NonInvertible("α′ = 0"));
        }
        if beta.coeffs()[1] == 0.0 {
            return Err(InvariantError::NonInvertible("β′ = 0"));
        }
        if !(c1 * beta.coeffs()[1] > 0.0) {
            return Err(InvariantError::BadElement("C₁β′ must be positive".into()));
        }
        Ok(PseudoElem3D1 { alpha, beta, c1 })
    }

    pub fn identity(x0: f64, u0: f64, order: usize) -> Self {
        PseudoElem3D1 {
            alpha: Jet::variable(1, order, &[x0], 0),
            beta: Jet::variable(1, order, &[u0], 0),
            c1: 1.0,
        }
    }

    /// Random jets of `α` at `x0` and `β` at `u0` (Taylor coefficients of moderate size).
    pub fn random<R: Rng>(rng: &mut R, x0: f64, u0: f64, order: usize) -> Self {
        let series = |rng: &mut R, base: f64| {
            let mut c: Vec<f64> = (0..=order).map(|_| rng.gen_range(-0.3..0.3)).collect();
            c[0] = rng.gen_range(-1.0..1.0);
            let m: f64 = rng.gen_range(0.5..2.0);
            c[1] = if rng.gen_bool(0.5) { m } else { -m };
            Jet::univariate(base, c)
        };
        let alpha = series(rng, x0);
        let beta = series(rng, u0);
        let c1 = beta.coeffs()[1].signum() * rng.gen_range(0.5..2.0);
        PseudoElem3D1 { alpha, beta, c1 }
    }
}

/// `h` with `f(x0 + h(y)) = y` as a jet on the template's shape; `f` univariate.
fn inverse_series(f: &Jet<f64>, y: &Jet<f64>) -> Jet<f64> {
    let f0 = *f.value();
    let f1 = f.coeffs()[1];
    let x0 = f.base()[0];
    let target = y.add_scalar(&-f0);
    let mut h = target.scale(&(1.0 / f1));
    for _ in 0..y.order() {
        let arg = h.add_scalar(&x0);
        let fh = arg.compose_series(f.coeffs()).add_scalar(&-f0);
        h = &h - &(&fh - &target).scale(&(1.0 / f1));
    }
    h.add_scalar(&x0)
}

/// `(x, u, F) ↦ (α(x), β(u), F∘(α⁻¹, β⁻¹) − ½ ln(C₁β′/α′²))`, with `α′, β′` taken at the preimage.
pub fn act_3d1(g: &PseudoElem3D1, f: &Jet<f64>) -> Res<Jet<f64>> {
    let k = f.order();
    if g.alpha.order() < k + 1 || g.beta.order() < k + 1 {
        return Err(InvariantError::OrderTooLow { have: g.alpha.order().min(g.beta.order()), need: k + 1 });
    }
    if f.nvars() != 2 {
        return Err(InvariantError::BadElement("F must be a jet in (x, u)".into()));
    }
    if (g.alpha.base()[0], g.beta.base()[0]) != (f.base()[0], f.base()[1]) {
        return Err(InvariantError::BadElement("α, β must be based at the F-jet's point".into()));
    }
    let base = [*g.alpha.value(), *g.beta.value()];
    let xt = Jet::variable(2, k, &base, 0);
    let ut = Jet::variable(2, k, &base, 1);
    let xs = inverse_series(&g.alpha, &xt);
    let us = inverse_series(&g.beta, &ut);
    let composed = f.substitute(&[xs.clone(), us.clone()])?;
    let da = g.alpha.derivative(0)?;
    let db = g.beta.derivative(0)?;
    let ap = xs.compose_series(da.coeffs());
    let bp = us.compose_series(db.coeffs());
    let ratio = bp.scale(&g.c1).try_div(&(&ap * &ap))?;
    if !(*ratio.value() > 0.0) {
        return Err(InvariantError::BadElement("C₁β′/α′² must be positive".into()));
    }
    Ok(&composed - &ratio.ln()?.scale(&0.5))
}

/// Affine special case `α = p x + q`, `β = r u + s` as an expression.
pub fn pushforward_3d1_affine(f: &Expr, p: f64, q: f64, r: f64, s: f64, c1: f64) -> Res<Expr> {
    if p == 0.0 || r == 0.0 || !(c1 * r > 0.0) {
        return Err(InvariantError::BadElement("need p, r ≠ 0 and C₁r > 0".into()));
    }
    let num = crate::catalog::number;
    let xb = (Expr::var("x") - num(q)) / num(p);
    let ub = (Expr::var("u") - num(s)) / num(r);
    let mut map = std::collections::HashMap::new();
    map.insert("x".to_string(), xb);
    map.insert("u".to_string(), ub);
    Ok(f.substitute_all(&map) - num(0.5 * (c1 * r / (p * p)).ln()))
}

// --------------------------------------------------------- signature curves

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurveSource {
    Psi { psi: String },
    Case2 { a: String, c: String },
    Case1 { f: String },
}

impl CurveSource {
    pub fn kind(&self) -> &'static str {
        match self {
            CurveSource::Psi { .. } => "psi",
            CurveSource::Case2 { .. } => "case2",
            CurveSource::Case1 { .. } => "case1",
        }
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        match self {
            CurveSource::Psi { .. } => vec!["t"],
            CurveSource::Case2 { .. } => vec!["u"],
            CurveSource::Case1 { .. } => vec!["x", "u"],
        }
    }

    pub fn value_names(&self) -> Vec<&'static str> {
        match self {
            CurveSource::Psi { .. } => vec!["I", "J"],
            CurveSource::Case2 { .. } => vec!["I", "J", "K"],
            CurveSource::Case1 { .. } => vec!["I", "J", "nabla1_I", "nabla2_I"],
        }
    }

    fn compiled(&self) -> Res<Compiled> {
        let p = crate::exprlang::parse;
        Ok(match self {
            CurveSource::Psi { psi } => Compiled::Psi(p(psi)?),
            CurveSource::Case2 { a, c } => Compiled::Case2(p(a)?, p(c)?),
            CurveSource::Case1 { f } => Compiled::Case1(p(f)?),
        })
    }
}

enum Compiled {
    Psi(Expr),
    Case2(Expr, Expr),
    Case1(Expr),
}

impl Compiled {
    /// Invariant tuple and discriminant sign at a parameter value; `None` when singular.
    fn eval(&self, param: &[f64]) -> Option<(Vec<f64>, Option<i8>)> {
        match self {
            Compiled::Psi(psi) => {
                let j = PsiJet::from_expr(psi, param[0], 5).ok()?;
                let v = invariant_ij(&j).ok()?;
                Some((vec![v.i, v.j], Some(v.sign_d)))
            }
            Compiled::Case2(a, c) => {
                let j = Case2Jet::from_exprs(a, c, param[0], 2).ok()?;
                Some((invariants_3d2(&j).ok()?.to_vec(), None))
            }
            Compiled::Case1(f) => {
                let j = f_jet(f, param[0], param[1], 5).ok()?;
                let v = invariants_3d1(&j).ok()?;
                let (n1, n2) = v.nabla?;
                Some((vec![v.i, v.j, n1, n2], None))
            }
        }
        .filter(|(v, _)| v.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub param: Vec<f64>,
    pub values: Option<Vec<f64>>,
    pub sign_d: Option<i8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureCurve {
    pub source: CurveSource,
    pub ranges: Vec<(f64, f64)>,
    pub samples: Vec<CurveSample>,
    pub singular_count: usize,
    pub degenerate: bool,
    /// Largest coordinate spread of the tuples, relative to their size.
    pub spread: f64,
}

impl SignatureCurve {
    pub fn points(&self) -> Vec<&[f64]> {
        self.samples.iter().filter_map(|s| s.values.as_deref()).collect()
    }

    pub fn signs(&self) -> BTreeSet<i8> {
        self.samples.iter().filter(|s| s.values.is_some()).filter_map(|s| s.sign_d).collect()
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = if self.ranges.len() == 1 {
            vec!["param".into()]
        } else {
            self.source.param_names().iter().map(|n| format!("param_{n}")).collect()
        };
        h.extend(self.source.value_names().iter().map(|s| s.to_string()));
        if matches!(self.source, CurveSource::Psi { .. }) {
            h.push("sign_D".into());
        }
        h.push("singular_flag".into());
        h
    }

    /// One row per sample; singular samples carry empty value fields.
    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        let width = self.source.value_names().len();
        self.samples
            .iter()
            .map(|s| {
                let mut row: Vec<String> = s.param.iter().map(|p| format!("{p:.17e}")).collect();
                match &s.values {
                    Some(v) => row.extend(v.iter().map(|x| format!("{x:.17e}"))),
                    None => row.extend(std::iter::repeat_n(String::new(), width)),
                }
                if matches!(self.source, CurveSource::Psi { .. }) {
                    row.push(match (&s.values, s.sign_d) {
                        (Some(_), Some(sg)) => sg.to_string(),
                        _ => String::new(),
                    });
                }
                row.push(if s.values.is_some() { "0".into() } else { "1".into() });
                row
            })
            .collect()
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Samples the invariants on a uniform grid (`samples` per parameter axis).
pub fn signature_curve(source: &CurveSource, ranges: &[(f64, f64)], samples: usize) -> Res<SignatureCurve> {
    let compiled = source.compiled()?;
    let want = source.param_names().len();
    if ranges.len() != want {
        return Err(InvariantError::BadElement(format!("{} curves need {want} parameter ranges", source.kind())));
    }
    let params: Vec<Vec<f64>> = if want == 1 {
        grid(ranges[0].0, ranges[0].1, samples).into_iter().map(|t| vec![t]).collect()
    } else {
        let xs = grid(ranges[0].0, ranges[0].1, samples);
        let us = grid(ranges[1].0, ranges[1].1, samples);
        xs.iter().flat_map(|x| us.iter().map(move |u| vec![*x, *u])).collect()
    };
    let samples: Vec<CurveSample> = params
        .into_iter()
        .map(|param| match compiled.eval(&param) {
            Some((v, s)) => CurveSample { param, values: Some(v), sign_d: s },
            None => CurveSample { param, values: None, sign_d: None },
        })
        .collect();
    let singular_count = samples.iter().filter(|s| s.values.is_none()).count();
    let pts: Vec<&Vec<f64>> = samples.iter().filter_map(|s| s.values.as_ref()).collect();
    if pts.is_empty() {
        return Err(InvariantError::EmptyCurve);
    }
    let spread = relative_spread(&pts);
    Ok(SignatureCurve {
        source: source.clone(),
        ranges: ranges.to_vec(),
        samples,
        singular_count,
        degenerate: spread < DEGENERATE_TOL,
        spread,
    })
}

fn relative_spread(pts: &[&Vec<f64>]) -> f64 {
    let dim = pts[0].len();
    (0..dim)
        .map(|k| {
            let lo = pts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
            let size = lo.abs().max(hi.abs()).max(1.0);
            (hi - lo) / size
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Equivalent,
    Distinct,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub verdict: Verdict,
    pub reason: String,
    /// Symmetric Hausdorff distance divided by the diameter of both curves.
    pub distance: Option<f64>,
    pub signs: (Vec<i8>, Vec<i8>),
    pub degenerate: (bool, bool),
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Golden-section minimization of `f` on `[lo, hi]`.
fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - r * (hi - lo);
    let mut d = lo + r * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - r * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + r * (hi - lo);
            fd = f(d);
        }
    }
    fc.min(fd)
}

/// Distance from `p` to the continuous curve, refined around the nearest sample.
fn distance_to_curve(p: &[f64], curve: &SignatureCurve, compiled: &Compiled) -> f64 {
    let valid: Vec<(usize, &CurveSample)> =
        curve.samples.iter().enumerate().filter(|(_, s)| s.values.is_some()).collect();
    let (best_idx, best) = valid
        .iter()
        .map(|(i, s)| (*i, dist2(p, s.values.as_ref().unwrap())))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("curve has points");
    let param = &curve.samples[best_idx].param;
    let eval = |q: &[f64]| compiled.eval(q).map_or(f64::INFINITY, |(v, _)| dist2(p, &v));
    let refined = if param.len() == 1 {
        let step = (curve.ranges[0].1 - curve.ranges[0].0) / (curve.samples.len().max(2) - 1) as f64;
        let lo = (param[0] - step).max(curve.ranges[0].0);
        let hi = (param[0] + step).min(curve.ranges[0].1);
        golden_min(|t| eval(&[t]), lo, hi)
    } else {
        let n = (curve.samples.len() as f64).sqrt().round().max(2.0);
        let steps: Vec<f64> = curve.ranges.iter().map(|(lo, hi)| (hi - lo) / (n - 1.0)).collect();
        let mut q = param.clone();
        let mut val = best;
        for _ in 0..4 {
            for k in 0..2 {
                let lo = (q[k] - steps[k]).max(curve.ranges[k].0);
                let hi = (q[k] + steps[k]).min(curve.ranges[k].1);
                let mut qq = q.clone();
                let f = |s: f64| {
                    let mut r = q.clone();
                    r[k] = s;
                    eval(&r)
                };
                // recover the argmin by a second pass on a fine grid around the golden result
                let m = golden_min(f, lo, hi);
                if m < val {
                    let mut best_s = q[k];
                    let mut best_v = val;
                    for i in 0..=200 {
                        let s = lo + (hi - lo) * i as f64 / 200.0;
                        qq[k] = s;
                        let v = eval(&qq);
                        if v < best_v {
                            best_v = v;
                            best_s = s;
                        }
                    }
                    q[k] = best_s;
                    val = best_v.min(m);
                }
            }
        }
        val
    };
    best.min(refined).sqrt()
}

/// Decides local equivalence from two signature curves of the same kind.
pub fn equivalence_test(c1: &SignatureCurve, c2: &SignatureCurve, tol: f64) -> Res<EquivalenceReport> {
    if c1.source.kind() != c2.source.kind() {
        return Err(InvariantError::FamilyMismatch);
    }
    let signs = (c1.signs().into_iter().collect::<Vec<_>>(), c2.signs().into_iter().collect::<Vec<_>>());
    let degenerate = (c1.degenerate, c2.degenerate);
    let report = |verdict, reason: String, distance| EquivalenceReport {
        verdict,
        reason,
        distance,
        signs: signs.clone(),
        degenerate,
    };
    if c1.degenerate || c2.degenerate {
        let why = if signs.0 != signs.1 && !signs.0.is_empty() && !signs.1.is_empty() {
            "point curve; discriminant signs differ".to_string()
        } else {
            "point curve; invariants do not separate cohomogeneity-one orbits".to_string()
        };
        return Ok(report(Verdict::Degenerate, why, None));
    }
    if signs.0 != signs.1 {
        return Ok(report(Verdict::Distinct, "discriminant signs differ".into(), None));
    }
    let (p1, p2) = (c1.points(), c2.points());
    let dim = p1[0].len();
    let diameter = (0..dim)
        .map(|k| {
            let all = p1.iter().chain(&p2).map(|p| p[k]);
            let lo = all.clone().fold(f64::INFINITY, f64::min);
            let hi = all.fold(f64::NEG_INFINITY, f64::max);
            (hi - lo).powi(2)
        })
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let k1 = c1.source.compiled()?;
    let k2 = c2.source.compiled()?;
    let d12 = p1.iter().map(|p| distance_to_curve(p, c2, &k2)).fold(0.0, f64::max);
    let d21 = p2.iter().map(|p| distance_to_curve(p, c1, &k1)).fold(0.0, f64::max);
    let distance = d12.max(d21) / diameter;
    Ok(if distance <= tol {
        report(Verdict::Equivalent, "signature curves coincide".into(), Some(distance))
    } else {
        report(Verdict::Distinct, "signature curves differ".into(), Some(distance))
    })
}
