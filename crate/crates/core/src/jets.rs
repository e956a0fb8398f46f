//! Truncated multivariate Taylor polynomials ("jets").
//!
//! A [`Jet`] in `m` variables of order `k` stores the Taylor coefficients
//! `c_α = ∂^α f / α!` of a function at a base point for every multi-index
//! `|α| ≤ k`. Coefficients are laid out densely in graded order, so the
//! order-`k'` truncation of a jet is a prefix of its coefficient vector.
//!
//! Arithmetic requires identical shape and base point. The `std::ops`
//! impls panic on mismatch; the `try_*` methods report it as an error.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use thiserror::Error;

use crate::scalar::Scalar;

/// Default truncation order: enough for the order-6 invariant derivation.
pub const DEFAULT_ORDER: usize = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JetError {
    #[error("jet shape mismatch: ({0} vars, order {1}) vs ({2} vars, order {3})")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("jets have different base points")]
    BaseMismatch,
    #[error("division by a jet with zero constant term")]
    ZeroDivision,
    #[error("{func} is not defined at {value}")]
    Domain { func: &'static str, value: f64 },
    #[error("{func} has no exact rational value at {value}")]
    NotExact { func: &'static str, value: f64 },
    #[error("jet of order {have} cannot supply order {need}")]
    OrderTooLow { have: usize, need: usize },
}

/// Multi-index layout shared by all jets with the same `(nvars, order)`.
pub struct JetShape {
    nvars: usize,
    order: usize,
    indices: Vec<Vec<u8>>,
    lookup: HashMap<Vec<u8>, usize>,
    /// `(i, j, target)` with `indices[i] + indices[j] == indices[target]`.
    products: Vec<(u32, u32, u32)>,
}

impl fmt::Debug for JetShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "JetShape({} vars, order {})", self.nvars, self.order)
    }
}

impl JetShape {
    pub fn get(nvars: usize, order: usize) -> Arc<JetShape> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<JetShape>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("jet shape cache poisoned");
        guard
            .entry((nvars, order))
            .or_insert_with(|| Arc::new(JetShape::build(nvars, order)))
            .clone()
    }

    fn build(nvars: usize, order: usize) -> JetShape {
        let mut indices = Vec::new();
        for degree in 0..=order {
            let mut current = vec![0u8; nvars];
            push_degree(&mut indices, &mut current, 0, degree);
        }
        let lookup: HashMap<Vec<u8>, usize> =
            indices.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        let degrees: Vec<usize> = indices.iter().map(|a| degree_of(a)).collect();
        let mut products = Vec::new();
        let mut sum = vec![0u8; nvars];
        for (i, a) in indices.iter().enumerate() {
            for (j, b) in indices.iter().enumerate() {
                if degrees[i] + degrees[j] > order {
                    // graded layout: later j only grow in degree
                    if degrees[j] > order - degrees[i] {
                        break;
                    }
                    continue;
                }
                for v in 0..nvars {
                    sum[v] = a[v] + b[v];
                }
                products.push((i as u32, j as u32, lookup[&sum] as u32));
            }
        }
        JetShape { nvars, order, indices, lookup, products }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<u8>] {
        &self.indices
    }

    pub fn index_of(&self, alpha: &[u8]) -> Option<usize> {
        self.lookup.get(alpha).copied()
    }
}

fn push_degree(out: &mut Vec<Vec<u8>>, current: &mut Vec<u8>, var: usize, remaining: usize) {
    if current.is_empty() {
        if remaining == 0 {
            out.push(Vec::new());
        }
        return;
    }
    if var == current.len() - 1 {
        current[var] = remaining as u8;
        out.push(current.clone());
        current[var] = 0;
        return;
    }
    for take in (0..=remaining).rev() {
        current[var] = take as u8;
        push_degree(out, current, var + 1, remaining - take);
    }
    current[var] = 0;
}

fn degree_of(alpha: &[u8]) -> usize {
    alpha.iter().map(|&a| a as usize).sum()
}

fn multi_factorial(alpha: &[u8]) -> i64 {
    alpha.iter().map(|&a| (1..=a as i64).product::<i64>()).product()
}

/// Truncated Taylor expansion at a base point.
#[derive(Clone)]
pub struct Jet<S: Scalar> {
    shape: Arc<JetShape>,
    base: Arc<[S]>,
    coeffs: Vec<S>,
}

impl<S: Scalar> fmt::Debug for Jet<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jet")
            .field("nvars", &self.shape.nvars)
            .field("order", &self.shape.order)
            .field("base", &self.base)
            .field("coeffs", &self.coeffs)
            .finish()
    }
}

impl<S: Scalar> PartialEq for Jet<S> {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.shape, &other.shape) && self.base == other.base && self.coeffs == other.coeffs
    }
}

impl<S: Scalar> Jet<S> {
    pub fn constant(nvars: usize, order: usize, base: &[S], value: S) -> Self {
        assert_eq!(base.len(), nvars, "base point dimension");
        let shape = JetShape::get(nvars, order);
        let mut coeffs = vec![S::zero(); shape.len()];
        coeffs[0] = value;
        Jet { shape, base: base.into(), coeffs }
    }

    /// The coordinate function `x_var` expanded at `base`.
    pub fn variable(nvars: usize, order: usize, base: &[S], var: usize) -> Self {
        let mut jet = Self::constant(nvars, order, base, base[var].clone());
        if order > 0 {
            let mut alpha = vec![0u8; nvars];
            alpha[var] = 1;
            let idx = jet.shape.index_of(&alpha).expect("first-order index");
            jet.coeffs[idx] = S::one();
        }
        jet
    }

    /// Builds a jet from Taylor coefficients in the shape's graded order.
    pub fn from_coeffs(nvars: usize, order: usize, base: &[S], coeffs: Vec<S>) -> Self {
        let shape = JetShape::get(nvars, order);
        assert_eq!(coeffs.len(), shape.len(), "coefficient count");
        assert_eq!(base.len(), nvars, "base point dimension");
        Jet { shape, base: base.into(), coeffs }
    }

    /// Univariate jet from Taylor coefficients `[c0, c1, ..., ck]`.
    pub fn univariate(base: S, coeffs: Vec<S>) -> Self {
        let order = coeffs.len().saturating_sub(1);
        Self::from_coeffs(1, order, &[base], coeffs)
    }

    /// Univariate jet from raw derivatives `[f, f', f'', ...]`.
    pub fn from_derivatives(base: S, derivs: &[S]) -> Self {
        let mut fact = S::one();
        let coeffs = derivs
            .iter()
            .enumerate()
            .map(|(k, d)| {
                if k > 0 {
                    fact = fact.clone() * S::from_i64(k as i64);
                }
                d.clone() / fact.clone()
            })
            .collect();
        Self::univariate(base, coeffs)
    }

    fn like(&self, coeffs: Vec<S>) -> Self {
        Jet { shape: self.shape.clone(), base: self.base.clone(), coeffs }
    }

    pub fn zero_like(&self) -> Self {
        self.like(vec![S::zero(); self.coeffs.len()])
    }

    pub fn constant_like(&self, value: S) -> Self {
        let mut out = self.zero_like();
        out.coeffs[0] = value;
        out
    }

    pub fn shape(&self) -> &Arc<JetShape> {
        &self.shape
    }

    pub fn nvars(&self) -> usize {
        self.shape.nvars
    }

    pub fn order(&self) -> usize {
        self.shape.order
    }

    pub fn base(&self) -> &[S] {
        &self.base
    }

    pub fn coeffs(&self) -> &[S] {
        &self.coeffs
    }

    pub fn value(&self) -> &S {
        &self.coeffs[0]
    }

    /// Taylor coefficient for `alpha`, zero beyond the truncation order.
    pub fn coeff(&self, alpha: &[u8]) -> S {
        self.shape.index_of(alpha).map_or_else(S::zero, |i| self.coeffs[i].clone())
    }

    /// Raw partial derivative `∂^α f` (Taylor coefficient times `α!`).
    pub fn partial(&self, alpha: &[u8]) -> S {
        self.coeff(alpha) * S::from_i64(multi_factorial(alpha))
    }

    /// All raw partial derivatives keyed by multi-index.
    pub fn partials(&self) -> BTreeMap<Vec<u8>, S> {
        self.shape
            .indices
            .iter()
            .zip(&self.coeffs)
            .map(|(a, c)| (a.clone(), c.clone() * S::from_i64(multi_factorial(a))))
            .collect()
    }

    /// Raw derivatives of a univariate jet, `[f, f', ..., f^(k)]`.
    pub fn derivatives(&self) -> Vec<S> {
        assert_eq!(self.nvars(), 1, "derivatives() needs a univariate jet");
        (0..=self.order()).map(|k| self.partial(&[k as u8])).collect()
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs[1..].iter().all(Scalar::is_zero)
    }

    pub fn truncate(&self, order: usize) -> Self {
        assert!(order <= self.order(), "truncate cannot raise the order");
        let shape = JetShape::get(self.nvars(), order);
        let coeffs = self.coeffs[..shape.len()].to_vec();
        Jet { shape, base: self.base.clone(), coeffs }
    }

    /// `∂f/∂x_var` as a jet of one lower order.
    pub fn derivative(&self, var: usize) -> Result<Self, JetError> {
        if self.order() == 0 {
            return Err(JetError::OrderTooLow { have: 0, need: 1 });
        }
        let shape = JetShape::get(self.nvars(), self.order() - 1);
        let mut src = vec![0u8; self.nvars()];
        let coeffs = shape
            .indices
            .iter()
            .map(|beta| {
                src.copy_from_slice(beta);
                src[var] += 1;
                let i = self.shape.index_of(&src).expect("raised index in shape");
                self.coeffs[i].clone() * S::from_i64(src[var] as i64)
            })
            .collect();
        Ok(Jet { shape, base: self.base.clone(), coeffs })
    }

    fn check(&self, other: &Self) -> Result<(), JetError> {
        if !Arc::ptr_eq(&self.shape, &other.shape) {
            return Err(JetError::ShapeMismatch(
                self.nvars(),
                self.order(),
                other.nvars(),
                other.order(),
            ));
        }
        if !Arc::ptr_eq(&self.base, &other.base) && self.base != other.base {
            return Err(JetError::BaseMismatch);
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, JetError> {
        self.check(other)?;
        Ok(self.like(
            self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a.clone() + b.clone()).collect(),
        ))
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, JetError> {
        self.check(other)?;
        Ok(self.like(
            self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a.clone() - b.clone()).collect(),
        ))
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self, JetError> {
        self.check(other)?;
        let mut out = vec![S::zero(); self.coeffs.len()];
        for &(i, j, t) in &self.shape.products {
            let (a, b) = (&self.coeffs[i as usize], &other.coeffs[j as usize]);
            if a.is_zero() || b.is_zero() {
                continue;
            }
            let t = t as usize;
            out[t] = out[t].clone() + a.clone() * b.clone();
        }
        Ok(self.like(out))
    }

    pub fn try_div(&self, other: &Self) -> Result<Self, JetError> {
        self.check(other)?;
        self.try_mul(&other.recip()?)
    }

    pub fn scale(&self, factor: &S) -> Self {
        self.like(self.coeffs.iter().map(|c| c.clone() * factor.clone()).collect())
    }

    pub fn add_scalar(&self, value: &S) -> Self {
        let mut out = self.clone();
        out.coeffs[0] = out.coeffs[0].clone() + value.clone();
        out
    }

    /// `Σ c_j (self − self(0))^j` for univariate Taylor coefficients `c`.
    pub fn compose_series(&self, series: &[S]) -> Self {
        let mut delta = self.clone();
        delta.coeffs[0] = S::zero();
        let k = self.order().min(series.len().saturating_sub(1));
        let mut acc = self.constant_like(series[k].clone());
        for c in series[..k].iter().rev() {
            acc = &acc * &delta;
            acc.coeffs[0] = acc.coeffs[0].clone() + c.clone();
        }
        acc
    }

    fn guard(func: &'static str, v: &S, ok: bool) -> Result<(), JetError> {
        if ok {
            Ok(())
        } else {
            Err(JetError::Domain { func, value: v.to_f64() })
        }
    }

    fn exact(func: &'static str, v: &S, r: Option<S>) -> Result<S, JetError> {
        r.ok_or(JetError::NotExact { func, value: v.to_f64() })
    }

    pub fn recip(&self) -> Result<Self, JetError> {
        let a0 = self.value();
        if a0.is_zero() {
            return Err(JetError::ZeroDivision);
        }
        let inv = S::one() / a0.clone();
        let mut series = Vec::with_capacity(self.order() + 1);
        let mut term = inv.clone();
        for _ in 0..=self.order() {
            series.push(term.clone());
            term = -(term * inv.clone());
        }
        Ok(self.compose_series(&series))
    }

    pub fn exp(&self) -> Result<Self, JetError> {
        let a0 = self.value();
        let e = Self::exact("exp", a0, a0.exp())?;
        if !e.is_finite() {
            return Err(JetError::Domain { func: "exp", value: a0.to_f64() });
        }
        let mut series = Vec::with_capacity(self.order() + 1);
        let mut term = e;
        for j in 0..=self.order() {
            if j > 0 {
                term = term / S::from_i64(j as i64);
            }
            series.push(term.clone());
        }
        Ok(self.compose_series(&series))
    }

    pub fn ln(&self) -> Result<Self, JetError> {
        let a0 = self.value();
        Self::guard("ln", a0, a0.sign() > 0)?;
        let l = Self::exact("ln", a0, a0.ln())?;
        let inv = S::one() / a0.clone();
        let mut series = vec![l];
        let mut pow = S::one();
        for j in 1..=self.order() {
            pow = pow * inv.clone();
            let mut c = pow.clone() / S::from_i64(j as i64);
            if j % 2 == 0 {
                c = -c;
            }
            series.push(c);
        }
        Ok(self.compose_series(&series))
    }

    fn trig_series(&self, s: S, c: S, cosine: bool) -> Vec<S> {
        // derivatives of sin cycle through sin, cos, -sin, -cos
        let cycle = if cosine {
            [c.clone(), -s.clone(), -c, s]
        } else {
            [s.clone(), c.clone(), -s, -c]
        };
        let mut fact = S::one();
        (0..=self.order())
            .map(|j| {
                if j > 0 {
                    fact = fact.clone() * S::from_i64(j as i64);
                }
                cycle[j % 4].clone() / fact.clone()
            })
            .collect()
    }

    pub fn sin(&self) -> Result<Self, JetError> {
        let a0 = self.value();
        let s = Self::exact("sin", a0, a0.sin())?;
        let c = Self::exact("sin", a0, a0.cos())?;
        Ok(self.compose_series(&self.trig_series(s, c, false)))
    }

    pub fn cos(&self) -> Result<Self, JetError> {
        let a0 = self.value();
        let s = Self::exact("cos", a0, a0.sin())?;
        let c = Self::exact("cos", a0, a0.cos())?;
        Ok(self.compose_series(&self.trig_series(s, c, true)))
    }

    pub fn tan(&self) -> Result<Self, JetError> {
        let a0 = self.value();
        let c = Self::exact("tan", a0, a0.cos())?;
        Self::guard("tan", a0, !c.is_negligible(&S::one(), 1e-15))?;
        self.sin()?.try_div(&self.cos()?)
    }

    pub fn sqrt(&self) -> Result<Self, JetError> {
        let a0 = self.value();
        Self::guard("sqrt", a0, a0.sign() > 0)?;
        let root = Self::exact("sqrt", a0, a0.sqrt())?;
        let half = S::one() / S::from_i64(2);
        Ok(self.compose_series(&binomial_series(&root, a0, &half, self.order())))
    }

    /// `self^r` for real `r`. Integer exponents use exact repeated products
    /// and are valid at any base value (nonzero for negative `r`).
    pub fn pow(&self, r: &S) -> Result<Self, JetError> {
        if let Some(n) = r.as_integer() {
            return self.powi(n);
        }
        let a0 = self.value();
        Self::guard("pow", a0, a0.sign() > 0)?;
        let head = Self::exact("pow", a0, a0.powr(r))?;
        Ok(self.compose_series(&binomial_series(&head, a0, r, self.order())))
    }

    pub fn powi(&self, n: i64) -> Result<Self, JetError> {
        let mut result = self.constant_like(S::one());
        let mut base = self.clone();
        let mut e = n.unsigned_abs();
        while e > 0 {
            if e & 1 == 1 {
                result = &result * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        if n < 0 {
            result.recip()
        } else {
            Ok(result)
        }
    }

    /// Substitutes jets for the variables: returns `Σ c_α Π (args_i − args_i(0))^α_i`.
    /// The constant terms of `args` are expected to equal this jet's base point.
    pub fn substitute(&self, args: &[Jet<S>]) -> Result<Jet<S>, JetError> {
        assert_eq!(args.len(), self.nvars(), "one argument per variable");
        let template = args.first().cloned().ok_or(JetError::OrderTooLow { have: 0, need: 1 })?;
        for a in args {
            template.check(a)?;
        }
        let k = self.order();
        let powers: Vec<Vec<Jet<S>>> = args
            .iter()
            .map(|a| {
                let mut d = a.clone();
                d.coeffs[0] = S::zero();
                let mut p = vec![template.constant_like(S::one())];
                for _ in 0..k {
                    let next = p.last().unwrap() * &d;
                    p.push(next);
                }
                p
            })
            .collect();
        let mut acc = template.zero_like();
        for (alpha, c) in self.shape.indices.iter().zip(&self.coeffs) {
            if c.is_zero() {
                continue;
            }
            let mut term = template.constant_like(c.clone());
            for (v, &e) in alpha.iter().enumerate() {
                if e > 0 {
                    term = &term * &powers[v][e as usize];
                }
            }
            acc = &acc + &term;
        }
        Ok(acc)
    }

    /// Converts the coefficient field (e.g. exact rationals to floats).
    pub fn map_scalar<T: Scalar>(&self, f: impl Fn(&S) -> T) -> Jet<T> {
        let base: Vec<T> = self.base.iter().map(&f).collect();
        Jet { shape: self.shape.clone(), base: base.into(), coeffs: self.coeffs.iter().map(f).collect() }
    }
}

fn binomial_series<S: Scalar>(head: &S, a0: &S, r: &S, order: usize) -> Vec<S> {
    // a0^r * C(r, j) / a0^j
    let inv = S::one() / a0.clone();
    let mut out = Vec::with_capacity(order + 1);
    let mut coef = head.clone();
    for j in 0..=order {
        if j > 0 {
            coef = coef * (r.clone() - S::from_i64(j as i64 - 1)) / S::from_i64(j as i64) * inv.clone();
        }
        out.push(coef.clone());
    }
    out
}

impl<S: Scalar> Add for &Jet<S> {
    type Output = Jet<S>;
    fn add(self, rhs: &Jet<S>) -> Jet<S> {
        self.try_add(rhs).expect("jet add")
    }
}

impl<S: Scalar> Sub for &Jet<S> {
    type Output = Jet<S>;
    fn sub(self, rhs: &Jet<S>) -> Jet<S> {
        self.try_sub(rhs).expect("jet sub")
    }
}

impl<S: Scalar> Mul for &Jet<S> {
    type Output = Jet<S>;
    fn mul(self, rhs: &Jet<S>) -> Jet<S> {
        self.try_mul(rhs).expect("jet mul")
    }
}

impl<S: Scalar> Neg for &Jet<S> {
    type Output = Jet<S>;
    fn neg(self) -> Jet<S> {
        self.like(self.coeffs.iter().map(|c| -c.clone()).collect())
    }
}
