//! Symmetrized Ricci tensor of the Weyl connection, the Einstein-Weyl residual
//! and the dKP form of the condition for `H`-type metrics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::catalog::{case2_h, CatalogEntry, CatalogError, FamilyTag};
use crate::exprlang::{EvalError, Expr, JetEnv};
use crate::tensor::{ricci_from, weyl_connection, TensorError, WeylStructure};

pub const DEFAULT_EW_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwReport {
    pub ric_sym: Vec<Vec<f64>>,
    /// `⟨Ric^sym, g⟩ / ⟨g, g⟩` in the component (Frobenius) inner product.
    pub lambda: f64,
    /// `‖Ric^sym − Λg‖`.
    pub residual: f64,
    /// `2H_vu + H_xx − (H H_v)_v`, only for `H`-type structures.
    pub dkp_residual: Option<f64>,
}

impl EwReport {
    pub fn is_einstein_weyl(&self, tol: f64) -> bool {
        self.residual <= tol && self.dkp_residual.is_none_or(|r| r.abs() <= tol)
    }
}

/// `Ric_{ab} = R^c_{acb}` of the Weyl connection, symmetrized.
pub fn ricci_sym(s: &WeylStructure, point: &[f64]) -> Result<DMatrix<f64>, TensorError> {
    let r = weyl_connection(s, point, 1)?.curvature();
    let ric = ricci_from(&r);
    Ok((&ric + ric.transpose()) * 0.5)
}

pub fn ew_residual(s: &WeylStructure, point: &[f64]) -> Result<EwReport, TensorError> {
    let ric = ricci_sym(s, point)?;
    let g = s.metric_at(point)?;
    let lambda = ric.dot(&g) / g.dot(&g);
    let residual = (&ric - &g * lambda).norm();
    let d = ric.nrows();
    Ok(EwReport {
        ric_sym: (0..d).map(|i| (0..d).map(|j| ric[(i, j)]).collect()).collect(),
        lambda,
        residual,
        dkp_residual: None,
    })
}

/// `2H_vu + H_xx − (H H_v)_v` at `(v, x, u)`, from order-2 jets of `H`.
pub fn dkp_residual(h: &Expr, point: &[f64; 3]) -> Result<f64, EvalError> {
    let env = JetEnv::coordinates(&["v", "x", "u"], point, 2);
    let j = h.eval_jet(&env)?;
    let p = |a: [u8; 3]| j.partial(&a);
    let (hv, hvv) = (p([1, 0, 0]), p([2, 0, 0]));
    Ok(2.0 * p([1, 0, 1]) + p([0, 2, 0]) - (hv * hv + j.value() * hvv))
}

/// `H` of an entry in the `g = 2dv du + (dx)² + H(du)²` form, if it has one.
pub fn entry_h(entry: &CatalogEntry) -> Result<Option<Expr>, CatalogError> {
    Ok(match entry.family() {
        FamilyTag::ThreeDCaseTwo => Some(case2_h(&entry.spec.expr("a")?, &entry.spec.expr("c")?)),
        FamilyTag::EinsteinWeylModel => Some(case2_h(&Expr::int(1), &Expr::int(0))),
        _ => None,
    })
}

/// EW report of the entry's structure, with the dKP residual for `H`-type entries.
pub fn ew_residual_entry(entry: &CatalogEntry, point: &[f64]) -> Result<EwReport, CatalogError> {
    let mut rep = ew_residual(&entry.structure, point)?;
    if let Some(h) = entry_h(entry)? {
        let p = [point[0], point[1], point[2]];
        rep.dkp_residual = Some(dkp_residual(&h, &p).map_err(TensorError::from)?);
    }
    Ok(rep)
}
