use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::AnalysisError;

/// One refinement session: time spent and corrections made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeRow {
    pub doc_id: String,
    pub rater_id: String,
    pub seconds_active: f64,
    pub added: u32,
    pub modified: u32,
    pub deleted: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub coefficients: Vec<Coefficient>,
    pub n_obs: usize,
    pub residual_std_error: f64,
    /// Rater absorbed into the intercept, when more than one rater is present.
    pub baseline_rater: Option<String>,
}

impl RegressionResult {
    pub fn get(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

/// Ordinary least squares of active minutes on the correction counts.
///
/// Columns are `intercept`, `modified`, `added`, `deleted`, then one
/// `rater:<id>` indicator per rater except the first in sorted order. A
/// rank-deficient design, or fewer than `columns + 2` rows, is rejected.
pub fn regress_time(rows: &[TimeRow]) -> Result<RegressionResult, AnalysisError> {
    let raters: Vec<&str> = rows
        .iter()
        .map(|r| r.rater_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut names: Vec<String> = ["intercept", "modified", "added", "deleted"].map(String::from).to_vec();
    names.extend(raters.iter().skip(1).map(|r| format!("rater:{r}")));
    let (n, p) = (rows.len(), names.len());
    if n < p + 2 {
        return Err(AnalysisError::DegenerateDesign(format!(
            "{n} rows for {p} coefficients; need at least {}",
            p + 2
        )));
    }

    let x = DMatrix::from_fn(n, p, |i, j| {
        let r = &rows[i];
        match j {
            0 => 1.0,
            1 => f64::from(r.modified),
            2 => f64::from(r.added),
            3 => f64::from(r.deleted),
            _ => f64::from(u8::from(r.rater_id == raters[j - 3])),
        }
    });
    let y = DVector::from_iterator(n, rows.iter().map(|r| r.seconds_active / 60.0));

    let svd = x.clone().svd(true, true);
    let s = &svd.singular_values;
    let s_max = s.max();
    let tol = s_max * f64::EPSILON * n.max(p) as f64;
    if s_max == 0.0 || s.iter().any(|&v| v <= tol) {
        return Err(AnalysisError::DegenerateDesign(
            "design matrix is rank deficient (constant or collinear predictors)".into(),
        ));
    }
    let (u, v_t) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let inv_s = DVector::from_iterator(p, s.iter().map(|v| 1.0 / v));
    let beta = v_t.transpose() * DMatrix::from_diagonal(&inv_s) * u.transpose() * &y;

    let resid = &y - &x * &beta;
    let dof = (n - p) as f64;
    let sigma2 = resid.norm_squared() / dof;
    // (XᵀX)⁻¹ = V S⁻² Vᵀ
    let inv_s2 = inv_s.map(|v| v * v);
    let cov = v_t.transpose() * DMatrix::from_diagonal(&inv_s2) * v_t * sigma2;

    let coefficients = names
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            let se = cov[(j, j)].max(0.0).sqrt();
            let z = if se > 0.0 {
                beta[j] / se
            } else {
                f64::INFINITY.copysign(beta[j])
            };
            Coefficient {
                name,
                estimate: beta[j],
                std_error: se,
                z,
            }
        })
        .collect();
    Ok(RegressionResult {
        coefficients,
        n_obs: n,
        residual_std_error: sigma2.sqrt(),
        baseline_rater: (raters.len() > 1).then(|| raters[0].to_string()),
    })
}
