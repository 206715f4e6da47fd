use serde::Serialize;

use super::{prox, GameSpec, StackedBlocks};
use crate::error::{GneError, Result};
use crate::linalg;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeasibilityResidual {
    /// dist(x_i, X_i) per agent
    pub local: Vec<f64>,
    /// max(Σ_j g_j(x_j), 0) per coupling row
    pub coupling: Vec<f64>,
}

impl FeasibilityResidual {
    pub fn max_local(&self) -> f64 {
        self.local.iter().copied().fold(0.0, f64::max)
    }

    pub fn coupling_norm(&self) -> f64 {
        linalg::norm(&self.coupling)
    }
}

fn check_dim(spec: &GameSpec, x: &[f64]) -> Result<()> {
    if x.len() != spec.layout().n() {
        return Err(GneError::DimensionMismatch {
            expected: spec.layout().n(),
            got: x.len(),
        });
    }
    Ok(())
}

pub fn feasible_set_residual(spec: &GameSpec, x: &[f64]) -> Result<FeasibilityResidual> {
    check_dim(spec, x)?;
    let local = (0..spec.n_agents())
        .map(|i| spec.agent(i).set.distance(&x[spec.layout().x_range(i)]))
        .collect();
    let coupling = spec.coupling(x).into_iter().map(|v| v.max(0.0)).collect();
    Ok(FeasibilityResidual { local, coupling })
}

/// Max of stationarity (unit-step prox-gradient map), primal infeasibility, dual infeasibility
/// max(−λ̄_k, 0) and complementarity.
pub fn kkt_residual(spec: &GameSpec, x: &[f64], lambda_bar: &[f64]) -> Result<f64> {
    check_dim(spec, x)?;
    if lambda_bar.len() != spec.m() {
        return Err(GneError::DimensionMismatch {
            expected: spec.m(),
            got: lambda_bar.len(),
        });
    }
    let dual_infeasibility = lambda_bar.iter().fold(0.0f64, |a, v| a.max(-v));
    let layout = spec.layout();
    let src = StackedBlocks { x, layout };
    let mut worst = dual_infeasibility;
    for i in 0..spec.n_agents() {
        let a = spec.agent(i);
        let xi = &x[layout.x_range(i)];
        let mut grad = vec![0.0; a.dim];
        spec.pseudogradient_block(i, &src, &mut grad);
        a.g.jac_t_mul_add(xi, lambda_bar, &mut grad);
        let v: Vec<f64> = xi.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let mut p = vec![0.0; a.dim];
        prox(i, &a.set, &a.ell, &v, 1.0, &mut p)?;
        worst = worst.max(linalg::dist(xi, &p));
    }
    let feas = feasible_set_residual(spec, x)?;
    worst = worst.max(feas.max_local()).max(feas.coupling_norm());
    let comp = linalg::dot(lambda_bar, &spec.coupling(x)).abs();
    Ok(worst.max(comp))
}
