//! Closed-form kernels: the check function, the pooled check loss, the SCAD
//! and MCP penalties with their derivatives, and the full penalized
//! objective.

use crate::error::{Error, Result};
use crate::model::{
    CoefficientTensor, MultiExperimentDataset, PenaltyFamily, PenaltySpec, QuantileGrid,
};

/// Check (pinball) loss rho_tau(x) = x * (tau - 1{x < 0}).
pub fn check(tau: f64, x: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidQuantile(tau));
    }
    Ok(check_value(tau, x))
}

/// Unvalidated check loss for hot paths; callers guarantee tau in (0, 1).
#[inline(always)]
pub(crate) fn check_value(tau: f64, x: f64) -> f64 {
    if x < 0.0 {
        x * (tau - 1.0)
    } else {
        x * tau
    }
}

/// SCAD penalty: linear up to lambda, quadratic taper on (lambda, a*lambda),
/// constant (a+1)*lambda^2/2 beyond.
pub fn scad(lambda: f64, a: f64, x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::NegativeInput(x));
    }
    if !(a > 2.0) {
        return Err(Error::InvalidInput(format!(
            "SCAD shape constant must exceed 2, got {a}"
        )));
    }
    if x <= lambda {
        Ok(lambda * x)
    } else if x < a * lambda {
        Ok((a * lambda * x - (x * x + lambda * lambda) / 2.0) / (a - 1.0))
    } else {
        Ok((a + 1.0) * lambda * lambda / 2.0)
    }
}

/// Derivative of the SCAD penalty; at x = 0 the right derivative lambda.
pub fn scad_deriv(lambda: f64, a: f64, x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::NegativeInput(x));
    }
    if !(a > 2.0) {
        return Err(Error::InvalidInput(format!(
            "SCAD shape constant must exceed 2, got {a}"
        )));
    }
    if x <= lambda {
        Ok(lambda)
    } else if x < a * lambda {
        Ok((a * lambda - x) / (a - 1.0))
    } else {
        Ok(0.0)
    }
}

/// Minimax concave penalty: lambda*x - x^2/(2a) up to a*lambda, then the
/// plateau a*lambda^2/2.
pub fn mcp(lambda: f64, a: f64, x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::NegativeInput(x));
    }
    if !(a > 1.0) {
        return Err(Error::InvalidInput(format!(
            "MCP shape constant must exceed 1, got {a}"
        )));
    }
    if x <= a * lambda {
        Ok(lambda * x - x * x / (2.0 * a))
    } else {
        Ok(a * lambda * lambda / 2.0)
    }
}

/// Derivative of the MCP; at x = 0 the right derivative lambda.
pub fn mcp_deriv(lambda: f64, a: f64, x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::NegativeInput(x));
    }
    if !(a > 1.0) {
        return Err(Error::InvalidInput(format!(
            "MCP shape constant must exceed 1, got {a}"
        )));
    }
    if x <= a * lambda {
        Ok(lambda - x / a)
    } else {
        Ok(0.0)
    }
}

/// Penalty value Omega_lambda(x) for a spec, 0 for the `None` family.
pub fn penalty_value(spec: &PenaltySpec, x: f64) -> Result<f64> {
    match spec.family {
        PenaltyFamily::None => Ok(0.0),
        PenaltyFamily::Scad => scad(spec.lambda, spec.shape_a, x),
        PenaltyFamily::Mcp => mcp(spec.lambda, spec.shape_a, x),
    }
}

/// Penalty derivative Omega'_lambda(x+); 0 for the `None` family.
pub fn penalty_deriv(spec: &PenaltySpec, x: f64) -> Result<f64> {
    match spec.family {
        PenaltyFamily::None => Ok(0.0),
        PenaltyFamily::Scad => scad_deriv(spec.lambda, spec.shape_a, x),
        PenaltyFamily::Mcp => mcp_deriv(spec.lambda, spec.shape_a, x),
    }
}

fn check_fit_dims(
    data: &MultiExperimentDataset,
    grid: &QuantileGrid,
    coefs: &CoefficientTensor,
    weights: Option<&[f64]>,
) -> Result<()> {
    coefs.check_dims(data, grid)?;
    if let Some(w) = weights {
        if w.len() != data.n_experiments() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} experiments",
                w.len(),
                data.n_experiments()
            )));
        }
    }
    Ok(())
}

/// Pooled check loss: sum over experiments of w_k / n_k times the check
/// losses of all quantile levels and observations. Each experiment is
/// normalized by its own sample size, which reduces to the common 1/n factor
/// when all sample sizes are equal.
pub fn pooled_loss(
    data: &MultiExperimentDataset,
    grid: &QuantileGrid,
    coefs: &CoefficientTensor,
    weights: Option<&[f64]>,
) -> Result<f64> {
    check_fit_dims(data, grid, coefs, weights)?;
    let mut total = 0.0;
    for (k, exp) in data.experiments().iter().enumerate() {
        let w = weights.map(|w| w[k]).unwrap_or(1.0);
        if w == 0.0 {
            continue;
        }
        let inv_n = 1.0 / exp.n_samples() as f64;
        let x = exp.design();
        let y = exp.responses();
        let mut exp_sum = 0.0;
        for (m, &tau) in grid.levels().iter().enumerate() {
            let b = coefs.intercept(k, m);
            for i in 0..exp.n_samples() {
                let mut pred = b;
                for j in 0..data.n_predictors() {
                    pred += x[[i, j]] * coefs.slope(k, m, j);
                }
                exp_sum += check_value(tau, y[i] - pred);
            }
        }
        total += w * inv_n * exp_sum;
    }
    Ok(total)
}

/// Raw pooled check-loss sum without any sample-size normalization or
/// weights, as used inside the model-selection criterion.
pub fn raw_pooled_check_sum(
    data: &MultiExperimentDataset,
    grid: &QuantileGrid,
    coefs: &CoefficientTensor,
) -> Result<f64> {
    coefs.check_dims(data, grid)?;
    let mut total = 0.0;
    for (k, exp) in data.experiments().iter().enumerate() {
        let x = exp.design();
        let y = exp.responses();
        for (m, &tau) in grid.levels().iter().enumerate() {
            let b = coefs.intercept(k, m);
            for i in 0..exp.n_samples() {
                let mut pred = b;
                for j in 0..data.n_predictors() {
                    pred += x[[i, j]] * coefs.slope(k, m, j);
                }
                total += check_value(tau, y[i] - pred);
            }
        }
    }
    Ok(total)
}

/// Full objective: pooled loss plus the penalty applied to the group L1
/// norm of every predictor. Intercepts are excluded from the penalty.
pub fn objective(
    data: &MultiExperimentDataset,
    grid: &QuantileGrid,
    coefs: &CoefficientTensor,
    penalty: &PenaltySpec,
) -> Result<f64> {
    penalty.validate(data.n_experiments())?;
    let loss = pooled_loss(
        data,
        grid,
        coefs,
        penalty.experiment_weights.as_deref(),
    )?;
    let mut pen = 0.0;
    for j in 0..coefs.n_predictors() {
        pen += penalty_value(penalty, coefs.group_l1(j))?;
    }
    Ok(loss + pen)
}
