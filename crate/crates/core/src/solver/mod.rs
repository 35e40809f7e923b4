//! Objective minimization: an outer majorize-minimize loop that linearizes
//! the group penalty at the previous iterate, an inner cyclic coordinate
//! descent whose scalar updates are exact weighted-median problems, an
//! unpenalized per-block fitter, prediction helpers and a brute-force test
//! oracle.

mod engine;
pub mod oracle;

use ndarray::{Array1, Array2, Array3, ArrayView2};

use crate::error::{Error, Result};
use crate::loss::{self, check_value};
use crate::model::{
    CoefficientTensor, FitResult, FitScaling, MultiExperimentDataset, PenaltyFamily, PenaltySpec,
    QuantileGrid, DEFAULT_ACTIVE_TOL,
};

use engine::{piecewise_argmin, Controls, Engine, WorkingData};

/// Tolerances and iteration caps for the solver.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub max_outer_iterations: usize,
    pub max_inner_sweeps: usize,
    /// Outer stop: relative change of the objective between iterates.
    pub objective_rel_tol: f64,
    /// Inner stop: largest coordinate move within one sweep.
    pub coordinate_abs_tol: f64,
    /// Covariate entries at most this in magnitude contribute no breakpoint.
    pub residual_zero_tol: f64,
    pub warm_start: Option<CoefficientTensor>,
    /// Center and scale covariates before penalized fitting, with
    /// back-transformation of the coefficients. Ignored when the penalty is
    /// absent and by the unpenalized fitter.
    pub standardize: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer_iterations: 100,
            max_inner_sweeps: 200,
            objective_rel_tol: 1e-6,
            coordinate_abs_tol: 1e-8,
            residual_zero_tol: 1e-10,
            warm_start: None,
            standardize: true,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if self.max_outer_iterations == 0 || self.max_inner_sweeps == 0 {
            return Err(Error::InvalidInput("iteration caps must be at least 1".into()));
        }
        for (name, v) in [
            ("objective_rel_tol", self.objective_rel_tol),
            ("coordinate_abs_tol", self.coordinate_abs_tol),
            ("residual_zero_tol", self.residual_zero_tol),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn controls(&self) -> Controls {
        Controls {
            max_inner_sweeps: self.max_inner_sweeps,
            objective_rel_tol: self.objective_rel_tol,
            coordinate_abs_tol: self.coordinate_abs_tol,
            residual_zero_tol: self.residual_zero_tol,
        }
    }
}

/// Coefficients with magnitude at most this are snapped to exactly zero
/// after convergence, so the active set is well defined.
pub const HARD_THRESHOLD: f64 = DEFAULT_ACTIVE_TOL;

/// A minimizer of sum_i weights_i * |v - values_i|; when the minimizing set
/// is an interval, its left endpoint.
pub fn weighted_median(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("weighted_median values"));
    }
    if values.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values vs {} weights",
            values.len(),
            weights.len()
        )));
    }
    for (i, &w) in weights.iter().enumerate() {
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::NonPositiveWeight { index: i, value: w });
        }
    }
    if let Some(&v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(format!("weighted_median value {v}")));
    }
    let mut breaks: Vec<(f64, f64)> = values.iter().copied().zip(weights.iter().copied()).collect();
    Ok(piecewise_argmin(&mut breaks, 0.0))
}

/// Coordinate of one scalar subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinate {
    Intercept,
    Slope(usize),
}

/// Exact minimizer of the single-coordinate subproblem
/// n_k^-1 sum_i rho_m(partial residual - X_kij * theta) + penalty_weight * |theta|
/// with every other coordinate held fixed at its value in `coefs`. The
/// intercept variant uses a unit pseudo-covariate and no penalty.
pub fn coordinate_update(
    data: &MultiExperimentDataset,
    grid: &QuantileGrid,
    coefs: &CoefficientTensor,
    k: usize,
    m: usize,
    coord: Coordinate,
    penalty_weight: f64,
) -> Result<f64> {
    coefs.check_dims(data, grid)?;
    if k >= data.n_experiments() || m >= grid.len() {
        return Err(Error::IndexOutOfRange(format!("(k, m) = ({k}, {m})")));
    }
    if let Coordinate::Slope(j) = coord {
        if j >= data.n_predictors() {
            return Err(Error::IndexOutOfRange(format!("predictor {j}")));
        }
    }
    if penalty_weight < 0.0 || !penalty_weight.is_finite() {
        return Err(Error::InvalidInput(format!(
            "penalty weight must be nonnegative, got {penalty_weight}"
        )));
    }
    let zero_tol = SolverConfig::default().residual_zero_tol;
    let exp = data.experiment(k);
    let x = exp.design();
    let y = exp.responses();
    let n = exp.n_samples();
    let inv_n = 1.0 / n as f64;
    let tau = grid.level(m);
    let p = data.n_predictors();

    let mut breaks: Vec<(f64, f64)> = Vec::with_capacity(n + 1);
    let mut sum_x = 0.0;
    for i in 0..n {
        let mut pred = coefs.intercept(k, m);
        for j in 0..p {
            pred += x[[i, j]] * coefs.slope(k, m, j);
        }
        let resid = y[i] - pred;
        match coord {
            Coordinate::Intercept => {
                breaks.push((resid + coefs.intercept(k, m), 0.5 * inv_n));
                sum_x += 1.0;
            }
            Coordinate::Slope(j) => {
                let xij = x[[i, j]];
                if xij.abs() > zero_tol {
                    breaks.push((resid / xij + coefs.slope(k, m, j), 0.5 * inv_n * xij.abs()));
                    sum_x += xij;
                }
            }
        }
    }
    if breaks.is_empty() {
        return Ok(0.0);
    }
    if matches!(coord, Coordinate::Slope(_)) && penalty_weight > 0.0 {
        breaks.push((0.0, penalty_weight));
    }
    let drift = -(tau - 0.5) * inv_n * sum_x;
    Ok(piecewise_argmin(&mut breaks, drift))
}

/// Per-experiment column means and scales; scale 1 for constant columns.
struct Standardizer {
    means: Vec<Array1<f64>>,
    scales: Vec<Array1<f64>>,
}

fn standardizer_for(data: &MultiExperimentDataset) -> Standardizer {
    let p = data.n_predictors();
    let mut means = Vec::with_capacity(data.n_experiments());
    let mut scales = Vec::with_capacity(data.n_experiments());
    for exp in data.experiments() {
        let x = exp.design();
        let n = exp.n_samples() as f64;
        let mut mu = Array1::zeros(p);
        let mut sd = Array1::zeros(p);
        for j in 0..p {
            let col = x.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
            mu[j] = mean;
            sd[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        means.push(mu);
        scales.push(sd);
    }
    Standardizer { means, scales }
}

/// Transposed working copies of the designs, optionally standardized.
fn working_data(
    data: &MultiExperimentDataset,
    grid: &QuantileGrid,
    weights: Option<&[f64]>,
    standardizer: Option<&Standardizer>,
) -> WorkingData {
    let p = data.n_predictors();
    let xt = data
        .experiments()
        .iter()
        .enumerate()
        .map(|(k, exp)| {
            let x = exp.design();
            let n = exp.n_samples();
            Array2::from_shape_fn((p, n), |(j, i)| match standardizer {
                Some(s) => (x[[i, j]] - s.means[k][j]) / s.scales[k][j],
                None => x[[i, j]],
            })
        })
        .collect();
    let y = data
        .experiments()
        .iter()
        .map(|exp| exp.responses().to_owned())
        .collect();
    let obs_weight = data
        .experiments()
        .iter()
        .enumerate()
        .map(|(k, exp)| weights.map(|w| w[k]).unwrap_or(1.0) / exp.n_samples() as f64)
        .collect();
    WorkingData {
        xt,
        y,
        taus: grid.levels().to_vec(),
        obs_weight,
    }
}

fn snap_small(slopes: &mut Array3<f64>) {
    for v in slopes.iter_mut() {
        if v.abs() <= HARD_THRESHOLD {
            *v = 0.0;
        }
    }
}

/// Residuals Y - b - X theta on the original data.
fn residuals_for(
    data: &MultiExperimentDataset,
    grid: &QuantileGrid,
    coefs: &CoefficientTensor,
) -> Vec<Array2<f64>> {
    data.experiments()
        .iter()
        .enumerate()
        .map(|(k, exp)| {
            let x = exp.design();
            let y = exp.responses();
            let n = exp.n_samples();
            Array2::from_shape_fn((grid.len(), n), |(m, i)| {
                let mut pred = coefs.intercept(k, m);
                for j in 0..data.n_predictors() {
                    pred += x[[i, j]] * coefs.slope(k, m, j);
                }
                y[i] - pred
            })
        })
        .collect()
}

/// Minimize the penalized pooled objective.
///
/// Outer loop: majorize the penalty at the previous iterate into
/// per-group weights omega_j = Omega'(||theta^(j)||_1+); inner loop:
/// cyclic coordinate descent on the weighted-L1 surrogate. Stops when the
/// objective's relative change falls below `objective_rel_tol` or the outer
/// iteration cap is reached; in the latter case the best iterate is still
/// returned with `converged = false`.
pub fn fit_penalized(
    data: &MultiExperimentDataset,
    grid: &QuantileGrid,
    penalty: &PenaltySpec,
    config: &SolverConfig,
) -> Result<FitResult> {
    config.validate()?;
    penalty.validate(data.n_experiments())?;
    let n_k = data.n_experiments();
    let n_m = grid.len();
    let p = data.n_predictors();

    let penalized = penalty.family != PenaltyFamily::None && penalty.lambda > 0.0;
    let standardizer = if config.standardize && penalized {
        Some(standardizer_for(data))
    } else {
        None
    };
    let weights = penalty.experiment_weights.clone();
    let work = working_data(data, grid, weights.as_deref(), standardizer.as_ref());

    // warm start, mapped onto the working scale
    let (slopes, intercepts) = match &config.warm_start {
        Some(start) => {
            start.check_dims(data, grid)?;
            let mut s = start.slopes().clone();
            let mut b = start.intercepts().clone();
            if let Some(std) = &standardizer {
                for k in 0..n_k {
                    for m in 0..n_m {
                        let mut shift = 0.0;
                        for j in 0..p {
                            shift += s[[k, m, j]] * std.means[k][j];
                            s[[k, m, j]] *= std.scales[k][j];
                        }
                        b[[k, m]] += shift;
                    }
                }
            }
            (s, b)
        }
        None => (Array3::zeros((n_k, n_m, p)), Array2::zeros((n_k, n_m))),
    };
    let mut eng = Engine::new(&work, (0..p).collect(), slopes, intercepts);

    let controls = config.controls();
    let working_objective = |eng: &Engine| -> Result<f64> {
        let mut pen = 0.0;
        for j in 0..p {
            pen += loss::penalty_value(penalty, eng.group_l1(j))?;
        }
        Ok(eng.loss_value() + pen)
    };

    let mut trace = vec![working_objective(&eng)?];
    let mut converged = false;
    let mut outer = 0;
    while outer < config.max_outer_iterations {
        let mut omega = Vec::with_capacity(p);
        for j in 0..p {
            omega.push(loss::penalty_deriv(penalty, eng.group_l1(j))?);
        }
        let (_, inner_settled) = eng.solve_all(&omega, &controls);
        outer += 1;
        let obj = working_objective(&eng)?;
        let prev = trace[trace.len() - 1];
        trace.push(obj);
        let rel = (prev - obj).abs() / prev.abs().max(1e-12);
        // the iterate is final only once the inner problems are themselves
        // settled; with a small per-step sweep budget an early outer step
        // can match the previous objective while coordinates still move
        if rel < config.objective_rel_tol && inner_settled {
            converged = true;
            break;
        }
    }

    // back to the original scale, with hard thresholding on both scales
    let mut working_slopes = eng.slopes.clone();
    let working_intercepts = eng.intercepts.clone();
    snap_small(&mut working_slopes);
    let (mut slopes, mut intercepts) = (working_slopes.clone(), working_intercepts.clone());
    if let Some(std) = &standardizer {
        for k in 0..n_k {
            for m in 0..n_m {
                let mut shift = 0.0;
                for j in 0..p {
                    shift += working_slopes[[k, m, j]] * std.means[k][j] / std.scales[k][j];
                    slopes[[k, m, j]] = working_slopes[[k, m, j]] / std.scales[k][j];
                }
                intercepts[[k, m]] = working_intercepts[[k, m]] - shift;
            }
        }
        snap_small(&mut slopes);
    }
    let coefficients = CoefficientTensor::from_parts(slopes, intercepts)?;
    let objective_value = loss::objective(data, grid, &coefficients, penalty)?;
    let residuals = residuals_for(data, grid, &coefficients);
    let scaling = standardizer.map(|std| FitScaling {
        means: std.means,
        scales: std.scales,
        coefficients: CoefficientTensor::from_parts(working_slopes, working_intercepts)
            .expect("working tensor is well formed"),
    });
    Ok(FitResult {
        coefficients,
        objective_value,
        residuals,
        iterations: outer,
        converged,
        objective_trace: trace,
        scaling,
    })
}

/// Minimize each (experiment, quantile) block's check loss over the given
/// support columns plus a free intercept; coefficients outside the support
/// are exactly zero. Never standardizes.
pub fn fit_unpenalized(
    data: &MultiExperimentDataset,
    grid: &QuantileGrid,
    support: &[usize],
    config: &SolverConfig,
) -> Result<FitResult> {
    config.validate()?;
    let p = data.n_predictors();
    let mut support: Vec<usize> = support.to_vec();
    support.sort_unstable();
    support.dedup();
    if let Some(&j) = support.iter().find(|&&j| j >= p) {
        return Err(Error::IndexOutOfRange(format!("support predictor {j}")));
    }
    let n_k = data.n_experiments();
    let n_m = grid.len();
    let work = working_data(data, grid, None, None);

    let (slopes, intercepts) = match &config.warm_start {
        Some(start) => {
            start.check_dims(data, grid)?;
            let mut s = Array3::zeros((n_k, n_m, p));
            for k in 0..n_k {
                for m in 0..n_m {
                    for &j in &support {
                        s[[k, m, j]] = start.slope(k, m, j);
                    }
                }
            }
            (s, start.intercepts().clone())
        }
        None => (Array3::zeros((n_k, n_m, p)), Array2::zeros((n_k, n_m))),
    };

    let mut eng = Engine::new(&work, support, slopes, intercepts);
    let omega = vec![0.0; p];
    let trace_start = eng.loss_value();
    let (sweeps, converged) = eng.solve_all(&omega, &config.controls());

    let mut slopes = eng.slopes.clone();
    snap_small(&mut slopes);
    let coefficients = CoefficientTensor::from_parts(slopes, eng.intercepts.clone())?;
    let objective_value = loss::objective(data, grid, &coefficients, &PenaltySpec::none())?;
    let residuals = residuals_for(data, grid, &coefficients);
    Ok(FitResult {
        coefficients,
        objective_value,
        residuals,
        iterations: sweeps,
        converged,
        objective_trace: vec![trace_start, objective_value],
        scaling: None,
    })
}

/// Predictions b_km + X theta_km for new design rows.
pub fn predict(
    coefs: &CoefficientTensor,
    rows: ArrayView2<'_, f64>,
    k: usize,
    m: usize,
) -> Result<Array1<f64>> {
    if k >= coefs.n_experiments() || m >= coefs.n_quantiles() {
        return Err(Error::IndexOutOfRange(format!("(k, m) = ({k}, {m})")));
    }
    if rows.ncols() != coefs.n_predictors() {
        return Err(Error::DimensionMismatch(format!(
            "{} columns for {} predictors",
            rows.ncols(),
            coefs.n_predictors()
        )));
    }
    Ok(Array1::from_iter(rows.rows().into_iter().map(|row| {
        let mut pred = coefs.intercept(k, m);
        for j in 0..coefs.n_predictors() {
            pred += row[j] * coefs.slope(k, m, j);
        }
        pred
    })))
}

/// Pooled check losses of held-out residuals, per experiment and overall.
/// These are raw sums without any sample-size normalization.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PredictionError {
    pub per_experiment: Vec<f64>,
    pub total: f64,
}

pub fn prediction_error(
    data: &MultiExperimentDataset,
    grid: &QuantileGrid,
    coefs: &CoefficientTensor,
) -> Result<PredictionError> {
    coefs.check_dims(data, grid)?;
    let mut per_experiment = Vec::with_capacity(data.n_experiments());
    for (k, exp) in data.experiments().iter().enumerate() {
        let y = exp.responses();
        let mut sum = 0.0;
        for (m, &tau) in grid.levels().iter().enumerate() {
            let pred = predict(coefs, exp.design(), k, m)?;
            for i in 0..exp.n_samples() {
                sum += check_value(tau, y[i] - pred[i]);
            }
        }
        per_experiment.push(sum);
    }
    let total = per_experiment.iter().sum();
    Ok(PredictionError {
        per_experiment,
        total,
    })
}
