//! Model and tuning-parameter selection with the multiple-quantile Bayesian
//! information criterion: candidate scoring by unpenalized refits, lambda
//! path tuning on the penalized fits themselves, exhaustive subset search
//! and the per-experiment combined-analysis baseline.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::loss::check_value;
use crate::model::{
    active_set, CoefficientTensor, FitResult, MultiExperimentDataset, PenaltySpec, QuantileGrid,
    DEFAULT_ACTIVE_TOL,
};
use crate::solver::{fit_penalized, fit_unpenalized, SolverConfig};

/// Criterion constant T and the upper bound on candidate model size.
#[derive(Debug, Clone)]
pub struct MqbicConfig {
    pub t_const: f64,
    pub max_model_size: usize,
}

impl MqbicConfig {
    pub fn new(t_const: f64, max_model_size: usize) -> Result<Self> {
        if !(t_const > 0.0) || !t_const.is_finite() {
            return Err(Error::InvalidInput(format!(
                "T must be a positive real, got {t_const}"
            )));
        }
        if max_model_size == 0 {
            return Err(Error::InvalidInput("maximum model size must be at least 1".into()));
        }
        Ok(Self {
            t_const,
            max_model_size,
        })
    }

    /// Defaults for a dataset: T = log(p) / 3 and the model-size cap
    /// floor(n / (4 log n)) with the mean sample size.
    pub fn default_for(data: &MultiExperimentDataset) -> Result<Self> {
        let t = default_t(data.n_predictors(), 3.0)?;
        let n = mean_sample_size(data);
        let dn = ((n / (4.0 * n.ln())).floor() as usize).max(1);
        Self::new(t, dn)
    }
}

/// T = log(p) / divisor.
pub fn default_t(p: usize, divisor: f64) -> Result<f64> {
    if p < 2 {
        return Err(Error::InvalidInput(format!(
            "criterion constant needs at least 2 predictors, got {p}"
        )));
    }
    if !(divisor > 0.0) || !divisor.is_finite() {
        return Err(Error::InvalidInput(format!(
            "divisor must be positive, got {divisor}"
        )));
    }
    Ok((p as f64).ln() / divisor)
}

fn mean_sample_size(data: &MultiExperimentDataset) -> f64 {
    let sizes = data.sample_sizes();
    sizes.iter().sum::<usize>() as f64 / sizes.len() as f64
}

/// Criterion value split into its two addends.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct MqbicValue {
    /// log of the raw pooled check-loss sum
    pub log_loss: f64,
    /// |D| * T * log(n) / (2n)
    pub size_penalty: f64,
    pub value: f64,
}

fn mqbic_value(raw_check_sum: f64, model_size: usize, t_const: f64, n: f64) -> Result<MqbicValue> {
    if raw_check_sum == 0.0 {
        return Err(Error::ZeroLoss);
    }
    let log_loss = raw_check_sum.ln();
    let size_penalty = model_size as f64 * t_const * n.ln() / (2.0 * n);
    Ok(MqbicValue {
        log_loss,
        size_penalty,
        value: log_loss + size_penalty,
    })
}

fn raw_check_sum_of(fit: &FitResult, grid: &QuantileGrid) -> f64 {
    let mut total = 0.0;
    for residuals in &fit.residuals {
        for (m, &tau) in grid.levels().iter().enumerate() {
            for &r in residuals.row(m) {
                total += check_value(tau, r);
            }
        }
    }
    total
}

/// Criterion value of one candidate support together with its refit.
#[derive(Debug, Clone)]
pub struct MqbicBreakdown {
    pub value: MqbicValue,
    pub raw_check_sum: f64,
    pub fit: FitResult,
}

/// Score a candidate support by refitting every (experiment, quantile)
/// block unpenalized on the support columns.
pub fn mqbic(
    data: &MultiExperimentDataset,
    grid: &QuantileGrid,
    support: &[usize],
    config: &MqbicConfig,
    solver_config: &SolverConfig,
) -> Result<MqbicBreakdown> {
    if support.len() > config.max_model_size {
        return Err(Error::SupportTooLarge {
            size: support.len(),
            max: config.max_model_size,
        });
    }
    let fit = fit_unpenalized(data, grid, support, solver_config)?;
    let raw = raw_check_sum_of(&fit, grid);
    let value = mqbic_value(raw, support.len(), config.t_const, mean_sample_size(data))?;
    Ok(MqbicBreakdown {
        value,
        raw_check_sum: raw,
        fit,
    })
}

/// Identifier of one scored candidate.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
#[serde(untagged)]
pub enum CandidateId {
    Lambda(f64),
    Subset(Vec<usize>),
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SelectionCandidate {
    pub id: CandidateId,
    pub model_size: usize,
    /// Raw pooled check-loss sum entering the criterion's log term.
    pub pooled_check_loss: f64,
    /// Criterion value and its two addends; absent for an interpolating
    /// fit, whose log loss is not finite.
    pub mqbic: Option<f64>,
    pub log_loss: Option<f64>,
    pub size_penalty: Option<f64>,
}

/// Outcome of a selection run: all candidate diagnostics, the winner, the
/// winner's fit and its selected predictor set.
#[derive(Debug, Clone)]
pub struct SelectionReport {
    pub chosen_lambda: Option<f64>,
    pub candidates: Vec<SelectionCandidate>,
    pub fit: FitResult,
    pub selected_predictors: BTreeSet<usize>,
}

/// Dominance bound making every group inactive at the first multiplier of
/// a descending path: max over predictors of the summed per-block
/// subgradient bounds, each scaled by max(tau, 1 - tau).
pub fn lambda_upper_bound(data: &MultiExperimentDataset, grid: &QuantileGrid) -> f64 {
    let mut best: f64 = 0.0;
    for j in 0..data.n_predictors() {
        let mut s = 0.0;
        for exp in data.experiments() {
            let col_sum: f64 = exp.design().column(j).iter().map(|v| v.abs()).sum();
            let per_block = col_sum / exp.n_samples() as f64;
            for &tau in grid.levels() {
                s += per_block * tau.max(1.0 - tau);
            }
        }
        best = best.max(s);
    }
    best
}

/// Geometric grid of `points` multipliers from the dominance bound down to
/// 1e-3 times the bound. Computed on the design the solver will actually
/// see, so the top of a standardized path is still empty.
pub fn default_lambda_grid(
    data: &MultiExperimentDataset,
    grid: &QuantileGrid,
    points: usize,
    solver_config: &SolverConfig,
) -> Result<Vec<f64>> {
    if points == 0 {
        return Err(Error::EmptyGrid);
    }
    let working = if solver_config.standardize {
        standardized_copy(data)?
    } else {
        data.clone()
    };
    let top = lambda_upper_bound(&working, grid);
    if top <= 0.0 {
        return Err(Error::InvalidInput(
            "all design columns are zero; no lambda path exists".into(),
        ));
    }
    if points == 1 {
        return Ok(vec![top]);
    }
    let ratio = 1e-3f64.powf(1.0 / (points - 1) as f64);
    Ok((0..points).map(|i| top * ratio.powi(i as i32)).collect())
}

fn standardized_copy(data: &MultiExperimentDataset) -> Result<MultiExperimentDataset> {
    let records = data
        .experiments()
        .iter()
        .map(|exp| {
            let x = exp.design();
            let n = exp.n_samples() as f64;
            let mut out = x.to_owned();
            for j in 0..x.ncols() {
                let mean = x.column(j).sum() / n;
                let var = x.column(j).iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
                for i in 0..x.nrows() {
                    out[[i, j]] = (x[[i, j]] - mean) / scale;
                }
            }
            (exp.responses().to_owned(), out)
        })
        .collect();
    MultiExperimentDataset::new(records, data.predictor_names().to_vec())
}

/// Tune the penalty multiplier on a grid: fit the penalized model at every
/// lambda, score each fit by the criterion evaluated on the penalized fit's
/// own pooled check loss (no refit), and return the minimizer. Ties prefer
/// the smaller model, then the smaller lambda.
///
/// The objective is nonconvex, so each grid point is fitted from two
/// continuations, walking the grid downward and back upward with warm
/// starts, and the lower-objective minimizer represents that lambda.
/// Interpolating fits (zero pooled check loss) have no finite criterion
/// value; they are reported but excluded from the minimization.
pub fn select_lambda(
    data: &MultiExperimentDataset,
    grid: &QuantileGrid,
    penalty_template: &PenaltySpec,
    lambda_grid: &[f64],
    config: &MqbicConfig,
    solver_config: &SolverConfig,
) -> Result<SelectionReport> {
    if lambda_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if let Some(&bad) = lambda_grid.iter().find(|l| !l.is_finite() || **l < 0.0) {
        return Err(Error::InvalidInput(format!(
            "lambda grid entries must be nonnegative reals, got {bad}"
        )));
    }
    let mut path: Vec<f64> = lambda_grid.to_vec();
    path.sort_by(|a, b| b.total_cmp(a));
    path.dedup();

    let mut fits: Vec<Option<FitResult>> = Vec::with_capacity(path.len());
    let mut warm: Option<CoefficientTensor> = None;
    for &lambda in &path {
        let penalty = penalty_template.clone().with_lambda(lambda);
        let mut cfg = solver_config.clone();
        cfg.warm_start = warm.clone();
        let fit = fit_penalized(data, grid, &penalty, &cfg)?;
        warm = Some(fit.coefficients.clone());
        fits.push(Some(fit));
    }
    warm = None;
    for (i, &lambda) in path.iter().enumerate().rev() {
        let penalty = penalty_template.clone().with_lambda(lambda);
        let mut cfg = solver_config.clone();
        cfg.warm_start = warm.clone();
        let fit = fit_penalized(data, grid, &penalty, &cfg)?;
        if fit.objective_value < fits[i].as_ref().expect("downward fit exists").objective_value {
            warm = Some(fit.coefficients.clone());
            fits[i] = Some(fit);
        } else {
            warm = Some(fits[i].as_ref().unwrap().coefficients.clone());
        }
    }

    let n = mean_sample_size(data);
    let mut candidates = Vec::with_capacity(path.len());
    let mut best: Option<(f64, usize, f64, usize, BTreeSet<usize>)> = None;
    for (i, &lambda) in path.iter().enumerate() {
        let fit = fits[i].as_ref().expect("fit exists");
        let selected = active_set(&fit.coefficients, DEFAULT_ACTIVE_TOL);
        let raw = raw_check_sum_of(fit, grid);
        let value = match mqbic_value(raw, selected.len(), config.t_const, n) {
            Ok(v) => Some(v),
            Err(Error::ZeroLoss) => None,
            Err(e) => return Err(e),
        };
        candidates.push(SelectionCandidate {
            id: CandidateId::Lambda(lambda),
            model_size: selected.len(),
            pooled_check_loss: raw,
            mqbic: value.map(|v| v.value),
            log_loss: value.map(|v| v.log_loss),
            size_penalty: value.map(|v| v.size_penalty),
        });
        let Some(value) = value else { continue };
        let replace = match &best {
            None => true,
            Some((bv, bsize, blambda, _, _)) => {
                value.value < *bv
                    || (value.value == *bv
                        && (selected.len() < *bsize
                            || (selected.len() == *bsize && lambda < *blambda)))
            }
        };
        if replace {
            best = Some((value.value, selected.len(), lambda, i, selected));
        }
    }
    let (_, _, lambda, best_idx, selected) = best.ok_or(Error::ZeroLoss)?;
    Ok(SelectionReport {
        chosen_lambda: Some(lambda),
        candidates,
        fit: fits[best_idx].take().expect("fit exists"),
        selected_predictors: selected,
    })
}

/// All predictor subsets of size at most `max_size`, in size-major
/// lexicographic order. Guarded against combinatorial blowup: full
/// enumeration (max_size >= p) needs p <= 15, and the total candidate
/// count may not exceed 2^22.
pub fn subsets_up_to_size(p: usize, max_size: usize) -> Result<Vec<Vec<usize>>> {
    let d = max_size.min(p);
    if d >= p && p > 15 {
        return Err(Error::ProblemTooLarge(format!(
            "full enumeration of 2^{p} subsets; limit is p <= 15"
        )));
    }
    let mut count: u64 = 0;
    let mut binom: u64 = 1;
    for s in 0..=d {
        if s > 0 {
            binom = binom * (p - s + 1) as u64 / s as u64;
        }
        count = count.saturating_add(binom);
        if count > (1 << 22) {
            return Err(Error::ProblemTooLarge(format!(
                "more than 2^22 candidate subsets of {p} predictors up to size {max_size}"
            )));
        }
    }
    let mut out: Vec<Vec<usize>> = vec![vec![]];
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..d {
        let mut next = Vec::new();
        for base in &frontier {
            let start = base.last().map(|&j| j + 1).unwrap_or(0);
            for j in start..p {
                let mut s = base.clone();
                s.push(j);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    Ok(out)
}

/// Score every candidate support by unpenalized refits and return the
/// criterion minimizer. Candidate evaluations run in parallel.
pub fn exhaustive_search(
    data: &MultiExperimentDataset,
    grid: &QuantileGrid,
    candidates: &[Vec<usize>],
    config: &MqbicConfig,
    solver_config: &SolverConfig,
) -> Result<SelectionReport> {
    if candidates.is_empty() {
        return Err(Error::CandidateListEmpty);
    }
    if let Some(c) = candidates.iter().find(|c| c.len() > config.max_model_size) {
        return Err(Error::SupportTooLarge {
            size: c.len(),
            max: config.max_model_size,
        });
    }
    let scored: Vec<Result<(usize, SelectionCandidate, MqbicBreakdown)>> = candidates
        .par_iter()
        .enumerate()
        .map(|(idx, support)| {
            let breakdown = mqbic(data, grid, support, config, solver_config)?;
            let candidate = SelectionCandidate {
                id: CandidateId::Subset(support.clone()),
                model_size: support.len(),
                pooled_check_loss: breakdown.raw_check_sum,
                mqbic: Some(breakdown.value.value),
                log_loss: Some(breakdown.value.log_loss),
                size_penalty: Some(breakdown.value.size_penalty),
            };
            Ok((idx, candidate, breakdown))
        })
        .collect();

    let mut rows = Vec::with_capacity(candidates.len());
    let mut best: Option<(f64, usize, usize, MqbicBreakdown)> = None;
    for item in scored {
        let (idx, candidate, breakdown) = item?;
        let value = candidate.mqbic.expect("refit criterion is finite");
        let better = match &best {
            None => true,
            Some((bv, bsize, bidx, _)) => {
                value < *bv
                    || (value == *bv
                        && (candidate.model_size < *bsize
                            || (candidate.model_size == *bsize
                                && candidates[idx] < candidates[*bidx])))
            }
        };
        if better {
            best = Some((value, candidate.model_size, idx, breakdown));
        }
        rows.push((idx, candidate));
    }
    rows.sort_by_key(|(idx, _)| *idx);
    let (_, _, best_idx, breakdown) = best.expect("candidate list is nonempty");
    Ok(SelectionReport {
        chosen_lambda: None,
        candidates: rows.into_iter().map(|(_, c)| c).collect(),
        fit: breakdown.fit,
        selected_predictors: candidates[best_idx].iter().copied().collect(),
    })
}

/// Combined analysis at one quantile level: tune and fit each experiment
/// separately (its own criterion, its own path), then merge the selected
/// predictor sets.
#[derive(Debug, Clone)]
pub struct CombinedAnalysisReport {
    pub union: BTreeSet<usize>,
    pub per_experiment: Vec<SelectionReport>,
}

pub fn combined_analysis(
    data: &MultiExperimentDataset,
    tau: f64,
    penalty_template: &PenaltySpec,
    lambda_grid: Option<&[f64]>,
    config: &MqbicConfig,
    solver_config: &SolverConfig,
) -> Result<CombinedAnalysisReport> {
    let grid = QuantileGrid::single(tau)?;
    let mut per_experiment = Vec::with_capacity(data.n_experiments());
    let mut union = BTreeSet::new();
    let mut template = penalty_template.clone();
    template.experiment_weights = None;
    for k in 0..data.n_experiments() {
        let single = data.single_experiment(k)?;
        let path = match lambda_grid {
            Some(g) => g.to_vec(),
            None => default_lambda_grid(&single, &grid, 50, solver_config)?,
        };
        let report = select_lambda(&single, &grid, &template, &path, config, solver_config)?;
        union.extend(report.selected_predictors.iter().copied());
        per_experiment.push(report);
    }
    Ok(CombinedAnalysisReport {
        union,
        per_experiment,
    })
}
