//! Domain types: datasets, quantile grids, coefficient tensors, penalty
//! specifications and fit results.
//!
//! All types validate their invariants on construction and are immutable
//! afterwards, so they can be shared freely across concurrent workers.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Active-set threshold applied when reading coefficients back out of a
/// finite-precision solver.
pub const DEFAULT_ACTIVE_TOL: f64 = 1e-8;

/// One experiment: a response vector and its design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    responses: Array1<f64>,
    design: Array2<f64>,
}

impl Experiment {
    pub fn responses(&self) -> ArrayView1<'_, f64> {
        self.responses.view()
    }

    pub fn design(&self) -> ArrayView2<'_, f64> {
        self.design.view()
    }

    pub fn n_samples(&self) -> usize {
        self.responses.len()
    }
}

/// Responses and design matrices of K experiments sharing one predictor set.
///
/// Sample sizes may differ between experiments; the predictor count may not.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiExperimentDataset {
    experiments: Vec<Experiment>,
    predictor_names: Vec<String>,
}

impl MultiExperimentDataset {
    /// Validate raw experiment records into a dataset.
    ///
    /// Checks: at least one experiment, design rows equal to the response
    /// length, a common predictor count, finite entries and a matching name
    /// list. Validating the parts of an already validated dataset returns an
    /// equal dataset.
    pub fn new(
        records: Vec<(Array1<f64>, Array2<f64>)>,
        predictor_names: Vec<String>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyInput("dataset needs at least one experiment"));
        }
        let p = records[0].1.ncols();
        if predictor_names.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "{} predictor names for {} design columns",
                predictor_names.len(),
                p
            )));
        }
        let mut experiments = Vec::with_capacity(records.len());
        for (k, (responses, design)) in records.into_iter().enumerate() {
            if design.ncols() != p {
                return Err(Error::DimensionMismatch(format!(
                    "experiment {} has {} predictors, experiment 0 has {}",
                    k,
                    design.ncols(),
                    p
                )));
            }
            if design.nrows() != responses.len() {
                return Err(Error::DimensionMismatch(format!(
                    "experiment {}: {} design rows for {} responses",
                    k,
                    design.nrows(),
                    responses.len()
                )));
            }
            if responses.is_empty() {
                return Err(Error::EmptyInput("experiment with zero observations"));
            }
            if let Some(v) = responses.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue(format!(
                    "response {} in experiment {}",
                    v, k
                )));
            }
            if let Some(v) = design.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue(format!(
                    "design entry {} in experiment {}",
                    v, k
                )));
            }
            experiments.push(Experiment { responses, design });
        }
        Ok(Self {
            experiments,
            predictor_names,
        })
    }

    /// Same as [`MultiExperimentDataset::new`] with generated names `x1..xp`.
    pub fn with_default_names(records: Vec<(Array1<f64>, Array2<f64>)>) -> Result<Self> {
        let p = records.first().map(|r| r.1.ncols()).unwrap_or(0);
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Self::new(records, names)
    }

    pub fn n_experiments(&self) -> usize {
        self.experiments.len()
    }

    pub fn n_predictors(&self) -> usize {
        self.predictor_names.len()
    }

    pub fn experiment(&self, k: usize) -> &Experiment {
        &self.experiments[k]
    }

    pub fn experiments(&self) -> &[Experiment] {
        &self.experiments
    }

    pub fn predictor_names(&self) -> &[String] {
        &self.predictor_names
    }

    pub fn sample_sizes(&self) -> Vec<usize> {
        self.experiments.iter().map(|e| e.n_samples()).collect()
    }

    /// Single-experiment view used by the combined analysis.
    pub fn single_experiment(&self, k: usize) -> Result<Self> {
        let e = self
            .experiments
            .get(k)
            .ok_or_else(|| Error::IndexOutOfRange(format!("experiment {k}")))?;
        Ok(Self {
            experiments: vec![e.clone()],
            predictor_names: self.predictor_names.clone(),
        })
    }
}

/// Ordered quantile levels 0 < tau_1 < ... < tau_M < 1.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileGrid {
    levels: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::EmptyInput("quantile grid"));
        }
        for &t in &levels {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidQuantile(t));
            }
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "quantile levels must be strictly increasing".into(),
            ));
        }
        Ok(Self { levels })
    }

    pub fn single(tau: f64) -> Result<Self> {
        Self::new(vec![tau])
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn level(&self, m: usize) -> f64 {
        self.levels[m]
    }
}

/// Slopes indexed (experiment, quantile, predictor) plus per-(k, m)
/// intercepts. The group of predictor j is the KM-vector of its slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTensor {
    slopes: Array3<f64>,
    intercepts: Array2<f64>,
}

impl CoefficientTensor {
    pub fn zeros(n_experiments: usize, n_quantiles: usize, n_predictors: usize) -> Self {
        Self {
            slopes: Array3::zeros((n_experiments, n_quantiles, n_predictors)),
            intercepts: Array2::zeros((n_experiments, n_quantiles)),
        }
    }

    pub fn from_parts(slopes: Array3<f64>, intercepts: Array2<f64>) -> Result<Self> {
        let (k, m, _) = slopes.dim();
        if intercepts.dim() != (k, m) {
            return Err(Error::DimensionMismatch(format!(
                "intercepts {:?} do not match slopes {:?}",
                intercepts.dim(),
                slopes.dim()
            )));
        }
        if slopes.iter().chain(intercepts.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("coefficient tensor".into()));
        }
        Ok(Self { slopes, intercepts })
    }

    pub fn n_experiments(&self) -> usize {
        self.slopes.dim().0
    }

    pub fn n_quantiles(&self) -> usize {
        self.slopes.dim().1
    }

    pub fn n_predictors(&self) -> usize {
        self.slopes.dim().2
    }

    pub fn slope(&self, k: usize, m: usize, j: usize) -> f64 {
        self.slopes[[k, m, j]]
    }

    pub fn set_slope(&mut self, k: usize, m: usize, j: usize, value: f64) {
        self.slopes[[k, m, j]] = value;
    }

    pub fn intercept(&self, k: usize, m: usize) -> f64 {
        self.intercepts[[k, m]]
    }

    pub fn set_intercept(&mut self, k: usize, m: usize, value: f64) {
        self.intercepts[[k, m]] = value;
    }

    pub fn slopes(&self) -> &Array3<f64> {
        &self.slopes
    }

    pub fn intercepts(&self) -> &Array2<f64> {
        &self.intercepts
    }

    /// L1 norm of predictor j's group across all experiments and quantiles.
    pub fn group_l1(&self, j: usize) -> f64 {
        let (nk, nm, _) = self.slopes.dim();
        let mut s = 0.0;
        for k in 0..nk {
            for m in 0..nm {
                s += self.slopes[[k, m, j]].abs();
            }
        }
        s
    }

    /// Check that dimensions match a companion dataset and grid.
    pub fn check_dims(&self, data: &MultiExperimentDataset, grid: &QuantileGrid) -> Result<()> {
        if self.n_experiments() != data.n_experiments()
            || self.n_quantiles() != grid.len()
            || self.n_predictors() != data.n_predictors()
        {
            return Err(Error::DimensionMismatch(format!(
                "tensor ({}, {}, {}) does not match dataset K={}, M={}, p={}",
                self.n_experiments(),
                self.n_quantiles(),
                self.n_predictors(),
                data.n_experiments(),
                grid.len(),
                data.n_predictors()
            )));
        }
        Ok(())
    }

    /// L1 distance between the slope arrays of two tensors of equal shape.
    pub fn slope_l1_distance(&self, other: &Self) -> Result<f64> {
        if self.slopes.dim() != other.slopes.dim() {
            return Err(Error::DimensionMismatch(format!(
                "tensors {:?} vs {:?}",
                self.slopes.dim(),
                other.slopes.dim()
            )));
        }
        Ok(self
            .slopes
            .iter()
            .zip(other.slopes.iter())
            .map(|(a, b)| (a - b).abs())
            .sum())
    }
}

/// Predictors whose group L1 norm exceeds `tol`. Intercepts never contribute.
pub fn active_set(coefs: &CoefficientTensor, tol: f64) -> BTreeSet<usize> {
    (0..coefs.n_predictors())
        .filter(|&j| coefs.group_l1(j) > tol)
        .collect()
}

/// Penalty family applied to the group L1 norm of each predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyFamily {
    None,
    Scad,
    Mcp,
}

/// Penalty family, tuning parameter, shape constant and optional
/// per-experiment loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySpec {
    pub family: PenaltyFamily,
    pub lambda: f64,
    pub shape_a: f64,
    /// Per-experiment weights for the pooled loss; `None` means all 1.
    pub experiment_weights: Option<Vec<f64>>,
}

impl PenaltySpec {
    pub fn none() -> Self {
        Self {
            family: PenaltyFamily::None,
            lambda: 0.0,
            shape_a: 0.0,
            experiment_weights: None,
        }
    }

    /// SCAD with the customary shape constant a = 3.7.
    pub fn scad(lambda: f64) -> Self {
        Self {
            family: PenaltyFamily::Scad,
            lambda,
            shape_a: 3.7,
            experiment_weights: None,
        }
    }

    /// MCP with default shape constant a = 3.
    pub fn mcp(lambda: f64) -> Self {
        Self {
            family: PenaltyFamily::Mcp,
            lambda,
            shape_a: 3.0,
            experiment_weights: None,
        }
    }

    pub fn with_shape_a(mut self, a: f64) -> Self {
        self.shape_a = a;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.experiment_weights = Some(weights);
        self
    }

    /// Validate against a dataset with `n_experiments` experiments.
    pub fn validate(&self, n_experiments: usize) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::InvalidInput(format!(
                "lambda must be a nonnegative real, got {}",
                self.lambda
            )));
        }
        match self.family {
            PenaltyFamily::None => {}
            PenaltyFamily::Scad => {
                if !(self.shape_a > 2.0) {
                    return Err(Error::InvalidInput(format!(
                        "SCAD shape constant must exceed 2, got {}",
                        self.shape_a
                    )));
                }
            }
            PenaltyFamily::Mcp => {
                if !(self.shape_a > 1.0) {
                    return Err(Error::InvalidInput(format!(
                        "MCP shape constant must exceed 1, got {}",
                        self.shape_a
                    )));
                }
            }
        }
        if let Some(w) = &self.experiment_weights {
            if w.len() != n_experiments {
                return Err(Error::DimensionMismatch(format!(
                    "{} experiment weights for {} experiments",
                    w.len(),
                    n_experiments
                )));
            }
            if let Some((i, &v)) = w.iter().enumerate().find(|(_, v)| **v < 0.0 || !v.is_finite())
            {
                return Err(Error::NonPositiveWeight { index: i, value: v });
            }
            if w.iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidInput(
                    "experiment weights must not all be zero".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn weight_for(&self, k: usize) -> f64 {
        self.experiment_weights
            .as_ref()
            .map(|w| w[k])
            .unwrap_or(1.0)
    }
}

/// Column means and scales used for an internally standardized fit, together
/// with the coefficients on the standardized scale. Kept so that reports can
/// show both scales and the back-transformation stays auditable.
#[derive(Debug, Clone, PartialEq)]
pub struct FitScaling {
    /// Per-experiment column means.
    pub means: Vec<Array1<f64>>,
    /// Per-experiment column scales (sample standard deviations).
    pub scales: Vec<Array1<f64>>,
    /// Coefficients on the standardized scale.
    pub coefficients: CoefficientTensor,
}

/// Output of a solver run.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub coefficients: CoefficientTensor,
    /// Objective value (pooled loss plus penalty) at `coefficients`.
    pub objective_value: f64,
    /// Residuals Y - b - X theta, one (M x n_k) array per experiment.
    pub residuals: Vec<Array2<f64>>,
    /// Outer iterations used (penalized) or coordinate sweeps (unpenalized).
    pub iterations: usize,
    pub converged: bool,
    /// Objective value at the initial point and after every outer iteration,
    /// on the solver's working scale.
    pub objective_trace: Vec<f64>,
    /// Standardization data when the fit was run on a standardized design.
    pub scaling: Option<FitScaling>,
}

impl FitResult {
    pub fn model_size(&self, tol: f64) -> usize {
        active_set(&self.coefficients, tol).len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn dataset(n: &[usize], p: usize) -> MultiExperimentDataset {
        let records = n
            .iter()
            .map(|&nk| {
                (
                    Array1::from_iter((0..nk).map(|i| i as f64)),
                    Array2::from_shape_fn((nk, p), |(i, j)| (i * p + j) as f64 * 0.1),
                )
            })
            .collect();
        MultiExperimentDataset::with_default_names(records).unwrap()
    }

    #[test]
    fn accepts_well_formed_experiments() {
        let data = dataset(&[10, 12], 3);
        assert_eq!(data.n_experiments(), 2);
        assert_eq!(data.n_predictors(), 3);
        assert_eq!(data.sample_sizes(), vec![10, 12]);
    }

    #[test]
    fn rejects_mismatched_predictor_counts() {
        let records = vec![
            (Array1::zeros(4), Array2::zeros((4, 3))),
            (Array1::zeros(5), Array2::zeros((5, 4))),
        ];
        let err = MultiExperimentDataset::with_default_names(records).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn rejects_row_count_mismatch() {
        let records = vec![(Array1::zeros(4), Array2::zeros((5, 3)))];
        let err = MultiExperimentDataset::with_default_names(records).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn rejects_non_finite_entries() {
        let mut design = Array2::zeros((4, 2));
        design[[2, 1]] = f64::NAN;
        let records = vec![(Array1::zeros(4), design)];
        let err = MultiExperimentDataset::with_default_names(records).unwrap_err();
        assert!(matches!(err, Error::NonFiniteValue(_)));
    }

    #[test]
    fn validation_is_idempotent() {
        let data = dataset(&[6, 7], 2);
        let records = data
            .experiments()
            .iter()
            .map(|e| (e.responses().to_owned(), e.design().to_owned()))
            .collect();
        let again =
            MultiExperimentDataset::new(records, data.predictor_names().to_vec()).unwrap();
        assert_eq!(data, again);
    }

    #[test]
    fn quantile_grid_invariants() {
        assert!(QuantileGrid::new(vec![0.25, 0.5, 0.75]).is_ok());
        assert!(matches!(
            QuantileGrid::new(vec![0.5, 0.5]),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            QuantileGrid::new(vec![0.0, 0.5]),
            Err(Error::InvalidQuantile(_))
        ));
        assert!(matches!(
            QuantileGrid::new(vec![0.5, 1.0]),
            Err(Error::InvalidQuantile(_))
        ));
    }

    #[test]
    fn active_set_examples() {
        let mut coefs = CoefficientTensor::zeros(2, 2, 5);
        assert!(active_set(&coefs, 0.0).is_empty());

        // single nonzero slope: spec indices (1, 1, 3) one-based
        coefs.set_slope(0, 0, 2, 0.5);
        assert_eq!(active_set(&coefs, 1e-8), BTreeSet::from([2]));

        // a slope below tolerance does not activate its group
        coefs.set_slope(0, 0, 2, 1e-12);
        assert!(active_set(&coefs, 1e-8).is_empty());

        // intercepts never contribute
        coefs.set_slope(0, 0, 2, 0.0);
        coefs.set_intercept(0, 0, 10.0);
        assert!(active_set(&coefs, 0.0).is_empty());
    }

    #[test]
    fn active_set_is_monotone_in_tol() {
        let mut rng = 17u64;
        let mut next = move || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng >> 11) as f64) / ((1u64 << 53) as f64)
        };
        let mut coefs = CoefficientTensor::zeros(2, 3, 8);
        for k in 0..2 {
            for m in 0..3 {
                for j in 0..8 {
                    coefs.set_slope(k, m, j, (next() - 0.5) * 1e-6);
                }
            }
        }
        let tols = [0.0, 1e-9, 1e-7, 1e-6, 1e-5];
        for w in tols.windows(2) {
            let larger = active_set(&coefs, w[1]);
            let smaller = active_set(&coefs, w[0]);
            assert!(larger.is_subset(&smaller));
        }
    }

    #[test]
    fn penalty_spec_validation() {
        assert!(PenaltySpec::scad(0.5).validate(2).is_ok());
        assert!(PenaltySpec::scad(0.5).with_shape_a(2.0).validate(2).is_err());
        assert!(PenaltySpec::mcp(0.5).with_shape_a(1.0).validate(2).is_err());
        assert!(PenaltySpec::scad(-0.1).validate(2).is_err());
        assert!(PenaltySpec::none().validate(2).is_ok());

        let w = PenaltySpec::scad(0.1).with_weights(vec![1.0, 0.0]);
        assert!(w.validate(2).is_ok());
        let all_zero = PenaltySpec::scad(0.1).with_weights(vec![0.0, 0.0]);
        assert!(all_zero.validate(2).is_err());
        let negative = PenaltySpec::scad(0.1).with_weights(vec![1.0, -1.0]);
        assert!(matches!(
            negative.validate(2),
            Err(Error::NonPositiveWeight { index: 1, .. })
        ));
    }

    #[test]
    fn group_l1_sums_all_experiments_and_quantiles() {
        let slopes = array![[[1.0, 0.0], [-2.0, 0.0]], [[0.5, 3.0], [0.0, 0.0]]];
        let coefs = CoefficientTensor::from_parts(slopes, Array2::zeros((2, 2))).unwrap();
        assert_eq!(coefs.group_l1(0), 3.5);
        assert_eq!(coefs.group_l1(1), 3.0);
    }
}
