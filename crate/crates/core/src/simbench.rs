//! Monte-Carlo benchmark: scenario generators with AR-correlated covariates
//! and cross-experiment-correlated errors, selection metrics, and a seeded
//! replication runner comparing the pooled data-integration fit against
//! per-experiment combined analyses.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::model::{CoefficientTensor, MultiExperimentDataset, PenaltySpec, QuantileGrid};
use crate::selection::{
    combined_analysis, default_lambda_grid, default_t, select_lambda, MqbicConfig,
};
use crate::solver::SolverConfig;

/// Scale of the heteroscedastic error term: responses are mean plus
/// 0.7 * error * hetero column.
pub const HETERO_SCALE: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorFamily {
    Normal,
    T3,
}

/// One synthetic design: sizes, covariate correlation, error law, the
/// nonzero (experiment, predictor) slots and the per-experiment column that
/// drives heteroscedasticity.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SimScenario {
    pub n: usize,
    pub p: usize,
    pub k_experiments: usize,
    pub quantiles: Vec<f64>,
    pub grouping: Grouping,
    pub error_family: ErrorFamily,
    pub error_cross_corr: f64,
    pub ar_rho: f64,
    /// Slots (experiment, predictor) whose mean-model coefficient is drawn
    /// uniformly from [coef_low, coef_high]; zero-based indices.
    pub nonzero_spec: Vec<(usize, usize)>,
    pub coef_low: f64,
    pub coef_high: f64,
    /// Per-experiment predictor index whose column is mapped through the
    /// standard normal CDF and multiplies the error term.
    pub hetero_column: Vec<usize>,
    pub seed: u64,
}

impl SimScenario {
    /// Complete grouping: the same five predictors drive both experiments;
    /// the third column is heteroscedastic in both.
    pub fn table1() -> Self {
        let active = [0usize, 5, 11, 14, 19];
        let mut nonzero = Vec::new();
        for k in 0..2 {
            for &j in &active {
                nonzero.push((k, j));
            }
        }
        Self {
            n: 100,
            p: 100,
            k_experiments: 2,
            quantiles: (1..=5).map(|m| m as f64 / 6.0).collect(),
            grouping: Grouping::Complete,
            error_family: ErrorFamily::Normal,
            error_cross_corr: 0.7,
            ar_rho: 0.5,
            nonzero_spec: nonzero,
            coef_low: 0.05,
            coef_high: 1.0,
            hetero_column: vec![2, 2],
            seed: 1,
        }
    }

    /// Incomplete grouping with normal errors: the experiments share only
    /// part of their active predictors and have different heteroscedastic
    /// columns.
    pub fn table2() -> Self {
        let first = [3usize, 5, 8, 11, 14, 19];
        let second = [0usize, 5, 11, 14, 19, 24];
        let mut nonzero = Vec::new();
        nonzero.extend(first.iter().map(|&j| (0, j)));
        nonzero.extend(second.iter().map(|&j| (1, j)));
        Self {
            grouping: Grouping::Incomplete,
            nonzero_spec: nonzero,
            hetero_column: vec![0, 2],
            ..Self::table1()
        }
    }

    /// The incomplete-grouping design with bivariate t errors (three
    /// degrees of freedom, unit scale).
    pub fn table3() -> Self {
        Self {
            error_family: ErrorFamily::T3,
            ..Self::table2()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn quantile_grid(&self) -> Result<QuantileGrid> {
        QuantileGrid::new(self.quantiles.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.k_experiments == 0 {
            return Err(Error::InvalidScenario("n, p and K must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ar_rho) {
            return Err(Error::InvalidScenario(format!(
                "ar_rho must lie in [0, 1), got {}",
                self.ar_rho
            )));
        }
        if self.error_cross_corr.abs() >= 1.0 {
            return Err(Error::InvalidScenario(format!(
                "error cross-correlation must lie in (-1, 1), got {}",
                self.error_cross_corr
            )));
        }
        if self.coef_low > self.coef_high {
            return Err(Error::InvalidScenario(format!(
                "coefficient range [{}, {}] is empty",
                self.coef_low, self.coef_high
            )));
        }
        if self.hetero_column.len() != self.k_experiments {
            return Err(Error::InvalidScenario(format!(
                "{} heteroscedastic columns for {} experiments",
                self.hetero_column.len(),
                self.k_experiments
            )));
        }
        if let Some(&h) = self.hetero_column.iter().find(|&&h| h >= self.p) {
            return Err(Error::InvalidScenario(format!(
                "heteroscedastic column {h} out of range"
            )));
        }
        if let Some(&(k, j)) = self
            .nonzero_spec
            .iter()
            .find(|&&(k, j)| k >= self.k_experiments || j >= self.p)
        {
            return Err(Error::InvalidScenario(format!(
                "nonzero slot ({k}, {j}) out of range"
            )));
        }
        self.quantile_grid()?;
        Ok(())
    }
}

/// A generated dataset with everything the benchmark needs to score a fit:
/// the mean-model coefficients, the implied true quantile-regression tensor,
/// its active set, and the raw error draws.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub dataset: MultiExperimentDataset,
    /// Mean-model slopes, one row per experiment.
    pub alphas: Array2<f64>,
    pub truth: CoefficientTensor,
    pub true_active: BTreeSet<usize>,
    /// Error draws, one vector per experiment.
    pub errors: Vec<Array1<f64>>,
}

/// Marginal quantile F^-1(tau) of the error law.
pub fn error_quantile(family: ErrorFamily, tau: f64) -> f64 {
    match family {
        ErrorFamily::Normal => Normal::standard().inverse_cdf(tau),
        ErrorFamily::T3 => StudentsT::new(0.0, 1.0, 3.0)
            .expect("valid t distribution")
            .inverse_cdf(tau),
    }
}

/// True quantile-regression slopes at the given levels: the mean-model
/// slopes, shifted in the heteroscedastic column by
/// HETERO_SCALE * F^-1(tau) because the error enters through that column.
pub fn true_tensor_at(scenario: &SimScenario, alphas: &Array2<f64>, taus: &[f64]) -> CoefficientTensor {
    let k_n = scenario.k_experiments;
    let mut slopes = Array3::zeros((k_n, taus.len(), scenario.p));
    for k in 0..k_n {
        for (m, &tau) in taus.iter().enumerate() {
            for j in 0..scenario.p {
                let mut v = alphas[[k, j]];
                if j == scenario.hetero_column[k] {
                    v += HETERO_SCALE * error_quantile(scenario.error_family, tau);
                }
                slopes[[k, m, j]] = v;
            }
        }
    }
    CoefficientTensor::from_parts(slopes, Array2::zeros((k_n, taus.len())))
        .expect("finite truth tensor")
}

/// Lower-triangular Cholesky factor of the equicorrelation matrix with
/// off-diagonal `rho`.
fn equicorrelation_cholesky(dim: usize, rho: f64) -> Result<Vec<Vec<f64>>> {
    let mut a = vec![vec![0.0; dim]; dim];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j { 1.0 } else { rho };
        }
    }
    let mut l = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut sum = a[i][j];
            for t in 0..j {
                sum -= l[i][t] * l[j][t];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::InvalidScenario(format!(
                        "error correlation {rho} is not positive definite for {dim} experiments"
                    )));
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Draw one dataset.
///
/// Draw order, fixed for reproducibility: (1) the nonzero mean-model
/// coefficients in slot order, (2) per experiment the latent covariates row
/// by row through the AR recursion, (3) per observation the error vector
/// across experiments (plus one chi-square mixing draw for t errors).
pub fn generate(scenario: &SimScenario) -> Result<GeneratedData> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let k_n = scenario.k_experiments;
    let (n, p) = (scenario.n, scenario.p);
    let phi = Normal::standard();

    let mut alphas = Array2::zeros((k_n, p));
    for &(k, j) in &scenario.nonzero_spec {
        alphas[[k, j]] = rng.gen_range(scenario.coef_low..=scenario.coef_high);
    }

    let root = (1.0 - scenario.ar_rho * scenario.ar_rho).sqrt();
    let mut designs: Vec<Array2<f64>> = Vec::with_capacity(k_n);
    for k in 0..k_n {
        let mut x = Array2::zeros((n, p));
        for i in 0..n {
            let mut prev = 0.0;
            for j in 0..p {
                let z: f64 = StandardNormal.sample(&mut rng);
                let latent = if j == 0 {
                    z
                } else {
                    scenario.ar_rho * prev + root * z
                };
                prev = latent;
                x[[i, j]] = latent;
            }
        }
        let h = scenario.hetero_column[k];
        for i in 0..n {
            x[[i, h]] = phi.cdf(x[[i, h]]);
        }
        designs.push(x);
    }

    let chol = equicorrelation_cholesky(k_n, scenario.error_cross_corr)?;
    let chi2 = Gamma::new(1.5, 2.0).expect("valid gamma");
    let mut errors: Vec<Array1<f64>> = (0..k_n).map(|_| Array1::zeros(n)).collect();
    let mut z = vec![0.0; k_n];
    for i in 0..n {
        for zk in z.iter_mut() {
            *zk = StandardNormal.sample(&mut rng);
        }
        let mix = match scenario.error_family {
            ErrorFamily::Normal => 1.0,
            ErrorFamily::T3 => {
                let w: f64 = chi2.sample(&mut rng);
                (w / 3.0).sqrt()
            }
        };
        for k in 0..k_n {
            let mut v = 0.0;
            for (t, &zt) in z.iter().enumerate().take(k + 1) {
                v += chol[k][t] * zt;
            }
            errors[k][i] = v / mix;
        }
    }

    let records = designs
        .into_iter()
        .enumerate()
        .map(|(k, x)| {
            let h = scenario.hetero_column[k];
            let y = Array1::from_shape_fn(n, |i| {
                let mut v = HETERO_SCALE * errors[k][i] * x[[i, h]];
                for j in 0..p {
                    v += alphas[[k, j]] * x[[i, j]];
                }
                v
            });
            (y, x)
        })
        .collect();
    let dataset = MultiExperimentDataset::with_default_names(records)?;

    let truth = true_tensor_at(scenario, &alphas, &scenario.quantiles);
    let true_active = (0..p).filter(|&j| truth.group_l1(j) > 0.0).collect();
    Ok(GeneratedData {
        dataset,
        alphas,
        truth,
        true_active,
        errors,
    })
}

/// Positive selection rate, false discovery rate over the null set, and the
/// per-(experiment, quantile) average L1 estimation error of the slopes.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Metrics {
    pub psr: f64,
    pub fdr: f64,
    pub ae: f64,
}

pub fn psr_fdr_ae(
    true_active: &BTreeSet<usize>,
    est_active: &BTreeSet<usize>,
    true_coefs: &CoefficientTensor,
    est_coefs: &CoefficientTensor,
    p: usize,
) -> Result<Metrics> {
    if true_active.iter().chain(est_active.iter()).any(|&j| j >= p) {
        return Err(Error::IndexOutOfRange("active set beyond predictor count".into()));
    }
    if true_active.is_empty() {
        return Err(Error::DegenerateDenominator("true active set is empty"));
    }
    let null_count = p - true_active.len();
    if null_count == 0 {
        return Err(Error::DegenerateDenominator("null predictor set is empty"));
    }
    let hits = est_active.intersection(true_active).count() as f64;
    let false_hits = est_active.difference(true_active).count() as f64;
    let km = (true_coefs.n_experiments() * true_coefs.n_quantiles()) as f64;
    let ae = true_coefs.slope_l1_distance(est_coefs)? / km;
    Ok(Metrics {
        psr: hits / true_active.len() as f64,
        fdr: false_hits / null_count as f64,
        ae,
    })
}

/// Fitting strategy benchmarked by the study runner.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum Method {
    /// Pooled fit over all experiments and quantiles with criterion-tuned
    /// lambda.
    DataIntegration,
    /// Per-experiment single-quantile selection, merged by set union.
    CombinedAnalysis { tau: f64 },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::DataIntegration => "DI".to_string(),
            Method::CombinedAnalysis { tau } => format!("CA({tau})"),
        }
    }
}

/// Shared settings for every replication of a study.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    /// Penalty family and shape; the multiplier comes from the tuning path.
    pub penalty: PenaltySpec,
    /// T = log(p) / t_divisor.
    pub t_divisor: f64,
    /// Override for the maximum model size; default floor(n / (4 log n)).
    pub max_model_size: Option<usize>,
    pub lambda_grid_points: usize,
    pub solver: SolverConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            penalty: PenaltySpec::scad(0.0),
            t_divisor: 3.0,
            max_model_size: None,
            lambda_grid_points: 50,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MethodOutcome {
    pub method: String,
    pub psr: f64,
    pub fdr: f64,
    pub ae: f64,
    pub model_size: usize,
    pub chosen_lambda: Option<f64>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub outcomes: Vec<MethodOutcome>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub psr_mean: f64,
    pub psr_sd: f64,
    pub fdr_mean: f64,
    pub fdr_sd: f64,
    pub ae_mean: f64,
    pub ae_sd: f64,
    pub model_size_mean: f64,
    pub model_size_sd: f64,
}

/// Machine-readable study output mirroring the layout of the benchmark
/// tables: per-method means with standard deviations, plus the
/// per-replication breakdown.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StudyReport {
    pub scenario: SimScenario,
    pub replications: usize,
    pub summaries: Vec<MethodSummary>,
    pub records: Vec<ReplicationRecord>,
}

/// Seed of one replication: the scenario seed mixed with the replication
/// index through two rounds of the SplitMix64 finalizer.
pub fn replication_seed(scenario_seed: u64, replication: usize) -> u64 {
    let mut z = scenario_seed ^ (replication as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    for _ in 0..2 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

fn run_method(
    method: &Method,
    gen: &GeneratedData,
    scenario: &SimScenario,
    config: &StudyConfig,
) -> Result<MethodOutcome> {
    let data = &gen.dataset;
    let t_const = default_t(scenario.p, config.t_divisor)?;
    let mut mq = MqbicConfig::default_for(data)?;
    mq.t_const = t_const;
    if let Some(dn) = config.max_model_size {
        mq.max_model_size = dn;
    }
    match method {
        Method::DataIntegration => {
            let grid = scenario.quantile_grid()?;
            let path = default_lambda_grid(data, &grid, config.lambda_grid_points, &config.solver)?;
            let report = select_lambda(data, &grid, &config.penalty, &path, &mq, &config.solver)?;
            let metrics = psr_fdr_ae(
                &gen.true_active,
                &report.selected_predictors,
                &gen.truth,
                &report.fit.coefficients,
                scenario.p,
            )?;
            Ok(MethodOutcome {
                method: method.name(),
                psr: metrics.psr,
                fdr: metrics.fdr,
                ae: metrics.ae,
                model_size: report.selected_predictors.len(),
                chosen_lambda: report.chosen_lambda,
            })
        }
        Method::CombinedAnalysis { tau } => {
            let report =
                combined_analysis(data, *tau, &config.penalty, None, &mq, &config.solver)?;
            let k_n = scenario.k_experiments;
            let mut slopes = Array3::zeros((k_n, 1, scenario.p));
            let mut intercepts = Array2::zeros((k_n, 1));
            for (k, per) in report.per_experiment.iter().enumerate() {
                for j in 0..scenario.p {
                    slopes[[k, 0, j]] = per.fit.coefficients.slope(0, 0, j);
                }
                intercepts[[k, 0]] = per.fit.coefficients.intercept(0, 0);
            }
            let est = CoefficientTensor::from_parts(slopes, intercepts)?;
            let truth = true_tensor_at(scenario, &gen.alphas, &[*tau]);
            let metrics =
                psr_fdr_ae(&gen.true_active, &report.union, &truth, &est, scenario.p)?;
            Ok(MethodOutcome {
                method: method.name(),
                psr: metrics.psr,
                fdr: metrics.fdr,
                ae: metrics.ae,
                model_size: report.union.len(),
                chosen_lambda: None,
            })
        }
    }
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Run `replications` independent draws of a scenario, fit every method on
/// each draw and aggregate the metrics. Replication seeds are pre-assigned
/// so concurrent execution cannot change the report.
pub fn run_study(
    scenario: &SimScenario,
    replications: usize,
    methods: &[Method],
    config: &StudyConfig,
) -> Result<StudyReport> {
    if replications == 0 {
        return Err(Error::InvalidInput("at least one replication is required".into()));
    }
    if methods.is_empty() {
        return Err(Error::InvalidInput("at least one method is required".into()));
    }
    scenario.validate()?;
    let seeds: Vec<u64> = (0..replications)
        .map(|r| replication_seed(scenario.seed, r))
        .collect();
    let records: Vec<ReplicationRecord> = seeds
        .par_iter()
        .enumerate()
        .map(|(r, &seed)| -> Result<ReplicationRecord> {
            let attach = |e: Error| Error::InvalidInput(format!("replication {r}: {e}"));
            let draw = generate(&scenario.clone().with_seed(seed)).map_err(attach)?;
            let mut outcomes = Vec::with_capacity(methods.len());
            for method in methods {
                outcomes.push(run_method(method, &draw, scenario, config).map_err(attach)?);
            }
            Ok(ReplicationRecord {
                replication: r,
                seed,
                outcomes,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let summaries = methods
        .iter()
        .enumerate()
        .map(|(mi, method)| {
            let of = |f: fn(&MethodOutcome) -> f64| records.iter().map(move |r| f(&r.outcomes[mi]));
            let (psr_mean, psr_sd) = mean_sd(of(|o| o.psr));
            let (fdr_mean, fdr_sd) = mean_sd(of(|o| o.fdr));
            let (ae_mean, ae_sd) = mean_sd(of(|o| o.ae));
            let (model_size_mean, model_size_sd) = mean_sd(of(|o| o.model_size as f64));
            MethodSummary {
                method: method.name(),
                psr_mean,
                psr_sd,
                fdr_mean,
                fdr_sd,
                ae_mean,
                ae_sd,
                model_size_mean,
                model_size_sd,
            }
        })
        .collect();

    Ok(StudyReport {
        scenario: scenario.clone(),
        replications,
        summaries,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_the_documented_designs() {
        let t1 = SimScenario::table1();
        assert_eq!(t1.n, 100);
        assert_eq!(t1.p, 100);
        assert_eq!(t1.k_experiments, 2);
        assert_eq!(t1.quantiles.len(), 5);
        assert!((t1.quantiles[0] - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(t1.nonzero_spec.len(), 10);
        assert_eq!(t1.hetero_column, vec![2, 2]);
        t1.validate().unwrap();

        let t2 = SimScenario::table2();
        assert_eq!(t2.nonzero_spec.len(), 12);
        assert_eq!(t2.hetero_column, vec![0, 2]);
        assert_eq!(t2.error_family, ErrorFamily::Normal);
        t2.validate().unwrap();

        let t3 = SimScenario::table3();
        assert_eq!(t3.error_family, ErrorFamily::T3);
        assert_eq!(t3.nonzero_spec, t2.nonzero_spec);
        t3.validate().unwrap();
    }

    #[test]
    fn scenario_validation_rejects_bad_fields() {
        let mut s = SimScenario::table1();
        s.ar_rho = 1.0;
        assert!(matches!(s.validate(), Err(Error::InvalidScenario(_))));
        let mut s = SimScenario::table1();
        s.hetero_column = vec![2];
        assert!(s.validate().is_err());
        let mut s = SimScenario::table1();
        s.nonzero_spec.push((5, 0));
        assert!(s.validate().is_err());
        let mut s = SimScenario::table1();
        s.coef_low = 2.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        let scenario = SimScenario {
            n: 20,
            p: 6,
            nonzero_spec: vec![(0, 0), (1, 3)],
            hetero_column: vec![2, 2],
            ..SimScenario::table1()
        };
        let a = generate(&scenario).unwrap();
        let b = generate(&scenario).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        let c = generate(&scenario.clone().with_seed(2)).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn hetero_column_lies_in_the_unit_interval() {
        let scenario = SimScenario {
            n: 50,
            p: 5,
            nonzero_spec: vec![(0, 0)],
            hetero_column: vec![2, 4],
            ..SimScenario::table1()
        };
        let draw = generate(&scenario).unwrap();
        for (k, exp) in draw.dataset.experiments().iter().enumerate() {
            let h = scenario.hetero_column[k];
            for &v in exp.design().column(h) {
                assert!(v > 0.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn truth_tensor_shifts_only_the_hetero_column() {
        let scenario = SimScenario {
            n: 10,
            p: 4,
            nonzero_spec: vec![(0, 0), (0, 2), (1, 1)],
            hetero_column: vec![2, 0],
            ..SimScenario::table1()
        };
        let draw = generate(&scenario).unwrap();
        let phi_inv = |tau: f64| Normal::standard().inverse_cdf(tau);
        for k in 0..2 {
            let h = scenario.hetero_column[k];
            for (m, &tau) in scenario.quantiles.iter().enumerate() {
                for j in 0..4 {
                    let expected = draw.alphas[[k, j]]
                        + if j == h { HETERO_SCALE * phi_inv(tau) } else { 0.0 };
                    assert_eq!(draw.truth.slope(k, m, j), expected);
                }
            }
        }
        // the hetero columns join the active set through the quantile shifts
        assert!(draw.true_active.contains(&2));
        assert!(draw.true_active.contains(&0));
        assert!(draw.true_active.contains(&1));
        assert_eq!(draw.true_active.len(), 3);
    }

    #[test]
    fn metric_examples() {
        let truth: BTreeSet<usize> = [0, 1, 2].into();
        let est: BTreeSet<usize> = [1, 2, 6].into();
        let coefs = CoefficientTensor::zeros(1, 2, 10);
        let m = psr_fdr_ae(&truth, &est, &coefs, &coefs, 10).unwrap();
        assert!((m.psr - 2.0 / 3.0).abs() <= 1e-15);
        assert!((m.fdr - 1.0 / 7.0).abs() <= 1e-15);
        assert_eq!(m.ae, 0.0);

        let exact = psr_fdr_ae(&truth, &truth, &coefs, &coefs, 10).unwrap();
        assert_eq!(exact.psr, 1.0);
        assert_eq!(exact.fdr, 0.0);

        // KM = 2 and slope distance 1 gives AE = 0.5
        let mut est_coefs = CoefficientTensor::zeros(1, 2, 10);
        est_coefs.set_slope(0, 0, 4, 0.25);
        est_coefs.set_slope(0, 1, 7, -0.75);
        let m = psr_fdr_ae(&truth, &est, &coefs, &est_coefs, 10).unwrap();
        assert!((m.ae - 0.5).abs() <= 1e-15);

        assert!(matches!(
            psr_fdr_ae(&BTreeSet::new(), &est, &coefs, &coefs, 10),
            Err(Error::DegenerateDenominator(_))
        ));
        let all: BTreeSet<usize> = (0..10).collect();
        assert!(matches!(
            psr_fdr_ae(&all, &est, &coefs, &coefs, 10),
            Err(Error::DegenerateDenominator(_))
        ));
    }

    #[test]
    fn replication_seeds_are_stable_and_distinct() {
        let s1 = replication_seed(1, 0);
        let s2 = replication_seed(1, 1);
        assert_ne!(s1, s2);
        assert_eq!(s1, replication_seed(1, 0));
        let many: BTreeSet<u64> = (0..100).map(|r| replication_seed(7, r)).collect();
        assert_eq!(many.len(), 100);
    }

    #[test]
    fn tiny_study_runs_and_reruns_identically() {
        let scenario = SimScenario {
            n: 40,
            p: 8,
            nonzero_spec: vec![(0, 1), (1, 1), (0, 5), (1, 5)],
            hetero_column: vec![2, 2],
            quantiles: vec![0.25, 0.5, 0.75],
            ..SimScenario::table1()
        };
        let config = StudyConfig {
            lambda_grid_points: 15,
            ..StudyConfig::default()
        };
        let methods = [Method::DataIntegration, Method::CombinedAnalysis { tau: 0.5 }];
        let report = run_study(&scenario, 3, &methods, &config).unwrap();
        assert_eq!(report.records.len(), 3);
        assert_eq!(report.summaries.len(), 2);
        for record in &report.records {
            for outcome in &record.outcomes {
                assert!((0.0..=1.0).contains(&outcome.psr));
                assert!((0.0..=1.0).contains(&outcome.fdr));
                assert!(outcome.ae >= 0.0);
            }
        }
        let again = run_study(&scenario, 3, &methods, &config).unwrap();
        let a = serde_json::to_string(&report).unwrap();
        let b = serde_json::to_string(&again).unwrap();
        assert_eq!(a, b);
    }
}
