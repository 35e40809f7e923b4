//! diqr: sparse linear quantile regression fitted jointly across multiple
//! experiments and multiple quantile levels.
//!
//! The experiments share one predictor set but have their own responses and
//! measurements. All check losses are pooled into a single objective and a
//! nonconvex penalty (SCAD or MCP) on the L1 norm of each predictor's
//! coefficient group selects the predictors that affect any response at any
//! quantile level. Tuning and model selection use a multiple-quantile
//! Bayesian information criterion; a simulation benchmark compares the
//! pooled fit against per-experiment combined analyses.
//!
//! ```
//! use diqr::{fit_penalized, MultiExperimentDataset, PenaltySpec, QuantileGrid, SolverConfig};
//! use ndarray::{Array1, Array2};
//!
//! let x = Array2::from_shape_fn((40, 3), |(i, j)| ((i * 7 + j * 13) % 11) as f64 / 5.0 - 1.0);
//! let y = Array1::from_shape_fn(40, |i| 2.0 * x[[i, 0]] + 0.1 * (i as f64).sin());
//! let data = MultiExperimentDataset::with_default_names(vec![(y, x)]).unwrap();
//! let grid = QuantileGrid::new(vec![0.25, 0.5, 0.75]).unwrap();
//! let fit = fit_penalized(&data, &grid, &PenaltySpec::scad(0.05), &SolverConfig::default()).unwrap();
//! assert!(fit.coefficients.slope(0, 1, 0) > 1.0);
//! ```

pub mod error;
pub mod loss;
pub mod model;
pub mod selection;
pub mod simbench;
pub mod solver;

pub use error::{Error, Result};
pub use model::{
    active_set, CoefficientTensor, FitResult, FitScaling, MultiExperimentDataset, PenaltyFamily,
    PenaltySpec, QuantileGrid, DEFAULT_ACTIVE_TOL,
};
pub use solver::{
    coordinate_update, fit_penalized, fit_unpenalized, predict, prediction_error, weighted_median,
    Coordinate, PredictionError, SolverConfig,
};
