//! Brute-force reference fitter for tiny problems, used only by tests.
//!
//! Unpenalized: every (experiment, quantile) block's check loss is minimized
//! over interpolating basic solutions, i.e. coefficient vectors that fit a
//! subset of observations exactly. Penalized: the best basic solution seeds
//! a dense grid search that is then refined around its argmin. Nothing here
//! shares code with the coordinate-descent path.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::loss::{self, check_value};
use crate::model::{
    CoefficientTensor, FitResult, MultiExperimentDataset, PenaltyFamily, PenaltySpec, QuantileGrid,
};

const MAX_DIMS: usize = 3;
const MAX_OBS: usize = 12;

/// Solve a d x d linear system by Gaussian elimination with partial
/// pivoting; `None` when the matrix is numerically singular.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let d = b.len();
    for col in 0..d {
        let pivot = (col..d).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..d {
            let f = a[row][col] / a[col][col];
            for c in col..d {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; d];
    for col in (0..d).rev() {
        let mut acc = b[col];
        for c in (col + 1)..d {
            acc -= a[col][c] * x[c];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}

fn combinations(n: usize, d: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..d).collect();
    if d == 0 || d > n {
        return;
    }
    loop {
        visit(&idx);
        let mut i = d;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - d {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in (i + 1)..d {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn subsets_of(support: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &j in support {
        let mut extended: Vec<Vec<usize>> = out
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.push(j);
                s
            })
            .collect();
        out.append(&mut extended);
    }
    out
}

/// All interpolating basic solutions of block (k, m): for every subset S of
/// the support and every choice of |S| + 1 observations, the (intercept,
/// slopes on S) vector that fits those observations exactly. Returned as
/// full-length (intercept, slopes on `support`) vectors.
fn basic_solutions(
    x: ndarray::ArrayView2<'_, f64>,
    y: ndarray::ArrayView1<'_, f64>,
    support: &[usize],
) -> Vec<Vec<f64>> {
    let n = y.len();
    let mut out = Vec::new();
    for subset in subsets_of(support) {
        let d = subset.len() + 1;
        combinations(n, d, |obs| {
            let a: Vec<Vec<f64>> = obs
                .iter()
                .map(|&i| {
                    let mut row = vec![1.0];
                    row.extend(subset.iter().map(|&j| x[[i, j]]));
                    row
                })
                .collect();
            let b: Vec<f64> = obs.iter().map(|&i| y[i]).collect();
            if let Some(sol) = solve_dense(a, b) {
                let mut full = vec![0.0; support.len() + 1];
                full[0] = sol[0];
                for (t, &j) in subset.iter().enumerate() {
                    let pos = support.iter().position(|&s| s == j).unwrap();
                    full[pos + 1] = sol[t + 1];
                }
                out.push(full);
            }
        });
    }
    out
}

fn block_loss(
    x: ndarray::ArrayView2<'_, f64>,
    y: ndarray::ArrayView1<'_, f64>,
    support: &[usize],
    tau: f64,
    coef: &[f64],
) -> f64 {
    let mut sum = 0.0;
    for i in 0..y.len() {
        let mut pred = coef[0];
        for (t, &j) in support.iter().enumerate() {
            pred += x[[i, j]] * coef[t + 1];
        }
        sum += check_value(tau, y[i] - pred);
    }
    sum
}

fn guard(data: &MultiExperimentDataset, support: &[usize]) -> Result<()> {
    if support.len() + 1 > MAX_DIMS {
        return Err(Error::ProblemTooLarge(format!(
            "support of size {} needs {} free coefficients per block, limit is {}",
            support.len(),
            support.len() + 1,
            MAX_DIMS
        )));
    }
    if let Some(exp) = data.experiments().iter().find(|e| e.n_samples() > MAX_OBS) {
        return Err(Error::ProblemTooLarge(format!(
            "experiment with {} observations, limit is {}",
            exp.n_samples(),
            MAX_OBS
        )));
    }
    if let Some(&j) = support.iter().find(|&&j| j >= data.n_predictors()) {
        return Err(Error::IndexOutOfRange(format!("support predictor {j}")));
    }
    Ok(())
}

/// Exhaustive reference fit. With no penalty each block is solved by basic
/// solution enumeration; with a penalty (single experiment, single quantile
/// only) a dense grid around the best basic solution is searched and then
/// refined. Guards reject problems beyond tiny test sizes.
pub fn brute_force_oracle(
    data: &MultiExperimentDataset,
    grid: &QuantileGrid,
    support: &[usize],
    penalty: Option<&PenaltySpec>,
) -> Result<FitResult> {
    guard(data, support)?;
    let penalized = penalty
        .map(|p| p.family != PenaltyFamily::None && p.lambda > 0.0)
        .unwrap_or(false);
    if penalized {
        return penalized_oracle(data, grid, support, penalty.unwrap());
    }

    let n_k = data.n_experiments();
    let n_m = grid.len();
    let p = data.n_predictors();
    let mut slopes = Array3::zeros((n_k, n_m, p));
    let mut intercepts = Array2::zeros((n_k, n_m));
    for (k, exp) in data.experiments().iter().enumerate() {
        let x = exp.design();
        let y = exp.responses();
        let candidates = basic_solutions(x, y, support);
        if candidates.is_empty() {
            return Err(Error::ProblemTooLarge(
                "no nonsingular interpolating subset exists".into(),
            ));
        }
        for (m, &tau) in grid.levels().iter().enumerate() {
            let best = candidates
                .iter()
                .map(|c| (block_loss(x, y, support, tau, c), c))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .unwrap()
                .1;
            intercepts[[k, m]] = best[0];
            for (t, &j) in support.iter().enumerate() {
                slopes[[k, m, j]] = best[t + 1];
            }
        }
    }
    assemble(data, grid, slopes, intercepts, penalty)
}

fn penalized_oracle(
    data: &MultiExperimentDataset,
    grid: &QuantileGrid,
    support: &[usize],
    penalty: &PenaltySpec,
) -> Result<FitResult> {
    if data.n_experiments() != 1 || grid.len() != 1 {
        return Err(Error::ProblemTooLarge(
            "penalized oracle supports a single experiment and quantile".into(),
        ));
    }
    penalty.validate(1)?;
    let exp = data.experiment(0);
    let (x, y) = (exp.design(), exp.responses());
    let tau = grid.level(0);
    let inv_n = 1.0 / exp.n_samples() as f64;
    let d = support.len() + 1;

    let objective = |coef: &[f64]| -> f64 {
        let mut v = inv_n * block_loss(x, y, support, tau, coef);
        for t in 0..support.len() {
            v += loss::penalty_value(penalty, coef[t + 1].abs()).expect("validated penalty");
        }
        v
    };

    let mut candidates = basic_solutions(x, y, support);
    candidates.push(vec![0.0; d]);
    let best_idx = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (i, objective(c)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .unwrap();
    let mut center = candidates.swap_remove(best_idx);

    // dense pass at step 1e-3 over a box around the best basic solution;
    // slope boxes always bracket zero because of the penalty kink there
    let mut lo = vec![0.0; d];
    let mut hi = vec![0.0; d];
    lo[0] = center[0] - 1.5;
    hi[0] = center[0] + 1.5;
    for t in 1..d {
        lo[t] = center[t].min(0.0) - 1.0;
        hi[t] = center[t].max(0.0) + 1.0;
    }
    let mut step = 1e-3;
    if d == MAX_DIMS {
        // a dense 1e-3 grid in three dimensions is out of reach; start
        // coarser and rely on the refinement passes to get below 1e-3
        step = 0.02;
    }
    center = grid_search(&lo, &hi, step, &objective);

    // zoom refinement around the running argmin
    while step > 5e-9 {
        let half = 2.5 * step;
        step /= 20.0;
        for t in 0..d {
            lo[t] = center[t] - half;
            hi[t] = center[t] + half;
        }
        center = grid_search(&lo, &hi, step, &objective);
    }

    let mut slopes = Array3::zeros((1, 1, data.n_predictors()));
    let mut intercepts = Array2::zeros((1, 1));
    intercepts[[0, 0]] = center[0];
    for (t, &j) in support.iter().enumerate() {
        slopes[[0, 0, j]] = center[t + 1];
    }
    assemble(data, grid, slopes, intercepts, Some(penalty))
}

fn grid_search(lo: &[f64], hi: &[f64], step: f64, objective: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
    let d = lo.len();
    let counts: Vec<usize> = (0..d)
        .map(|t| ((hi[t] - lo[t]) / step).round() as usize + 1)
        .collect();
    let mut point = vec![0.0; d];
    let mut best = f64::INFINITY;
    let mut best_point = lo.to_vec();
    let total: usize = counts.iter().product();
    for flat in 0..total {
        let mut rem = flat;
        for t in 0..d {
            point[t] = lo[t] + (rem % counts[t]) as f64 * step;
            rem /= counts[t];
        }
        let v = objective(&point);
        if v < best {
            best = v;
            best_point.copy_from_slice(&point);
        }
    }
    best_point
}

fn assemble(
    data: &MultiExperimentDataset,
    grid: &QuantileGrid,
    slopes: Array3<f64>,
    intercepts: Array2<f64>,
    penalty: Option<&PenaltySpec>,
) -> Result<FitResult> {
    let coefficients = CoefficientTensor::from_parts(slopes, intercepts)?;
    let none = PenaltySpec::none();
    let objective_value = loss::objective(data, grid, &coefficients, penalty.unwrap_or(&none))?;
    let residuals = super::residuals_for(data, grid, &coefficients);
    Ok(FitResult {
        coefficients,
        objective_value,
        residuals,
        iterations: 0,
        converged: true,
        objective_trace: vec![objective_value],
        scaling: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    #[test]
    fn intercept_only_median() {
        let data = MultiExperimentDataset::with_default_names(vec![(
            Array1::from(vec![1.0, 2.0, 3.0]),
            Array2::zeros((3, 1)),
        )])
        .unwrap();
        let grid = QuantileGrid::single(0.5).unwrap();
        let fit = brute_force_oracle(&data, &grid, &[], None).unwrap();
        assert!((fit.coefficients.intercept(0, 0) - 2.0).abs() <= 1e-12);
        assert!((fit.objective_value - (1.0 + 1.0) * 0.5 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn guards_reject_large_problems() {
        let data = MultiExperimentDataset::with_default_names(vec![(
            Array1::zeros(13),
            Array2::zeros((13, 4)),
        )])
        .unwrap();
        let grid = QuantileGrid::single(0.5).unwrap();
        assert!(matches!(
            brute_force_oracle(&data, &grid, &[0], None),
            Err(Error::ProblemTooLarge(_))
        ));
        let small = MultiExperimentDataset::with_default_names(vec![(
            Array1::zeros(5),
            Array2::zeros((5, 4)),
        )])
        .unwrap();
        assert!(matches!(
            brute_force_oracle(&small, &grid, &[0, 1, 2], None),
            Err(Error::ProblemTooLarge(_))
        ));
    }

    #[test]
    fn combinations_visit_all_subsets() {
        let mut seen = Vec::new();
        combinations(4, 2, |c| seen.push(c.to_vec()));
        assert_eq!(seen.len(), 6);
        assert!(seen.contains(&vec![0, 3]));
        assert!(seen.contains(&vec![2, 3]));
    }
}
