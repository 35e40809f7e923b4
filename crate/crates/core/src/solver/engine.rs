//! Coordinate-descent engine operating on the solver's working scale.
//!
//! The pooled objective separates across (experiment, quantile) blocks once
//! the penalty has been majorized into per-coordinate weights, so each block
//! is solved independently: cyclic exact coordinate updates (weighted-median
//! problems over residual breakpoints), followed by pairwise diagonal line
//! searches that move the iterate off coordinatewise-stationary corners of
//! the piecewise-linear loss.

use ndarray::{Array1, Array2, Array3};

use crate::loss::check_value;

/// Minimizer of f(v) = drift * v + sum_i w_i |v - b_i|.
///
/// Requires at least one breakpoint and |drift| <= sum(w); when the
/// minimizing set is an interval the left endpoint is returned.
pub(crate) fn piecewise_argmin(breaks: &mut [(f64, f64)], drift: f64) -> f64 {
    debug_assert!(!breaks.is_empty());
    breaks.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = breaks.iter().map(|bw| bw.1).sum();
    let mut slope = drift - total;
    for &(b, w) in breaks.iter() {
        slope += 2.0 * w;
        if slope >= 0.0 {
            return b;
        }
    }
    breaks[breaks.len() - 1].0
}

/// f(v) = drift * v + sum_i w_i |v - b_i| for the improvement checks.
fn piecewise_value(breaks: &[(f64, f64)], drift: f64, v: f64) -> f64 {
    let mut acc = drift * v;
    for &(b, w) in breaks {
        acc += w * (v - b).abs();
    }
    acc
}

/// A nonzero vector in the null space of the given constraint rows, scaled
/// to unit max magnitude; `None` when the rows span the whole space.
fn null_direction(rows: &[Vec<f64>], d: usize) -> Option<Vec<f64>> {
    let r = rows.len();
    let mut m: Vec<Vec<f64>> = rows.to_vec();
    let mut pivot_cols: Vec<usize> = Vec::with_capacity(r);
    let mut row_i = 0;
    for col in 0..d {
        if row_i >= r {
            break;
        }
        let pr = (row_i..r).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[pr][col].abs() < 1e-10 {
            continue;
        }
        m.swap(row_i, pr);
        let piv = m[row_i][col];
        for c in col..d {
            m[row_i][c] /= piv;
        }
        for rr in 0..r {
            if rr != row_i && m[rr][col] != 0.0 {
                let f = m[rr][col];
                for c in col..d {
                    m[rr][c] -= f * m[row_i][c];
                }
            }
        }
        pivot_cols.push(col);
        row_i += 1;
    }
    let free = (0..d).find(|c| !pivot_cols.contains(c))?;
    let mut v = vec![0.0; d];
    v[free] = 1.0;
    for (ri, &pc) in pivot_cols.iter().enumerate() {
        v[pc] = -m[ri][free];
    }
    let scale = v.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    if scale == 0.0 {
        return None;
    }
    for x in &mut v {
        *x /= scale;
    }
    Some(v)
}

/// Design matrices transposed to (p x n_k) so column gathers are contiguous,
/// plus everything else a sweep needs.
pub(super) struct WorkingData {
    pub xt: Vec<Array2<f64>>,
    pub y: Vec<Array1<f64>>,
    pub taus: Vec<f64>,
    /// Per-experiment loss multiplier w_k / n_k.
    pub obs_weight: Vec<f64>,
}

impl WorkingData {
    pub fn n_experiments(&self) -> usize {
        self.xt.len()
    }

    pub fn n_quantiles(&self) -> usize {
        self.taus.len()
    }
}

pub(super) struct Controls {
    pub max_inner_sweeps: usize,
    pub objective_rel_tol: f64,
    pub coordinate_abs_tol: f64,
    pub residual_zero_tol: f64,
}

const POLISH_ROUND_CAP: usize = 25;
/// Cap on support size above which diagonal polish pairs are restricted to
/// coordinates that are currently nonzero.
const POLISH_FULL_PAIRS_LIMIT: usize = 16;
/// Block dimension (intercept + support) up to which the polish walks the
/// exact edge directions of the active arrangement instead of diagonals.
const EDGE_POLISH_MAX_DIMS: usize = 8;
/// Give up on edge enumeration when the active constraint set is degenerate
/// enough to produce more subsets than this.
const EDGE_SUBSET_CAP: usize = 512;

pub(super) struct Engine<'a> {
    data: &'a WorkingData,
    support: Vec<usize>,
    pub slopes: Array3<f64>,
    pub intercepts: Array2<f64>,
    pub residuals: Vec<Array2<f64>>,
    scratch: Vec<(f64, f64)>,
}

impl<'a> Engine<'a> {
    pub fn new(
        data: &'a WorkingData,
        support: Vec<usize>,
        slopes: Array3<f64>,
        intercepts: Array2<f64>,
    ) -> Self {
        let residuals = (0..data.n_experiments())
            .map(|k| {
                let n = data.y[k].len();
                let mut r = Array2::zeros((data.n_quantiles(), n));
                for m in 0..data.n_quantiles() {
                    for i in 0..n {
                        let mut pred = intercepts[[k, m]];
                        for &j in &support {
                            pred += data.xt[k][[j, i]] * slopes[[k, m, j]];
                        }
                        r[[m, i]] = data.y[k][i] - pred;
                    }
                }
                r
            })
            .collect();
        Self {
            data,
            support,
            slopes,
            intercepts,
            residuals,
            scratch: Vec::new(),
        }
    }

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

    /// Weighted pooled check loss evaluated from the maintained residuals.
    pub fn loss_value(&self) -> f64 {
        let mut total = 0.0;
        for k in 0..self.data.n_experiments() {
            let ow = self.data.obs_weight[k];
            if ow == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for (m, &tau) in self.data.taus.iter().enumerate() {
                for &r in self.residuals[k].row(m) {
                    s += check_value(tau, r);
                }
            }
            total += ow * s;
        }
        total
    }

    fn problem_objective(&self, k: usize, m: usize, omega: &[f64]) -> f64 {
        let ow = self.data.obs_weight[k];
        let tau = self.data.taus[m];
        let mut s = 0.0;
        if ow != 0.0 {
            for &r in self.residuals[k].row(m) {
                s += check_value(tau, r);
            }
            s *= ow;
        }
        for &j in &self.support {
            s += omega[j] * self.slopes[[k, m, j]].abs();
        }
        s
    }

    /// Exact minimizer of the coordinate subproblem for slope (k, m, j)
    /// with per-coordinate penalty weight `pen`; other coordinates fixed.
    fn slope_argmin(&mut self, k: usize, m: usize, j: usize, pen: f64, zero_tol: f64) -> f64 {
        let ow = self.data.obs_weight[k];
        if ow == 0.0 {
            // no loss information: the penalty (if any) pins the slope at 0,
            // and an all-zero column yields 0 by convention
            return 0.0;
        }
        let tau = self.data.taus[m];
        let old = self.slopes[[k, m, j]];
        let xrow = self.data.xt[k].row(j);
        let r = self.residuals[k].row(m);
        self.scratch.clear();
        let mut sum_x = 0.0;
        for (i, &x) in xrow.iter().enumerate() {
            if x.abs() > zero_tol {
                self.scratch.push((r[i] / x + old, 0.5 * ow * x.abs()));
                sum_x += x;
            }
        }
        if self.scratch.is_empty() {
            return 0.0;
        }
        if pen > 0.0 {
            self.scratch.push((0.0, pen));
        }
        let drift = -(tau - 0.5) * ow * sum_x;
        piecewise_argmin(&mut self.scratch, drift)
    }

    /// Exact minimizer of the intercept subproblem for block (k, m).
    fn intercept_argmin(&mut self, k: usize, m: usize) -> f64 {
        let ow = self.data.obs_weight[k];
        let old = self.intercepts[[k, m]];
        if ow == 0.0 {
            return old;
        }
        let tau = self.data.taus[m];
        let r = self.residuals[k].row(m);
        let n = r.len();
        self.scratch.clear();
        for &ri in r {
            self.scratch.push((ri + old, 0.5 * ow));
        }
        let drift = -(tau - 0.5) * ow * n as f64;
        piecewise_argmin(&mut self.scratch, drift)
    }

    fn shift_intercept(&mut self, k: usize, m: usize, delta: f64) {
        self.intercepts[[k, m]] += delta;
        for r in self.residuals[k].row_mut(m) {
            *r -= delta;
        }
    }

    fn shift_slope(&mut self, k: usize, m: usize, j: usize, delta: f64) {
        self.slopes[[k, m, j]] += delta;
        let xrow = self.data.xt[k].row(j);
        let mut r = self.residuals[k].row_mut(m);
        for (i, &x) in xrow.iter().enumerate() {
            r[i] -= x * delta;
        }
    }

    /// One cyclic sweep over block (k, m): intercept first, then every
    /// support column in index order. Returns the largest coordinate move.
    fn sweep(&mut self, k: usize, m: usize, omega: &[f64], zero_tol: f64) -> f64 {
        let mut max_delta: f64 = 0.0;
        let new_b = self.intercept_argmin(k, m);
        let delta = new_b - self.intercepts[[k, m]];
        if delta != 0.0 {
            self.shift_intercept(k, m, delta);
            max_delta = max_delta.max(delta.abs());
        }
        let support = std::mem::take(&mut self.support);
        for &j in &support {
            let new = self.slope_argmin(k, m, j, omega[j], zero_tol);
            let delta = new - self.slopes[[k, m, j]];
            if delta != 0.0 {
                self.shift_slope(k, m, j, delta);
                max_delta = max_delta.max(delta.abs());
            }
        }
        self.support = support;
        max_delta
    }

    /// Escape coordinatewise-stationary corners of the piecewise-linear
    /// objective of block (k, m). Small blocks walk the exact edge
    /// directions of the active arrangement, which is complete: a convex
    /// piecewise-linear function with a descent direction has one along an
    /// edge. Large blocks probe pairwise diagonals as a cheap heuristic.
    /// Returns true if any direction strictly improved.
    fn polish(&mut self, k: usize, m: usize, omega: &[f64], zero_tol: f64) -> bool {
        if self.data.obs_weight[k] == 0.0 {
            return false;
        }
        if self.support.len() + 1 <= EDGE_POLISH_MAX_DIMS {
            self.edge_polish(k, m, omega, zero_tol)
        } else {
            self.diagonal_polish(k, m, omega, zero_tol)
        }
    }

    fn diagonal_polish(&mut self, k: usize, m: usize, omega: &[f64], zero_tol: f64) -> bool {
        // dimension 0 is the intercept, dimension t + 1 is support column t
        let d = self.support.len() + 1;
        let mut dims: Vec<usize> = vec![0];
        if self.support.len() <= POLISH_FULL_PAIRS_LIMIT {
            dims.extend(1..=self.support.len());
        } else {
            // largest nonzero slopes only, to bound the pair count
            let mut nonzero: Vec<(f64, usize)> = self
                .support
                .iter()
                .enumerate()
                .filter(|(_, &j)| self.slopes[[k, m, j]] != 0.0)
                .map(|(t, &j)| (self.slopes[[k, m, j]].abs(), t + 1))
                .collect();
            nonzero.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            nonzero.truncate(POLISH_FULL_PAIRS_LIMIT);
            let mut picked: Vec<usize> = nonzero.into_iter().map(|(_, t)| t).collect();
            picked.sort_unstable();
            dims.extend(picked);
        }
        let mut improved = false;
        let mut dir = vec![0.0; d];
        for ai in 0..dims.len() {
            for bi in (ai + 1)..dims.len() {
                for sign in [1.0, -1.0] {
                    dir.iter_mut().for_each(|v| *v = 0.0);
                    dir[dims[ai]] = 1.0;
                    dir[dims[bi]] = sign;
                    improved |= self.line_search(k, m, &dir, omega, zero_tol);
                }
            }
        }
        improved
    }

    fn edge_polish(&mut self, k: usize, m: usize, omega: &[f64], zero_tol: f64) -> bool {
        let d = self.support.len() + 1;
        if d < 2 {
            return false;
        }
        // gradient rows of the active constraints: observations with zero
        // residual and penalized coordinates sitting exactly at zero
        let y_scale = self.data.y[k].iter().fold(1.0f64, |a, &v| a.max(v.abs()));
        let act_tol = 1e-9 * y_scale;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        {
            let r = self.residuals[k].row(m);
            for (i, &ri) in r.iter().enumerate() {
                if ri.abs() <= act_tol {
                    let mut row = vec![1.0];
                    row.extend(self.support.iter().map(|&j| self.data.xt[k][[j, i]]));
                    rows.push(row);
                }
            }
        }
        for (t, &j) in self.support.iter().enumerate() {
            if omega[j] > 0.0 && self.slopes[[k, m, j]] == 0.0 {
                let mut row = vec![0.0; d];
                row[t + 1] = 1.0;
                rows.push(row);
            }
        }
        if rows.len() < d - 1 {
            return self.diagonal_polish(k, m, omega, zero_tol);
        }
        let mut improved = false;
        let mut subset: Vec<usize> = (0..d - 1).collect();
        let mut visited = 0usize;
        loop {
            visited += 1;
            if visited > EDGE_SUBSET_CAP {
                break;
            }
            let chosen: Vec<Vec<f64>> = subset.iter().map(|&i| rows[i].clone()).collect();
            if let Some(dir) = null_direction(&chosen, d) {
                improved |= self.line_search(k, m, &dir, omega, zero_tol);
            }
            // next (d-1)-subset of rows, lexicographic
            let r_total = rows.len();
            let width = d - 1;
            let mut i = width;
            loop {
                if i == 0 {
                    return improved;
                }
                i -= 1;
                if subset[i] != i + r_total - width {
                    break;
                }
                if i == 0 {
                    return improved;
                }
            }
            subset[i] += 1;
            for t in (i + 1)..width {
                subset[t] = subset[t - 1] + 1;
            }
        }
        improved
    }

    /// Exact minimization along theta += t * dir, where dir[0] moves the
    /// intercept and dir[t + 1] moves support column t.
    fn line_search(&mut self, k: usize, m: usize, dir: &[f64], omega: &[f64], zero_tol: f64) -> bool {
        let ow = self.data.obs_weight[k];
        let tau = self.data.taus[m];
        let n = self.data.y[k].len();
        let touched: Vec<(usize, f64)> = (0..self.support.len())
            .filter(|&t| dir[t + 1] != 0.0)
            .map(|t| (self.support[t], dir[t + 1]))
            .collect();
        self.scratch.clear();
        let mut sum_z = 0.0;
        {
            let r = self.residuals[k].row(m);
            for i in 0..n {
                let mut z = dir[0];
                for &(j, w) in &touched {
                    z += w * self.data.xt[k][[j, i]];
                }
                if z.abs() > zero_tol {
                    self.scratch.push((r[i] / z, 0.5 * ow * z.abs()));
                    sum_z += z;
                }
            }
        }
        if self.scratch.is_empty() {
            return false;
        }
        for (t, &j) in self.support.iter().enumerate() {
            if omega[j] > 0.0 && dir[t + 1] != 0.0 {
                self.scratch
                    .push((-self.slopes[[k, m, j]] / dir[t + 1], omega[j] * dir[t + 1].abs()));
            }
        }
        let drift = -(tau - 0.5) * ow * sum_z;
        let step = piecewise_argmin(&mut self.scratch, drift);
        if step == 0.0 {
            return false;
        }
        let f0 = piecewise_value(&self.scratch, drift, 0.0);
        let ft = piecewise_value(&self.scratch, drift, step);
        if f0 - ft <= 1e-13 * f0.abs().max(1.0) {
            return false;
        }
        self.shift_intercept(k, m, dir[0] * step);
        for t in 0..dir.len() - 1 {
            if dir[t + 1] != 0.0 {
                let j = self.support[t];
                self.shift_slope(k, m, j, dir[t + 1] * step);
            }
        }
        true
    }

    /// Solve block (k, m) to a stationary point of its share of the
    /// surrogate objective. Returns (sweeps used, converged flag).
    fn solve_block(&mut self, k: usize, m: usize, omega: &[f64], c: &Controls) -> (usize, bool) {
        let mut obj = self.problem_objective(k, m, omega);
        let mut sweeps = 0;
        let mut polish_rounds = 0;
        loop {
            let mut settled = false;
            while sweeps < c.max_inner_sweeps {
                let max_delta = self.sweep(k, m, omega, c.residual_zero_tol);
                sweeps += 1;
                let new_obj = self.problem_objective(k, m, omega);
                let rel = (obj - new_obj).abs() / obj.abs().max(1e-12);
                obj = new_obj;
                if rel < c.objective_rel_tol || max_delta <= c.coordinate_abs_tol {
                    settled = true;
                    break;
                }
            }
            if !settled {
                return (sweeps, false);
            }
            if polish_rounds >= POLISH_ROUND_CAP
                || !self.polish(k, m, omega, c.residual_zero_tol)
            {
                return (sweeps, true);
            }
            polish_rounds += 1;
            obj = self.problem_objective(k, m, omega);
        }
    }

    /// Solve all blocks for the fixed per-column penalty weights `omega`.
    /// Returns (max sweeps over blocks, all blocks converged).
    pub fn solve_all(&mut self, omega: &[f64], c: &Controls) -> (usize, bool) {
        let mut max_sweeps = 0;
        let mut all_ok = true;
        for k in 0..self.data.n_experiments() {
            for m in 0..self.data.n_quantiles() {
                let (sweeps, ok) = self.solve_block(k, m, omega, c);
                max_sweeps = max_sweeps.max(sweeps);
                all_ok &= ok;
            }
        }
        (max_sweeps, all_ok)
    }
}
