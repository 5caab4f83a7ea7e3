//! Bound-constrained nonlinear least squares for one hyperplane in log space.
//!
//! Minimizes `sum_i (z_i - ln(alpha + beta . x_i))^2` over a basis region with
//! `beta >= slope_floor` and every in-region prediction positive, where
//! `z_i = ln(Y_i) + u_i` (minus any linear frontier shifters).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontier::{min_region_size, SLOPE_FLOOR};

/// Solver controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub slope_floor: f64,
    pub max_iterations: usize,
    pub rel_tol: f64,
    /// Standard error reported for a slope held at its bound.
    pub active_bound_scale: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            slope_floor: SLOPE_FLOOR,
            max_iterations: 200,
            rel_tol: 1e-10,
            active_bound_scale: 2000f64.sqrt(),
        }
    }
}

/// Least-squares plane for one region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub intercept: f64,
    pub slopes: Vec<f64>,
    pub sse: f64,
    /// Standard errors of `(intercept, slopes...)`.
    pub std_errors: Vec<f64>,
    pub converged: bool,
    /// Which slopes ended at the lower bound with an outward gradient.
    pub active: Vec<bool>,
    pub iterations: usize,
}

impl FitResult {
    pub fn params(&self) -> Vec<f64> {
        std::iter::once(self.intercept)
            .chain(self.slopes.iter().copied())
            .collect()
    }
}

/// Borrowed view of a region: input rows and log-space targets.
#[derive(Clone, Copy, Debug)]
pub struct Region<'a> {
    pub inputs: &'a [&'a [f64]],
    pub targets: &'a [f64],
}

impl Region<'_> {
    fn len(&self) -> usize {
        self.targets.len()
    }

    fn dim(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.len())
    }
}

#[inline]
fn predict(params: &[f64], x: &[f64]) -> f64 {
    params[0] + params[1..].iter().zip(x).map(|(b, xi)| b * xi).sum::<f64>()
}

/// Sum of squared log residuals, `None` if any prediction is not positive.
pub fn objective(region: Region<'_>, params: &[f64]) -> Option<f64> {
    let mut sse = 0.0;
    for (x, z) in region.inputs.iter().zip(region.targets) {
        let g = predict(params, x);
        if !(g > 0.0) {
            return None;
        }
        let r = z - g.ln();
        sse += r * r;
    }
    Some(sse)
}

/// Builds `(J'J, J'r)` for residuals `r_i = z_i - ln g_i`, with `J = d ln g / d params`.
fn normal_equations(region: Region<'_>, params: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let p = params.len();
    let mut jtj = DMatrix::zeros(p, p);
    let mut jtr = DVector::zeros(p);
    let mut row = vec![0.0; p];
    for (x, z) in region.inputs.iter().zip(region.targets) {
        let g = predict(params, x);
        let r = z - g.ln();
        row[0] = 1.0 / g;
        for j in 0..x.len() {
            row[j + 1] = x[j] / g;
        }
        for a in 0..p {
            jtr[a] += row[a] * r;
            for b in a..p {
                jtj[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            jtj[(a, b)] = jtj[(b, a)];
        }
    }
    (jtj, jtr)
}

fn design_is_full_rank(region: Region<'_>) -> bool {
    let d = region.dim();
    let n = region.len() as f64;
    // Standardize columns so the check is scale free.
    let mut mean = vec![0.0; d];
    for x in region.inputs {
        for j in 0..d {
            mean[j] += x[j] / n;
        }
    }
    let mut sd = vec![0.0; d];
    for x in region.inputs {
        for j in 0..d {
            sd[j] += (x[j] - mean[j]).powi(2) / n;
        }
    }
    if sd.iter().any(|s| !(s.sqrt() > 1e-12 * (1.0 + mean.iter().fold(0.0f64, |m, v| m.max(v.abs()))))) {
        return false;
    }
    let mut corr = DMatrix::<f64>::zeros(d, d);
    for x in region.inputs {
        for a in 0..d {
            for b in 0..d {
                corr[(a, b)] += (x[a] - mean[a]) * (x[b] - mean[b]) / (n * (sd[a] * sd[b]).sqrt());
            }
        }
    }
    let eig = corr.symmetric_eigenvalues();
    eig.iter().all(|&l| l > 1e-10)
}

/// Shifts the intercept up if needed so that every prediction is positive.
fn make_feasible(region: Region<'_>, params: &mut [f64]) {
    let mut min_lin = f64::INFINITY;
    let mut mean_level = 0.0;
    for (x, z) in region.inputs.iter().zip(region.targets) {
        let lin: f64 = params[1..].iter().zip(*x).map(|(b, xi)| b * xi).sum();
        min_lin = min_lin.min(lin);
        mean_level += z.exp() / region.len() as f64;
    }
    let needed = -min_lin + 1e-3 * mean_level.max(1e-12);
    if params[0] < needed {
        params[0] = needed;
    }
}

/// Starting points: level OLS and the tangent plane of a log-log fit.
fn initial_guesses(region: Region<'_>, floor: f64) -> Vec<Vec<f64>> {
    let n = region.len();
    let d = region.dim();
    let mut guesses = Vec::new();

    let design = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { region.inputs[i][j - 1] });
    let levels = DVector::from_iterator(n, region.targets.iter().map(|z| z.exp()));
    if let Some(chol) = (design.transpose() * &design).cholesky() {
        let b = chol.solve(&(design.transpose() * &levels));
        let mut p: Vec<f64> = b.iter().copied().collect();
        for s in &mut p[1..] {
            *s = s.max(floor);
        }
        make_feasible(region, &mut p);
        guesses.push(p);
    }

    let log_design = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { region.inputs[i][j - 1].ln() });
    let z = DVector::from_column_slice(region.targets);
    if let Some(chol) = (log_design.transpose() * &log_design).cholesky() {
        let c = chol.solve(&(log_design.transpose() * &z));
        let mut centroid = vec![0.0; d];
        for x in region.inputs {
            for j in 0..d {
                centroid[j] += x[j] / n as f64;
            }
        }
        let level = (c[0] + (0..d).map(|j| c[j + 1] * centroid[j].ln()).sum::<f64>()).exp();
        let mut p = vec![0.0; d + 1];
        for j in 0..d {
            p[j + 1] = (c[j + 1] * level / centroid[j]).max(floor);
        }
        p[0] = level - (0..d).map(|j| p[j + 1] * centroid[j]).sum::<f64>();
        make_feasible(region, &mut p);
        guesses.push(p);
    }
    guesses
}

/// Fits one plane to a region.
///
/// The solver is a projected Levenberg-Marquardt iteration: slopes sitting on
/// the floor with an outward gradient are frozen, the remaining step is solved
/// with Marquardt damping, projected onto the box and accepted only if every
/// prediction stays positive and the objective decreases. `warm_start` is
/// tried alongside the closed-form starting points; the best feasible one is
/// used, so the result is never worse than any of them.
pub fn fit_plane(region: Region<'_>, warm_start: Option<&[f64]>, opts: &FitOptions) -> Result<FitResult> {
    let d = region.dim();
    let n = region.len();
    if n < min_region_size(d) || region.inputs.len() != n {
        return Err(Error::DegenerateRegion(format!(
            "{n} observations cannot support a plane in {d} inputs"
        )));
    }
    if !design_is_full_rank(region) {
        return Err(Error::DegenerateRegion("inputs are rank deficient".into()));
    }

    let floor = opts.slope_floor;
    let mut starts = initial_guesses(region, floor);
    if let Some(w) = warm_start {
        let mut p = w.to_vec();
        for s in &mut p[1..] {
            *s = s.max(floor);
        }
        starts.push(p);
    }
    let (mut params, mut sse) = starts
        .into_iter()
        .filter_map(|p| objective(region, &p).map(|s| (p, s)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(Error::NoInteriorPoint)?;

    let p = d + 1;
    let mut damping = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut active = vec![false; d];
    while iterations < opts.max_iterations {
        iterations += 1;
        if sse < 1e-28 {
            converged = true;
            break;
        }
        let (jtj, jtr) = normal_equations(region, &params);
        // d sse / d beta_j = -2 (J'r)_j; outward when positive derivative at the floor.
        for j in 0..d {
            active[j] = params[j + 1] <= floor * (1.0 + 1e-12) && jtr[j + 1] < 0.0;
        }
        let free: Vec<usize> = (0..p).filter(|&a| a == 0 || !active[a - 1]).collect();
        let m = free.len();
        let mut improved = false;
        while damping < 1e12 {
            let mut a = DMatrix::zeros(m, m);
            let mut g = DVector::zeros(m);
            for (ia, &fa) in free.iter().enumerate() {
                g[ia] = jtr[fa];
                for (ib, &fb) in free.iter().enumerate() {
                    a[(ia, ib)] = jtj[(fa, fb)];
                }
                a[(ia, ia)] += damping * jtj[(fa, fa)].max(1e-300);
            }
            let Some(chol) = a.cholesky() else {
                damping *= 4.0;
                continue;
            };
            let step = chol.solve(&g);
            let mut trial = params.clone();
            for (ia, &fa) in free.iter().enumerate() {
                trial[fa] += step[ia];
            }
            for s in &mut trial[1..] {
                *s = s.max(floor);
            }
            match objective(region, &trial) {
                Some(s) if s < sse => {
                    let rel = (sse - s) / sse.max(1e-300);
                    params = trial;
                    sse = s;
                    damping = (damping / 3.0).max(1e-12);
                    improved = true;
                    if rel < opts.rel_tol {
                        converged = true;
                    }
                    break;
                }
                _ => damping *= 4.0,
            }
        }
        if !improved {
            // No descent direction left at any damping: a stationary point.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    let (_, jtr) = normal_equations(region, &params);
    for j in 0..d {
        active[j] = params[j + 1] <= floor * (1.0 + 1e-12) && jtr[j + 1] < 0.0;
    }
    let mut fit = FitResult {
        intercept: params[0],
        slopes: params[1..].to_vec(),
        sse,
        std_errors: vec![0.0; p],
        converged,
        active,
        iterations,
    };
    if objective(region, &fit.params()).is_none() {
        return Err(Error::NoInteriorPoint);
    }
    if n > p {
        if let Ok(se) = standard_errors(&fit, region, opts.active_bound_scale) {
            fit.std_errors = se;
        }
    }
    Ok(fit)
}

/// Gauss-Newton standard errors `sqrt(diag(s^2 (J'J)^-1))` with `s^2 = sse / (n - d - 1)`.
///
/// Slopes held at their bound report `active_bound_scale` instead.
pub fn standard_errors(fit: &FitResult, region: Region<'_>, active_bound_scale: f64) -> Result<Vec<f64>> {
    let d = fit.slopes.len();
    let n = region.len();
    if n <= d + 1 {
        return Err(Error::DegenerateRegion(format!(
            "{n} observations leave no residual degrees of freedom"
        )));
    }
    let params = fit.params();
    let (jtj, _) = normal_equations(region, &params);
    let free: Vec<usize> = (0..=d).filter(|&a| a == 0 || !fit.active[a - 1]).collect();
    let m = free.len();
    let sub = DMatrix::from_fn(m, m, |a, b| jtj[(free[a], free[b])]);
    let inv = sub.cholesky().ok_or(Error::SingularJacobian)?.inverse();
    let s2 = fit.sse / (n - d - 1) as f64;
    let mut se = vec![active_bound_scale; d + 1];
    for (ia, &fa) in free.iter().enumerate() {
        se[fa] = (s2 * inv[(ia, ia)]).max(0.0).sqrt();
    }
    Ok(se)
}
