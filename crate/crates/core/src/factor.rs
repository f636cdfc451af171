//! Latent factor path and loadings.
//!
//! Identification pins loading `(i, i)` to one and every loading above it to
//! zero. Pinned entries never enter a draw: each loading row is regressed only
//! on its free factors, with the pinned contribution moved to the left-hand
//! side.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::ChainState;
use crate::stochvol::SvPrior;
use crate::rng::{Block, Streams};

/// Sets the identification pattern on `loadings` (unit diagonal, zeros above).
pub fn pin_loadings(loadings: &mut DMatrix<f64>) {
    let (m, q) = loadings.shape();
    for i in 0..q {
        for j in 0..i.min(m) {
            loadings[(j, i)] = 0.0;
        }
        if i < m {
            loadings[(i, i)] = 1.0;
        }
    }
}

/// Number of free loadings in row `j`: columns `0..min(j, q)`.
pub fn free_in_row(j: usize, q: usize) -> usize {
    j.min(q)
}

fn standard_normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Draws `N(Q^{-1} b, Q^{-1})` via the Cholesky factor of `Q`.
pub(crate) fn draw_from_precision<R: Rng + ?Sized>(
    precision: DMatrix<f64>,
    linear: &DVector<f64>,
    rng: &mut R,
) -> Option<DVector<f64>> {
    let chol = precision.cholesky()?;
    let mean = chol.solve(linear);
    let z = standard_normals(linear.len(), rng);
    let noise = chol.l().transpose().solve_upper_triangular(&z)?;
    Some(mean + noise)
}

/// Moments of `f_t | e_t`: `V_t = (X' Omega_t^-1 X + H_t^-1)^-1`,
/// mean `V_t X' Omega_t^-1 e_t`. Returns (precision, linear term).
pub fn factor_conditional(
    residual: &DVector<f64>,
    loadings: &DMatrix<f64>,
    factor_vars: &DVector<f64>,
    idio_vars: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let q = loadings.ncols();
    let mut weighted = loadings.clone();
    for (j, mut row) in weighted.row_iter_mut().enumerate() {
        row /= idio_vars[j];
    }
    let mut precision = loadings.transpose() * &weighted;
    for i in 0..q {
        precision[(i, i)] += 1.0 / factor_vars[i];
    }
    let linear = weighted.transpose() * residual;
    (precision, linear)
}

/// Draws every `f_t` independently. Inputs are `T x m` residuals, `m x q`
/// loadings, `T x q` factor variances and `T x m` idiosyncratic variances.
pub fn sample_factors(
    residuals: &DMatrix<f64>,
    loadings: &DMatrix<f64>,
    factor_vars: &DMatrix<f64>,
    idio_vars: &DMatrix<f64>,
    streams: &Streams,
) -> Result<DMatrix<f64>> {
    let (t, m) = residuals.shape();
    let q = loadings.ncols();
    if loadings.nrows() != m || factor_vars.shape() != (t, q) || idio_vars.shape() != (t, m) {
        return Err(Error::Dimension("factor draw inputs disagree".into()));
    }
    let rows: Vec<DVector<f64>> = (0..t)
        .into_par_iter()
        .map(|r| {
            let mut rng = streams.rng(Block::Factors, r);
            let e = residuals.row(r).transpose();
            let h = factor_vars.row(r).transpose();
            let w = idio_vars.row(r).transpose();
            let (prec, lin) = factor_conditional(&e, loadings, &h, &w);
            draw_from_precision(prec, &lin, &mut rng)
                .ok_or_else(|| Error::Numerical(format!("factor precision not positive definite at t = {r}")))
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(t, q, |r, i| rows[r][i]))
}

/// Precision and linear term of the free loadings in row `j`.
pub fn loading_conditional(
    j: usize,
    residuals: &DMatrix<f64>,
    factors: &DMatrix<f64>,
    idio_vars: &DMatrix<f64>,
    prior_variance: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let q = factors.ncols();
    let free = free_in_row(j, q);
    let mut precision = DMatrix::identity(free, free) / prior_variance;
    let mut linear = DVector::zeros(free);
    for r in 0..residuals.nrows() {
        let w = 1.0 / idio_vars[(r, j)];
        let mut target = residuals[(r, j)];
        if j < q {
            target -= factors[(r, j)];
        }
        for a in 0..free {
            linear[a] += w * factors[(r, a)] * target;
            for b in 0..free {
                precision[(a, b)] += w * factors[(r, a)] * factors[(r, b)];
            }
        }
    }
    (precision, linear)
}

/// Draws the loading matrix row by row; pinned entries are fixed.
pub fn sample_loadings(
    residuals: &DMatrix<f64>,
    factors: &DMatrix<f64>,
    idio_vars: &DMatrix<f64>,
    prior_variance: f64,
    streams: &Streams,
) -> Result<DMatrix<f64>> {
    let (t, m) = residuals.shape();
    let q = factors.ncols();
    if factors.nrows() != t || idio_vars.shape() != (t, m) {
        return Err(Error::Dimension("loading draw inputs disagree".into()));
    }
    let rows: Vec<DVector<f64>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let free = free_in_row(j, q);
            if free == 0 {
                return Ok(DVector::zeros(0));
            }
            let mut rng = streams.rng(Block::Loadings, j);
            let (prec, lin) = loading_conditional(j, residuals, factors, idio_vars, prior_variance);
            draw_from_precision(prec, &lin, &mut rng)
                .ok_or_else(|| Error::Numerical(format!("loading precision not positive definite in row {j}")))
        })
        .collect::<Result<_>>()?;
    let mut loadings = DMatrix::zeros(m, q);
    pin_loadings(&mut loadings);
    for (j, row) in rows.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            loadings[(j, i)] = *v;
        }
    }
    Ok(loadings)
}

/// Log acceptance ratio of the scale move on factor `i` with `c = exp(eps)`:
/// `f_i -> c f_i`, free loadings of column `i` `-> X / c`, and the factor's
/// log-variance path and mean shifted by `2 eps`. Only the pinned row's fit,
/// the loading prior, the prior on the mean and the Jacobian change.
pub(crate) fn rescale_log_ratio(
    state: &ChainState,
    resid: &DMatrix<f64>,
    loading_prior_var: f64,
    sv_prior: &SvPrior,
    i: usize,
    eps: f64,
) -> f64 {
    let (m, q) = (state.dims.m, state.dims.factors);
    let c = eps.exp();
    let mut fit = 0.0;
    for t in 0..resid.nrows() {
        let mut a = resid[(t, i)];
        for k in (0..q).filter(|&k| k != i) {
            a -= state.loadings[(i, k)] * state.factors[(t, k)];
        }
        let f = state.factors[(t, i)];
        let w = (-state.idio_sv[i].logvol[t]).exp();
        fit += ((a - f).powi(2) - (a - c * f).powi(2)) * w / 2.0;
    }
    let free = (i + 1..m).map(|j| state.loadings[(j, i)].powi(2)).sum::<f64>();
    let loading_prior = free * (1.0 - 1.0 / (c * c)) / (2.0 * loading_prior_var);
    let mu = state.factor_sv[i].mean - sv_prior.mean_mean;
    let mean_prior = (mu * mu - (mu + 2.0 * eps).powi(2)) / (2.0 * sv_prior.mean_variance);
    fit + loading_prior + mean_prior - (m - i - 1) as f64 * eps
}

/// Metropolis moves along the scale direction `(f_i, X_i, h_i)` that leaves
/// the data fit of every unpinned row unchanged. One random-walk step per
/// entry of `steps` (proposal standard deviations of `log c`). Returns the
/// number of accepted steps.
pub fn rescale_factor<R: Rng + ?Sized>(
    state: &mut ChainState,
    resid: &DMatrix<f64>,
    loading_prior_var: f64,
    sv_prior: &SvPrior,
    i: usize,
    steps: &[f64],
    rng: &mut R,
) -> usize {
    let mut accepted = 0;
    for &sd in steps {
        let eps = sd * rng.sample::<f64, _>(StandardNormal);
        let log_ratio = rescale_log_ratio(state, resid, loading_prior_var, sv_prior, i, eps);
        if rng.random::<f64>().ln() < log_ratio {
            let c = eps.exp();
            state.factors.column_mut(i).scale_mut(c);
            for j in i + 1..state.dims.m {
                state.loadings[(j, i)] /= c;
            }
            let sv = &mut state.factor_sv[i];
            sv.mean += 2.0 * eps;
            sv.logvol.iter_mut().for_each(|h| *h += 2.0 * eps);
            accepted += 1;
        }
    }
    accepted
}
