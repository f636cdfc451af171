//! Equation-by-equation coefficient draws.
//!
//! Given `X f_t` the system decouples into `m` heteroskedastic regressions
//! `yhat_jt = z_t' b_j + eta_jt`, `eta_jt ~ N(0, omega_jt)`, each with a
//! diagonal Gaussian prior whose variances are the current local scales.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::factor::draw_from_precision;
use crate::model::{ChainState, Dims, Panel};
use crate::rng::{Block, Streams};

/// Targets and regressors for the estimation rows `t = P..T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    /// `(T - P) x m`.
    pub targets: DMatrix<f64>,
    /// `(T - P) x K`: lag 1 block, ..., lag P block, exogenous, intercept.
    pub regressors: DMatrix<f64>,
    pub dims: Dims,
}

impl Design {
    pub fn new(values: &DMatrix<f64>, exogenous: Option<&DMatrix<f64>>, dims: Dims) -> Result<Self> {
        let (t, m) = values.shape();
        if m != dims.m {
            return Err(Error::Dimension(format!("panel has {m} series, dims say {}", dims.m)));
        }
        let exog_cols = exogenous.map_or(0, |x| x.ncols());
        if exog_cols != dims.exog {
            return Err(Error::Dimension(format!(
                "{exog_cols} exogenous columns, dims say {}",
                dims.exog
            )));
        }
        if t <= dims.lags {
            return Err(Error::Dimension(format!("{t} observations for {} lags", dims.lags)));
        }
        let rows = t - dims.lags;
        let k = dims.n_regressors();
        let targets = values.rows(dims.lags, rows).into_owned();
        let mut regressors = DMatrix::zeros(rows, k);
        for r in 0..rows {
            let time = r + dims.lags;
            for p in 1..=dims.lags {
                for i in 0..m {
                    regressors[(r, (p - 1) * m + i)] = values[(time - p, i)];
                }
            }
            if let Some(x) = exogenous {
                for c in 0..dims.exog {
                    regressors[(r, m * dims.lags + c)] = x[(time, c)];
                }
            }
            if dims.intercept {
                regressors[(r, k - 1)] = 1.0;
            }
        }
        Ok(Design { targets, regressors, dims })
    }

    pub fn from_panel(panel: &Panel, dims: Dims) -> Result<Self> {
        Design::new(&panel.values, panel.exogenous.as_ref(), dims)
    }

    pub fn n_rows(&self) -> usize {
        self.targets.nrows()
    }

    /// `e_t = y_t - B z_t` for every estimation row.
    pub fn residuals(&self, coeffs: &DMatrix<f64>) -> DMatrix<f64> {
        &self.targets - &self.regressors * coeffs.transpose()
    }
}

/// Posterior precision `Z' W Z + D^-1` and linear term `Z' W yhat`.
pub fn equation_posterior(
    y_hat: &DVector<f64>,
    regressors: &DMatrix<f64>,
    idio_vars: &DVector<f64>,
    prior_vars: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (n, k) = regressors.shape();
    if y_hat.len() != n || idio_vars.len() != n || prior_vars.len() != k {
        return Err(Error::Dimension(format!(
            "equation with {n} rows and {k} regressors got {} targets, {} variances, {} prior variances",
            y_hat.len(),
            idio_vars.len(),
            prior_vars.len()
        )));
    }
    if idio_vars.iter().any(|&w| !(w > 0.0)) || prior_vars.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Parameter("variances must be positive".into()));
    }
    let mut weighted = regressors.clone();
    for (r, mut row) in weighted.row_iter_mut().enumerate() {
        row /= idio_vars[r];
    }
    let mut precision = regressors.transpose() * &weighted;
    for c in 0..k {
        precision[(c, c)] += 1.0 / prior_vars[c];
    }
    let linear = weighted.transpose() * y_hat;
    Ok((precision, linear))
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    hi / lo
}

/// One coefficient-vector draw for a single equation.
pub fn sample_var_equation<R: Rng + ?Sized>(
    y_hat: &DVector<f64>,
    regressors: &DMatrix<f64>,
    idio_vars: &DVector<f64>,
    prior_vars: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let (precision, linear) = equation_posterior(y_hat, regressors, idio_vars, prior_vars)?;
    let kept = precision.clone();
    draw_from_precision(precision, &linear, rng).ok_or_else(|| {
        Error::Numerical(format!(
            "posterior precision not positive definite (condition number {:.3e})",
            condition_number(&kept)
        ))
    })
}

/// Inputs of equation `j` given the rest of the state: factor-adjusted
/// target `y_t - X f_t`, idiosyncratic variances and coefficient prior
/// variances.
fn equation_inputs(state: &ChainState, design: &Design, j: usize) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let common = &state.factors * state.loadings.row(j).transpose();
    let y_hat = design.targets.column(j) - common;
    let idio = DVector::from_vec(state.idio_sv[j].logvol.iter().map(|h| h.exp()).collect());
    let prior = state.local_scales.row(j).transpose();
    (y_hat, idio, prior)
}

/// Conditional mean and covariance of row `j` of the coefficients given
/// every other block.
pub fn equation_conditional(state: &ChainState, design: &Design, j: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if j >= state.dims.m {
        return Err(Error::Index { index: j, len: state.dims.m });
    }
    let (y_hat, idio, prior) = equation_inputs(state, design, j);
    let (precision, linear) = equation_posterior(&y_hat, &design.regressors, &idio, &prior)?;
    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::Numerical("posterior precision not positive definite".into()))?;
    Ok((chol.solve(&linear), chol.inverse()))
}

/// Redraws all equations on factor-adjusted targets `y_t - X f_t`.
pub fn sweep_all_equations(state: &mut ChainState, design: &Design, streams: &Streams) -> Result<()> {
    let m = state.dims.m;
    let rows: Vec<DVector<f64>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut rng = streams.rng(Block::Coefficients, j);
            let (y_hat, idio, prior) = equation_inputs(state, design, j);
            sample_var_equation(&y_hat, &design.regressors, &idio, &prior, &mut rng).map_err(|e| Error::Equation {
                equation: j,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    for (j, b) in rows.into_iter().enumerate() {
        state.coeffs.row_mut(j).copy_from(&b.transpose());
    }
    Ok(())
}

/// Ridge estimate used to start the chain.
pub fn ridge(design: &Design, penalty: f64) -> Result<DMatrix<f64>> {
    let z = &design.regressors;
    let mut gram = z.transpose() * z;
    for c in 0..gram.ncols() {
        gram[(c, c)] += penalty;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numerical("ridge normal equations not positive definite".into()))?;
    let b = chol.solve(&(z.transpose() * &design.targets));
    Ok(b.transpose())
}
