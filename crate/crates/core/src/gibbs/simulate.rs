//! Synthetic panels drawn forward from the model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::factor::pin_loadings;
use crate::model::{spectral_radius, ChainState, Dims, ModelSpec, Panel};
use crate::stochvol::{simulate_ar1, SvSeries};

const WARM_UP: usize = 100;

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Simulates a panel of length `t` from `truth`.
///
/// Volatility paths in `truth` cover the estimation rows `P..t`; empty paths
/// are simulated from their AR(1) law. The recursion starts at zero and runs
/// a warm-up of 100 discarded steps whose volatilities come from the AR(1)
/// parameters. Returns the panel and the truth with factor and volatility
/// paths filled in.
pub fn simulate_panel<R: Rng + ?Sized>(
    spec: &ModelSpec,
    truth: &ChainState,
    t: usize,
    rng: &mut R,
) -> Result<(Panel, ChainState)> {
    let dims = truth.dims;
    if dims.lags != spec.lags || dims.factors != spec.factors {
        return Err(Error::Dimension("truth dims disagree with the model spec".into()));
    }
    if t <= dims.lags {
        return Err(Error::Dimension(format!("cannot simulate {t} rows with {} lags", dims.lags)));
    }
    let radius = spectral_radius(truth);
    if radius >= 1.0 {
        return Err(Error::Parameter(format!("unstable truth (spectral radius {radius:.4})")));
    }
    let mut truth = truth.clone();
    let n_est = t - dims.lags;
    for sv in truth.factor_sv.iter_mut().chain(truth.idio_sv.iter_mut()) {
        sv.check()?;
        if sv.logvol.is_empty() {
            sv.simulate_path(n_est, rng);
        } else if sv.logvol.len() != n_est {
            return Err(Error::Dimension(format!(
                "truth path has {} entries, expected {n_est}",
                sv.logvol.len()
            )));
        }
    }
    let m = dims.m;
    let k = dims.n_regressors();
    let total = WARM_UP + t;
    let warm = |sv: &SvSeries, rng: &mut R| simulate_ar1(sv.mean, sv.persistence, sv.innovation_var, WARM_UP + dims.lags, rng);
    let warm_factor: Vec<Vec<f64>> = truth.factor_sv.iter().map(|sv| warm(sv, rng)).collect();
    let warm_idio: Vec<Vec<f64>> = truth.idio_sv.iter().map(|sv| warm(sv, rng)).collect();

    let exog = (dims.exog > 0).then(|| DMatrix::from_fn(total, dims.exog, |_, _| normal(rng)));
    let mut y = DMatrix::zeros(total, m);
    let mut factors = DMatrix::zeros(n_est, dims.factors);
    for s in 0..total {
        let est = s.checked_sub(WARM_UP + dims.lags);
        let mut z = DVector::zeros(k);
        for p in 1..=dims.lags {
            if s >= p {
                for i in 0..m {
                    z[(p - 1) * m + i] = y[(s - p, i)];
                }
            }
        }
        if let Some(x) = &exog {
            for c in 0..dims.exog {
                z[m * dims.lags + c] = x[(s, c)];
            }
        }
        if dims.intercept {
            z[k - 1] = 1.0;
        }
        let f = DVector::from_fn(dims.factors, |i, _| {
            let h = match est {
                Some(r) => truth.factor_sv[i].logvol[r],
                None => warm_factor[i][s.min(warm_factor[i].len() - 1)],
            };
            (h / 2.0).exp() * normal(rng)
        });
        if let Some(r) = est {
            factors.row_mut(r).copy_from(&f.transpose());
        }
        let eta = DVector::from_fn(m, |j, _| {
            let h = match est {
                Some(r) => truth.idio_sv[j].logvol[r],
                None => warm_idio[j][s.min(warm_idio[j].len() - 1)],
            };
            (h / 2.0).exp() * normal(rng)
        });
        let next = &truth.coeffs * z + &truth.loadings * f + eta;
        y.row_mut(s).copy_from(&next.transpose());
    }
    truth.factors = factors;

    let values = y.rows(WARM_UP, t).into_owned();
    let mut panel = Panel::new(values, (1..=m).map(|j| format!("y{j}")).collect())?;
    if let Some(x) = exog {
        panel.exogenous = Some(x.rows(WARM_UP, t).into_owned());
        panel.exogenous_names = (1..=dims.exog).map(|c| format!("x{c}")).collect();
    }
    panel.validate()?;
    Ok((panel, truth))
}

/// A stable random parameter set with persistent volatilities, for demos and
/// the `simulate` command. Paths are left empty.
pub fn random_truth<R: Rng + ?Sized>(dims: Dims, _n_times: usize, rng: &mut R) -> ChainState {
    let k = dims.n_regressors();
    let mut coeffs = DMatrix::zeros(dims.m, k);
    for c in 0..k {
        let lag = (c / dims.m.max(1)).min(dims.lags.saturating_sub(1)) + 1;
        for j in 0..dims.m {
            let own = c < dims.m * dims.lags && c % dims.m == j;
            let scale = if own { 0.4 } else { 0.1 } / lag as f64;
            coeffs[(j, c)] = scale * rng.random_range(-1.0..1.0);
        }
    }
    let mut state = ChainState {
        dims,
        coeffs,
        loadings: DMatrix::from_fn(dims.m, dims.factors, |_, _| rng.random_range(0.3..1.2)),
        factors: DMatrix::zeros(0, dims.factors),
        factor_sv: (0..dims.factors)
            .map(|_| SvSeries {
                logvol: Vec::new(),
                mean: 0.0,
                persistence: 0.97,
                innovation_var: 0.05,
            })
            .collect(),
        idio_sv: (0..dims.m)
            .map(|_| SvSeries {
                logvol: Vec::new(),
                mean: -1.0,
                persistence: 0.9,
                innovation_var: 0.05,
            })
            .collect(),
        local_scales: DMatrix::from_element(dims.m, k, 1.0),
        lambda_sq: vec![1.0; dims.lags],
        delta: vec![1.0; dims.lags],
    };
    pin_loadings(&mut state.loadings);
    // shrink until comfortably stable
    while spectral_radius(&state) > 0.9 {
        state.coeffs.columns_mut(0, dims.m * dims.lags).scale_mut(0.8);
    }
    state
}
