//! Block Gibbs sampler.
//!
//! One sweep draws, in order:
//!
//! 1. VAR coefficients on factor-adjusted targets,
//! 2. idiosyncratic log-volatility paths and parameters,
//! 3. the factor path,
//! 4. the loadings,
//! 5. factor log-volatility paths and parameters, followed by Metropolis
//!    moves that rescale each factor against its free loadings,
//! 6. local shrinkage scales,
//! 7. global shrinkage scales.
//!
//! Randomness for every work unit comes from [`Streams`] keyed by the sweep
//! index, so a chain is reproducible for any thread count.

mod gir;
mod simulate;
mod store;

pub use gir::{getting_it_right, prior_state, GirReport, GirRow, GirSettings};
pub use simulate::{random_truth, simulate_panel};
pub use store::{DrawStore, StoreMeta, STORE_MAGIC, STORE_VERSION};

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::factor::{pin_loadings, rescale_factor, sample_factors, sample_loadings};
use crate::model::{spectral_radius, ChainState, ModelSpec, Panel};
use crate::rng::{Block, Streams};
use crate::shrinkage::{update_global_scales_with, update_local_scales};
use crate::stochvol::SvSeries;
use crate::var::{ridge, sweep_all_equations, Design};

/// Penalty of the ridge regression used to start the chain.
const RIDGE_PENALTY: f64 = 0.1;

/// Proposal standard deviations of the factor scale moves.
const SCALE_STEPS: [f64; 3] = [0.05, 0.2, 0.5];

/// Sweep machinery bound to one data set.
pub struct Sampler<'a> {
    pub design: Design,
    pub spec: &'a ModelSpec,
    seed: u64,
    /// Multiplies the global-scale conditional rate. Only the consistency
    /// harness sets this to anything but 1.
    lambda_rate_factor: f64,
}

fn check_finite(ok: bool, sweep: usize, block: &'static str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::NonFinite { sweep, block })
    }
}

fn all_finite<'b>(mut it: impl Iterator<Item = &'b f64>) -> bool {
    it.all(|v| v.is_finite())
}

impl<'a> Sampler<'a> {
    pub fn new(panel: &Panel, spec: &'a ModelSpec) -> Result<Self> {
        spec.validate()?;
        panel.validate()?;
        if panel.len() <= spec.lags + 10 {
            return Err(Error::Dimension(format!(
                "need more than {} observations for {} lags, got {}",
                spec.lags + 10,
                spec.lags,
                panel.len()
            )));
        }
        let dims = spec.dims(panel.n_series(), panel.n_exogenous());
        if dims.factors > dims.m {
            return Err(Error::Parameter(format!(
                "{} factors for {} series",
                dims.factors, dims.m
            )));
        }
        let design = Design::from_panel(panel, dims)?;
        Ok(Sampler {
            design,
            spec,
            seed: spec.mcmc.seed,
            lambda_rate_factor: 1.0,
        })
    }

    pub(crate) fn from_design(design: Design, spec: &'a ModelSpec, seed: u64) -> Self {
        Sampler {
            design,
            spec,
            seed,
            lambda_rate_factor: 1.0,
        }
    }

    pub(crate) fn with_lambda_rate_factor(mut self, factor: f64) -> Self {
        self.lambda_rate_factor = factor;
        self
    }

    /// Ridge coefficients, principal-component factor and loadings, log
    /// squared residuals for the volatilities, unit local scales and global
    /// scales at their prior mean.
    pub fn initial_state(&self) -> Result<ChainState> {
        let dims = self.design.dims;
        let n = self.design.n_rows();
        let q = dims.factors;
        let coeffs = ridge(&self.design, RIDGE_PENALTY)?;
        let resid = self.design.residuals(&coeffs);

        let cov = resid.transpose() * &resid / n as f64;
        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..dims.m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let v = DMatrix::from_fn(dims.m, q, |r, c| eig.eigenvectors[(r, order[c])]);
        let top = v.rows(0, q).into_owned();
        let (mut loadings, factors) = match top.clone().try_inverse() {
            Some(inv) if top.determinant().abs() > 1e-6 => {
                let scores = &resid * &v;
                (&v * inv, scores * top.transpose())
            }
            _ => (DMatrix::zeros(dims.m, q), DMatrix::zeros(n, q)),
        };
        pin_loadings(&mut loadings);

        let idio = &resid - &factors * loadings.transpose();
        let idio_sv = (0..dims.m)
            .map(|j| SvSeries::initial(idio.column(j).as_slice()))
            .collect();
        let factor_sv = (0..q)
            .map(|i| SvSeries::initial(factors.column(i).as_slice()))
            .collect();

        let delta: Vec<f64> = self.spec.lambda_prior.iter().map(|&(c, d)| c / d).collect();
        let lambda_sq = delta
            .iter()
            .scan(1.0, |acc, &d| {
                *acc *= d;
                Some(*acc)
            })
            .collect();
        Ok(ChainState {
            dims,
            local_scales: DMatrix::from_element(dims.m, dims.n_regressors(), 1.0),
            coeffs,
            loadings,
            factors,
            factor_sv,
            idio_sv,
            lambda_sq,
            delta,
        })
    }

    /// One full sweep over all seven blocks.
    pub fn sweep(&self, state: &mut ChainState, index: usize) -> Result<()> {
        let streams = Streams::new(self.seed, index as u64);
        let spec = self.spec;

        sweep_all_equations(state, &self.design, &streams)?;
        check_finite(all_finite(state.coeffs.iter()), index, "coefficients")?;

        let resid = self.design.residuals(&state.coeffs);
        let idio = &resid - &state.factors * state.loadings.transpose();
        state
            .idio_sv
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(j, sv)| {
                let mut rng = streams.rng(Block::IdioVol, j);
                sv.update(idio.column(j).as_slice(), &spec.sv_prior, &mut rng)
            })?;
        check_finite(
            state.idio_sv.iter().all(|sv| sv.check().is_ok()),
            index,
            "idiosyncratic volatility",
        )?;

        let idio_vars = state.idio_var_matrix();
        state.factors = sample_factors(
            &resid,
            &state.loadings,
            &state.factor_var_matrix(),
            &idio_vars,
            &streams,
        )?;
        check_finite(all_finite(state.factors.iter()), index, "factors")?;

        state.loadings = sample_loadings(
            &resid,
            &state.factors,
            &idio_vars,
            spec.loading_prior_variance,
            &streams,
        )?;
        check_finite(all_finite(state.loadings.iter()), index, "loadings")?;

        let factors = &state.factors;
        state
            .factor_sv
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(i, sv)| {
                let mut rng = streams.rng(Block::FactorVol, i);
                sv.update(factors.column(i).as_slice(), &spec.sv_prior, &mut rng)
            })?;
        check_finite(
            state.factor_sv.iter().all(|sv| sv.check().is_ok()),
            index,
            "factor volatility",
        )?;

        for i in 0..state.dims.factors {
            let mut rng = streams.rng(Block::FactorScale, i);
            rescale_factor(
                state,
                &resid,
                spec.loading_prior_variance,
                &spec.sv_prior,
                i,
                &SCALE_STEPS,
                &mut rng,
            );
        }

        update_local_scales(state, spec, &streams)?;
        check_finite(
            state.local_scales.iter().all(|&v| v > 0.0 && v.is_finite()),
            index,
            "local scales",
        )?;

        let mut rng = streams.rng(Block::GlobalScales, 0);
        update_global_scales_with(state, spec, self.lambda_rate_factor, &mut rng)?;
        check_finite(
            state.lambda_sq.iter().chain(&state.delta).all(|&v| v > 0.0 && v.is_finite()),
            index,
            "global scales",
        )?;
        Ok(())
    }
}

/// Runs one chain on the current rayon pool.
pub fn run_chain(panel: &Panel, spec: &ModelSpec) -> Result<DrawStore> {
    run_chain_observed(panel, spec, |_| {})
}

/// As [`run_chain`], calling `progress(sweep)` after every sweep.
pub fn run_chain_observed(panel: &Panel, spec: &ModelSpec, mut progress: impl FnMut(usize)) -> Result<DrawStore> {
    let started = Instant::now();
    let sampler = Sampler::new(panel, spec)?;
    let mut state = sampler.initial_state()?;
    let mcmc = &spec.mcmc;
    let mut store = DrawStore::new(
        StoreMeta {
            seed: mcmc.seed,
            burn_in: mcmc.burn_in,
            keep: mcmc.keep,
            thin: mcmc.thin,
            wall_time_secs: 0.0,
        },
        state.dims,
        state.n_times(),
        panel.names.clone(),
        panel.groups.clone(),
    );
    let total = mcmc.burn_in + mcmc.keep * mcmc.thin;
    for it in 0..total {
        sampler.sweep(&mut state, it)?;
        if it >= mcmc.burn_in && (it - mcmc.burn_in + 1) % mcmc.thin == 0 {
            store.push(&state, spectral_radius(&state));
        }
        progress(it);
    }
    store.meta.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(store)
}

/// Runs one chain on a dedicated pool of `threads` workers.
pub fn run_chain_with_threads(panel: &Panel, spec: &ModelSpec, threads: usize) -> Result<DrawStore> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    pool.install(|| run_chain(panel, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testing::dims;
    use crate::rng::seeded;

    fn small_panel(seed: u64, m: usize, t: usize) -> (Panel, ModelSpec) {
        let mut spec = ModelSpec::new(1);
        spec.mcmc.burn_in = 50;
        spec.mcmc.keep = 200;
        spec.mcmc.thin = 1;
        spec.mcmc.seed = seed;
        let truth = random_truth(dims(m, 1, 1), t - 1, &mut seeded(seed));
        let (panel, _) = simulate_panel(&spec, &truth, t, &mut seeded(seed + 1)).unwrap();
        (panel, spec)
    }

    #[test]
    fn smoke_chain_keeps_invariants() {
        let (panel, spec) = small_panel(3, 2, 60);
        let store = run_chain(&panel, &spec).unwrap();
        assert_eq!(store.n_draws, 200);
        for d in 0..store.n_draws {
            let s = store.state(d);
            s.check_invariants().unwrap();
            assert_eq!(s.loadings[(0, 0)], 1.0);
        }
    }

    #[test]
    fn equal_seeds_give_identical_stores() {
        let (panel, spec) = small_panel(4, 3, 50);
        let a = run_chain_with_threads(&panel, &spec, 1).unwrap();
        let b = run_chain_with_threads(&panel, &spec, 4).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let mut other = spec.clone();
        other.mcmc.seed += 1;
        let c = run_chain(&panel, &other).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    #[test]
    fn short_panel_is_rejected() {
        let (panel, spec) = small_panel(5, 2, 60);
        let mut short = panel.clone();
        short.values = panel.values.rows(0, 11).into_owned();
        short.dates.truncate(11);
        assert!(matches!(Sampler::new(&short, &spec), Err(Error::Dimension(_))));
    }

    #[test]
    fn equation_order_does_not_matter() {
        // every equation owns its stream, so drawing equations one at a time
        // in reverse order reproduces the sweep exactly
        let (panel, spec) = small_panel(6, 3, 60);
        let sampler = Sampler::new(&panel, &spec).unwrap();
        let state = sampler.initial_state().unwrap();
        let streams = Streams::new(99, 0);
        let mut swept = state.clone();
        sweep_all_equations(&mut swept, &sampler.design, &streams).unwrap();
        let common = &state.factors * state.loadings.transpose();
        for j in (0..3).rev() {
            let y_hat = sampler.design.targets.column(j) - common.column(j);
            let idio = nalgebra::DVector::from_vec(state.idio_sv[j].logvol.iter().map(|h| h.exp()).collect());
            let b = crate::var::sample_var_equation(
                &y_hat,
                &sampler.design.regressors,
                &idio,
                &state.local_scales.row(j).transpose(),
                &mut streams.rng(Block::Coefficients, j),
            )
            .unwrap();
            assert_eq!(swept.coeffs.row(j).transpose(), b);
        }
    }
}
