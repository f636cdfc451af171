//! Joint-distribution ("getting it right") check of the whole sampler.
//!
//! The marginal-conditional side draws parameters straight from the prior.
//! The successive-conditional side alternates between simulating a data set
//! from the current parameters and running one Gibbs sweep on it. If every
//! conditional is right, both sides share the prior as their parameter
//! marginal; each monitored scalar is compared with a two-sample
//! Kolmogorov-Smirnov test.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::Sampler;
use crate::error::Result;
use crate::factor::pin_loadings;
use crate::model::{ChainState, Dims, ModelSpec};
use crate::rng::{seeded, Block, Streams};
use crate::shrinkage::{sample_global_prior, sample_local_prior};
use crate::stats::{ks_two_sample, mean, variance};
use crate::stochvol::{simulate_ar1, SvSeries};
use crate::var::Design;

#[derive(Clone, Debug, PartialEq)]
pub struct GirSettings {
    pub n_series: usize,
    /// Panel length including the `P` initial observations.
    pub n_times: usize,
    /// Number of recorded draws on each side.
    pub cycles: usize,
    /// Data-simulation / sweep pairs between recorded successive draws.
    pub thin: usize,
    pub seed: u64,
    /// Multiplies the global-scale rate inside the sampler; 1 is correct.
    pub lambda_rate_factor: f64,
}

impl Default for GirSettings {
    fn default() -> Self {
        GirSettings {
            n_series: 3,
            n_times: 40,
            cycles: 10_000,
            thin: 50,
            seed: 1,
            lambda_rate_factor: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GirRow {
    pub name: String,
    pub statistic: f64,
    pub p_value: f64,
    /// Mean and standard deviation on the prior side.
    pub prior_mean: f64,
    pub prior_sd: f64,
    /// Mean and standard deviation on the successive-conditional side.
    pub chain_mean: f64,
    pub chain_sd: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GirReport {
    pub rows: Vec<GirRow>,
}

impl GirReport {
    pub fn min_p_value(&self) -> f64 {
        self.rows.iter().map(|r| r.p_value).fold(1.0, f64::min)
    }

    pub fn passes(&self, alpha: f64) -> bool {
        self.rows.iter().all(|r| r.p_value > alpha)
    }
}

/// Draws a complete state from the prior, with paths of length `n_est`.
pub fn prior_state<R: Rng + ?Sized>(spec: &ModelSpec, dims: Dims, n_est: usize, rng: &mut R) -> ChainState {
    let k = dims.n_regressors();
    let (delta, lambda_sq) = sample_global_prior(spec, rng);
    let mut local_scales = DMatrix::zeros(dims.m, k);
    let mut coeffs = DMatrix::zeros(dims.m, k);
    for c in 0..k {
        let pool = dims.pool_of_column(c);
        for j in 0..dims.m {
            let tau = sample_local_prior(spec.kappa[pool], lambda_sq[pool], rng).max(1e-300);
            local_scales[(j, c)] = tau;
            coeffs[(j, c)] = tau.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let sd = spec.loading_prior_variance.sqrt();
    let mut loadings = DMatrix::from_fn(dims.m, dims.factors, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
    pin_loadings(&mut loadings);
    let sv = |rng: &mut R| {
        let (mean, persistence, innovation_var) = spec.sv_prior.sample(rng);
        SvSeries {
            logvol: simulate_ar1(mean, persistence, innovation_var, n_est, rng),
            mean,
            persistence,
            innovation_var,
        }
    };
    let factor_sv: Vec<SvSeries> = (0..dims.factors).map(|_| sv(rng)).collect();
    let idio_sv = (0..dims.m).map(|_| sv(rng)).collect();
    let factors = DMatrix::from_fn(n_est, dims.factors, |t, i| {
        (factor_sv[i].logvol[t] / 2.0).exp() * rng.sample::<f64, _>(StandardNormal)
    });
    ChainState {
        dims,
        coeffs,
        loadings,
        factors,
        factor_sv,
        idio_sv,
        local_scales,
        lambda_sq,
        delta,
    }
}

/// Simulates `y` given every parameter and latent path; the first `P` rows
/// are the fixed `initial` values.
fn simulate_data<R: Rng + ?Sized>(state: &ChainState, initial: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
    let d = state.dims;
    let n_est = state.n_times();
    let mut y = DMatrix::zeros(n_est + d.lags, d.m);
    y.rows_mut(0, d.lags).copy_from(initial);
    for r in 0..n_est {
        let t = r + d.lags;
        for j in 0..d.m {
            let mut v = 0.0;
            for p in 1..=d.lags {
                for i in 0..d.m {
                    v += state.coeffs[(j, (p - 1) * d.m + i)] * y[(t - p, i)];
                }
            }
            if d.intercept {
                v += state.coeffs[(j, d.n_regressors() - 1)];
            }
            for i in 0..d.factors {
                v += state.loadings[(j, i)] * state.factors[(r, i)];
            }
            v += (state.idio_sv[j].logvol[r] / 2.0).exp() * rng.sample::<f64, _>(StandardNormal);
            y[(t, j)] = v;
        }
    }
    y
}

/// Monitored scalars; at least one per Gibbs block.
fn monitored(state: &ChainState) -> Vec<(String, f64)> {
    let mid = state.n_times() / 2;
    let mut out = vec![
        ("coeff[0,0]".to_string(), state.coeffs[(0, 0)]),
        ("coeff[1,0]".to_string(), state.coeffs[(1, 0)]),
        ("local_scale[0,1]".to_string(), state.local_scales[(0, 1)]),
        ("lambda_sq[1]".to_string(), state.lambda_sq[0]),
        ("loading[1]".to_string(), state.loadings[(1, 0)]),
        ("factor[mid]".to_string(), state.factors[(mid, 0)]),
        ("idio_logvol[0,mid]".to_string(), state.idio_sv[0].logvol[mid]),
        ("idio_mu[0]".to_string(), state.idio_sv[0].mean),
        ("idio_phi[0]".to_string(), state.idio_sv[0].persistence),
        ("idio_xi[0]".to_string(), state.idio_sv[0].innovation_var),
        ("factor_logvol[mid]".to_string(), state.factor_sv[0].logvol[mid]),
        ("factor_mu".to_string(), state.factor_sv[0].mean),
        ("factor_phi".to_string(), state.factor_sv[0].persistence),
        ("factor_xi".to_string(), state.factor_sv[0].innovation_var),
    ];
    if state.dims.lags > 1 {
        out.push(("lambda_sq[2]".to_string(), state.lambda_sq[1]));
    }
    out
}

/// Runs the check. A zero-cycle call returns an empty report.
pub fn getting_it_right(spec: &ModelSpec, settings: &GirSettings) -> Result<GirReport> {
    if settings.cycles == 0 {
        return Ok(GirReport::default());
    }
    spec.validate()?;
    let dims = spec.dims(settings.n_series, 0);
    let n_est = settings.n_times - spec.lags;
    let mut rng = seeded(settings.seed);
    let initial = DMatrix::from_fn(spec.lags, dims.m, |_, _| rng.sample::<f64, _>(StandardNormal));

    let mut forward: Vec<Vec<f64>> = Vec::new();
    for _ in 0..settings.cycles {
        let s = prior_state(spec, dims, n_est, &mut rng);
        forward.push(monitored(&s).into_iter().map(|(_, v)| v).collect());
    }

    let mut state = prior_state(spec, dims, n_est, &mut rng);
    let names: Vec<String> = monitored(&state).into_iter().map(|(n, _)| n).collect();
    let mut backward: Vec<Vec<f64>> = Vec::new();
    let mut sweep = 0usize;
    for _ in 0..settings.cycles {
        for _ in 0..settings.thin.max(1) {
            let mut data_rng = Streams::new(settings.seed, sweep as u64).rng(Block::Simulate, 0);
            let y = simulate_data(&state, &initial, &mut data_rng);
            let design = Design::new(&y, None, dims)?;
            let sampler = Sampler::from_design(design, spec, settings.seed ^ 0x5EED)
                .with_lambda_rate_factor(settings.lambda_rate_factor);
            sampler.sweep(&mut state, sweep)?;
            sweep += 1;
        }
        backward.push(monitored(&state).into_iter().map(|(_, v)| v).collect());
    }

    let rows = names
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            let a: Vec<f64> = forward.iter().map(|v| v[i]).collect();
            let b: Vec<f64> = backward.iter().map(|v| v[i]).collect();
            let ks = ks_two_sample(&a, &b);
            GirRow {
                name,
                statistic: ks.statistic,
                p_value: ks.p_value,
                prior_mean: mean(&a),
                prior_sd: variance(&a).sqrt(),
                chain_mean: mean(&b),
                chain_sd: variance(&b).sqrt(),
            }
        })
        .collect();
    Ok(GirReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cycles_is_empty() {
        let report = getting_it_right(&ModelSpec::new(1), &GirSettings { cycles: 0, ..Default::default() }).unwrap();
        assert!(report.rows.is_empty());
        assert!(report.passes(0.01));
    }

    #[test]
    fn prior_state_satisfies_invariants() {
        let spec = ModelSpec::new(2);
        let dims = spec.dims(3, 0);
        let mut rng = seeded(1);
        for _ in 0..100 {
            prior_state(&spec, dims, 20, &mut rng).check_invariants().unwrap();
        }
    }
}
