//! Normal-Gamma global-local shrinkage.
//!
//! Each coefficient `beta_ip` of lag `p` has prior variance `tau_ip` with
//!
//! ```text
//! beta_ip | tau_ip ~ N(0, tau_ip)
//! tau_ip  | lambda_p^2 ~ Gamma(kappa_p, rate = kappa_p lambda_p^2 / 2)
//! lambda_p^2 = delta_1 * ... * delta_p,   delta_j ~ Gamma(c_j, rate = d_j)
//! ```
//!
//! Writing `tau_ip = 2 t_ip / lambda_p^2` recovers the form with
//! `t_ip ~ Gamma(kappa_p, kappa_p)` and prior variance `2 t_ip / lambda_p^2`.
//! The local scales stored in [`ChainState`](crate::ChainState) are the
//! variances `tau_ip` themselves, whose full conditional is
//! `GIG(kappa_p - 1/2, beta_ip^2, kappa_p lambda_p^2)`.

mod gig;

#[cfg(test)]
pub(crate) use gig::oracle as gig_oracle;
pub use gig::{sample_gig, GigParams};

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChainState, ModelSpec};
use crate::rng::{Block, Streams};

/// Below this `beta^2` the GIG draw is routed through its `chi = 0` limit.
pub const BETA_SQ_FLOOR: f64 = 1e-300;
const TAU_FLOOR: f64 = 1e-300;

/// Full conditional used for the global scales when `P > 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalRule {
    /// `lambda_p^2 ~ G(c_p + kappa_p k, d_p + kappa_p (prod_{z<p} lambda_z) sum_i tau_ip / 2)`
    /// with `lambda_z = sqrt(lambda_z^2)`.
    AsPrinted,
    /// Same, with the product taken over `lambda_z^2`.
    SquaredProduct,
    /// Draw each increment `delta_p` from its exact full conditional, which
    /// collects every lag `p' >= p` whose scale contains `delta_p`.
    #[default]
    Cumulative,
}

/// One local-scale draw from `GIG(kappa - 1/2, beta^2, kappa lambda^2)`.
pub fn sample_tau<R: Rng + ?Sized>(beta: f64, kappa: f64, lambda_sq: f64, rng: &mut R) -> Result<f64> {
    if !(kappa > 0.0 && lambda_sq > 0.0) {
        return Err(Error::Parameter(format!(
            "kappa ({kappa}) and lambda^2 ({lambda_sq}) must be positive"
        )));
    }
    let order = kappa - 0.5;
    let mut chi = beta * beta;
    if chi < BETA_SQ_FLOOR {
        chi = if order > 0.0 { 0.0 } else { BETA_SQ_FLOOR };
    }
    let params = GigParams::new(order, chi, kappa * lambda_sq)?;
    Ok(sample_gig(&params, rng).max(TAU_FLOOR))
}

/// Shape and rate of the printed global-scale conditional for 1-based lag `p`.
/// `lower` holds `lambda_z^2` for `z < p`.
pub fn lambda_sq_conditional(
    p: usize,
    taus: &[f64],
    (c, d): (f64, f64),
    kappa: f64,
    lower: &[f64],
    squared: bool,
) -> Result<(f64, f64)> {
    if taus.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Parameter("local scales must be positive".into()));
    }
    if p == 0 || lower.len() < p - 1 {
        return Err(Error::Parameter(format!("need {} lower global scales", p.saturating_sub(1))));
    }
    let k = taus.len() as f64;
    let sum: f64 = taus.iter().sum();
    let prod: f64 = lower[..p - 1]
        .iter()
        .map(|&l| if squared { l } else { l.sqrt() })
        .product();
    Ok((c + kappa * k, d + kappa * prod * sum / 2.0))
}

/// Printed-form draw of `lambda_p^2`.
pub fn sample_lambda_sq<R: Rng + ?Sized>(
    p: usize,
    taus: &[f64],
    prior: (f64, f64),
    kappa: f64,
    lower: &[f64],
    rng: &mut R,
) -> Result<f64> {
    let (shape, rate) = lambda_sq_conditional(p, taus, prior, kappa, lower, false)?;
    Ok(gamma(shape, rate, rng))
}

fn gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate).unwrap().sample(rng)
}

/// Redraws every local scale; rows are independent work units.
pub fn update_local_scales(state: &mut ChainState, spec: &ModelSpec, streams: &Streams) -> Result<()> {
    let dims = state.dims;
    let rows: Vec<Vec<f64>> = (0..dims.m)
        .into_par_iter()
        .map(|j| {
            let mut rng = streams.rng(Block::LocalScales, j);
            (0..dims.n_regressors())
                .map(|c| {
                    let pool = dims.pool_of_column(c);
                    sample_tau(state.coeffs[(j, c)], spec.kappa[pool], state.lambda_sq[pool], &mut rng)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    for (j, row) in rows.into_iter().enumerate() {
        for (c, v) in row.into_iter().enumerate() {
            state.local_scales[(j, c)] = v;
        }
    }
    Ok(())
}

/// Per-pool `(sum of local scales, pool size)`.
pub fn pool_sums(state: &ChainState) -> Vec<(f64, usize)> {
    let dims = state.dims;
    let mut out = vec![(0.0, 0); dims.lags];
    for c in 0..dims.n_regressors() {
        let pool = dims.pool_of_column(c);
        for j in 0..dims.m {
            out[pool].0 += state.local_scales[(j, c)];
            out[pool].1 += 1;
        }
    }
    out
}

/// Redraws the global scales under `spec.global_rule`.
pub fn update_global_scales<R: Rng + ?Sized>(state: &mut ChainState, spec: &ModelSpec, rng: &mut R) -> Result<()> {
    update_global_scales_with(state, spec, 1.0, rng)
}

/// As [`update_global_scales`], with every conditional rate multiplied by
/// `rate_factor`. Values other than 1 give a deliberately wrong sampler,
/// used to check that the consistency harness has power.
pub fn update_global_scales_with<R: Rng + ?Sized>(
    state: &mut ChainState,
    spec: &ModelSpec,
    rate_factor: f64,
    rng: &mut R,
) -> Result<()> {
    let sums = pool_sums(state);
    let lags = state.dims.lags;
    if sums.iter().any(|&(s, _)| !(s > 0.0)) {
        return Err(Error::Parameter("local scales must be positive".into()));
    }
    match spec.global_rule {
        GlobalRule::AsPrinted | GlobalRule::SquaredProduct => {
            let squared = spec.global_rule == GlobalRule::SquaredProduct;
            for p in 0..lags {
                let (sum, k) = sums[p];
                let prod: f64 = state.lambda_sq[..p]
                    .iter()
                    .map(|&l| if squared { l } else { l.sqrt() })
                    .product();
                let (c, d) = spec.lambda_prior[p];
                let kappa = spec.kappa[p];
                let shape = c + kappa * k as f64;
                let rate = (d + kappa * prod * sum / 2.0) * rate_factor;
                state.lambda_sq[p] = gamma(shape, rate, rng);
            }
            state.delta[0] = state.lambda_sq[0];
            for p in 1..lags {
                state.delta[p] = state.lambda_sq[p] / state.lambda_sq[p - 1];
            }
        }
        GlobalRule::Cumulative => {
            for p in 0..lags {
                let (c, d) = spec.lambda_prior[p];
                let mut shape = c;
                let mut rate = d;
                for q in p..lags {
                    let (sum, k) = sums[q];
                    let kappa = spec.kappa[q];
                    shape += kappa * k as f64;
                    rate += kappa * (state.lambda_sq[q] / state.delta[p]) * sum / 2.0;
                }
                state.delta[p] = gamma(shape, rate * rate_factor, rng);
                let mut acc = 1.0;
                for q in 0..lags {
                    acc *= state.delta[q];
                    state.lambda_sq[q] = acc;
                }
            }
        }
    }
    Ok(())
}

/// Draws `(delta, lambda^2)` from the prior.
pub fn sample_global_prior<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let delta: Vec<f64> = spec.lambda_prior.iter().map(|&(c, d)| gamma(c, d, rng)).collect();
    let lambda_sq = delta
        .iter()
        .scan(1.0, |acc, &d| {
            *acc *= d;
            Some(*acc)
        })
        .collect();
    (delta, lambda_sq)
}

/// Prior draw of a local scale given its pool's global scale.
pub fn sample_local_prior<R: Rng + ?Sized>(kappa: f64, lambda_sq: f64, rng: &mut R) -> f64 {
    gamma(kappa, kappa * lambda_sq / 2.0, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testing::{dims, random_state};
    use crate::rng::seeded;
    use crate::stats::ks_one_sample;
    use approx::assert_abs_diff_eq;
    use rand_distr::StandardNormal;
    use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};

    fn mean_of(draws: &[f64]) -> f64 {
        draws.iter().sum::<f64>() / draws.len() as f64
    }

    #[test]
    fn zero_beta_is_gamma_limit() {
        let mut rng = seeded(1);
        let lambda_sq = 2.0;
        let draws: Vec<f64> = (0..200_000)
            .map(|_| sample_tau(0.0, 0.6, lambda_sq, &mut rng).unwrap())
            .collect();
        // Gamma(shape 0.1, rate 0.3 lambda^2), mean 1 / (3 lambda^2)
        let m = mean_of(&draws);
        assert!((m * 3.0 * lambda_sq - 1.0).abs() < 0.03, "{m}");
        let g = GammaDist::new(0.1, 0.3 * lambda_sq).unwrap();
        let ks = ks_one_sample(&draws, |x| g.cdf(x));
        assert!(ks.p_value > 0.01, "{ks:?}");
    }

    #[test]
    fn tau_mean_matches_quadrature() {
        let mut rng = seeded(2);
        let grid = gig_oracle::grid(0.1, 1.0, 0.6);
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| sample_tau(1.0, 0.6, 1.0, &mut rng).unwrap())
            .collect();
        assert!((mean_of(&draws) / grid.mean - 1.0).abs() < 0.01);
    }

    #[test]
    fn tau_mean_grows_with_beta() {
        // quadrature means at beta in {1, 5, 25}
        let means: Vec<f64> = [1.0f64, 5.0, 25.0]
            .iter()
            .map(|b| gig_oracle::grid(0.1, b * b, 0.6).mean)
            .collect();
        assert!(means[0] < means[1] && means[1] < means[2]);
        let mut rng = seeded(3);
        for (b, want) in [1.0f64, 5.0, 25.0].iter().zip(&means) {
            let draws: Vec<f64> = (0..200_000)
                .map(|_| sample_tau(*b, 0.6, 1.0, &mut rng).unwrap())
                .collect();
            assert!((mean_of(&draws) / want - 1.0).abs() < 0.02);
        }
        // mode grows like |beta| / sqrt(kappa lambda^2) for large |beta|
        let big = gig_oracle::grid(0.1, 625.0, 0.6).mean;
        assert!((big / (25.0 / 0.6f64.sqrt()) - 1.0).abs() < 0.1);
    }

    #[test]
    fn lambda_posterior_for_first_lag() {
        let taus = [0.5; 4];
        let (shape, rate) = lambda_sq_conditional(1, &taus, (3.0, 0.03), 0.6, &[], false).unwrap();
        assert_abs_diff_eq!(shape, 5.4, epsilon = 1e-12);
        assert_abs_diff_eq!(rate, 0.63, epsilon = 1e-12);
        assert_abs_diff_eq!(shape / rate, 8.571428571428571, epsilon = 1e-12);
    }

    #[test]
    fn lambda_posterior_prior_limit() {
        let taus = [1e-12; 9];
        let (shape, rate) = lambda_sq_conditional(1, &taus, (3.0, 0.03), 0.6, &[], false).unwrap();
        assert_abs_diff_eq!(shape, 3.0 + 0.6 * 9.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rate, 0.03, epsilon = 1e-9);
    }

    #[test]
    fn lambda_posterior_second_lag_expansion() {
        // d_2 + kappa_2 * lambda_1 * (tau_1 + ... + tau_4) / 2, expanded by hand
        let taus = [0.2, 0.4, 1.0, 0.1];
        let lambda1_sq = 90.25;
        let kappa = 0.15;
        let (shape, rate) =
            lambda_sq_conditional(2, &taus, (3.0, 0.03), kappa, &[lambda1_sq], false).unwrap();
        assert_abs_diff_eq!(shape, 3.0 + 0.15 * 4.0, epsilon = 1e-12);
        let expanded = 0.03 + 0.15 * 9.5 * 0.2 / 2.0 + 0.15 * 9.5 * 0.4 / 2.0
            + 0.15 * 9.5 * 1.0 / 2.0
            + 0.15 * 9.5 * 0.1 / 2.0;
        assert_abs_diff_eq!(rate, expanded, epsilon = 1e-12);
        let (_, rate_sq) =
            lambda_sq_conditional(2, &taus, (3.0, 0.03), kappa, &[lambda1_sq], true).unwrap();
        assert_abs_diff_eq!(rate_sq, 0.03 + 0.15 * 90.25 * 1.7 / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn nonpositive_tau_is_rejected() {
        let mut rng = seeded(0);
        assert!(sample_lambda_sq(1, &[1.0, 0.0], (3.0, 0.03), 0.6, &[], &mut rng).is_err());
        assert!(sample_tau(1.0, 0.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn prior_variance_identity() {
        // t ~ Gamma(kappa, kappa), beta | t ~ N(0, 2 t / lambda^2)  =>  Var(beta) = 2 / lambda^2
        let mut rng = seeded(4);
        let (kappa, lambda_sq) = (0.6, 4.0);
        let n = 1_000_000;
        let mut s2 = 0.0;
        for _ in 0..n {
            let tau = sample_local_prior(kappa, lambda_sq, &mut rng);
            let z: f64 = rng.sample(StandardNormal);
            s2 += tau * z * z;
        }
        let v = s2 / n as f64;
        assert!((v * lambda_sq / 2.0 - 1.0).abs() < 0.01, "{v}");
    }

    #[test]
    fn local_scale_update_keeps_pool_wiring() {
        let mut rng = seeded(5);
        let mut state = random_state(dims(2, 2, 1), 5, &mut rng);
        state.coeffs.fill(0.5);
        state.lambda_sq = vec![1e8, 1.0];
        let spec = ModelSpec::new(2);
        update_local_scales(&mut state, &spec, &Streams::new(1, 0)).unwrap();
        // lag 1 pool is squeezed by the huge global scale
        let lag1: f64 = state.local_scales.columns(0, 2).iter().sum();
        let lag2: f64 = state.local_scales.columns(2, 2).iter().sum();
        assert!(lag1 < 1e-3 && lag2 > lag1);
        assert!(state.local_scales.iter().all(|&t| t > 0.0));
    }

    #[test]
    fn cumulative_rule_matches_printed_for_single_lag() {
        let mut rng = seeded(6);
        let state = random_state(dims(3, 1, 1), 5, &mut rng);
        let mut a = state.clone();
        let mut b = state;
        let mut spec = ModelSpec::new(1);
        spec.global_rule = GlobalRule::Cumulative;
        update_global_scales(&mut a, &spec, &mut seeded(9)).unwrap();
        spec.global_rule = GlobalRule::AsPrinted;
        update_global_scales(&mut b, &spec, &mut seeded(9)).unwrap();
        assert_eq!(a.lambda_sq, b.lambda_sq);
        assert_eq!(a.delta, a.lambda_sq);
    }
}
