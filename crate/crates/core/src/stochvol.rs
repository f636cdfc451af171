//! Centered AR(1) log-volatility processes.
//!
//! ```text
//! y_t          ~ N(0, exp(h_t))
//! h_1          ~ N(mu, Xi / (1 - phi^2))
//! h_t | h_t-1  ~ N(mu + phi (h_t-1 - mu), Xi)
//! ```
//!
//! The path is drawn by forward filtering / backward sampling on
//! `log(y_t^2 + c)`, whose log-chi-square error is replaced by a ten
//! component Gaussian mixture. Parameters are drawn in the centered
//! parameterization (exact conditionals for `mu` and `Xi`, independence
//! Metropolis-Hastings for `phi`), then `(mu, sqrt(Xi))` are redrawn once more
//! in the non-centered parameterization (ancillarity-sufficiency
//! interweaving).

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shrinkage::{sample_gig, GigParams};

/// Offset added to squared observations before taking logs.
pub const LOG_OFFSET: f64 = 1e-8;

/// Ten-component normal mixture approximating `log(chi^2_1)`.
const MIX_PROB: [f64; 10] = [
    0.00609, 0.04775, 0.13057, 0.20674, 0.22715, 0.18842, 0.12047, 0.05591, 0.01575, 0.00115,
];
const MIX_MEAN: [f64; 10] = [
    1.92677, 1.34744, 0.73504, 0.02266, -0.85173, -1.97278, -3.46788, -5.55246, -8.68384, -14.65,
];
const MIX_VAR: [f64; 10] = [
    0.11265, 0.17788, 0.26768, 0.40611, 0.62699, 0.98583, 1.57469, 2.54498, 4.16591, 7.33342,
];

/// `E[log chi^2_1]`.
pub const LOG_CHISQ_MEAN: f64 = -1.2704;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvPrior {
    pub mean_mean: f64,
    pub mean_variance: f64,
    /// Beta prior on `(phi + 1) / 2`.
    pub persistence_a: f64,
    pub persistence_b: f64,
    /// Gamma prior (shape, rate) on `Xi`.
    pub innovation_shape: f64,
    pub innovation_rate: f64,
}

impl Default for SvPrior {
    fn default() -> Self {
        SvPrior {
            mean_mean: 0.0,
            mean_variance: 10.0,
            persistence_a: 5.0,
            persistence_b: 1.5,
            innovation_shape: 0.5,
            innovation_rate: 0.5,
        }
    }
}

impl SvPrior {
    pub fn validate(&self) -> Result<()> {
        let all_pos = [
            self.mean_variance,
            self.persistence_a,
            self.persistence_b,
            self.innovation_shape,
            self.innovation_rate,
        ]
        .iter()
        .all(|v| *v > 0.0 && v.is_finite());
        if !all_pos || !self.mean_mean.is_finite() {
            return Err(Error::Parameter("stochastic volatility prior must be positive".into()));
        }
        Ok(())
    }

    fn log_persistence_prior(&self, phi: f64) -> f64 {
        (self.persistence_a - 1.0) * (1.0 + phi).ln() + (self.persistence_b - 1.0) * (1.0 - phi).ln()
    }

    /// Non-centered moves need `Xi ~ Gamma(1/2, r)`, i.e. `±sqrt(Xi) ~ N(0, 1/(2r))`.
    fn allows_interweaving(&self) -> bool {
        self.innovation_shape == 0.5
    }

    /// Draws `(mu, phi, Xi)` from the prior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64, f64) {
        let mu = self.mean_mean + self.mean_variance.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let b = Beta::new(self.persistence_a, self.persistence_b).unwrap().sample(rng);
        let xi = Gamma::new(self.innovation_shape, 1.0 / self.innovation_rate)
            .unwrap()
            .sample(rng);
        (mu, (2.0 * b - 1.0).clamp(-1.0 + 1e-12, 1.0 - 1e-12), xi.max(f64::MIN_POSITIVE))
    }
}

/// One log-volatility process: path plus AR(1) parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SvSeries {
    pub logvol: Vec<f64>,
    pub mean: f64,
    pub persistence: f64,
    pub innovation_var: f64,
}

impl SvSeries {
    pub fn check(&self) -> Result<()> {
        if !(self.persistence.abs() < 1.0) {
            return Err(Error::Parameter(format!("persistence {} outside (-1, 1)", self.persistence)));
        }
        if !(self.innovation_var > 0.0 && self.innovation_var.is_finite()) {
            return Err(Error::Parameter("innovation variance must be positive".into()));
        }
        if !self.mean.is_finite() || self.logvol.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite volatility state".into()));
        }
        Ok(())
    }

    /// Starting values from data: smoothed log squares, `phi = 0.9`, `Xi = 0.1`.
    pub fn initial(observations: &[f64]) -> Self {
        let raw: Vec<f64> = observations
            .iter()
            .map(|y| (y * y + LOG_OFFSET).ln() - LOG_CHISQ_MEAN)
            .collect();
        let n = raw.len();
        let half = 2usize;
        let logvol: Vec<f64> = (0..n)
            .map(|t| {
                let lo = t.saturating_sub(half);
                let hi = (t + half + 1).min(n);
                raw[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            })
            .collect();
        let mean = if n == 0 { 0.0 } else { logvol.iter().sum::<f64>() / n as f64 };
        SvSeries {
            logvol,
            mean,
            persistence: 0.9,
            innovation_var: 0.1,
        }
    }

    /// Simulates a path of length `len` from the AR(1) law (stationary start).
    pub fn simulate_path<R: Rng + ?Sized>(&mut self, len: usize, rng: &mut R) {
        self.logvol = simulate_ar1(self.mean, self.persistence, self.innovation_var, len, rng);
    }

    /// Full block update given mean-zero observations with variance `exp(h_t)`.
    pub fn update<R: Rng + ?Sized>(&mut self, observations: &[f64], prior: &SvPrior, rng: &mut R) -> Result<()> {
        if observations.len() != self.logvol.len() {
            return Err(Error::Dimension(format!(
                "{} observations for a path of length {}",
                observations.len(),
                self.logvol.len()
            )));
        }
        let ystar = log_squares(observations);
        let indicators = sample_indicators(&ystar, &self.logvol, rng);
        self.logvol = ffbs(&ystar, &indicators, self, rng)?;
        let (mu, phi, xi) = sample_sv_params(self, prior, rng);
        self.mean = mu;
        self.persistence = phi;
        self.innovation_var = xi;
        if prior.allows_interweaving() {
            interweave(self, &ystar, &indicators, prior, rng);
        }
        Ok(())
    }
}

pub fn simulate_ar1<R: Rng + ?Sized>(mu: f64, phi: f64, xi: f64, len: usize, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let mut h = mu + (xi / (1.0 - phi * phi)).sqrt() * rng.sample::<f64, _>(StandardNormal);
    for t in 0..len {
        if t > 0 {
            h = mu + phi * (h - mu) + xi.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        out.push(h);
    }
    out
}

pub fn log_squares(observations: &[f64]) -> Vec<f64> {
    observations.iter().map(|y| (y * y + LOG_OFFSET).ln()).collect()
}

fn sample_indicators<R: Rng + ?Sized>(ystar: &[f64], path: &[f64], rng: &mut R) -> Vec<usize> {
    let mut logw = [0.0; 10];
    ystar
        .iter()
        .zip(path)
        .map(|(&y, &h)| {
            let e = y - h;
            for k in 0..10 {
                let d = e - MIX_MEAN[k];
                logw[k] = MIX_PROB[k].ln() - 0.5 * MIX_VAR[k].ln() - 0.5 * d * d / MIX_VAR[k];
            }
            let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut cum = [0.0; 10];
            let mut acc = 0.0;
            for k in 0..10 {
                acc += (logw[k] - top).exp();
                cum[k] = acc;
            }
            let u = rng.random::<f64>() * acc;
            cum.iter().position(|&c| u <= c).unwrap_or(9)
        })
        .collect()
}

/// Forward filter, backward sample given mixture indicators.
fn ffbs<R: Rng + ?Sized>(ystar: &[f64], indicators: &[usize], sv: &SvSeries, rng: &mut R) -> Result<Vec<f64>> {
    let n = ystar.len();
    if n == 0 {
        return Err(Error::Parameter("empty observation vector".into()));
    }
    let (mu, phi, xi) = (sv.mean, sv.persistence, sv.innovation_var);
    let mut filt_mean = vec![0.0; n];
    let mut filt_var = vec![0.0; n];
    let mut a = mu;
    let mut p = xi / (1.0 - phi * phi);
    for t in 0..n {
        let k = indicators[t];
        let gain = p / (p + MIX_VAR[k]);
        filt_mean[t] = a + gain * (ystar[t] - MIX_MEAN[k] - a);
        filt_var[t] = p * (1.0 - gain);
        a = mu + phi * (filt_mean[t] - mu);
        p = phi * phi * filt_var[t] + xi;
    }
    let mut path = vec![0.0; n];
    let z = |rng: &mut R| rng.sample::<f64, _>(StandardNormal);
    path[n - 1] = filt_mean[n - 1] + filt_var[n - 1].sqrt() * z(rng);
    for t in (0..n - 1).rev() {
        let prec = 1.0 / filt_var[t] + phi * phi / xi;
        let var = 1.0 / prec;
        let mean = var * (filt_mean[t] / filt_var[t] + phi * (path[t + 1] - mu * (1.0 - phi)) / xi);
        path[t] = mean + var.sqrt() * z(rng);
    }
    if path.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite log-volatility path".into()));
    }
    Ok(path)
}

/// Draws a new path from its conditional posterior given `(mu, phi, Xi)`.
pub fn sample_logvol_path<R: Rng + ?Sized>(observations: &[f64], series: &SvSeries, rng: &mut R) -> Result<Vec<f64>> {
    if observations.is_empty() {
        return Err(Error::Parameter("empty observation vector".into()));
    }
    if observations.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("non-finite observation".into()));
    }
    let current = if series.logvol.len() == observations.len() {
        series.logvol.clone()
    } else {
        vec![series.mean; observations.len()]
    };
    let ystar = log_squares(observations);
    let indicators = sample_indicators(&ystar, &current, rng);
    ffbs(&ystar, &indicators, series, rng)
}

/// One centered Gibbs scan over `(Xi, phi, mu)` given the path.
pub fn sample_sv_params<R: Rng + ?Sized>(series: &SvSeries, prior: &SvPrior, rng: &mut R) -> (f64, f64, f64) {
    let h = &series.logvol;
    let n = h.len();
    let (mut mu, mut phi) = (series.mean, series.persistence);

    // Xi | mu, phi: Gamma prior times inverse-gamma kernel -> GIG
    let ss = |mu: f64, phi: f64| {
        let mut s = (1.0 - phi * phi) * (h[0] - mu).powi(2);
        for t in 1..n {
            s += (h[t] - mu - phi * (h[t - 1] - mu)).powi(2);
        }
        s
    };
    let chi = ss(mu, phi).max(1e-300);
    let xi = GigParams::new(prior.innovation_shape - n as f64 / 2.0, chi, 2.0 * prior.innovation_rate)
        .map(|g| sample_gig(&g, rng))
        .unwrap_or(series.innovation_var)
        .max(f64::MIN_POSITIVE);

    // phi | mu, Xi: Gaussian proposal from the transition terms, MH on the
    // Beta prior and the stationary initial-state density
    if n >= 2 {
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for t in 1..n {
            sxx += (h[t - 1] - mu).powi(2);
            sxy += (h[t] - mu) * (h[t - 1] - mu);
        }
        let sxx = sxx.max(1e-300);
        let prop = sxy / sxx + (xi / sxx).sqrt() * rng.sample::<f64, _>(StandardNormal);
        if prop.abs() < 1.0 {
            let log_target = |p: f64| {
                prior.log_persistence_prior(p) + 0.5 * (1.0 - p * p).ln()
                    - 0.5 * (1.0 - p * p) * (h[0] - mu).powi(2) / xi
            };
            if rng.random::<f64>().ln() < log_target(prop) - log_target(phi) {
                phi = prop;
            }
        }
    }

    // mu | phi, Xi
    let prec = 1.0 / prior.mean_variance + ((1.0 - phi * phi) + (n as f64 - 1.0) * (1.0 - phi).powi(2)) / xi;
    let mut lin = prior.mean_mean / prior.mean_variance + (1.0 - phi * phi) * h[0] / xi;
    for t in 1..n {
        lin += (1.0 - phi) * (h[t] - phi * h[t - 1]) / xi;
    }
    mu = lin / prec + rng.sample::<f64, _>(StandardNormal) / prec.sqrt();
    (mu, phi, xi)
}

/// Non-centered redraw of `(mu, sigma)` with `h_t = mu + sigma * h~_t`.
fn interweave<R: Rng + ?Sized>(series: &mut SvSeries, ystar: &[f64], indicators: &[usize], prior: &SvPrior, rng: &mut R) {
    let sigma = series.innovation_var.sqrt();
    let std: Vec<f64> = series.logvol.iter().map(|h| (h - series.mean) / sigma).collect();
    let mut q = Matrix2::new(1.0 / prior.mean_variance, 0.0, 0.0, 2.0 * prior.innovation_rate);
    let mut b = Vector2::new(prior.mean_mean / prior.mean_variance, 0.0);
    for t in 0..ystar.len() {
        let k = indicators[t];
        let w = 1.0 / MIX_VAR[k];
        let z = Vector2::new(1.0, std[t]);
        q += w * z * z.transpose();
        b += w * z * (ystar[t] - MIX_MEAN[k]);
    }
    let Some(chol) = q.cholesky() else { return };
    let mean = chol.solve(&b);
    let e = Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal));
    let draw = mean + chol.l().transpose().solve_upper_triangular(&e).unwrap_or(Vector2::zeros());
    let (mu, s) = (draw[0], draw[1]);
    if !(s.is_finite() && s != 0.0 && mu.is_finite()) {
        return;
    }
    series.mean = mu;
    series.innovation_var = s * s;
    for (h, z) in series.logvol.iter_mut().zip(&std) {
        *h = mu + s * z;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::stats::{correlation, ks_two_sample, median};

    fn simulate(mu: f64, phi: f64, xi: f64, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = seeded(seed);
        let path = simulate_ar1(mu, phi, xi, n, &mut rng);
        let y = path
            .iter()
            .map(|h| (h / 2.0).exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (path, y)
    }

    #[test]
    fn mixture_matches_log_chi_square_moments() {
        let mean: f64 = (0..10).map(|k| MIX_PROB[k] * MIX_MEAN[k]).sum();
        let second: f64 = (0..10).map(|k| MIX_PROB[k] * (MIX_VAR[k] + MIX_MEAN[k].powi(2))).sum();
        assert!((mean - LOG_CHISQ_MEAN).abs() < 1e-3);
        // Var(log chi^2_1) = pi^2 / 2
        assert!((second - mean * mean - std::f64::consts::PI.powi(2) / 2.0).abs() < 0.01);
        assert!((MIX_PROB.iter().sum::<f64>() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn zero_observations_give_finite_paths() {
        let sv = SvSeries::initial(&[0.0; 50]);
        let mut rng = seeded(1);
        let path = sample_logvol_path(&[0.0; 50], &sv, &mut rng).unwrap();
        assert!(path.iter().all(|v| v.is_finite()));
        let mut sv = sv;
        for _ in 0..50 {
            sv.update(&[0.0; 50], &SvPrior::default(), &mut rng).unwrap();
            sv.check().unwrap();
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        let sv = SvSeries::initial(&[]);
        assert!(sample_logvol_path(&[], &sv, &mut seeded(0)).is_err());
    }

    #[test]
    fn constant_variance_path_is_centered_at_zero() {
        let mut rng = seeded(2);
        let y: Vec<f64> = (0..500).map(|_| rng.sample(StandardNormal)).collect();
        let sv = SvSeries {
            logvol: vec![0.0; 500],
            mean: 0.0,
            persistence: 0.0,
            innovation_var: 1e-3,
        };
        let mut acc = vec![0.0; 500];
        let draws = 200;
        for _ in 0..draws {
            let p = sample_logvol_path(&y, &sv, &mut rng).unwrap();
            acc.iter_mut().zip(&p).for_each(|(a, v)| *a += v / draws as f64);
        }
        assert!(acc.iter().all(|v| v.abs() < 0.3), "{:?}", acc.iter().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn recovers_persistent_path() {
        let (truth, y) = simulate(-1.0, 0.98, 0.1, 1000, 3);
        let mut sv = SvSeries {
            logvol: truth.clone(),
            mean: -1.0,
            persistence: 0.98,
            innovation_var: 0.1,
        };
        let mut rng = seeded(4);
        let mut acc = vec![0.0; 1000];
        let draws = 300;
        for _ in 0..draws {
            sv.logvol = sample_logvol_path(&y, &sv, &mut rng).unwrap();
            acc.iter_mut().zip(&sv.logvol).for_each(|(a, v)| *a += v / draws as f64);
        }
        let c = correlation(&acc, &truth);
        assert!(c > 0.8);
    }

    #[test]
    fn degenerate_path_params() {
        let mut rng = seeded(5);
        let sv = SvSeries {
            logvol: vec![0.0; 100],
            mean: 0.0,
            persistence: 0.5,
            innovation_var: 0.1,
        };
        let mut mus = Vec::new();
        for _ in 0..500 {
            let (mu, phi, xi) = sample_sv_params(&sv, &SvPrior::default(), &mut rng);
            assert!(phi.abs() < 1.0 && xi > 0.0);
            mus.push(mu);
        }
        assert!(median(&mus).abs() < 0.1);
    }

    #[test]
    fn parameter_chain_on_prior_paths_targets_prior() {
        // alternate path ~ AR(1) law | params and params | path: the
        // parameter marginal is the prior
        let prior = SvPrior::default();
        let mut rng = seeded(6);
        let (mu, phi, xi) = prior.sample(&mut rng);
        let mut sv = SvSeries {
            logvol: Vec::new(),
            mean: mu,
            persistence: phi,
            innovation_var: xi,
        };
        let mut chain = (Vec::new(), Vec::new(), Vec::new());
        let mut direct = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..40_000 {
            sv.simulate_path(3, &mut rng);
            let (mu, phi, xi) = sample_sv_params(&sv, &prior, &mut rng);
            sv.mean = mu;
            sv.persistence = phi;
            sv.innovation_var = xi;
            if i % 4 == 0 {
                chain.0.push(mu);
                chain.1.push(phi);
                chain.2.push(xi);
                let d = prior.sample(&mut rng);
                direct.0.push(d.0);
                direct.1.push(d.1);
                direct.2.push(d.2);
            }
        }
        for (a, b) in [(&chain.0, &direct.0), (&chain.1, &direct.1), (&chain.2, &direct.2)] {
            let ks = ks_two_sample(a, b);
            assert!(ks.p_value > 0.001, "{ks:?}");
        }
    }

    #[test]
    fn long_path_parameter_recovery() {
        let mut rng = seeded(7);
        let path = simulate_ar1(-1.0, 0.95, 0.04, 2000, &mut rng);
        let mut sv = SvSeries {
            logvol: path,
            mean: 0.0,
            persistence: 0.5,
            innovation_var: 0.5,
        };
        let prior = SvPrior::default();
        let mut draws = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..3000 {
            let (mu, phi, xi) = sample_sv_params(&sv, &prior, &mut rng);
            sv.mean = mu;
            sv.persistence = phi;
            sv.innovation_var = xi;
            if i >= 500 {
                draws.0.push(mu);
                draws.1.push(phi);
                draws.2.push(xi);
            }
        }
        assert!((median(&draws.0) + 1.0).abs() < 0.2);
        assert!((median(&draws.1) - 0.95).abs() < 0.03);
        let r = median(&draws.2) / 0.04;
        assert!(r > 0.5 && r < 2.0);
    }

    #[test]
    fn stationary_variance_of_prior_paths() {
        let mut rng = seeded(8);
        let (mu, phi, xi) = (0.5, 0.8, 0.3);
        let samples: Vec<f64> = (0..20_000).map(|_| simulate_ar1(mu, phi, xi, 5, &mut rng)[4]).collect();
        let v = crate::stats::variance(&samples);
        let want = xi / (1.0 - phi * phi);
        assert!((v / want - 1.0).abs() < 0.04, "{v} vs {want}");
    }

    #[test]
    fn full_block_keeps_invariants() {
        let (_, y) = simulate(0.0, 0.9, 0.1, 200, 9);
        let mut sv = SvSeries::initial(&y);
        let mut rng = seeded(10);
        for _ in 0..500 {
            sv.update(&y, &SvPrior::default(), &mut rng).unwrap();
            sv.check().unwrap();
        }
    }
}
