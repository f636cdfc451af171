//! Domain types shared by the sampler and the analysis layer.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shrinkage::GlobalRule;
use crate::stochvol::{SvPrior, SvSeries};

/// Country / variable-kind tags attached to each series.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub country: String,
    pub kind: String,
}

/// Observed multivariate time series. Rows of `values` are time points.
#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub values: DMatrix<f64>,
    pub names: Vec<String>,
    pub groups: Vec<Group>,
    pub exogenous: Option<DMatrix<f64>>,
    pub exogenous_names: Vec<String>,
    pub transform_log: Vec<bool>,
    /// Date labels, metadata only.
    pub dates: Vec<String>,
}

impl Panel {
    pub fn new(values: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let m = values.ncols();
        let panel = Panel {
            groups: vec![Group::default(); m],
            transform_log: vec![false; m],
            dates: (0..values.nrows()).map(|t| t.to_string()).collect(),
            values,
            names,
            exogenous: None,
            exogenous_names: Vec::new(),
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn n_series(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_exogenous(&self) -> usize {
        self.exogenous.as_ref().map_or(0, |x| x.ncols())
    }

    pub fn validate(&self) -> Result<()> {
        let (t, m) = self.values.shape();
        if m == 0 {
            return Err(Error::Data("panel has no series".into()));
        }
        if self.names.len() != m || self.groups.len() != m || self.transform_log.len() != m {
            return Err(Error::Dimension(format!(
                "panel has {m} series but {} names, {} groups, {} transform flags",
                self.names.len(),
                self.groups.len(),
                self.transform_log.len()
            )));
        }
        if self.dates.len() != t {
            return Err(Error::Dimension(format!(
                "panel has {t} rows but {} dates",
                self.dates.len()
            )));
        }
        if let Some((row, col)) = first_non_finite(&self.values) {
            return Err(Error::Data(format!(
                "non-finite value at row {row}, series {}",
                self.names[col]
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &self.names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Data(format!("duplicate series name {name}")));
            }
        }
        if let Some(x) = &self.exogenous {
            if x.nrows() != t {
                return Err(Error::Dimension(format!(
                    "exogenous block has {} rows, panel has {t}",
                    x.nrows()
                )));
            }
            if x.ncols() != self.exogenous_names.len() {
                return Err(Error::Dimension("exogenous names do not match columns".into()));
            }
            if let Some((row, col)) = first_non_finite(x) {
                return Err(Error::Data(format!(
                    "non-finite exogenous value at row {row}, column {col}"
                )));
            }
        }
        Ok(())
    }

    /// Indices of series whose group kind equals `kind`.
    pub fn indices_of_kind(&self, kind: &str) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }
}

fn first_non_finite(x: &DMatrix<f64>) -> Option<(usize, usize)> {
    for c in 0..x.ncols() {
        for r in 0..x.nrows() {
            if !x[(r, c)].is_finite() {
                return Some((r, c));
            }
        }
    }
    None
}

/// Chain length and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcSettings {
    pub burn_in: usize,
    pub keep: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for McmcSettings {
    fn default() -> Self {
        McmcSettings {
            burn_in: 10_000,
            keep: 5_000,
            thin: 2,
            seed: 1,
        }
    }
}

/// Lag order, factor count and every prior hyperparameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub lags: usize,
    pub factors: usize,
    pub include_intercept: bool,
    /// Per-lag Gamma shape of the local scales.
    pub kappa: Vec<f64>,
    /// Per-lag `(c_j, d_j)` Gamma prior on the increments of the global scale.
    pub lambda_prior: Vec<(f64, f64)>,
    pub loading_prior_variance: f64,
    pub sv_prior: SvPrior,
    pub global_rule: GlobalRule,
    pub mcmc: McmcSettings,
}

/// `kappa_1 = 0.6`, `kappa_p = 0.6 / p^2`.
pub fn default_kappa(lags: usize) -> Vec<f64> {
    (1..=lags).map(|p| 0.6 / (p * p) as f64).collect()
}

impl ModelSpec {
    /// Default hyperparameters for a VAR(`lags`) with one factor.
    pub fn new(lags: usize) -> Self {
        ModelSpec {
            lags,
            factors: 1,
            include_intercept: false,
            kappa: default_kappa(lags),
            lambda_prior: vec![(3.0, 0.03); lags],
            loading_prior_variance: 10.0,
            sv_prior: SvPrior::default(),
            global_rule: GlobalRule::default(),
            mcmc: McmcSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lags == 0 {
            return Err(Error::Parameter("lag order must be positive".into()));
        }
        if self.factors == 0 {
            return Err(Error::Parameter("factor count must be positive".into()));
        }
        if self.kappa.len() != self.lags || self.lambda_prior.len() != self.lags {
            return Err(Error::Parameter(format!(
                "need {} kappa values and lambda priors, got {} and {}",
                self.lags,
                self.kappa.len(),
                self.lambda_prior.len()
            )));
        }
        if self.kappa.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
            return Err(Error::Parameter("kappa must be positive".into()));
        }
        if self
            .lambda_prior
            .iter()
            .any(|&(c, d)| !(c > 0.0 && d > 0.0 && c.is_finite() && d.is_finite()))
        {
            return Err(Error::Parameter("lambda prior (c, d) must be positive".into()));
        }
        if !(self.loading_prior_variance > 0.0 && self.loading_prior_variance.is_finite()) {
            return Err(Error::Parameter("loading prior variance must be positive".into()));
        }
        if self.mcmc.thin == 0 {
            return Err(Error::Parameter("thin must be at least 1".into()));
        }
        self.sv_prior.validate()
    }

    pub fn dims(&self, n_series: usize, n_exogenous: usize) -> Dims {
        Dims {
            m: n_series,
            lags: self.lags,
            exog: n_exogenous,
            intercept: self.include_intercept,
            factors: self.factors,
        }
    }
}

/// Model dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub m: usize,
    pub lags: usize,
    pub exog: usize,
    pub intercept: bool,
    pub factors: usize,
}

impl Dims {
    /// Regressors per equation: `m * P` lags, then exogenous, then intercept.
    pub fn n_regressors(&self) -> usize {
        self.m * self.lags + self.n_extras()
    }

    pub fn n_extras(&self) -> usize {
        self.exog + usize::from(self.intercept)
    }

    /// Shrinkage pool (0-based lag) of regressor column `col`. Exogenous and
    /// intercept columns share the lag-1 pool.
    pub fn pool_of_column(&self, col: usize) -> usize {
        if col < self.m * self.lags {
            col / self.m
        } else {
            0
        }
    }

    /// Number of coefficients in each shrinkage pool.
    pub fn pool_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.m * self.m; self.lags];
        sizes[0] += self.m * self.n_extras();
        sizes
    }
}

/// One full parameter configuration of the sampler.
///
/// Time-indexed paths have one entry per estimation row, i.e. panel rows
/// `P..T`; the first `P` observations are conditioning values only.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub dims: Dims,
    /// `m x K` matrix `[B_1 .. B_P | exogenous | intercept]`.
    pub coeffs: DMatrix<f64>,
    /// `m x q`; entry `(i, i)` is pinned to 1 and entries above it to 0.
    pub loadings: DMatrix<f64>,
    /// `T x q` factor path.
    pub factors: DMatrix<f64>,
    pub factor_sv: Vec<SvSeries>,
    pub idio_sv: Vec<SvSeries>,
    /// `m x K`, same layout as `coeffs`; each entry is the prior variance of
    /// the matching coefficient.
    pub local_scales: DMatrix<f64>,
    /// Per-lag global scale `lambda_p^2 = delta_1 * ... * delta_p`.
    pub lambda_sq: Vec<f64>,
    pub delta: Vec<f64>,
}

impl ChainState {
    pub fn n_times(&self) -> usize {
        self.factors.nrows()
    }

    /// Lag matrix `B_p` for 1-based `p`.
    pub fn lag_matrix(&self, p: usize) -> DMatrix<f64> {
        let m = self.dims.m;
        self.coeffs.columns((p - 1) * m, m).into_owned()
    }

    pub fn factor_var(&self, i: usize, t: usize) -> f64 {
        self.factor_sv[i].logvol[t].exp()
    }

    pub fn idio_var(&self, j: usize, t: usize) -> f64 {
        self.idio_sv[j].logvol[t].exp()
    }

    /// `T x m` idiosyncratic variances.
    pub fn idio_var_matrix(&self) -> DMatrix<f64> {
        let t = self.n_times();
        DMatrix::from_fn(t, self.dims.m, |r, j| self.idio_var(j, r))
    }

    /// `T x q` factor variances.
    pub fn factor_var_matrix(&self) -> DMatrix<f64> {
        let t = self.n_times();
        DMatrix::from_fn(t, self.dims.factors, |r, i| self.factor_var(i, r))
    }

    /// Checks every structural invariant. Used on retained draws.
    pub fn check_invariants(&self) -> Result<()> {
        let d = self.dims;
        let t = self.n_times();
        if self.coeffs.shape() != (d.m, d.n_regressors())
            || self.loadings.shape() != (d.m, d.factors)
            || self.local_scales.shape() != self.coeffs.shape()
            || self.factor_sv.len() != d.factors
            || self.idio_sv.len() != d.m
            || self.lambda_sq.len() != d.lags
            || self.delta.len() != d.lags
        {
            return Err(Error::Dimension("chain state shapes disagree with dims".into()));
        }
        for i in 0..d.factors {
            for j in 0..=i.min(d.m - 1) {
                let want = if i == j { 1.0 } else { 0.0 };
                if j < i && self.loadings[(j, i)] != want {
                    return Err(Error::Parameter(format!("loading ({j}, {i}) must be 0")));
                }
                if j == i && self.loadings[(j, i)] != want {
                    return Err(Error::Parameter(format!("loading ({j}, {i}) must be 1")));
                }
            }
        }
        for sv in self.factor_sv.iter().chain(&self.idio_sv) {
            sv.check()?;
            if sv.logvol.len() != t {
                return Err(Error::Dimension("volatility path length".into()));
            }
        }
        let finite = |x: &DMatrix<f64>| x.iter().all(|v| v.is_finite());
        if !finite(&self.coeffs) || !finite(&self.loadings) || !finite(&self.factors) {
            return Err(Error::Numerical("non-finite coefficients, loadings or factors".into()));
        }
        let positive = |v: &f64| *v > 0.0 && v.is_finite();
        if !self.local_scales.iter().all(positive)
            || !self.lambda_sq.iter().all(positive)
            || !self.delta.iter().all(positive)
        {
            return Err(Error::Parameter("shrinkage scales must be positive".into()));
        }
        Ok(())
    }
}

/// `Sigma_t = X H_t X' + Omega_t` at 0-based time index `t`.
pub fn assemble_sigma(state: &ChainState, t: usize) -> Result<DMatrix<f64>> {
    let len = state.n_times();
    if t >= len {
        return Err(Error::Index { index: t, len });
    }
    let x = &state.loadings;
    let h = DVector::from_fn(state.dims.factors, |i, _| state.factor_var(i, t));
    let scaled = x * DMatrix::from_diagonal(&h);
    let mut sigma = &scaled * x.transpose();
    for j in 0..state.dims.m {
        sigma[(j, j)] += state.idio_var(j, t);
    }
    // exact symmetry
    for r in 0..sigma.nrows() {
        for c in 0..r {
            let v = 0.5 * (sigma[(r, c)] + sigma[(c, r)]);
            sigma[(r, c)] = v;
            sigma[(c, r)] = v;
        }
    }
    Ok(sigma)
}

/// Companion matrix of the lag coefficients: top block row `[B_1 .. B_P]`,
/// identity blocks on the first subdiagonal.
pub fn companion_matrix(state: &ChainState) -> DMatrix<f64> {
    companion_from_coeffs(&state.coeffs, state.dims.m, state.dims.lags)
}

pub fn companion_from_coeffs(coeffs: &DMatrix<f64>, m: usize, lags: usize) -> DMatrix<f64> {
    let n = m * lags;
    let mut c = DMatrix::zeros(n, n);
    c.view_mut((0, 0), (m, n)).copy_from(&coeffs.columns(0, n));
    for i in m..n {
        c[(i, i - m)] = 1.0;
    }
    c
}

/// Largest eigenvalue modulus of the companion matrix.
pub fn spectral_radius(state: &ChainState) -> f64 {
    radius_of(&companion_matrix(state))
}

pub fn radius_of(companion: &DMatrix<f64>) -> f64 {
    if companion.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    companion
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}
