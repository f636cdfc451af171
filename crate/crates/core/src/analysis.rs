//! Posterior summaries computed from retained draws: the common-factor
//! volatility path, impulse responses to a scaled factor shock, and the share
//! of each variable's innovation variance explained by the factors.
//!
//! Every function works draw by draw and returns a [`DrawArray`]; quantile
//! tables come from [`DrawArray::summarize`].

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gibbs::DrawStore;
use crate::model::companion_from_coeffs;
use crate::stats::quantile_sorted;

/// Percentiles reported by default.
pub const DEFAULT_GRID: [f64; 5] = [0.05, 0.16, 0.5, 0.84, 0.95];

/// Per-draw values on a `rows x cols` grid (time or horizon by variable),
/// stored draw-major and row-major within a draw.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawArray {
    pub n_draws: usize,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl DrawArray {
    fn from_draws(rows: usize, cols: usize, draws: Vec<Vec<f64>>) -> Self {
        DrawArray {
            n_draws: draws.len(),
            rows,
            cols,
            values: draws.into_iter().flatten().collect(),
        }
    }

    pub fn get(&self, d: usize, r: usize, c: usize) -> f64 {
        self.values[(d * self.rows + r) * self.cols + c]
    }

    /// All draws of cell `(r, c)`.
    pub fn cell(&self, r: usize, c: usize) -> Vec<f64> {
        (0..self.n_draws).map(|d| self.get(d, r, c)).collect()
    }

    /// Quantiles over draws for every cell, ordered by column then row.
    pub fn summarize(&self, names: &[String], grid: &[f64]) -> Result<QuantileTable> {
        if names.len() != self.cols {
            return Err(Error::Dimension(format!(
                "{} names for {} columns",
                names.len(),
                self.cols
            )));
        }
        let mut rows = Vec::with_capacity(self.rows * self.cols);
        for (c, name) in names.iter().enumerate() {
            for r in 0..self.rows {
                rows.push(QuantileRow {
                    variable: name.clone(),
                    index: r,
                    quantiles: summarize(&self.cell(r, c), grid)?,
                });
            }
        }
        Ok(QuantileTable {
            grid: grid.to_vec(),
            rows,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantileRow {
    pub variable: String,
    pub index: usize,
    pub quantiles: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantileTable {
    pub grid: Vec<f64>,
    pub rows: Vec<QuantileRow>,
}

/// Column label for a probability level: `0.05 -> p05`, `0.5 -> p50`,
/// `0.025 -> p2.5`.
pub fn grid_label(prob: f64) -> String {
    let pct = prob * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("p{:02}", pct.round() as u64)
    } else {
        format!("p{pct}")
    }
}

impl QuantileTable {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["variable".to_string(), "time_or_horizon".to_string()];
        h.extend(self.grid.iter().map(|&p| grid_label(p)));
        h
    }

    /// Writes `variable,time_or_horizon,p05,...` rows. Floats use the
    /// shortest representation that round-trips.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.header())?;
        for row in &self.rows {
            let mut rec = vec![row.variable.clone(), row.index.to_string()];
            rec.extend(row.quantiles.iter().map(|q| q.to_string()));
            out.write_record(rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Empirical quantiles of `values` at `grid`, interpolating linearly between
/// order statistics at position `(n - 1) p`.
pub fn summarize(values: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Parameter("cannot summarize an empty draw set".into()));
    }
    if let Some(p) = grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Parameter(format!("probability {p} outside [0, 1]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(grid.iter().map(|&p| quantile_sorted(&v, p)).collect())
}

/// Factor variances `exp(h_it)`, draws x T x q.
pub fn factor_volatility_path(store: &DrawStore) -> DrawArray {
    let (t, q) = (store.n_times, store.dims.factors);
    let draws = (0..store.n_draws)
        .into_par_iter()
        .map(|d| {
            let mut v = vec![0.0; t * q];
            for i in 0..q {
                for (r, h) in store.factor_logvol(d, i).iter().enumerate() {
                    v[r * q + i] = h.exp();
                }
            }
            v
        })
        .collect();
    DrawArray::from_draws(t, q, draws)
}

/// Size of the shock to the first factor's innovation.
#[derive(Clone, Debug, PartialEq)]
pub enum ShockScale {
    /// Scale so the mean impact over the `equity` variables equals `target`
    /// (-10 for a ten percent decline in logged prices).
    EquityDecline { equity: Vec<usize>, target: f64 },
    /// A fixed innovation size.
    Fixed(f64),
    /// `multiple` factor standard deviations at estimation row
    /// `reference_time`.
    StdDev { reference_time: usize, multiple: f64 },
}

impl ShockScale {
    pub fn ten_percent_decline(equity: Vec<usize>) -> Self {
        ShockScale::EquityDecline { equity, target: -10.0 }
    }
}

/// Impulse responses plus the number of draws left out because their mean
/// equity loading was zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Irf {
    /// draws x (H + 1) x m.
    pub responses: DrawArray,
    pub excluded: usize,
}

/// Responses at horizons `0..=horizon` to the impact vector `impact`,
/// propagated through the companion form of `coeffs` (`m x K`, lags first).
pub fn propagate(coeffs: &DMatrix<f64>, lags: usize, impact: &DVector<f64>, horizon: usize) -> DMatrix<f64> {
    let m = impact.len();
    let companion = companion_from_coeffs(coeffs, m, lags);
    let mut state = DVector::zeros(m * lags);
    state.rows_mut(0, m).copy_from(impact);
    let mut out = DMatrix::zeros(horizon + 1, m);
    for h in 0..=horizon {
        if h > 0 {
            state = &companion * state;
        }
        out.row_mut(h).copy_from(&state.rows(0, m).transpose());
    }
    out
}

/// Innovation size `s` for draw `d`, or `None` when the draw must be
/// excluded.
fn shock_size(store: &DrawStore, d: usize, loadings: &DMatrix<f64>, scale: &ShockScale) -> Result<Option<f64>> {
    match scale {
        ShockScale::Fixed(s) => Ok(Some(*s)),
        ShockScale::StdDev { reference_time, multiple } => {
            let path = store.factor_logvol(d, 0);
            let h = path.get(*reference_time).ok_or(Error::Index {
                index: *reference_time,
                len: path.len(),
            })?;
            Ok(Some(multiple * (h / 2.0).exp()))
        }
        ShockScale::EquityDecline { equity, target } => {
            let mean = equity.iter().map(|&j| loadings[(j, 0)]).sum::<f64>() / equity.len() as f64;
            if mean.abs() < 1e-12 {
                Ok(None)
            } else {
                Ok(Some(target / mean))
            }
        }
    }
}

/// Responses of every variable to a one-time shock to the first factor,
/// transmitted on impact through the loadings and afterwards through the
/// VAR dynamics.
pub fn impulse_response(store: &DrawStore, horizon: usize, scale: &ShockScale) -> Result<Irf> {
    if horizon == 0 {
        return Err(Error::Parameter("horizon must be at least 1".into()));
    }
    let m = store.dims.m;
    if let ShockScale::EquityDecline { equity, .. } = scale {
        if equity.is_empty() {
            return Err(Error::Config("no equity variables configured for the ten percent rule".into()));
        }
        if let Some(&j) = equity.iter().find(|&&j| j >= m) {
            return Err(Error::Index { index: j, len: m });
        }
    }
    let per_draw: Vec<Option<Vec<f64>>> = (0..store.n_draws)
        .into_par_iter()
        .map(|d| {
            let loadings = store.loadings(d);
            let Some(s) = shock_size(store, d, &loadings, scale)? else {
                return Ok(None);
            };
            let impact = loadings.column(0) * s;
            let path = propagate(&store.coeffs(d), store.dims.lags, &impact, horizon);
            Ok(Some(path.transpose().iter().copied().collect()))
        })
        .collect::<Result<_>>()?;
    let excluded = per_draw.iter().filter(|d| d.is_none()).count();
    let draws = per_draw.into_iter().flatten().collect();
    Ok(Irf {
        responses: DrawArray::from_draws(horizon + 1, m, draws),
        excluded,
    })
}

/// One-step share `sum_i X_ji^2 h_it / (sum_i X_ji^2 h_it + omega_jt)`,
/// draws x T x m.
pub fn variance_shares(store: &DrawStore) -> DrawArray {
    let (t, m, q) = (store.n_times, store.dims.m, store.dims.factors);
    let draws = (0..store.n_draws)
        .into_par_iter()
        .map(|d| {
            let x = store.loadings(d);
            let mut v = vec![0.0; t * m];
            for j in 0..m {
                let omega = store.idio_logvol(d, j);
                for r in 0..t {
                    let common: f64 = (0..q).map(|i| x[(j, i)].powi(2) * store.factor_logvol(d, i)[r].exp()).sum();
                    v[r * m + j] = common / (common + omega[r].exp());
                }
            }
            v
        })
        .collect();
    DrawArray::from_draws(t, m, draws)
}

/// Extension: share of the `horizon`-step forecast error variance due to the
/// factors, with the covariance held at its value on row `t`. Horizon 1 is
/// the one-step share of [`variance_shares`]. Returns draws x 1 x m.
pub fn variance_shares_at_horizon(store: &DrawStore, t: usize, horizon: usize) -> Result<DrawArray> {
    if horizon == 0 {
        return Err(Error::Parameter("horizon must be at least 1".into()));
    }
    if t >= store.n_times {
        return Err(Error::Index {
            index: t,
            len: store.n_times,
        });
    }
    let (m, q, lags) = (store.dims.m, store.dims.factors, store.dims.lags);
    let draws = (0..store.n_draws)
        .into_par_iter()
        .map(|d| {
            let x = store.loadings(d);
            let h = DMatrix::from_fn(q, q, |a, b| if a == b { store.factor_logvol(d, a)[t].exp() } else { 0.0 });
            let common = &x * h * x.transpose();
            let omega = DMatrix::from_fn(m, m, |a, b| if a == b { store.idio_logvol(d, a)[t].exp() } else { 0.0 });
            let companion = companion_from_coeffs(&store.coeffs(d), m, lags);
            let mut power = DMatrix::identity(m * lags, m * lags);
            let mut num = DVector::zeros(m);
            let mut den = DVector::zeros(m);
            for s in 0..horizon {
                if s > 0 {
                    power = &companion * power;
                }
                let psi = power.view((0, 0), (m, m));
                let c = &psi * &common * psi.transpose();
                let o = &psi * &omega * psi.transpose();
                for j in 0..m {
                    num[j] += c[(j, j)];
                    den[j] += c[(j, j)] + o[(j, j)];
                }
            }
            num.component_div(&den).iter().copied().collect()
        })
        .collect();
    Ok(DrawArray::from_draws(1, m, draws))
}

/// Volatility path, responses and shares from one store.
#[derive(Clone, Debug, PartialEq)]
pub struct ShockAnalysis {
    pub irf: Irf,
    pub fevd: DrawArray,
    pub volatility_path: DrawArray,
}

impl ShockAnalysis {
    pub fn compute(store: &DrawStore, horizon: usize, scale: &ShockScale) -> Result<Self> {
        Ok(ShockAnalysis {
            irf: impulse_response(store, horizon, scale)?,
            fevd: variance_shares(store),
            volatility_path: factor_volatility_path(store),
        })
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use crate::gibbs::StoreMeta;
    use crate::model::ChainState;

    pub fn store_of(states: &[ChainState]) -> DrawStore {
        let s0 = &states[0];
        let meta = StoreMeta {
            seed: 0,
            burn_in: 0,
            keep: states.len(),
            thin: 1,
            wall_time_secs: 0.0,
        };
        let names = (0..s0.dims.m).map(|j| format!("y{j}")).collect();
        let mut store = DrawStore::new(meta, s0.dims, s0.n_times(), names, vec![Default::default(); s0.dims.m]);
        for s in states {
            store.push(s, 0.0);
        }
        store
    }
}

#[cfg(test)]
mod tests {
    use super::testing::store_of;
    use super::*;
    use crate::model::testing::{dims, random_state};
    use crate::model::ChainState;
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn state(m: usize, lags: usize, coeffs: &[f64], loadings: &[f64]) -> ChainState {
        let mut s = random_state(dims(m, lags, 1), 5, &mut seeded(1));
        s.coeffs = DMatrix::from_row_slice(m, m * lags, coeffs);
        s.loadings = DMatrix::from_column_slice(m, 1, loadings);
        s
    }

    #[test]
    fn zero_dynamics_respond_on_impact_only() {
        let store = store_of(&[state(2, 1, &[0.0; 4], &[1.0, 0.5])]);
        let irf = impulse_response(&store, 5, &ShockScale::ten_percent_decline(vec![0])).unwrap();
        assert_eq!(irf.excluded, 0);
        assert_abs_diff_eq!(irf.responses.get(0, 0, 0), -10.0, epsilon = 1e-10);
        assert_abs_diff_eq!(irf.responses.get(0, 0, 1), -5.0, epsilon = 1e-10);
        for h in 1..=5 {
            for j in 0..2 {
                assert_eq!(irf.responses.get(0, h, j), 0.0);
            }
        }
    }

    #[test]
    fn scalar_ar_decays_geometrically() {
        let store = store_of(&[state(1, 1, &[0.5], &[1.0])]);
        let irf = impulse_response(&store, 20, &ShockScale::ten_percent_decline(vec![0])).unwrap();
        for h in 0..=20 {
            assert_abs_diff_eq!(irf.responses.get(0, h, 0), -10.0 * 0.5f64.powi(h as i32), epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_equity_loading_is_excluded() {
        let store = store_of(&[
            state(2, 1, &[0.0; 4], &[1.0, 0.0]),
            state(2, 1, &[0.0; 4], &[1.0, 0.7]),
        ]);
        let irf = impulse_response(&store, 3, &ShockScale::ten_percent_decline(vec![1])).unwrap();
        assert_eq!(irf.excluded, 1);
        assert_eq!(irf.responses.n_draws, 1);
        assert_abs_diff_eq!(irf.responses.get(0, 0, 1), -10.0, epsilon = 1e-10);
    }

    #[test]
    fn empty_equity_set_is_a_config_error() {
        let store = store_of(&[state(1, 1, &[0.5], &[1.0])]);
        let err = impulse_response(&store, 3, &ShockScale::ten_percent_decline(vec![])).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(impulse_response(&store, 0, &ShockScale::Fixed(1.0)).is_err());
    }

    /// Direct simulation of `y_t = sum_p B_p y_{t-p}` with the impact
    /// injected at t = 0 and zero history.
    fn brute_force(s: &ChainState, impact: &DVector<f64>, horizon: usize) -> Vec<DVector<f64>> {
        let (m, lags) = (s.dims.m, s.dims.lags);
        let mut ys: Vec<DVector<f64>> = Vec::new();
        for t in 0..=horizon {
            let mut y = if t == 0 { impact.clone() } else { DVector::zeros(m) };
            for p in 1..=lags.min(t) {
                y += s.coeffs.columns((p - 1) * m, m) * &ys[t - p];
            }
            ys.push(y);
        }
        ys
    }

    #[test]
    fn matches_direct_recursion() {
        let mut rng = seeded(9);
        for lags in 1..=3 {
            let mut s = random_state(dims(4, lags, 1), 5, &mut rng);
            s.coeffs.iter_mut().for_each(|c| *c = rng.random_range(-0.3..0.3) / lags as f64);
            let store = store_of(&[s.clone()]);
            let irf = impulse_response(&store, 30, &ShockScale::Fixed(1.3)).unwrap();
            let oracle = brute_force(&s, &(s.loadings.column(0) * 1.3), 30);
            for (h, y) in oracle.iter().enumerate() {
                for j in 0..4 {
                    assert_abs_diff_eq!(irf.responses.get(0, h, j), y[j], epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn responses_decay_for_stable_draws() {
        let mut rng = seeded(3);
        let mut s = random_state(dims(3, 2, 1), 5, &mut rng);
        s.coeffs.iter_mut().for_each(|c| *c = rng.random_range(-0.4..0.4));
        while crate::model::spectral_radius(&s) > 0.9 {
            s.coeffs *= 0.9;
        }
        let irf = impulse_response(&store_of(&[s]), 200, &ShockScale::Fixed(1.0)).unwrap();
        let norm = |h: usize| (0..3).map(|j| irf.responses.get(0, h, j).powi(2)).sum::<f64>().sqrt();
        assert!(norm(200) < 0.01 * norm(0));
    }

    #[test]
    fn std_dev_shock_uses_reference_volatility() {
        let mut s = state(1, 1, &[0.0], &[1.0]);
        s.factor_sv[0].logvol = vec![0.0, 2.0f64.ln() * 2.0, 0.0, 0.0, 0.0];
        let irf = impulse_response(
            &store_of(&[s]),
            1,
            &ShockScale::StdDev {
                reference_time: 1,
                multiple: 1.5,
            },
        )
        .unwrap();
        assert_abs_diff_eq!(irf.responses.get(0, 0, 0), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn shares_at_the_corners() {
        let mut s = state(2, 1, &[0.0; 4], &[1.0, 0.0]);
        for sv in s.factor_sv.iter_mut().chain(s.idio_sv.iter_mut()) {
            sv.logvol = vec![0.3; 5];
        }
        let fevd = variance_shares(&store_of(&[s]));
        for r in 0..5 {
            assert_eq!(fevd.get(0, r, 1), 0.0);
            assert_abs_diff_eq!(fevd.get(0, r, 0), 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn horizon_one_share_equals_innovation_share() {
        let mut rng = seeded(4);
        let mut s = random_state(dims(3, 2, 1), 6, &mut rng);
        s.coeffs *= 0.2;
        let store = store_of(&[s]);
        let one = variance_shares(&store);
        let h1 = variance_shares_at_horizon(&store, 2, 1).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(h1.get(0, 0, j), one.get(0, 2, j), epsilon = 1e-12);
        }
        let h8 = variance_shares_at_horizon(&store, 2, 8).unwrap();
        assert!(h8.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn constant_draws_have_equal_quantiles() {
        let q = summarize(&[2.5; 17], &DEFAULT_GRID).unwrap();
        assert!(q.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn median_of_one_to_hundred() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(summarize(&v, &[0.5]).unwrap(), vec![50.5]);
        assert!(summarize(&[], &[0.5]).is_err());
        assert!(summarize(&v, &[1.5]).is_err());
    }

    #[test]
    fn gaussian_quantiles_within_three_standard_errors() {
        use rand_distr::StandardNormal;
        use statrs::distribution::{Continuous, ContinuousCDF, Normal};
        let n = 200_000;
        let mut rng = seeded(5);
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let q = summarize(&v, &DEFAULT_GRID).unwrap();
        let normal = Normal::new(0.0, 1.0).unwrap();
        for (p, got) in DEFAULT_GRID.iter().zip(q) {
            let x = normal.inverse_cdf(*p);
            let se = (p * (1.0 - p) / n as f64).sqrt() / normal.pdf(x);
            assert!((got - x).abs() < 3.0 * se, "p={p}: {got} vs {x}");
        }
    }

    #[test]
    fn labels_and_header() {
        assert_eq!(grid_label(0.05), "p05");
        assert_eq!(grid_label(0.5), "p50");
        assert_eq!(grid_label(0.025), "p2.5");
        let arr = DrawArray::from_draws(2, 1, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let table = arr.summarize(&["a".to_string()], &DEFAULT_GRID).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "variable,time_or_horizon,p05,p16,p50,p84,p95");
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().starts_with("a,0,1.1,"));
    }

    proptest! {
        #[test]
        fn scaling_is_linear_and_normalized(seed in 0u64..500, factor in 0.1f64..5.0) {
            let mut rng = seeded(seed);
            let mut s = random_state(dims(4, 2, 1), 5, &mut rng);
            s.coeffs *= 0.3;
            let store = store_of(&[s]);
            let a = impulse_response(&store, 6, &ShockScale::Fixed(1.0)).unwrap();
            let b = impulse_response(&store, 6, &ShockScale::Fixed(factor)).unwrap();
            for (x, y) in a.responses.values.iter().zip(&b.responses.values) {
                prop_assert!((y - factor * x).abs() <= 1e-12 * (1.0 + y.abs()));
            }
            let equity = vec![1, 3];
            let c = impulse_response(&store, 6, &ShockScale::ten_percent_decline(equity.clone())).unwrap();
            if c.excluded == 0 {
                let mean = equity.iter().map(|&j| c.responses.get(0, 0, j)).sum::<f64>() / 2.0;
                prop_assert!((mean + 10.0).abs() < 1e-10);
            }
        }

        #[test]
        fn shares_are_bounded_and_bands_nested(seed in 0u64..200) {
            let mut rng = seeded(seed);
            let states: Vec<_> = (0..20).map(|_| random_state(dims(3, 1, 1), 8, &mut rng)).collect();
            let store = store_of(&states);
            let fevd = variance_shares(&store);
            prop_assert!(fevd.values.iter().all(|v| (0.0..=1.0).contains(v)));
            let names: Vec<String> = (0..3).map(|j| j.to_string()).collect();
            for row in fevd.summarize(&names, &DEFAULT_GRID).unwrap().rows {
                prop_assert!(row.quantiles.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }
}
