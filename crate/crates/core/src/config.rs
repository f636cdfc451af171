//! Run configuration: one TOML file with the sections `data`, `transforms`,
//! `groups`, `model`, `priors`, `mcmc` and `analysis`. Every key is optional
//! and falls back to the defaults below.
//!
//! ```toml
//! [data]
//! path = "panel.csv"
//! exogenous = ["oil"]
//!
//! [transforms]
//! default = "none"
//! log_scale = 100.0
//! [transforms.series]
//! stoxx_de = "log_diff"
//!
//! [groups.stoxx_de]
//! country = "DE"
//! kind = "equity"
//!
//! [model]
//! lags = 2
//! factors = 1
//!
//! [mcmc]
//! burn_in = 10000
//! keep = 5000
//! seed = 42
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::{ShockScale, DEFAULT_GRID};
use crate::error::{Error, Result};
use crate::model::{default_kappa, Group, McmcSettings, ModelSpec};
use crate::shrinkage::GlobalRule;
use crate::stochvol::SvPrior;

/// Per-series transform applied at ingestion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    None,
    Log,
    Diff,
    LogDiff,
}

impl Transform {
    pub fn is_log(self) -> bool {
        matches!(self, Transform::Log | Transform::LogDiff)
    }

    pub fn differences(self) -> bool {
        matches!(self, Transform::Diff | Transform::LogDiff)
    }
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Transform::None),
            "log" => Ok(Transform::Log),
            "diff" => Ok(Transform::Diff),
            "log_diff" => Ok(Transform::LogDiff),
            _ => Err(Error::Config(format!(
                "unknown transform {s:?} (expected none, log, diff or log_diff)"
            ))),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transform::None => "none",
            Transform::Log => "log",
            Transform::Diff => "diff",
            Transform::LogDiff => "log_diff",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<String>,
    /// Columns used as exogenous regressors rather than modelled series.
    pub exogenous: Vec<String>,
    /// Flag only; the data are expected to be seasonally adjusted already.
    pub seasonally_adjusted: bool,
    /// On by default; `standardize` also divides by the sample deviation.
    pub demean: bool,
    pub standardize: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            path: None,
            exogenous: Vec::new(),
            seasonally_adjusted: false,
            demean: true,
            standardize: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformSection {
    pub default: Transform,
    /// Multiplier applied after a log transform; 100 gives percent.
    pub log_scale: f64,
    pub series: BTreeMap<String, Transform>,
}

impl Default for TransformSection {
    fn default() -> Self {
        TransformSection {
            default: Transform::None,
            log_scale: 100.0,
            series: BTreeMap::new(),
        }
    }
}

impl TransformSection {
    pub fn of(&self, name: &str) -> Transform {
        self.series.get(name).copied().unwrap_or(self.default)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub lags: usize,
    pub factors: usize,
    pub intercept: bool,
    pub global_rule: GlobalRule,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            lags: 2,
            factors: 1,
            intercept: false,
            global_rule: GlobalRule::default(),
        }
    }
}

/// Prior hyperparameters. Per-lag vectors left empty are filled from the
/// lag order when the config is canonicalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub kappa: Vec<f64>,
    pub lambda_shape: Vec<f64>,
    pub lambda_rate: Vec<f64>,
    pub loading_variance: f64,
    pub sv: SvPrior,
}

impl Default for PriorSection {
    fn default() -> Self {
        PriorSection {
            kappa: Vec::new(),
            lambda_shape: Vec::new(),
            lambda_rate: Vec::new(),
            loading_variance: 10.0,
            sv: SvPrior::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSection {
    pub burn_in: usize,
    pub keep: usize,
    pub thin: usize,
    pub seed: u64,
    /// 0 lets the thread pool pick.
    pub threads: usize,
}

impl Default for McmcSection {
    fn default() -> Self {
        let m = McmcSettings::default();
        McmcSection {
            burn_in: m.burn_in,
            keep: m.keep,
            thin: m.thin,
            seed: m.seed,
            threads: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShockRule {
    /// Scale so equity variables fall by `shock_target` on average.
    #[default]
    EquityDecline,
    /// Innovation of size `shock_size`.
    Fixed,
    /// `shock_size` factor standard deviations at `reference_time`.
    StdDev,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub horizon: usize,
    pub quantiles: Vec<f64>,
    /// Group kind that marks equity variables.
    pub equity_kind: String,
    pub shock: ShockRule,
    pub shock_target: f64,
    pub shock_size: f64,
    pub reference_time: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            horizon: 36,
            quantiles: DEFAULT_GRID.to_vec(),
            equity_kind: "equity".into(),
            shock: ShockRule::EquityDecline,
            shock_target: -10.0,
            shock_size: 1.0,
            reference_time: 0,
        }
    }
}

impl AnalysisSection {
    /// Shock rule for a panel whose groups are `groups`.
    pub fn shock_scale(&self, groups: &[Group]) -> ShockScale {
        match self.shock {
            ShockRule::EquityDecline => ShockScale::EquityDecline {
                equity: groups
                    .iter()
                    .enumerate()
                    .filter(|(_, g)| g.kind == self.equity_kind)
                    .map(|(j, _)| j)
                    .collect(),
                target: self.shock_target,
            },
            ShockRule::Fixed => ShockScale::Fixed(self.shock_size),
            ShockRule::StdDev => ShockScale::StdDev {
                reference_time: self.reference_time,
                multiple: self.shock_size,
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataSection,
    pub transforms: TransformSection,
    pub groups: BTreeMap<String, Group>,
    pub model: ModelSection,
    pub priors: PriorSection,
    pub mcmc: McmcSection,
    pub analysis: AnalysisSection,
}

impl Config {
    /// Parses and canonicalizes.
    pub fn parse(text: &str) -> Result<Self> {
        let raw: Config = toml::from_str(text).map_err(|e| Error::Config(e.message().replace('\n', " ")))?;
        raw.canonicalize()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Fills lag-dependent defaults and validates.
    pub fn canonicalize(mut self) -> Result<Self> {
        let lags = self.model.lags;
        let fill = |v: &mut Vec<f64>, default: &dyn Fn() -> Vec<f64>, what: &str| -> Result<()> {
            if v.is_empty() {
                *v = default();
            } else if v.len() == 1 && lags > 1 {
                *v = vec![v[0]; lags];
            } else if v.len() != lags {
                return Err(Error::Config(format!("priors.{what} has {} entries for {lags} lags", v.len())));
            }
            Ok(())
        };
        fill(&mut self.priors.kappa, &|| default_kappa(lags), "kappa")?;
        fill(&mut self.priors.lambda_shape, &|| vec![3.0; lags], "lambda_shape")?;
        fill(&mut self.priors.lambda_rate, &|| vec![0.03; lags], "lambda_rate")?;
        if self.analysis.quantiles.is_empty() {
            self.analysis.quantiles = DEFAULT_GRID.to_vec();
        }
        if self.analysis.quantiles.windows(2).any(|w| w[0] >= w[1])
            || self.analysis.quantiles.iter().any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::Config("analysis.quantiles must increase within [0, 1]".into()));
        }
        if !(self.transforms.log_scale > 0.0 && self.transforms.log_scale.is_finite()) {
            return Err(Error::Config("transforms.log_scale must be positive".into()));
        }
        self.model_spec().map_err(|e| Error::Config(e.to_string()))?;
        Ok(self)
    }

    /// Canonical TOML text; parsing it gives back an equal config.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let lags = self.model.lags;
        let mut spec = ModelSpec::new(lags);
        spec.factors = self.model.factors;
        spec.include_intercept = self.model.intercept;
        spec.global_rule = self.model.global_rule;
        spec.kappa = self.priors.kappa.clone();
        spec.lambda_prior = self
            .priors
            .lambda_shape
            .iter()
            .copied()
            .zip(self.priors.lambda_rate.iter().copied())
            .collect();
        spec.loading_prior_variance = self.priors.loading_variance;
        spec.sv_prior = self.priors.sv.clone();
        spec.mcmc = McmcSettings {
            burn_in: self.mcmc.burn_in,
            keep: self.mcmc.keep,
            thin: self.mcmc.thin,
            seed: self.mcmc.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Group tags for the given series, defaulting to empty tags.
    pub fn groups_for(&self, names: &[String]) -> Vec<Group> {
        names
            .iter()
            .map(|n| self.groups.get(n).cloned().unwrap_or_default())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[data]
path = "panel.csv"
exogenous = ["oil"]
standardize = true

[transforms]
default = "log_diff"
[transforms.series]
rate_de = "none"

[groups.stoxx_de]
country = "DE"
kind = "equity"

[model]
lags = 3

[priors]
lambda_rate = [0.05]

[mcmc]
seed = 42
"#;

    #[test]
    fn defaults_fill_in() {
        let c = Config::parse("").unwrap();
        let spec = c.model_spec().unwrap();
        assert_eq!(spec, {
            let mut s = ModelSpec::new(2);
            s.mcmc.seed = 1;
            s
        });
        assert_eq!(c.analysis.horizon, 36);
    }

    #[test]
    fn sample_parses() {
        let c = Config::parse(SAMPLE).unwrap();
        assert_eq!(c.transforms.of("rate_de"), Transform::None);
        assert_eq!(c.transforms.of("ip_de"), Transform::LogDiff);
        assert_eq!(c.priors.lambda_rate, vec![0.05; 3]);
        assert_eq!(c.priors.kappa.len(), 3);
        assert_eq!(c.groups["stoxx_de"].kind, "equity");
        let spec = c.model_spec().unwrap();
        assert_eq!(spec.lambda_prior[2], (3.0, 0.05));
        assert_eq!(spec.mcmc.seed, 42);
    }

    #[test]
    fn canonical_form_round_trips() {
        let c = Config::parse(SAMPLE).unwrap();
        let text = c.to_toml().unwrap();
        let again = Config::parse(&text).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_toml().unwrap(), text);
    }

    #[test]
    fn bad_input_is_a_config_error() {
        for text in [
            "[transforms]\ndefault = \"sqrt\"",
            "[model]\nlags = 0",
            "[model]\nbogus = 1",
            "[priors]\nkappa = [0.1, 0.2]\n[model]\nlags = 3",
            "[analysis]\nquantiles = [0.5, 0.1]",
            "[mcmc]\nthin = 0",
        ] {
            let err = Config::parse(text).unwrap_err();
            assert_eq!(err.code(), "config", "{text}");
        }
    }

    #[test]
    fn transform_names() {
        for t in [Transform::None, Transform::Log, Transform::Diff, Transform::LogDiff] {
            assert_eq!(t.to_string().parse::<Transform>().unwrap(), t);
        }
        assert!("seasonal".parse::<Transform>().is_err());
    }

    #[test]
    fn equity_set_comes_from_groups() {
        let c = Config::parse(SAMPLE).unwrap();
        let names: Vec<String> = ["ip_de", "stoxx_de"].iter().map(|s| s.to_string()).collect();
        let scale = c.analysis.shock_scale(&c.groups_for(&names));
        assert_eq!(scale, ShockScale::ten_percent_decline(vec![1]));
    }
}
