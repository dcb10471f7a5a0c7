//! Run configuration read from flat `key=value` files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are dotted,
//! e.g. `channel.path_loss_exponent=3.5`. Lists are comma separated. Unknown
//! or repeated keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::behavior::{Category, UserProfile, WillingRule};
use crate::classifier::{ClassifierKind, ClassifierSettings};
use crate::error::{Error, Result};
use crate::selection::SelectionConfig;
use crate::spatial::ScenarioConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// `scenario.profile_weights` is aligned with `profiles`.
    pub scenario: ScenarioConfig,
    pub profiles: Vec<UserProfile>,
    pub n_samples: usize,
    pub classifier: ClassifierSettings<f64>,
    pub train_kinds: Vec<ClassifierKind>,
    pub selection: SelectionConfig<f64>,
    pub rounds: usize,
    pub evaluate_user_counts: Vec<usize>,
    pub evaluate_kinds: Vec<ClassifierKind>,
    pub test_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let noise = 0.05;
        let third = 1.0 / 3.0;
        Self {
            seed: 0,
            out_dir: None,
            scenario: ScenarioConfig {
                profile_weights: vec![third; 3],
                ..ScenarioConfig::default()
            },
            profiles: UserProfile::reference_set(noise),
            n_samples: 2000,
            classifier: ClassifierSettings::default(),
            train_kinds: vec![ClassifierKind::Mlp],
            selection: SelectionConfig::default(),
            rounds: 200,
            evaluate_user_counts: vec![10, 15, 20, 25, 30],
            evaluate_kinds: vec![ClassifierKind::Mlp, ClassifierKind::Svm],
            test_fraction: 0.3,
        }
    }
}

fn parse_value<V: FromStr>(key: &str, raw: &str) -> Result<V> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{raw}`")))
}

fn parse_list<V: FromStr>(key: &str, raw: &str) -> Result<Vec<V>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected a boolean, got `{other}`"))),
    }
}

#[derive(Default)]
struct CustomProfile {
    weight: Option<f64>,
    battery_min: Option<f64>,
    unwilling_zones: Vec<u8>,
    willing_days: Option<Vec<u8>>,
    incentive_min: Option<f64>,
    label_noise: Option<f64>,
}

/// Splits the file into an ordered key map.
fn read_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut pairs = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        if pairs.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {key}", lineno + 1)));
        }
    }
    Ok(pairs)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut weights = [1.0 / 3.0; 3];
        let mut noise = 0.05;
        let mut hidden = None;
        let mut kind_set = false;
        let mut train_kinds = None;
        let mut customs: BTreeMap<String, CustomProfile> = BTreeMap::new();

        for (key, v) in read_pairs(text)? {
            let k = key.as_str();
            let v = v.as_str();
            let sc = &mut cfg.scenario;
            let rp = &mut cfg.classifier.rprop;
            let smo = &mut cfg.classifier.smo;
            let sel = &mut cfg.selection;
            match k {
                "seed" => cfg.seed = parse_value(k, v)?,
                "out" => cfg.out_dir = Some(PathBuf::from(v)),
                "scenario.width" => sc.width = parse_value(k, v)?,
                "scenario.height" => sc.height = parse_value(k, v)?,
                "scenario.single_cell" => sc.single_cell = parse_bool(k, v)?,
                "scenario.enb_intensity" => sc.enb_intensity = parse_value(k, v)?,
                "scenario.su_intensity" => sc.su_intensity = parse_value(k, v)?,
                "scenario.inactive_intensity" => sc.inactive_intensity = parse_value(k, v)?,
                "scenario.n_sus" => sc.n_sus = Some(parse_value(k, v)?),
                "scenario.n_inactive" => sc.n_inactive = Some(parse_value(k, v)?),
                "profiles.hh" => weights[0] = parse_value(k, v)?,
                "profiles.ou" => weights[1] = parse_value(k, v)?,
                "profiles.st" => weights[2] = parse_value(k, v)?,
                "profiles.label_noise" => noise = parse_value(k, v)?,
                "data.n_samples" => cfg.n_samples = parse_value(k, v)?,
                "classifier.kind" => {
                    cfg.classifier.kind = parse_value(k, v)?;
                    kind_set = true;
                }
                "train.classifiers" => train_kinds = Some(parse_list(k, v)?),
                "mlp.hidden" => hidden = Some(parse_value::<usize>(k, v)?),
                "mlp.eta_plus" => rp.eta_plus = parse_value(k, v)?,
                "mlp.eta_minus" => rp.eta_minus = parse_value(k, v)?,
                "mlp.delta_init" => rp.delta_init = parse_value(k, v)?,
                "mlp.delta_min" => rp.delta_min = parse_value(k, v)?,
                "mlp.delta_max" => rp.delta_max = parse_value(k, v)?,
                "mlp.mse_threshold" => rp.mse_threshold = parse_value(k, v)?,
                "mlp.max_epochs" => rp.max_epochs = parse_value(k, v)?,
                "svm.c_grid" => cfg.classifier.grid.c_grid = parse_list(k, v)?,
                "svm.gamma_grid" => cfg.classifier.grid.gamma_grid = parse_list(k, v)?,
                "svm.folds" => cfg.classifier.grid.folds = parse_value(k, v)?,
                "svm.kkt_tolerance" => smo.kkt_tolerance = parse_value(k, v)?,
                "svm.max_passes" => smo.max_passes = parse_value(k, v)?,
                "channel.path_loss_exponent" => sel.link.path_loss_exponent = parse_value(k, v)?,
                "channel.reference_snr_db" => sel.link.reference_snr_db = parse_value(k, v)?,
                "channel.fading" => sel.link.fading = parse_bool(k, v)?,
                "selection.n_rx_antennas" => sel.n_rx_antennas = parse_value(k, v)?,
                "selection.probe_seq_len" => sel.probe_seq_len = parse_value(k, v)?,
                "selection.ber_threshold" => sel.ber_threshold = parse_value(k, v)?,
                "timing.t_poll" => sel.timing.t_poll_per_user = parse_value(k, v)?,
                "timing.t_predict" => sel.timing.t_predict_per_user = parse_value(k, v)?,
                "timing.t_fixed" => sel.timing.t_fixed = parse_value(k, v)?,
                "simulate.rounds" => cfg.rounds = parse_value(k, v)?,
                "evaluate.user_counts" => cfg.evaluate_user_counts = parse_list(k, v)?,
                "evaluate.classifiers" => cfg.evaluate_kinds = parse_list(k, v)?,
                "evaluate.test_fraction" => cfg.test_fraction = parse_value(k, v)?,
                _ => {
                    let Some(rest) = k.strip_prefix("profiles.custom.") else {
                        return Err(Error::Config(format!("unknown key {k}")));
                    };
                    let (name, field) = rest
                        .rsplit_once('.')
                        .ok_or_else(|| Error::Config(format!("malformed custom profile key {k}")))?;
                    let c = customs.entry(name.to_string()).or_default();
                    match field {
                        "weight" => c.weight = Some(parse_value(k, v)?),
                        "battery_min" => c.battery_min = Some(parse_value(k, v)?),
                        "unwilling_zones" => c.unwilling_zones = parse_list(k, v)?,
                        "willing_days" => c.willing_days = Some(parse_list(k, v)?),
                        "incentive_min" => c.incentive_min = Some(parse_value(k, v)?),
                        "label_noise" => c.label_noise = Some(parse_value(k, v)?),
                        _ => return Err(Error::Config(format!("unknown key {k}"))),
                    }
                }
            }
        }

        if let Some(h) = hidden {
            cfg.classifier.layer_sizes = vec![cfg.classifier.layer_sizes[0], h, 2];
        }
        cfg.train_kinds = match train_kinds {
            Some(kinds) => kinds,
            None if kind_set => vec![cfg.classifier.kind],
            None => cfg.train_kinds,
        };

        cfg.profiles = UserProfile::reference_set(noise);
        let mut all_weights = weights.to_vec();
        for (name, c) in customs {
            let missing = |f: &str| Error::Config(format!("custom profile {name} needs {f}"));
            let rule = WillingRule::new(
                c.battery_min.ok_or_else(|| missing("battery_min"))?,
                c.unwilling_zones,
                c.willing_days.ok_or_else(|| missing("willing_days"))?,
                c.incentive_min.ok_or_else(|| missing("incentive_min"))?,
            );
            let profile = UserProfile {
                name: name.clone(),
                category: Category::Custom,
                rules: vec![rule],
                label_noise: c.label_noise.unwrap_or(noise),
            };
            cfg.profiles.push(profile);
            all_weights.push(c.weight.ok_or_else(|| missing("weight"))?);
        }
        cfg.scenario.profile_weights = all_weights;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.scenario.profile_weights;
        if w.len() != self.profiles.len() {
            return Err(Error::Config("profile weights and profiles differ in length".into()));
        }
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Config("profile weights must be non-negative".into()));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("profile weights sum to {sum}, expected 1")));
        }
        for p in &self.profiles {
            p.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.n_samples == 0 {
            return Err(Error::Config("data.n_samples must be positive".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("simulate.rounds must be positive".into()));
        }
        if self.train_kinds.is_empty() || self.evaluate_kinds.is_empty() {
            return Err(Error::Config("classifier lists must not be empty".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("evaluate.test_fraction must lie in (0, 1)".into()));
        }
        if self.evaluate_user_counts.is_empty() || self.evaluate_user_counts.contains(&0) {
            return Err(Error::Config("evaluate.user_counts must be positive".into()));
        }
        if !(self.scenario.width > 0.0 && self.scenario.height > 0.0) {
            return Err(Error::Config("scenario dimensions must be positive".into()));
        }
        self.classifier.validate().map_err(as_config)?;
        self.selection.validate().map_err(as_config)
    }

    /// Profiles with a non-zero weight, in declaration order.
    pub fn weighted_profiles(&self) -> Vec<UserProfile> {
        self.profiles
            .iter()
            .zip(&self.scenario.profile_weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(p, _)| p.clone())
            .collect()
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_file() {
        let cfg = RunConfig::parse("# nothing\n\n").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn keys_override_defaults() {
        let cfg = RunConfig::parse(
            "seed = 9\nscenario.n_inactive=50\nscenario.n_sus=1\nclassifier.kind=svm\n\
             svm.c_grid=1,4\ntiming.t_fixed=30\nchannel.fading=false\nmlp.hidden=6\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.scenario.n_inactive, Some(50));
        assert_eq!(cfg.classifier.kind, ClassifierKind::Svm);
        assert_eq!(cfg.train_kinds, vec![ClassifierKind::Svm]);
        assert_eq!(cfg.classifier.grid.c_grid, vec![1.0, 4.0]);
        assert_eq!(cfg.selection.timing.t_fixed, 30.0);
        assert!(!cfg.selection.link.fading);
        assert_eq!(cfg.classifier.layer_sizes, vec![19, 6, 2]);
    }

    #[test]
    fn custom_profiles_join_the_mix() {
        let cfg = RunConfig::parse(
            "profiles.hh=0.25\nprofiles.ou=0.25\nprofiles.st=0.25\n\
             profiles.custom.night.weight=0.25\nprofiles.custom.night.battery_min=0.2\n\
             profiles.custom.night.unwilling_zones=1,2\nprofiles.custom.night.willing_days=1,2,3\n\
             profiles.custom.night.incentive_min=0.1\n",
        )
        .unwrap();
        assert_eq!(cfg.profiles.len(), 4);
        assert_eq!(cfg.profiles[3].name, "night");
        assert_eq!(cfg.scenario.profile_weights, vec![0.25; 4]);
    }

    #[test]
    fn bad_input_is_a_config_error() {
        for text in [
            "nonsense",
            "unknown.key=1",
            "seed=1\nseed=2",
            "seed=abc",
            "profiles.hh=0.5",
            "selection.n_rx_antennas=0",
            "classifier.kind=tree",
            "profiles.custom.x.weight=0",
            "svm.folds=1",
        ] {
            let err = RunConfig::parse(text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
            assert_eq!(err.exit_code(), 2);
        }
    }
}
