//! Relay selection rounds: VAA filtering, willingness prediction, probing
//! and BER ranking, plus the discovery-time model.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{decide_willingness, generate_dataset, Label, UserProfile, WillingnessContext};
use crate::channel::{rank_relays, LinkParams, PathQuality, MIN_PROBE_BITS};
use crate::classifier::{train_user_model, ClassifierSettings, UserModel};
use crate::error::{Error, Result};
use crate::metrics::ConfusionCounts;
use crate::rng::{substream, Domain};
use crate::scalar::Real;
use crate::spatial::{filter_vaa_members, Scenario};
use crate::text::sig6;

/// Discovery-time constants in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TimingModel<T> {
    pub t_poll_per_user: T,
    pub t_predict_per_user: T,
    pub t_fixed: T,
}

impl<T: Real> Default for TimingModel<T> {
    fn default() -> Self {
        Self {
            t_poll_per_user: T::lit(10.0),
            t_predict_per_user: T::lit(0.1),
            t_fixed: T::lit(20.0),
        }
    }
}

impl<T: Real> TimingModel<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t_poll_per_user", self.t_poll_per_user),
            ("t_predict_per_user", self.t_predict_per_user),
            ("t_fixed", self.t_fixed),
        ] {
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SelectionConfig<T> {
    /// Receive antennas at the eNodeB; at most `N - 1` relays are chosen.
    pub n_rx_antennas: usize,
    pub probe_seq_len: usize,
    pub ber_threshold: T,
    pub timing: TimingModel<T>,
    pub link: LinkParams<T>,
}

impl<T: Real> Default for SelectionConfig<T> {
    fn default() -> Self {
        Self {
            n_rx_antennas: 4,
            probe_seq_len: 10_000,
            ber_threshold: T::lit(1e-2),
            timing: TimingModel::default(),
            link: LinkParams::default(),
        }
    }
}

impl<T: Real> SelectionConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n_rx_antennas == 0 {
            return Err(Error::Config("n_rx_antennas must be at least 1".into()));
        }
        if self.probe_seq_len < MIN_PROBE_BITS {
            return Err(Error::Config(format!("probe_seq_len must be at least {MIN_PROBE_BITS}")));
        }
        if !(self.ber_threshold >= T::zero() && self.ber_threshold <= T::lit(0.5)) {
            return Err(Error::Config("ber_threshold must lie in [0, 0.5]".into()));
        }
        self.timing.validate()?;
        self.link.validate()
    }

    pub fn max_relays(&self) -> usize {
        self.n_rx_antennas - 1
    }
}

/// Context fields shared by every user in a round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundContext {
    pub time_zone: u8,
    pub day: u8,
    pub incentive: f64,
}

impl RoundContext {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            time_zone: rng.random_range(1..=10),
            day: rng.random_range(1..=7),
            incentive: rng.random(),
        }
    }

    pub fn with_battery(&self, battery: f64) -> WillingnessContext {
        WillingnessContext {
            battery,
            time_zone: self.time_zone,
            day: self.day,
            incentive: self.incentive,
        }
    }
}

/// A VAA member as seen in one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub user: usize,
    pub context: WillingnessContext,
    pub willing: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SelectionResult<T> {
    pub round: usize,
    pub su_id: usize,
    pub context: RoundContext,
    pub vaa_members: Vec<usize>,
    pub predicted_willing: Vec<usize>,
    pub actually_willing: Vec<usize>,
    pub probed: Vec<usize>,
    /// Every path that answered the probe, in ascending relay id.
    pub paths: Vec<PathQuality<T>>,
    /// Chosen relays, best first.
    pub selected_relays: Vec<PathQuality<T>>,
    pub time_with_prediction: T,
    pub time_without_prediction: T,
    pub confusion: ConfusionCounts,
    pub fallback_direct: bool,
}

impl<T: Real> SelectionResult<T> {
    pub fn selected_ids(&self) -> Vec<usize> {
        self.selected_relays.iter().map(|p| p.relay_id).collect()
    }

    /// Checks the containment chain, the relay budget, the BER bound and the
    /// fallback flag.
    pub fn check_invariants(&self, max_relays: usize, ber_threshold: T) -> Result<()> {
        let set = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
        let selected = set(&self.selected_ids());
        let probed = set(&self.probed);
        let predicted = set(&self.predicted_willing);
        let vaa = set(&self.vaa_members);
        let fail = |what: &str| Err(Error::Invariant(format!("round {} SU {}: {what}", self.round, self.su_id)));
        if !selected.is_subset(&probed) {
            return fail("selected relays outside the probed set");
        }
        if !probed.is_subset(&predicted) {
            return fail("probed users outside the predicted set");
        }
        if !predicted.is_subset(&vaa) {
            return fail("predicted users outside the VAA cell");
        }
        if selected.len() > max_relays {
            return fail("too many relays");
        }
        if self.selected_relays.iter().any(|p| p.ber > ber_threshold) {
            return fail("selected relay above the BER threshold");
        }
        if self.fallback_direct != selected.is_empty() {
            return fail("fallback flag disagrees with the relay set");
        }
        if self.confusion.total() != vaa.len() {
            return fail("confusion counts do not cover the VAA cell");
        }
        Ok(())
    }
}

/// Predicted-willing users among `candidates`, with confusion counts against
/// their ground truth.
pub fn predict_willing<T: Real>(
    models: &BTreeMap<usize, UserModel<T>>,
    candidates: &[Candidate],
) -> Result<(Vec<usize>, ConfusionCounts)> {
    let mut predicted = Vec::new();
    let mut confusion = ConfusionCounts::default();
    for c in candidates {
        let model = models.get(&c.user).ok_or(Error::MissingModel(c.user))?;
        let label = model.predict(&c.context)?;
        confusion.record(label, c.willing);
        if label == Label::Willing {
            predicted.push(c.user);
        }
    }
    Ok((predicted, confusion))
}

/// Modeled eNodeB wait. Without prediction every one of `n_candidates` is
/// polled; with prediction each candidate is classified and only the
/// `n_predicted` positives are polled.
pub fn discovery_time<T: Real>(
    n_candidates: usize,
    n_predicted: usize,
    timing: &TimingModel<T>,
    with_prediction: bool,
) -> T {
    let count = |n: usize| T::lit(n as f64);
    if with_prediction {
        timing.t_fixed + timing.t_predict_per_user * count(n_candidates) + timing.t_poll_per_user * count(n_predicted)
    } else {
        timing.t_fixed + timing.t_poll_per_user * count(n_candidates)
    }
}

/// One full selection round for `su_id`.
///
/// Draws from `rng` in a fixed order: the shared context, then battery and
/// ground truth per VAA member in ascending id, then both hops and the probe
/// for each responding relay in ascending id.
pub fn run_selection<T: Real, R: Rng + ?Sized>(
    scenario: &Scenario<T>,
    su_id: usize,
    profiles: &[UserProfile],
    models: &BTreeMap<usize, UserModel<T>>,
    config: &SelectionConfig<T>,
    round: usize,
    rng: &mut R,
) -> Result<SelectionResult<T>> {
    config.validate()?;
    let su = scenario.su(su_id)?;
    let enb = scenario.serving_enb(su_id)?;
    let vaa_members = filter_vaa_members(scenario, su_id)?;

    let context = RoundContext::random(rng);
    let mut candidates = Vec::with_capacity(vaa_members.len());
    for &user in &vaa_members {
        let info = scenario
            .inactive_user(user)
            .ok_or_else(|| Error::Invariant(format!("VAA member {user} is not an inactive user")))?;
        let profile = profiles
            .get(info.profile_id)
            .ok_or_else(|| Error::Config(format!("user {user} has unknown profile {}", info.profile_id)))?;
        let ctx = context.with_battery(rng.random());
        let willing = decide_willingness(profile, &ctx, rng);
        candidates.push(Candidate { user, context: ctx, willing });
    }
    let actually_willing: Vec<usize> =
        candidates.iter().filter(|c| c.willing == Label::Willing).map(|c| c.user).collect();

    let (predicted_willing, confusion) = predict_willing(models, &candidates)?;

    // Unwilling users silently drop the probe.
    let mut paths = Vec::new();
    for c in candidates.iter().filter(|c| c.willing == Label::Willing) {
        if predicted_willing.binary_search(&c.user).is_err() {
            continue;
        }
        let relay = scenario.inactive_user(c.user).expect("checked above");
        paths.push(PathQuality::measure(
            c.user,
            su.pos.distance(&relay.pos),
            relay.pos.distance(&enb.pos),
            &config.link,
            config.probe_seq_len,
            rng,
        )?);
    }
    let probed: Vec<usize> = paths.iter().map(|p| p.relay_id).collect();
    let ranked = rank_relays(&paths, config.max_relays(), config.ber_threshold);
    let selected_relays: Vec<PathQuality<T>> = ranked
        .iter()
        .map(|id| paths.iter().find(|p| p.relay_id == *id).expect("ranked from paths").clone())
        .collect();

    let n = vaa_members.len();
    Ok(SelectionResult {
        round,
        su_id,
        context,
        time_with_prediction: discovery_time(n, predicted_willing.len(), &config.timing, true),
        time_without_prediction: discovery_time(n, predicted_willing.len(), &config.timing, false),
        fallback_direct: selected_relays.is_empty(),
        vaa_members,
        predicted_willing,
        actually_willing,
        probed,
        paths,
        selected_relays,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DiscoverySummary<T> {
    pub rounds: usize,
    pub n_users: usize,
    pub mean_t_without: T,
    pub std_t_without: T,
    pub mean_t_with: T,
    pub std_t_with: T,
    /// `1 - mean_t_with / mean_t_without`.
    pub reduction: T,
}

fn mean_std<T: Real>(values: &[T]) -> (T, T) {
    let n = T::lit(values.len() as f64);
    let mean = values.iter().fold(T::zero(), |a, &v| a + v) / n;
    let var = values.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
    (mean, var.sqrt())
}

/// Aggregates round timings. `n_users` is recorded as given.
pub fn summarize<T: Real>(results: &[SelectionResult<T>], n_users: usize) -> Result<DiscoverySummary<T>> {
    if results.is_empty() {
        return Err(Error::Empty("selection rounds"));
    }
    let without: Vec<T> = results.iter().map(|r| r.time_without_prediction).collect();
    let with: Vec<T> = results.iter().map(|r| r.time_with_prediction).collect();
    let (mean_t_without, std_t_without) = mean_std(&without);
    let (mean_t_with, std_t_with) = mean_std(&with);
    let reduction = if mean_t_without > T::zero() {
        T::one() - mean_t_with / mean_t_without
    } else {
        T::zero()
    };
    Ok(DiscoverySummary {
        rounds: results.len(),
        n_users,
        mean_t_without,
        std_t_without,
        mean_t_with,
        std_t_with,
        reduction,
    })
}

/// Runs `n_rounds` rounds for one SU. Each `(su_id, round)` pair has its own
/// substream of `seed`.
pub fn compare_discovery<T: Real>(
    scenario: &Scenario<T>,
    su_id: usize,
    profiles: &[UserProfile],
    models: &BTreeMap<usize, UserModel<T>>,
    config: &SelectionConfig<T>,
    n_rounds: usize,
    seed: u64,
) -> Result<(DiscoverySummary<T>, Vec<SelectionResult<T>>)> {
    if n_rounds == 0 {
        return Err(Error::Config("n_rounds must be at least 1".into()));
    }
    let results = (0..n_rounds)
        .map(|round| {
            let mut rng = substream(seed, Domain::Round, ((su_id as u64) << 32) | round as u64);
            run_selection(scenario, su_id, profiles, models, config, round, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let n_users = results[0].vaa_members.len();
    Ok((summarize(&results, n_users)?, results))
}

/// Trains one model per inactive user on a synthetic history drawn from the
/// user's own profile.
pub fn train_population<T: Real>(
    scenario: &Scenario<T>,
    profiles: &[UserProfile],
    settings: &ClassifierSettings<T>,
    n_samples: usize,
    seed: u64,
) -> Result<BTreeMap<usize, UserModel<T>>> {
    settings.validate()?;
    let mut models = BTreeMap::new();
    for user in &scenario.inactive_users {
        let profile = profiles
            .get(user.profile_id)
            .ok_or_else(|| Error::Config(format!("user {} has unknown profile {}", user.id, user.profile_id)))?;
        let data = generate_dataset(profile, n_samples, &mut substream(seed, Domain::Dataset, user.id as u64))?;
        let (model, _) = train_user_model(&data, settings, &mut substream(seed, Domain::Init, user.id as u64))?;
        log::debug!("trained {} model for user {} ({})", settings.kind.name(), user.id, profile.name);
        models.insert(user.id, model);
    }
    Ok(models)
}

pub const SUMMARY_HEADER: &str = "rounds,n_users,mean_t_without,mean_t_with,reduction";

pub fn summary_csv<T: Real>(s: &DiscoverySummary<T>) -> String {
    format!(
        "{SUMMARY_HEADER}\n{},{},{},{},{}\n",
        s.rounds,
        s.n_users,
        sig6(s.mean_t_without.as_f64()),
        sig6(s.mean_t_with.as_f64()),
        sig6(s.reduction.as_f64()),
    )
}

/// One JSON document per line.
pub fn round_log<T: Real>(results: &[SelectionResult<T>]) -> Result<String> {
    let mut out = String::new();
    for r in results {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::{Category, Scaler, WillingRule, FEATURE_DIM};
    use crate::classifier::Engine;
    use crate::mlp::MlpNetwork;
    use crate::rng::seeded;
    use crate::spatial::{build_scenario, ScenarioConfig};
    use approx::assert_relative_eq;

    /// Willing iff battery >= 0.5, at every time and day.
    fn battery_profile() -> UserProfile {
        UserProfile {
            name: "BAT".into(),
            category: Category::Custom,
            rules: vec![WillingRule::new(0.5, std::iter::empty(), 1..=7, 0.0)],
            label_noise: 0.0,
        }
    }

    /// Exact classifier for `battery_profile`: identity scaling, one steep
    /// hidden unit on the battery input.
    fn battery_model() -> UserModel<f64> {
        let mut net = MlpNetwork::zeros(&[FEATURE_DIM, 1, 2]).unwrap();
        net.weights[0] = 1e6;
        net.weights[FEATURE_DIM] = -0.5e6 + 1e-3;
        let hidden_block = FEATURE_DIM + 1;
        net.weights[hidden_block] = 1.0;
        net.weights[hidden_block + 2] = -1.0;
        let scaler = Scaler { min: vec![-1.0; FEATURE_DIM], max: vec![1.0; FEATURE_DIM] };
        // With this scaler, apply(x) = x.
        UserModel { scaler, engine: Engine::Mlp(net) }
    }

    fn scenario(n_inactive: usize, seed: u64) -> Scenario<f64> {
        let cfg = ScenarioConfig {
            n_sus: Some(1),
            n_inactive: Some(n_inactive),
            profile_weights: vec![1.0],
            ..Default::default()
        };
        build_scenario(&cfg, seed).unwrap()
    }

    fn perfect_models(s: &Scenario<f64>) -> BTreeMap<usize, UserModel<f64>> {
        s.inactive_users.iter().map(|u| (u.id, battery_model())).collect()
    }

    #[test]
    fn hand_built_model_is_exact() {
        let m = battery_model();
        let p = battery_profile();
        let mut rng = seeded(1);
        for _ in 0..2000 {
            let ctx = WillingnessContext::random(&mut rng);
            assert_eq!(m.predict(&ctx).unwrap(), p.base_label(&ctx));
        }
    }

    #[test]
    fn discovery_time_arithmetic() {
        let t = TimingModel::<f64>::default();
        assert_eq!(discovery_time(0, 0, &t, true), 20.0);
        assert_eq!(discovery_time(0, 0, &t, false), 20.0);
        let without = discovery_time(50, 34, &t, false);
        let with = discovery_time(50, 34, &t, true);
        assert_relative_eq!(without, 520.0);
        assert_relative_eq!(with, 365.0, epsilon = 1e-12);
        assert_relative_eq!(1.0 - with / without, 0.298, epsilon = 1e-3);
        let free = TimingModel { t_predict_per_user: 0.0, ..t };
        assert_eq!(discovery_time(50, 50, &free, true), discovery_time(50, 50, &free, false));
    }

    #[test]
    fn empty_candidates() {
        let (p, c) = predict_willing::<f64>(&BTreeMap::new(), &[]).unwrap();
        assert!(p.is_empty());
        assert_eq!(c, ConfusionCounts::default());
    }

    #[test]
    fn missing_model_is_an_error() {
        let c = Candidate {
            user: 7,
            context: WillingnessContext::new(0.5, 1, 1, 0.5).unwrap(),
            willing: Label::Willing,
        };
        assert!(matches!(predict_willing::<f64>(&BTreeMap::new(), &[c]), Err(Error::MissingModel(7))));
    }

    #[test]
    fn perfect_classifier_has_no_prediction_errors() {
        let s = scenario(30, 2);
        let models = perfect_models(&s);
        let su = s.sus[0].id;
        for round in 0..20 {
            let r = run_selection(&s, su, &[battery_profile()], &models, &SelectionConfig::default(), round, &mut seeded(round as u64))
                .unwrap();
            assert_eq!(r.predicted_willing, r.actually_willing);
            assert_eq!((r.confusion.fp, r.confusion.fn_), (0, 0));
            assert_eq!(r.confusion.total(), r.vaa_members.len());
            r.check_invariants(3, 1e-2).unwrap();
        }
    }

    #[test]
    fn empty_vaa_falls_back_to_direct() {
        let s = scenario(0, 3);
        let r = run_selection(&s, s.sus[0].id, &[battery_profile()], &BTreeMap::new(), &SelectionConfig::default(), 0, &mut seeded(3))
            .unwrap();
        assert!(r.fallback_direct);
        assert_eq!(r.time_with_prediction, 20.0);
        assert_eq!(r.time_without_prediction, 20.0);
    }

    #[test]
    fn unreachable_threshold_falls_back_to_direct() {
        let s = scenario(30, 4);
        let cfg = SelectionConfig { ber_threshold: 0.0, link: LinkParams { reference_snr_db: 40.0, ..Default::default() }, ..Default::default() };
        let r = run_selection(&s, s.sus[0].id, &[battery_profile()], &perfect_models(&s), &cfg, 0, &mut seeded(4)).unwrap();
        assert!(!r.paths.is_empty());
        assert!(r.selected_relays.is_empty() && r.fallback_direct);
    }

    #[test]
    fn unknown_su_is_an_error() {
        let s = scenario(5, 5);
        let missing = s.inactive_users[0].id;
        let err = run_selection(&s, missing, &[battery_profile()], &perfect_models(&s), &SelectionConfig::default(), 0, &mut seeded(5));
        assert!(matches!(err, Err(Error::UnknownSourceUser(_))));
    }

    #[test]
    fn rounds_are_deterministic_and_single_round_summary_matches() {
        let s = scenario(20, 6);
        let models = perfect_models(&s);
        let run = || compare_discovery(&s, s.sus[0].id, &[battery_profile()], &models, &SelectionConfig::default(), 3, 9).unwrap();
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a, b);
        assert_eq!(round_log(&ra).unwrap(), round_log(&rb).unwrap());
        let (one, r1) = compare_discovery(&s, s.sus[0].id, &[battery_profile()], &models, &SelectionConfig::default(), 1, 9).unwrap();
        assert_eq!(one.mean_t_with, r1[0].time_with_prediction);
        assert_eq!(one.mean_t_without, r1[0].time_without_prediction);
        assert_eq!(one.std_t_with, 0.0);
    }

    #[test]
    fn summary_layout() {
        let s = DiscoverySummary { rounds: 2, n_users: 50, mean_t_without: 520.0, std_t_without: 0.0, mean_t_with: 365.0, std_t_with: 0.0, reduction: 155.0 / 520.0 };
        assert_eq!(summary_csv(&s), format!("{SUMMARY_HEADER}\n2,50,520,365,0.298077\n"));
    }
}
