//! User willingness behavior, synthetic datasets and feature encoding.
//!
//! A profile is a disjunction of rules; each rule is a conjunction of a
//! battery floor, a set of excluded time zones, a set of allowed days and an
//! incentive floor. Labels are flipped with probability `label_noise`.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::text::sig6;

pub const N_TIME_ZONES: u8 = 10;
pub const N_DAYS: u8 = 7;
/// battery (1) + one-hot time zone (10) + one-hot day (7) + incentive (1)
pub const FEATURE_DIM: usize = 1 + N_TIME_ZONES as usize + N_DAYS as usize + 1;

const ZONE_OFFSET: usize = 1;
const DAY_OFFSET: usize = ZONE_OFFSET + N_TIME_ZONES as usize;
const INCENTIVE_INDEX: usize = DAY_OFFSET + N_DAYS as usize;

pub const MAX_LABEL_NOISE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Label {
    Willing,
    Unwilling,
}

impl Label {
    pub fn from_bool(willing: bool) -> Self {
        if willing {
            Label::Willing
        } else {
            Label::Unwilling
        }
    }

    pub fn is_willing(self) -> bool {
        self == Label::Willing
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Willing => Label::Unwilling,
            Label::Unwilling => Label::Willing,
        }
    }

    /// +1 for willing, -1 for unwilling.
    pub fn sign<T: Real>(self) -> T {
        match self {
            Label::Willing => T::one(),
            Label::Unwilling => -T::one(),
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Label::Willing => 1,
            Label::Unwilling => -1,
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        l.as_i8()
    }
}

impl TryFrom<i8> for Label {
    type Error = String;
    fn try_from(v: i8) -> std::result::Result<Self, Self::Error> {
        match v {
            1 => Ok(Label::Willing),
            -1 => Ok(Label::Unwilling),
            other => Err(format!("label must be +1 or -1, got {other}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_i8())
    }
}

/// Query point for a willingness decision. `day` 1 is Monday.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WillingnessContext {
    pub battery: f64,
    pub time_zone: u8,
    pub day: u8,
    pub incentive: f64,
}

impl WillingnessContext {
    pub fn new(battery: f64, time_zone: u8, day: u8, incentive: f64) -> Result<Self> {
        let ctx = Self {
            battery,
            time_zone,
            day,
            incentive,
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.battery) {
            return Err(Error::OutOfRange(format!("battery {}", self.battery)));
        }
        if !unit(self.incentive) {
            return Err(Error::OutOfRange(format!("incentive {}", self.incentive)));
        }
        if !(1..=N_TIME_ZONES).contains(&self.time_zone) {
            return Err(Error::OutOfRange(format!("time zone {}", self.time_zone)));
        }
        if !(1..=N_DAYS).contains(&self.day) {
            return Err(Error::OutOfRange(format!("day {}", self.day)));
        }
        Ok(())
    }

    /// Uniform over the context space.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            battery: rng.random(),
            time_zone: rng.random_range(1..=N_TIME_ZONES),
            day: rng.random_range(1..=N_DAYS),
            incentive: rng.random(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "HH")]
    Household,
    #[serde(rename = "OU")]
    Office,
    #[serde(rename = "ST")]
    Student,
    #[serde(rename = "custom")]
    Custom,
}

/// One conjunctive willingness rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WillingRule {
    pub battery_min: f64,
    pub unwilling_time_zones: BTreeSet<u8>,
    pub willing_days: BTreeSet<u8>,
    pub incentive_min: f64,
}

impl WillingRule {
    pub fn new(
        battery_min: f64,
        unwilling_time_zones: impl IntoIterator<Item = u8>,
        willing_days: impl IntoIterator<Item = u8>,
        incentive_min: f64,
    ) -> Self {
        Self {
            battery_min,
            unwilling_time_zones: unwilling_time_zones.into_iter().collect(),
            willing_days: willing_days.into_iter().collect(),
            incentive_min,
        }
    }

    pub fn admits(&self, ctx: &WillingnessContext) -> bool {
        ctx.battery >= self.battery_min
            && !self.unwilling_time_zones.contains(&ctx.time_zone)
            && self.willing_days.contains(&ctx.day)
            && ctx.incentive >= self.incentive_min
    }

    /// Whether some context in the space satisfies the rule.
    pub fn satisfiable(&self) -> bool {
        self.battery_min <= 1.0
            && self.incentive_min <= 1.0
            && (1..=N_TIME_ZONES).any(|z| !self.unwilling_time_zones.contains(&z))
            && self.willing_days.iter().any(|d| (1..=N_DAYS).contains(d))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub name: String,
    pub category: Category,
    /// The user is willing when any rule admits the context.
    pub rules: Vec<WillingRule>,
    pub label_noise: f64,
}

const MON_FRI: [u8; 5] = [1, 2, 3, 4, 5];

impl UserProfile {
    pub fn new(
        name: impl Into<String>,
        category: Category,
        rules: Vec<WillingRule>,
        label_noise: f64,
    ) -> Result<Self> {
        let profile = Self {
            name: name.into(),
            category,
            rules,
            label_noise,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_LABEL_NOISE).contains(&self.label_noise) {
            return Err(Error::Config(format!(
                "label_noise {} outside [0, {MAX_LABEL_NOISE}]",
                self.label_noise
            )));
        }
        if self.rules.is_empty() || self.rules.iter().any(|r| r.willing_days.is_empty()) {
            return Err(Error::Config(format!(
                "profile {} needs at least one rule with willing days",
                self.name
            )));
        }
        Ok(())
    }

    /// Household user: battery above 0.3, never in zone 3, weekdays, incentive above 0.5.
    pub fn household(label_noise: f64) -> Self {
        Self {
            name: "HH1".into(),
            category: Category::Household,
            rules: vec![WillingRule::new(0.3, [3], MON_FRI, 0.5)],
            label_noise,
        }
    }

    /// Office user: battery above 0.6, never in zones 3 or 9, Monday to
    /// Saturday, incentive above 0.6.
    pub fn office(label_noise: f64) -> Self {
        Self {
            name: "OU1".into(),
            category: Category::Office,
            rules: vec![WillingRule::new(0.6, [3, 9], [1, 2, 3, 4, 5, 6], 0.6)],
            label_noise,
        }
    }

    /// Student: two separate willing windows, Monday to Thursday on moderate
    /// battery and incentive, Friday to Sunday only when both are high.
    pub fn student(label_noise: f64) -> Self {
        Self {
            name: "ST2".into(),
            category: Category::Student,
            rules: vec![
                WillingRule::new(0.3, [4, 5], [1, 2, 3, 4], 0.3),
                WillingRule::new(0.7, [3, 7, 8], [5, 6, 7], 0.7),
            ],
            label_noise,
        }
    }

    /// The three reference profiles in household, office, student order.
    pub fn reference_set(label_noise: f64) -> Vec<Self> {
        vec![
            Self::household(label_noise),
            Self::office(label_noise),
            Self::student(label_noise),
        ]
    }

    /// Noise-free ground truth.
    pub fn base_label(&self, ctx: &WillingnessContext) -> Label {
        Label::from_bool(self.rules.iter().any(|r| r.admits(ctx)))
    }

    pub fn satisfiable(&self) -> bool {
        self.rules.iter().any(WillingRule::satisfiable)
    }
}

/// Ground-truth willingness including label noise. Consumes exactly one
/// uniform draw from `rng` regardless of the noise level.
pub fn decide_willingness<R: Rng + ?Sized>(
    profile: &UserProfile,
    ctx: &WillingnessContext,
    rng: &mut R,
) -> Label {
    let base = profile.base_label(ctx);
    let u: f64 = rng.random();
    if u < profile.label_noise {
        base.flipped()
    } else {
        base
    }
}

/// Fixed-layout feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", transparent)]
pub struct FeatureVector<T>(pub Vec<T>);

impl<T: Real> FeatureVector<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn encode_features<T: Real>(ctx: &WillingnessContext) -> Result<FeatureVector<T>> {
    ctx.validate()?;
    let mut v = vec![T::zero(); FEATURE_DIM];
    v[0] = T::lit(ctx.battery);
    v[ZONE_OFFSET + (ctx.time_zone - 1) as usize] = T::one();
    v[DAY_OFFSET + (ctx.day - 1) as usize] = T::one();
    v[INCENTIVE_INDEX] = T::lit(ctx.incentive);
    Ok(FeatureVector(v))
}

/// Recovers `(time_zone, day)` from an unscaled feature vector.
pub fn decode_discrete<T: Real>(fv: &FeatureVector<T>) -> Result<(u8, u8)> {
    if fv.len() != FEATURE_DIM {
        return Err(Error::DimensionMismatch {
            expected: FEATURE_DIM,
            got: fv.len(),
        });
    }
    let hot = |range: std::ops::Range<usize>| {
        range
            .clone()
            .position(|i| fv.0[i] == T::one())
            .map(|k| k as u8 + 1)
            .ok_or_else(|| Error::OutOfRange("one-hot block has no set component".into()))
    };
    Ok((
        hot(ZONE_OFFSET..DAY_OFFSET)?,
        hot(DAY_OFFSET..INCENTIVE_INDEX)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Sample<T> {
    pub features: FeatureVector<T>,
    pub label: Label,
    pub context: WillingnessContext,
}

impl<T: Real> Sample<T> {
    pub fn from_context(context: WillingnessContext, label: Label) -> Result<Self> {
        Ok(Self {
            features: encode_features(&context)?,
            label,
            context,
        })
    }
}

/// Draws `n_samples` uniform contexts and labels them with `profile`. For
/// `n_samples >= 50` both classes are guaranteed to appear; trailing contexts
/// are redrawn until the missing class shows up.
pub fn generate_dataset<T: Real, R: Rng + ?Sized>(
    profile: &UserProfile,
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<Sample<T>>> {
    if n_samples == 0 {
        return Err(Error::Empty("n_samples"));
    }
    profile.validate()?;
    if !profile.satisfiable() {
        return Err(Error::UnsatisfiableProfile(profile.name.clone()));
    }
    let draw = |rng: &mut R| -> Result<Sample<T>> {
        let ctx = WillingnessContext::random(rng);
        let label = decide_willingness(profile, &ctx, rng);
        Sample::from_context(ctx, label)
    };
    let mut samples = (0..n_samples).map(|_| draw(rng)).collect::<Result<Vec<_>>>()?;

    if n_samples >= 50 {
        const MAX_REDRAWS: usize = 1_000_000;
        for target in [Label::Willing, Label::Unwilling] {
            if samples.iter().any(|s| s.label == target) {
                continue;
            }
            // Replace the last sample of the majority class until one lands.
            let slot = n_samples - 1 - usize::from(target == Label::Unwilling && n_samples > 1);
            let mut found = false;
            for _ in 0..MAX_REDRAWS {
                let s = draw(rng)?;
                if s.label == target {
                    samples[slot] = s;
                    found = true;
                    break;
                }
            }
            if !found {
                return Err(Error::UnsatisfiableProfile(format!(
                    "{} never yields label {target}",
                    profile.name
                )));
            }
        }
    }
    Ok(samples)
}

/// Stratified split: `test_fraction` of each class goes to the test set.
pub fn stratified_split<T: Real, R: Rng + ?Sized>(
    samples: &[Sample<T>],
    test_fraction: f64,
    rng: &mut R,
) -> (Vec<Sample<T>>, Vec<Sample<T>>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [Label::Willing, Label::Unwilling] {
        let mut idx: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].label == class)
            .collect();
        idx.shuffle(rng);
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        test.extend(idx[..n_test].iter().map(|&i| samples[i].clone()));
        train.extend(idx[n_test..].iter().map(|&i| samples[i].clone()));
    }
    (train, test)
}

/// Dataset CSV with header `battery,time_zone,day,incentive,label`.
pub fn dataset_to_csv<T: Real>(samples: &[Sample<T>]) -> String {
    let mut out = String::from("battery,time_zone,day,incentive,label\n");
    for s in samples {
        let c = &s.context;
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            sig6(c.battery),
            c.time_zone,
            c.day,
            sig6(c.incentive),
            s.label
        ));
    }
    out
}

/// Per-component affine map onto `[-1, 1]` fit on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Scaler<T> {
    pub min: Vec<T>,
    pub max: Vec<T>,
}

pub fn fit_scaler<T: Real>(features: &[FeatureVector<T>]) -> Result<Scaler<T>> {
    let first = features.first().ok_or(Error::Empty("scaler training set"))?;
    let dim = first.len();
    let mut min = first.0.clone();
    let mut max = first.0.clone();
    for fv in &features[1..] {
        if fv.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: fv.len(),
            });
        }
        for (k, &v) in fv.0.iter().enumerate() {
            min[k] = min[k].min(v);
            max[k] = max[k].max(v);
        }
    }
    Ok(Scaler { min, max })
}

impl<T: Real> Scaler<T> {
    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Constant components map to 0. Values outside the fitted range map
    /// outside `[-1, 1]`.
    pub fn apply(&self, fv: &FeatureVector<T>) -> Result<FeatureVector<T>> {
        self.check(fv)?;
        let two = T::lit(2.0);
        Ok(FeatureVector(
            fv.0.iter()
                .zip(self.min.iter().zip(&self.max))
                .map(|(&x, (&lo, &hi))| {
                    let span = hi - lo;
                    if span > T::zero() {
                        two * (x - lo) / span - T::one()
                    } else {
                        T::zero()
                    }
                })
                .collect(),
        ))
    }

    /// Inverse map; constant components come back as the fitted constant.
    pub fn invert(&self, fv: &FeatureVector<T>) -> Result<FeatureVector<T>> {
        self.check(fv)?;
        let half = T::lit(0.5);
        Ok(FeatureVector(
            fv.0.iter()
                .zip(self.min.iter().zip(&self.max))
                .map(|(&z, (&lo, &hi))| lo + (z + T::one()) * half * (hi - lo))
                .collect(),
        ))
    }

    fn check(&self, fv: &FeatureVector<T>) -> Result<()> {
        if fv.len() == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: fv.len(),
            })
        }
    }
}

/// Fits a scaler on `train` and returns scaled copies of both sets.
pub fn scale_split<T: Real>(
    train: &[Sample<T>],
    test: &[Sample<T>],
) -> Result<(Scaler<T>, Vec<Sample<T>>, Vec<Sample<T>>)> {
    let feats: Vec<_> = train.iter().map(|s| s.features.clone()).collect();
    let scaler = fit_scaler(&feats)?;
    let scale = |set: &[Sample<T>]| -> Result<Vec<Sample<T>>> {
        set.iter()
            .map(|s| {
                Ok(Sample {
                    features: scaler.apply(&s.features)?,
                    label: s.label,
                    context: s.context,
                })
            })
            .collect()
    };
    let train_scaled = scale(train)?;
    let test_scaled = scale(test)?;
    Ok((scaler, train_scaled, test_scaled))
}
