//! Confusion counts, the classification metrics and the per-population
//! evaluation report.

use serde::{Deserialize, Serialize};

use crate::behavior::{generate_dataset, scale_split, stratified_split, Label, Sample, UserProfile};
use crate::classifier::{train_user_model, Engine, ClassifierKind, ClassifierSettings, TrainingSummary};
use crate::error::{Error, Result};
use crate::rng::{substream, Domain};
use crate::scalar::Real;
use crate::text::sig6;

/// Willing (`+1`) is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: Label, truth: Label) {
        match (predicted, truth) {
            (Label::Willing, Label::Willing) => self.tp += 1,
            (Label::Willing, Label::Unwilling) => self.fp += 1,
            (Label::Unwilling, Label::Unwilling) => self.tn += 1,
            (Label::Unwilling, Label::Willing) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

pub fn confusion(predictions: &[Label], truths: &[Label]) -> Result<ConfusionCounts> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: truths.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in predictions.iter().zip(truths) {
        c.record(p, t);
    }
    Ok(c)
}

fn ratio<T: Real>(num: usize, den: usize) -> Option<T> {
    (den > 0).then(|| T::lit(num as f64 / den as f64))
}

/// `(TP + TN) / total`; `None` when nothing was evaluated.
pub fn accuracy<T: Real>(c: &ConfusionCounts) -> Option<T> {
    ratio(c.tp + c.tn, c.total())
}

/// `TP / (TP + FP)`.
pub fn precision<T: Real>(c: &ConfusionCounts) -> Option<T> {
    ratio(c.tp, c.tp + c.fp)
}

/// `TN / (TN + FN)`, the recall as the reference tables define it. This is
/// the negative predictive value, not the textbook recall.
pub fn recall_negative<T: Real>(c: &ConfusionCounts) -> Option<T> {
    ratio(c.tn, c.tn + c.fn_)
}

/// `TP / (TP + FN)`.
pub fn recall_standard<T: Real>(c: &ConfusionCounts) -> Option<T> {
    ratio(c.tp, c.tp + c.fn_)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ExperimentConfig<T> {
    pub user_counts: Vec<usize>,
    /// Users are assigned profiles round-robin in this order.
    pub profiles: Vec<UserProfile>,
    pub n_samples: usize,
    pub test_fraction: f64,
    pub classifier: ClassifierSettings<T>,
}

impl<T: Real> Default for ExperimentConfig<T> {
    fn default() -> Self {
        Self {
            user_counts: vec![10, 15, 20, 25, 30],
            profiles: UserProfile::reference_set(0.05),
            n_samples: 2000,
            test_fraction: 0.3,
            classifier: ClassifierSettings::default(),
        }
    }
}

impl<T: Real> ExperimentConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.user_counts.is_empty() || self.user_counts.contains(&0) {
            return Err(Error::Config("user counts must be positive".into()));
        }
        if self.profiles.is_empty() {
            return Err(Error::Config("experiment needs at least one profile".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        self.classifier.validate()
    }
}

/// Held-out results of one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct UserEvaluation<T> {
    pub user: usize,
    pub profile: String,
    pub confusion: ConfusionCounts,
    /// Sum over test samples of the per-sample squared error on the `±1`
    /// target scale.
    pub squared_error_sum: T,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ReportRow<T> {
    pub n_users: usize,
    pub classifier: ClassifierKind,
    pub confusion: ConfusionCounts,
    pub mse_pct: T,
    pub accuracy_pct: Option<T>,
    pub precision_pct: Option<T>,
    pub recall_negative_pct: Option<T>,
    pub recall_std_pct: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ExperimentReport<T> {
    pub users: Vec<UserEvaluation<T>>,
    pub rows: Vec<ReportRow<T>>,
}

/// Held-out split of one synthetic user. Both engines see the same data.
pub fn user_split<T: Real>(
    user: usize,
    profile: &UserProfile,
    n_samples: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<Sample<T>>, Vec<Sample<T>>)> {
    let data = generate_dataset(profile, n_samples, &mut substream(seed, Domain::Dataset, user as u64))?;
    let mut rng = substream(seed, Domain::Split, user as u64);
    Ok(stratified_split(&data, test_fraction, &mut rng))
}

/// Trains one user's model and scores it on its held-out samples.
pub fn evaluate_user<T: Real>(
    user: usize,
    profile: &UserProfile,
    cfg: &ExperimentConfig<T>,
    seed: u64,
) -> Result<UserEvaluation<T>> {
    let (train, test) = user_split::<T>(user, profile, cfg.n_samples, cfg.test_fraction, seed)?;
    let domain = match cfg.classifier.kind {
        ClassifierKind::Mlp => Domain::Init,
        ClassifierKind::Svm => Domain::CrossValidation,
    };
    let (model, summary) = train_user_model(&train, &cfg.classifier, &mut substream(seed, domain, user as u64))?;
    let (_, _, test_scaled) = scale_split(&train, &test)?;
    let mut confusion = ConfusionCounts::default();
    let mut squared_error_sum = T::zero();
    for s in &test_scaled {
        confusion.record(model.predict_scaled(&s.features)?, s.label);
        squared_error_sum += model.squared_error(&s.features, s.label)?;
    }
    let converged = match (&summary, &model.engine) {
        (TrainingSummary::Mlp(trace), _) => trace.converged,
        (_, Engine::Svm(m)) => m.converged,
        _ => true,
    };
    Ok(UserEvaluation {
        user,
        profile: profile.name.clone(),
        confusion,
        squared_error_sum,
        converged,
    })
}

fn pct<T: Real>(v: Option<T>) -> Option<T> {
    v.map(|x| x * T::lit(100.0))
}

/// Micro-averaged row over `users`. MSE is reported on the 0/1 target scale,
/// so for the SVM it coincides with the error rate.
pub fn aggregate_row<T: Real>(kind: ClassifierKind, users: &[UserEvaluation<T>]) -> ReportRow<T> {
    let mut c = ConfusionCounts::default();
    let mut sq = T::zero();
    for u in users {
        c.merge(&u.confusion);
        sq += u.squared_error_sum;
    }
    let n = c.total().max(1);
    ReportRow {
        n_users: users.len(),
        classifier: kind,
        confusion: c,
        mse_pct: T::lit(100.0) * sq / T::lit(4.0 * n as f64),
        accuracy_pct: pct(accuracy(&c)),
        precision_pct: pct(precision(&c)),
        recall_negative_pct: pct(recall_negative(&c)),
        recall_std_pct: pct(recall_standard(&c)),
    }
}

/// Evaluates the largest requested population once; each row aggregates the
/// first `n` users of it.
pub fn experiment_report<T: Real>(cfg: &ExperimentConfig<T>, seed: u64) -> Result<ExperimentReport<T>> {
    cfg.validate()?;
    let n_max = *cfg.user_counts.iter().max().expect("validated non-empty");
    let users = (0..n_max)
        .map(|u| {
            let profile = &cfg.profiles[u % cfg.profiles.len()];
            log::debug!("evaluating user {u} ({}) with {}", profile.name, cfg.classifier.kind.name());
            evaluate_user(u, profile, cfg, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = cfg
        .user_counts
        .iter()
        .map(|&n| aggregate_row(cfg.classifier.kind, &users[..n]))
        .collect();
    Ok(ExperimentReport { users, rows })
}

pub const REPORT_HEADER: &str =
    "n_users,classifier,mse_pct,accuracy_pct,precision_pct,recall_negative_pct,recall_std_pct";

fn cell<T: Real>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| sig6(x.as_f64()))
}

/// Report CSV. `mse_pct` is on the 0/1 target scale; undefined metrics are
/// written as `NA`.
pub fn report_csv<T: Real>(rows: &[ReportRow<T>]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.n_users,
            r.classifier.name(),
            sig6(r.mse_pct.as_f64()),
            cell(r.accuracy_pct),
            cell(r.precision_pct),
            cell(r.recall_negative_pct),
            cell(r.recall_std_pct),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::svm::GridSearchSpec;
    use approx::assert_relative_eq;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use rand::Rng;

    fn counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> ConfusionCounts {
        ConfusionCounts { tp, fp, tn, fn_ }
    }

    #[test]
    fn confusion_extremes() {
        let all = vec![Label::Willing; 5];
        assert_eq!(confusion(&all, &all).unwrap(), counts(5, 0, 0, 0));
        let truths = vec![Label::Willing, Label::Unwilling, Label::Willing];
        let flipped: Vec<Label> = truths.iter().map(|l| l.flipped()).collect();
        let c = confusion(&flipped, &truths).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        assert!(confusion(&all, &truths).is_err());
    }

    #[test]
    fn confusion_matches_recount() {
        let mut rng = seeded(1);
        let p: Vec<Label> = (0..500).map(|_| Label::from_bool(rng.random())).collect();
        let t: Vec<Label> = (0..500).map(|_| Label::from_bool(rng.random())).collect();
        let c = confusion(&p, &t).unwrap();
        let count = |a: i8, b: i8| p.iter().zip(&t).filter(|(x, y)| x.as_i8() == a && y.as_i8() == b).count();
        assert_eq!(c, counts(count(1, 1), count(1, -1), count(-1, -1), count(-1, 1)));
    }

    #[test]
    fn metric_arithmetic() {
        let c = counts(9, 1, 8, 2);
        assert_relative_eq!(accuracy::<f64>(&c).unwrap(), 0.85);
        assert_relative_eq!(precision::<f64>(&c).unwrap(), 0.9);
        assert_relative_eq!(recall_negative::<f64>(&c).unwrap(), 0.8);
        assert_relative_eq!(recall_standard::<f64>(&c).unwrap(), 9.0 / 11.0);
        let perfect = counts(4, 0, 6, 0);
        for m in [accuracy::<f64>, precision, recall_negative, recall_standard] {
            assert_eq!(m(&perfect), Some(1.0));
        }
        assert_eq!(precision::<f64>(&counts(0, 0, 3, 1)), None);
        assert_eq!(precision::<f64>(&counts(0, 2, 3, 1)), Some(0.0));
        assert_eq!(accuracy::<f64>(&ConfusionCounts::default()), None);
    }

    proptest! {
        #[test]
        fn accuracy_is_exact_fraction(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, fn_ in 0usize..50) {
            let c = counts(tp, fp, tn, fn_);
            match accuracy::<f64>(&c) {
                Some(a) => {
                    prop_assert!((0.0..=1.0).contains(&a));
                    prop_assert_eq!(a, (tp + tn) as f64 / (tp + fp + tn + fn_) as f64);
                }
                None => prop_assert_eq!(c.total(), 0),
            }
        }
    }

    #[test]
    fn csv_layout_and_undefined_marker() {
        let rows = vec![aggregate_row::<f64>(
            ClassifierKind::Svm,
            &[UserEvaluation {
                user: 0,
                profile: "HH1".into(),
                confusion: counts(0, 0, 9, 1),
                squared_error_sum: 4.0,
                converged: true,
            }],
        )];
        let csv = report_csv(&rows);
        assert_eq!(csv, format!("{REPORT_HEADER}\n1,svm,10,90,NA,90,0\n"));
    }

    #[test]
    fn small_report_is_consistent() {
        let mut cfg = ExperimentConfig::<f64>::default();
        cfg.user_counts = vec![2, 3];
        cfg.n_samples = 300;
        cfg.classifier = cfg.classifier.with_kind(ClassifierKind::Svm);
        cfg.classifier.grid = GridSearchSpec { c_grid: vec![2.0, 32.0], gamma_grid: vec![0.125], folds: 3 };
        let r = experiment_report(&cfg, 11).unwrap();
        assert_eq!(r.users.len(), 3);
        assert_eq!(r.rows.len(), 2);
        for row in &r.rows {
            let err = 100.0 * (row.confusion.fp + row.confusion.fn_) as f64 / row.confusion.total() as f64;
            assert_relative_eq!(row.accuracy_pct.unwrap(), 100.0 - err, epsilon = 1e-9);
            // SVM squared errors are 0 or 4, so the 0/1-scale MSE is the error rate.
            assert_relative_eq!(row.mse_pct, err, epsilon = 1e-9);
            let p = row.precision_pct.unwrap();
            assert!(p > 0.0 && p < 100.0);
        }
        assert_eq!(r, experiment_report(&cfg, 11).unwrap());
    }
}
