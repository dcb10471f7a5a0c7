//! Per-user willingness model: a feature scaler plus either engine.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{encode_features, FeatureVector, Label, Sample, Scaler, WillingnessContext};
use crate::error::{Error, Result};
use crate::mlp::{self, MlpNetwork, RpropConfig, TrainingTrace};
use crate::scalar::Real;
use crate::svm::{self, CvReport, GridSearchSpec, SmoConfig, SvmModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Mlp,
    Svm,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Mlp => "mlp",
            ClassifierKind::Svm => "svm",
        }
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mlp" => Ok(ClassifierKind::Mlp),
            "svm" => Ok(ClassifierKind::Svm),
            other => Err(Error::Config(format!("unknown classifier `{other}`"))),
        }
    }
}

/// Hyperparameters for both engines; `kind` picks which one is trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ClassifierSettings<T> {
    pub kind: ClassifierKind,
    pub layer_sizes: Vec<usize>,
    pub rprop: RpropConfig<T>,
    pub smo: SmoConfig<T>,
    pub grid: GridSearchSpec<T>,
}

impl<T: Real> Default for ClassifierSettings<T> {
    fn default() -> Self {
        Self {
            kind: ClassifierKind::Mlp,
            layer_sizes: mlp::default_layer_sizes(),
            rprop: RpropConfig::default(),
            smo: SmoConfig::default(),
            grid: GridSearchSpec::default(),
        }
    }
}

impl<T: Real> ClassifierSettings<T> {
    pub fn with_kind(&self, kind: ClassifierKind) -> Self {
        Self { kind, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.rprop.validate()?;
        self.smo.validate()?;
        self.grid.validate()?;
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::Config("MLP layer sizes must be non-empty and positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", tag = "kind", rename_all = "lowercase")]
pub enum Engine<T> {
    Mlp(MlpNetwork<T>),
    Svm(SvmModel<T>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct UserModel<T> {
    pub scaler: Scaler<T>,
    pub engine: Engine<T>,
}

/// What training produced besides the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", tag = "kind", rename_all = "lowercase")]
pub enum TrainingSummary<T> {
    Mlp(TrainingTrace<T>),
    Svm(CvReport<T>),
}

impl<T: Real> UserModel<T> {
    pub fn kind(&self) -> ClassifierKind {
        match self.engine {
            Engine::Mlp(_) => ClassifierKind::Mlp,
            Engine::Svm(_) => ClassifierKind::Svm,
        }
    }

    /// Prediction for raw, unscaled features.
    pub fn predict_features(&self, raw: &FeatureVector<T>) -> Result<Label> {
        self.predict_scaled(&self.scaler.apply(raw)?)
    }

    pub fn predict_scaled(&self, x: &FeatureVector<T>) -> Result<Label> {
        match &self.engine {
            Engine::Mlp(net) => net.predict(x.as_slice()),
            Engine::Svm(model) => model.classify(x.as_slice()),
        }
    }

    pub fn predict(&self, ctx: &WillingnessContext) -> Result<Label> {
        self.predict_features(&encode_features(ctx)?)
    }

    /// Squared error of one scaled sample on the `±1` target scale: the mean
    /// over output neurons for the MLP, the clamped decision sign for the SVM.
    pub fn squared_error(&self, x: &FeatureVector<T>, label: Label) -> Result<T> {
        match &self.engine {
            Engine::Mlp(net) => {
                let out = net.forward(x.as_slice())?;
                mlp::mse(&[out], &[mlp::target_for::<T>(label)])
            }
            Engine::Svm(model) => {
                let d = model.classify(x.as_slice())?.sign::<T>() - label.sign::<T>();
                Ok(d * d)
            }
        }
    }
}

/// Fits the scaler on `train`, then trains the selected engine on the scaled
/// samples.
pub fn train_user_model<T: Real, R: Rng + ?Sized>(
    train: &[Sample<T>],
    settings: &ClassifierSettings<T>,
    rng: &mut R,
) -> Result<(UserModel<T>, TrainingSummary<T>)> {
    let (scaler, scaled, _) = crate::behavior::scale_split(train, &[])?;
    let (engine, summary) = match settings.kind {
        ClassifierKind::Mlp => {
            let (mut net, trace) = mlp::train(&settings.layer_sizes, &scaled, &settings.rprop, rng)?;
            net.rprop = Default::default();
            (Engine::Mlp(net), TrainingSummary::Mlp(trace))
        }
        ClassifierKind::Svm => {
            let (model, report) = svm::train_with_grid_search(&scaled, &settings.grid, &settings.smo, rng)?;
            (Engine::Svm(model), TrainingSummary::Svm(report))
        }
    };
    Ok((UserModel { scaler, engine }, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::{generate_dataset, UserProfile};
    use crate::rng::seeded;

    fn small_settings(kind: ClassifierKind) -> ClassifierSettings<f64> {
        let mut s = ClassifierSettings::default().with_kind(kind);
        s.rprop.max_epochs = 300;
        s.grid = GridSearchSpec { c_grid: vec![8.0], gamma_grid: vec![0.125], folds: 3 };
        s
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("SVM".parse::<ClassifierKind>().unwrap(), ClassifierKind::Svm);
        assert!("tree".parse::<ClassifierKind>().is_err());
    }

    #[test]
    fn both_engines_learn_the_household_rule() {
        let data: Vec<Sample<f64>> = generate_dataset(&UserProfile::household(0.0), 400, &mut seeded(1)).unwrap();
        for kind in [ClassifierKind::Mlp, ClassifierKind::Svm] {
            let (model, _) = train_user_model(&data, &small_settings(kind), &mut seeded(2)).unwrap();
            assert_eq!(model.kind(), kind);
            let correct = data.iter().filter(|s| model.predict(&s.context).unwrap() == s.label).count();
            assert!(correct as f64 / data.len() as f64 > 0.95, "{kind:?}: {correct}");
        }
    }

    #[test]
    fn svm_squared_error_is_zero_or_four() {
        let data: Vec<Sample<f64>> = generate_dataset(&UserProfile::office(0.1), 200, &mut seeded(3)).unwrap();
        let (model, _) = train_user_model(&data, &small_settings(ClassifierKind::Svm), &mut seeded(4)).unwrap();
        for s in &data {
            let e = model.squared_error(&model.scaler.apply(&s.features).unwrap(), s.label).unwrap();
            assert!(e == 0.0 || e == 4.0);
        }
    }

    #[test]
    fn model_json_round_trip() {
        let data: Vec<Sample<f64>> = generate_dataset(&UserProfile::student(0.0), 100, &mut seeded(5)).unwrap();
        let (model, summary) = train_user_model(&data, &small_settings(ClassifierKind::Mlp), &mut seeded(6)).unwrap();
        let back: UserModel<f64> = serde_json::from_str(&serde_json::to_string(&model).unwrap()).unwrap();
        assert_eq!(back, model);
        assert!(matches!(summary, TrainingSummary::Mlp(_)));
    }
}
