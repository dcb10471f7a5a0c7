//! Feed-forward tanh network trained with full-batch resilient propagation.
//!
//! Weights are stored flat, layer by layer. Each layer is a row-major block of
//! `fan_out x (fan_in + 1)` values whose last column is the neuron bias.
//!
//! The training error is the batch-summed squared error
//! `E = sum_n sum_k (o_nk - d_nk)^2` with targets `(+1, -1)` for a willing
//! sample and `(-1, +1)` for an unwilling one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{Label, Sample, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::scalar::{signum0, Real};

pub const DEFAULT_HIDDEN: usize = 10;

pub fn default_layer_sizes() -> Vec<usize> {
    vec![FEATURE_DIM, DEFAULT_HIDDEN, 2]
}

/// Hyperbolic tangent. `T::tanh` already saturates to +/-1 without overflow.
#[inline]
pub fn activation<T: Real>(x: T) -> T {
    x.tanh()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RpropConfig<T> {
    pub eta_plus: T,
    pub eta_minus: T,
    pub delta_init: T,
    pub delta_min: T,
    pub delta_max: T,
    pub mse_threshold: T,
    pub max_epochs: usize,
}

impl<T: Real> Default for RpropConfig<T> {
    fn default() -> Self {
        Self {
            eta_plus: T::lit(1.2),
            eta_minus: T::lit(0.5),
            delta_init: T::lit(0.1),
            delta_min: T::lit(1e-6),
            delta_max: T::lit(50.0),
            mse_threshold: T::lit(0.01),
            max_epochs: 2000,
        }
    }
}

impl<T: Real> RpropConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(T::zero() < self.eta_minus && self.eta_minus < T::one() && T::one() < self.eta_plus) {
            return Err(Error::Config(format!(
                "RPROP needs 0 < eta_minus < 1 < eta_plus, got {} and {}",
                self.eta_minus, self.eta_plus
            )));
        }
        if !(T::zero() < self.delta_min
            && self.delta_min <= self.delta_init
            && self.delta_init <= self.delta_max)
        {
            return Err(Error::Config(
                "RPROP needs 0 < delta_min <= delta_init <= delta_max".into(),
            ));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Per-weight step sizes and the gradient remembered from the previous epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RpropState<T> {
    pub step: Vec<T>,
    pub prev_grad: Vec<T>,
}

/// One RPROP- update for a single weight. Returns the weight change.
///
/// Same gradient sign as last epoch grows the step, a sign flip shrinks it,
/// skips the update and clears the remembered gradient; otherwise the step is
/// kept. The weight moves by `-sign(grad) * step`.
pub fn rprop_update<T: Real>(step: &mut T, prev_grad: &mut T, grad: T, cfg: &RpropConfig<T>) -> T {
    let agreement = *prev_grad * grad;
    if agreement > T::zero() {
        *step = (*step * cfg.eta_plus).min(cfg.delta_max);
    } else if agreement < T::zero() {
        *step = (*step * cfg.eta_minus).max(cfg.delta_min);
        *prev_grad = T::zero();
        return T::zero();
    }
    *prev_grad = grad;
    -signum0(grad) * *step
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct MlpNetwork<T> {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<T>,
    #[serde(skip)]
    pub rprop: RpropState<T>,
}

/// Flat inputs and targets prepared once for repeated epochs.
#[derive(Debug, Clone)]
pub struct TrainingSet<T> {
    inputs: Vec<T>,
    targets: Vec<T>,
    in_dim: usize,
    out_dim: usize,
}

impl<T: Real> TrainingSet<T> {
    pub fn new<A: AsRef<[T]>, B: AsRef<[T]>>(inputs: &[A], targets: &[B]) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::LengthMismatch {
                left: inputs.len(),
                right: targets.len(),
            });
        }
        let first = inputs.first().ok_or(Error::Empty("training batch"))?;
        let in_dim = first.as_ref().len();
        let out_dim = targets[0].as_ref().len();
        let mut flat_in = Vec::with_capacity(in_dim * inputs.len());
        let mut flat_t = Vec::with_capacity(out_dim * inputs.len());
        for (x, d) in inputs.iter().zip(targets) {
            let (x, d) = (x.as_ref(), d.as_ref());
            if x.len() != in_dim {
                return Err(Error::DimensionMismatch { expected: in_dim, got: x.len() });
            }
            if d.len() != out_dim {
                return Err(Error::DimensionMismatch { expected: out_dim, got: d.len() });
            }
            flat_in.extend_from_slice(x);
            flat_t.extend_from_slice(d);
        }
        Ok(Self {
            inputs: flat_in,
            targets: flat_t,
            in_dim,
            out_dim,
        })
    }

    pub fn from_samples(samples: &[Sample<T>]) -> Result<Self> {
        let inputs: Vec<&[T]> = samples.iter().map(|s| s.features.as_slice()).collect();
        let targets: Vec<[T; 2]> = samples.iter().map(|s| target_for(s.label)).collect();
        Self::new(&inputs, &targets)
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.in_dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn input(&self, n: usize) -> &[T] {
        &self.inputs[n * self.in_dim..(n + 1) * self.in_dim]
    }

    fn target(&self, n: usize) -> &[T] {
        &self.targets[n * self.out_dim..(n + 1) * self.out_dim]
    }
}

/// Two-neuron target encoding of a label.
pub fn target_for<T: Real>(label: Label) -> [T; 2] {
    let s: T = label.sign();
    [s, -s]
}

/// Decision from the two output neurons; a tie counts as unwilling.
pub fn decide<T: Real>(willing: T, unwilling: T) -> Label {
    Label::from_bool(willing > unwilling)
}

/// Mean squared deviation over every scalar output component.
pub fn mse<T: Real, A: AsRef<[T]>, B: AsRef<[T]>>(outputs: &[A], targets: &[B]) -> Result<T> {
    if outputs.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: outputs.len(),
            right: targets.len(),
        });
    }
    let mut sum = T::zero();
    let mut count = 0usize;
    for (o, d) in outputs.iter().zip(targets) {
        let (o, d) = (o.as_ref(), d.as_ref());
        if o.len() != d.len() {
            return Err(Error::LengthMismatch { left: o.len(), right: d.len() });
        }
        for (&a, &b) in o.iter().zip(d) {
            sum += (a - b) * (a - b);
        }
        count += o.len();
    }
    if count == 0 {
        return Err(Error::Empty("mse"));
    }
    Ok(sum / T::lit(count as f64))
}

/// Scratch buffers for one forward/backward pass.
struct Workspace<T> {
    activations: Vec<Vec<T>>,
    deltas: Vec<Vec<T>>,
}

impl<T: Real> MlpNetwork<T> {
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {layer_sizes:?}")));
        }
        let n = Self::count_weights(layer_sizes);
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights: vec![T::zero(); n],
            rprop: RpropState::default(),
        })
    }

    /// Weights uniform on `[-0.5, 0.5]`.
    pub fn random<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        for w in &mut net.weights {
            *w = T::lit(rng.random::<f64>() - 0.5);
        }
        Ok(net)
    }

    pub fn count_weights(layer_sizes: &[usize]) -> usize {
        layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated layer sizes")
    }

    /// `(offset, fan_in, fan_out)` of each weight block.
    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.layer_sizes.windows(2).map(move |w| {
            let start = offset;
            offset += (w[0] + 1) * w[1];
            (start, w[0], w[1])
        })
    }

    fn workspace(&self) -> Workspace<T> {
        Workspace {
            activations: self.layer_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            deltas: self.layer_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() == self.input_dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            })
        }
    }

    fn forward_into(&self, x: &[T], ws: &mut Workspace<T>) {
        ws.activations[0].copy_from_slice(x);
        for (l, (offset, fan_in, fan_out)) in self.layers().enumerate() {
            let (prev, next) = ws.activations.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut next[0];
            for j in 0..fan_out {
                let row = &self.weights[offset + j * (fan_in + 1)..offset + (j + 1) * (fan_in + 1)];
                let mut net = row[fan_in];
                for (w, a) in row[..fan_in].iter().zip(input) {
                    net += *w * *a;
                }
                out[j] = activation(net);
            }
        }
    }

    /// All output neuron values for `x`.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut ws = self.workspace();
        self.forward_into(x, &mut ws);
        Ok(ws.activations.pop().expect("output layer"))
    }

    /// `(o_willing, o_unwilling)` of a two-output network.
    pub fn forward_pair(&self, x: &[T]) -> Result<(T, T)> {
        if self.output_dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: self.output_dim(),
            });
        }
        let out = self.forward(x)?;
        Ok((out[0], out[1]))
    }

    pub fn predict(&self, x: &[T]) -> Result<Label> {
        let (w, u) = self.forward_pair(x)?;
        Ok(decide(w, u))
    }

    fn check_set(&self, set: &TrainingSet<T>) -> Result<()> {
        if set.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        if set.in_dim != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: set.in_dim });
        }
        if set.out_dim != self.output_dim() {
            return Err(Error::DimensionMismatch { expected: self.output_dim(), got: set.out_dim });
        }
        Ok(())
    }

    /// Backpropagated gradient of the batch-summed squared error.
    pub fn gradient_on(&self, set: &TrainingSet<T>) -> Result<Vec<T>> {
        self.check_set(set)?;
        let mut grad = vec![T::zero(); self.weights.len()];
        let mut ws = self.workspace();
        let layers: Vec<_> = self.layers().collect();
        let depth = layers.len();
        let two = T::lit(2.0);

        for n in 0..set.len() {
            self.forward_into(set.input(n), &mut ws);
            let target = set.target(n);
            for (k, (&o, &d)) in ws.activations[depth].iter().zip(target).enumerate() {
                ws.deltas[depth][k] = two * (o - d) * (T::one() - o * o);
            }
            for (l, &(offset, fan_in, fan_out)) in layers.iter().enumerate().rev() {
                for j in 0..fan_out {
                    let delta = ws.deltas[l + 1][j];
                    let base = offset + j * (fan_in + 1);
                    for (i, a) in ws.activations[l].iter().enumerate() {
                        grad[base + i] += delta * *a;
                    }
                    grad[base + fan_in] += delta;
                }
                if l > 0 {
                    for i in 0..fan_in {
                        let mut back = T::zero();
                        for j in 0..fan_out {
                            back += self.weights[offset + j * (fan_in + 1) + i] * ws.deltas[l + 1][j];
                        }
                        let a = ws.activations[l][i];
                        ws.deltas[l][i] = back * (T::one() - a * a);
                    }
                }
            }
        }
        Ok(grad)
    }

    pub fn gradient(&self, batch: &[Sample<T>]) -> Result<Vec<T>> {
        self.gradient_on(&TrainingSet::from_samples(batch)?)
    }

    /// Mean squared error over every output component of the set.
    pub fn mse_on(&self, set: &TrainingSet<T>) -> Result<T> {
        self.check_set(set)?;
        let mut ws = self.workspace();
        let depth = self.layer_sizes.len() - 1;
        let mut sum = T::zero();
        for n in 0..set.len() {
            self.forward_into(set.input(n), &mut ws);
            for (&o, &d) in ws.activations[depth].iter().zip(set.target(n)) {
                sum += (o - d) * (o - d);
            }
        }
        Ok(sum / T::lit((set.len() * set.out_dim) as f64))
    }

    /// One full-batch RPROP- epoch. Returns the MSE after the update.
    pub fn rprop_epoch(&mut self, set: &TrainingSet<T>, cfg: &RpropConfig<T>) -> Result<T> {
        let grad = self.gradient_on(set)?;
        if self.rprop.step.len() != self.weights.len() {
            self.rprop = RpropState {
                step: vec![cfg.delta_init; self.weights.len()],
                prev_grad: vec![T::zero(); self.weights.len()],
            };
        }
        let RpropState { step, prev_grad } = &mut self.rprop;
        for (((w, s), p), g) in self.weights.iter_mut().zip(step).zip(prev_grad).zip(grad) {
            *w += rprop_update(s, p, g, cfg);
        }
        self.mse_on(set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TrainingTrace<T> {
    /// Post-update MSE of every epoch.
    pub mse: Vec<T>,
    pub converged: bool,
}

impl<T: Real> TrainingTrace<T> {
    pub fn epochs(&self) -> usize {
        self.mse.len()
    }

    pub fn final_mse(&self) -> Option<T> {
        self.mse.last().copied()
    }
}

/// Trains a fresh network until the MSE reaches `cfg.mse_threshold` or
/// `cfg.max_epochs` run out. Running out is reported through
/// `TrainingTrace::converged`, not as an error.
pub fn train<T: Real, R: Rng + ?Sized>(
    layer_sizes: &[usize],
    samples: &[Sample<T>],
    cfg: &RpropConfig<T>,
    rng: &mut R,
) -> Result<(MlpNetwork<T>, TrainingTrace<T>)> {
    cfg.validate()?;
    let has = |l: Label| samples.iter().any(|s| s.label == l);
    if samples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if !(has(Label::Willing) && has(Label::Unwilling)) {
        return Err(Error::SingleClass);
    }
    let mut net = MlpNetwork::random(layer_sizes, rng)?;
    let set = TrainingSet::from_samples(samples)?;
    let trace = train_network(&mut net, &set, cfg)?;
    Ok((net, trace))
}

/// Runs RPROP epochs on an existing network.
pub fn train_network<T: Real>(
    net: &mut MlpNetwork<T>,
    set: &TrainingSet<T>,
    cfg: &RpropConfig<T>,
) -> Result<TrainingTrace<T>> {
    cfg.validate()?;
    let mut trace = TrainingTrace {
        mse: Vec::new(),
        converged: false,
    };
    for _ in 0..cfg.max_epochs {
        let e = net.rprop_epoch(set, cfg)?;
        trace.mse.push(e);
        if e <= cfg.mse_threshold {
            trace.converged = true;
            break;
        }
    }
    Ok(trace)
}

/// Persisted network: layer sizes, weights, training settings and a summary
/// of the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct MlpModelFile<T> {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<T>,
    pub rprop: RpropConfig<T>,
    pub epochs: usize,
    pub final_mse: Option<T>,
    pub converged: bool,
}

impl<T: Real> MlpModelFile<T> {
    pub fn new(net: &MlpNetwork<T>, cfg: &RpropConfig<T>, trace: &TrainingTrace<T>) -> Self {
        Self {
            layer_sizes: net.layer_sizes.clone(),
            weights: net.weights.clone(),
            rprop: cfg.clone(),
            epochs: trace.epochs(),
            final_mse: trace.final_mse(),
            converged: trace.converged,
        }
    }

    pub fn network(&self) -> Result<MlpNetwork<T>> {
        let mut net = MlpNetwork::zeros(&self.layer_sizes)?;
        if self.weights.len() != net.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: net.weights.len(),
                got: self.weights.len(),
            });
        }
        net.weights.copy_from_slice(&self.weights);
        Ok(net)
    }
}
