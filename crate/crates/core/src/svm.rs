//! Soft-margin RBF support vector machine.
//!
//! The dual
//!
//! ```text
//! max  W(a) = sum_i a_i - 1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j)
//! s.t. 0 <= a_i <= C,  sum_i a_i y_i = 0
//! ```
//!
//! is solved by sequential minimal optimization: each step picks the maximal
//! violating pair with second-order working-set selection and solves the
//! two-variable subproblem in closed form. Slack variables never appear; they
//! live in the box bound `C`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{FeatureVector, Label, Sample};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `exp(-gamma * |a - b|^2)`.
pub fn rbf_kernel<T: Real>(a: &[T], b: &[T], gamma: T) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if !(gamma > T::zero()) {
        return Err(Error::OutOfRange(format!("gamma must be positive, got {gamma}")));
    }
    Ok((-gamma * sq_dist(a, b)).exp())
}

#[inline]
fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .fold(T::zero(), |acc, v| acc + v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SmoConfig<T> {
    /// Stop once the maximal KKT violation gap drops below this.
    pub kkt_tolerance: T,
    /// Iteration budget in units of the training-set size.
    pub max_passes: usize,
    /// Floor for the curvature of a degenerate pair.
    pub numeric_eps: T,
}

impl<T: Real> Default for SmoConfig<T> {
    fn default() -> Self {
        Self {
            kkt_tolerance: T::lit(1e-3),
            max_passes: 100,
            numeric_eps: T::lit(1e-12),
        }
    }
}

impl<T: Real> SmoConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.kkt_tolerance > T::zero()) || !(self.numeric_eps > T::zero()) {
            return Err(Error::Config("SMO tolerances must be positive".into()));
        }
        if self.max_passes == 0 {
            return Err(Error::Config("max_passes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SvmModel<T> {
    pub support_vectors: Vec<FeatureVector<T>>,
    pub sv_labels: Vec<Label>,
    pub alphas: Vec<T>,
    pub bias: T,
    pub gamma: T,
    pub c: T,
    /// Position of each support vector in the training set.
    #[serde(default)]
    pub sv_indices: Vec<usize>,
    #[serde(default)]
    pub iterations: usize,
    #[serde(default = "default_true")]
    pub converged: bool,
}

fn default_true() -> bool {
    true
}

impl<T: Real> SvmModel<T> {
    /// `sum_i a_i y_i K(x, x_i) + b`.
    pub fn decision_value(&self, x: &[T]) -> Result<T> {
        let mut acc = self.bias;
        for ((sv, &label), &a) in self.support_vectors.iter().zip(&self.sv_labels).zip(&self.alphas) {
            acc += a * label.sign::<T>() * rbf_kernel(x, sv.as_slice(), self.gamma)?;
        }
        Ok(acc)
    }

    pub fn classify(&self, x: &[T]) -> Result<Label> {
        Ok(classify_value(self.decision_value(x)?))
    }

    /// `sum_i a_i y_i` over the stored support vectors.
    pub fn equality_residual(&self) -> T {
        self.alphas
            .iter()
            .zip(&self.sv_labels)
            .map(|(&a, l)| a * l.sign::<T>())
            .fold(T::zero(), |acc, v| acc + v)
    }

    /// Full multiplier vector over a training set of `n` samples.
    pub fn dense_alphas(&self, n: usize) -> Vec<T> {
        let mut out = vec![T::zero(); n];
        for (&i, &a) in self.sv_indices.iter().zip(&self.alphas) {
            out[i] = a;
        }
        out
    }
}

/// Positive decision values are willing; zero and below are unwilling.
pub fn classify_value<T: Real>(value: T) -> Label {
    Label::from_bool(value > T::zero())
}

/// Dense symmetric kernel matrix.
#[derive(Debug, Clone)]
pub struct KernelMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> KernelMatrix<T> {
    pub fn from_sq_dists(d2: &SquaredDistances<T>, gamma: T) -> Self {
        Self {
            n: d2.n,
            data: d2.data.iter().map(|&d| (-gamma * d).exp()).collect(),
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Pairwise squared distances, shared across the gamma grid.
#[derive(Debug, Clone)]
pub struct SquaredDistances<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> SquaredDistances<T> {
    pub fn new(points: &[&[T]]) -> Self {
        let n = points.len();
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = sq_dist(points[i], points[j]);
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        Self { n, data }
    }
}

/// SMO state over the subset `idx` of a kernel matrix.
pub(crate) struct Solver<'a, T> {
    kernel: &'a KernelMatrix<T>,
    idx: &'a [usize],
    y: Vec<T>,
    alpha: Vec<T>,
    /// Gradient of the minimization form `1/2 a'Qa - e'a`.
    grad: Vec<T>,
    c: T,
    cfg: &'a SmoConfig<T>,
}

impl<'a, T: Real> Solver<'a, T> {
    pub(crate) fn new(
        kernel: &'a KernelMatrix<T>,
        idx: &'a [usize],
        labels: &[Label],
        c: T,
        cfg: &'a SmoConfig<T>,
    ) -> Self {
        let l = idx.len();
        Self {
            kernel,
            idx,
            y: labels.iter().map(|l| l.sign()).collect(),
            alpha: vec![T::zero(); l],
            grad: vec![-T::one(); l],
            c,
            cfg,
        }
    }

    #[inline]
    fn k(&self, i: usize, j: usize) -> T {
        self.kernel.get(self.idx[i], self.idx[j])
    }

    fn in_up(&self, t: usize) -> bool {
        (self.y[t] > T::zero() && self.alpha[t] < self.c) || (self.y[t] < T::zero() && self.alpha[t] > T::zero())
    }

    fn in_low(&self, t: usize) -> bool {
        (self.y[t] < T::zero() && self.alpha[t] < self.c) || (self.y[t] > T::zero() && self.alpha[t] > T::zero())
    }

    /// Largest `m(a) - M(a)`; zero means the KKT conditions hold exactly.
    #[cfg(test)]
    pub(crate) fn violation_gap(&self) -> T {
        let (mut up, mut low) = (T::neg_infinity(), T::infinity());
        for t in 0..self.alpha.len() {
            let v = -self.y[t] * self.grad[t];
            if self.in_up(t) {
                up = up.max(v);
            }
            if self.in_low(t) {
                low = low.min(v);
            }
        }
        up - low
    }

    /// Second-order working-set selection. `None` when optimal to tolerance.
    fn select(&self) -> Option<(usize, usize)> {
        let l = self.alpha.len();
        let mut i = usize::MAX;
        let mut gmax = T::neg_infinity();
        for t in 0..l {
            if self.in_up(t) {
                let v = -self.y[t] * self.grad[t];
                if v >= gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        if i == usize::MAX {
            return None;
        }
        let mut j = usize::MAX;
        let mut gmin = T::infinity();
        let mut best = T::infinity();
        let k_ii = self.k(i, i);
        for t in 0..l {
            if !self.in_low(t) {
                continue;
            }
            let v = -self.y[t] * self.grad[t];
            gmin = gmin.min(v);
            let b = gmax - v;
            if b > T::zero() {
                let mut a = k_ii + self.k(t, t) - T::lit(2.0) * self.k(i, t);
                if a <= T::zero() {
                    a = self.cfg.numeric_eps;
                }
                let score = -(b * b) / a;
                if score <= best {
                    best = score;
                    j = t;
                }
            }
        }
        if j == usize::MAX || gmax - gmin < self.cfg.kkt_tolerance {
            None
        } else {
            Some((i, j))
        }
    }

    /// Solves one two-variable subproblem. Returns false at convergence.
    pub(crate) fn step(&mut self) -> bool {
        let Some((i, j)) = self.select() else {
            return false;
        };
        let c = self.c;
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let mut quad = self.k(i, i) + self.k(j, j) - T::lit(2.0) * self.k(i, j);
        if quad <= T::zero() {
            quad = self.cfg.numeric_eps;
        }
        let (mut ai, mut aj) = (old_i, old_j);
        if self.y[i] != self.y[j] {
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > T::zero() {
                if aj < T::zero() {
                    aj = T::zero();
                    ai = diff;
                }
            } else if ai < T::zero() {
                ai = T::zero();
                aj = -diff;
            }
            if diff > T::zero() {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < T::zero() {
                aj = T::zero();
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < T::zero() {
                ai = T::zero();
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        let (yi, yj) = (self.y[i], self.y[j]);
        for t in 0..self.alpha.len() {
            let yt = self.y[t];
            let delta = yt * yi * self.k(t, i) * di + yt * yj * self.k(t, j) * dj;
            self.grad[t] += delta;
        }
        true
    }

    /// `W(a)` of the current iterate.
    #[cfg(test)]
    pub(crate) fn objective(&self) -> T {
        // W = -f with f(a) = 1/2 sum_i a_i (G_i - 1).
        let half = T::lit(0.5);
        -self
            .alpha
            .iter()
            .zip(&self.grad)
            .map(|(&a, &g)| half * a * (g - T::one()))
            .fold(T::zero(), |acc, v| acc + v)
    }

    /// Bias averaged over free multipliers, or the midpoint of the feasible
    /// interval when every multiplier sits on a bound.
    fn bias(&self) -> T {
        let (mut ub, mut lb) = (T::infinity(), T::neg_infinity());
        let (mut sum_free, mut n_free) = (T::zero(), 0usize);
        for t in 0..self.alpha.len() {
            let yg = self.y[t] * self.grad[t];
            let positive = self.y[t] > T::zero();
            if self.alpha[t] >= self.c {
                if positive {
                    lb = lb.max(yg);
                } else {
                    ub = ub.min(yg);
                }
            } else if self.alpha[t] <= T::zero() {
                if positive {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        let rho = if n_free > 0 {
            sum_free / T::lit(n_free as f64)
        } else {
            (ub + lb) * T::lit(0.5)
        };
        -rho
    }

    pub(crate) fn alphas(&self) -> &[T] {
        &self.alpha
    }

    /// Runs to convergence or the iteration budget. Returns `(iterations, converged)`.
    pub(crate) fn run(&mut self) -> (usize, bool) {
        let budget = self.cfg.max_passes.saturating_mul(self.alpha.len().max(1));
        let mut iterations = 0;
        while iterations < budget {
            if !self.step() {
                return (iterations, true);
            }
            iterations += 1;
        }
        (iterations, self.select().is_none())
    }
}

fn check_two_classes<T>(samples: &[Sample<T>]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let pos = samples.iter().any(|s| s.label == Label::Willing);
    let neg = samples.iter().any(|s| s.label == Label::Unwilling);
    if pos && neg {
        Ok(())
    } else {
        Err(Error::SingleClass)
    }
}

fn check_hyper<T: Real>(c: T, gamma: T) -> Result<()> {
    if !(c > T::zero()) || !(gamma > T::zero()) {
        return Err(Error::OutOfRange(format!("C and gamma must be positive, got {c}, {gamma}")));
    }
    Ok(())
}

/// Fits the model on the subset `idx` of a precomputed kernel matrix.
fn fit_subset<T: Real>(
    samples: &[Sample<T>],
    kernel: &KernelMatrix<T>,
    idx: &[usize],
    c: T,
    gamma: T,
    cfg: &SmoConfig<T>,
) -> SvmModel<T> {
    let labels: Vec<Label> = idx.iter().map(|&i| samples[i].label).collect();
    let mut solver = Solver::new(kernel, idx, &labels, c, cfg);
    let (iterations, converged) = solver.run();
    let bias = solver.bias();
    let mut model = SvmModel {
        support_vectors: Vec::new(),
        sv_labels: Vec::new(),
        alphas: Vec::new(),
        bias,
        gamma,
        c,
        sv_indices: Vec::new(),
        iterations,
        converged,
    };
    for (t, &a) in solver.alphas().iter().enumerate() {
        if a > T::zero() {
            model.support_vectors.push(samples[idx[t]].features.clone());
            model.sv_labels.push(labels[t]);
            model.alphas.push(a);
            model.sv_indices.push(idx[t]);
        }
    }
    model
}

/// Trains on the whole of `samples`. A run that exhausts its iteration budget
/// returns the last iterate with `converged == false`.
pub fn smo_train<T: Real>(samples: &[Sample<T>], c: T, gamma: T, cfg: &SmoConfig<T>) -> Result<SvmModel<T>> {
    cfg.validate()?;
    check_hyper(c, gamma)?;
    check_two_classes(samples)?;
    let dim = samples[0].features.len();
    if let Some(bad) = samples.iter().find(|s| s.features.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: bad.features.len() });
    }
    let points: Vec<&[T]> = samples.iter().map(|s| s.features.as_slice()).collect();
    let kernel = KernelMatrix::from_sq_dists(&SquaredDistances::new(&points), gamma);
    let idx: Vec<usize> = (0..samples.len()).collect();
    Ok(fit_subset(samples, &kernel, &idx, c, gamma, cfg))
}

/// `W(a)` for explicit multipliers.
pub fn dual_objective<T: Real>(samples: &[Sample<T>], alphas: &[T], gamma: T) -> Result<T> {
    if samples.len() != alphas.len() {
        return Err(Error::LengthMismatch { left: samples.len(), right: alphas.len() });
    }
    let mut linear = T::zero();
    let mut quad = T::zero();
    for (i, si) in samples.iter().enumerate() {
        linear += alphas[i];
        for (j, sj) in samples.iter().enumerate() {
            let k = rbf_kernel(si.features.as_slice(), sj.features.as_slice(), gamma)?;
            quad += alphas[i] * alphas[j] * si.label.sign::<T>() * sj.label.sign::<T>() * k;
        }
    }
    Ok(linear - T::lit(0.5) * quad)
}

/// Largest violation of the soft-margin KKT conditions over the training set:
/// `y f(x) >= 1` at `a = 0`, `y f(x) = 1` for free multipliers and
/// `y f(x) <= 1` at `a = C`.
pub fn kkt_violation<T: Real>(model: &SvmModel<T>, samples: &[Sample<T>]) -> Result<T> {
    let alphas = model.dense_alphas(samples.len());
    let mut worst = T::zero();
    for (s, &a) in samples.iter().zip(&alphas) {
        let margin = s.label.sign::<T>() * model.decision_value(s.features.as_slice())?;
        let v = if a <= T::zero() {
            (T::one() - margin).max(T::zero())
        } else if a >= model.c {
            (margin - T::one()).max(T::zero())
        } else {
            (margin - T::one()).abs()
        };
        worst = worst.max(v);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GridSearchSpec<T> {
    pub c_grid: Vec<T>,
    pub gamma_grid: Vec<T>,
    pub folds: usize,
}

fn powers_of_two<T: Real>(exponents: impl Iterator<Item = i32>) -> Vec<T> {
    exponents.map(|e| T::lit(2f64.powi(e))).collect()
}

impl<T: Real> Default for GridSearchSpec<T> {
    /// `C` in `2^-3 .. 2^7` and `gamma` in `2^-7 .. 2^3`, both in steps of
    /// two octaves, three folds.
    fn default() -> Self {
        Self {
            c_grid: powers_of_two((-3..=7).step_by(2)),
            gamma_grid: powers_of_two((-7..=3).step_by(2)),
            folds: 3,
        }
    }
}

impl<T: Real> GridSearchSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if self.c_grid.is_empty() || self.gamma_grid.is_empty() {
            return Err(Error::Config("grid search needs non-empty C and gamma grids".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("grid search needs at least two folds".into()));
        }
        for &v in self.c_grid.iter().chain(&self.gamma_grid) {
            check_hyper(v, v)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CvCell<T> {
    pub c: T,
    pub gamma: T,
    pub fold_accuracy: Vec<T>,
    pub mean_accuracy: T,
    /// Out-of-fold prediction for every sample.
    pub predictions: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CvReport<T> {
    pub best_c: T,
    pub best_gamma: T,
    pub best_accuracy: T,
    /// Fold id of every sample.
    pub folds: Vec<usize>,
    pub cells: Vec<CvCell<T>>,
}

/// Stratified fold ids: each class is shuffled and dealt round-robin.
pub fn stratified_folds<R: Rng + ?Sized>(labels: &[Label], folds: usize, rng: &mut R) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config("need at least two folds".into()));
    }
    let mut assignment = vec![0; labels.len()];
    for class in [Label::Willing, Label::Unwilling] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < folds {
            return Err(Error::TooSmall { got: members.len(), folds });
        }
        members.shuffle(rng);
        for (k, &i) in members.iter().enumerate() {
            assignment[i] = k % folds;
        }
    }
    Ok(assignment)
}

/// Grid search over `(C, gamma)` scored by mean fold accuracy. Ties go to
/// the smaller `C`, then the smaller `gamma`.
pub fn cross_validate<T: Real, R: Rng + ?Sized>(
    samples: &[Sample<T>],
    spec: &GridSearchSpec<T>,
    cfg: &SmoConfig<T>,
    rng: &mut R,
) -> Result<CvReport<T>> {
    spec.validate()?;
    cfg.validate()?;
    if samples.len() < spec.folds {
        return Err(Error::TooSmall { got: samples.len(), folds: spec.folds });
    }
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let folds = stratified_folds(&labels, spec.folds, rng)?;
    let points: Vec<&[T]> = samples.iter().map(|s| s.features.as_slice()).collect();
    let d2 = SquaredDistances::new(&points);

    let mut c_order: Vec<T> = spec.c_grid.clone();
    c_order.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    let mut g_order: Vec<T> = spec.gamma_grid.clone();
    g_order.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));

    let fold_sets: Vec<(Vec<usize>, Vec<usize>)> = (0..spec.folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..samples.len()).partition(|&i| folds[i] == f);
            (train, test)
        })
        .collect();

    let mut cells = Vec::with_capacity(c_order.len() * g_order.len());
    let kernels: Vec<KernelMatrix<T>> = g_order.iter().map(|&g| KernelMatrix::from_sq_dists(&d2, g)).collect();
    for &c in &c_order {
        for (&gamma, kernel) in g_order.iter().zip(&kernels) {
            let mut predictions = vec![Label::Unwilling; samples.len()];
            let mut fold_accuracy = Vec::with_capacity(spec.folds);
            for (train, test) in &fold_sets {
                let model = fit_subset(samples, kernel, train, c, gamma, cfg);
                let mut correct = 0usize;
                for &t in test {
                    let mut value = model.bias;
                    for ((&sv, &a), label) in model.sv_indices.iter().zip(&model.alphas).zip(&model.sv_labels) {
                        value += a * label.sign::<T>() * kernel.get(sv, t);
                    }
                    let predicted = classify_value(value);
                    predictions[t] = predicted;
                    correct += usize::from(predicted == samples[t].label);
                }
                fold_accuracy.push(T::lit(correct as f64 / test.len() as f64));
            }
            let mean_accuracy =
                fold_accuracy.iter().fold(T::zero(), |acc, &v| acc + v) / T::lit(spec.folds as f64);
            cells.push(CvCell {
                c,
                gamma,
                fold_accuracy,
                mean_accuracy,
                predictions,
            });
        }
    }

    // Cells are in ascending (C, gamma) order; strict improvement keeps the
    // first of equal scores.
    let mut best = 0;
    for (k, cell) in cells.iter().enumerate() {
        if cell.mean_accuracy > cells[best].mean_accuracy {
            best = k;
        }
    }
    Ok(CvReport {
        best_c: cells[best].c,
        best_gamma: cells[best].gamma,
        best_accuracy: cells[best].mean_accuracy,
        folds,
        cells,
    })
}

/// Cross-validates, then refits the best cell on all of `samples`.
pub fn train_with_grid_search<T: Real, R: Rng + ?Sized>(
    samples: &[Sample<T>],
    spec: &GridSearchSpec<T>,
    cfg: &SmoConfig<T>,
    rng: &mut R,
) -> Result<(SvmModel<T>, CvReport<T>)> {
    check_two_classes(samples)?;
    let report = cross_validate(samples, spec, cfg, rng)?;
    let model = smo_train(samples, report.best_c, report.best_gamma, cfg)?;
    Ok((model, report))
}

#[cfg(test)]
#[path = "../tests/common/qp_oracle.rs"]
mod qp_oracle;
