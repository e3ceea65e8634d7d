//! Source pretraining, the epoch-wise adaptation loop, evaluation and sweeps.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{gen_shifted_pair, Dataset, ShiftSpec};
use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, softmax_rows, Matrix, Rng};
use crate::losses::{im_loss, mixup_loss, pcc_loss, total_loss, LossToggles};
use crate::model::{Gradients, Model, OptState, Sgd};
use crate::pseudolabel::{polycentric_pseudolabels, Polycentric, PolycentricConfig, DEFAULT_MAX_ITERS, DEFAULT_TOL};

/// Learning-rate schedule over the whole run. `progress` runs from 0 at the
/// first step to 1 after the last.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LrSchedule {
    Constant,
    /// `lr · (1 + gamma · progress)^(−power)`.
    InverseDecay {
        gamma: f64,
        power: f64,
    },
}

impl LrSchedule {
    pub fn factor(&self, progress: f64) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::InverseDecay { gamma, power } => (1.0 + gamma * progress).powf(-power),
        }
    }
}

/// Every knob of the adaptation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Top-M selection ratio `r`.
    pub ratio: f64,
    /// Centers per class `P`.
    pub centers_per_class: usize,
    pub rounds: usize,
    /// Mixup coefficient `λ ~ Beta(alpha, alpha)`.
    pub alpha: f64,
    /// Weight of the mixup term.
    pub beta: f64,
    pub seed: u64,
    pub normalize_features: bool,
    pub toggles: LossToggles,
    pub freeze_classifier: bool,
    pub schedule: LrSchedule,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            momentum: 0.9,
            weight_decay: 1e-3,
            batch_size: 64,
            epochs: 30,
            ratio: 3.0,
            centers_per_class: 3,
            rounds: 2,
            alpha: 0.3,
            beta: 1.0,
            seed: 0,
            normalize_features: true,
            toggles: LossToggles::ALL,
            freeze_classifier: true,
            schedule: LrSchedule::Constant,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("lr", self.lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("beta", self.beta),
        ];
        for (name, v) in rates {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if self.alpha <= 0.0 || !self.alpha.is_finite() {
            return Err(Error::invalid(
                "alpha",
                format!("must be finite and > 0, got {}", self.alpha),
            ));
        }
        if self.ratio < 1.0 || !self.ratio.is_finite() {
            return Err(Error::invalid(
                "ratio",
                format!("must be finite and >= 1, got {}", self.ratio),
            ));
        }
        if self.centers_per_class == 0 {
            return Err(Error::invalid("centers_per_class", "must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        if !self.toggles.any() {
            return Err(Error::invalid("toggles", "at least one loss term must be enabled"));
        }
        if let LrSchedule::InverseDecay { gamma, power } = self.schedule {
            if !(gamma >= 0.0 && power >= 0.0) || !gamma.is_finite() || !power.is_finite() {
                return Err(Error::invalid("schedule", "gamma and power must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// The pseudo-labeling settings implied by this run, with its own k-means seed.
    pub fn pseudolabel_config(&self, seed: u64) -> PolycentricConfig {
        PolycentricConfig {
            centers_per_class: self.centers_per_class,
            ratio: self.ratio,
            rounds: self.rounds,
            normalize: self.normalize_features,
            kmeans_max_iters: DEFAULT_MAX_ITERS,
            kmeans_tol: DEFAULT_TOL,
            seed,
        }
    }
}

/// One line of the metrics stream.
///
/// Losses are sample-weighted means over the epoch's minibatches and are
/// reported for every term, active or not. Accuracies are `None` when the
/// target carries no labels; a class with no target samples has a `None`
/// per-class entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_im: f64,
    pub loss_pcc: f64,
    pub loss_mix: f64,
    pub loss_total: f64,
    pub target_acc: Option<f64>,
    pub pseudo_acc: Option<f64>,
    pub per_class_acc: Option<Vec<Option<f64>>>,
    pub mk_overlap: usize,
}

impl EpochMetrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics are always serializable")
    }
}

pub fn metrics_to_jsonl(metrics: &[EpochMetrics]) -> String {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&m.to_json());
        out.push('\n');
    }
    out
}

pub fn write_metrics(path: impl AsRef<Path>, metrics: &[EpochMetrics]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(metrics_to_jsonl(metrics).as_bytes())?;
    f.flush()?;
    Ok(())
}

/// Accuracy summary of a model on a labeled dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_class_acc: Vec<Option<f64>>,
    /// Unweighted mean over the classes that have samples.
    pub per_class_mean: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<Evaluation> {
    let truth = dataset
        .labels()
        .ok_or_else(|| Error::invalid("dataset", "evaluation needs labels"))?;
    check_compat(model, dataset)?;
    let pred = model.logits(dataset.x())?.argmax_rows();
    Ok(score_predictions(&pred, truth, dataset.class_count()))
}

pub fn score_predictions(pred: &[usize], truth: &[usize], class_count: usize) -> Evaluation {
    let mut confusion = vec![vec![0usize; class_count]; class_count];
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..class_count).map(|k| confusion[k][k]).sum();
    let per_class_acc: Vec<Option<f64>> = confusion
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| row[k] as f64 / total as f64)
        })
        .collect();
    let present: Vec<f64> = per_class_acc.iter().flatten().copied().collect();
    let per_class_mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    let accuracy = if truth.is_empty() {
        0.0
    } else {
        correct as f64 / truth.len() as f64
    };
    Evaluation {
        accuracy,
        per_class_acc,
        per_class_mean,
        confusion,
    }
}

fn check_compat(model: &Model, dataset: &Dataset) -> Result<()> {
    if model.input_dim() != dataset.dim() {
        return Err(Error::shape("input dimension", model.input_dim(), dataset.dim()));
    }
    if model.class_count() != dataset.class_count() {
        return Err(Error::shape("class count", model.class_count(), dataset.class_count()));
    }
    Ok(())
}

// Independent RNG streams of one adaptation run.
const STREAM_BATCHES: u64 = 0;
const STREAM_PSEUDO: u64 = 1;

/// Adapt a source model to an unlabeled target.
///
/// The classifier is frozen (unless `freeze_classifier` is off) and every
/// epoch starts by pseudo-labeling a snapshot of the whole target with the
/// current model. Minibatches are then visited in a fresh random order and
/// each one contributes one SGD step on the toggled objective, with the
/// mixup term computed against a seeded permutation of the same batch.
/// Target labels are only read for the metrics.
///
/// Batch order, mixup coefficients and pairings draw from
/// `Rng::child(cfg.seed, 0)`; each epoch's pseudo-labeling seed is the next
/// `u64` of `Rng::child(cfg.seed, 1)`.
pub fn adapt(source: &Model, target: &Dataset, cfg: &AdaptConfig) -> Result<(Model, Vec<EpochMetrics>)> {
    adapt_observed(source, target, cfg, &mut |_| {})
}

/// What [`adapt_observed`] reports while it runs.
#[derive(Debug)]
pub enum AdaptEvent<'a> {
    /// Before the epoch's first step: the model the pseudo-labels were
    /// computed from, the seed given to the pipeline and its output.
    EpochStart {
        epoch: usize,
        model: &'a Model,
        pseudolabel_seed: u64,
        pseudo: &'a Polycentric,
    },
    /// Before each SGD step: the target rows of the minibatch and the
    /// pseudo-labels the pcc term is trained against.
    Batch {
        epoch: usize,
        indices: &'a [usize],
        labels: &'a [usize],
    },
}

/// [`adapt`] with a callback for diagnostics.
pub fn adapt_observed(
    source: &Model,
    target: &Dataset,
    cfg: &AdaptConfig,
    observer: &mut dyn FnMut(AdaptEvent<'_>),
) -> Result<(Model, Vec<EpochMetrics>)> {
    cfg.validate()?;
    check_compat(source, target)?;
    if target.is_empty() {
        return Err(Error::invalid("target", "dataset is empty"));
    }
    let x = target.x();
    let n = x.rows();
    let truth = target.labels();
    let mut model = source.clone();
    model.set_classifier_frozen(cfg.freeze_classifier);
    let mut opt = OptState::new(&model);
    let mut sgd = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay)?;
    let mut rng = Rng::child(cfg.seed, STREAM_BATCHES);
    let mut pseudo_rng = Rng::child(cfg.seed, STREAM_PSEUDO);
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = (steps_per_epoch * cfg.epochs) as f64;
    let mut step = 0usize;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let snapshot = model.forward(x)?;
        let probs = softmax_rows(&snapshot.logits)?;
        let pseudolabel_seed = pseudo_rng.next_u64();
        let pseudo = polycentric_pseudolabels(&snapshot.features, &probs, &cfg.pseudolabel_config(pseudolabel_seed))?;
        let labels = &pseudo.labels.labels;
        observer(AdaptEvent::EpochStart {
            epoch,
            model: &model,
            pseudolabel_seed,
            pseudo: &pseudo,
        });

        let mut sums = [0.0f64; 4];
        let order = rng.permutation(n);
        for chunk in order.chunks(cfg.batch_size) {
            sgd.lr = cfg.lr * cfg.schedule.factor(step as f64 / total_steps);
            let xb = x.select_rows(chunk);
            let fwd = model.forward(&xb)?;
            let im = im_loss(&fwd.logits)?;
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            observer(AdaptEvent::Batch {
                epoch,
                indices: chunk,
                labels: &yb,
            });
            let pcc = pcc_loss(&fwd.logits, &yb)?;

            let lambda = rng.sample_beta(cfg.alpha)?;
            let perm = rng.permutation(chunk.len());
            let probs_i = softmax_rows(&fwd.logits)?;
            let probs_j = probs_i.select_rows(&perm);
            let mut x_mix = xb.clone();
            x_mix.scale(lambda);
            x_mix.add_scaled(&xb.select_rows(&perm), 1.0 - lambda)?;
            let fwd_mix = model.forward(&x_mix)?;
            let mix = mixup_loss(&probs_i, &probs_j, &fwd_mix.logits, lambda)?;

            let total = total_loss(&im, &pcc, &mix, cfg.beta, cfg.toggles)?;
            let mut grads = model.backward_from(&fwd, &total.batch_grad)?;
            if cfg.toggles.mix {
                grads.accumulate(&model.backward_from(&fwd_mix, &total.mix_grad)?)?;
            }
            sgd.step(&mut model, &grads, &mut opt)?;
            step += 1;

            let w = chunk.len() as f64;
            for (s, v) in sums.iter_mut().zip([im.value, pcc.value, mix.value, total.value]) {
                *s += w * v;
            }
        }

        let [loss_im, loss_pcc, loss_mix, loss_total] = sums.map(|s| s / n as f64);
        let (target_acc, per_class_acc, pseudo_acc) = match truth {
            Some(truth) => {
                let pred = model.logits(x)?.argmax_rows();
                let ev = score_predictions(&pred, truth, target.class_count());
                (
                    Some(ev.accuracy),
                    Some(ev.per_class_acc),
                    Some(pseudo.labels.accuracy(truth)),
                )
            }
            None => (None, None, None),
        };
        let m = EpochMetrics {
            epoch,
            loss_im,
            loss_pcc,
            loss_mix,
            loss_total,
            target_acc,
            pseudo_acc,
            per_class_acc,
            mk_overlap: pseudo.mk_overlap(),
        };
        log::debug!("{}", m.to_json());
        history.push(m);
    }
    Ok((model, history))
}

/// Layer sizes of the network. The input size comes from the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub class_count: usize,
}

impl Arch {
    /// `input → 64 → 64 → 32 features → K logits`.
    pub fn standard(class_count: usize) -> Self {
        Self {
            hidden: vec![64, 64],
            feature_dim: 32,
            class_count,
        }
    }
}

/// Source training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Fraction of the source held out for the reported test accuracy.
    pub test_fraction: f64,
    /// Mass moved from the true class to a uniform target; 0 means plain
    /// cross-entropy.
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-2,
            momentum: 0.9,
            weight_decay: 1e-3,
            batch_size: 64,
            test_fraction: 0.2,
            label_smoothing: 0.0,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        Sgd::new(self.lr, self.momentum, self.weight_decay)?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::invalid("test_fraction", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.label_smoothing) {
            return Err(Error::invalid("label_smoothing", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pretrained {
    pub model: Model,
    pub train_acc: f64,
    /// `None` when nothing was held out.
    pub test_acc: Option<f64>,
}

const STREAM_SPLIT: u64 = 0;
const STREAM_INIT: u64 = 1;
const STREAM_ORDER: u64 = 2;

/// Train a fresh model on labeled source data by minibatch SGD on
/// cross-entropy. The classifier is trained too.
///
/// The hold-out split, the initialization and the batch order draw from
/// streams 0, 1 and 2 of `hp.seed`. With `epochs = 0` the result is exactly
/// `Model::init` on stream 1.
pub fn pretrain_source(source: &Dataset, arch: &Arch, hp: &PretrainConfig) -> Result<Pretrained> {
    hp.validate()?;
    let labels = source
        .labels()
        .ok_or_else(|| Error::invalid("source", "pretraining needs labels"))?;
    if arch.class_count != source.class_count() {
        return Err(Error::shape("class count", arch.class_count, source.class_count()));
    }
    let n = source.len();
    let mut idx = Rng::child(hp.seed, STREAM_SPLIT).permutation(n);
    let n_test = (n as f64 * hp.test_fraction).floor() as usize;
    let train_idx = idx.split_off(n_test);
    let test_idx = idx;
    if train_idx.is_empty() {
        return Err(Error::invalid("source", "no training samples after the hold-out split"));
    }

    let mut init_rng = Rng::child(hp.seed, STREAM_INIT);
    let mut model = Model::init(
        source.dim(),
        &arch.hidden,
        arch.feature_dim,
        arch.class_count,
        &mut init_rng,
    )?;
    let sgd = Sgd::new(hp.lr, hp.momentum, hp.weight_decay)?;
    let mut opt = OptState::new(&model);
    let mut rng = Rng::child(hp.seed, STREAM_ORDER);
    let x = source.x();
    let k = arch.class_count;
    for _ in 0..hp.epochs {
        let mut order = train_idx.clone();
        rng.shuffle(&mut order);
        for chunk in order.chunks(hp.batch_size) {
            let xb = x.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let fwd = model.forward(&xb)?;
            let grad = smoothed_ce_grad(&fwd.logits, &yb, hp.label_smoothing, k)?;
            let grads: Gradients = model.backward_from(&fwd, &grad)?;
            sgd.step(&mut model, &grads, &mut opt)?;
        }
    }

    let acc = |rows: &[usize]| -> Result<f64> {
        let pred = model.logits(&x.select_rows(rows))?.argmax_rows();
        let correct = rows.iter().zip(&pred).filter(|(&i, &p)| labels[i] == p).count();
        Ok(correct as f64 / rows.len() as f64)
    };
    let train_acc = acc(&train_idx)?;
    let test_acc = if test_idx.is_empty() {
        None
    } else {
        Some(acc(&test_idx)?)
    };
    Ok(Pretrained {
        model,
        train_acc,
        test_acc,
    })
}

/// Gradient of mean cross-entropy against `(1 − ε)·onehot + ε/K`.
fn smoothed_ce_grad(logits: &Matrix, labels: &[usize], eps: f64, k: usize) -> Result<Matrix> {
    let b = logits.rows() as f64;
    let mut grad = softmax_rows(logits)?;
    for (i, &y) in labels.iter().enumerate() {
        let row = grad.row_mut(i);
        for (j, g) in row.iter_mut().enumerate() {
            let q = eps / k as f64 + if j == y { 1.0 - eps } else { 0.0 };
            *g = (*g - q) / b;
        }
    }
    Ok(grad)
}

/// Mean cross-entropy of a model on labeled data (diagnostics).
pub fn cross_entropy(model: &Model, dataset: &Dataset) -> Result<f64> {
    let labels = dataset
        .labels()
        .ok_or_else(|| Error::invalid("dataset", "cross-entropy needs labels"))?;
    let logits = model.logits(dataset.x())?;
    let total: f64 = logits
        .iter_rows()
        .zip(labels)
        .map(|(z, &y)| log_sum_exp(z) - z[y])
        .sum();
    Ok(total / labels.len().max(1) as f64)
}

/// A source model trained for one seed of a benchmark, with the target it
/// will be adapted to.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub seed: u64,
    pub source: Pretrained,
    pub target: Dataset,
    pub source_only: Evaluation,
}

/// Generate the benchmark pair for `seed`, pretrain on the source and
/// score the source model on the target.
pub fn prepare(spec: &ShiftSpec, arch: &Arch, hp: &PretrainConfig, seed: u64) -> Result<Prepared> {
    let spec = ShiftSpec { seed, ..spec.clone() };
    let (src, tgt) = gen_shifted_pair(&spec)?;
    let hp = PretrainConfig { seed, ..hp.clone() };
    let source = pretrain_source(&src, arch, &hp)?;
    let source_only = evaluate(&source.model, &tgt)?;
    Ok(Prepared {
        seed,
        source,
        target: tgt,
        source_only,
    })
}

/// Prepare several seeds, in parallel when a thread pool is available.
pub fn prepare_all(spec: &ShiftSpec, arch: &Arch, hp: &PretrainConfig, seeds: &[u64]) -> Result<Vec<Prepared>> {
    seeds.par_iter().map(|&s| prepare(spec, arch, hp, s)).collect()
}

/// Final target accuracy of one adaptation run.
pub fn adapt_accuracy(prep: &Prepared, cfg: &AdaptConfig) -> Result<f64> {
    let cfg = AdaptConfig {
        seed: prep.seed,
        ..cfg.clone()
    };
    let (model, _) = adapt(&prep.source.model, &prep.target, &cfg)?;
    Ok(evaluate(&model, &prep.target)?.accuracy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    CentersPerClass,
    Beta,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::CentersPerClass => "P",
            SweepParam::Beta => "beta",
        }
    }

    pub fn apply(&self, cfg: &AdaptConfig, value: f64) -> Result<AdaptConfig> {
        let mut cfg = cfg.clone();
        match self {
            SweepParam::CentersPerClass => {
                if value.is_nan() || value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::invalid("P", format!("must be a positive integer, got {value}")));
                }
                cfg.centers_per_class = value as usize;
            }
            SweepParam::Beta => cfg.beta = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    /// Final target accuracy per seed, in seed order.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl SweepRow {
    pub fn from_accuracies(value: f64, accuracies: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&accuracies);
        Self {
            value,
            accuracies,
            mean,
            std,
        }
    }
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
    (mean, var.sqrt())
}

/// Adapt every prepared seed once per value of `param`.
pub fn sweep(param: SweepParam, values: &[f64], base: &AdaptConfig, prepared: &[Prepared]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::invalid("values", "sweep needs at least one value"));
    }
    values
        .iter()
        .map(|&value| {
            let cfg = param.apply(base, value)?;
            let accs = prepared
                .par_iter()
                .map(|p| adapt_accuracy(p, &cfg))
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepRow::from_accuracies(value, accs))
        })
        .collect()
}

/// Plain-text table of sweep results, one row per value.
pub fn format_sweep(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut out = format!("{:>8}  {:>8}  {:>8}\n", param.name(), "mean", "std");
    for r in rows {
        out.push_str(&format!("{:>8}  {:>8.4}  {:>8.4}\n", r.value, r.mean, r.std));
    }
    out
}
