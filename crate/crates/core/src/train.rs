//! Mini-batch training and evaluation of invariant heads.
//!
//! Per-sample work (augmentation, forward, backward) fans out over a rayon
//! pool; gradients are reduced in sample order, so results do not depend on
//! the thread count. Augmentation draws come from a ChaCha stream keyed by
//! `(epoch, sample index)`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax, OptimizerKind, OptimizerState};
use crate::data::{augment, AugmentProtocol, Dataset, Split, Target, Task};
use crate::error::{Error, Result};
use crate::field::PointCloud;
use crate::network::{predict, record, NetworkConfig, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Anneal the learning rate along a half cosine to zero over the epochs.
    pub cosine_decay: bool,
    pub aug_train: AugmentProtocol,
    pub aug_test: AugmentProtocol,
    pub seed: u64,
    /// Worker threads; 0 uses rayon's default.
    pub threads: usize,
    /// Directory for `metrics.jsonl` and `checkpoint.json`.
    pub out: Option<PathBuf>,
    /// Stop after the epoch during which this much time has passed.
    pub time_budget: Option<Duration>,
}

impl RunConfig {
    pub fn new(network: NetworkConfig) -> Self {
        Self {
            network,
            epochs: 100,
            batch: 32,
            lr: 0.1,
            optimizer: OptimizerKind::Sgd,
            cosine_decay: false,
            aug_train: AugmentProtocol::None,
            aug_test: AugmentProtocol::None,
            seed: 0,
            threads: 0,
            out: None,
            time_budget: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("epochs and batch size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.network.output_order() != 0 {
            return Err(Error::Config(format!("invariant tasks need an even K, got {}", self.network.k_max)));
        }
        if self.network.head_widths.is_empty() {
            return Err(Error::Config("training needs a head".into()));
        }
        Ok(())
    }

    fn protocol(&self) -> String {
        format!("{}/{}", self.aug_train, self.aug_test)
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    /// Accuracy for classification, relative RMSE for regression.
    pub metric: f64,
    pub protocol: String,
    pub seed: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub history: Vec<EpochRecord>,
    pub epochs_run: usize,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: NetworkConfig,
    task: Task,
    params: Vec<f64>,
}

const CHECKPOINT_FORMAT: &str = "uninet-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// A trained network and the task its head was fitted to.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub task: Task,
    pub params: ParamSet,
}

impl Checkpoint {
    /// JSON: `{"format": "uninet-checkpoint", "version": 1, "config": {..},
    /// "task": {..}, "params": [..]}`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            task: self.task,
            params: self.params.values().to_vec(),
        };
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &file)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: CheckpointFile = serde_json::from_str(&text)?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                file.format,
                file.version
            )));
        }
        let params = ParamSet::from_flat(&file.config, file.params)?;
        Ok(Self { config: file.config, task: file.task, params })
    }
}

/// Per-output affine map between raw and standardised regression targets.
#[derive(Debug, Clone, PartialEq)]
struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    fn identity(k: usize) -> Self {
        Self { mean: vec![0.0; k], std: vec![1.0; k] }
    }

    fn fit(ds: &Dataset) -> Self {
        let Task::Regression { outputs } = ds.task() else {
            return Self::identity(ds.task().outputs());
        };
        let rows: Vec<&[f64]> = ds
            .samples()
            .iter()
            .filter_map(|(_, t)| match t {
                Target::Values(v) => Some(v.as_slice()),
                Target::Class(_) => None,
            })
            .collect();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; outputs];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; outputs];
        for r in &rows {
            for ((s, v), m) in std.iter_mut().zip(*r).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let std = std.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, std }
    }

    fn scale(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }

    /// Rewrites the head's last layer so it emits raw-unit targets.
    fn fold_into(&self, theta: &mut ParamSet) {
        let Some(last) = theta.layout().head.last().cloned() else { return };
        let values = theta.values_mut();
        for o in 0..last.n_out {
            let s = self.std[o];
            for w in &mut values[last.weights.start + o * last.n_in..last.weights.start + (o + 1) * last.n_in] {
                *w *= s;
            }
            let b = &mut values[last.bias.start + o];
            *b = *b * s + self.mean[o];
        }
    }
}

fn sample_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

fn prepare(x: &PointCloud, protocol: AugmentProtocol, rng: &mut ChaCha8Rng) -> PointCloud {
    augment(x, protocol, rng).centralize()
}

struct SampleResult {
    loss: f64,
    grad: Vec<f64>,
    output: Vec<f64>,
}

fn sample_loss_grad(
    x: &PointCloud,
    target: &Target,
    scaler: &Standardizer,
    cfg: &NetworkConfig,
    theta: &ParamSet,
) -> Result<SampleResult> {
    let mut rec = record(x, cfg, theta, true)?;
    let out = rec.output.expect("validated configs have a head");
    let loss = match target {
        Target::Class(c) => rec.tape.cross_entropy(out, *c)?,
        Target::Values(v) => rec.tape.mse(out, scaler.scale(v))?,
    };
    let value = rec.tape.vector(loss)?[0];
    let output = rec.tape.vector(out)?.to_vec();
    let grads = rec.tape.backward(loss)?;
    Ok(SampleResult { loss: value, grad: grads.into_params(), output })
}

/// Running loss and metric over a pass.
#[derive(Default)]
struct Tally {
    loss: f64,
    count: usize,
    correct: usize,
    sq_err: f64,
    sq_ref: f64,
}

impl Tally {
    fn add(&mut self, loss: f64, output: &[f64], target: &Target, scaler: &Standardizer) {
        self.loss += loss;
        self.count += 1;
        match target {
            Target::Class(c) => self.correct += usize::from(argmax(output) == *c),
            Target::Values(v) => {
                for ((o, y), (m, s)) in output.iter().zip(v).zip(scaler.mean.iter().zip(&scaler.std)) {
                    self.sq_err += (o * s + m - y).powi(2);
                    self.sq_ref += y * y;
                }
            }
        }
    }

    fn loss(&self) -> f64 {
        self.loss / self.count.max(1) as f64
    }

    fn metric(&self, task: Task) -> f64 {
        match task {
            Task::Classification { .. } => self.correct as f64 / self.count.max(1) as f64,
            Task::Regression { .. } => relative_rmse_from(self.sq_err, self.sq_ref),
        }
    }
}

fn relative_rmse_from(sq_err: f64, sq_ref: f64) -> f64 {
    if sq_ref > 0.0 {
        (sq_err / sq_ref).sqrt()
    } else {
        sq_err.sqrt()
    }
}

/// `|ŷ - y|_2 / |y|_2` over all outputs.
pub fn relative_rmse(pred: &[f64], truth: &[f64]) -> f64 {
    let e: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    let r: f64 = truth.iter().map(|t| t * t).sum();
    relative_rmse_from(e, r)
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
}

/// Gap between the largest and second largest entry.
pub fn top_margin(v: &[f64]) -> f64 {
    let best = argmax(v);
    let second = v.iter().enumerate().filter(|(i, _)| *i != best).map(|(_, x)| *x).fold(f64::NEG_INFINITY, f64::max);
    v[best] - second
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn check_task(cfg: &NetworkConfig, task: Task) -> Result<()> {
    let outputs = cfg.head_widths.last().copied().unwrap_or(0);
    if outputs != task.outputs() {
        return Err(Error::Config(format!("head has {outputs} outputs, the task needs {}", task.outputs())));
    }
    Ok(())
}

struct MetricsSink {
    writer: Option<BufWriter<File>>,
}

impl MetricsSink {
    fn open(out: Option<&Path>) -> Result<Self> {
        let writer = match out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Some(BufWriter::new(File::create(dir.join("metrics.jsonl"))?))
            }
            None => None,
        };
        Ok(Self { writer })
    }

    fn write(&mut self, rec: &EpochRecord) -> Result<()> {
        if let Some(w) = &mut self.writer {
            serde_json::to_writer(&mut *w, rec)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Ok(())
    }
}

/// Trains from the config's initialisation. Writes `metrics.jsonl` and the
/// final `checkpoint.json` when `run.out` is set; a non-finite loss stops the
/// run, saves the parameters from before the offending step and returns
/// [`Error::NonFinite`].
pub fn train(run: &RunConfig, train_set: &Dataset, test_set: Option<&Dataset>) -> Result<TrainOutcome> {
    train_with(run, train_set, test_set, |_| {})
}

/// [`train`] with a callback per metrics record.
pub fn train_with(
    run: &RunConfig,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    mut on_record: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    run.validate()?;
    check_task(&run.network, train_set.task())?;
    if train_set.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if let Some(t) = test_set {
        if t.task() != train_set.task() {
            return Err(Error::Data("train and test sets have different tasks".into()));
        }
    }
    let cfg = &run.network;
    let task = train_set.task();
    let scaler = Standardizer::fit(train_set);
    let mut theta = ParamSet::init(cfg)?;
    let mut opt = OptimizerState::new(run.optimizer, run.lr, theta.len());
    let mut sink = MetricsSink::open(run.out.as_deref())?;
    let workers = pool(run.threads)?;
    let start = Instant::now();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut history = Vec::new();
    let mut epochs_run = 0;

    for epoch in 1..=run.epochs {
        order.shuffle(&mut shuffle_rng);
        if run.cosine_decay {
            let progress = (epoch - 1) as f64 / run.epochs as f64;
            opt.lr = 0.5 * run.lr * (1.0 + (std::f64::consts::PI * progress).cos());
        }
        let mut tally = Tally::default();
        for batch in order.chunks(run.batch) {
            let results: Vec<Result<SampleResult>> = workers.install(|| {
                batch
                    .par_iter()
                    .map(|&i| {
                        let (x, target) = &train_set.samples()[i];
                        let x = prepare(x, run.aug_train, &mut sample_rng(run.seed, epoch, i));
                        sample_loss_grad(&x, target, &scaler, cfg, &theta)
                    })
                    .collect()
            });
            let mut grad = vec![0.0; theta.len()];
            let scale = 1.0 / batch.len() as f64;
            for (r, &i) in results.into_iter().zip(batch) {
                let r = r?;
                if !r.loss.is_finite() {
                    return Err(abort(run, &theta, task, &scaler, format!("non-finite loss at epoch {epoch}, sample {i}")));
                }
                tally.add(r.loss, &r.output, &train_set.samples()[i].1, &scaler);
                for (g, v) in grad.iter_mut().zip(&r.grad) {
                    *g += scale * v;
                }
            }
            if let Err(e) = opt.apply(theta.values_mut(), &grad) {
                return Err(abort(run, &theta, task, &scaler, format!("epoch {epoch}: {e}")));
            }
        }
        epochs_run = epoch;
        let mut records = vec![EpochRecord {
            epoch,
            split: Split::Train,
            loss: tally.loss(),
            metric: tally.metric(task),
            protocol: run.protocol(),
            seed: run.seed,
            wall_ms: start.elapsed().as_millis() as u64,
        }];
        if let Some(test) = test_set.filter(|t| !t.is_empty()) {
            let t = pass(test, run.aug_test, run.seed, cfg, &theta, &scaler, &workers, false)?;
            records.push(EpochRecord {
                epoch,
                split: Split::Test,
                loss: t.tally.loss(),
                metric: t.tally.metric(task),
                protocol: run.protocol(),
                seed: run.seed,
                wall_ms: start.elapsed().as_millis() as u64,
            });
        }
        for r in records {
            sink.write(&r)?;
            on_record(&r);
            history.push(r);
        }
        if run.time_budget.is_some_and(|b| start.elapsed() >= b) {
            break;
        }
    }

    scaler.fold_into(&mut theta);
    if let Some(dir) = &run.out {
        Checkpoint { config: cfg.clone(), task, params: theta.clone() }.save(&dir.join("checkpoint.json"))?;
    }
    Ok(TrainOutcome { params: theta, history, epochs_run, elapsed: start.elapsed() })
}

fn abort(run: &RunConfig, theta: &ParamSet, task: Task, scaler: &Standardizer, msg: String) -> Error {
    if let Some(dir) = &run.out {
        let mut last_good = theta.clone();
        scaler.fold_into(&mut last_good);
        let ckpt = Checkpoint { config: run.network.clone(), task, params: last_good };
        if let Err(e) = ckpt.save(&dir.join("checkpoint.json")) {
            return Error::NonFinite(format!("{msg}; saving the last good checkpoint failed: {e}"));
        }
        return Error::NonFinite(format!("{msg}; last good checkpoint saved to {}", dir.join("checkpoint.json").display()));
    }
    Error::NonFinite(msg)
}

struct Pass {
    tally: Tally,
    outputs: Vec<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn pass(
    ds: &Dataset,
    protocol: AugmentProtocol,
    seed: u64,
    cfg: &NetworkConfig,
    theta: &ParamSet,
    scaler: &Standardizer,
    workers: &rayon::ThreadPool,
    keep_outputs: bool,
) -> Result<Pass> {
    // stream 0 of the augmentation keys is never used by training epochs
    let outputs: Vec<Result<(f64, Vec<f64>)>> = workers.install(|| {
        ds.samples()
            .par_iter()
            .enumerate()
            .map(|(i, (x, target))| {
                let x = prepare(x, protocol, &mut sample_rng(seed, 0, i));
                let out = predict(&x, cfg, theta)?;
                let loss = match target {
                    Target::Class(c) => {
                        let p = softmax(&out);
                        -p[*c].max(f64::MIN_POSITIVE).ln()
                    }
                    Target::Values(v) => {
                        let t = scaler.scale(v);
                        out.iter().zip(&t).map(|(o, y)| (o - y).powi(2)).sum::<f64>() / t.len() as f64
                    }
                };
                Ok((loss, out))
            })
            .collect()
    });
    let mut tally = Tally::default();
    let mut kept = Vec::new();
    for (r, (_, target)) in outputs.into_iter().zip(ds.samples()) {
        let (loss, out) = r?;
        tally.add(loss, &out, target, scaler);
        if keep_outputs {
            kept.push(out);
        }
    }
    Ok(Pass { tally, outputs: kept })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Accuracy for classification, relative RMSE for regression.
    pub metric: f64,
    /// Head outputs per sample, in dataset order.
    pub outputs: Vec<Vec<f64>>,
}

impl Evaluation {
    pub fn predicted_labels(&self) -> Vec<usize> {
        self.outputs.iter().map(|o| argmax(o)).collect()
    }
}

/// Scores a trained network. The augmentation for sample `i` is drawn from
/// `(seed, i)`, so repeated calls see the same rotations.
pub fn evaluate(
    ckpt: &Checkpoint,
    ds: &Dataset,
    protocol: AugmentProtocol,
    seed: u64,
    threads: usize,
) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    if ckpt.task != ds.task() {
        return Err(Error::Config(format!("checkpoint was trained for {:?}, dataset is {:?}", ckpt.task, ds.task())));
    }
    check_task(&ckpt.config, ds.task())?;
    // checkpoints store raw-unit heads
    let scaler = Standardizer::identity(ds.task().outputs());
    let p = pass(ds, protocol, seed, &ckpt.config, &ckpt.params, &scaler, &pool(threads)?, true)?;
    Ok(Evaluation { loss: p.tally.loss(), metric: p.tally.metric(ds.task()), outputs: p.outputs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_shapes;

    fn small_run() -> RunConfig {
        let mut run = RunConfig::new(NetworkConfig::basic(2, 2).with_head(vec![4, 4]));
        run.epochs = 1;
        run.batch = 4;
        run.lr = 0.01;
        run.threads = 1;
        run
    }

    #[test]
    fn one_epoch_writes_one_line() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = small_run();
        run.out = Some(dir.path().to_path_buf());
        let ds = synth_shapes(0, 2, 16).unwrap();
        let outcome = train(&run, &ds, None).unwrap();
        assert_eq!(outcome.history.len(), 1);
        let text = fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 1);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["epoch", "loss", "metric", "protocol", "seed", "split", "wall_ms"]);
        let ckpt = Checkpoint::load(&dir.path().join("checkpoint.json")).unwrap();
        assert_eq!(ckpt.params, outcome.params);
    }

    #[test]
    fn reruns_are_bit_identical_across_thread_counts() {
        let ds = synth_shapes(1, 2, 16).unwrap();
        let mut run = small_run();
        run.aug_train = AugmentProtocol::So3;
        let a = train(&run, &ds, None).unwrap();
        let b = train(&run, &ds, None).unwrap();
        run.threads = 3;
        let c = train(&run, &ds, None).unwrap();
        assert_eq!(a.history[0].loss.to_bits(), b.history[0].loss.to_bits());
        assert_eq!(a.history[0].loss.to_bits(), c.history[0].loss.to_bits());
        assert_eq!(a.params, c.params);
    }

    #[test]
    fn standardizer_folds_into_head() {
        let cfg = NetworkConfig::basic(2, 1).with_head(vec![2]);
        let mut theta = ParamSet::init(&cfg).unwrap();
        let scaler = Standardizer { mean: vec![1.0, -2.0], std: vec![3.0, 0.5] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = PointCloud::random(5, 1.0, &mut rng).centralize();
        let before = predict(&x, &cfg, &theta).unwrap();
        scaler.fold_into(&mut theta);
        let after = predict(&x, &cfg, &theta).unwrap();
        assert!((after[0] - (3.0 * before[0] + 1.0)).abs() < 1e-12);
        assert!((after[1] - (0.5 * before[1] - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn single_step_descends_on_a_head_only_fit() {
        // K=2 with the p2 construction feeds a linear head: least squares in
        // the head weights, so one small step must lower the loss
        let cfg = NetworkConfig::basic(2, 1).with_head(vec![1]);
        let mut theta = crate::oracles::construct_p2_params(&cfg).unwrap();
        let head = theta.layout().head_range();
        theta.values_mut()[head.clone()].copy_from_slice(&[0.3, 0.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = PointCloud::random(6, 1.0, &mut rng).centralize();
        let target = Target::Values(vec![2.0]);
        let scaler = Standardizer::identity(1);
        let r0 = sample_loss_grad(&x, &target, &scaler, &cfg, &theta).unwrap();
        let mut opt = OptimizerState::sgd(1e-3);
        let mut masked = vec![0.0; theta.len()];
        masked[head.clone()].copy_from_slice(&r0.grad[head]);
        opt.apply(theta.values_mut(), &masked).unwrap();
        let r1 = sample_loss_grad(&x, &target, &scaler, &cfg, &theta).unwrap();
        assert!(r1.loss < r0.loss, "{} -> {}", r0.loss, r1.loss);
    }

    #[test]
    fn untrained_network_is_near_chance() {
        let cfg = NetworkConfig::basic(2, 4).with_extras(0, true, false).with_head(vec![8, 4]).with_seed(7);
        let ckpt = Checkpoint {
            params: ParamSet::init(&cfg).unwrap(),
            config: cfg,
            task: Task::Classification { classes: 4 },
        };
        let ds = synth_shapes(11, 50, 16).unwrap();
        assert_eq!(ds.len(), 200);
        let eval = evaluate(&ckpt, &ds, AugmentProtocol::So3, 0, 0).unwrap();
        assert!((eval.metric - 0.25).abs() <= 0.1, "{}", eval.metric);
    }

    #[test]
    fn evaluation_errors() {
        let cfg = NetworkConfig::basic(2, 1).with_head(vec![4]);
        let ckpt = Checkpoint {
            params: ParamSet::init(&cfg).unwrap(),
            config: cfg,
            task: Task::Classification { classes: 4 },
        };
        let empty = Dataset::new(vec![], Task::Classification { classes: 4 }, Split::Test).unwrap();
        assert!(evaluate(&ckpt, &empty, AugmentProtocol::None, 0, 1).is_err());
        let other = Dataset::new(
            vec![(PointCloud::new(vec![[0.0; 3]]).unwrap(), Target::Class(0))],
            Task::Classification { classes: 3 },
            Split::Test,
        )
        .unwrap();
        assert!(evaluate(&ckpt, &other, AugmentProtocol::None, 0, 1).is_err());
    }

    #[test]
    fn config_errors() {
        let mut run = small_run();
        run.epochs = 0;
        assert!(run.validate().is_err());
        let run = RunConfig::new(NetworkConfig::basic(3, 1));
        assert!(run.validate().is_err());
        let ds = synth_shapes(0, 1, 8).unwrap();
        let run = RunConfig::new(NetworkConfig::basic(2, 1).with_head(vec![3]));
        assert!(train(&run, &ds, None).is_err());
    }

    #[test]
    fn metric_helpers() {
        assert_eq!(argmax(&[0.1, 0.5, 0.2]), 1);
        assert!((top_margin(&[0.1, 0.5, 0.2]) - 0.3).abs() < 1e-15);
        assert!((relative_rmse(&[1.0, 1.0], &[1.0, 2.0]) - (1.0f64 / 5.0).sqrt()).abs() < 1e-15);
    }
}
