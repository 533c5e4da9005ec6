//! Ready-made training recipes: regressing covariance invariants from random
//! clouds, classifying the synthetic shapes, and comparing depths on them.
//! The command-line tool and the examples are thin wrappers around these.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::OptimizerKind;
use crate::data::{synth_shapes, AugmentProtocol, Dataset, Split, Target, Task};
use crate::error::{Error, Result};
use crate::field::PointCloud;
use crate::network::NetworkConfig;
use crate::oracles::{lambda_cov, power_sums};
use crate::train::{evaluate, train_with, Checkpoint, EpochRecord, RunConfig, TrainOutcome};

/// Points per cloud in the invariant-regression data.
pub const INVARIANT_POINTS: usize = 16;

/// A rotation- and permutation-invariant target computed from a cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Invariant {
    /// `tr(C)`
    P2,
    /// `tr(C^2)`
    P4,
    /// `tr(C^3)`
    P6,
    /// Sorted covariance eigenvalues.
    LambdaCov,
}

impl Invariant {
    /// Smallest depth whose polynomials reach the target (the eigenvalues
    /// need all three power sums).
    pub fn default_k(self) -> usize {
        match self {
            Self::P2 => 2,
            Self::P4 => 4,
            Self::P6 | Self::LambdaCov => 6,
        }
    }

    pub fn outputs(self) -> usize {
        if self == Self::LambdaCov {
            3
        } else {
            1
        }
    }

    /// Power sums enter linearly, so a single linear output suffices; the
    /// eigenvalues are a non-polynomial function of them and get an MLP.
    pub fn default_head(self) -> Vec<usize> {
        if self == Self::LambdaCov {
            vec![32, 3]
        } else {
            vec![1]
        }
    }

    pub fn target(self, x: &PointCloud) -> Vec<f64> {
        let s = power_sums(x);
        match self {
            Self::P2 => vec![s.s1],
            Self::P4 => vec![s.s2],
            Self::P6 => vec![s.s3],
            Self::LambdaCov => lambda_cov(x).as_array().to_vec(),
        }
    }
}

impl FromStr for Invariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p2" => Ok(Self::P2),
            "p4" => Ok(Self::P4),
            "p6" => Ok(Self::P6),
            "lambda-cov" | "lambda_cov" => Ok(Self::LambdaCov),
            _ => Err(Error::Config(format!("unknown invariant {s:?}; expected p2, p4, p6 or lambda-cov"))),
        }
    }
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::P2 => "p2",
            Self::P4 => "p4",
            Self::P6 => "p6",
            Self::LambdaCov => "lambda-cov",
        })
    }
}

/// `count` clouds of [`INVARIANT_POINTS`] points uniform in `[-1, 1]^3`.
pub fn invariant_dataset(which: Invariant, count: usize, seed: u64, split: Split) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..count)
        .map(|_| {
            let pts = (0..INVARIANT_POINTS).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..=1.0))).collect();
            let x = PointCloud::new(pts)?;
            let y = which.target(&x);
            Ok((x, Target::Values(y)))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, Task::Regression { outputs: which.outputs() }, split)
}

/// Training clouds and a disjoint held-out set, from seeds `seed` and
/// `seed + 1`.
pub fn invariant_data(which: Invariant, train: usize, test: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let seed = seed.wrapping_mul(2);
    Ok((
        invariant_dataset(which, train, seed, Split::Train)?,
        invariant_dataset(which, test, seed.wrapping_add(1), Split::Test)?,
    ))
}

/// Adam at `3e-3`, batches of 16, `C = 8`, no augmentation (the targets are
/// invariant already).
pub fn invariant_run(which: Invariant) -> RunConfig {
    let network = NetworkConfig::basic(which.default_k(), 8).with_head(which.default_head());
    let mut run = RunConfig::new(network);
    run.epochs = 40;
    run.batch = 16;
    run.lr = 3e-3;
    run.optimizer = OptimizerKind::Adam;
    run
}

/// Trains `run` on the invariant data; the returned history carries the
/// held-out relative RMSE after every epoch.
pub fn fit_invariant(
    which: Invariant,
    run: &RunConfig,
    train_count: usize,
    test_count: usize,
    on_record: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let (train, test) = invariant_data(which, train_count, test_count, run.seed)?;
    train_with(run, &train, Some(&test), on_record)
}

/// 64 clouds per class of 64 points: 256 for training, 256 for testing.
pub fn shapes_data(seed: u64) -> Result<(Dataset, Dataset)> {
    let seed = seed.wrapping_mul(2);
    Ok((synth_shapes(seed.wrapping_add(1), 64, 64)?, synth_shapes(seed.wrapping_add(2), 64, 64)?.with_split(Split::Test)))
}

/// The shape-classification recipe: neighbour term, activation and order-2
/// self-map on, an MLP head, Adam with cosine decay, SO(3) augmentation for
/// both training and testing.
pub fn shapes_run(k: usize, channels: usize) -> RunConfig {
    let network = NetworkConfig::basic(k, channels).with_extras(4, true, true).with_head(vec![32, 4]);
    let mut run = RunConfig::new(network);
    run.epochs = 30;
    run.batch = 16;
    run.lr = 3e-3;
    run.optimizer = OptimizerKind::Adam;
    run.cosine_decay = true;
    run.aug_train = AugmentProtocol::So3;
    run.aug_test = AugmentProtocol::So3;
    run
}

/// Per-sample labels of a trained classifier under two test protocols.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolAgreement {
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    /// Samples whose top two logits are within `tie` of each other under
    /// either protocol; they are not compared.
    pub ties: usize,
    pub compared: usize,
    pub agreeing: usize,
}

pub fn protocol_agreement(
    ckpt: &Checkpoint,
    test: &Dataset,
    a: AugmentProtocol,
    b: AugmentProtocol,
    seed: u64,
    threads: usize,
    tie: f64,
) -> Result<ProtocolAgreement> {
    let ea = evaluate(ckpt, test, a, seed, threads)?;
    let eb = evaluate(ckpt, test, b, seed.wrapping_add(1), threads)?;
    let mut out = ProtocolAgreement { accuracy_a: ea.metric, accuracy_b: eb.metric, ties: 0, compared: 0, agreeing: 0 };
    for (la, lb) in ea.outputs.iter().zip(&eb.outputs) {
        if crate::train::top_margin(la) <= tie || crate::train::top_margin(lb) <= tie {
            out.ties += 1;
            continue;
        }
        out.compared += 1;
        if crate::train::argmax(la) == crate::train::argmax(lb) {
            out.agreeing += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub k: usize,
    pub params: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub seconds: f64,
}

/// Trains `base` once per depth in `ks` on the same shape data and reports
/// the final-epoch accuracies.
pub fn ablation(ks: &[usize], base: &RunConfig, mut on_record: impl FnMut(usize, &EpochRecord)) -> Result<Vec<AblationRow>> {
    let (train, test) = shapes_data(base.seed)?;
    let mut rows = Vec::new();
    for &k in ks {
        let mut run = base.clone();
        run.network.k_max = k;
        run.out = base.out.as_ref().map(|d| d.join(format!("k{k}")));
        let start = Instant::now();
        let outcome = train_with(&run, &train, Some(&test), |r| on_record(k, r))?;
        let last = |split: Split| {
            outcome.history.iter().rev().find(|r| r.split == split).map(|r| r.metric).unwrap_or(f64::NAN)
        };
        rows.push(AblationRow {
            k,
            params: run.network.param_count(),
            train_accuracy: last(Split::Train),
            test_accuracy: last(Split::Test),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow], protocol: &str) -> String {
    let mut s = format!("| K | params | train acc | test acc ({protocol}) | seconds |\n|---|---|---|---|---|\n");
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {:.4} | {:.4} | {:.1} |\n",
            r.k, r.params, r.train_accuracy, r.test_accuracy, r.seconds
        ));
    }
    s
}
