//! The `uninet` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 verification
//! failure, 4 numerical abort.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;

use crate::autodiff::OptimizerKind;
use crate::data::{load_cloud, load_dataset, save_dataset, AugmentProtocol, CloudFormat, Dataset, Task};
use crate::error::{Error, Result};
use crate::experiments::{
    ablation, ablation_table, fit_invariant, invariant_run, shapes_data, Invariant, INVARIANT_POINTS,
};
use crate::network::NetworkConfig;
use crate::oracles::{lambda_cov, power_sums, q_from_power_sums};
use crate::train::{evaluate, train_with, Checkpoint, EpochRecord, RunConfig};
use crate::verify::{self, SuiteReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "uninet", version, about = "Rotation- and permutation-equivariant point-cloud networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a classifier on a dataset directory, or on the synthetic shapes
    /// when --data is omitted.
    Train {
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        opts: TrainArgs,
    },
    /// Score a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory; the synthetic shapes when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "none")]
        aug_test: Protocol,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Randomised equivariance checks of primitives, layers and networks.
    CheckEquivariance {
        /// Largest network depth drawn.
        #[arg(long, default_value_t = 4)]
        k: usize,
        /// Largest channel count drawn.
        #[arg(long, default_value_t = 4)]
        c: usize,
        /// Largest cloud size drawn.
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Covariance-eigenvalue oracles: check the power-sum inverse, or print
    /// both computations for one cloud.
    Oracle {
        /// Compare eigenvalues through the power sums with the direct solve.
        #[arg(long)]
        verify_q: bool,
        /// A CSV or XYZ cloud to report on.
        #[arg(long)]
        cloud: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Regress an invariant from random clouds, or check the constructed
    /// p2 network.
    FitInvariant {
        /// p2, p4, p6 or lambda-cov
        which: String,
        /// Use hand-set parameters instead of training (p2 only).
        #[arg(long)]
        constructive: bool,
        #[arg(long, default_value_t = 512)]
        train_size: usize,
        #[arg(long, default_value_t = 256)]
        test_size: usize,
        /// Exit with a verification failure if the final held-out relative
        /// RMSE is above this.
        #[arg(long)]
        max_rel_rmse: Option<f64>,
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        opts: TrainArgs,
    },
    /// Finite-difference checks of every layer and of full networks.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the same recipe at several depths on the synthetic shapes and
    /// print a comparison table.
    Ablation {
        #[arg(long, value_delimiter = ',', default_value = "2,4")]
        ks: Vec<usize>,
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        opts: TrainArgs,
    },
    /// Write the synthetic shapes as a dataset directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Args)]
pub struct NetArgs {
    /// Network depth K.
    #[arg(long)]
    pub k: Option<usize>,
    /// Channels C.
    #[arg(long)]
    pub c: Option<usize>,
    /// Neighbours in the ascending layers (0 disables the term).
    #[arg(long)]
    pub knn: Option<usize>,
    #[arg(long)]
    pub relu: bool,
    #[arg(long)]
    pub t2mix: bool,
    /// Hidden widths of the head; the output width is added from the task.
    #[arg(long, value_delimiter = ',')]
    pub head: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub optimizer: Option<Optimizer>,
    /// Cosine learning-rate decay over the run.
    #[arg(long)]
    pub cosine: bool,
    #[arg(long)]
    pub aug_train: Option<Protocol>,
    #[arg(long)]
    pub aug_test: Option<Protocol>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset directory (train/ and test/ manifests, or one labels.csv).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory for metrics.jsonl and checkpoint.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 for one per core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Stop after the epoch in which this many seconds have passed.
    #[arg(long)]
    pub time_budget: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    None,
    Z,
    So3,
}

impl From<Protocol> for AugmentProtocol {
    fn from(p: Protocol) -> Self {
        match p {
            Protocol::None => AugmentProtocol::None,
            Protocol::Z => AugmentProtocol::Z,
            Protocol::So3 => AugmentProtocol::So3,
        }
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Data(_) | Error::Parse { .. } | Error::Io(_) | Error::Json(_) => EXIT_DATA,
        Error::NonFinite(_) => EXIT_NUMERIC,
        Error::Domain(_) => EXIT_VERIFY,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

impl NetArgs {
    fn apply(&self, mut cfg: NetworkConfig, outputs: usize) -> NetworkConfig {
        if let Some(k) = self.k {
            cfg.k_max = k;
        }
        if let Some(c) = self.c {
            cfg.channels = c;
        }
        if let Some(knn) = self.knn {
            cfg.k_nn = knn;
        }
        cfg.use_relu |= self.relu;
        cfg.use_t2mix |= self.t2mix;
        if let Some(hidden) = &self.head {
            cfg.head_widths = hidden.iter().copied().chain([outputs]).collect();
        }
        cfg
    }
}

impl TrainArgs {
    fn apply(&self, mut run: RunConfig) -> RunConfig {
        if let Some(e) = self.epochs {
            run.epochs = e;
        }
        if let Some(b) = self.batch {
            run.batch = b;
        }
        if let Some(lr) = self.lr {
            run.lr = lr;
        }
        if let Some(o) = self.optimizer {
            run.optimizer = match o {
                Optimizer::Sgd => OptimizerKind::Sgd,
                Optimizer::Adam => OptimizerKind::Adam,
            };
        }
        run.cosine_decay |= self.cosine;
        if let Some(p) = self.aug_train {
            run.aug_train = p.into();
        }
        if let Some(p) = self.aug_test {
            run.aug_test = p.into();
        }
        run.seed = self.seed;
        run.network.seed = self.seed;
        run.threads = self.threads;
        run.out = self.out.clone();
        run.time_budget = self.time_budget.map(Duration::from_secs_f64);
        run
    }

    fn datasets(&self) -> Result<(Dataset, Dataset)> {
        match &self.data {
            Some(dir) => load_dataset(dir, self.seed),
            None => shapes_data(self.seed),
        }
    }
}

fn print_record(r: &EpochRecord) {
    println!(
        "epoch {:4} {:5} loss {:.6} metric {:.4} protocol {} ({} ms)",
        r.epoch, r.split, r.loss, r.metric, r.protocol, r.wall_ms
    );
}

fn classes(ds: &Dataset) -> Result<usize> {
    match ds.task() {
        Task::Classification { classes } => Ok(classes),
        Task::Regression { .. } => Err(Error::Data("expected a labelled classification dataset".into())),
    }
}

/// The classification recipe: `RunConfig` defaults with `K = 2`, `C = 8`
/// and a `[32, classes]` head, overridden by the flags.
fn classification_run(net: &NetArgs, opts: &TrainArgs, classes: usize) -> RunConfig {
    let base = NetworkConfig::basic(2, 8).with_head(vec![32, classes]);
    let run = RunConfig::new(net.apply(base, classes));
    opts.apply(run)
}

fn report(r: &SuiteReport) -> bool {
    println!("{}", r.summary());
    r.passed()
}

fn run_suites(reports: impl IntoIterator<Item = Box<dyn FnOnce() -> SuiteReport>>) -> i32 {
    for suite in reports {
        if !report(&suite()) {
            return EXIT_VERIFY;
        }
    }
    EXIT_OK
}

pub fn run(command: Command) -> Result<i32> {
    match command {
        Command::Train { net, opts } => {
            let (train, test) = opts.datasets()?;
            let run = classification_run(&net, &opts, classes(&train)?);
            let test = (!test.is_empty()).then_some(&test);
            let outcome = train_with(&run, &train, test, print_record)?;
            println!("trained {} epochs in {:.1} s", outcome.epochs_run, outcome.elapsed.as_secs_f64());
            if let Some(out) = &run.out {
                println!("checkpoint: {}", out.join("checkpoint.json").display());
            }
            Ok(EXIT_OK)
        }
        Command::Evaluate { checkpoint, data, aug_test, seed, threads } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let test = match &data {
                Some(dir) => load_dataset(dir, seed)?.1,
                None => shapes_data(seed)?.1,
            };
            let eval = evaluate(&ckpt, &test, aug_test.into(), seed, threads)?;
            let name = if matches!(ckpt.task, Task::Classification { .. }) { "accuracy" } else { "relative rmse" };
            let protocol = AugmentProtocol::from(aug_test);
            println!("{name} {:.4} loss {:.6} on {} samples ({protocol})", eval.metric, eval.loss, test.len());
            Ok(EXIT_OK)
        }
        Command::CheckEquivariance { k, c, n, trials, seed } => {
            if k == 0 || c == 0 || n < 2 {
                return Err(Error::Config("need --k >= 1, --c >= 1 and --n >= 2".into()));
            }
            let suites: Vec<Box<dyn FnOnce() -> SuiteReport>> = vec![
                Box::new(move || verify::run_suite("tensor products and contractions", trials, seed, 1e-10, verify::primitive_trial)),
                Box::new(move || verify::run_suite("layers", trials, seed, 1e-8, verify::layer_trial)),
                Box::new(move || {
                    verify::run_suite("networks, all extras", trials, seed, 1e-7, |r| verify::network_trial(r, k, c, n, true))
                }),
                Box::new(move || {
                    verify::run_suite("networks, plain", trials, seed, 1e-7, |r| verify::network_trial(r, k, c, n, false))
                }),
            ];
            Ok(run_suites(suites))
        }
        Command::Oracle { verify_q, cloud, trials, seed } => {
            if !verify_q && cloud.is_none() {
                return Err(Error::Config("oracle needs --verify-q or --cloud <file>".into()));
            }
            if let Some(path) = cloud {
                let x = load_cloud(&path, CloudFormat::from_path(&path)?)?;
                let s = power_sums(&x);
                println!("points {}", x.len());
                println!("power sums p2 {:.12e} p4 {:.12e} p6 {:.12e}", s.s1, s.s2, s.s3);
                let direct = lambda_cov(&x);
                println!("eigenvalues (direct)     {:?}", direct.as_array());
                let via_q = q_from_power_sums(s)?;
                println!("eigenvalues (power sums) {:?}", via_q.as_array());
                println!("relative difference {:.3e}", via_q.relative_diff(&direct));
            }
            if !verify_q {
                return Ok(EXIT_OK);
            }
            let suites: Vec<Box<dyn FnOnce() -> SuiteReport>> = vec![
                Box::new(move || {
                    verify::run_suite("eigenvalues from power sums", trials, seed, 1e-8, |r| {
                        let degenerate = r.random_bool(0.5);
                        verify::eigen_trial(r, degenerate)
                    })
                }),
                Box::new(move || {
                    verify::run_suite("pairing functionals", trials.div_ceil(10), seed, 1e-12, |r| {
                        let order = 2 * r.random_range(1..=3);
                        verify::pairing_trial(order, r)
                    })
                }),
            ];
            Ok(run_suites(suites))
        }
        Command::FitInvariant { which, constructive, train_size, test_size, max_rel_rmse, net, opts } => {
            let which: Invariant = which.parse()?;
            if constructive {
                if which != Invariant::P2 {
                    return Err(Error::Config(format!("--constructive is only available for p2, not {which}")));
                }
                let trials = 100;
                let seed = opts.seed;
                return Ok(run_suites([Box::new(move || {
                    verify::run_suite("constructed p2 network", trials, seed, 1e-10, verify::constructive_p2_trial)
                }) as Box<dyn FnOnce() -> SuiteReport>]));
            }
            let base = invariant_run(which);
            let mut network = net.apply(base.network.clone(), which.outputs());
            network.seed = opts.seed;
            let run = opts.apply(RunConfig { network, ..base });
            println!(
                "fitting {which} with K={} C={} on {train_size} clouds of {INVARIANT_POINTS} points",
                run.network.k_max, run.network.channels
            );
            let outcome = fit_invariant(which, &run, train_size, test_size, print_record)?;
            let last = outcome.history.iter().rev().find(|r| r.split == crate::data::Split::Test);
            let Some(last) = last else { return Ok(EXIT_OK) };
            println!("held-out relative rmse {:.4} after {} epochs", last.metric, outcome.epochs_run);
            match max_rel_rmse {
                Some(limit) if !(last.metric <= limit) => {
                    println!("above the limit {limit}");
                    Ok(EXIT_VERIFY)
                }
                _ => Ok(EXIT_OK),
            }
        }
        Command::GradCheck { trials, seed } => {
            let start = Instant::now();
            let suites: Vec<Box<dyn FnOnce() -> SuiteReport>> = vec![
                Box::new(move || verify::run_suite("layer gradients", trials, seed, 1e-4, verify::layer_grad_trial)),
                Box::new(move || verify::run_suite("network gradients", trials, seed, 1e-4, verify::network_grad_trial)),
            ];
            let code = run_suites(suites);
            println!("{:.1} s", start.elapsed().as_secs_f64());
            Ok(code)
        }
        Command::Ablation { ks, net, opts } => {
            if opts.data.is_some() {
                return Err(Error::Config("the ablation runs on the synthetic shapes only".into()));
            }
            let base = crate::experiments::shapes_run(2, 8);
            let network = net.apply(base.network.clone(), 4);
            let mut run = opts.apply(RunConfig { network, ..base });
            if opts.epochs.is_none() {
                run.epochs = 30;
            }
            let rows = ablation(&ks, &run, |k, r| {
                print!("K={k} ");
                print_record(r);
            })?;
            println!();
            print!("{}", ablation_table(&rows, &format!("{}/{}", run.aug_train, run.aug_test)));
            Ok(EXIT_OK)
        }
        Command::Synth { out, seed } => {
            let (train, test) = shapes_data(seed)?;
            save_dataset(&out.join("train"), &train)?;
            save_dataset(&out.join("test"), &test)?;
            println!("wrote {} training and {} test clouds to {}", train.len(), test.len(), out.display());
            Ok(EXIT_OK)
        }
    }
}
