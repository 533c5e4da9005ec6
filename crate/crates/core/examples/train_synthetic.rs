//! Train an invariant classifier on the four synthetic shape classes and
//! compare its predictions under vertical-axis and full rotations.
//!
//! `cargo run --release --example train_synthetic -- [epochs] [channels] [k]`

use uninet::data::AugmentProtocol;
use uninet::experiments::{protocol_agreement, shapes_data, shapes_run};
use uninet::train::{train_with, Checkpoint};

fn main() -> uninet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: usize| args.get(i).and_then(|a| a.parse().ok()).unwrap_or(default);
    let (epochs, channels, k) = (arg(0, 30), arg(1, 8), arg(2, 2));

    let (train_set, test_set) = shapes_data(0)?;
    let mut run = shapes_run(k, channels);
    run.epochs = epochs;

    let outcome = train_with(&run, &train_set, Some(&test_set), |r| {
        println!("epoch {:3} {:5} loss {:.4} acc {:.4} ({} ms)", r.epoch, r.split.to_string(), r.loss, r.metric, r.wall_ms);
    })?;

    let ckpt = Checkpoint { config: run.network, task: train_set.task(), params: outcome.params };
    let a = protocol_agreement(&ckpt, &test_set, AugmentProtocol::Z, AugmentProtocol::So3, 7, 0, 1e-7)?;
    println!(
        "test accuracy z {:.4}, so3 {:.4}; {}/{} labels agree ({} near-ties skipped)",
        a.accuracy_a, a.accuracy_b, a.agreeing, a.compared, a.ties
    );
    Ok(())
}
