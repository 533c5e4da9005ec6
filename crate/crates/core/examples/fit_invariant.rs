//! Regress a covariance invariant from random clouds.
//!
//! `cargo run --release --example fit_invariant -- [p2|p4|p6|lambda-cov] [epochs]`

use uninet::experiments::{fit_invariant, invariant_run, Invariant};

fn main() -> uninet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let which: Invariant = args.first().map(String::as_str).unwrap_or("p4").parse()?;
    let mut run = invariant_run(which);
    if let Some(e) = args.get(1).and_then(|a| a.parse().ok()) {
        run.epochs = e;
    }
    println!("{which}: K={} C={} head {:?}", run.network.k_max, run.network.channels, run.network.head_widths);
    fit_invariant(which, &run, 512, 256, |r| {
        println!("epoch {:3} {:5} loss {:.5} rel-rmse {:.4} ({} ms)", r.epoch, r.split.to_string(), r.loss, r.metric, r.wall_ms);
    })?;
    Ok(())
}
