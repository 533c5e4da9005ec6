//! Depth comparison on the synthetic shapes.
//!
//! `cargo run --release --example ablation -- [epochs]`

use uninet::experiments::{ablation, ablation_table, shapes_run};

fn main() -> uninet::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let mut run = shapes_run(2, 8);
    run.epochs = epochs;
    let rows = ablation(&[2, 4], &run, |k, r| {
        if r.epoch == epochs {
            println!("K={k} {} acc {:.4}", r.split, r.metric);
        }
    })?;
    print!("{}", ablation_table(&rows, "so3/so3"));
    Ok(())
}
