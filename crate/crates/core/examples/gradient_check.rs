//! Reverse-mode gradients of a small classifier against central finite
//! differences, then a few optimiser steps on one sample.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uninet::autodiff::{finite_diff_check, OptimizerState};
use uninet::network::{record, NetworkConfig, ParamSet};
use uninet::verify::{layer_grad_trial, network_grad_trial, run_suite};
use uninet::PointCloud;

fn loss_and_grad(x: &PointCloud, cfg: &NetworkConfig, values: &[f64], label: usize) -> uninet::Result<(f64, Vec<f64>)> {
    let theta = ParamSet::from_flat(cfg, values.to_vec())?;
    let mut rec = record(x, cfg, &theta, true)?;
    let logits = rec.output.expect("head");
    let loss = rec.tape.cross_entropy(logits, label)?;
    Ok((rec.tape.vector(loss)?[0], rec.tape.backward(loss)?.into_params()))
}

fn main() -> uninet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = PointCloud::random(6, 1.0, &mut rng).centralize();
    let cfg = NetworkConfig::basic(2, 3).with_head(vec![8, 3]).with_seed(1);
    let theta = ParamSet::init(&cfg)?;

    let (loss, grad) = loss_and_grad(&x, &cfg, theta.values(), 2)?;
    let err = finite_diff_check(|z| loss_and_grad(&x, &cfg, z, 2).map(|r| r.0), theta.values(), &grad, 1e-5)?;
    println!("{} parameters, loss {loss:.6}, max relative gradient error {err:.2e}", theta.len());

    let mut values = theta.into_values();
    let mut adam = OptimizerState::adam(1e-2, values.len());
    for step in 1..=5 {
        let (loss, grad) = loss_and_grad(&x, &cfg, &values, 2)?;
        adam.apply(&mut values, &grad)?;
        println!("step {step}: loss {loss:.6}");
    }

    for report in [
        run_suite("layer gradients", 10, 0, 1e-4, layer_grad_trial),
        run_suite("network gradients", 10, 0, 1e-4, network_grad_trial),
    ] {
        println!("{}", report.summary());
    }
    Ok(())
}
