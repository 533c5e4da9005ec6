//! Write a labelled dataset directory, train briefly from it, save a
//! checkpoint, reload it and evaluate under each test protocol.

use uninet::autodiff::OptimizerKind;
use uninet::data::{load_dataset, save_dataset, synth_shapes, AugmentProtocol};
use uninet::network::NetworkConfig;
use uninet::train::{evaluate, train, Checkpoint, RunConfig};

fn main() -> uninet::Result<()> {
    let dir = std::env::temp_dir().join(format!("uninet-example-{}", std::process::id()));
    save_dataset(&dir, &synth_shapes(0, 10, 32)?)?;
    println!("wrote {}", dir.join("labels.csv").display());

    // a single manifest is split 80/20
    let (train_set, test_set) = load_dataset(&dir, 0)?;
    println!("{} training and {} test clouds", train_set.len(), test_set.len());

    let mut run = RunConfig::new(NetworkConfig::basic(2, 4).with_head(vec![16, 4]));
    run.epochs = 3;
    run.batch = 8;
    run.optimizer = OptimizerKind::Adam;
    run.lr = 3e-3;
    run.out = Some(dir.join("run"));
    train(&run, &train_set, Some(&test_set))?;

    let ckpt = Checkpoint::load(&dir.join("run").join("checkpoint.json"))?;
    for protocol in [AugmentProtocol::None, AugmentProtocol::Z, AugmentProtocol::So3] {
        let eval = evaluate(&ckpt, &test_set, protocol, 0, 1)?;
        println!("{protocol:>4}: accuracy {:.4}, loss {:.4}", eval.metric, eval.loss);
    }
    let metrics = std::fs::read_to_string(dir.join("run").join("metrics.jsonl"))?;
    println!("first metrics record: {}", metrics.lines().next().unwrap_or(""));
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
