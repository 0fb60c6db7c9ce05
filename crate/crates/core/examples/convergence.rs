//! Trains on the default synthetic dataset and prints per-epoch loss and
//! the final test report as JSON.
//!
//! cargo run --release -p mmva-core --example convergence -- [epochs] [mode]

use std::time::Instant;

use mmva::model::ModelConfig;
use mmva::synthetic::{generate, SyntheticConfig};
use mmva::training::{evaluate, init_model, train_with_observer, TrainConfig, TrainMode, TrainingData};

fn main() -> mmva::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map(|s| s.parse().expect("epochs")).unwrap_or(200);
    let mode: TrainMode = args.next().map(|s| s.parse()).transpose()?.unwrap_or(TrainMode::Full);
    let data = generate(&SyntheticConfig::default())?;
    let cfg = TrainConfig { epochs, batch_size: 32, seed: 7, mode, ..Default::default() };
    let fixed = (mode == TrainMode::NoRandomMatching).then(|| (0..data.train.pairs.len()).map(|i| (i, i)).collect());
    let td = TrainingData { train: &data.train, sigma: data.sigma, fixed_pairs: fixed, validation: None };
    let mut model = init_model(ModelConfig::default(), cfg.seed)?;
    let t0 = Instant::now();
    train_with_observer(&mut model, &td, &cfg, |s| {
        eprintln!("epoch {:>4} loss {:.6} lr {:.2e} ({:.1}s)", s.epoch, s.mean_loss, s.lr, t0.elapsed().as_secs_f64());
    })?;
    let report = evaluate(&model, &data.test_triplets)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
