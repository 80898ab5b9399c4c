//! Times one training step.
//!
//! `cargo run --release --example bench_step -- [gen_depth gen_width disc_width batch tau]`

use std::time::Instant;

use stgan::ingest::{extract_patches, PatchOptions};
use stgan::synthetic::{generate_pair, SynthConfig};
use stgan::trainer::{train_step, Batch, ModelBundle};
use stgan::types::TrainConfig;

fn main() {
    let defaults = [6, 8, 8, 8, 3];
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("arguments are positive integers"))
        .chain(defaults.iter().copied().skip(std::env::args().len() - 1))
        .collect();
    let [gen_depth, gen_width, disc_width, batch_size, tau] = args[..5] else {
        panic!("expected at most five arguments")
    };
    let cfg = TrainConfig {
        tau,
        batch_size,
        crop_size: 64,
        gen_depth,
        gen_width,
        disc_width,
        n_train: 100,
        n_val: 0,
        ..TrainConfig::default()
    };
    let (u, v) = generate_pair(&SynthConfig {
        frame_size: 128,
        frames: 20,
        ..SynthConfig::default()
    })
    .unwrap();
    let opts = PatchOptions {
        crop: 64,
        n_train: 100,
        n_val: 0,
        tau,
        seed: 0,
        grid: false,
    };
    let (ds, _) = extract_patches(&u, &v, &opts).unwrap();
    let mut bundle = ModelBundle::new(&cfg).unwrap();
    let batch = Batch::from_dataset(&ds, &(0..batch_size).collect::<Vec<_>>());
    train_step(&mut bundle, &batch).unwrap();
    let start = Instant::now();
    let reps = 5;
    for _ in 0..reps {
        train_step(&mut bundle, &batch).unwrap();
    }
    println!("{:?} per step", start.elapsed() / reps);
}
