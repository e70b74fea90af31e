//! Desk-scale synthetic run: `desk_scale [B1..B4] [seed] [epochs]`.

use std::time::Instant;

use fanet::data::{generate_synthetic, SyntheticSpec};
use fanet::experiment::{run_ablation, EvalConfig};
use fanet::model::{Ablation, NetworkConfig};
use fanet::training::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let ablation: Ablation = args.get(1).map_or("B4", String::as_str).parse()?;
    let seed: u64 = args.get(2).map_or(Ok(0), |s| s.parse())?;
    let epochs: usize = args.get(3).map_or(Ok(30), |s| s.parse())?;
    let data = generate_synthetic(&SyntheticSpec { train: 200, test: 50, size: 64, seed, ..SyntheticSpec::default() })?;
    let cfg = TrainConfig { epochs, learning_rate: 1e-3, seed, ..TrainConfig::default() };
    let net = NetworkConfig::default().with_widths(&[16, 32, 64, 128]);
    let start = Instant::now();
    let runs = run_ablation(&cfg, &net, &data.train, None, &data.test, &EvalConfig::default(), &[ablation], &mut |a, r| {
        eprintln!("{a} epoch {} train {:.4} val {:.4?} lr {:e} {:.1}s", r.epoch, r.train_loss, r.val_loss, r.lr, r.epoch_time);
    })?;
    let e = &runs[0].evaluation;
    println!("{ablation} seed {seed}: F1 curve {:?}", e.f1_curve().iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>());
    println!("total {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
