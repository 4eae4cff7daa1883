//! Runs one twin experiment and prints its time-averaged RMSE.
//!
//! `cargo run --release --example twin_run -- <forcing> <stride> <K> <rho> <c> <sigma> [seed]`

use smoothda::experiments::{run_twin_experiment, ExperimentConfig};
use smoothda::SmoothingMode;

fn main() {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    if args.len() < 6 {
        eprintln!("usage: twin_run <forcing> <stride> <K> <rho> <c> <sigma> [seed]");
        std::process::exit(1);
    }
    let mode = if args[5] > 0.0 { SmoothingMode::Perturbation } else { SmoothingMode::Off };
    let mut cfg = ExperimentConfig::regime(args[0], args[1] as usize, args[2] as usize)
        .with_filter(args[3], Some(args[4]), args[5], mode);
    cfg.run.seed = args.get(6).copied().unwrap_or(0.0) as u64;
    let r = run_twin_experiment(&cfg).expect("valid experiment");
    println!(
        "rmse {:.4}  final spread {:.4}  {:?}  {:.2}s",
        r.time_averaged_rmse,
        r.spread_series.last().copied().unwrap_or(f64::NAN),
        r.outcome,
        r.wall_time_secs
    );
}
