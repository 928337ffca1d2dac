//! Simulate a small on-stage dataset and write it to a directory.
//!
//! cargo run --release --example simulate_dataset -- out_dir

use velokit::synth::{generate, save_dataset, SimConfig, StagePlan};

fn main() -> velokit::error::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "simulated".into());
    let cfg = SimConfig { n_cells: 300, ..SimConfig::uq_benchmark(StagePlan::AllOn, 7) };
    let ds = generate(&cfg)?;
    let t = ds.true_times.as_ref().unwrap();
    println!("{} cells x {} genes, t in [{:.3}, {:.3}]", ds.n_cells(), ds.n_genes(),
        t.iter().copied().fold(f64::INFINITY, f64::min), t.iter().copied().fold(0.0, f64::max));
    for p in save_dataset(std::path::Path::new(&dir), &ds, Some(&cfg))? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
