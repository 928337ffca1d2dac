//! Fit per-gene rates and latent times with EM and compare against the truth.

use velokit::inference::{em_infer, EmConfig, StageModel};
use velokit::synth::{generate, SimConfig, StagePlan};

fn main() -> velokit::error::Result<()> {
    let ds = generate(&SimConfig { n_cells: 400, ..SimConfig::uq_benchmark(StagePlan::AllOn, 1) })?;
    let cfg = EmConfig { stage: StageModel::On, ..EmConfig::default() };
    let em = em_infer(&ds, &cfg)?;
    let truth = ds.true_kinetics.as_ref().unwrap();
    println!("{:>4} {:>8} {:>8} {:>8} {:>8} {:>6}", "gene", "alpha", "alpha^", "gamma", "gamma^", "iters");
    for (g, fit) in em.genes.iter().enumerate() {
        println!(
            "{g:4} {:8.3} {:8.3} {:8.3} {:8.3} {:6}",
            truth[g].alpha_on, fit.rates.alpha, truth[g].gamma, fit.rates.gamma, fit.iters
        );
    }
    println!("total loss {:.4}, converged {}", em.loss, em.converged);
    Ok(())
}
