//! SEM covariance and 95% intervals for the rates of a few genes.

use velokit::inference::{em_infer, EmConfig, StageModel};
use velokit::synth::{generate, SimConfig, StagePlan};
use velokit::uq::sem_covariance;

fn main() -> velokit::error::Result<()> {
    let ds = generate(&SimConfig { n_cells: 300, ..SimConfig::uq_benchmark(StagePlan::AllOn, 2) })?;
    let cfg = EmConfig { stage: StageModel::On, ..EmConfig::default() };
    let em = em_infer(&ds, &cfg)?;
    let truth = ds.true_kinetics.as_ref().unwrap();
    for (g, r) in sem_covariance(&ds, &em, &cfg).into_iter().enumerate() {
        match r {
            Ok(s) => {
                let [a, c] = s.ci95.map(|ci| ci.map_or("n/a".to_string(), |(lo, hi)| format!("[{lo:.3}, {hi:.3}]")));
                let cov = s.covers([truth[g].alpha_on, truth[g].gamma]);
                println!(
                    "gene {g}: alpha {:.3} in {a} ({}), gamma {:.3} in {c} ({}), pd {}",
                    truth[g].alpha_on, cov[0], truth[g].gamma, cov[1], s.pd_flag
                );
            }
            Err(e) => println!("gene {g}: {e}"),
        }
    }
    Ok(())
}
