//! Generator error of the velocity-kernel walk across bandwidths.

use velokit::kernelwalk::{bandwidth_sweep, SweepConfig};

fn main() -> velokit::error::Result<()> {
    let cfg = SweepConfig { n: 800, epsilons: (1..=20).map(|k| 0.004 * k as f64).collect(), ..SweepConfig::default() };
    let r = bandwidth_sweep(&cfg)?;
    println!("optimal epsilon ~ {:.4}, drift ratio {:.4}", r.optimal_epsilon, r.drift_ratio);
    for c in &r.curves {
        println!("{}: slope {:.3} over {} points, argmin ln eps {:.3}", c.function.name(), c.slope, c.fit_points, c.argmin_ln_epsilon);
        for (e, err) in r.epsilons.iter().zip(&c.errors) {
            println!("  {e:.3} {err:.4}");
        }
    }
    Ok(())
}
