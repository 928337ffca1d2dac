//! Gene-shared latent time from a gene-specific time matrix with both proposals.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use velokit::rescale::{rescale, GeneTimeMatrix, Proposal};
use velokit::stats::pearson;

fn main() -> velokit::error::Result<()> {
    let (n, d) = (500, 40);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
    let beta: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
    // Each gene sees the shared clock at its own speed, plus noise.
    let m = DMatrix::from_fn(n, d, |c, g| (beta[g] * t[c] + rng.random_range(-0.3..0.3)).max(0.0));
    let tm = GeneTimeMatrix::new(m)?;
    for p in [Proposal::Multiplicative, Proposal::Additive] {
        let r = rescale(&tm, p)?;
        println!(
            "{p:?}: corr(t*, t) = {:.4}, top eigenvalue {:.3e}, {} power iterations",
            pearson(&r.t_star, &t),
            r.top_eigenvalue,
            r.power_iters
        );
    }
    Ok(())
}
