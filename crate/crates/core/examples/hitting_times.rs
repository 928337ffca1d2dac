//! Mean hitting times on the four-state chain, with and without a taboo state.

use velokit::hitting::{four_state_chain, solve_hitting, solve_hitting_direct, HittingProblem, FOUR_STATE_B, FOUR_STATE_C, FOUR_STATE_D, FOUR_STATE_S};

fn main() -> velokit::error::Result<()> {
    let (p, exact) = four_state_chain(0.1);
    let plain = solve_hitting(&HittingProblem::new(&p, vec![FOUR_STATE_C], vec![]))?;
    let direct = solve_hitting_direct(&HittingProblem::new(&p, vec![FOUR_STATE_C], vec![]))?;
    println!("k_S iterative {:.6} direct {:.6} exact {:.6}", plain.k[FOUR_STATE_S], direct.k[FOUR_STATE_S], exact.k_s);
    println!("k_B iterative {:.6} exact {:.6}", plain.k[FOUR_STATE_B], exact.k_b);
    let taboo = solve_hitting(&HittingProblem::new(&p, vec![FOUR_STATE_C], vec![FOUR_STATE_D]))?;
    println!("avoiding D: k_S {:.6} exact {:.6}, k_B {:.6} exact {:.6}", taboo.k[FOUR_STATE_S], exact.taboo_k_s, taboo.k[FOUR_STATE_B], exact.taboo_k_b);
    println!("iterations {}, condition number {:.3e}", plain.iters, direct.condition_number.unwrap_or(f64::NAN));
    Ok(())
}
