//! Pseudotime on a branching trajectory: the naive hitting time to one branch end
//! diverges on the other branch; declaring those cells taboo restores it.
//!
//! Takes a few minutes in release mode.

use velokit::experiments::{bifurcation, BIFURCATION_TARGET, NAIVE_MAX_ITERS};

fn main() -> velokit::error::Result<()> {
    let (r, _) = bifurcation(0, BIFURCATION_TARGET, NAIVE_MAX_ITERS)?;
    println!("cells: trunk {}, branch 1 {}, branch 2 {}", r.trunk_cells, r.branch1_cells, r.branch2_cells);
    println!("branch-2 cells flagged divergent: {:.1}%", 100.0 * r.branch2_flagged);
    println!("lineage cells flagged: {}", r.lineage_flagged);
    println!("R^2 vs true time: naive {:.3}, detected taboo {:.3}, labelled taboo {:.3}",
        r.naive_r_squared, r.detected_taboo_r_squared, r.taboo_r_squared);
    println!("fate gap medians: trunk {:.1}, branches {:.1}", r.trunk_gap_median, r.branch_gap_median);
    Ok(())
}
