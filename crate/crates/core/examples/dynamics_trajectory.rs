//! Closed-form (u, s) trajectory of one gene through induction and repression.

use velokit::dynamics::{trajectory, velocity, GeneKinetics, StateUS};

fn main() -> velokit::error::Result<()> {
    let k = GeneKinetics::new(20.0, 1.0, 1.5, 5.0)?;
    println!("{:>6} {:>10} {:>10} {:>10}", "t", "u", "s", "v");
    for i in 0..=20 {
        let t = 0.5 * i as f64;
        let x = trajectory(&k, StateUS::new(0.0, 0.0), t)?;
        println!("{t:6.2} {:10.4} {:10.4} {:10.4}", x.u, x.s, velocity(x, &k));
    }
    // β = γ takes the degenerate branch of the closed form.
    let d = GeneKinetics::on_only(10.0, 1.0, 1.0)?;
    let x = trajectory(&d, StateUS::new(0.0, 0.0), 2.0)?;
    println!("beta = gamma at t = 2: u = {:.6}, s = {:.6}", x.u, x.s);
    Ok(())
}
