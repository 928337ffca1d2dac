//! Rate fit on a tiny noisy gene against brute-force grid search of the loss.

use velokit::inference::{fit_rates, gene_loss, Curve, EmConfig, FitStage, Rates};

#[test]
fn gauss_newton_beats_fine_grid() {
    let cfg = EmConfig::default();
    let times = [0.4, 1.1, 2.3];
    let truth = Curve::new(Rates::new(12.0, 0.8), FitStage::On, cfg.t_switch);
    let noise = [(0.3, -0.2), (-0.4, 0.5), (0.2, -0.6)];
    let (u, s): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(noise)
        .map(|(&t, (du, ds))| {
            let x = truth.at(t);
            (x.u + du, x.s + ds)
        })
        .unzip();
    let fit = fit_rates(&u, &s, &times, FitStage::On, &cfg).unwrap();
    let loss_fit = gene_loss(&u, &s, &times, &Curve::new(fit, FitStage::On, cfg.t_switch));

    let mut best = (f64::INFINITY, Rates::new(0.0, 0.0));
    for i in 0..=400 {
        for j in 0..=400 {
            let r = Rates::new(6.0 + 12.0 * i as f64 / 400.0, 0.2 + 1.6 * j as f64 / 400.0);
            let l = gene_loss(&u, &s, &times, &Curve::new(r, FitStage::On, cfg.t_switch));
            if l < best.0 {
                best = (l, r);
            }
        }
    }
    assert!(loss_fit <= best.0 + 1e-12, "fit {fit:?} loss {loss_fit} vs grid {:?}", best);
    assert!((fit.alpha - best.1.alpha).abs() < 0.03 && (fit.gamma - best.1.gamma).abs() < 0.004, "{fit:?} vs {:?}", best.1);
}
