//! Oracles and randomized checks shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use velokit::dynamics::{trajectory, GeneKinetics, StateUS};
use velokit::hitting::{solve_hitting, HittingProblem};
use velokit::inference::{em_gene_stage, EmConfig, FitStage, StageModel};
use velokit::kernelwalk::{build_graph, discrete_generator, KernelSpec};
use velokit::rescale::{objective_additive, objective_multiplicative, rescale, GeneTimeMatrix, Proposal};
use velokit::synth::{generate, SimConfig, StagePlan};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random positive n × d time matrix.
pub fn random_time_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.random_range(0.01..5.0))
}

/// Top eigenpair of a symmetric matrix from a full dense decomposition.
pub fn dense_top_eigen(h: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let e = SymmetricEigen::new(h.clone());
    let i = e.eigenvalues.imax();
    let mut v = e.eigenvectors.column(i).into_owned();
    if v.sum() < 0.0 {
        v.neg_mut();
    }
    (e.eigenvalues[i], v)
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs() / scale))
}

/// Outcome of one eigen-oracle instance.
#[derive(Debug)]
pub struct EigenCheck {
    pub err_p1: f64,
    pub err_p2: f64,
    pub beaten_p1: bool,
    pub beaten_p2: bool,
}

/// Compares both proposals with the dense-eigen closed forms and with random feasible
/// candidates on one random instance.
pub fn eigen_instance(seed: u64, candidates: usize) -> EigenCheck {
    let mut r = rng(seed);
    let d = r.random_range(3..=10);
    let n = r.random_range(d + 2..=60);
    let t = random_time_matrix(&mut r, n, d);
    let tm = GeneTimeMatrix::new(t.clone()).unwrap();
    let p1 = rescale(&tm, Proposal::Multiplicative).unwrap();
    let p2 = rescale(&tm, Proposal::Additive).unwrap();

    let w: Vec<f64> = (0..d).map(|g| 1.0 / t.column(g).norm()).collect();
    let tw = DMatrix::from_fn(n, d, |c, g| t[(c, g)] * w[g]);
    let (lam, v) = dense_top_eigen(&(tw.transpose() * &tw));
    let x: Vec<f64> = (0..d).map(|g| d as f64 / lam.sqrt() * w[g] * v[g]).collect();
    let (_, b) = dense_top_eigen(&(t.transpose() * &t));

    let mut beaten_p1 = false;
    let mut beaten_p2 = false;
    for _ in 0..candidates {
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
        let zv = DVector::from_column_slice(&z);
        let s = d as f64 / (&t * &zv).norm();
        let cand: Vec<f64> = z.iter().map(|v| v * s).collect();
        if objective_multiplicative(&t, &cand) < p1.objective {
            beaten_p1 = true;
        }
        let cand2: Vec<f64> = z.iter().map(|v| v / zv.norm()).collect();
        if objective_additive(&t, &cand2) < p2.objective {
            beaten_p2 = true;
        }
    }
    EigenCheck {
        err_p1: max_rel(&p1.x_star, &x),
        err_p2: max_rel(&p2.beta_star, b.as_slice()),
        beaten_p1,
        beaten_p2,
    }
}

/// Property checks; each returns an error message on the first violation.
pub mod props {
    use super::*;

    pub fn scale_invariance(alpha: f64, beta: f64, gamma: f64, t_switch: f64, t: f64, kappa: f64) -> Result<(), String> {
        let k = GeneKinetics::new(alpha, beta, gamma, t_switch).map_err(|e| e.to_string())?;
        let x0 = StateUS::new(0.0, 0.0);
        let a = trajectory(&k, x0, t).map_err(|e| e.to_string())?;
        let b = trajectory(&k.scaled(kappa), x0, t * kappa).map_err(|e| e.to_string())?;
        let scale = a.u.abs().max(a.s.abs()).max(1.0);
        let err = (a.u - b.u).abs().max((a.s - b.s).abs()) / scale;
        if err > 1e-10 {
            return Err(format!("scaled trajectory differs by {err:e} (kappa {kappa}, t {t})"));
        }
        Ok(())
    }

    pub fn em_loss_monotone(seed: u64, n_cells: usize) -> Result<(), String> {
        let sim = SimConfig { n_cells, n_genes: 20, ..SimConfig::uq_benchmark(StagePlan::AllOn, seed) };
        let ds = generate(&sim).map_err(|e| e.to_string())?;
        let cfg = EmConfig { stage: StageModel::On, max_iters: 30, ..EmConfig::default() };
        for g in [0usize, 7, 19] {
            let fit = em_gene_stage(velokit::inference::column(&ds.u, g), velokit::inference::column(&ds.s, g), FitStage::On, &cfg);
            for w in fit.loss_trace.windows(2) {
                if w[1] > w[0] * (1.0 + 1e-12) {
                    return Err(format!("gene {g}: loss rose from {} to {}", w[0], w[1]));
                }
            }
        }
        Ok(())
    }

    pub fn perron_positive(seed: u64) -> Result<(), String> {
        let mut r = rng(seed);
        let d = r.random_range(2..=12);
        let n = r.random_range(3..=80);
        // Sparse but irreducible: a positive first column links every gene.
        let t = DMatrix::from_fn(n, d, |c, _| if c == 0 || r.random_bool(0.6) { r.random_range(0.0..4.0) + 1e-3 } else { 0.0 });
        let tm = GeneTimeMatrix::new(t).map_err(|e| e.to_string())?;
        for p in [Proposal::Multiplicative, Proposal::Additive] {
            let res = rescale(&tm, p).map_err(|e| e.to_string())?;
            if let Some(b) = res.beta_star.iter().find(|b| !(**b > 0.0)) {
                return Err(format!("{p:?}: non-positive rate {b}"));
            }
        }
        Ok(())
    }

    fn random_cloud(r: &mut ChaCha8Rng, n: usize, d: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let x = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(r));
        let v = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(r));
        (x, v)
    }

    pub fn row_stochastic(seed: u64) -> Result<(), String> {
        let mut r = rng(seed);
        let n = r.random_range(2..=60);
        let d = r.random_range(2..=5);
        let (x, v) = random_cloud(&mut r, n, d);
        let eps = r.random_range(0.05..5.0);
        let g = build_graph(&x, &v, KernelSpec::new(eps, d)).map_err(|e| e.to_string())?;
        let err = g.max_row_sum_error();
        if err > 1e-12 || g.p.iter().any(|&p| !(p >= 0.0)) {
            return Err(format!("row-sum error {err:e} or negative entry (n {n}, eps {eps})"));
        }
        Ok(())
    }

    pub fn generator_kills_constants(seed: u64) -> Result<(), String> {
        let mut r = rng(seed);
        let n = r.random_range(2..=60);
        let (x, v) = random_cloud(&mut r, n, 3);
        let eps = r.random_range(0.05..5.0);
        let c: f64 = r.random_range(-1e3..1e3);
        let g = build_graph(&x, &v, KernelSpec::new(eps, 3)).map_err(|e| e.to_string())?;
        let l = discrete_generator(&g.p, &vec![c; n], eps);
        match l.iter().find(|&&a| a != 0.0) {
            Some(a) => Err(format!("generator of constant {c} gave {a:e}")),
            None => Ok(()),
        }
    }

    pub fn hitting_monotone(seed: u64) -> Result<(), String> {
        let mut r = rng(seed);
        let n = r.random_range(3..=40);
        let mut p = DMatrix::from_fn(n, n, |_, _| if r.random_bool(0.4) { r.random_range(0.0..1.0) } else { 0.0 });
        for i in 0..n {
            // Guarantees a path i → i + 1 so the last state is reachable from everywhere.
            p[(i, (i + 1) % n)] += 0.1;
            let s = p.row(i).sum();
            p.row_mut(i).unscale_mut(s);
        }
        let res = solve_hitting(&HittingProblem::new(&p, vec![n - 1], vec![])).map_err(|e| e.to_string())?;
        if !res.monotone || !res.all_converged() || res.k.iter().any(|&k| !(k >= 0.0)) {
            return Err(format!("monotone {} converged {} (n {n})", res.monotone, res.all_converged()));
        }
        Ok(())
    }
}
