//! Mean first hitting times of a target set, optionally conditioned on avoiding a taboo set.
//!
//! On the free states (neither target nor taboo) with Q = P restricted to them, the times
//! solve k = 1 + Qk. The iteration K_n = 1 + Q K_{n−1} from K_0 = 1 increases monotonically
//! to the minimal solution. States from which the target is not reached almost surely grow
//! by one per iteration; they are reported as divergent with their iteration-scale value.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernelwalk::CellGraph;
use crate::stats::quantile;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 100_000;
/// Growth per iteration above which a state counts as divergent.
pub const DIVERGENCE_SLOPE: f64 = 0.99;
pub const SLOPE_WINDOW: usize = 100;
pub const MAX_DIRECT_STATES: usize = 2000;
pub const MAX_CONDITION: f64 = 1e14;

#[derive(Clone, Debug)]
pub struct HittingProblem<'a> {
    pub p: &'a DMatrix<f64>,
    pub target: Vec<usize>,
    pub taboo: Vec<usize>,
    pub max_iters: usize,
    pub tol: f64,
}

impl<'a> HittingProblem<'a> {
    pub fn new(p: &'a DMatrix<f64>, target: Vec<usize>, taboo: Vec<usize>) -> Self {
        HittingProblem { p, target, taboo, max_iters: DEFAULT_MAX_ITERS, tol: DEFAULT_TOL }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.p.nrows();
        if self.p.ncols() != n {
            return Err(Error::Domain(format!("transition matrix is {}x{}", n, self.p.ncols())));
        }
        if self.target.is_empty() {
            return Err(Error::Domain("target set is empty".into()));
        }
        if let Some(&i) = self.target.iter().chain(&self.taboo).find(|&&i| i >= n) {
            return Err(Error::Domain(format!("state {i} out of range for {n} states")));
        }
        let a: HashSet<usize> = self.target.iter().copied().collect();
        if let Some(&i) = self.taboo.iter().find(|i| a.contains(i)) {
            return Err(Error::Domain(format!("state {i} is both target and taboo")));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        for (i, row) in self.p.row_iter().enumerate() {
            if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::Domain(format!("row {i} has a negative or non-finite entry")));
            }
            let s = row.sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!("row {i} sums to {s}, not 1")));
            }
        }
        Ok(())
    }

    /// Indices of the free states, in increasing order.
    pub fn free_states(&self) -> Vec<usize> {
        let fixed: HashSet<usize> = self.target.iter().chain(&self.taboo).copied().collect();
        (0..self.p.nrows()).filter(|i| !fixed.contains(i)).collect()
    }

    /// Q as a dense matrix over the free states.
    pub fn restricted(&self) -> DMatrix<f64> {
        let keep = self.free_states();
        DMatrix::from_fn(keep.len(), keep.len(), |a, b| self.p[(keep[a], keep[b])])
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HittingResult {
    /// 0 on the target, NaN on the taboo set.
    #[serde(with = "crate::io::vec_nan_as_null")]
    pub k: Vec<f64>,
    pub converged_mask: Vec<bool>,
    pub iters: usize,
    pub divergent_states: Vec<usize>,
    /// Growth per iteration over the trailing window (0 when fewer iterations ran).
    #[serde(with = "crate::io::vec_nan_as_null")]
    pub slopes: Vec<f64>,
    /// Whether every sweep was entrywise nondecreasing.
    pub monotone: bool,
    pub final_change: f64,
    pub condition_number: Option<f64>,
}

impl HittingResult {
    pub fn all_converged(&self) -> bool {
        self.converged_mask.iter().all(|&c| c)
    }
}

/// Compressed rows of Q; exact zeros are dropped.
struct Csr {
    start: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl Csr {
    fn from_dense(q: &DMatrix<f64>) -> Self {
        let mut start = vec![0];
        let mut col = Vec::new();
        let mut val = Vec::new();
        for r in 0..q.nrows() {
            for c in 0..q.ncols() {
                let v = q[(r, c)];
                if v != 0.0 {
                    col.push(c);
                    val.push(v);
                }
            }
            start.push(col.len());
        }
        Csr { start, col, val }
    }

    /// out = 1 + Q x
    fn step(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for e in self.start[r]..self.start[r + 1] {
                acc += self.val[e] * x[self.col[e]];
            }
            *o = 1.0 + acc;
        }
    }
}

fn scatter(n: usize, problem: &HittingProblem, keep: &[usize], free: &[f64], fill: f64) -> Vec<f64> {
    let mut out = vec![fill; n];
    for &i in &problem.taboo {
        out[i] = f64::NAN;
    }
    for &i in &problem.target {
        out[i] = 0.0;
    }
    for (a, &i) in keep.iter().enumerate() {
        out[i] = free[a];
    }
    out
}

/// Iterates K_n = 1 + Q K_{n−1} until the sup-norm change drops below `tol` or
/// `max_iters` is reached.
pub fn solve_hitting(problem: &HittingProblem) -> Result<HittingResult> {
    problem.validate()?;
    let n = problem.p.nrows();
    let keep = problem.free_states();
    let m = keep.len();
    let q = Csr::from_dense(&problem.restricted());
    let mut k = vec![1.0; m];
    let mut next = vec![0.0; m];
    let mut ring = vec![vec![0.0; m]; SLOPE_WINDOW + 1];
    let mut iters = 0;
    let mut monotone = true;
    let mut change = f64::INFINITY;
    let mut last_delta = vec![f64::INFINITY; m];
    if m > 0 {
        ring[0].copy_from_slice(&k);
    }
    while m > 0 && iters < problem.max_iters {
        q.step(&k, &mut next);
        iters += 1;
        change = 0.0;
        for a in 0..m {
            let d = next[a] - k[a];
            if d < 0.0 {
                monotone = false;
            }
            last_delta[a] = d.abs();
            change = change.max(d.abs());
        }
        std::mem::swap(&mut k, &mut next);
        ring[iters % (SLOPE_WINDOW + 1)].copy_from_slice(&k);
        if change < problem.tol {
            break;
        }
    }
    let slopes: Vec<f64> = if iters >= SLOPE_WINDOW {
        let old = &ring[(iters + 1) % (SLOPE_WINDOW + 1)];
        k.iter().zip(old).map(|(a, b)| (a - b) / SLOPE_WINDOW as f64).collect()
    } else {
        vec![0.0; m]
    };
    let converged: Vec<bool> = (0..m).map(|a| last_delta[a] < problem.tol * (1.0 + k[a].abs())).collect();
    let divergent_states = keep
        .iter()
        .zip(&slopes)
        .filter(|(_, &s)| s > DIVERGENCE_SLOPE)
        .map(|(&i, _)| i)
        .collect();
    let mut converged_mask = vec![true; n];
    for (a, &i) in keep.iter().enumerate() {
        converged_mask[i] = converged[a];
    }
    Ok(HittingResult {
        k: scatter(n, problem, &keep, &k, 0.0),
        converged_mask,
        iters,
        divergent_states,
        slopes: scatter(n, problem, &keep, &slopes, 0.0),
        monotone,
        final_change: if m == 0 { 0.0 } else { change },
        condition_number: None,
    })
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Solves (I − Q) k = 1 through the fundamental matrix N = (I − Q)⁻¹.
pub fn solve_hitting_direct(problem: &HittingProblem) -> Result<HittingResult> {
    problem.validate()?;
    let n = problem.p.nrows();
    let keep = problem.free_states();
    let m = keep.len();
    if m > MAX_DIRECT_STATES {
        return Err(Error::Config(format!(
            "{m} free states exceed the direct-solve limit of {MAX_DIRECT_STATES}; use the iterative solver"
        )));
    }
    let a = DMatrix::identity(m, m) - problem.restricted();
    let fundamental = a.clone().lu().try_inverse().ok_or_else(|| {
        Error::Numerical("I - Q is singular (target not reachable from every state); use the iterative solver".into())
    })?;
    let cond = one_norm(&a) * one_norm(&fundamental);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Numerical(format!(
            "I - Q has condition number {cond:.3e}; use the iterative solver"
        )));
    }
    let k: Vec<f64> = fundamental.row_iter().map(|r| r.sum()).collect();
    Ok(HittingResult {
        k: scatter(n, problem, &keep, &k, 0.0),
        converged_mask: vec![true; n],
        iters: 0,
        divergent_states: Vec::new(),
        slopes: vec![0.0; n],
        monotone: true,
        final_change: 0.0,
        condition_number: Some(cond),
    })
}

/// Power-iteration estimate of ρ(|Q|).
pub fn spectral_radius_bound(q: &DMatrix<f64>) -> f64 {
    let m = q.nrows();
    if m == 0 {
        return 0.0;
    }
    let abs = q.abs();
    let mut x = nalgebra::DVector::from_element(m, 1.0);
    let mut est = f64::INFINITY;
    for _ in 0..100_000 {
        let y = &abs * &x;
        let norm = y.amax();
        if norm == 0.0 {
            return 0.0;
        }
        let done = (norm - est).abs() <= 1e-14 * norm;
        est = norm;
        x = y / norm;
        if done {
            break;
        }
    }
    est
}

/// Hitting times on a velocity graph with default iteration settings.
pub fn pseudo_time(graph: &CellGraph, target: &[usize], taboo: &[usize]) -> Result<HittingResult> {
    solve_hitting(&HittingProblem::new(&graph.p, target.to_vec(), taboo.to_vec()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BifurcationGap {
    pub fate1: HittingResult,
    pub fate2: HittingResult,
    pub gap: Vec<f64>,
    pub gap_p90: f64,
    /// Divergent for exactly one fate and gap above the 90th percentile. A suggestion only.
    pub taboo_candidates: Vec<usize>,
}

pub fn bifurcation_gap(p: &DMatrix<f64>, fate1: &[usize], fate2: &[usize], max_iters: usize) -> Result<BifurcationGap> {
    let solve = |a: &[usize]| {
        solve_hitting(&HittingProblem { max_iters, ..HittingProblem::new(p, a.to_vec(), Vec::new()) })
    };
    let r1 = solve(fate1)?;
    let r2 = solve(fate2)?;
    let gap: Vec<f64> = r1.k.iter().zip(&r2.k).map(|(a, b)| (a - b).abs()).collect();
    let p90 = quantile(&gap, 0.9);
    let d1: HashSet<usize> = r1.divergent_states.iter().copied().collect();
    let d2: HashSet<usize> = r2.divergent_states.iter().copied().collect();
    let taboo_candidates = (0..gap.len())
        .filter(|i| d1.contains(i) != d2.contains(i) && gap[*i] > p90)
        .collect();
    Ok(BifurcationGap { fate1: r1, fate2: r2, gap, gap_p90: p90, taboo_candidates })
}

/// The four-state chain S → B → {C, D} with leak ε back to B, and its analytic hitting
/// times of C.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FourState {
    pub eps: f64,
    pub k_s: f64,
    pub k_b: f64,
    pub k_d: f64,
    /// Conditioned on avoiding D.
    pub taboo_k_s: f64,
    pub taboo_k_b: f64,
}

pub const FOUR_STATE_S: usize = 0;
pub const FOUR_STATE_B: usize = 1;
pub const FOUR_STATE_C: usize = 2;
pub const FOUR_STATE_D: usize = 3;

pub fn four_state_chain(eps: f64) -> (DMatrix<f64>, FourState) {
    let p = (1.0 - eps) / 2.0;
    let q = p;
    #[rustfmt::skip]
    let m = DMatrix::from_row_slice(4, 4, &[
        0.0, 1.0, 0.0, 0.0,
        eps, 0.0, p, q,
        0.0, eps, 1.0 - eps, 0.0,
        0.0, eps, 0.0, 1.0 - eps,
    ]);
    let k_b = (q + eps + eps * eps) / (eps * p);
    let closed = FourState {
        eps,
        k_s: 1.0 + k_b,
        k_b,
        k_d: (1.0 + eps * eps) / (eps * p),
        taboo_k_s: 2.0 / (1.0 - eps),
        taboo_k_b: (1.0 + eps) / (1.0 - eps),
    };
    (m, closed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1.0)
    }

    #[test]
    fn four_state_naive_and_taboo() {
        for eps in [1e-1, 1e-2, 1e-3] {
            let (p, cf) = four_state_chain(eps);
            let naive = solve_hitting(&HittingProblem::new(&p, vec![FOUR_STATE_C], vec![])).unwrap();
            assert!(naive.all_converged() && naive.monotone);
            assert!(rel(naive.k[FOUR_STATE_S], cf.k_s) < 1e-8);
            assert!(rel(naive.k[FOUR_STATE_B], cf.k_b) < 1e-8);
            assert!(rel(naive.k[FOUR_STATE_D], cf.k_d) < 1e-8);
            assert_eq!(naive.k[FOUR_STATE_C], 0.0);
            let taboo = solve_hitting(&HittingProblem::new(&p, vec![FOUR_STATE_C], vec![FOUR_STATE_D])).unwrap();
            assert!(rel(taboo.k[FOUR_STATE_S], cf.taboo_k_s) < 1e-8);
            assert!(rel(taboo.k[FOUR_STATE_B], cf.taboo_k_b) < 1e-8);
            assert!(taboo.k[FOUR_STATE_D].is_nan());
            let direct = solve_hitting_direct(&HittingProblem::new(&p, vec![FOUR_STATE_C], vec![])).unwrap();
            for i in 0..4 {
                assert!(rel(direct.k[i], naive.k[i]) < 1e-8);
            }
        }
    }

    #[test]
    fn two_state_chain() {
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        let r = solve_hitting_direct(&HittingProblem::new(&p, vec![1], vec![])).unwrap();
        assert_eq!(r.k, vec![1.0, 0.0]);
        let r = solve_hitting(&HittingProblem::new(&p, vec![1], vec![])).unwrap();
        assert_eq!(r.k, vec![1.0, 0.0]);
    }

    #[test]
    fn everything_in_target_gives_zero() {
        let p = DMatrix::from_element(3, 3, 1.0 / 3.0);
        let r = solve_hitting(&HittingProblem::new(&p, vec![0, 1, 2], vec![])).unwrap();
        assert_eq!(r.k, vec![0.0; 3]);
        assert_eq!(r.iters, 0);
    }

    #[test]
    fn invalid_problems() {
        let p = DMatrix::from_element(2, 2, 0.5);
        assert!(solve_hitting(&HittingProblem::new(&p, vec![], vec![])).is_err());
        assert!(solve_hitting(&HittingProblem::new(&p, vec![0], vec![0])).is_err());
        assert!(solve_hitting(&HittingProblem::new(&p, vec![5], vec![])).is_err());
        let bad = DMatrix::from_element(2, 2, 0.6);
        assert!(solve_hitting(&HittingProblem::new(&bad, vec![0], vec![])).is_err());
    }

    #[test]
    fn unreachable_target_is_divergent_and_direct_refuses() {
        // State 1 is absorbing, so from it the target 2 is never hit.
        let p = DMatrix::from_row_slice(3, 3, &[0.0, 0.5, 0.5, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let prob = HittingProblem { max_iters: 500, ..HittingProblem::new(&p, vec![2], vec![]) };
        let r = solve_hitting(&prob).unwrap();
        assert_eq!(r.divergent_states, vec![1]);
        assert_eq!(r.k[1], 501.0);
        assert!(!r.converged_mask[1]);
        assert!(solve_hitting_direct(&prob).is_err());
    }

    #[test]
    fn spectral_radius_examples() {
        assert_eq!(spectral_radius_bound(&DMatrix::zeros(3, 3)), 0.0);
        let q = DMatrix::from_element(4, 4, 0.9 / 4.0);
        assert!((spectral_radius_bound(&q) - 0.9).abs() < 1e-12);
        let (p, _) = four_state_chain(0.01);
        let prob = HittingProblem::new(&p, vec![FOUR_STATE_C], vec![]);
        let q = prob.restricted();
        let rho = spectral_radius_bound(&q);
        let eig = q.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(rho < 1.0 && (rho - eig).abs() < 1e-8, "{rho} vs {eig}");
    }

    #[test]
    fn identical_fates_have_zero_gap() {
        let (p, _) = four_state_chain(0.1);
        let g = bifurcation_gap(&p, &[2], &[2], 10_000).unwrap();
        assert!(g.gap.iter().all(|&v| v == 0.0));
        assert!(g.taboo_candidates.is_empty());
    }
}
