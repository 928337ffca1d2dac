//! Velocity-kernel random walk on cells.
//!
//! `k(x_i, x_j) = h(‖x_j − x_i‖²/ε) · g(cos⟨x_j − x_i, v_i⟩)`, normalised by rows.
//! The scaled generator `(Pf − f)/√ε` approaches `(m₁/m₀) v̂·∇f` as ε → 0 and n → ∞;
//! [`bandwidth_sweep`] measures that convergence on simulated three-gene data.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{evolve, StateUS};
use crate::error::{Error, Result};
use crate::stats::{linear_fit, median};
use crate::synth::{stream_rng, Stream, TAU_1PCT};

/// Velocity factor g(cos θ).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityKernel {
    /// g(c) = e^c
    Exp,
    /// g ≡ 1, which turns the walk into a plain diffusion.
    Const,
}

impl VelocityKernel {
    pub fn eval(self, c: f64) -> f64 {
        self.log(c).exp()
    }

    pub fn log(self, c: f64) -> f64 {
        match self {
            VelocityKernel::Exp => c,
            VelocityKernel::Const => 0.0,
        }
    }
}

/// Distance factor h(x).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionKernel {
    /// h(x) = e^{−x}
    ExpNeg,
}

impl DiffusionKernel {
    pub fn eval(self, x: f64) -> f64 {
        self.log(x).exp()
    }

    pub fn log(self, x: f64) -> f64 {
        match self {
            DiffusionKernel::ExpNeg => -x,
        }
    }
}

/// Treatment of the self-transition i → i.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagonal {
    /// Keep it with cos := 0, i.e. weight h(0)·g(0).
    Include,
    /// Drop it (leave-one-out rows).
    Exclude,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroVelocity {
    Error,
    /// Use g(0) for every neighbour of a cell without velocity.
    Neutral,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub epsilon: f64,
    pub g: VelocityKernel,
    pub h: DiffusionKernel,
    pub d: usize,
    pub diagonal: Diagonal,
    pub zero_velocity: ZeroVelocity,
}

impl KernelSpec {
    pub fn new(epsilon: f64, d: usize) -> Self {
        KernelSpec {
            epsilon,
            g: VelocityKernel::Exp,
            h: DiffusionKernel::ExpNeg,
            d,
            diagonal: Diagonal::Include,
            zero_velocity: ZeroVelocity::Error,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.d == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        Ok(())
    }
}

/// Row-stochastic transition matrix of the walk together with its inputs.
#[derive(Clone, Debug)]
pub struct CellGraph {
    pub p: DMatrix<f64>,
    pub kernel: KernelSpec,
    pub points: DMatrix<f64>,
    pub velocities: DMatrix<f64>,
}

impl CellGraph {
    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn max_row_sum_error(&self) -> f64 {
        self.p.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Pairwise squared distances and direction cosines, both n×n and row-major:
/// `d2[i*n + j] = ‖x_j − x_i‖²`, `cos[i*n + j] = cos⟨x_j − x_i, v_i⟩` (0 on the diagonal
/// and for rows without velocity).
pub struct Pairwise {
    pub n: usize,
    pub d2: Vec<f64>,
    pub cos: Vec<f64>,
    pub zero_velocity_rows: Vec<usize>,
}

pub fn pairwise(points: &DMatrix<f64>, velocities: &DMatrix<f64>) -> Result<Pairwise> {
    let n = points.nrows();
    if velocities.shape() != points.shape() {
        return Err(Error::Domain(format!(
            "points are {:?} but velocities are {:?}",
            points.shape(),
            velocities.shape()
        )));
    }
    if points.iter().chain(velocities.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite coordinate or velocity".into()));
    }
    let mut vhat = velocities.clone();
    let mut zero_velocity_rows = Vec::new();
    for (i, mut row) in vhat.row_iter_mut().enumerate() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        } else {
            zero_velocity_rows.push(i);
        }
    }
    let sq: Vec<f64> = points.row_iter().map(|r| r.norm_squared()).collect();
    let gram = points * points.transpose();
    // proj[(j, i)] = x_j · v̂_i
    let proj = points * vhat.transpose();
    let mut d2 = vec![0.0; n * n];
    let mut cos = vec![0.0; n * n];
    d2.par_chunks_mut(n).zip(cos.par_chunks_mut(n)).enumerate().for_each(|(i, (d2_row, cos_row))| {
        let own = proj[(i, i)];
        for j in 0..n {
            if j == i {
                continue;
            }
            let dist2 = (sq[i] + sq[j] - 2.0 * gram[(i, j)]).max(0.0);
            d2_row[j] = dist2;
            if dist2 > 0.0 {
                cos_row[j] = ((proj[(j, i)] - own) / dist2.sqrt()).clamp(-1.0, 1.0);
            }
        }
    });
    Ok(Pairwise { n, d2, cos, zero_velocity_rows })
}

/// Fills `out` with one normalised row of P from precomputed pairs.
fn transition_row(pw: &Pairwise, i: usize, spec: &KernelSpec, out: &mut [f64]) -> Result<()> {
    let n = pw.n;
    let d2 = &pw.d2[i * n..(i + 1) * n];
    let cos = &pw.cos[i * n..(i + 1) * n];
    let mut max = f64::NEG_INFINITY;
    for j in 0..n {
        let lk = if j == i {
            match spec.diagonal {
                Diagonal::Include => spec.h.log(0.0) + spec.g.log(0.0),
                Diagonal::Exclude => f64::NEG_INFINITY,
            }
        } else {
            spec.h.log(d2[j] / spec.epsilon) + spec.g.log(cos[j])
        };
        out[j] = lk;
        max = max.max(lk);
    }
    if !max.is_finite() {
        return Err(Error::Numerical(format!("row {i} has no positive kernel weight")));
    }
    let mut sum = 0.0;
    for w in out.iter_mut() {
        *w = (*w - max).exp();
        sum += *w;
    }
    for w in out.iter_mut() {
        *w /= sum;
    }
    Ok(())
}

pub fn build_graph(points: &DMatrix<f64>, velocities: &DMatrix<f64>, spec: KernelSpec) -> Result<CellGraph> {
    spec.validate()?;
    let pw = pairwise(points, velocities)?;
    if spec.zero_velocity == ZeroVelocity::Error {
        if let Some(&i) = pw.zero_velocity_rows.first() {
            return Err(Error::Domain(format!("cell {i} has zero velocity")));
        }
    }
    let n = pw.n;
    let mut rows = vec![0.0; n * n];
    rows.par_chunks_mut(n.max(1))
        .enumerate()
        .try_for_each(|(i, row)| transition_row(&pw, i, &spec, row))?;
    Ok(CellGraph {
        p: DMatrix::from_row_slice(n, n, &rows),
        kernel: spec,
        points: points.clone(),
        velocities: velocities.clone(),
    })
}

/// (Pf − f)/√ε at every point, summed as Σ_j p_ij (f_j − f_i) so constants map to exactly 0.
pub fn discrete_generator(p: &DMatrix<f64>, f: &[f64], epsilon: f64) -> Vec<f64> {
    let scale = epsilon.sqrt();
    (0..p.nrows())
        .into_par_iter()
        .map(|i| {
            let fi = f[i];
            p.row(i).iter().zip(f).map(|(pij, fj)| pij * (fj - fi)).sum::<f64>() / scale
        })
        .collect()
}

/// Kernel moment constants. `m0_sq`, `m1_sq` use h² and g².
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentConstants {
    pub m0: f64,
    pub m1: f64,
    pub m0_sq: f64,
    pub m1_sq: f64,
    pub c_d: f64,
}

impl MomentConstants {
    pub fn drift_ratio(&self) -> f64 {
        self.m1 / self.m0
    }
}

/// Adaptive Simpson quadrature.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64, m: f64, fm: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1) + rec(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, m, fm, whole, tol, 50)
}

/// Γ(k/2) for integer k ≥ 1.
fn gamma_half(k: usize) -> f64 {
    let mut v = if k % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut j = if k % 2 == 0 { 2 } else { 1 };
    while j < k {
        v *= j as f64 / 2.0;
        j += 2;
    }
    v
}

/// Surface area of the unit sphere in ℝᵈ.
pub fn sphere_area(d: usize) -> f64 {
    2.0 * std::f64::consts::PI.powf(d as f64 / 2.0) / gamma_half(d)
}

fn radial(spec: &KernelSpec, power: i32, squared: bool) -> f64 {
    let hh = |r: f64| {
        let v = spec.h.eval(r * r);
        if squared {
            v * v
        } else {
            v
        }
    };
    let mut r_max = 1.0;
    while hh(r_max) * r_max.powi(spec.d as i32) >= 1e-14 {
        r_max += 0.5;
    }
    let f = |r: f64| r.powi(power) * hh(r);
    // Split so the peak is resolved independently of r_max.
    let knots = [0.0, 0.5, 1.0, 2.0, r_max];
    knots
        .windows(2)
        .filter(|w| w[0] < w[1])
        .map(|w| adaptive_simpson(&f, w[0], w[1], 1e-14))
        .sum()
}

fn angular(spec: &KernelSpec, cos_power: i32, squared: bool) -> f64 {
    let f = |t: f64| {
        let g = spec.g.eval(t.cos());
        let g = if squared { g * g } else { g };
        t.cos().powi(cos_power) * t.sin().abs().powi(spec.d as i32 - 2) * g
    };
    use std::f64::consts::{FRAC_PI_2, PI};
    [-PI, -FRAC_PI_2, 0.0, FRAC_PI_2, PI]
        .windows(2)
        .map(|w| adaptive_simpson(&f, w[0], w[1], 1e-14))
        .sum()
}

pub fn moment_constants(spec: &KernelSpec) -> Result<MomentConstants> {
    if spec.d < 2 {
        return Err(Error::Config(format!("moment constants need d >= 2, got {}", spec.d)));
    }
    let d = spec.d as i32;
    let sin_int = angular(&KernelSpec { g: VelocityKernel::Const, ..*spec }, 0, false);
    let c_d = sphere_area(spec.d) / sin_int;
    let m0 = c_d * radial(spec, d - 1, false) * angular(spec, 0, false);
    let m1 = c_d * radial(spec, d, false) * angular(spec, 1, false);
    let m0_sq = c_d * radial(spec, d - 1, true) * angular(spec, 0, true);
    let m1_sq = c_d * radial(spec, d, true) * angular(spec, 1, true);
    Ok(MomentConstants { m0, m1, m0_sq, m1_sq, c_d })
}

/// (m₁/m₀) v̂ · ∇f.
pub fn continuum_generator(velocity: &[f64], grad: &[f64], constants: &MomentConstants) -> f64 {
    let norm = velocity.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    let dot: f64 = velocity.iter().zip(grad).map(|(v, g)| v * g).sum();
    constants.drift_ratio() * dot / norm
}

/// Test functions of the bandwidth sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    /// x₁ + x₂ + x₃
    F1,
    /// x₃²
    F2,
}

impl TestFunction {
    pub const ALL: [TestFunction; 2] = [TestFunction::F1, TestFunction::F2];

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::F1 => "f1",
            TestFunction::F2 => "f2",
        }
    }

    pub fn value(self, x: &[f64]) -> f64 {
        match self {
            TestFunction::F1 => x.iter().take(3).sum(),
            TestFunction::F2 => x[2] * x[2],
        }
    }

    pub fn grad(self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        match self {
            TestFunction::F1 => g.iter_mut().take(3).for_each(|v| *v = 1.0),
            TestFunction::F2 => g[2] = 2.0 * x[2],
        }
        g
    }
}

/// ε = n^{−2/(d+2)}, the bandwidth balancing the variance and bias terms.
pub fn optimal_epsilon(n: usize, d: usize) -> f64 {
    (n as f64).powf(-2.0 / (d as f64 + 2.0))
}

/// Median over cells of the squared distance to the k-th nearest other cell.
pub fn knn_bandwidth(points: &DMatrix<f64>, k: usize) -> Result<f64> {
    let n = points.nrows();
    if k == 0 || k >= n {
        return Err(Error::Config(format!("need 1 <= k < n, got k = {k}, n = {n}")));
    }
    let sq: Vec<f64> = points.row_iter().map(|r| r.norm_squared()).collect();
    let gram = points * points.transpose();
    let kth: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq[i] + sq[j] - 2.0 * gram[(i, j)]).max(0.0))
                .collect();
            let (_, v, _) = row.select_nth_unstable_by(k - 1, f64::total_cmp);
            *v
        })
        .collect();
    Ok(median(&kth))
}

/// Settings of the bandwidth/sample-size experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub n: usize,
    pub epsilons: Vec<f64>,
    pub alpha: [f64; 3],
    pub beta: [f64; 3],
    pub gamma: [f64; 3],
    pub t_max: f64,
    /// Variance of the Gaussian coordinate noise.
    pub noise_var: f64,
    pub diagonal: Diagonal,
    /// Slope fit uses ε ≤ fit_factor · n^{−2/(d+2)}.
    pub fit_factor: f64,
    pub functions: Vec<TestFunction>,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            n: 2000,
            epsilons: (1..=41).map(|k| 0.002 * k as f64).collect(),
            alpha: [20.0, 20.5, 21.0],
            beta: [1.0; 3],
            gamma: [1.5, 1.55, 1.6],
            t_max: TAU_1PCT,
            noise_var: 0.5,
            diagonal: Diagonal::Exclude,
            fit_factor: 0.8,
            functions: TestFunction::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config("sweep needs at least two points".into()));
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::Config("epsilons must be positive and non-empty".into()));
        }
        if !(self.noise_var >= 0.0) || !(self.t_max > 0.0) {
            return Err(Error::Config("noise_var must be >= 0 and t_max > 0".into()));
        }
        if self.functions.is_empty() {
            return Err(Error::Config("no test functions selected".into()));
        }
        Ok(())
    }
}

/// Points x = s(t) + noise and velocities v = β∘u(t) − γ∘x for t ~ U[0, t_max].
pub fn sweep_data(cfg: &SweepConfig) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut t_rng = stream_rng(cfg.seed, Stream::Times);
    let mut x_rng = stream_rng(cfg.seed, Stream::GeneNoise(0));
    let noise = Normal::new(0.0, cfg.noise_var.sqrt()).expect("finite variance");
    let mut x = DMatrix::zeros(cfg.n, 3);
    let mut v = DMatrix::zeros(cfg.n, 3);
    for c in 0..cfg.n {
        let t = t_rng.random_range(0.0..cfg.t_max);
        for k in 0..3 {
            let StateUS { u, s } = evolve(cfg.alpha[k], cfg.beta[k], cfg.gamma[k], StateUS::ZERO, t);
            let xk = s + noise.sample(&mut x_rng);
            x[(c, k)] = xk;
            v[(c, k)] = cfg.beta[k] * u - cfg.gamma[k] * xk;
        }
    }
    (x, v)
}

/// Error curve of one test function.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepCurve {
    pub function: TestFunction,
    pub errors: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub fit_points: usize,
    pub argmin_ln_epsilon: f64,
    pub u_shaped: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepResult {
    pub n: usize,
    pub epsilons: Vec<f64>,
    pub curves: Vec<SweepCurve>,
    pub optimal_epsilon: f64,
    pub fit_max_epsilon: f64,
    pub drift_ratio: f64,
}

impl SweepResult {
    pub fn curve(&self, f: TestFunction) -> Option<&SweepCurve> {
        self.curves.iter().find(|c| c.function == f)
    }
}

/// True when the 3-point running median strictly decreases to an interior minimum and then
/// strictly increases.
pub fn is_u_shaped(errors: &[f64]) -> bool {
    let n = errors.len();
    if n < 3 {
        return false;
    }
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            if i == 0 || i == n - 1 {
                errors[i]
            } else {
                let mut w = [errors[i - 1], errors[i], errors[i + 1]];
                w.sort_by(f64::total_cmp);
                w[1]
            }
        })
        .collect();
    // The median filter flattens a sharp minimum into a two-point plateau; merge repeats.
    let mut smooth = smooth;
    smooth.dedup();
    let n = smooth.len();
    let k = (0..n).min_by(|&a, &b| smooth[a].total_cmp(&smooth[b])).unwrap_or(0);
    if k == 0 || k == n - 1 {
        return false;
    }
    smooth[..=k].windows(2).all(|w| w[1] < w[0]) && smooth[k..].windows(2).all(|w| w[1] > w[0])
}

/// RMS error of the discrete generator against the continuum drift at each ε, for
/// precomputed pairs and function values.
pub fn generator_errors(pw: &Pairwise, spec: KernelSpec, epsilons: &[f64], f: &[Vec<f64>], exact: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = pw.n;
    let mut out = vec![Vec::with_capacity(epsilons.len()); f.len()];
    for &eps in epsilons {
        let spec = KernelSpec { epsilon: eps, ..spec };
        let sq: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map_init(
                || vec![0.0; n],
                |row, i| -> Result<Vec<f64>> {
                    transition_row(pw, i, &spec, row)?;
                    Ok(f.iter()
                        .zip(exact)
                        .map(|(fv, ex)| {
                            let pf: f64 = row.iter().zip(fv).map(|(p, v)| p * v).sum();
                            let e = (pf - fv[i]) / eps.sqrt() - ex[i];
                            e * e
                        })
                        .collect())
                },
            )
            .collect::<Result<_>>()?;
        for (k, curve) in out.iter_mut().enumerate() {
            let mse = sq.iter().map(|r| r[k]).sum::<f64>() / n as f64;
            curve.push(mse.sqrt());
        }
    }
    Ok(out)
}

pub fn bandwidth_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let (x, v) = sweep_data(cfg);
    let spec = KernelSpec { diagonal: cfg.diagonal, ..KernelSpec::new(cfg.epsilons[0], 3) };
    let constants = moment_constants(&spec)?;
    let pw = pairwise(&x, &v)?;
    if let Some(&i) = pw.zero_velocity_rows.first() {
        return Err(Error::Domain(format!("cell {i} has zero velocity")));
    }
    let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    let vrows: Vec<Vec<f64>> = v.row_iter().map(|r| r.iter().copied().collect()).collect();
    let values: Vec<Vec<f64>> = cfg.functions.iter().map(|f| rows.iter().map(|x| f.value(x)).collect()).collect();
    let exact: Vec<Vec<f64>> = cfg
        .functions
        .iter()
        .map(|f| rows.iter().zip(&vrows).map(|(x, v)| continuum_generator(v, &f.grad(x), &constants)).collect())
        .collect();
    let errors = generator_errors(&pw, spec, &cfg.epsilons, &values, &exact)?;
    let opt = optimal_epsilon(cfg.n, 3);
    let fit_max = cfg.fit_factor * opt;
    let mut curves = Vec::new();
    for (f, err) in cfg.functions.iter().zip(errors) {
        let (lx, ly): (Vec<f64>, Vec<f64>) = cfg
            .epsilons
            .iter()
            .zip(&err)
            .filter(|(&e, _)| e <= fit_max)
            .map(|(e, r)| (e.ln(), r.ln()))
            .unzip();
        let (slope, intercept) = if lx.len() >= 2 { linear_fit(&lx, &ly) } else { (f64::NAN, f64::NAN) };
        let k = (0..err.len()).min_by(|&a, &b| err[a].total_cmp(&err[b])).unwrap_or(0);
        curves.push(SweepCurve {
            function: *f,
            u_shaped: is_u_shaped(&err),
            argmin_ln_epsilon: cfg.epsilons[k].ln(),
            errors: err,
            slope,
            intercept,
            fit_points: lx.len(),
        });
    }
    Ok(SweepResult {
        n: cfg.n,
        epsilons: cfg.epsilons.clone(),
        curves,
        optimal_epsilon: opt,
        fit_max_epsilon: fit_max,
        drift_ratio: constants.drift_ratio(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(eps: f64) -> KernelSpec {
        KernelSpec::new(eps, 3)
    }

    #[test]
    fn velocity_makes_the_walk_directional() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let v = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let g = build_graph(&x, &v, KernelSpec::new(1.0, 1)).unwrap();
        assert!(g.p[(0, 1)] > g.p[(1, 0)]);
    }

    #[test]
    fn constant_g_gives_symmetric_kernel_support() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 1.5, 1.5]);
        let v = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 0.5]);
        let g = build_graph(&x, &v, KernelSpec { g: VelocityKernel::Const, ..KernelSpec::new(0.7, 2) }).unwrap();
        assert!(g.max_row_sum_error() < 1e-12);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(g.p[(i, j)] > 0.0, g.p[(j, i)] > 0.0);
            }
        }
    }

    #[test]
    fn matches_entrywise_formula() {
        let x = DMatrix::from_row_slice(5, 3, &[0.1, 0.2, 0.3, 1.0, -0.5, 0.2, 0.4, 0.4, 0.9, -0.3, 0.8, 0.0, 0.6, 0.1, -0.7]);
        let v = DMatrix::from_row_slice(5, 3, &[1.0, 0.0, 0.2, 0.3, 0.3, -1.0, 0.0, 2.0, 0.0, -1.0, -1.0, 1.0, 0.5, 0.5, 0.5]);
        let eps = 0.4;
        for diag in [Diagonal::Include, Diagonal::Exclude] {
            let g = build_graph(&x, &v, KernelSpec { diagonal: diag, ..spec(eps) }).unwrap();
            for i in 0..5 {
                let mut k = [0.0; 5];
                for j in 0..5 {
                    if i == j {
                        k[j] = if diag == Diagonal::Include { 1.0 } else { 0.0 };
                        continue;
                    }
                    let dx: Vec<f64> = (0..3).map(|c| x[(j, c)] - x[(i, c)]).collect();
                    let nd = dx.iter().map(|a| a * a).sum::<f64>().sqrt();
                    let nv = (0..3).map(|c| v[(i, c)].powi(2)).sum::<f64>().sqrt();
                    let cos = (0..3).map(|c| dx[c] * v[(i, c)]).sum::<f64>() / (nd * nv);
                    k[j] = (-nd * nd / eps).exp() * cos.exp();
                }
                let z: f64 = k.iter().sum();
                for j in 0..5 {
                    assert!((g.p[(i, j)] - k[j] / z).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_velocity_policy() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let v = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        assert!(build_graph(&x, &v, KernelSpec::new(1.0, 2)).is_err());
        let g = build_graph(&x, &v, KernelSpec { zero_velocity: ZeroVelocity::Neutral, ..KernelSpec::new(1.0, 2) }).unwrap();
        assert!((g.p[(0, 1)] - (-2.0f64).exp() / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn single_point_without_diagonal_cannot_normalise() {
        let x = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let v = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(build_graph(&x, &v, KernelSpec { diagonal: Diagonal::Exclude, ..KernelSpec::new(1.0, 2) }).is_err());
    }

    #[test]
    fn generator_on_collinear_points() {
        // Hand-computed P with constant g and ε = 1 on x = 0, 1, 2.
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let v = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]);
        let g = build_graph(&x, &v, KernelSpec { g: VelocityKernel::Const, ..KernelSpec::new(1.0, 1) }).unwrap();
        let e1 = (-1.0f64).exp();
        let e4 = (-4.0f64).exp();
        let f = [0.0, 1.0, 2.0];
        let l = discrete_generator(&g.p, &f, 1.0);
        assert!((l[0] - (e1 + 2.0 * e4) / (1.0 + e1 + e4)).abs() < 1e-15);
        assert!(l[1].abs() < 1e-15);
        assert!((l[2] + (e1 + 2.0 * e4) / (1.0 + e1 + e4)).abs() < 1e-15);
        let l4 = discrete_generator(&g.p, &f, 4.0);
        assert!((l4[0] - l[0] / 2.0).abs() < 1e-15);
    }

    #[test]
    fn constants_are_annihilated_exactly() {
        let (x, v) = sweep_data(&SweepConfig { n: 50, ..Default::default() });
        let g = build_graph(&x, &v, spec(0.05)).unwrap();
        let l = discrete_generator(&g.p, &[3.25; 50], 0.05);
        assert!(g.max_row_sum_error() < 1e-12);
        assert!(l.iter().all(|&a| a == 0.0), "{l:?}");
    }

    #[test]
    fn sphere_areas() {
        use std::f64::consts::PI;
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-14);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-13);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-13);
    }

    #[test]
    fn constant_g_has_no_drift() {
        let c = moment_constants(&KernelSpec { g: VelocityKernel::Const, ..spec(1.0) }).unwrap();
        assert!(c.m1.abs() < 1e-12);
        assert!(c.m0 > 0.0);
    }

    #[test]
    fn plain_gaussian_integral_in_two_dimensions() {
        // ∫ e^{−|y|²} dy = π in ℝ².
        let c = moment_constants(&KernelSpec { g: VelocityKernel::Const, ..KernelSpec::new(1.0, 2) }).unwrap();
        assert!((c.c_d - 1.0).abs() < 1e-12);
        assert!((c.m0 - std::f64::consts::PI).abs() < 1e-10, "{}", c.m0);
    }

    #[test]
    fn three_dimensional_drift_ratio() {
        // Radial ratio Γ(2)/Γ(3/2); angular ratio (2/e)/(e − 1/e) from the closed forms.
        let c = moment_constants(&spec(1.0)).unwrap();
        let e = std::f64::consts::E;
        let expect = 2.0 / std::f64::consts::PI.sqrt() * (2.0 / e) / (e - 1.0 / e);
        assert!((c.drift_ratio() - expect).abs() < 1e-10, "{} vs {expect}", c.drift_ratio());
    }

    #[test]
    fn continuum_generator_examples() {
        let c = moment_constants(&spec(1.0)).unwrap();
        let r = c.drift_ratio();
        assert_eq!(continuum_generator(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &c), 0.0);
        assert!((continuum_generator(&[1.0, 0.0, 0.0], &TestFunction::F1.grad(&[0.0; 3]), &c) - r).abs() < 1e-15);
        let g2 = TestFunction::F2.grad(&[0.0, 0.0, 2.0]);
        assert!((continuum_generator(&[0.0, 0.0, 3.0], &g2, &c) - 4.0 * r).abs() < 1e-14);
    }

    #[test]
    fn optimal_epsilon_values() {
        assert!((optimal_epsilon(2000, 3).ln() + 3.04).abs() < 0.005);
        assert_eq!(optimal_epsilon(1, 7), 1.0);
        let mut prev = 0.0;
        for d in 1..50 {
            let e = optimal_epsilon(2000, d);
            assert!(e > prev && e < 1.0);
            prev = e;
        }
    }

    #[test]
    fn u_shape_detection() {
        assert!(is_u_shaped(&[5.0, 3.0, 2.0, 2.5, 4.0]));
        assert!(!is_u_shaped(&[5.0, 4.0, 3.0, 2.0]));
        assert!(!is_u_shaped(&[1.0, 2.0, 3.0]));
    }

    #[test]
    fn knn_bandwidth_on_a_line() {
        let x = DMatrix::from_row_slice(5, 1, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        // Second-nearest squared distances: 4, 1, 1, 1, 4.
        assert_eq!(knn_bandwidth(&x, 2).unwrap(), 1.0);
        assert!(knn_bandwidth(&x, 5).is_err());
    }
}
