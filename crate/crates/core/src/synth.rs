//! Seeded synthetic datasets drawn from the splicing model.
//!
//! Every random quantity comes from its own ChaCha8 stream (`Stream`), so genes can be
//! generated in parallel and in any order without changing the result.

use std::f64::consts::LN_10;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{trajectory_unchecked, GeneKinetics, StateUS};
use crate::error::{Error, Result};
use crate::io;

/// 2 ln 10: the time for e^{−βt} to fall to 1% when β = 1.
pub const TAU_1PCT: f64 = 2.0 * LN_10;

#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Kinetics,
    Times,
    Branch,
    GeneNoise(usize),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Kinetics => 1,
            Stream::Times => 2,
            Stream::Branch => 3,
            Stream::GeneNoise(g) => 1_000 + g as u64,
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Inclusive `start:step:stop` range; `step = 0` repeats `start`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub start: f64,
    #[serde(default)]
    pub step: f64,
    #[serde(default)]
    pub stop: f64,
}

impl GridAxis {
    pub fn constant(v: f64) -> Self {
        GridAxis { start: v, step: 0.0, stop: v }
    }

    pub fn range(start: f64, step: f64, stop: f64) -> Self {
        GridAxis { start, step, stop }
    }

    /// Values for `n` genes. A constant axis broadcasts; a range must have exactly `n` points.
    pub fn values(&self, n: usize) -> Result<Vec<f64>> {
        if self.step == 0.0 {
            return Ok(vec![self.start; n]);
        }
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as i64 + 1;
        if count < 1 || count as usize != n {
            return Err(Error::Config(format!(
                "grid {}:{}:{} has {count} points but n_genes = {n}",
                self.start, self.step, self.stop
            )));
        }
        Ok((0..n).map(|i| self.start + i as f64 * self.step).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamLaw {
    /// ln(α, β, γ) ~ N(mu, cov).
    LogNormal { mu: [f64; 3], cov: [[f64; 3]; 3] },
    Grid { alpha: GridAxis, beta: GridAxis, gamma: GridAxis },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeLaw {
    /// Uniform on [0, t_max].
    Fixed { t_max: f64 },
    /// Uniform on [0, T] with T the median over genes of 2 ln 10 / β_g.
    MedianTau,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StagePlan {
    /// All cells in the on stage; genes never switch.
    AllOn,
    /// All cells observed at t_switch + U[0, T].
    AllOff { t_switch: f64 },
    /// First half on stage at U[0, T], second half at t_switch + U[0, T].
    HalfHalf { t_switch: f64 },
    /// Two branches. Branch 1 switches a fraction `off_fraction` of genes off at
    /// 2 ln 10 / β_g, branch 2 switches the remaining genes at the same times.
    Bifurcation { off_fraction: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_cells: usize,
    pub n_genes: usize,
    pub params: ParamLaw,
    pub time: TimeLaw,
    #[serde(default)]
    pub noise_sigma: f64,
    pub stage: StagePlan,
    #[serde(default)]
    pub seed: u64,
    /// Sort cells by true time before returning.
    #[serde(default)]
    pub sort_by_time: bool,
}

/// Covariance used by the lognormal rate law of the shared-time benchmark.
pub const BENCH_COV: [[f64; 3]; 3] = [[0.16, 0.128, 0.0], [0.128, 0.16, 0.032], [0.0, 0.032, 0.16]];

impl SimConfig {
    /// Shared-time benchmark: 1000 cells, 2000 genes, lognormal rates, σ = 30, on stage.
    pub fn shared_time_benchmark(seed: u64) -> Self {
        SimConfig {
            n_cells: 1000,
            n_genes: 2000,
            params: ParamLaw::LogNormal { mu: [5.0, 0.2, 0.05], cov: BENCH_COV },
            time: TimeLaw::MedianTau,
            noise_sigma: 30.0,
            stage: StagePlan::AllOn,
            seed,
            sort_by_time: false,
        }
    }

    /// Twenty genes on the α = 20:0.5:29.5, γ = 1.5:0.05:2.45 grid with β = 1, 800 cells, σ = 0.2.
    pub fn uq_benchmark(stage: StagePlan, seed: u64) -> Self {
        SimConfig {
            n_cells: 800,
            n_genes: 20,
            params: ParamLaw::Grid {
                alpha: GridAxis::range(20.0, 0.5, 29.5),
                beta: GridAxis::constant(1.0),
                gamma: GridAxis::range(1.5, 0.05, 2.45),
            },
            time: TimeLaw::Fixed { t_max: TAU_1PCT },
            noise_sigma: 0.2,
            stage,
            seed,
            sort_by_time: false,
        }
    }

    /// Linear pseudotime benchmark: β = 1, ln α ~ N(5, 0.16), ln γ ~ N(0.05, 0.16), T = 2 ln 10.
    pub fn pseudotime_benchmark(seed: u64) -> Self {
        SimConfig {
            n_cells: 1000,
            n_genes: 2000,
            params: ParamLaw::LogNormal {
                mu: [5.0, 0.0, 0.05],
                cov: [[0.16, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.16]],
            },
            time: TimeLaw::Fixed { t_max: TAU_1PCT },
            noise_sigma: 0.0,
            stage: StagePlan::AllOn,
            seed,
            sort_by_time: true,
        }
    }

    /// Two-branch benchmark with the shared-time rate law and a 70/30 gene split.
    pub fn bifurcation_benchmark(seed: u64) -> Self {
        SimConfig {
            n_cells: 1000,
            n_genes: 2000,
            params: ParamLaw::LogNormal { mu: [5.0, 0.2, 0.05], cov: BENCH_COV },
            time: TimeLaw::MedianTau,
            noise_sigma: 0.0,
            stage: StagePlan::Bifurcation { off_fraction: 0.7 },
            seed,
            sort_by_time: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cells == 0 || self.n_genes == 0 {
            return Err(Error::Config("n_cells and n_genes must be at least 1".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config("noise_sigma must be finite and nonnegative".into()));
        }
        match &self.time {
            TimeLaw::Fixed { t_max } if !(*t_max >= 0.0) || !t_max.is_finite() => {
                return Err(Error::Config("t_max must be finite and nonnegative".into()))
            }
            _ => {}
        }
        match &self.stage {
            StagePlan::AllOff { t_switch } | StagePlan::HalfHalf { t_switch } => {
                if !(*t_switch > 0.0) || !t_switch.is_finite() {
                    return Err(Error::Config("t_switch must be positive and finite".into()));
                }
            }
            StagePlan::Bifurcation { off_fraction } => {
                if !(0.0..=1.0).contains(off_fraction) {
                    return Err(Error::Config("off_fraction must lie in [0, 1]".into()));
                }
            }
            StagePlan::AllOn => {}
        }
        match &self.params {
            ParamLaw::LogNormal { cov, .. } => {
                cov_sqrt(cov)?;
            }
            ParamLaw::Grid { alpha, beta, gamma } => {
                alpha.values(self.n_genes)?;
                beta.values(self.n_genes)?;
                gamma.values(self.n_genes)?;
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Symmetric square root L with L Lᵀ = Σ. Fails if Σ is asymmetric or has a negative eigenvalue.
pub fn cov_sqrt(cov: &[[f64; 3]; 3]) -> Result<Matrix3<f64>> {
    let m = Matrix3::from_fn(|i, j| cov[i][j]);
    let scale = m.abs().max().max(1.0);
    if (m - m.transpose()).abs().max() > 1e-12 * scale {
        return Err(Error::Config("covariance is not symmetric".into()));
    }
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::Config("covariance has non-finite entries".into()));
    }
    let eig = SymmetricEigen::new(m);
    if eig.eigenvalues.min() < -1e-10 * scale {
        return Err(Error::Config(format!(
            "covariance is not positive semidefinite (min eigenvalue {:e})",
            eig.eigenvalues.min()
        )));
    }
    let root = Matrix3::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Ok(eig.eigenvectors * root * eig.eigenvectors.transpose())
}

/// Per-gene rates with `t_switch = ∞`; stage plans set switch times later.
pub fn sample_kinetics(cfg: &SimConfig) -> Result<Vec<GeneKinetics>> {
    let d = cfg.n_genes;
    let triples: Vec<[f64; 3]> = match &cfg.params {
        ParamLaw::LogNormal { mu, cov } => {
            let l = cov_sqrt(cov)?;
            let mu = Vector3::from(*mu);
            let mut rng = stream_rng(cfg.seed, Stream::Kinetics);
            (0..d)
                .map(|_| {
                    let z = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
                    let x = mu + l * z;
                    [x[0].exp(), x[1].exp(), x[2].exp()]
                })
                .collect()
        }
        ParamLaw::Grid { alpha, beta, gamma } => {
            let (a, b, g) = (alpha.values(d)?, beta.values(d)?, gamma.values(d)?);
            (0..d).map(|i| [a[i], b[i], g[i]]).collect()
        }
    };
    triples
        .into_iter()
        .map(|[a, b, g]| GeneKinetics::new(a, b, g, f64::INFINITY))
        .collect::<Result<_>>()
        .map_err(|e| Error::Config(format!("sampled invalid kinetics: {e}")))
}

/// Length of the uniform time window.
pub fn time_window(cfg: &SimConfig, kinetics: &[GeneKinetics]) -> f64 {
    match cfg.time {
        TimeLaw::Fixed { t_max } => t_max,
        TimeLaw::MedianTau => {
            let taus: Vec<f64> = kinetics.iter().map(|k| TAU_1PCT / k.beta).collect();
            median(&taus)
        }
    }
}

/// i.i.d. Uniform[0, T] draws, T from the time law.
pub fn sample_times(cfg: &SimConfig, kinetics: &[GeneKinetics]) -> Vec<f64> {
    let t_max = time_window(cfg, kinetics);
    let mut rng = stream_rng(cfg.seed, Stream::Times);
    (0..cfg.n_cells).map(|_| rng.random::<f64>() * t_max).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionDataset {
    /// n × d unspliced counts.
    pub u: DMatrix<f64>,
    /// n × d spliced counts.
    pub s: DMatrix<f64>,
    pub true_times: Option<Vec<f64>>,
    /// Per-gene rates. For bifurcation data `t_switch` is the gene's switch time on the
    /// branch that switches it; see `branch1_off`.
    pub true_kinetics: Option<Vec<GeneKinetics>>,
    /// 0 = trunk, 1 and 2 = branches.
    pub branch_labels: Option<Vec<u8>>,
    /// For bifurcation data: whether branch 1 switches the gene off.
    pub branch1_off: Option<Vec<bool>>,
}

impl ExpressionDataset {
    pub fn n_cells(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_genes(&self) -> usize {
        self.u.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.u.shape() != self.s.shape() {
            return Err(Error::Config("U and S shapes differ".into()));
        }
        if self.u.nrows() == 0 || self.u.ncols() == 0 {
            return Err(Error::Config("dataset is empty".into()));
        }
        if !self.u.iter().chain(self.s.iter()).all(|x| x.is_finite()) {
            return Err(Error::Config("dataset has non-finite entries".into()));
        }
        let n = self.n_cells();
        let d = self.n_genes();
        if self.true_times.as_ref().is_some_and(|t| t.len() != n)
            || self.branch_labels.as_ref().is_some_and(|b| b.len() != n)
            || self.true_kinetics.as_ref().is_some_and(|k| k.len() != d)
            || self.branch1_off.as_ref().is_some_and(|k| k.len() != d)
        {
            return Err(Error::Config("ground-truth lengths do not match the matrices".into()));
        }
        Ok(())
    }

    /// True kinetics governing (cell, gene), resolving branch-specific switches.
    pub fn kinetics_for(&self, cell: usize, gene: usize) -> Option<GeneKinetics> {
        let mut k = self.true_kinetics.as_ref()?[gene];
        if let (Some(labels), Some(off1)) = (&self.branch_labels, &self.branch1_off) {
            let switches = match labels[cell] {
                2 => !off1[gene],
                _ => off1[gene],
            };
            if !switches {
                k.t_switch = f64::INFINITY;
            }
        }
        Some(k)
    }

    /// Noise-free spliced velocity β u − γ s at the true state of every cell.
    pub fn true_velocity(&self) -> Option<DMatrix<f64>> {
        let times = self.true_times.as_ref()?;
        self.true_kinetics.as_ref()?;
        Some(DMatrix::from_fn(self.n_cells(), self.n_genes(), |c, g| {
            let k = self.kinetics_for(c, g).unwrap();
            let x = trajectory_unchecked(&k, StateUS::ZERO, times[c]);
            crate::dynamics::velocity(x, &k)
        }))
    }
}

/// Simulates a dataset. Bifurcation plans are delegated to [`generate_bifurcation`].
pub fn generate(cfg: &SimConfig) -> Result<ExpressionDataset> {
    cfg.validate()?;
    if let StagePlan::Bifurcation { .. } = cfg.stage {
        return generate_bifurcation(cfg);
    }
    let mut kinetics = sample_kinetics(cfg)?;
    let n = cfg.n_cells;
    let mut times = sample_times(cfg, &kinetics);
    let (t_switch, n_off) = match cfg.stage {
        StagePlan::AllOn => (f64::INFINITY, 0),
        StagePlan::AllOff { t_switch } => (t_switch, n),
        StagePlan::HalfHalf { t_switch } => (t_switch, n / 2),
        StagePlan::Bifurcation { .. } => unreachable!(),
    };
    for k in &mut kinetics {
        k.t_switch = t_switch;
    }
    for t in times.iter_mut().skip(n - n_off) {
        *t += t_switch;
    }
    if cfg.sort_by_time {
        times.sort_by(f64::total_cmp);
    }
    let (u, s) = fill(cfg, &times, |_, g| kinetics[g]);
    Ok(ExpressionDataset {
        u,
        s,
        true_times: Some(times),
        true_kinetics: Some(kinetics),
        branch_labels: None,
        branch1_off: None,
    })
}

/// Two-branch dataset. Cells later than the earliest switch time are assigned to a branch
/// by a fair coin; earlier cells form the shared trunk (label 0).
pub fn generate_bifurcation(cfg: &SimConfig) -> Result<ExpressionDataset> {
    cfg.validate()?;
    let StagePlan::Bifurcation { off_fraction } = cfg.stage else {
        return Err(Error::Config("stage plan is not a bifurcation".into()));
    };
    let mut kinetics = sample_kinetics(cfg)?;
    for k in &mut kinetics {
        k.t_switch = TAU_1PCT / k.beta;
    }
    let d = cfg.n_genes;
    let mut times = sample_times(cfg, &kinetics);
    if cfg.sort_by_time {
        times.sort_by(f64::total_cmp);
    }
    let mut rng = stream_rng(cfg.seed, Stream::Branch);
    let n_off = (off_fraction * d as f64).round() as usize;
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut rng);
    let mut off1 = vec![false; d];
    for &g in &order[..n_off] {
        off1[g] = true;
    }
    let trunk_end = kinetics.iter().map(|k| k.t_switch).fold(f64::INFINITY, f64::min);
    let labels: Vec<u8> = times
        .iter()
        .map(|&t| {
            let coin = rng.random::<bool>();
            if t <= trunk_end {
                0
            } else if coin {
                1
            } else {
                2
            }
        })
        .collect();
    let mut ds = ExpressionDataset {
        u: DMatrix::zeros(0, 0),
        s: DMatrix::zeros(0, 0),
        true_times: Some(times),
        true_kinetics: Some(kinetics),
        branch_labels: Some(labels),
        branch1_off: Some(off1),
    };
    let (u, s) = fill(cfg, ds.true_times.as_ref().unwrap(), |c, g| {
        ds.kinetics_for(c, g).unwrap()
    });
    ds.u = u;
    ds.s = s;
    Ok(ds)
}

/// Evaluates the dynamics at every (cell, gene) and adds per-gene noise streams.
fn fill<F>(cfg: &SimConfig, times: &[f64], kin: F) -> (DMatrix<f64>, DMatrix<f64>)
where
    F: Fn(usize, usize) -> GeneKinetics + Sync,
{
    let n = times.len();
    let d = cfg.n_genes;
    let mut u = DMatrix::<f64>::zeros(n, d);
    let mut s = DMatrix::<f64>::zeros(n, d);
    u.as_mut_slice()
        .par_chunks_mut(n)
        .zip(s.as_mut_slice().par_chunks_mut(n))
        .enumerate()
        .for_each(|(g, (ucol, scol))| {
            for c in 0..n {
                let x = trajectory_unchecked(&kin(c, g), StateUS::ZERO, times[c]);
                ucol[c] = x.u;
                scol[c] = x.s;
            }
            if cfg.noise_sigma > 0.0 {
                let mut rng = stream_rng(cfg.seed, Stream::GeneNoise(g));
                for v in ucol.iter_mut().chain(scol.iter_mut()) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += cfg.noise_sigma * z;
                }
            }
        });
    (u, s)
}

/// Ground truth and metadata stored next to the count matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub n_cells: usize,
    pub n_genes: usize,
    pub true_times: Option<Vec<f64>>,
    pub true_kinetics: Option<Vec<GeneKinetics>>,
    pub branch_labels: Option<Vec<u8>>,
    pub branch1_off: Option<Vec<bool>>,
    pub config: Option<SimConfig>,
}

pub const U_FILE: &str = "unspliced.csv";
pub const S_FILE: &str = "spliced.csv";
pub const TRUTH_FILE: &str = "truth.json";

/// Writes `unspliced.csv`, `spliced.csv` and `truth.json` into `dir`; returns the paths.
pub fn save_dataset(
    dir: &Path,
    ds: &ExpressionDataset,
    cfg: Option<&SimConfig>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let header = io::gene_header(ds.n_genes());
    let paths = [dir.join(U_FILE), dir.join(S_FILE), dir.join(TRUTH_FILE)];
    io::write_matrix_csv(&paths[0], &header, &ds.u)?;
    io::write_matrix_csv(&paths[1], &header, &ds.s)?;
    let side = DatasetSidecar {
        n_cells: ds.n_cells(),
        n_genes: ds.n_genes(),
        true_times: ds.true_times.clone(),
        true_kinetics: ds.true_kinetics.clone(),
        branch_labels: ds.branch_labels.clone(),
        branch1_off: ds.branch1_off.clone(),
        config: cfg.cloned(),
    };
    io::write_json(&paths[2], &side)?;
    Ok(paths.to_vec())
}

/// Reads a dataset directory. The sidecar is optional.
pub fn load_dataset(dir: &Path) -> Result<ExpressionDataset> {
    let (hu, u) = io::read_matrix_csv(&dir.join(U_FILE))?;
    let (hs, s) = io::read_matrix_csv(&dir.join(S_FILE))?;
    if hu != hs {
        return Err(Error::Config("unspliced and spliced headers differ".into()));
    }
    let side: Option<DatasetSidecar> = match dir.join(TRUTH_FILE) {
        p if p.exists() => Some(io::read_json(&p)?),
        _ => None,
    };
    let ds = ExpressionDataset {
        u,
        s,
        true_times: side.as_ref().and_then(|x| x.true_times.clone()),
        true_kinetics: side.as_ref().and_then(|x| x.true_kinetics.clone()),
        branch_labels: side.as_ref().and_then(|x| x.branch_labels.clone()),
        branch1_off: side.and_then(|x| x.branch1_off),
    };
    ds.validate()?;
    Ok(ds)
}

pub use crate::stats::median;
