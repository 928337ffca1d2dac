//! End-to-end recipes on simulated data. Each returns a report with the headline numbers
//! and the plot-ready tables behind them.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hitting::{solve_hitting, HittingProblem, HittingResult, DEFAULT_MAX_ITERS};
use crate::inference::{column, em_infer, velocity_field, EmConfig, EmResult, StageModel};
use crate::kernelwalk::{bandwidth_sweep, build_graph, knn_bandwidth, CellGraph, KernelSpec, SweepConfig, SweepResult};
use crate::rescale::{rescale, Proposal, RescaleResult};
use crate::stats::{cosine, linear_fit, pearson, quantile, r_squared, variance};
use crate::synth::{generate, ExpressionDataset, SimConfig, StagePlan, TAU_1PCT};
use crate::uq::{sem_covariance, spectral_radius};

/// Min, quartiles and max of a sample (non-finite values dropped).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(v: &[f64]) -> Summary {
        let w: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
        Summary {
            min: quantile(&w, 0.0),
            q25: quantile(&w, 0.25),
            median: quantile(&w, 0.5),
            q75: quantile(&w, 0.75),
            max: quantile(&w, 1.0),
            count: w.len(),
        }
    }
}

/// A named table of equal-length numeric columns.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub data: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str], data: Vec<Vec<f64>>) -> Table {
        Table { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), data }
    }

    pub fn write_csv(&self, dir: &std::path::Path) -> Result<std::path::PathBuf> {
        let path = dir.join(format!("{}.csv", self.name));
        let names: Vec<&str> = self.columns.iter().map(String::as_str).collect();
        let cols: Vec<&[f64]> = self.data.iter().map(Vec::as_slice).collect();
        crate::io::write_columns_csv(&path, &names, &cols)?;
        Ok(path)
    }
}

fn quantile_table(name: &str, series: &[(&str, &[f64])]) -> Table {
    let levels: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
    let mut data = vec![levels.clone()];
    let mut cols = vec!["quantile"];
    for (label, v) in series {
        let w: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
        data.push(levels.iter().map(|&q| quantile(&w, q)).collect());
        cols.push(label);
    }
    Table::new(name, &cols, data)
}

/// EM settings for the shared-time benchmark: horizon 3·(2 ln 10), 64-point grid,
/// 1e-3 time tolerance and a single EM update per gene.
pub fn shared_time_em_config() -> EmConfig {
    EmConfig { t_horizon: 3.0 * TAU_1PCT, grid_size: 64, max_iters: 1, time_tol: 1e-3, ..EmConfig::default() }
}

/// Pearson correlation of every pair of columns (upper triangle), skipping constant columns.
pub fn column_pair_correlations(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows() as f64;
    let mut z = m.clone();
    let mut ok = vec![true; m.ncols()];
    for (g, mut col) in z.column_iter_mut().enumerate() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        } else {
            ok[g] = false;
        }
    }
    let c = z.transpose() * &z;
    let mut out = Vec::with_capacity(m.ncols() * (m.ncols().saturating_sub(1)) / 2);
    for i in 0..m.ncols() {
        for j in i + 1..m.ncols() {
            if ok[i] && ok[j] {
                out.push(c[(i, j)]);
            }
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SharedTimeReport {
    pub seed: u64,
    pub corr_true_p1: f64,
    pub corr_true_p2: f64,
    pub cosine_t: f64,
    pub cosine_beta: f64,
    pub gene_pair: Summary,
    pub tstar1_vs_gene: Summary,
    pub tstar2_vs_gene: Summary,
    pub gene_vs_true: Summary,
    pub skipped_genes: usize,
    pub em_seconds: f64,
    pub rescale_seconds: f64,
}

struct SharedFit {
    ds: ExpressionDataset,
    truth: Vec<f64>,
    em: EmResult,
    r1: RescaleResult,
    r2: RescaleResult,
    em_seconds: f64,
    rescale_seconds: f64,
}

fn shared_fit(seed: u64, em_cfg: &EmConfig) -> Result<SharedFit> {
    let ds = generate(&SimConfig::shared_time_benchmark(seed))?;
    let truth = ds.true_times.clone().expect("simulated");
    let t0 = Instant::now();
    let em = em_infer(&ds, em_cfg)?;
    let em_seconds = t0.elapsed().as_secs_f64();
    let t0 = Instant::now();
    let r1 = rescale(&em.time_matrix, Proposal::Multiplicative)?;
    let r2 = rescale(&em.time_matrix, Proposal::Additive)?;
    let rescale_seconds = t0.elapsed().as_secs_f64();
    Ok(SharedFit { ds, truth, em, r1, r2, em_seconds, rescale_seconds })
}

/// Simulate, infer with β = 1, rescale with both proposals and compare against the truth.
pub fn shared_time(seed: u64, em_cfg: &EmConfig) -> Result<(SharedTimeReport, Vec<Table>)> {
    let SharedFit { ds, truth, em, r1, r2, em_seconds, rescale_seconds } = shared_fit(seed, em_cfg)?;
    let tm = em.time_matrix.matrix();
    let gene_cols: Vec<&[f64]> = r1.kept_genes.iter().map(|&g| column(tm, g)).collect();
    let c1: Vec<f64> = gene_cols.iter().map(|c| pearson(&r1.t_star, c)).collect();
    let c2: Vec<f64> = gene_cols.iter().map(|c| pearson(&r2.t_star, c)).collect();
    let ct: Vec<f64> = gene_cols.iter().map(|c| pearson(&truth, c)).collect();
    let pairs = column_pair_correlations(&tm.select_columns(&r1.kept_genes));
    let true_beta: Vec<f64> = ds.true_kinetics.as_ref().expect("simulated").iter().map(|k| k.beta).collect();
    let report = SharedTimeReport {
        seed,
        corr_true_p1: pearson(&r1.t_star, &truth),
        corr_true_p2: pearson(&r2.t_star, &truth),
        cosine_t: cosine(&r1.t_star, &r2.t_star),
        cosine_beta: cosine(&r1.beta_star, &r2.beta_star),
        gene_pair: Summary::of(&pairs),
        tstar1_vs_gene: Summary::of(&c1),
        tstar2_vs_gene: Summary::of(&c2),
        gene_vs_true: Summary::of(&ct),
        skipped_genes: r1.skipped_genes.len(),
        em_seconds,
        rescale_seconds,
    };
    let kept = |v: &[f64]| r1.kept_genes.iter().map(|&g| v[g]).collect::<Vec<f64>>();
    let tables = vec![
        quantile_table(
            "correlation_quantiles",
            &[("gene_pair", &pairs), ("tstar1_vs_gene", &c1), ("tstar2_vs_gene", &c2), ("gene_vs_true", &ct)],
        ),
        Table::new("cells", &["true_time", "t_star1", "t_star2"], vec![truth.clone(), r1.t_star.clone(), r2.t_star.clone()]),
        Table::new(
            "genes",
            &["gene", "beta_true", "beta_star1", "beta_star2", "corr_true", "corr_tstar1", "corr_tstar2"],
            vec![
                r1.kept_genes.iter().map(|&g| g as f64).collect(),
                kept(&true_beta),
                r1.beta_star.clone(),
                r2.beta_star.clone(),
                ct,
                c1,
                c2,
            ],
        ),
    ];
    Ok((report, tables))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AgreementReport {
    pub replicates: usize,
    pub cosine_t: Vec<f64>,
    pub cosine_beta: Vec<f64>,
    pub median_cosine_t: f64,
    pub median_cosine_beta: f64,
    pub corr_true_p1: Vec<f64>,
}

/// Proposal agreement over replicate simulations with seeds `seed0..seed0 + replicates`.
pub fn proposal_agreement(seed0: u64, replicates: usize, em_cfg: &EmConfig) -> Result<AgreementReport> {
    let mut cos_t = Vec::new();
    let mut cos_b = Vec::new();
    let mut corr = Vec::new();
    for r in 0..replicates as u64 {
        let fit = shared_fit(seed0 + r, em_cfg)?;
        cos_t.push(cosine(&fit.r1.t_star, &fit.r2.t_star));
        cos_b.push(cosine(&fit.r1.beta_star, &fit.r2.beta_star));
        corr.push(pearson(&fit.r1.t_star, &fit.truth));
    }
    Ok(AgreementReport {
        replicates,
        median_cosine_t: quantile(&cos_t, 0.5),
        median_cosine_beta: quantile(&cos_b, 0.5),
        cosine_t: cos_t,
        cosine_beta: cos_b,
        corr_true_p1: corr,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UqReport {
    pub stage: StagePlan,
    pub replicates: usize,
    pub coverage_alpha: f64,
    pub coverage_gamma: f64,
    pub pd_fraction: f64,
    pub failed_genes: usize,
    pub max_spectral_radius: f64,
    pub velocity_norm_ratio: Summary,
    pub velocity_cosine: Summary,
    /// Sample variance of v̂ − v* per gene, genes in increasing γ order.
    pub bias_variance: Vec<f64>,
    pub bias_variance_inversions: usize,
}

fn stage_model(stage: &StagePlan) -> StageModel {
    match stage {
        StagePlan::AllOff { .. } => StageModel::Off,
        _ => StageModel::On,
    }
}

fn row_ratio_and_cosine(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let mut ratio = Vec::with_capacity(a.nrows());
    let mut cos = Vec::with_capacity(a.nrows());
    for (ra, rb) in a.row_iter().zip(b.row_iter()) {
        ratio.push(ra.norm() / rb.norm());
        cos.push(ra.dot(&rb) / (ra.norm() * rb.norm()));
    }
    (ratio, cos)
}

/// EM and SEM on `replicates` noise replicates of the 20-gene grid protocol.
pub fn uq_coverage(stage: StagePlan, seed0: u64, replicates: usize) -> Result<(UqReport, Vec<Table>)> {
    let em_cfg = EmConfig {
        stage: stage_model(&stage),
        t_switch: match stage {
            StagePlan::AllOff { t_switch } => t_switch,
            _ => TAU_1PCT,
        },
        ..EmConfig::default()
    };
    let mut hits = [0usize; 2];
    let mut total = 0usize;
    let mut pd = 0usize;
    let mut failed = 0usize;
    let mut rho: f64 = 0.0;
    let mut ratios = Vec::new();
    let mut cosines = Vec::new();
    let mut per_gene: Vec<(f64, f64, [usize; 2], Vec<f64>, Vec<f64>)> = Vec::new();
    let mut bias: Vec<Vec<f64>> = Vec::new();
    for r in 0..replicates as u64 {
        let sim = SimConfig::uq_benchmark(stage.clone(), seed0 + r);
        let ds = generate(&sim)?;
        let truth = ds.true_kinetics.clone().expect("simulated");
        if per_gene.is_empty() {
            per_gene = truth.iter().map(|k| (k.alpha_on, k.gamma, [0, 0], vec![], vec![])).collect();
            bias = vec![Vec::new(); truth.len()];
        }
        let em = em_infer(&ds, &em_cfg)?;
        for (g, res) in sem_covariance(&ds, &em, &em_cfg).into_iter().enumerate() {
            total += 1;
            let Ok(sem) = res else {
                failed += 1;
                continue;
            };
            let cov = sem.covers([truth[g].alpha_on, truth[g].gamma]);
            for i in 0..2 {
                hits[i] += cov[i] as usize;
                per_gene[g].2[i] += cov[i] as usize;
            }
            let hw = sem.half_widths();
            per_gene[g].3.push(hw[0]);
            per_gene[g].4.push(hw[1]);
            pd += sem.pd_flag as usize;
            let j = nalgebra::Matrix2::new(sem.j_m[0][0], sem.j_m[0][1], sem.j_m[1][0], sem.j_m[1][1]);
            rho = rho.max(spectral_radius(&j));
        }
        let v_hat = velocity_field(&ds, &em.kinetics_hat)?;
        let v_true = ds.true_velocity().expect("simulated");
        let (ra, co) = row_ratio_and_cosine(&v_hat, &v_true);
        ratios.extend(ra);
        cosines.extend(co);
        for g in 0..ds.n_genes() {
            bias[g].extend(column(&v_hat, g).iter().zip(column(&v_true, g)).map(|(a, b)| a - b));
        }
    }
    let mut order: Vec<usize> = (0..per_gene.len()).collect();
    order.sort_by(|&a, &b| per_gene[a].1.total_cmp(&per_gene[b].1));
    let bias_variance: Vec<f64> = order.iter().map(|&g| variance(&bias[g])).collect();
    let inversions = bias_variance.windows(2).filter(|w| w[1] < w[0]).count();
    let report = UqReport {
        stage,
        replicates,
        coverage_alpha: hits[0] as f64 / total.max(1) as f64,
        coverage_gamma: hits[1] as f64 / total.max(1) as f64,
        pd_fraction: pd as f64 / total.max(1) as f64,
        failed_genes: failed,
        max_spectral_radius: rho,
        velocity_norm_ratio: Summary::of(&ratios),
        velocity_cosine: Summary::of(&cosines),
        bias_variance,
        bias_variance_inversions: inversions,
    };
    let reps = replicates.max(1) as f64;
    let tables = vec![
        Table::new(
            "uq_genes",
            &["alpha", "gamma", "coverage_alpha", "coverage_gamma", "mean_halfwidth_alpha", "mean_halfwidth_gamma"],
            vec![
                per_gene.iter().map(|p| p.0).collect(),
                per_gene.iter().map(|p| p.1).collect(),
                per_gene.iter().map(|p| p.2[0] as f64 / reps).collect(),
                per_gene.iter().map(|p| p.2[1] as f64 / reps).collect(),
                per_gene.iter().map(|p| crate::stats::mean(&p.3)).collect(),
                per_gene.iter().map(|p| crate::stats::mean(&p.4)).collect(),
            ],
        ),
        quantile_table("velocity_quantiles", &[("norm_ratio", &ratios), ("cosine", &cosines)]),
        Table::new(
            "velocity_bias",
            &["gamma", "bias_mean", "bias_variance"],
            vec![
                order.iter().map(|&g| per_gene[g].1).collect(),
                order.iter().map(|&g| crate::stats::mean(&bias[g])).collect(),
                report.bias_variance.clone(),
            ],
        ),
    ];
    Ok((report, tables))
}

/// Velocity graph on the spliced counts with ε from the 30th-neighbour rule.
pub fn cell_graph(ds: &ExpressionDataset, velocities: &DMatrix<f64>, knn: usize) -> Result<CellGraph> {
    let eps = knn_bandwidth(&ds.s, knn)?;
    build_graph(&ds.s, velocities, KernelSpec::new(eps, ds.n_genes()))
}

fn true_velocity(ds: &ExpressionDataset) -> Result<DMatrix<f64>> {
    ds.true_velocity().ok_or_else(|| Error::Config("dataset carries no ground truth".into()))
}

/// Cells whose true time ranks in `lo..hi` (0 = earliest).
pub fn time_rank_range(times: &[f64], lo: usize, hi: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut out = order[lo.min(times.len())..hi.min(times.len())].to_vec();
    out.sort_unstable();
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PseudotimeReport {
    pub epsilon: f64,
    pub r_squared: f64,
    pub slope: f64,
    pub iters: usize,
    pub all_converged: bool,
    pub divergent: usize,
}

pub const KNN_BANDWIDTH: usize = 30;

fn fit_on(cells: &[usize], times: &[f64], k: &[f64]) -> (f64, f64) {
    let x: Vec<f64> = cells.iter().map(|&i| times[i]).collect();
    let y: Vec<f64> = cells.iter().map(|&i| k[i]).collect();
    (r_squared(&x, &y), linear_fit(&x, &y).0)
}

/// Hitting time to the latest cells on the noise-free linear protocol.
pub fn pseudotime_linear(seed: u64, n_target: usize) -> Result<(PseudotimeReport, HittingResult, Vec<Table>)> {
    let ds = generate(&SimConfig::pseudotime_benchmark(seed))?;
    let times = ds.true_times.clone().expect("simulated");
    let graph = cell_graph(&ds, &true_velocity(&ds)?, KNN_BANDWIDTH)?;
    let n = ds.n_cells();
    let target = time_rank_range(&times, n.saturating_sub(n_target), n);
    let res = solve_hitting(&HittingProblem::new(&graph.p, target.clone(), vec![]))?;
    let rest: Vec<usize> = (0..n).filter(|i| !target.contains(i)).collect();
    let (r2, slope) = fit_on(&rest, &times, &res.k);
    let report = PseudotimeReport {
        epsilon: graph.kernel.epsilon,
        r_squared: r2,
        slope,
        iters: res.iters,
        all_converged: res.all_converged(),
        divergent: res.divergent_states.len(),
    };
    let in_target: Vec<f64> = (0..n).map(|i| target.contains(&i) as u8 as f64).collect();
    let table = Table::new("pseudotime", &["true_time", "hitting_time", "in_target"], vec![times, res.k.clone(), in_target]);
    Ok((report, res, vec![table]))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MidTargetReport {
    pub iters: usize,
    pub r_squared_before: f64,
    pub after_min: f64,
    pub after_median: f64,
    pub after_flagged: usize,
    pub after_count: usize,
    pub before_flagged: usize,
}

/// Target in the middle of the trajectory: later cells cannot reach it.
pub fn pseudotime_mid_target(seed: u64, lo: usize, hi: usize, max_iters: usize) -> Result<(MidTargetReport, Vec<Table>)> {
    let ds = generate(&SimConfig::pseudotime_benchmark(seed))?;
    let times = ds.true_times.clone().expect("simulated");
    let graph = cell_graph(&ds, &true_velocity(&ds)?, KNN_BANDWIDTH)?;
    let target = time_rank_range(&times, lo, hi);
    let before = time_rank_range(&times, 0, lo);
    let after = time_rank_range(&times, hi, times.len());
    let res = solve_hitting(&HittingProblem { max_iters, ..HittingProblem::new(&graph.p, target, vec![]) })?;
    let flagged = |cells: &[usize]| cells.iter().filter(|i| res.divergent_states.contains(i)).count();
    let after_k: Vec<f64> = after.iter().map(|&i| res.k[i]).collect();
    let report = MidTargetReport {
        iters: res.iters,
        r_squared_before: fit_on(&before, &times, &res.k).0,
        after_min: quantile(&after_k, 0.0),
        after_median: quantile(&after_k, 0.5),
        after_flagged: flagged(&after),
        after_count: after.len(),
        before_flagged: flagged(&before),
    };
    let table = Table::new("mid_target", &["true_time", "hitting_time", "slope"], vec![times, res.k, res.slopes]);
    Ok((report, vec![table]))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BifurcationReport {
    pub epsilon: f64,
    pub trunk_cells: usize,
    pub branch1_cells: usize,
    pub branch2_cells: usize,
    /// Share of branch-2 cells the naive solver flags divergent for the branch-1 target.
    pub branch2_flagged: f64,
    pub lineage_flagged: usize,
    pub naive_iters: usize,
    /// R² of hitting time against true time over trunk and branch 1, taboo = branch 2.
    pub taboo_r_squared: f64,
    /// Same with the taboo set taken from the naive solver's divergent cells.
    pub detected_taboo_r_squared: f64,
    pub naive_r_squared: f64,
    pub trunk_gap_median: f64,
    pub branch_gap_median: f64,
    pub taboo_candidates: usize,
}

/// Two-branch protocol: naive and taboo hitting times to the end of branch 1, and the
/// fate gap between the two branch ends.
pub fn bifurcation(seed: u64, n_target: usize, max_iters: usize) -> Result<(BifurcationReport, Vec<Table>)> {
    let ds = generate(&SimConfig::bifurcation_benchmark(seed))?;
    let times = ds.true_times.clone().expect("simulated");
    let labels = ds.branch_labels.clone().expect("bifurcation data");
    let graph = cell_graph(&ds, &true_velocity(&ds)?, KNN_BANDWIDTH)?;
    let n = ds.n_cells();
    let branch = |b: u8| (0..n).filter(|&i| labels[i] == b).collect::<Vec<_>>();
    let latest = |cells: &[usize]| {
        let mut c = cells.to_vec();
        c.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
        c.truncate(n_target);
        c.sort_unstable();
        c
    };
    let (b1, b2) = (branch(1), branch(2));
    let a1 = latest(&b1);
    let a2 = latest(&b2);
    let gap = crate::hitting::bifurcation_gap(&graph.p, &a1, &a2, max_iters)?;
    let naive = &gap.fate1;
    let lineage: Vec<usize> = (0..n).filter(|i| labels[*i] != 2 && !a1.contains(i)).collect();
    let flagged: std::collections::HashSet<usize> = naive.divergent_states.iter().copied().collect();
    let solve_taboo = |taboo: Vec<usize>| {
        solve_hitting(&HittingProblem { max_iters, ..HittingProblem::new(&graph.p, a1.clone(), taboo) })
    };
    let taboo = solve_taboo(b2.clone())?;
    let detected = solve_taboo(naive.divergent_states.clone())?;
    let trunk = branch(0);
    let trunk_gap: Vec<f64> = trunk.iter().map(|&i| gap.gap[i]).collect();
    let branch_gap: Vec<f64> = (0..n).filter(|&i| labels[i] != 0).map(|i| gap.gap[i]).collect();
    let lineage_detected: Vec<usize> = lineage.iter().copied().filter(|i| !flagged.contains(i)).collect();
    let report = BifurcationReport {
        epsilon: graph.kernel.epsilon,
        trunk_cells: trunk.len(),
        branch1_cells: b1.len(),
        branch2_cells: b2.len(),
        branch2_flagged: b2.iter().filter(|i| flagged.contains(i)).count() as f64 / b2.len().max(1) as f64,
        lineage_flagged: lineage.iter().filter(|i| flagged.contains(i)).count(),
        naive_iters: naive.iters,
        taboo_r_squared: fit_on(&lineage, &times, &taboo.k).0,
        detected_taboo_r_squared: fit_on(&lineage_detected, &times, &detected.k).0,
        naive_r_squared: fit_on(&lineage, &times, &naive.k).0,
        trunk_gap_median: quantile(&trunk_gap, 0.5),
        branch_gap_median: quantile(&branch_gap, 0.5),
        taboo_candidates: gap.taboo_candidates.len(),
    };
    let table = Table::new(
        "bifurcation",
        &["true_time", "branch", "naive", "naive_slope", "taboo", "fate2", "gap"],
        vec![
            times,
            labels.iter().map(|&l| l as f64).collect(),
            naive.k.clone(),
            naive.slopes.clone(),
            taboo.k.clone(),
            gap.fate2.k.clone(),
            gap.gap.clone(),
        ],
    );
    Ok((report, vec![table]))
}

pub const BIFURCATION_TARGET: usize = 50;
pub const PSEUDOTIME_TARGET: usize = 100;
pub const MID_TARGET: (usize, usize) = (500, 800);
pub const NAIVE_MAX_ITERS: usize = DEFAULT_MAX_ITERS;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleSizeReport {
    pub epsilon: f64,
    pub n_small: usize,
    pub n_large: usize,
    pub seeds: Vec<u64>,
    /// Mean RMS error per test function at each size.
    pub error_small: Vec<f64>,
    pub error_large: Vec<f64>,
    pub ratio: Vec<f64>,
}

/// Error ratio between two sample sizes at a fixed bandwidth, averaged over seeds.
pub fn sample_size_ratio(base: &SweepConfig, epsilon: f64, n_small: usize, n_large: usize, seeds: &[u64]) -> Result<SampleSizeReport> {
    let mean_errors = |n: usize| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; base.functions.len()];
        for &seed in seeds {
            let r = bandwidth_sweep(&SweepConfig { n, seed, epsilons: vec![epsilon], ..base.clone() })?;
            for (a, c) in acc.iter_mut().zip(&r.curves) {
                *a += c.errors[0] / seeds.len() as f64;
            }
        }
        Ok(acc)
    };
    let small = mean_errors(n_small)?;
    let large = mean_errors(n_large)?;
    Ok(SampleSizeReport {
        epsilon,
        n_small,
        n_large,
        seeds: seeds.to_vec(),
        ratio: large.iter().zip(&small).map(|(l, s)| l / s).collect(),
        error_small: small,
        error_large: large,
    })
}

pub fn sweep_table(r: &SweepResult) -> Table {
    let mut cols = vec!["epsilon".to_string(), "ln_epsilon".to_string()];
    let mut data = vec![r.epsilons.clone(), r.epsilons.iter().map(|e| e.ln()).collect()];
    for c in &r.curves {
        cols.push(format!("error_{}", c.function.name()));
        data.push(c.errors.clone());
    }
    Table { name: "sweep".into(), columns: cols, data }
}
