//! Command-line front end. `run` parses arguments, dispatches to the library and maps
//! errors onto exit codes: 0 success, 2 bad input or configuration, 3 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{self, Table};
use crate::hitting::{self, HittingProblem, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use crate::inference::{em_infer, velocity_field, EmConfig, EmResult};
use crate::io;
use crate::kernelwalk::{bandwidth_sweep, Diagonal, SweepConfig, TestFunction};
use crate::rescale::{rescale, rescale_by_component, GeneTimeMatrix, Proposal};
use crate::synth::{generate, load_dataset, save_dataset, SimConfig, StagePlan, TAU_1PCT};
use crate::uq::sem_covariance;

#[derive(Parser, Debug)]
#[command(name = "velokit", version, about = "RNA-velocity inference, time rescaling and hitting-time pseudotime")]
struct Cli {
    /// TOML file with optional [simulate], [infer], [sweep] and [hitting] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the config file or preset.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "velokit-out")]
    out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "VELOKIT_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Fit per-gene rates and times with EM.
    Infer(InferArgs),
    /// Gene-shared latent time from a gene-specific time matrix.
    Rescale(RescaleArgs),
    /// SEM covariance and 95% intervals for fitted rates.
    Uq(UqArgs),
    /// Generator error against kernel bandwidth.
    Sweep(SweepArgs),
    /// Mean hitting times on a transition matrix.
    Hitting(HittingArgs),
    /// Run an end-to-end recipe and write its tables.
    Figures(FiguresArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    SharedTime,
    UqOn,
    UqOff,
    Pseudotime,
    Bifurcation,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Built-in protocol; without it the [simulate] config section is used.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

#[derive(Args, Debug)]
struct InferArgs {
    /// Dataset directory with unspliced.csv and spliced.csv.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Debug)]
struct RescaleArgs {
    /// Cells × genes CSV of gene-specific times (with header).
    #[arg(long)]
    times: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    proposal: u8,
    /// Rescale each connected gene component separately instead of failing on reducible input.
    #[arg(long)]
    by_component: bool,
}

#[derive(Args, Debug)]
struct UqArgs {
    #[arg(long)]
    data: PathBuf,
    /// Directory written by `infer`.
    #[arg(long)]
    em: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DiagonalArg {
    Include,
    Exclude,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FunctionArg {
    F1,
    F2,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    n: Option<usize>,
    /// Bandwidth grid as start:step:stop.
    #[arg(long)]
    epsilons: Option<String>,
    #[arg(long, value_enum, value_delimiter = ',')]
    functions: Option<Vec<FunctionArg>>,
    #[arg(long, value_enum)]
    diagonal: Option<DiagonalArg>,
    #[arg(long)]
    noise_var: Option<f64>,
}

#[derive(Args, Debug)]
struct HittingArgs {
    /// Transition matrix: dense CSV, or a row,col,value triplet CSV.
    #[arg(long, conflicts_with = "data")]
    graph: Option<PathBuf>,
    /// Dataset directory; the velocity graph is built on the spliced counts.
    #[arg(long, required_unless_present = "graph")]
    data: Option<PathBuf>,
    /// `infer` output whose fitted rates give the velocities (default: ground truth).
    #[arg(long, requires = "data")]
    em: Option<PathBuf>,
    /// Neighbour rank of the bandwidth rule.
    #[arg(long)]
    knn: Option<usize>,
    /// File of target state indices.
    #[arg(long)]
    target: PathBuf,
    /// File of taboo state indices.
    #[arg(long)]
    taboo: Option<PathBuf>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Solve (I − Q)k = 1 by LU instead of iterating.
    #[arg(long)]
    direct: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Recipe {
    Rescale,
    Agreement,
    Uq,
    Sweep,
    Pseudotime,
    Bifurcation,
    All,
}

#[derive(Args, Debug)]
struct FiguresArgs {
    #[arg(value_enum)]
    recipe: Recipe,
    /// Replicate count for the agreement and uq recipes.
    #[arg(long)]
    replicates: Option<usize>,
}

/// Hitting settings of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HittingSettings {
    pub max_iters: usize,
    pub tol: f64,
    pub knn: usize,
}

impl Default for HittingSettings {
    fn default() -> Self {
        HittingSettings { max_iters: DEFAULT_MAX_ITERS, tol: DEFAULT_TOL, knn: experiments::KNN_BANDWIDTH }
    }
}

/// Layout of the `--config` TOML file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub simulate: Option<SimConfig>,
    #[serde(default)]
    pub infer: EmConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub hitting: HittingSettings,
}

impl ConfigFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ConfigFile = toml::from_str(text)?;
        c.infer.validate()?;
        c.sweep.validate()?;
        if let Some(s) = &c.simulate {
            s.validate()?;
        }
        Ok(c)
    }
}

/// Written to `manifest.json` after every successful run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub wall_seconds: f64,
    pub workers: usize,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

struct Ctx {
    out: PathBuf,
    seed: Option<u64>,
    config: ConfigFile,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Ctx {
    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let p = self.out.join(name);
        io::write_json(&p, v)?;
        self.outputs.push(p);
        Ok(())
    }

    fn tables(&mut self, dir: &Path, tables: &[Table]) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for t in tables {
            self.outputs.push(t.write_csv(dir)?);
        }
        Ok(())
    }
}

/// Entry point of the binary. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let out = cli.out.clone();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            let report = ErrorReport { error: e.kind(), message: e.to_string(), exit_code: code };
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_else(|_| e.to_string()));
            if std::fs::create_dir_all(&out).is_ok() {
                let _ = io::write_json(&out.join("error.json"), &report);
            }
            code
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let start = Instant::now();
    let workers = match cli.workers {
        Some(0) => return Err(Error::Config("--workers must be positive".into())),
        Some(w) => w,
        None => rayon::current_num_threads(),
    };
    let config = match &cli.config {
        Some(p) => ConfigFile::from_toml(&std::fs::read_to_string(p)?)?,
        None => ConfigFile::default(),
    };
    std::fs::create_dir_all(&cli.out)?;
    let mut ctx = Ctx {
        out: cli.out.clone(),
        seed: cli.seed,
        config,
        inputs: cli.config.iter().cloned().collect(),
        outputs: Vec::new(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let name = pool.install(|| match &cli.command {
        Command::Simulate(a) => simulate(&mut ctx, a).map(|_| "simulate"),
        Command::Infer(a) => infer(&mut ctx, a).map(|_| "infer"),
        Command::Rescale(a) => rescale_cmd(&mut ctx, a).map(|_| "rescale"),
        Command::Uq(a) => uq(&mut ctx, a).map(|_| "uq"),
        Command::Sweep(a) => sweep(&mut ctx, a).map(|_| "sweep"),
        Command::Hitting(a) => hitting_cmd(&mut ctx, a).map(|_| "hitting"),
        Command::Figures(a) => figures(&mut ctx, a).map(|_| "figures"),
    })?;
    let manifest = RunManifest {
        subcommand: name.into(),
        config_path: cli.config.clone(),
        seed: cli.seed,
        inputs: ctx.inputs.clone(),
        outputs: ctx.outputs.clone(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        wall_seconds: start.elapsed().as_secs_f64(),
        workers,
    };
    io::write_json(&ctx.out.join("manifest.json"), &manifest)
}

fn simulate(ctx: &mut Ctx, a: &SimulateArgs) -> Result<()> {
    let seed = ctx.seed.unwrap_or(0);
    let mut cfg = match a.preset {
        Some(Preset::SharedTime) => SimConfig::shared_time_benchmark(seed),
        Some(Preset::UqOn) => SimConfig::uq_benchmark(StagePlan::AllOn, seed),
        Some(Preset::UqOff) => SimConfig::uq_benchmark(StagePlan::AllOff { t_switch: TAU_1PCT }, seed),
        Some(Preset::Pseudotime) => SimConfig::pseudotime_benchmark(seed),
        Some(Preset::Bifurcation) => SimConfig::bifurcation_benchmark(seed),
        None => ctx
            .config
            .simulate
            .clone()
            .ok_or_else(|| Error::Config("simulate needs --preset or a [simulate] config section".into()))?,
    };
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    let ds = generate(&cfg)?;
    let paths = save_dataset(&ctx.out, &ds, Some(&cfg))?;
    ctx.outputs.extend(paths);
    Ok(())
}

pub const EM_RESULT_FILE: &str = "em_result.json";
pub const TIME_MATRIX_FILE: &str = "time_matrix.csv";
pub const EM_CONFIG_FILE: &str = "em_config.json";

fn infer(ctx: &mut Ctx, a: &InferArgs) -> Result<()> {
    ctx.inputs.push(a.data.clone());
    let ds = load_dataset(&a.data)?;
    let cfg = ctx.config.infer.clone();
    let em = em_infer(&ds, &cfg)?;
    ctx.json(EM_RESULT_FILE, &em)?;
    let p = ctx.out.join(TIME_MATRIX_FILE);
    io::write_matrix_csv(&p, &io::gene_header(ds.n_genes()), em.time_matrix.matrix())?;
    ctx.outputs.push(p);
    ctx.json(EM_CONFIG_FILE, &cfg)
}

/// Reads `infer` output back, restoring the time matrix from its CSV.
pub fn load_em(dir: &Path) -> Result<(EmResult, EmConfig)> {
    let mut em: EmResult = io::read_json(&dir.join(EM_RESULT_FILE))?;
    let (_, t) = io::read_matrix_csv(&dir.join(TIME_MATRIX_FILE))?;
    for (g, fit) in em.genes.iter_mut().enumerate() {
        if g < t.ncols() {
            fit.times = t.column(g).iter().copied().collect();
        }
    }
    em.time_matrix = GeneTimeMatrix::new(t)?;
    let cfg: EmConfig = io::read_json(&dir.join(EM_CONFIG_FILE))?;
    cfg.validate()?;
    Ok((em, cfg))
}

fn rescale_cmd(ctx: &mut Ctx, a: &RescaleArgs) -> Result<()> {
    ctx.inputs.push(a.times.clone());
    let (_, t) = io::read_matrix_csv(&a.times)?;
    let t = GeneTimeMatrix::new(t)?;
    let proposal = Proposal::from_number(a.proposal)?;
    let results = if a.by_component { rescale_by_component(&t, proposal)? } else { vec![rescale(&t, proposal)?] };
    if results.len() == 1 {
        let r = &results[0];
        ctx.json("rescale.json", r)?;
        let p = ctx.out.join("t_star.csv");
        io::write_columns_csv(&p, &["t_star"], &[&r.t_star])?;
        ctx.outputs.push(p);
    } else {
        ctx.json("rescale.json", &results)?;
    }
    Ok(())
}

fn uq(ctx: &mut Ctx, a: &UqArgs) -> Result<()> {
    ctx.inputs.extend([a.data.clone(), a.em.clone()]);
    let ds = load_dataset(&a.data)?;
    let (em, cfg) = load_em(&a.em)?;
    let rows: Vec<serde_json::Value> = sem_covariance(&ds, &em, &cfg)
        .into_iter()
        .enumerate()
        .map(|(g, r)| match r {
            Ok(s) => serde_json::to_value(s).unwrap_or(serde_json::Value::Null),
            Err(e) => serde_json::json!({ "gene": g, "error": e.kind(), "message": e.to_string() }),
        })
        .collect();
    ctx.json("sem.json", &rows)
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad grid {spec:?}: {e}"))))
        .collect::<Result<_>>()?;
    match parts[..] {
        [start, step, stop] if step > 0.0 && stop >= start => {
            let k = ((stop - start) / step + 1e-9).floor() as usize;
            Ok((0..=k).map(|i| start + step * i as f64).collect())
        }
        _ => Err(Error::Config(format!("grid must be start:step:stop with step > 0, got {spec:?}"))),
    }
}

fn sweep(ctx: &mut Ctx, a: &SweepArgs) -> Result<()> {
    let mut cfg = ctx.config.sweep.clone();
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(g) = &a.epsilons {
        cfg.epsilons = parse_grid(g)?;
    }
    if let Some(f) = &a.functions {
        cfg.functions = f
            .iter()
            .map(|f| match f {
                FunctionArg::F1 => TestFunction::F1,
                FunctionArg::F2 => TestFunction::F2,
            })
            .collect();
    }
    if let Some(d) = a.diagonal {
        cfg.diagonal = match d {
            DiagonalArg::Include => Diagonal::Include,
            DiagonalArg::Exclude => Diagonal::Exclude,
        };
    }
    if let Some(v) = a.noise_var {
        cfg.noise_var = v;
    }
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    let r = bandwidth_sweep(&cfg)?;
    let out = ctx.out.clone();
    ctx.tables(&out, &[experiments::sweep_table(&r)])?;
    ctx.json("sweep.json", &r)?;
    ctx.json("sweep_config.json", &cfg)
}

/// Dense CSV, or triplets when the header is `row,col,value`.
pub fn read_transition_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != ["row", "col", "value"] {
        let (_, m) = io::read_matrix_csv(path)?;
        return Ok(m);
    }
    let mut trip = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
        let idx = |s: String| s.parse::<usize>().map_err(|e| Error::Config(format!("bad index {s:?}: {e}")));
        let v: f64 = field(2).parse().map_err(|e| Error::Config(format!("bad value {:?}: {e}", field(2))))?;
        trip.push((idx(field(0))?, idx(field(1))?, v));
    }
    let n = trip.iter().map(|&(i, j, _)| i.max(j) + 1).max().unwrap_or(0);
    let mut m = DMatrix::zeros(n, n);
    for (i, j, v) in trip {
        m[(i, j)] += v;
    }
    Ok(m)
}

fn hitting_cmd(ctx: &mut Ctx, a: &HittingArgs) -> Result<()> {
    let settings = ctx.config.hitting.clone();
    let p = match (&a.graph, &a.data) {
        (Some(g), _) => {
            ctx.inputs.push(g.clone());
            read_transition_matrix(g)?
        }
        (None, Some(d)) => {
            ctx.inputs.push(d.clone());
            let ds = load_dataset(d)?;
            let v = match &a.em {
                Some(dir) => {
                    ctx.inputs.push(dir.clone());
                    velocity_field(&ds, &load_em(dir)?.0.kinetics_hat)?
                }
                None => ds
                    .true_velocity()
                    .ok_or_else(|| Error::Config("dataset has no ground truth; pass --em".into()))?,
            };
            let g = experiments::cell_graph(&ds, &v, a.knn.unwrap_or(settings.knn))?;
            g.p
        }
        (None, None) => return Err(Error::Config("hitting needs --graph or --data".into())),
    };
    ctx.inputs.push(a.target.clone());
    let target = io::read_index_list(&a.target)?;
    let taboo = match &a.taboo {
        Some(t) => {
            ctx.inputs.push(t.clone());
            io::read_index_list(t)?
        }
        None => Vec::new(),
    };
    let problem = HittingProblem {
        max_iters: a.max_iters.unwrap_or(settings.max_iters),
        tol: a.tol.unwrap_or(settings.tol),
        ..HittingProblem::new(&p, target, taboo)
    };
    let res = if a.direct { hitting::solve_hitting_direct(&problem)? } else { hitting::solve_hitting(&problem)? };
    let state: Vec<f64> = (0..p.nrows()).map(|i| i as f64).collect();
    let conv: Vec<f64> = res.converged_mask.iter().map(|&c| c as u8 as f64).collect();
    let mut div = vec![0.0; p.nrows()];
    for &i in &res.divergent_states {
        div[i] = 1.0;
    }
    let path = ctx.out.join("hitting.csv");
    io::write_columns_csv(&path, &["state", "k", "converged", "divergent", "slope"], &[&state, &res.k, &conv, &div, &res.slopes])?;
    ctx.outputs.push(path);
    ctx.json("hitting.json", &res)
}

fn figures(ctx: &mut Ctx, a: &FiguresArgs) -> Result<()> {
    let seed = ctx.seed.unwrap_or(0);
    let want = |r: Recipe| a.recipe == r || a.recipe == Recipe::All;
    let base = ctx.out.clone();
    if want(Recipe::Rescale) {
        let (rep, tables) = experiments::shared_time(seed, &experiments::shared_time_em_config())?;
        ctx.tables(&base.join("rescale"), &tables)?;
        ctx.json("rescale/report.json", &rep)?;
    }
    if want(Recipe::Agreement) {
        let rep = experiments::proposal_agreement(seed, a.replicates.unwrap_or(20), &experiments::shared_time_em_config())?;
        std::fs::create_dir_all(base.join("agreement"))?;
        ctx.json("agreement/report.json", &rep)?;
    }
    if want(Recipe::Uq) {
        let reps = a.replicates.unwrap_or(100);
        for (name, plan) in [("on", StagePlan::AllOn), ("off", StagePlan::AllOff { t_switch: TAU_1PCT })] {
            let (rep, tables) = experiments::uq_coverage(plan, seed, reps)?;
            let dir = base.join(format!("uq_{name}"));
            ctx.tables(&dir, &tables)?;
            ctx.json(&format!("uq_{name}/report.json"), &rep)?;
        }
    }
    if want(Recipe::Sweep) {
        let cfg = SweepConfig { seed, ..ctx.config.sweep.clone() };
        let r = bandwidth_sweep(&cfg)?;
        ctx.tables(&base.join("sweep"), &[experiments::sweep_table(&r)])?;
        ctx.json("sweep/report.json", &r)?;
        let seeds: Vec<u64> = (seed..seed + 5).collect();
        let ratio = experiments::sample_size_ratio(&cfg, 0.01, cfg.n / 4, cfg.n, &seeds)?;
        ctx.json("sweep/sample_size.json", &ratio)?;
    }
    if want(Recipe::Pseudotime) {
        let (rep, _, tables) = experiments::pseudotime_linear(seed, experiments::PSEUDOTIME_TARGET)?;
        ctx.tables(&base.join("pseudotime"), &tables)?;
        ctx.json("pseudotime/report.json", &rep)?;
        let (lo, hi) = experiments::MID_TARGET;
        let (mid, tables) = experiments::pseudotime_mid_target(seed, lo, hi, experiments::NAIVE_MAX_ITERS)?;
        ctx.tables(&base.join("pseudotime"), &tables)?;
        ctx.json("pseudotime/mid_target.json", &mid)?;
    }
    if want(Recipe::Bifurcation) {
        let (rep, tables) =
            experiments::bifurcation(seed, experiments::BIFURCATION_TARGET, experiments::NAIVE_MAX_ITERS)?;
        ctx.tables(&base.join("bifurcation"), &tables)?;
        ctx.json("bifurcation/report.json", &rep)?;
    }
    Ok(())
}
