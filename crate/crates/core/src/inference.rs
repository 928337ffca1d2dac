//! Latent-time EM in the small-noise limit with β fixed to 1.
//!
//! The E-step projects each observation onto the model curve of its gene; the M-step
//! refits (α, γ) by Gauss–Newton at the projected times. Genes share nothing once β is
//! fixed, so each gene runs its own EM and the genes run in parallel.

use nalgebra::{DMatrix, Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{degenerate_threshold, evolve, GeneKinetics, StateUS};
use crate::error::{Error, Result};
use crate::rescale::GeneTimeMatrix;
use crate::synth::{ExpressionDataset, TAU_1PCT};

/// Which part of the trajectory the observations are assumed to come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageModel {
    /// Induction from (0, 0); times in [0, t_horizon].
    On,
    /// Repression after a switch at `t_switch`; times in [t_switch, t_horizon].
    Off,
    /// Full on-then-off trajectory; times in [0, t_horizon].
    Switching,
    /// Fit `On` and `Off` separately and keep the lower loss.
    Auto,
}

/// Stage actually used for a gene's fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStage {
    On,
    Off,
    Switching,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Multistart {
    /// Multistart in the first M-step only; later M-steps warm-start from the current rates.
    FirstIteration,
    EveryIteration,
    Never,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub t_horizon: f64,
    pub grid_size: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub stage: StageModel,
    /// Switch time used by the `Off`, `Switching` and `Auto` models.
    pub t_switch: f64,
    /// Width at which golden-section refinement of a projected time stops.
    pub time_tol: f64,
    pub multistart: Multistart,
    /// Squared-extrapolation acceleration of the EM map.
    pub accelerate: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            t_horizon: 2.0 * TAU_1PCT,
            grid_size: 256,
            max_iters: 200,
            rel_tol: 1e-6,
            stage: StageModel::On,
            t_switch: TAU_1PCT,
            time_tol: 1e-8,
            multistart: Multistart::FirstIteration,
            accelerate: true,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 16 {
            return Err(Error::Config("grid_size must be at least 16".into()));
        }
        if !(self.rel_tol > 0.0) || self.max_iters < 1 {
            return Err(Error::Config("rel_tol must be positive and max_iters at least 1".into()));
        }
        if !(self.t_horizon > 0.0) || !self.t_horizon.is_finite() {
            return Err(Error::Config("t_horizon must be positive and finite".into()));
        }
        if !(self.time_tol > 0.0) {
            return Err(Error::Config("time_tol must be positive".into()));
        }
        if self.stage != StageModel::On && !(self.t_switch > 0.0 && self.t_switch < self.t_horizon) {
            return Err(Error::Config("t_switch must lie in (0, t_horizon)".into()));
        }
        Ok(())
    }
}

/// Rates (α, γ) of one gene with β = 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub alpha: f64,
    pub gamma: f64,
}

impl Rates {
    pub fn new(alpha: f64, gamma: f64) -> Self {
        Rates { alpha, gamma }
    }

    pub fn to_vec(self) -> [f64; 2] {
        [self.alpha, self.gamma]
    }

    pub fn kinetics(self, stage: FitStage, cfg: &EmConfig) -> GeneKinetics {
        let t_switch = match stage {
            FitStage::On => f64::INFINITY,
            FitStage::Off | FitStage::Switching => cfg.t_switch,
        };
        GeneKinetics { alpha_on: self.alpha, beta: 1.0, gamma: self.gamma, t_switch }
    }
}

/// Per-cell quantities of the model curve that depend on time only (β = 1).
#[derive(Clone, Copy, Debug)]
pub struct TimePoint {
    /// Time since the start of the current stage.
    tau: f64,
    /// e^{−τ}
    e: f64,
    /// e^{−τ} − 1
    em1: f64,
    off: bool,
}

/// Model curve of one gene under a stage model, with β = 1.
#[derive(Clone, Copy, Debug)]
pub struct Curve {
    pub rates: Rates,
    pub stage: FitStage,
    pub t_switch: f64,
    switch_state: StateUS,
}

impl Curve {
    pub fn new(rates: Rates, stage: FitStage, t_switch: f64) -> Self {
        let switch_state = match stage {
            FitStage::On => StateUS::ZERO,
            _ => evolve(rates.alpha, 1.0, rates.gamma, StateUS::ZERO, t_switch),
        };
        Curve { rates, stage, t_switch, switch_state }
    }

    pub fn time_point(&self, t: f64) -> TimePoint {
        let off = self.stage != FitStage::On && t > self.t_switch;
        let tau = if off { t - self.t_switch } else { t };
        TimePoint { tau, e: (-tau).exp(), em1: (-tau).exp_m1(), off }
    }

    /// Evaluates the curve at a cached time point. Same closed form as
    /// [`crate::dynamics::evolve`] with β = 1, reusing the γ-independent exponentials.
    #[inline]
    pub fn eval(&self, p: &TimePoint) -> StateUS {
        let Rates { alpha, gamma } = self.rates;
        let tau = p.tau;
        let eg_m1 = (-gamma * tau).exp_m1();
        let delta = gamma - 1.0;
        let ratio = if delta.abs() <= degenerate_threshold(1.0, gamma) {
            let x = delta * tau;
            -tau * p.e * (1.0 - x / 2.0 * (1.0 - x / 3.0 * (1.0 - x / 4.0)))
        } else if delta > 0.0 {
            p.e * (-delta * tau).exp_m1() / delta
        } else {
            -(eg_m1 + 1.0) * (delta * tau).exp_m1() / delta
        };
        if p.off {
            let sw = self.switch_state;
            StateUS { u: sw.u * p.e, s: sw.s * (eg_m1 + 1.0) - sw.u * ratio }
        } else {
            StateUS { u: -alpha * p.em1, s: -(alpha / gamma) * eg_m1 + alpha * ratio }
        }
    }

    #[inline]
    pub fn at(&self, t: f64) -> StateUS {
        self.eval(&self.time_point(t))
    }

    /// Admissible time interval.
    pub fn domain(&self, cfg: &EmConfig) -> (f64, f64) {
        match self.stage {
            FitStage::Off => (cfg.t_switch, cfg.t_horizon),
            _ => (0.0, cfg.t_horizon),
        }
    }
}

#[inline]
fn dist2(x: StateUS, y: StateUS) -> f64 {
    let du = x.u - y.u;
    let ds = x.s - y.s;
    du * du + ds * ds
}

/// Golden-section minimisation of a unimodal-ish `f` on [a, b].
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Curve sampled on the coarse E-step grid, reused for every cell of a gene.
pub struct Projector {
    curve: Curve,
    grid_t: Vec<f64>,
    grid_x: Vec<StateUS>,
    tol: f64,
}

impl Projector {
    pub fn new(curve: Curve, cfg: &EmConfig) -> Self {
        let (lo, hi) = curve.domain(cfg);
        let m = cfg.grid_size;
        let grid_t: Vec<f64> = (0..m)
            .map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64)
            .collect();
        let grid_x = grid_t.iter().map(|&t| curve.at(t)).collect();
        Projector { curve, grid_t, grid_x, tol: cfg.time_tol }
    }

    /// Nearest point on the curve: (time, squared distance).
    pub fn project(&self, x: StateUS) -> (f64, f64) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &g) in self.grid_x.iter().enumerate() {
            let d = dist2(x, g);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        let last = self.grid_t.len() - 1;
        let a = self.grid_t[best.saturating_sub(1)];
        let b = self.grid_t[(best + 1).min(last)];
        let (t, d) = golden_section(|t| dist2(x, self.curve.at(t)), a, b, self.tol);
        if d < best_d {
            (t, d)
        } else {
            (self.grid_t[best], best_d)
        }
    }
}

/// E-step for a single observation.
pub fn project_time(x: StateUS, rates: Rates, stage: FitStage, cfg: &EmConfig) -> f64 {
    let curve = Curve::new(rates, stage, cfg.t_switch);
    Projector::new(curve, cfg).project(x).0
}

/// Sum of squared residuals of one gene at fixed times.
pub fn gene_loss(u: &[f64], s: &[f64], times: &[f64], curve: &Curve) -> f64 {
    let mut acc = 0.0;
    for c in 0..u.len() {
        acc += dist2(StateUS::new(u[c], s[c]), curve.at(times[c]));
    }
    acc
}

fn quantile(v: &[f64], q: f64) -> f64 {
    let mut w: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if w.is_empty() {
        return 0.0;
    }
    w.sort_by(f64::total_cmp);
    w[((w.len() - 1) as f64 * q).round() as usize]
}

/// Moment-style starting rates from the upper quantiles of u and s.
pub fn initial_guess(u: &[f64], s: &[f64], stage: FitStage, cfg: &EmConfig) -> Rates {
    let uq = quantile(u, 0.95).max(1e-3);
    let sq = quantile(s, 0.95).max(1e-3);
    let alpha = match stage {
        FitStage::Off => uq / (1.0 - (-cfg.t_switch).exp()),
        _ => uq,
    };
    let gamma = (uq / sq).clamp(1e-3, 1e3);
    Rates::new(alpha.clamp(1e-3, 1e7), gamma)
}

const GN_MAX_ITERS: usize = 200;
const GN_HALVINGS: usize = 20;

/// Outcome of one Gauss–Newton run.
#[derive(Clone, Copy, Debug)]
pub struct GnOutcome {
    pub rates: Rates,
    pub loss: f64,
    pub iters: usize,
}

/// Stopping rule of a Gauss–Newton run.
#[derive(Clone, Copy, Debug)]
pub struct GnStop {
    pub max_iters: usize,
    /// Stop once an accepted step lowers the loss by less than this fraction.
    pub rel_gain: f64,
}

impl GnStop {
    pub const TIGHT: GnStop = GnStop { max_iters: GN_MAX_ITERS, rel_gain: 1e-15 };
    /// Used to screen multistart points before the best one is polished.
    pub const SCREEN: GnStop = GnStop { max_iters: 4, rel_gain: 1e-6 };
}

/// Sum of squared residuals at cached time points, keeping the curve states in `out`.
fn loss_into(u: &[f64], s: &[f64], pts: &[TimePoint], curve: &Curve, out: &mut Vec<StateUS>) -> f64 {
    out.clear();
    let mut acc = 0.0;
    for c in 0..u.len() {
        let x = curve.eval(&pts[c]);
        acc += dist2(StateUS::new(u[c], s[c]), x);
        out.push(x);
    }
    acc
}

/// Gauss–Newton on (ln α, ln γ) with step halving.
///
/// The curve is linear in α under every stage model, so the ln α column of the Jacobian is
/// the curve itself; the ln γ column is a forward difference.
pub fn gauss_newton(
    u: &[f64],
    s: &[f64],
    times: &[f64],
    start: Rates,
    stage: FitStage,
    t_switch: f64,
) -> GnOutcome {
    let probe = Curve::new(start, stage, t_switch);
    let pts: Vec<TimePoint> = times.iter().map(|&t| probe.time_point(t)).collect();
    gauss_newton_cached(u, s, &pts, start, stage, t_switch, GnStop::TIGHT)
}

fn gauss_newton_cached(
    u: &[f64],
    s: &[f64],
    pts: &[TimePoint],
    start: Rates,
    stage: FitStage,
    t_switch: f64,
    stop: GnStop,
) -> GnOutcome {
    let curve = |p: Vector2<f64>| Curve::new(Rates::new(p[0].exp(), p[1].exp()), stage, t_switch);
    let mut p = Vector2::new(start.alpha.ln(), start.gamma.ln());
    let mut x0 = Vec::with_capacity(u.len());
    let mut trial_x = Vec::with_capacity(u.len());
    let mut loss = loss_into(u, s, pts, &curve(p), &mut x0);
    let mut iters = 0;
    if !loss.is_finite() {
        return GnOutcome { rates: start, loss, iters };
    }
    while iters < stop.max_iters {
        iters += 1;
        let hg = 1e-7 * (p[1].abs() + 1.0);
        let cg = curve(p + Vector2::new(0.0, hg));
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vector2::zeros();
        for c in 0..u.len() {
            let x = x0[c];
            let xg = cg.eval(&pts[c]);
            let ru = u[c] - x.u;
            let rs = s[c] - x.s;
            let ju = Vector2::new(x.u, (xg.u - x.u) / hg);
            let js = Vector2::new(x.s, (xg.s - x.s) / hg);
            jtj += ju * ju.transpose() + js * js.transpose();
            jtr += ju * ru + js * rs;
        }
        let trace = jtj.trace();
        if !(trace > 0.0) || !trace.is_finite() {
            break;
        }
        let reg = Matrix2::identity() * (1e-12 * trace);
        let Some(step) = (jtj + reg).lu().solve(&jtr) else { break };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=GN_HALVINGS {
            let trial = p + step * scale;
            let l = loss_into(u, s, pts, &curve(trial), &mut trial_x);
            if l < loss {
                let moved = (trial - p).amax();
                let gain = loss - l;
                p = trial;
                loss = l;
                std::mem::swap(&mut x0, &mut trial_x);
                accepted = true;
                if moved < 1e-13 || gain <= stop.rel_gain * loss {
                    return GnOutcome { rates: Rates::new(p[0].exp(), p[1].exp()), loss, iters };
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    GnOutcome { rates: Rates::new(p[0].exp(), p[1].exp()), loss, iters }
}

/// M-step: best Gauss–Newton solution over the start points.
///
/// With several starts each is first run under [`GnStop::SCREEN`]; the best screened point is
/// then polished to full tolerance.
pub fn fit_rates_from(
    u: &[f64],
    s: &[f64],
    times: &[f64],
    stage: FitStage,
    cfg: &EmConfig,
    starts: &[Rates],
) -> Result<GnOutcome> {
    let probe = Curve::new(Rates::new(1.0, 1.0), stage, cfg.t_switch);
    let pts: Vec<TimePoint> = times.iter().map(|&t| probe.time_point(t)).collect();
    let stop = if starts.len() > 1 { GnStop::SCREEN } else { GnStop::TIGHT };
    let mut best: Option<GnOutcome> = None;
    for &st in starts {
        let out = gauss_newton_cached(u, s, &pts, st, stage, cfg.t_switch, stop);
        if out.loss.is_finite() && best.is_none_or(|b| out.loss < b.loss) {
            best = Some(out);
        }
    }
    let best = best.ok_or_else(|| Error::NonConvergence {
        gene: None,
        best: starts.first().map_or((f64::NAN, f64::NAN), |r| (r.alpha, r.gamma)),
        reason: "every start produced a non-finite loss".into(),
    })?;
    if starts.len() > 1 {
        let polished = gauss_newton_cached(u, s, &pts, best.rates, stage, cfg.t_switch, GnStop::TIGHT);
        if polished.loss <= best.loss {
            return Ok(polished);
        }
    }
    Ok(best)
}

/// Start points of the 4×4 log-grid around `center`.
pub fn multistart_grid(center: Rates) -> Vec<Rates> {
    const F: [f64; 4] = [0.5, 0.7937005259840998, 1.2599210498948732, 2.0];
    let mut v = Vec::with_capacity(16);
    for fa in F {
        for fg in F {
            v.push(Rates::new(center.alpha * fa, center.gamma * fg));
        }
    }
    v
}

/// M-step with the multistart grid around moment-based guesses.
pub fn fit_rates(
    u: &[f64],
    s: &[f64],
    times: &[f64],
    stage: FitStage,
    cfg: &EmConfig,
) -> Result<Rates> {
    let mut starts = vec![initial_guess(u, s, stage, cfg)];
    starts.extend(multistart_grid(starts[0]));
    fit_rates_from(u, s, times, stage, cfg, &starts).map(|o| o.rates)
}

/// E-step over all cells of a gene.
pub fn project_all(u: &[f64], s: &[f64], curve: Curve, cfg: &EmConfig) -> (Vec<f64>, f64) {
    let proj = Projector::new(curve, cfg);
    let mut loss = 0.0;
    let times = (0..u.len())
        .map(|c| {
            let (t, d) = proj.project(StateUS::new(u[c], s[c]));
            loss += d;
            t
        })
        .collect();
    (times, loss)
}

/// One EM update θ ↦ M(θ): project at θ, then refit by Gauss–Newton started at θ.
pub fn em_map(
    u: &[f64],
    s: &[f64],
    rates: Rates,
    stage: FitStage,
    cfg: &EmConfig,
) -> Result<(Rates, Vec<f64>)> {
    let (times, _) = project_all(u, s, Curve::new(rates, stage, cfg.t_switch), cfg);
    let out = fit_rates_from(u, s, &times, stage, cfg, &[rates])?;
    Ok((out.rates, times))
}

/// Result of the EM for one gene.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneFit {
    pub rates: Rates,
    pub stage: FitStage,
    #[serde(skip)]
    pub times: Vec<f64>,
    pub loss: f64,
    pub loss_trace: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
    pub error: Option<String>,
}

fn max_rel_change(a: Rates, b: Rates) -> f64 {
    let ra = (a.alpha - b.alpha).abs() / (b.alpha.abs() + 1e-12);
    let rg = (a.gamma - b.gamma).abs() / (b.gamma.abs() + 1e-12);
    ra.max(rg)
}

/// Rates and carried times after an EM update, with the loss at both.
struct EmState {
    rates: Rates,
    times: Vec<f64>,
    loss: f64,
}

/// Re-projects at `rates`, keeping a cell's previous time whenever the new projection is
/// not closer. This keeps the loss monotone even where the grid search misses.
fn e_step_keep_best(u: &[f64], s: &[f64], rates: Rates, prev: &[f64], stage: FitStage, cfg: &EmConfig) -> EmState {
    let curve = Curve::new(rates, stage, cfg.t_switch);
    let (proj_t, _) = project_all(u, s, curve, cfg);
    let mut times = Vec::with_capacity(u.len());
    let mut loss = 0.0;
    for c in 0..u.len() {
        let x = StateUS::new(u[c], s[c]);
        let d_new = dist2(x, curve.at(proj_t[c]));
        let d_old = dist2(x, curve.at(prev[c]));
        if d_new <= d_old {
            times.push(proj_t[c]);
            loss += d_new;
        } else {
            times.push(prev[c]);
            loss += d_old;
        }
    }
    EmState { rates, times, loss }
}

/// One EM update from a carried state: M-step at the carried times, then E-step.
fn em_update(u: &[f64], s: &[f64], st: &EmState, stage: FitStage, cfg: &EmConfig, multistart: bool) -> Result<(EmState, f64)> {
    let mut starts = vec![st.rates];
    if multistart {
        starts.extend(multistart_grid(st.rates));
    }
    let m = fit_rates_from(u, s, &st.times, stage, cfg, &starts)?;
    Ok((e_step_keep_best(u, s, m.rates, &st.times, stage, cfg), m.loss))
}

/// EM for one gene under a fixed stage.
///
/// With `cfg.accelerate` the plain updates are wrapped in a squared extrapolation step
/// (two EM updates, an extrapolated point, one stabilising update). The extrapolated
/// result is only accepted when its loss does not exceed that of the second plain update,
/// so the loss trace stays nonincreasing and the fixed points are those of the plain EM.
pub fn em_gene_stage(u: &[f64], s: &[f64], stage: FitStage, cfg: &EmConfig) -> GeneFit {
    let rates0 = initial_guess(u, s, stage, cfg);
    let (times0, _) = project_all(u, s, Curve::new(rates0, stage, cfg.t_switch), cfg);
    let mut st = EmState { rates: rates0, times: times0, loss: f64::INFINITY };
    let mut trace = Vec::new();
    let mut converged = false;
    let mut error = None;
    let mut iters = 0;
    let fail = |e: Error, st: EmState, trace: Vec<f64>, iters: usize| GeneFit {
        rates: st.rates,
        stage,
        times: st.times,
        loss: st.loss,
        loss_trace: trace,
        iters,
        converged: false,
        error: Some(e.to_string()),
    };
    while iters < cfg.max_iters {
        let before = st.rates;
        let multistart = match cfg.multistart {
            Multistart::EveryIteration => true,
            Multistart::FirstIteration => iters == 0,
            Multistart::Never => false,
        };
        let (a, ma) = match em_update(u, s, &st, stage, cfg, multistart) {
            Ok(x) => x,
            Err(e) => return fail(e, st, trace, iters),
        };
        iters += 1;
        trace.push(ma);
        trace.push(a.loss);
        let accelerate = cfg.accelerate && !multistart && iters + 1 < cfg.max_iters;
        if !accelerate {
            st = a;
        } else {
            let (b, mb) = match em_update(u, s, &a, stage, cfg, false) {
                Ok(x) => x,
                Err(e) => return fail(e, a, trace, iters),
            };
            iters += 1;
            trace.push(mb);
            trace.push(b.loss);
            let p0 = Vector2::new(before.alpha.ln(), before.gamma.ln());
            let p1 = Vector2::new(a.rates.alpha.ln(), a.rates.gamma.ln());
            let p2 = Vector2::new(b.rates.alpha.ln(), b.rates.gamma.ln());
            let r = p1 - p0;
            let v = p2 - p1 - r;
            st = b;
            if v.norm() > 0.0 && iters < cfg.max_iters {
                let step = (-r.norm() / v.norm()).min(-1.0);
                let p = p0 - r * (2.0 * step) + v * (step * step);
                let rates_x = Rates::new(p[0].exp(), p[1].exp());
                if rates_x.alpha.is_finite() && rates_x.gamma.is_finite() && rates_x.alpha > 0.0 && rates_x.gamma > 0.0 {
                    let x = e_step_keep_best(u, s, rates_x, &st.times, stage, cfg);
                    if let Ok((c, mc)) = em_update(u, s, &x, stage, cfg, false) {
                        iters += 1;
                        if c.loss <= st.loss && mc <= st.loss {
                            trace.push(mc);
                            trace.push(c.loss);
                            st = c;
                        }
                    }
                }
            }
        }
        if max_rel_change(st.rates, before) < cfg.rel_tol {
            converged = true;
            break;
        }
    }
    if trace.is_empty() {
        error = Some("max_iters too small".to_string());
    }
    GeneFit { rates: st.rates, stage, times: st.times, loss: st.loss, loss_trace: trace, iters, converged, error }
}

/// EM for one gene under the configured stage model.
pub fn em_gene(u: &[f64], s: &[f64], cfg: &EmConfig) -> GeneFit {
    match cfg.stage {
        StageModel::On => em_gene_stage(u, s, FitStage::On, cfg),
        StageModel::Off => em_gene_stage(u, s, FitStage::Off, cfg),
        StageModel::Switching => em_gene_stage(u, s, FitStage::Switching, cfg),
        StageModel::Auto => {
            let on = em_gene_stage(u, s, FitStage::On, cfg);
            let off = em_gene_stage(u, s, FitStage::Off, cfg);
            if off.loss < on.loss {
                off
            } else {
                on
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmResult {
    /// Per-gene (α̂, 1, γ̂) with the switch time of the fitted stage.
    pub kinetics_hat: Vec<GeneKinetics>,
    #[serde(skip)]
    pub time_matrix: GeneTimeMatrix,
    /// Total squared residual over all genes.
    pub loss: f64,
    /// Total loss after every half-step, padded with each gene's final value.
    pub loss_trace: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
    pub genes: Vec<GeneFit>,
}

pub fn column(m: &DMatrix<f64>, g: usize) -> &[f64] {
    let n = m.nrows();
    &m.as_slice()[g * n..(g + 1) * n]
}

/// Runs the EM on every gene of the dataset.
pub fn em_infer(ds: &ExpressionDataset, cfg: &EmConfig) -> Result<EmResult> {
    cfg.validate()?;
    ds.validate()?;
    let n = ds.n_cells();
    let d = ds.n_genes();
    let genes: Vec<GeneFit> = (0..d)
        .into_par_iter()
        .map(|g| em_gene(column(&ds.u, g), column(&ds.s, g), cfg))
        .collect();
    let mut t = DMatrix::zeros(n, d);
    for (g, fit) in genes.iter().enumerate() {
        t.column_mut(g).copy_from_slice(&fit.times);
    }
    let len = genes.iter().map(|f| f.loss_trace.len()).max().unwrap_or(0);
    let loss_trace = (0..len)
        .map(|i| {
            genes
                .iter()
                .map(|f| f.loss_trace.get(i).or(f.loss_trace.last()).copied().unwrap_or(0.0))
                .sum()
        })
        .collect();
    Ok(EmResult {
        kinetics_hat: genes.iter().map(|f| f.rates.kinetics(f.stage, cfg)).collect(),
        time_matrix: GeneTimeMatrix::new(t)?,
        loss: genes.iter().map(|f| f.loss).sum(),
        loss_trace,
        iters: genes.iter().map(|f| f.iters).max().unwrap_or(0),
        converged: genes.iter().all(|f| f.converged),
        genes,
    })
}

/// v_cg = β_g u_cg − γ_g s_cg on the observed counts.
pub fn velocity_field(ds: &ExpressionDataset, kinetics: &[GeneKinetics]) -> Result<DMatrix<f64>> {
    if kinetics.len() != ds.n_genes() {
        return Err(Error::Config("one kinetics entry per gene is required".into()));
    }
    Ok(DMatrix::from_fn(ds.n_cells(), ds.n_genes(), |c, g| {
        kinetics[g].beta * ds.u[(c, g)] - kinetics[g].gamma * ds.s[(c, g)]
    }))
}
