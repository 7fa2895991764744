//! The Evaluation-Approximation-Maximization driver.
//!
//! The interval endpoint solves `max p'theta` subject to studentized sample
//! moments relaxed by a critical level that is expensive to evaluate. The
//! driver evaluates it at an initial uniform design, fits the kriging
//! surrogate, and proposes one new point per iteration by maximizing the
//! feasibility-weighted expected improvement (with an epsilon-greedy uniform
//! draw for exploration). The reported endpoint always comes from a directly
//! evaluated feasible point, never from the surrogate.

use crate::critical::{
    as_projection_critical, bootstrap_ensemble, critical_level_with, BootstrapEnsemble,
    CriticalParams, Projection,
};
use crate::gms::GmsConfig;
use crate::moment::{dot, Evaluator};
use crate::stats::phi;
use crate::surrogate::{Kernel, KrigingModel};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Knobs of the search loop.
#[derive(Debug, Clone, Copy)]
pub struct EamOptions {
    /// Initial design size; defaults to `10 d + 1`.
    pub k_init: Option<usize>,
    /// Probability of a uniform exploration draw in the M-step.
    pub epsilon: f64,
    /// Hard cap on E-A-M iterations after the initial design.
    pub max_iter: usize,
    /// Convergence threshold on the expected improvement and on the
    /// objective gap between proposal and incumbent.
    pub conv_tol: f64,
    /// Consecutive iterations that must meet the criteria before stopping.
    pub min_stall: usize,
    pub seed: u64,
    pub kernel: Kernel,
    pub nugget: f64,
}

impl Default for EamOptions {
    fn default() -> Self {
        EamOptions {
            k_init: None,
            epsilon: 0.05,
            max_iter: 150,
            conv_tol: 0.005,
            min_stall: 3,
            seed: 0,
            kernel: Kernel::Gaussian,
            nugget: 1e-10,
        }
    }
}

/// Objective of one direction: a linear projection or a smooth function.
pub enum Objective<'a> {
    Linear(Vec<f64>),
    Smooth {
        f: &'a (dyn Fn(&[f64]) -> f64 + Sync),
        grad: &'a (dyn Fn(&[f64]) -> Vec<f64> + Sync),
    },
}

impl Objective<'_> {
    pub fn value(&self, theta: &[f64]) -> f64 {
        match self {
            Objective::Linear(p) => dot(p, theta),
            Objective::Smooth { f, .. } => f(theta),
        }
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        match self {
            Objective::Linear(p) => p.clone(),
            Objective::Smooth { grad, .. } => grad(theta),
        }
    }

    /// Minimum over the box (incumbent placeholder while no feasible point
    /// is known). Exact for linear objectives; for smooth ones a coarse
    /// lower proxy from the box corners of the gradient-free kind is not
    /// available, so callers fall back to the smallest evaluated value.
    fn min_over_box(&self, theta_box: &[(f64, f64)]) -> Option<f64> {
        match self {
            Objective::Linear(p) => Some(
                p.iter()
                    .zip(theta_box)
                    .map(|(pk, (lo, hi))| if *pk >= 0.0 { pk * lo } else { pk * hi })
                    .sum(),
            ),
            Objective::Smooth { .. } => None,
        }
    }
}

/// One direction's optimization problem with pluggable constraint and
/// critical-level evaluators.
pub struct EamProblem<'a> {
    pub theta_box: &'a [(f64, f64)],
    pub objective: Objective<'a>,
    /// Outer-problem constraint values `g_j(theta)`.
    pub constraints: &'a (dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync),
    /// Gradients of `g_j` (rows), used only to polish proposals.
    pub constraint_grads: Option<&'a (dyn Fn(&[f64]) -> Result<Vec<Vec<f64>>> + Sync)>,
    /// The expensive critical-level map `c(theta)`.
    pub critical: &'a (dyn Fn(&[f64]) -> Result<f64> + Sync),
}

/// Per-iteration diagnostics record.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub l: usize,
    pub incumbent: Option<f64>,
    pub ei_max: f64,
    pub proposal: Vec<f64>,
    pub epsilon_draw: bool,
}

/// Evaluation bookkeeping of one direction.
#[derive(Debug, Clone, Default)]
pub struct EamState {
    pub points: Vec<Vec<f64>>,
    pub cvals: Vec<f64>,
    /// Indices of evaluated points satisfying all constraints at their own
    /// critical level.
    pub feasible_set: Vec<usize>,
    /// Index of the incumbent within `points`.
    pub theta_star: Option<usize>,
    pub history: Vec<IterationRecord>,
}

/// Outcome of one direction.
#[derive(Debug, Clone)]
pub struct DirectionResult {
    /// Objective value at the best feasible evaluated point; `None` when the
    /// feasible set stayed empty (empty-interval marker).
    pub endpoint: Option<f64>,
    pub theta: Option<Vec<f64>>,
    pub state: EamState,
    pub converged: bool,
}

/// Feasibility slack when comparing constraint values to the critical level.
const FEAS_SLACK: f64 = 1e-9;

/// Uniform initial design over the box, deterministic per seed.
pub fn initialize(theta_box: &[(f64, f64)], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x1117);
    (0..k)
        .map(|_| {
            theta_box
                .iter()
                .map(|(lo, hi)| rng.gen_range(*lo..*hi))
                .collect()
        })
        .collect()
}

/// Expected improvement from raw ingredients: positive part of the objective
/// gain times the surrogate probability of feasibility. `sigma_s` is the
/// standard deviation of the critical-level posterior at the point; when it
/// vanishes the probability degenerates to an indicator.
pub fn ei_value(gain: f64, gmax: f64, c_l: f64, sigma_s: f64) -> f64 {
    if gain <= 0.0 {
        return 0.0;
    }
    if sigma_s <= 0.0 {
        return if gmax <= c_l { gain } else { 0.0 };
    }
    gain * (1.0 - phi((gmax - c_l) / sigma_s))
}

/// Expected improvement of a candidate under the current surrogate and
/// incumbent (`None` while the feasible set is empty: then the placeholder
/// incumbent makes any feasible point an improvement).
pub fn expected_improvement(
    theta: &[f64],
    model: &KrigingModel,
    problem: &EamProblem,
    incumbent_value: f64,
) -> f64 {
    let gain = problem.objective.value(theta) - incumbent_value;
    if gain <= 0.0 {
        return 0.0;
    }
    let gmax = match (problem.constraints)(theta) {
        Ok(g) => g.into_iter().fold(f64::NEG_INFINITY, f64::max),
        Err(_) => return 0.0,
    };
    let pred = model.predict(theta);
    let sigma_s = (model.varsigma2_hat * pred.s2).max(0.0).sqrt();
    ei_value(gain, gmax, pred.value, sigma_s)
}

struct MStepOutcome {
    proposal: Vec<f64>,
    ei_max: f64,
    /// The expected-improvement maximizer (the convergence criteria refer to
    /// it); `None` when the acquisition was identically zero everywhere
    /// probed, i.e. no improvement direction exists.
    ei_argmax: Option<Vec<f64>>,
    epsilon_draw: bool,
}

fn clamp_to_box(theta: &mut [f64], theta_box: &[(f64, f64)]) {
    for (t, (lo, hi)) in theta.iter_mut().zip(theta_box) {
        *t = t.clamp(*lo, *hi);
    }
}

/// Acquisition maximization: rank 1000 uniform probes, refine ~30 data
/// dependent starts (incumbent, best probes, jittered feasible points) by
/// compass search, then polish the best candidates along the analytic
/// expected-improvement gradient. With probability epsilon the proposal is
/// replaced by a uniform draw.
fn m_step(
    model: &KrigingModel,
    state: &EamState,
    problem: &EamProblem,
    incumbent_value: f64,
    options: &EamOptions,
    rng: &mut ChaCha8Rng,
) -> MStepOutcome {
    let theta_box = problem.theta_box;
    let d = theta_box.len();
    let uniform = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        theta_box
            .iter()
            .map(|(lo, hi)| rng.gen_range(*lo..*hi))
            .collect()
    };

    let ei = |theta: &[f64]| expected_improvement(theta, model, problem, incumbent_value);

    // Stage 1: uniform probes.
    let probes: Vec<Vec<f64>> = (0..1000).map(|_| uniform(rng)).collect();
    let mut scored: Vec<(f64, usize)> = probes
        .par_iter()
        .enumerate()
        .map(|(i, t)| (ei(t), i))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));

    // Stage 2: build ~30 starts.
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(30);
    if let Some(star) = state.theta_star {
        starts.push(state.points[star].clone());
    }
    for (score, i) in scored.iter().take(14) {
        if *score > 0.0 {
            starts.push(probes[*i].clone());
        }
    }
    for _ in 0..15 {
        if state.feasible_set.is_empty() {
            break;
        }
        let pick = state.feasible_set[rng.gen_range(0..state.feasible_set.len())];
        let mut t = state.points[pick].clone();
        for (k, v) in t.iter_mut().enumerate() {
            let w = theta_box[k].1 - theta_box[k].0;
            *v += 0.05 * w * rng.gen_range(-1.0..1.0);
        }
        clamp_to_box(&mut t, theta_box);
        starts.push(t);
    }
    if starts.is_empty() {
        starts.push(uniform(rng));
    }

    // Stage 3: compass-search refinement of each start.
    let refined: Vec<(f64, Vec<f64>)> = starts
        .par_iter()
        .map(|s| {
            let mut x = s.clone();
            let mut fx = ei(&x);
            let mut step = 0.10;
            let mut budget = 60 * d;
            while step > 1e-4 && budget > 0 {
                let mut improved = false;
                for k in 0..d {
                    let w = theta_box[k].1 - theta_box[k].0;
                    for dir in [1.0, -1.0] {
                        if budget == 0 {
                            break;
                        }
                        let mut y = x.clone();
                        y[k] = (y[k] + dir * step * w).clamp(theta_box[k].0, theta_box[k].1);
                        if y[k] == x[k] {
                            continue;
                        }
                        let fy = ei(&y);
                        budget -= 1;
                        if fy > fx {
                            x = y;
                            fx = fy;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    step *= 0.5;
                }
            }
            (fx, x)
        })
        .collect();

    let (mut best_ei, mut best) = refined
        .into_iter()
        .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap_or((0.0, uniform(rng)));

    // Stage 4: gradient polish of the winner (smooth surrogate only).
    if best_ei > 0.0 && model.varsigma2_hat > 0.0 {
        if let Some((f, x)) = polish(&best, model, problem, incumbent_value) {
            if f > best_ei {
                best_ei = f;
                best = x;
            }
        }
    }

    // Degenerate acquisition: nothing promising anywhere, fall back to the
    // uniform draw.
    if best_ei <= 0.0 {
        return MStepOutcome {
            proposal: uniform(rng),
            ei_max: 0.0,
            ei_argmax: None,
            epsilon_draw: true,
        };
    }
    if rng.gen::<f64>() < options.epsilon {
        return MStepOutcome {
            proposal: uniform(rng),
            ei_max: best_ei,
            ei_argmax: Some(best),
            epsilon_draw: true,
        };
    }
    MStepOutcome {
        proposal: best.clone(),
        ei_max: best_ei,
        ei_argmax: Some(best),
        epsilon_draw: false,
    }
}

/// Projected gradient ascent on the analytic expected-improvement gradient.
fn polish(
    start: &[f64],
    model: &KrigingModel,
    problem: &EamProblem,
    incumbent_value: f64,
) -> Option<(f64, Vec<f64>)> {
    let grads = problem.constraint_grads?;
    let theta_box = problem.theta_box;
    let d = start.len();
    let varsigma = model.varsigma2_hat.sqrt();
    let eval = |theta: &[f64]| -> Option<(f64, Vec<f64>)> {
        // value and gradient of EI
        let gain = problem.objective.value(theta) - incumbent_value;
        if gain <= 0.0 {
            return None;
        }
        let g = (problem.constraints)(theta).ok()?;
        let (jstar, gmax) = g
            .iter()
            .cloned()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))?;
        let pred = model.predict(theta);
        let s = (model.varsigma2_hat * pred.s2).max(0.0).sqrt();
        if s <= 1e-12 {
            return None;
        }
        let w = (gmax - pred.value) / s;
        let tail = 1.0 - phi(w);
        let value = gain * tail;
        let dgain = problem.objective.gradient(theta);
        let dg = grads(theta).ok()?;
        let dens = crate::stats::dphi(w);
        // grad s = varsigma * grad(s2) / (2 s_L) with s = varsigma * s_L
        let mut grad = vec![0.0; d];
        for k in 0..d {
            let ds = varsigma * pred.grad_s2[k]
                / (2.0 * pred.s2.max(1e-300).sqrt());
            let dw = (dg[jstar][k] - pred.grad_value[k]) / s - w * ds / s;
            grad[k] = dgain[k] * tail - gain * dens * dw;
        }
        Some((value, grad))
    };

    let (mut fx, mut gx) = eval(start)?;
    let mut x = start.to_vec();
    let mut eta = 0.1;
    for _ in 0..20 {
        let scale: f64 = gx.iter().map(|v| v * v).sum::<f64>().sqrt();
        if scale < 1e-14 {
            break;
        }
        let mut improved = false;
        let mut try_eta = eta;
        for _ in 0..8 {
            let mut y = x.clone();
            for k in 0..d {
                let w = theta_box[k].1 - theta_box[k].0;
                y[k] += try_eta * w * gx[k] / scale;
            }
            clamp_to_box(&mut y, theta_box);
            if let Some((fy, gy)) = eval(&y) {
                if fy > fx {
                    x = y;
                    fx = fy;
                    gx = gy;
                    improved = true;
                    eta = try_eta * 1.5;
                    break;
                }
            }
            try_eta *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Some((fx, x))
}

/// Run one direction to convergence. Evaluations of the critical level are
/// delegated to `problem.critical`; the initial design is evaluated in
/// parallel, the loop itself is sequential.
pub fn run_direction(problem: &EamProblem, options: &EamOptions) -> Result<DirectionResult> {
    let d = problem.theta_box.len();
    let k = options.k_init.unwrap_or(10 * d + 1).max(d + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    rng.set_stream(0x313);

    let mut state = EamState::default();
    let initial = initialize(problem.theta_box, k, options.seed);
    let evals: Vec<Result<f64>> = initial
        .par_iter()
        .map(|t| (problem.critical)(t))
        .collect();
    for (t, c) in initial.into_iter().zip(evals) {
        state.points.push(t);
        state.cvals.push(c?);
    }

    let beta_bounds: Vec<(f64, f64)> = problem
        .theta_box
        .iter()
        .map(|(lo, hi)| (0.01 * (hi - lo), 10.0 * (hi - lo)))
        .collect();

    let mut stall = 0usize;
    let mut converged = false;
    for _ in 0..options.max_iter {
        refresh_feasibility(&mut state, problem)?;
        let incumbent_value = match state.theta_star {
            Some(i) => problem.objective.value(&state.points[i]),
            None => problem
                .objective
                .min_over_box(problem.theta_box)
                .or_else(|| {
                    state
                        .points
                        .iter()
                        .map(|t| problem.objective.value(t))
                        .min_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal))
                })
                .expect("at least one evaluated point"),
        };

        // A-step: refit the surrogate on everything evaluated so far.
        let model = KrigingModel::fit(
            &state.points,
            &state.cvals,
            options.kernel,
            &beta_bounds,
            options.nugget,
        )?;

        // M-step.
        let out = m_step(&model, &state, problem, incumbent_value, options, &mut rng);
        state.history.push(IterationRecord {
            l: state.points.len(),
            incumbent: state.theta_star.map(|_| incumbent_value),
            ei_max: out.ei_max,
            proposal: out.proposal.clone(),
            epsilon_draw: out.epsilon_draw,
        });

        // Convergence: expected improvement negligible and its maximizer has
        // stopped moving the objective, for min_stall consecutive checks. A
        // degenerate acquisition (no improvement direction anywhere) counts
        // as a stationary maximizer.
        if state.theta_star.is_some() {
            let ei_ok = out.ei_max <= options.conv_tol * (1.0 + incumbent_value.abs());
            let move_ok = out.ei_argmax.as_ref().map_or(true, |t| {
                (problem.objective.value(t) - incumbent_value).abs() <= options.conv_tol
            });
            if ei_ok && move_ok {
                stall += 1;
                if stall >= options.min_stall {
                    converged = true;
                    break;
                }
            } else {
                stall = 0;
            }
        }

        // E-step at the proposal.
        let c = (problem.critical)(&out.proposal)?;
        state.points.push(out.proposal);
        state.cvals.push(c);
    }
    refresh_feasibility(&mut state, problem)?;

    let (endpoint, theta) = match state.theta_star {
        Some(i) => (
            Some(problem.objective.value(&state.points[i])),
            Some(state.points[i].clone()),
        ),
        None => (None, None),
    };
    Ok(DirectionResult {
        endpoint,
        theta,
        state,
        converged,
    })
}

fn refresh_feasibility(state: &mut EamState, problem: &EamProblem) -> Result<()> {
    state.feasible_set.clear();
    let mut best: Option<(usize, f64)> = None;
    for i in 0..state.points.len() {
        let g = (problem.constraints)(&state.points[i])?;
        let ok = g.iter().all(|v| *v <= state.cvals[i] + FEAS_SLACK);
        if ok {
            state.feasible_set.push(i);
            let val = problem.objective.value(&state.points[i]);
            if best.map_or(true, |(_, b)| val > b) {
                best = Some((i, val));
            }
        }
    }
    state.theta_star = best.map(|(i, _)| i);
    Ok(())
}

/// Which critical level relaxes the outer problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiMode {
    /// Bootstrap linear-program calibration with the hyperplane condition.
    Calibrated,
    /// One-sided halfspace calibration per direction.
    OneSided,
    /// Projection of the full-vector confidence set (no optimization inside
    /// the bootstrap).
    AsProj,
}

/// Options of a confidence-interval computation.
#[derive(Debug, Clone)]
pub struct CiOptions {
    pub alpha: f64,
    pub rho: f64,
    pub gms: GmsConfig,
    pub b: usize,
    pub bootstrap: crate::critical::BootstrapMode,
    pub mode: CiMode,
    pub seed: u64,
    pub eam: EamOptions,
}

impl CiOptions {
    pub fn new(alpha: f64, rho: f64, gms: GmsConfig) -> Self {
        CiOptions {
            alpha,
            rho,
            gms,
            b: 1001,
            bootstrap: crate::critical::BootstrapMode::Multiplier,
            mode: CiMode::Calibrated,
            seed: 0,
            eam: EamOptions::default(),
        }
    }
}

/// Per-direction outcome summary.
#[derive(Debug, Clone, Serialize)]
pub struct DirectionDiagnostics {
    pub endpoint: Option<f64>,
    pub theta: Option<Vec<f64>>,
    pub evaluations: usize,
    pub iterations: usize,
    pub converged: bool,
    pub empty: bool,
    pub ei_trace: Vec<f64>,
}

impl DirectionDiagnostics {
    fn from_result(r: &DirectionResult) -> Self {
        DirectionDiagnostics {
            endpoint: r.endpoint,
            theta: r.theta.clone(),
            evaluations: r.state.points.len(),
            iterations: r.state.history.len(),
            converged: r.converged,
            empty: r.endpoint.is_none(),
            ei_trace: r.state.history.iter().map(|h| h.ei_max).collect(),
        }
    }
}

/// A two-sided confidence interval with per-direction diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct CiResult {
    pub lower: f64,
    pub upper: f64,
    /// Set when either endpoint's feasible set came up empty (the sample
    /// moment conditions are then jointly rejectable; see diagnostics).
    pub empty: bool,
    pub lower_diag: DirectionDiagnostics,
    pub upper_diag: DirectionDiagnostics,
}

fn normalized(p: &[f64]) -> Result<Vec<f64>> {
    let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::invalid("direction vector must be nonzero"));
    }
    Ok(p.iter().map(|v| v / norm).collect())
}

/// Critical-level closure for one direction under the chosen mode. For
/// separable models one bootstrap ensemble is drawn per confidence-interval
/// computation and shared across every evaluation point and both directions;
/// non-separable models redraw with the same seed at each point (common
/// random numbers).
fn critical_closure<'a>(
    ev: &'a Evaluator<'a>,
    proj: Projection,
    opts: &'a CiOptions,
    shared: Option<&'a BootstrapEnsemble>,
) -> impl Fn(&[f64]) -> Result<f64> + Sync + 'a {
    let params = CriticalParams {
        alpha: opts.alpha,
        rho: opts.rho,
        b: opts.b,
        mode: opts.bootstrap,
        seed: opts.seed,
        tol: 1e-4,
    };
    move |theta: &[f64]| -> Result<f64> {
        let owned;
        let ens = match shared {
            Some(e) => e,
            None => {
                owned = bootstrap_ensemble(ev, theta, params.b, params.mode, params.seed)?;
                &owned
            }
        };
        match opts.mode {
            CiMode::AsProj => as_projection_critical(ev, theta, opts.alpha, &opts.gms, ens),
            _ => Ok(
                critical_level_with(ev, theta, &proj, &opts.gms, &params, ens)?.value,
            ),
        }
    }
}

/// Confidence interval for the projection `p' theta`:
/// `[-max(-p), +max(p)]` with each endpoint from its own E-A-M run. The two
/// directions run in parallel with independent exploration streams.
pub fn confidence_interval(ev: &Evaluator, p: &[f64], opts: &CiOptions) -> Result<CiResult> {
    let p = normalized(p)?;
    let shared = if ev.model.is_separable() {
        Some(bootstrap_ensemble(
            ev,
            &vec![0.0; ev.model.dim],
            opts.b,
            opts.bootstrap,
            opts.seed,
        )?)
    } else {
        None
    };

    let run = |sign: f64, stream: u64| -> Result<DirectionResult> {
        let q: Vec<f64> = p.iter().map(|v| sign * v).collect();
        let proj = match opts.mode {
            CiMode::OneSided => Projection::Halfspace(q.clone()),
            _ => Projection::Hyperplane(p.clone()),
        };
        let critical = critical_closure(ev, proj, opts, shared.as_ref());
        let constraints = |theta: &[f64]| ev.constraints(theta);
        let grads = |theta: &[f64]| -> Result<Vec<Vec<f64>>> {
            let sm = ev.sample_moments(theta)?;
            let s = (sm.n as f64).sqrt();
            Ok(sm
                .d_hat
                .iter()
                .map(|row| row.iter().map(|v| v * s).collect())
                .collect())
        };
        let problem = EamProblem {
            theta_box: &ev.model.theta_box,
            objective: Objective::Linear(q),
            constraints: &constraints,
            constraint_grads: Some(&grads),
            critical: &critical,
        };
        let options = EamOptions {
            seed: opts.eam.seed ^ (0x9E3779B97F4A7C15u64.wrapping_mul(stream + 1)),
            ..opts.eam
        };
        run_direction(&problem, &options)
    };

    let (lo_res, up_res) = rayon::join(|| run(-1.0, 1), || run(1.0, 2));
    let lo = lo_res?;
    let up = up_res?;
    let lower_diag = DirectionDiagnostics::from_result(&lo);
    let upper_diag = DirectionDiagnostics::from_result(&up);
    Ok(CiResult {
        lower: lo.endpoint.map(|v| -v).unwrap_or(f64::NAN),
        upper: up.endpoint.unwrap_or(f64::NAN),
        empty: lower_diag.empty || upper_diag.empty,
        lower_diag,
        upper_diag,
    })
}

/// Confidence interval for a smooth scalar function of the parameter: the
/// objective is `f` itself and the coverage hyperplane at each evaluation
/// point is spanned by the normalized gradient of `f` there.
pub fn confidence_interval_smooth(
    ev: &Evaluator,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    grad_f: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    opts: &CiOptions,
) -> Result<CiResult> {
    let shared = if ev.model.is_separable() {
        Some(bootstrap_ensemble(
            ev,
            &vec![0.0; ev.model.dim],
            opts.b,
            opts.bootstrap,
            opts.seed,
        )?)
    } else {
        None
    };
    let params = CriticalParams {
        alpha: opts.alpha,
        rho: opts.rho,
        b: opts.b,
        mode: opts.bootstrap,
        seed: opts.seed,
        tol: 1e-4,
    };

    let critical = |theta: &[f64]| -> Result<f64> {
        let g = normalized(&grad_f(theta))?;
        let proj = Projection::Hyperplane(g);
        let owned;
        let ens = match &shared {
            Some(e) => e,
            None => {
                owned = bootstrap_ensemble(ev, theta, params.b, params.mode, params.seed)?;
                &owned
            }
        };
        match opts.mode {
            CiMode::AsProj => as_projection_critical(ev, theta, opts.alpha, &opts.gms, ens),
            _ => Ok(critical_level_with(ev, theta, &proj, &opts.gms, &params, ens)?.value),
        }
    };
    let constraints = |theta: &[f64]| ev.constraints(theta);

    let run = |sign: f64, stream: u64| -> Result<DirectionResult> {
        let fdir = move |t: &[f64]| sign * f(t);
        let gdir = move |t: &[f64]| -> Vec<f64> {
            grad_f(t).into_iter().map(|v| sign * v).collect()
        };
        let problem = EamProblem {
            theta_box: &ev.model.theta_box,
            objective: Objective::Smooth {
                f: &fdir,
                grad: &gdir,
            },
            constraints: &constraints,
            constraint_grads: None,
            critical: &critical,
        };
        let options = EamOptions {
            seed: opts.eam.seed ^ (0x9E3779B97F4A7C15u64.wrapping_mul(stream + 1)),
            ..opts.eam
        };
        run_direction(&problem, &options)
    };

    let (lo_res, up_res) = rayon::join(|| run(-1.0, 1), || run(1.0, 2));
    let lo = lo_res?;
    let up = up_res?;
    let lower_diag = DirectionDiagnostics::from_result(&lo);
    let upper_diag = DirectionDiagnostics::from_result(&up);
    Ok(CiResult {
        lower: lo.endpoint.map(|v| -v).unwrap_or(f64::NAN),
        upper: up.endpoint.unwrap_or(f64::NAN),
        empty: lower_diag.empty || upper_diag.empty,
        lower_diag,
        upper_diag,
    })
}

/// Joint confidence rectangles for several projections: one critical level
/// calibrated with all hyperplanes intersected, then one interval per
/// direction using it.
pub fn confidence_interval_joint(
    ev: &Evaluator,
    directions: &[Vec<f64>],
    opts: &CiOptions,
) -> Result<Vec<CiResult>> {
    let ps: Vec<Vec<f64>> = directions
        .iter()
        .map(|p| normalized(p))
        .collect::<Result<_>>()?;
    let shared = if ev.model.is_separable() {
        Some(bootstrap_ensemble(
            ev,
            &vec![0.0; ev.model.dim],
            opts.b,
            opts.bootstrap,
            opts.seed,
        )?)
    } else {
        None
    };

    let mut out = Vec::with_capacity(ps.len());
    for (ell, p) in ps.iter().enumerate() {
        let run = |sign: f64, stream: u64| -> Result<DirectionResult> {
            let q: Vec<f64> = p.iter().map(|v| sign * v).collect();
            let proj = Projection::Hyperplanes(ps.clone());
            let critical = critical_closure(ev, proj, opts, shared.as_ref());
            let constraints = |theta: &[f64]| ev.constraints(theta);
            let problem = EamProblem {
                theta_box: &ev.model.theta_box,
                objective: Objective::Linear(q),
                constraints: &constraints,
                constraint_grads: None,
                critical: &critical,
            };
            let options = EamOptions {
                seed: opts.eam.seed
                    ^ (0x9E3779B97F4A7C15u64.wrapping_mul(stream + 1 + 2 * ell as u64)),
                ..opts.eam
            };
            run_direction(&problem, &options)
        };
        let (lo_res, up_res) = rayon::join(|| run(-1.0, 1), || run(1.0, 2));
        let lo = lo_res?;
        let up = up_res?;
        let lower_diag = DirectionDiagnostics::from_result(&lo);
        let upper_diag = DirectionDiagnostics::from_result(&up);
        out.push(CiResult {
            lower: lo.endpoint.map(|v| -v).unwrap_or(f64::NAN),
            upper: up.endpoint.unwrap_or(f64::NAN),
            empty: lower_diag.empty || upper_diag.empty,
            lower_diag,
            upper_diag,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::moment::MomentModel;
    use approx::assert_abs_diff_eq;

    #[test]
    fn initialize_defaults_and_determinism() {
        let theta_box = vec![(0.0, 1.0), (-1.0, 2.0), (3.0, 4.0)];
        let k = 10 * theta_box.len() + 1;
        assert_eq!(k, 31);
        let a = initialize(&theta_box, k, 5);
        let b = initialize(&theta_box, k, 5);
        assert_eq!(a, b);
        assert_eq!(a.len(), 31);
        for p in &a {
            for (v, (lo, hi)) in p.iter().zip(&theta_box) {
                assert!(v >= lo && v <= hi);
            }
        }
        let c = initialize(&theta_box, k, 6);
        assert_ne!(a, c);
    }

    #[test]
    fn ei_closed_values() {
        // no gain -> 0
        assert_eq!(ei_value(-0.5, 0.0, 1.0, 1.0), 0.0);
        assert_eq!(ei_value(0.0, 0.0, 1.0, 1.0), 0.0);
        // at the feasibility boundary the probability factor is 1/2
        assert_abs_diff_eq!(ei_value(1.0, 1.3, 1.3, 0.7), 0.5, epsilon = 1e-12);
        // deep infeasibility: Gaussian tail kills it
        assert!(ei_value(1.0, 10.0, 0.0, 1.0) <= 1e-15);
        // zero variance: indicator
        assert_eq!(ei_value(2.0, 0.5, 1.0, 0.0), 2.0);
        assert_eq!(ei_value(2.0, 1.5, 1.0, 0.0), 0.0);
    }

    /// Linear one-moment problem with a constant critical level: the
    /// endpoint is known in closed form.
    fn toy_problem_data() -> (MomentModel, Dataset) {
        let model = MomentModel::linear_inequalities(vec![vec![1.0]], vec![(-2.0, 2.0)]);
        let values: Vec<f64> = (0..100).map(|i| (i as f64 / 99.0) - 0.5).collect();
        let data = Dataset::from_rows(&values.iter().map(|v| vec![*v]).collect::<Vec<_>>())
            .unwrap();
        (model, data)
    }

    #[test]
    fn one_dimensional_constant_level_endpoint() {
        let (model, data) = toy_problem_data();
        let ev = Evaluator::new(&model, &data).unwrap();
        let sm = ev.sample_moments_light(&[0.0]).unwrap();
        let (xbar, sd, n) = (sm.mbar[0] * -1.0, sm.sigma_hat[0], sm.n as f64);
        // constraint: sqrt(n)(theta - xbar)/sd <= 1.64
        let c_const = 1.64;
        let expect = xbar + c_const * sd / n.sqrt();

        let constraints = |t: &[f64]| ev.constraints(t);
        let critical = |_t: &[f64]| Ok(c_const);
        let problem = EamProblem {
            theta_box: &ev.model.theta_box,
            objective: Objective::Linear(vec![1.0]),
            constraints: &constraints,
            constraint_grads: None,
            critical: &critical,
        };
        let options = EamOptions {
            seed: 7,
            ..Default::default()
        };
        let res = run_direction(&problem, &options).unwrap();
        assert!(res.converged);
        let endpoint = res.endpoint.unwrap();
        assert!(
            (endpoint - expect).abs() <= options.conv_tol,
            "endpoint {endpoint} vs {expect}"
        );

        // incumbent objective is nondecreasing along the whole history
        let mut last = f64::NEG_INFINITY;
        for h in &res.state.history {
            if let Some(v) = h.incumbent {
                assert!(v >= last - 1e-12);
                last = v;
            }
        }
        // and the reported endpoint is feasible by direct evaluation
        let g = ev.constraints(res.theta.as_ref().unwrap()).unwrap();
        assert!(g.iter().all(|v| *v <= c_const + 1e-9));
    }

    #[test]
    fn ei_at_incumbent_is_zero() {
        let (model, data) = toy_problem_data();
        let ev = Evaluator::new(&model, &data).unwrap();
        let constraints = |t: &[f64]| ev.constraints(t);
        let critical = |_t: &[f64]| Ok(1.0);
        let problem = EamProblem {
            theta_box: &ev.model.theta_box,
            objective: Objective::Linear(vec![1.0]),
            constraints: &constraints,
            constraint_grads: None,
            critical: &critical,
        };
        let pts = initialize(&ev.model.theta_box, 11, 3);
        let vals = vec![1.0; pts.len()];
        let surrogate = KrigingModel::fit(
            &pts,
            &vals,
            Kernel::Gaussian,
            &[(0.04, 40.0)],
            1e-10,
        )
        .unwrap();
        let incumbent = 0.3;
        assert_eq!(
            expected_improvement(&[0.3], &surrogate, &problem, incumbent),
            0.0
        );
    }

    #[test]
    fn epsilon_one_proposes_uniformly_and_deterministically() {
        let (model, data) = toy_problem_data();
        let ev = Evaluator::new(&model, &data).unwrap();
        let constraints = |t: &[f64]| ev.constraints(t);
        let critical = |_t: &[f64]| Ok(1.0);
        let problem = EamProblem {
            theta_box: &ev.model.theta_box,
            objective: Objective::Linear(vec![1.0]),
            constraints: &constraints,
            constraint_grads: None,
            critical: &critical,
        };
        let run = || {
            let mut state = EamState::default();
            state.points = initialize(&ev.model.theta_box, 11, 3);
            state.cvals = vec![1.0; 11];
            refresh_feasibility(&mut state, &problem).unwrap();
            let model = KrigingModel::fit(
                &state.points,
                &state.cvals,
                Kernel::Gaussian,
                &[(0.04, 40.0)],
                1e-10,
            )
            .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let opts = EamOptions {
                epsilon: 1.0,
                ..Default::default()
            };
            m_step(&model, &state, &problem, 0.0, &opts, &mut rng)
        };
        let a = run();
        let b = run();
        assert!(a.epsilon_draw);
        assert_eq!(a.proposal, b.proposal);
    }

    #[test]
    fn empty_feasible_set_is_flagged() {
        // Constraints can never be met: g ~ sqrt(n) * large / sd, c = 0.
        let model = MomentModel::linear_inequalities(vec![vec![0.0]], vec![(-1.0, 1.0)]);
        // moment m = -X with X ~ -5: mbar = 5 > 0 always, independent of theta
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![-5.0 + 0.01 * (i as f64 / 49.0)])
            .collect();
        let data = Dataset::from_rows(&rows).unwrap();
        let ev = Evaluator::new(&model, &data).unwrap();
        let constraints = |t: &[f64]| ev.constraints(t);
        let critical = |_t: &[f64]| Ok(0.0);
        let problem = EamProblem {
            theta_box: &ev.model.theta_box,
            objective: Objective::Linear(vec![1.0]),
            constraints: &constraints,
            constraint_grads: None,
            critical: &critical,
        };
        let options = EamOptions {
            max_iter: 5,
            ..Default::default()
        };
        let res = run_direction(&problem, &options).unwrap();
        assert!(res.endpoint.is_none());
        assert!(res.state.feasible_set.is_empty());
    }

    #[test]
    fn m_step_converges_toward_binding_boundary() {
        // c constant, one binding linear constraint g(theta) = theta - 0.5
        // in disguise: the proposal under EI maximization approaches the
        // boundary from the feasible side.
        let (model, data) = toy_problem_data();
        let ev = Evaluator::new(&model, &data).unwrap();
        let sm = ev.sample_moments_light(&[0.0]).unwrap();
        let sqrt_n = (sm.n as f64).sqrt();
        let xbar = -sm.mbar[0];
        let sd = sm.sigma_hat[0];
        let c_const = (0.5 - xbar) * sqrt_n / sd; // boundary exactly at 0.5
        let constraints = |t: &[f64]| ev.constraints(t);
        let critical = |_t: &[f64]| Ok(c_const);
        let problem = EamProblem {
            theta_box: &ev.model.theta_box,
            objective: Objective::Linear(vec![1.0]),
            constraints: &constraints,
            constraint_grads: None,
            critical: &critical,
        };
        let options = EamOptions {
            seed: 4,
            epsilon: 0.0,
            ..Default::default()
        };
        let res = run_direction(&problem, &options).unwrap();
        let endpoint = res.endpoint.unwrap();
        assert!(
            (endpoint - 0.5).abs() <= options.conv_tol,
            "endpoint {endpoint}"
        );
    }
}
