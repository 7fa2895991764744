//! Bootstrap calibration of the critical level.
//!
//! For a candidate `theta`, the event that the projection is covered is
//! approximated by the feasibility of a random polytope: bootstrapped
//! studentized moments plus a linear drift in the localization vector, cut by
//! GMS selection, intersected with the parameter box blown up at root-n scale
//! and the rho-box, and finally with the hyperplane `p'lambda = 0` (or a
//! halfspace / several hyperplanes for the one-sided and joint variants). The
//! calibrated level is the smallest `c` at which the bootstrap feasibility
//! fraction reaches `1 - alpha`, found by bracketed Brent-Dekker root
//! finding that exploits the monotonicity of each replicate's verdict in `c`.

use crate::gms::GmsConfig;
use crate::linprog::LinearSystem;
use crate::moment::{pair_weights, Evaluator, SampleMoments};
use crate::stats::{empirical_quantile, phi_inv, phi_tail};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Nonparametric redraws or standard-normal multiplier weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BootstrapMode {
    Resample,
    Multiplier,
}

/// `B` replicate rows of the bootstrapped studentized empirical process at a
/// fixed parameter value.
#[derive(Debug, Clone)]
pub struct BootstrapEnsemble {
    pub b: usize,
    pub j: usize,
    pub mode: BootstrapMode,
    pub seed: u64,
    g: Vec<f64>, // b x j, row-major
}

impl BootstrapEnsemble {
    pub fn row(&self, b: usize) -> &[f64] {
        &self.g[b * self.j..(b + 1) * self.j]
    }
}

/// The linear condition that the localization vector must satisfy for the
/// projection to be covered.
#[derive(Debug, Clone)]
pub enum Projection {
    /// `p'lambda = 0` (two-sided projection in direction `p`).
    Hyperplane(Vec<f64>),
    /// `q'lambda >= 0` (one-sided simplification).
    Halfspace(Vec<f64>),
    /// Joint confidence rectangles: all `p_l' lambda = 0` simultaneously.
    Hyperplanes(Vec<Vec<f64>>),
}

/// Tuning of the calibration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CriticalParams {
    pub alpha: f64,
    /// Side of the localization box (`+inf` drops it).
    pub rho: f64,
    /// Bootstrap replicates.
    pub b: usize,
    pub mode: BootstrapMode,
    pub seed: u64,
    /// Root-finder tolerance (both on `c` and on the excess coverage).
    pub tol: f64,
}

impl Default for CriticalParams {
    fn default() -> Self {
        CriticalParams {
            alpha: 0.05,
            rho: f64::INFINITY,
            b: 1001,
            mode: BootstrapMode::Multiplier,
            seed: 0,
            tol: 1e-4,
        }
    }
}

/// Calibrated critical level with root-finding diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct CriticalLevel {
    pub value: f64,
    /// Final bracket `(c_L, c_U)`.
    pub bracket: (f64, f64),
    /// Number of evaluations of the feasibility fraction.
    pub iterations: usize,
    /// Achieved bootstrap feasibility fraction at `value`.
    pub h_at_value: f64,
    /// True when the coverage target was unattainable even at the Bonferroni
    /// bound (possible at very small `B`); `value` is then that bound.
    pub capped: bool,
}

/// Draw the bootstrap ensemble at `theta`. Deterministic in `(seed, mode,
/// b)`: replicate `i` uses its own counter-derived stream, so the result is
/// independent of parallelism.
pub fn bootstrap_ensemble(
    ev: &Evaluator,
    theta: &[f64],
    b: usize,
    mode: BootstrapMode,
    seed: u64,
) -> Result<BootstrapEnsemble> {
    if b == 0 {
        return Err(Error::invalid("need at least one bootstrap replicate"));
    }
    let model = ev.model;
    let jj = model.j1 + model.j2;
    let j = model.j_total();
    let n = ev.data.nrows();

    // Studentized residual matrix (n x jj): for separable models this is the
    // cached, theta-free block; otherwise compute at theta.
    let owned;
    let resid: &[f64] = match ev.separable_residuals() {
        Some(r) => r,
        None => {
            let (mbar, sigma) = ev.raw_moments(theta)?;
            let mut m = vec![0.0; n * jj];
            let mut buf = vec![0.0; jj];
            let f = match &ev.model.family {
                crate::moment::MomentFamily::Generic(f) => f,
                _ => unreachable!(),
            };
            for (i, row) in ev.data.rows().enumerate() {
                f(row, theta, &mut buf);
                for jx in 0..jj {
                    m[i * jj + jx] = (buf[jx] - mbar[jx]) / sigma[jx];
                }
            }
            owned = m;
            &owned
        }
    };

    let sqrt_n = (n as f64).sqrt();
    let mut g = vec![0.0; b * j];
    g.par_chunks_mut(j).enumerate().for_each(|(rep, out)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(rep as u64 + 1);
        let mut acc = vec![0.0; jj];
        match mode {
            BootstrapMode::Multiplier => {
                for i in 0..n {
                    let chi: f64 = rng.sample(StandardNormal);
                    let row = &resid[i * jj..(i + 1) * jj];
                    for (a, r) in acc.iter_mut().zip(row) {
                        *a += chi * r;
                    }
                }
            }
            BootstrapMode::Resample => {
                for _ in 0..n {
                    let i = rng.gen_range(0..n);
                    let row = &resid[i * jj..(i + 1) * jj];
                    for (a, r) in acc.iter_mut().zip(row) {
                        *a += r;
                    }
                }
            }
        }
        for jx in 0..jj {
            out[jx] = acc[jx] / sqrt_n;
        }
        // Exact negation for the duplicated equality rows.
        for k in 0..model.j2 {
            out[jj + k] = -out[model.j1 + k];
        }
    });

    Ok(BootstrapEnsemble {
        b,
        j,
        mode,
        seed,
        g,
    })
}

/// Assembles the feasibility systems for one `theta`: constraint rows from a
/// replicate row and a level `c`, box from the localized parameter space,
/// and the projection condition.
pub struct LambdaBuilder {
    pub j1: usize,
    pub j2: usize,
    pub dim: usize,
    d_hat: Vec<Vec<f64>>,
    phi: Vec<f64>,
    bounds: Vec<(f64, f64)>,
    proj_rows: Vec<Vec<f64>>,
    pairing: PairingRule,
}

#[derive(Debug, Clone)]
enum PairingRule {
    None,
    /// Hard-threshold GMS: where both members of a pair are selected, the
    /// second row is replaced by the negation of the first (pick one, treat
    /// as equality, drop the other).
    Hard { r1: usize, both_bind: Vec<bool> },
    /// Smooth GMS: both rows are replaced by weighted merges.
    Smooth { r1: usize, weights: Vec<(f64, f64)> },
}

impl LambdaBuilder {
    /// `rho` may be `+inf`. `pairing_active` controls whether the model's
    /// declared pairing rule modifies the system.
    pub fn new(
        ev: &Evaluator,
        theta: &[f64],
        sm: &SampleMoments,
        gms: &GmsConfig,
        rho: f64,
        proj: &Projection,
        pairing_active: bool,
    ) -> Result<LambdaBuilder> {
        let model = ev.model;
        if !(rho > 0.0) {
            return Err(Error::invalid("rho must be positive (possibly +inf)"));
        }
        let phi = ev.gms_values(sm, gms);
        let sqrt_n = (sm.n as f64).sqrt();
        let bounds: Vec<(f64, f64)> = model
            .theta_box
            .iter()
            .zip(theta)
            .map(|((lo, hi), t)| {
                let l = (sqrt_n * (lo - t)).max(-rho);
                let h = (sqrt_n * (hi - t)).min(rho);
                (l, h)
            })
            .collect();

        let mut proj_rows = Vec::new();
        match proj {
            Projection::Hyperplane(p) => {
                proj_rows.push(p.clone());
                proj_rows.push(p.iter().map(|v| -v).collect());
            }
            Projection::Halfspace(q) => {
                proj_rows.push(q.iter().map(|v| -v).collect());
            }
            Projection::Hyperplanes(ps) => {
                for p in ps {
                    proj_rows.push(p.clone());
                    proj_rows.push(p.iter().map(|v| -v).collect());
                }
            }
        }
        for row in &proj_rows {
            if row.len() != model.dim {
                return Err(Error::invalid("projection direction has wrong dimension"));
            }
        }

        let pairing = match (model.pairing, pairing_active) {
            (Some(p), true) => {
                if gms.kind.is_hard() {
                    let both_bind = (0..p.r1)
                        .map(|jx| phi[jx] == 0.0 && phi[jx + p.r1] == 0.0)
                        .collect();
                    PairingRule::Hard {
                        r1: p.r1,
                        both_bind,
                    }
                } else {
                    PairingRule::Smooth {
                        r1: p.r1,
                        weights: pair_weights(sm, p.r1),
                    }
                }
            }
            _ => PairingRule::None,
        };

        Ok(LambdaBuilder {
            j1: model.j1,
            j2: model.j2,
            dim: model.dim,
            d_hat: sm.d_hat.clone(),
            phi,
            bounds,
            proj_rows,
            pairing,
        })
    }

    /// The constraint system at level `c` for one replicate row.
    pub fn system(&self, g: &[f64], c: f64) -> LinearSystem {
        let j = self.j1 + 2 * self.j2;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(j + self.proj_rows.len());
        let mut rhs: Vec<f64> = Vec::with_capacity(j + self.proj_rows.len());
        for jx in 0..j {
            if self.phi[jx] == f64::NEG_INFINITY {
                continue;
            }
            match &self.pairing {
                PairingRule::Hard { r1, both_bind }
                    if jx >= *r1 && jx < 2 * r1 && both_bind[jx - r1] =>
                {
                    // Replacement: -g_j - D_j lambda <= c for the pair head j.
                    let head = jx - r1;
                    rows.push(self.d_hat[head].iter().map(|v| -v).collect());
                    rhs.push(c + g[head]);
                }
                PairingRule::Smooth { r1, weights } if jx < 2 * r1 => {
                    let (head, sign) = if jx < *r1 { (jx, 1.0) } else { (jx - r1, -1.0) };
                    let (mu_head, mu_second) = weights[head];
                    let second = head + r1;
                    let mut row = vec![0.0; self.dim];
                    for k in 0..self.dim {
                        row[k] = sign
                            * (mu_head * self.d_hat[head][k] - mu_second * self.d_hat[second][k]);
                    }
                    rows.push(row);
                    rhs.push(c - sign * (mu_head * g[head] - mu_second * g[second]) - self.phi[jx]);
                }
                _ => {
                    rows.push(self.d_hat[jx].clone());
                    rhs.push(c - g[jx] - self.phi[jx]);
                }
            }
        }
        for p in &self.proj_rows {
            rows.push(p.clone());
            rhs.push(0.0);
        }
        LinearSystem::new(rows, rhs, self.bounds.clone()).expect("consistent system dimensions")
    }

    pub fn feasible(&self, g: &[f64], c: f64) -> Result<bool> {
        self.system(g, c).feasible()
    }
}

/// Spec-level convenience: one replicate's constraint system.
#[allow(clippy::too_many_arguments)]
pub fn lambda_system(
    ev: &Evaluator,
    theta: &[f64],
    rho: f64,
    c: f64,
    g_row: &[f64],
    gms: &GmsConfig,
    proj: &Projection,
    pairing_active: bool,
) -> Result<LinearSystem> {
    let sm = ev.sample_moments(theta)?;
    let builder = LambdaBuilder::new(ev, theta, &sm, gms, rho, proj, pairing_active)?;
    Ok(builder.system(g_row, c))
}

/// Per-replicate memo of the feasibility verdict's monotone switch point.
#[derive(Debug, Clone, Copy)]
struct ReplicateCache {
    feasible_at: f64,
    infeasible_at: f64,
}

impl Default for ReplicateCache {
    fn default() -> Self {
        ReplicateCache {
            feasible_at: f64::INFINITY,
            infeasible_at: f64::NEG_INFINITY,
        }
    }
}

/// The bootstrap feasibility machinery for one `theta`; probing different
/// levels shares replicate verdicts through the monotone cache.
pub struct Calibrator<'e> {
    builder: LambdaBuilder,
    ensemble: &'e BootstrapEnsemble,
    alpha: f64,
    cache: Vec<ReplicateCache>,
    pub evaluations: usize,
}

impl<'e> Calibrator<'e> {
    pub fn new(
        ev: &Evaluator,
        theta: &[f64],
        sm: &SampleMoments,
        gms: &GmsConfig,
        rho: f64,
        proj: &Projection,
        ensemble: &'e BootstrapEnsemble,
        alpha: f64,
    ) -> Result<Self> {
        let builder = LambdaBuilder::new(ev, theta, sm, gms, rho, proj, true)?;
        Ok(Calibrator {
            builder,
            ensemble,
            alpha,
            cache: vec![ReplicateCache::default(); ensemble.b],
            evaluations: 0,
        })
    }

    /// `(1/B) sum_b psi_b(c) - (1 - alpha)`, exploiting monotonicity of each
    /// `psi_b` in `c` so replicates settled at an earlier probe are not
    /// re-solved.
    pub fn h_alpha(&mut self, c: f64) -> Result<f64> {
        self.evaluations += 1;
        let builder = &self.builder;
        let ensemble = self.ensemble;
        let count: usize = self
            .cache
            .par_iter_mut()
            .enumerate()
            .map(|(b, st)| -> Result<usize> {
                if c >= st.feasible_at {
                    return Ok(1);
                }
                if c <= st.infeasible_at {
                    return Ok(0);
                }
                let ok = builder.feasible(ensemble.row(b), c)?;
                if ok {
                    st.feasible_at = c;
                } else {
                    st.infeasible_at = c;
                }
                Ok(usize::from(ok))
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))?;
        Ok(count as f64 / ensemble.b as f64 - (1.0 - self.alpha))
    }
}

/// Calibrated critical level at `theta` using a freshly drawn ensemble.
pub fn critical_level(
    ev: &Evaluator,
    theta: &[f64],
    proj: &Projection,
    gms: &GmsConfig,
    params: &CriticalParams,
) -> Result<CriticalLevel> {
    let ensemble = bootstrap_ensemble(ev, theta, params.b, params.mode, params.seed)?;
    critical_level_with(ev, theta, proj, gms, params, &ensemble)
}

/// Calibrated critical level sharing a prebuilt ensemble (used to make
/// dominance and monotonicity comparisons replicate-by-replicate, and to
/// reuse draws across evaluation points).
pub fn critical_level_with(
    ev: &Evaluator,
    theta: &[f64],
    proj: &Projection,
    gms: &GmsConfig,
    params: &CriticalParams,
    ensemble: &BootstrapEnsemble,
) -> Result<CriticalLevel> {
    if !(params.alpha > 0.0 && params.alpha < 0.5) {
        return Err(Error::invalid("alpha must lie in (0, 1/2)"));
    }
    let sm = ev.sample_moments(theta)?;
    let mut cal = Calibrator::new(
        ev,
        theta,
        &sm,
        gms,
        params.rho,
        proj,
        ensemble,
        params.alpha,
    )?;
    let c_bar = phi_inv(1.0 - params.alpha / ev.model.j_total() as f64);
    let one_minus_alpha = 1.0 - params.alpha;

    let h0 = cal.h_alpha(0.0)?;
    if h0 >= 0.0 {
        return Ok(CriticalLevel {
            value: 0.0,
            bracket: (0.0, 0.0),
            iterations: cal.evaluations,
            h_at_value: h0 + one_minus_alpha,
            capped: false,
        });
    }
    let h_bar = cal.h_alpha(c_bar)?;
    if h_bar < 0.0 {
        // The asymptotic Bonferroni bound failed in this finite sample;
        // return it flagged rather than extrapolating beyond the bound.
        return Ok(CriticalLevel {
            value: c_bar,
            bracket: (c_bar, c_bar),
            iterations: cal.evaluations,
            h_at_value: h_bar + one_minus_alpha,
            capped: true,
        });
    }

    // Brent-Dekker on the bracket [lo, hi], h(lo) < 0 <= h(hi); the bracket
    // upper end is returned so coverage is at least 1 - alpha.
    let mut lo = 0.0;
    let mut hi = c_bar;
    let mut f_lo = h0;
    let mut f_hi = h_bar;
    // previous iterate for inverse quadratic interpolation
    let mut prev: Option<(f64, f64)> = None;
    loop {
        if f_hi <= params.tol || (hi - lo) <= params.tol {
            return Ok(CriticalLevel {
                value: hi,
                bracket: (lo, hi),
                iterations: cal.evaluations,
                h_at_value: f_hi + one_minus_alpha,
                capped: false,
            });
        }
        let mid = 0.5 * (lo + hi);
        let mut cand = mid;
        // Inverse quadratic interpolation through (lo, hi, prev), falling
        // back to the secant through the bracket, safeguarded to the
        // interior; otherwise bisect.
        if let Some((xp, fp)) = prev {
            if fp != f_lo && fp != f_hi && f_lo != f_hi {
                let a = lo * f_hi * fp / ((f_lo - f_hi) * (f_lo - fp))
                    + hi * f_lo * fp / ((f_hi - f_lo) * (f_hi - fp))
                    + xp * f_lo * f_hi / ((fp - f_lo) * (fp - f_hi));
                cand = a;
            } else if f_lo != f_hi {
                cand = hi - f_hi * (hi - lo) / (f_hi - f_lo);
            }
        } else if f_lo != f_hi {
            cand = hi - f_hi * (hi - lo) / (f_hi - f_lo);
        }
        let guard = 0.1 * (hi - lo);
        if !(cand > lo + guard.min(params.tol) && cand < hi - guard.min(params.tol)) {
            cand = mid;
        }
        let f_cand = cal.h_alpha(cand)?;
        prev = Some(if f_cand >= 0.0 { (hi, f_hi) } else { (lo, f_lo) });
        if f_cand >= 0.0 {
            hi = cand;
            f_hi = f_cand;
        } else {
            lo = cand;
            f_lo = f_cand;
        }
    }
}

/// Critical level of projecting a full-vector confidence set: the empirical
/// `1 - alpha` quantile of `max_j { G_j^b + phi_j }`, clamped below at 0.
/// Shares the ensemble so that the dominance relation holds draw by draw.
pub fn as_projection_critical(
    ev: &Evaluator,
    theta: &[f64],
    alpha: f64,
    gms: &GmsConfig,
    ensemble: &BootstrapEnsemble,
) -> Result<f64> {
    let sm = ev.sample_moments_light(theta)?;
    let phi = ev.gms_values(&sm, gms);
    let j = ev.model.j_total();
    let stats: Vec<f64> = (0..ensemble.b)
        .map(|b| {
            let row = ensemble.row(b);
            let mut m = f64::NEG_INFINITY;
            for jx in 0..j {
                if phi[jx] > f64::NEG_INFINITY {
                    m = m.max(row[jx] + phi[jx]);
                }
            }
            m
        })
        .collect();
    Ok(empirical_quantile(&stats, 1.0 - alpha).max(0.0))
}

/// One-sided critical level: the coverage condition is the halfspace
/// `q'lambda >= 0` instead of the hyperplane.
pub fn one_sided_critical(
    ev: &Evaluator,
    theta: &[f64],
    q: &[f64],
    gms: &GmsConfig,
    params: &CriticalParams,
) -> Result<CriticalLevel> {
    critical_level(ev, theta, &Projection::Halfspace(q.to_vec()), gms, params)
}

/// Calibrates the localization box size so that, in well-behaved cases, the
/// box inflates coverage by at most `eta`:
/// `1 - [1 - 2 Phi(-rho)]^(d * C(J1+J2, d)) = eta`, solved by bisection.
pub fn rho_from_eta(eta: f64, j1_plus_j2: usize, d: usize) -> f64 {
    assert!(eta > 0.0 && eta < 1.0, "eta must lie in (0,1)");
    assert!(d >= 1 && j1_plus_j2 >= d, "need J1+J2 >= d >= 1");
    let mut binom = 1.0f64;
    for i in 0..d {
        binom = binom * (j1_plus_j2 - i) as f64 / (i + 1) as f64;
    }
    let exponent = d as f64 * binom;
    // f is decreasing in rho: +(1-eta)-ish at 0, -eta in the far tail.
    let f = |rho: f64| {
        let tail2 = 2.0 * phi_tail(rho);
        1.0 - (exponent * (-tail2).ln_1p()).exp() - eta
    };
    let mut lo = 0.0;
    let mut hi = 40.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-10 {
            break;
        }
    }
    0.5 * (lo + hi)
}
