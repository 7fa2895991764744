//! Built-in two-player entry-game data-generating processes.
//!
//! Both players observe covariates and shocks and play a pure-strategy Nash
//! equilibrium. For some shock realizations the two monopoly outcomes `(0,1)`
//! and `(1,0)` are both equilibria; the selection then picks `(0,1)` with
//! probability `mu`. The observable implications are equalities for the
//! uniquely predicted outcomes and a pair of opposing inequalities bracketing
//! the `(0,1)` frequency, which makes the `(0,1)`-pairs canonical paired
//! inequalities with slack equal to the multiplicity-region mass.
//!
//! * Set 1: shocks uniform on [0,1]^2 (so `(0,0)` never occurs), four market
//!   types with a common type effect; `theta = (delta1, delta2, zeta1..3)`.
//! * Set 2: bivariate normal shocks with correlation `r`, player-specific
//!   binary covariates; `theta` stacks `(zeta1, zeta2, Delta1, Delta2)` and
//!   appends `r` when it is a free parameter.

use crate::bvn::{bvn_cdf, bvn_rect};
use crate::dataset::Dataset;
use crate::moment::{MomentFamily, MomentModel, Pairing};
use crate::stats::{dphi, phi};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;

/// The four Monte Carlo designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryDgp {
    Set1,
    Set2Dgp1,
    Set2Dgp2,
    Set2Dgp3,
}

impl EntryDgp {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "set1" => Some(EntryDgp::Set1),
            "set2-dgp1" => Some(EntryDgp::Set2Dgp1),
            "set2-dgp2" => Some(EntryDgp::Set2Dgp2),
            "set2-dgp3" => Some(EntryDgp::Set2Dgp3),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EntryDgp::Set1 => "set1",
            EntryDgp::Set2Dgp1 => "set2-dgp1",
            EntryDgp::Set2Dgp2 => "set2-dgp2",
            EntryDgp::Set2Dgp3 => "set2-dgp3",
        }
    }

    pub fn spec(self) -> EntryGameSpec {
        match self {
            EntryDgp::Set1 => EntryGameSpec {
                dgp: self,
                theta_true: vec![0.4, 0.6, 0.1, 0.2, 0.3],
                mu_select: 0.6,
                r_fixed: 0.0,
            },
            // zeta = (.5,.25), Delta = (-1,-1), both players, r = 0 known.
            EntryDgp::Set2Dgp1 => EntryGameSpec {
                dgp: self,
                theta_true: vec![0.5, 0.25, 0.5, 0.25, -1.0, -1.0, -1.0, -1.0],
                mu_select: 0.5,
                r_fixed: 0.0,
            },
            // Delta^[2] = -.75 instead: partially identified.
            EntryDgp::Set2Dgp2 => EntryGameSpec {
                dgp: self,
                theta_true: vec![0.5, 0.25, 0.5, 0.25, -1.0, -0.75, -1.0, -0.75],
                mu_select: 0.5,
                r_fixed: 0.0,
            },
            // Same payoffs as DGP2 but r = 0.5 and unknown.
            EntryDgp::Set2Dgp3 => EntryGameSpec {
                dgp: self,
                theta_true: vec![0.5, 0.25, 0.5, 0.25, -1.0, -0.75, -1.0, -0.75, 0.5],
                mu_select: 0.5,
                r_fixed: 0.5,
            },
        }
    }
}

/// Covariate support of Set 2: `(z1, z2)` sign pairs with multinomial
/// weights.
const SET2_Z: [(f64, f64); 4] = [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)];
const SET2_PZ: [f64; 4] = [0.1, 0.2, 0.3, 0.4];
const SET1_PZ: f64 = 0.25;

/// A fully parameterized design: payoff parameters, shock correlation,
/// selection probability, and covariate distribution (the latter two fixed by
/// the design family).
#[derive(Debug, Clone)]
pub struct EntryGameSpec {
    pub dgp: EntryDgp,
    /// True parameter vector in model order.
    pub theta_true: Vec<f64>,
    /// Probability that `(0,1)` is selected in the multiplicity region.
    pub mu_select: f64,
    /// Shock correlation when it is not a component of theta.
    pub r_fixed: f64,
}

/// Monopoly / duopoly entry thresholds for both players at one covariate
/// value: player `l` enters a market it would hold alone iff `u_l > t_l` and
/// a duopoly market iff `u_l > d_l`. The designs have nonpositive
/// interaction effects at the truth, i.e. `d_l >= t_l`; at parameter-box
/// points where the implied interaction would turn positive the duopoly
/// threshold is clamped to the monopoly one (zero interaction), which keeps
/// the equilibrium regions a partition everywhere on the box.
#[derive(Debug, Clone, Copy)]
struct Thresholds {
    t1: f64,
    d1: f64,
    t2: f64,
    d2: f64,
    clamped1: bool,
    clamped2: bool,
}

impl EntryGameSpec {
    pub fn dim(&self) -> usize {
        self.theta_true.len()
    }

    fn r_free(&self) -> bool {
        matches!(self.dgp, EntryDgp::Set2Dgp3)
    }

    fn r_of(&self, theta: &[f64]) -> f64 {
        if self.r_free() {
            theta[8].clamp(0.0, 0.99)
        } else {
            self.r_fixed
        }
    }

    pub fn n_z(&self) -> usize {
        4
    }

    pub fn p_z(&self, z: usize) -> f64 {
        match self.dgp {
            EntryDgp::Set1 => SET1_PZ,
            _ => SET2_PZ[z],
        }
    }

    /// Parameter box of the built-in model.
    pub fn theta_box(&self) -> Vec<(f64, f64)> {
        match self.dgp {
            EntryDgp::Set1 => vec![(0.0, 1.0), (0.0, 1.0), (0.0, 0.85), (0.0, 0.85), (0.0, 0.85)],
            _ => {
                let mut b = vec![
                    (0.0, 1.5),
                    (-0.5, 1.0),
                    (0.0, 1.5),
                    (-0.5, 1.0),
                    (-2.5, 0.5),
                    (-2.0, 0.75),
                    (-2.5, 0.5),
                    (-2.0, 0.75),
                ];
                if self.r_free() {
                    b.push((0.0, 0.9));
                }
                b
            }
        }
    }

    fn thresholds(&self, theta: &[f64], z: usize) -> Thresholds {
        match self.dgp {
            EntryDgp::Set1 => {
                // zeta^[0] = 0 is the type-0 normalization.
                let zeta = if z == 0 { 0.0 } else { theta[2 + (z - 1)] };
                let t = -zeta;
                let d1 = theta[0] - zeta;
                let d2 = theta[1] - zeta;
                Thresholds {
                    t1: t,
                    d1: d1.max(t),
                    t2: t,
                    d2: d2.max(t),
                    clamped1: d1 < t,
                    clamped2: d2 < t,
                }
            }
            _ => {
                let (z1, z2) = SET2_Z[z];
                let lin = |c0: f64, c1: f64, zz: f64| c0 + c1 * zz;
                let t1 = -lin(theta[0], theta[1], z1);
                let d1 = -(lin(theta[0], theta[1], z1) + lin(theta[4], theta[5], z1));
                let t2 = -lin(theta[2], theta[3], z2);
                let d2 = -(lin(theta[2], theta[3], z2) + lin(theta[6], theta[7], z2));
                Thresholds {
                    t1,
                    d1: d1.max(t1),
                    t2,
                    d2: d2.max(t2),
                    clamped1: d1 < t1,
                    clamped2: d2 < t2,
                }
            }
        }
    }

    /// Region masses `(p00, p11, p01_outer, p_mult)` under the shock law at
    /// `theta`: the uniquely-(0,0) region, the uniquely-(1,1) region, the
    /// region where `(0,1)` is an equilibrium, and the multiplicity region.
    fn region_masses(&self, theta: &[f64], z: usize) -> (f64, f64, f64, f64) {
        let th = self.thresholds(theta, z);
        match self.dgp {
            EntryDgp::Set1 => {
                // u uniform on [0,1]^2; t thresholds are <= 0 in the box.
                let a1 = th.d1.clamp(0.0, 1.0);
                let a2 = th.d2.clamp(0.0, 1.0);
                (0.0, (1.0 - a1) * (1.0 - a2), a1, a1 * a2)
            }
            _ => {
                let r = self.r_of(theta);
                let p00 = bvn_cdf(th.t1, th.t2, r);
                let p11 = bvn_cdf(-th.d1, -th.d2, r);
                let p01 = phi(th.d1) - bvn_cdf(th.d1, th.t2, r);
                let pm = bvn_rect(th.t1, th.d1, th.t2, th.d2, r);
                (p00, p11, p01, pm)
            }
        }
    }

    /// Model-implied probabilities of the four outcomes
    /// `[(0,0), (0,1), (1,0), (1,1)]` conditional on `Z = z`, under selection
    /// probability `mu`.
    pub fn outcome_probs(&self, theta: &[f64], z: usize) -> [f64; 4] {
        let (p00, p11, p01_outer, pm) = self.region_masses(theta, z);
        let p01 = p01_outer - pm + self.mu_select * pm;
        let p10 = 1.0 - p00 - p11 - p01;
        [p00, p01, p10, p11]
    }

    /// Moment layout: inequalities first (rows `z` give the upper bound on
    /// the `(0,1)` frequency, rows `4 + z` the paired lower bound), then the
    /// equality block.
    pub fn counts(&self) -> (usize, usize) {
        match self.dgp {
            EntryDgp::Set1 => (8, 4),
            _ => (8, 8),
        }
    }

    /// Deterministic moment parts `v_j(theta)` (in `m_j = h_j(X) - v_j`).
    fn shift_values(&self, theta: &[f64], out: &mut [f64]) {
        let nz = self.n_z();
        for z in 0..nz {
            let (p00, p11, p01_outer, pm) = self.region_masses(theta, z);
            let pz = self.p_z(z);
            out[z] = p01_outer * pz;
            out[4 + z] = -(p01_outer - pm) * pz;
            match self.dgp {
                EntryDgp::Set1 => {
                    out[8 + z] = p11 * pz;
                }
                _ => {
                    out[8 + z] = p00 * pz;
                    out[12 + z] = p11 * pz;
                }
            }
        }
    }

    /// Indicator moment parts `h_j(X)` for one observation `(y1, y2, z)`.
    fn data_values(&self, obs: &[f64], out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = 0.0;
        }
        let y1 = obs[0] != 0.0;
        let y2 = obs[1] != 0.0;
        let z = obs[2] as usize;
        if !y1 && y2 {
            out[z] = 1.0;
            out[4 + z] = -1.0;
        }
        match self.dgp {
            EntryDgp::Set1 => {
                if y1 && y2 {
                    out[8 + z] = 1.0;
                }
            }
            _ => {
                if !y1 && !y2 {
                    out[8 + z] = 1.0;
                }
                if y1 && y2 {
                    out[12 + z] = 1.0;
                }
            }
        }
    }

    /// Gradients of the deterministic parts: `out[j] = grad v_j(theta)`.
    fn shift_gradients(&self, theta: &[f64], out: &mut [Vec<f64>]) {
        let d = self.dim();
        for row in out.iter_mut() {
            for v in row.iter_mut() {
                *v = 0.0;
            }
        }
        match self.dgp {
            EntryDgp::Set1 => {
                for z in 0..4 {
                    let zeta = if z == 0 { 0.0 } else { theta[2 + (z - 1)] };
                    let a1 = (theta[0] - zeta).clamp(0.0, 1.0);
                    let a2 = (theta[1] - zeta).clamp(0.0, 1.0);
                    let s1 = ((theta[0] - zeta) > 0.0 && (theta[0] - zeta) < 1.0) as u8 as f64;
                    let s2 = ((theta[1] - zeta) > 0.0 && (theta[1] - zeta) < 1.0) as u8 as f64;
                    // d a1 / d theta_k and d a2 / d theta_k as sparse triplets
                    let mut da1 = vec![0.0; d];
                    let mut da2 = vec![0.0; d];
                    da1[0] = s1;
                    da2[1] = s2;
                    if z > 0 {
                        da1[2 + z - 1] = -s1;
                        da2[2 + z - 1] = -s2;
                    }
                    let pz = SET1_PZ;
                    for k in 0..d {
                        // v_z = a1 * pz
                        out[z][k] = da1[k] * pz;
                        // v_{4+z} = -(a1 - a1 a2) pz
                        out[4 + z][k] = -((1.0 - a2) * da1[k] - a1 * da2[k]) * pz;
                        // v_{8+z} = (1-a1)(1-a2) pz
                        out[8 + z][k] = (-(1.0 - a2) * da1[k] - (1.0 - a1) * da2[k]) * pz;
                    }
                }
            }
            _ => {
                let r = self.r_of(theta);
                let s = (1.0 - r * r).sqrt();
                for z in 0..4 {
                    let th = self.thresholds(theta, z);
                    let (z1, z2) = SET2_Z[z];
                    let pz = SET2_PZ[z];
                    // dt/dparam and dd/dparam: thresholds are -Z'zeta and
                    // -Z'(zeta+Delta).
                    let mut dt1 = vec![0.0; d];
                    let mut dd1 = vec![0.0; d];
                    let mut dt2 = vec![0.0; d];
                    let mut dd2 = vec![0.0; d];
                    dt1[0] = -1.0;
                    dt1[1] = -z1;
                    dd1[0] = -1.0;
                    dd1[1] = -z1;
                    dd1[4] = -1.0;
                    dd1[5] = -z1;
                    dt2[2] = -1.0;
                    dt2[3] = -z2;
                    dd2[2] = -1.0;
                    dd2[3] = -z2;
                    dd2[6] = -1.0;
                    dd2[7] = -z2;
                    // Where the duopoly threshold is clamped to the monopoly
                    // one, it moves with the monopoly threshold.
                    if th.clamped1 {
                        dd1.copy_from_slice(&dt1);
                    }
                    if th.clamped2 {
                        dd2.copy_from_slice(&dt2);
                    }

                    // Partial derivatives of the bivariate CDF pieces.
                    let cnd = |x: f64, y: f64| phi((y - r * x) / s); // d/dx Phi2(x,y;r) / dphi(x)
                    let dens = |x: f64, y: f64| {
                        (-(x * x - 2.0 * r * x * y + y * y) / (2.0 * s * s)).exp()
                            / (2.0 * std::f64::consts::PI * s)
                    };

                    // p01_outer = Phi(d1) - Phi2(d1, t2)
                    let dp01_dd1 = dphi(th.d1) * (1.0 - cnd(th.d1, th.t2));
                    let dp01_dt2 = -dphi(th.t2) * cnd(th.t2, th.d1);
                    let dp01_dr = -dens(th.d1, th.t2);

                    // pm = rect(t1,d1,t2,d2); zero gradient when empty.
                    let empty = th.d1 <= th.t1 || th.d2 <= th.t2;
                    let (dpm_dt1, dpm_dd1, dpm_dt2, dpm_dd2, dpm_dr) = if empty {
                        (0.0, 0.0, 0.0, 0.0, 0.0)
                    } else {
                        (
                            -dphi(th.t1) * (cnd(th.t1, th.d2) - cnd(th.t1, th.t2)),
                            dphi(th.d1) * (cnd(th.d1, th.d2) - cnd(th.d1, th.t2)),
                            -dphi(th.t2) * (cnd(th.t2, th.d1) - cnd(th.t2, th.t1)),
                            dphi(th.d2) * (cnd(th.d2, th.d1) - cnd(th.d2, th.t1)),
                            dens(th.d1, th.d2) - dens(th.t1, th.d2) - dens(th.d1, th.t2)
                                + dens(th.t1, th.t2),
                        )
                    };

                    // p00 = Phi2(t1, t2)
                    let dp00_dt1 = dphi(th.t1) * cnd(th.t1, th.t2);
                    let dp00_dt2 = dphi(th.t2) * cnd(th.t2, th.t1);
                    let dp00_dr = dens(th.t1, th.t2);

                    // p11 = Phi2(-d1, -d2)
                    let dp11_dd1 = -dphi(th.d1) * cnd(-th.d1, -th.d2);
                    let dp11_dd2 = -dphi(th.d2) * cnd(-th.d2, -th.d1);
                    let dp11_dr = dens(th.d1, th.d2);

                    for k in 0..d {
                        let dv01 = dp01_dd1 * dd1[k] + dp01_dt2 * dt2[k];
                        let dvm = dpm_dt1 * dt1[k]
                            + dpm_dd1 * dd1[k]
                            + dpm_dt2 * dt2[k]
                            + dpm_dd2 * dd2[k];
                        out[z][k] = dv01 * pz;
                        out[4 + z][k] = -(dv01 - dvm) * pz;
                        out[8 + z][k] = (dp00_dt1 * dt1[k] + dp00_dt2 * dt2[k]) * pz;
                        out[12 + z][k] = (dp11_dd1 * dd1[k] + dp11_dd2 * dd2[k]) * pz;
                    }
                    if self.r_free() {
                        out[z][8] = dp01_dr * pz;
                        out[4 + z][8] = -(dp01_dr - dpm_dr) * pz;
                        out[8 + z][8] = dp00_dr * pz;
                        out[12 + z][8] = dp11_dr * pz;
                    }
                }
            }
        }
    }

    /// The moment (in)equality model implied by the design.
    pub fn model(&self) -> MomentModel {
        let (j1, j2) = self.counts();
        let spec_h = self.clone();
        let spec_v = self.clone();
        let spec_g = self.clone();
        MomentModel::new(
            self.dgp.name(),
            self.dim(),
            j1,
            j2,
            self.theta_box(),
            MomentFamily::Separable {
                data_part: Arc::new(move |obs, out| spec_h.data_values(obs, out)),
                shift: Arc::new(move |theta, out| spec_v.shift_values(theta, out)),
            },
            Some(Arc::new(move |theta, sigma, out| {
                // Analytic gradients of E[m_j]/sigma_j: m = h - v, so the
                // rows are -grad v_j / sigma_j.
                let jj = out.len();
                let mut dv = vec![vec![0.0; spec_g.dim()]; jj];
                spec_g.shift_gradients(theta, &mut dv);
                for j in 0..jj {
                    for k in 0..spec_g.dim() {
                        out[j][k] = -dv[j][k] / sigma[j];
                    }
                }
            })),
            Some(Pairing { r1: 4 }),
        )
        .expect("valid entry-game model")
    }

    /// Simulate `n` markets at the true parameter. Columns: `y1, y2, z`.
    pub fn simulate(&self, n: usize, seed: u64) -> Dataset {
        self.simulate_at(&self.theta_true.clone(), n, seed)
    }

    /// Simulate at an arbitrary parameter value (used by oracle checks).
    pub fn simulate_at(&self, theta: &[f64], n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0xE17);
        let mut data = Vec::with_capacity(n * 3);
        let r = self.r_of(theta);
        for _ in 0..n {
            let z = match self.dgp {
                EntryDgp::Set1 => rng.gen_range(0..4usize),
                _ => {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut pick = 3;
                    for (i, p) in SET2_PZ.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            pick = i;
                            break;
                        }
                    }
                    pick
                }
            };
            let (u1, u2) = match self.dgp {
                EntryDgp::Set1 => (rng.gen::<f64>(), rng.gen::<f64>()),
                _ => {
                    let e1: f64 = rng.sample(StandardNormal);
                    let e2: f64 = rng.sample(StandardNormal);
                    (e1, r * e1 + (1.0 - r * r).sqrt() * e2)
                }
            };
            let th = self.thresholds(theta, z);
            let (y1, y2) = if u1 <= th.t1 && u2 <= th.t2 {
                (0.0, 0.0)
            } else if u1 > th.d1 && u2 > th.d2 {
                (1.0, 1.0)
            } else {
                let ne_01 = u1 <= th.d1 && u2 > th.t2;
                let ne_10 = u1 > th.t1 && u2 <= th.d2;
                match (ne_01, ne_10) {
                    (true, false) => (0.0, 1.0),
                    (false, true) => (1.0, 0.0),
                    (true, true) => {
                        if rng.gen::<f64>() < self.mu_select {
                            (0.0, 1.0)
                        } else {
                            (1.0, 0.0)
                        }
                    }
                    (false, false) => unreachable!("equilibrium regions partition the shock space"),
                }
            };
            data.push(y1);
            data.push(y2);
            data.push(z as f64);
        }
        Dataset::new(n, 3, data).expect("simulated data")
    }

    /// Population moments `E[m_j(X, theta)]` (first `J1+J2` rows) when the
    /// data are generated at the true parameter and selection `mu`.
    pub fn population_moments(&self, theta: &[f64]) -> Vec<f64> {
        let (j1, j2) = self.counts();
        let mut v = vec![0.0; j1 + j2];
        self.shift_values(theta, &mut v);
        let mut h = vec![0.0; j1 + j2];
        for z in 0..self.n_z() {
            let probs = self.outcome_probs(&self.theta_true, z);
            let pz = self.p_z(z);
            h[z] += probs[1] * pz;
            h[4 + z] += -probs[1] * pz;
            match self.dgp {
                EntryDgp::Set1 => h[8 + z] += probs[3] * pz,
                _ => {
                    h[8 + z] += probs[0] * pz;
                    h[12 + z] += probs[3] * pz;
                }
            }
        }
        (0..j1 + j2).map(|j| h[j] - v[j]).collect()
    }

    /// Largest population constraint violation at `theta` (inequalities
    /// one-sided, equalities absolute), for identified-set membership checks.
    pub fn population_violation(&self, theta: &[f64]) -> f64 {
        let (j1, _) = self.counts();
        let m = self.population_moments(theta);
        let mut worst: f64 = f64::NEG_INFINITY;
        for (j, v) in m.iter().enumerate() {
            let viol = if j < j1 { *v } else { v.abs() };
            worst = worst.max(viol);
        }
        worst
    }

    /// Paper-reported projections of the population identified set per
    /// component, used by the Monte Carlo harness for coverage accounting.
    pub fn true_bounds(&self, component: usize) -> Result<(f64, f64)> {
        let table: &[(f64, f64)] = match self.dgp {
            EntryDgp::Set1 => &[
                (0.3872, 0.4239),
                (0.5834, 0.6084),
                (0.0996, 0.1006),
                (0.1994, 0.2010),
                (0.2992, 0.3014),
            ],
            // Point identified: every projection is the true value.
            EntryDgp::Set2Dgp1 => {
                let t = self.theta_true[component];
                return Ok((t, t));
            }
            EntryDgp::Set2Dgp2 => &[
                (0.405, 0.589),
                (0.236, 0.266),
                (f64::NAN, f64::NAN),
                (f64::NAN, f64::NAN),
                (-1.158, -0.832),
                (-0.790, -0.716),
                (f64::NAN, f64::NAN),
                (f64::NAN, f64::NAN),
            ],
            EntryDgp::Set2Dgp3 => &[
                (0.465, 0.533),
                (0.240, 0.261),
                (f64::NAN, f64::NAN),
                (f64::NAN, f64::NAN),
                (-1.069, -0.927),
                (-0.782, -0.720),
                (f64::NAN, f64::NAN),
                (f64::NAN, f64::NAN),
                (0.4998, 0.5000),
            ],
        };
        let b = *table
            .get(component)
            .ok_or_else(|| Error::invalid("component out of range"))?;
        if b.0.is_nan() {
            return Err(Error::invalid(format!(
                "no recorded identified-set bounds for component {component} of {}",
                self.dgp.name()
            )));
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moment::Evaluator;
    use approx::assert_abs_diff_eq;

    #[test]
    fn probabilities_partition() {
        for dgp in [
            EntryDgp::Set1,
            EntryDgp::Set2Dgp1,
            EntryDgp::Set2Dgp2,
            EntryDgp::Set2Dgp3,
        ] {
            let spec = dgp.spec();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for _ in 0..100 {
                let theta: Vec<f64> = spec
                    .theta_box()
                    .iter()
                    .map(|(lo, hi)| rng.gen_range(*lo..*hi))
                    .collect();
                for z in 0..spec.n_z() {
                    let p = spec.outcome_probs(&theta, z);
                    let sum: f64 = p.iter().sum();
                    assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
                    for v in p {
                        assert!(
                            (-1e-12..=1.0 + 1e-12).contains(&v),
                            "probability {v} out of range at {theta:?}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn true_theta_in_population_identified_set() {
        for dgp in [
            EntryDgp::Set1,
            EntryDgp::Set2Dgp1,
            EntryDgp::Set2Dgp2,
            EntryDgp::Set2Dgp3,
        ] {
            let spec = dgp.spec();
            let viol = spec.population_violation(&spec.theta_true.clone());
            assert!(viol <= 1e-12, "{}: violation {viol}", dgp.name());
        }
    }

    #[test]
    fn set1_population_moments_at_truth() {
        // Equalities are exactly zero and inequalities weakly negative at the
        // published design point.
        let spec = EntryDgp::Set1.spec();
        let m = spec.population_moments(&[0.4, 0.6, 0.1, 0.2, 0.3]);
        for (j, v) in m.iter().enumerate() {
            if j < 8 {
                assert!(*v <= 1e-12);
            } else {
                assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
            }
        }
        // The slack inequality rows carry exactly the selection shares of the
        // multiplicity mass: row z has E m = (mu - 1) * pm * pz.
        let pm0 = 0.4 * 0.6;
        assert_abs_diff_eq!(m[0], (0.6 - 1.0) * pm0 * 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(m[4], -0.6 * pm0 * 0.25, epsilon = 1e-12);
    }

    #[test]
    fn paired_rows_negate_plus_slack() {
        // m_{j+4} = -m_j - t_j with t_j >= 0 pointwise, t_j the multiplicity
        // mass times p_z.
        for dgp in [EntryDgp::Set1, EntryDgp::Set2Dgp3] {
            let spec = dgp.spec();
            let model = spec.model();
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let data = spec.simulate(50, 3);
            for _ in 0..100 {
                let theta: Vec<f64> = spec
                    .theta_box()
                    .iter()
                    .map(|(lo, hi)| rng.gen_range(*lo..*hi))
                    .collect();
                for obs in data.rows() {
                    let jj = model.j1 + model.j2;
                    let mut h = vec![0.0; jj];
                    let mut v = vec![0.0; jj];
                    spec.data_values(obs, &mut h);
                    spec.shift_values(&theta, &mut v);
                    for j in 0..4 {
                        let m_j = h[j] - v[j];
                        let m_pair = h[4 + j] - v[4 + j];
                        let t_j = -m_j - m_pair;
                        assert!(t_j >= -1e-12, "slack {t_j} negative");
                    }
                }
            }
        }
    }

    #[test]
    fn simulated_frequencies_match_model_probs_smoke() {
        // Small-n smoke test; the n = 1e5 version lives in the acceptance
        // suite.
        let spec = EntryDgp::Set2Dgp1.spec();
        let data = spec.simulate(20_000, 42);
        let mut counts = [[0usize; 4]; 4];
        let mut zn = [0usize; 4];
        for obs in data.rows() {
            let z = obs[2] as usize;
            let o = match (obs[0] != 0.0, obs[1] != 0.0) {
                (false, false) => 0,
                (false, true) => 1,
                (true, false) => 2,
                (true, true) => 3,
            };
            counts[z][o] += 1;
            zn[z] += 1;
        }
        for z in 0..4 {
            let probs = spec.outcome_probs(&spec.theta_true.clone(), z);
            for o in 0..4 {
                let freq = counts[z][o] as f64 / zn[z] as f64;
                assert_abs_diff_eq!(freq, probs[o], epsilon = 0.03);
            }
        }
    }

    #[test]
    fn selection_forced_when_mu_is_one() {
        let mut spec = EntryDgp::Set1.spec();
        spec.mu_select = 1.0;
        let data = spec.simulate(20_000, 9);
        // (1,0) must only occur outside the multiplicity region: its
        // frequency equals the (1,0)-only region mass.
        let theta = spec.theta_true.clone();
        for z in 0..4 {
            let th = spec.thresholds(&theta, z);
            let a1 = th.d1.clamp(0.0, 1.0);
            let a2 = th.d2.clamp(0.0, 1.0);
            let only10 = (1.0 - a1) * a2;
            let freq = data
                .rows()
                .filter(|o| o[2] as usize == z && o[0] == 1.0 && o[1] == 0.0)
                .count() as f64
                / data.rows().filter(|o| o[2] as usize == z).count() as f64;
            assert_abs_diff_eq!(freq, only10, epsilon = 0.025);
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        for dgp in [EntryDgp::Set1, EntryDgp::Set2Dgp2, EntryDgp::Set2Dgp3] {
            let spec = dgp.spec();
            let model = spec.model();
            let no_grad = MomentModel {
                gradient: None,
                ..model.clone()
            };
            let data = spec.simulate(2000, 11);
            let ev_a = Evaluator::new(&model, &data).unwrap();
            let ev_f = Evaluator::new(&no_grad, &data).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(23);
            let mut checked = 0;
            while checked < 50 {
                // interior points, away from clip kinks
                let theta: Vec<f64> = spec
                    .theta_true
                    .iter()
                    .map(|t| t + rng.gen_range(-0.05..0.05))
                    .collect();
                let ga = match ev_a.sample_moments(&theta) {
                    Ok(sm) => sm.d_hat,
                    Err(_) => continue,
                };
                let gf = ev_f.sample_moments(&theta).unwrap().d_hat;
                for j in 0..model.j_total() {
                    for k in 0..model.dim {
                        let denom = 1.0f64.max(ga[j][k].abs());
                        assert!(
                            ((ga[j][k] - gf[j][k]) / denom).abs() <= 1e-5,
                            "{}: row {j} col {k}: {} vs {}",
                            dgp.name(),
                            ga[j][k],
                            gf[j][k]
                        );
                    }
                }
                checked += 1;
            }
        }
    }

    #[test]
    fn set1_gradient_signs() {
        // Entry probabilities increase in own payoff shifters: the (1,1)
        // equality's deterministic part (1-a1)(1-a2) decreases in delta, so
        // the studentized moment row for it is positive in delta components.
        let spec = EntryDgp::Set1.spec();
        let model = spec.model();
        let data = spec.simulate(500, 2);
        let ev = Evaluator::new(&model, &data).unwrap();
        let sm = ev.sample_moments(&spec.theta_true.clone()).unwrap();
        for z in 0..4 {
            assert!(sm.d_hat[8 + z][0] > 0.0);
            assert!(sm.d_hat[8 + z][1] > 0.0);
        }
    }

    #[test]
    fn equality_rows_negate_mirrors() {
        let spec = EntryDgp::Set2Dgp1.spec();
        let model = spec.model();
        let data = spec.simulate(400, 8);
        let ev = Evaluator::new(&model, &data).unwrap();
        let sm = ev.sample_moments(&spec.theta_true.clone()).unwrap();
        let (j1, j2) = (model.j1, model.j2);
        for k in 0..j2 {
            assert_eq!(sm.studentized[j1 + j2 + k], -sm.studentized[j1 + k]);
            for c in 0..model.dim {
                assert_eq!(sm.d_hat[j1 + j2 + k][c], -sm.d_hat[j1 + k][c]);
            }
        }
    }

    #[test]
    fn dgp1_point_identified_locally() {
        // Directional probes: any point at distance >= 1e-3 from the truth
        // violates some population constraint.
        let spec = EntryDgp::Set2Dgp1.spec();
        let truth = spec.theta_true.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let mut dir: Vec<f64> = (0..spec.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-6 {
                continue;
            }
            for v in dir.iter_mut() {
                *v /= norm;
            }
            for radius in [1e-3, 1e-2, 0.1] {
                let theta: Vec<f64> = truth
                    .iter()
                    .zip(&dir)
                    .map(|(t, d)| t + radius * d)
                    .collect();
                let viol = spec.population_violation(&theta);
                assert!(
                    viol > 1e-9,
                    "no violation at radius {radius} in direction {dir:?}"
                );
            }
        }
    }
}
