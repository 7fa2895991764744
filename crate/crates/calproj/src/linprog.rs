//! Small dense linear-program kernel.
//!
//! The bootstrap calibration repeatedly checks feasibility of systems
//! `{ lambda : A lambda <= b, lambda in box }` with at most a few dozen rows
//! and ~15 variables, so a dense two-phase tableau simplex with Bland's rule
//! is all that is needed. No sparse machinery, no external solver.

use crate::{Error, Result};

/// Feasibility tolerance on constraint residuals.
pub const FEAS_TOL: f64 = 1e-9;

/// `A lambda <= b` together with (possibly infinite) per-variable bounds.
///
/// Rows with `b = +inf` are treated as absent; they arise when a GMS value of
/// `-inf` makes a constraint vacuous.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    a: Vec<f64>, // row-major m x d
    b: Vec<f64>,
    bounds: Vec<(f64, f64)>,
}

/// Result of [`LinearSystem::maximize`].
#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, point: Vec<f64> },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            LpOutcome::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }
}

impl LinearSystem {
    pub fn new(rows: Vec<Vec<f64>>, b: Vec<f64>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        let d = bounds.len();
        if rows.len() != b.len() {
            return Err(Error::invalid("row/rhs count mismatch"));
        }
        let mut a = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::invalid(format!("row {i} has wrong dimension")));
            }
            a.extend_from_slice(r);
        }
        Ok(LinearSystem { a, b, bounds })
    }

    /// Row-major construction without per-row vectors.
    pub fn from_flat(a: Vec<f64>, b: Vec<f64>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        let d = bounds.len();
        if b.len() * d != a.len() {
            return Err(Error::invalid("flat matrix size mismatch"));
        }
        Ok(LinearSystem { a, b, bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn nrows(&self) -> usize {
        self.b.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.a[i * d..(i + 1) * d]
    }

    /// True iff the system has a feasible point (phase-1 simplex only).
    pub fn feasible(&self) -> Result<bool> {
        match self.solve(None)? {
            LpOutcome::Infeasible => Ok(false),
            _ => Ok(true),
        }
    }

    /// Maximize `c' lambda` over the system.
    pub fn maximize(&self, c: &[f64]) -> Result<LpOutcome> {
        assert_eq!(c.len(), self.dim());
        self.solve(Some(c))
    }

    /// Shared driver: with `objective = None` only feasibility is decided
    /// (the returned `value`/`point` are then a feasible point).
    fn solve(&self, objective: Option<&[f64]>) -> Result<LpOutcome> {
        let d = self.dim();
        for (lo, hi) in &self.bounds {
            if lo > hi {
                return Ok(LpOutcome::Infeasible);
            }
        }
        if self.b.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("NaN rhs"));
        }
        if self.b.iter().any(|v| *v == f64::NEG_INFINITY) {
            return Ok(LpOutcome::Infeasible);
        }

        // Substitute each variable so that all structural variables are >= 0:
        //   lo finite:             lambda = lo + x
        //   lo = -inf, hi finite:  lambda = hi - x
        //   both infinite:         lambda = x+ - x-
        // Finite two-sided bounds add an upper-bound row on x.
        #[derive(Clone, Copy)]
        enum Subst {
            Shift(f64),
            Flip(f64),
            Split, // occupies two columns, x+ then x-
        }
        let mut subst = Vec::with_capacity(d);
        let mut col_of_var = Vec::with_capacity(d);
        let mut n = 0usize;
        for &(lo, hi) in &self.bounds {
            col_of_var.push(n);
            if lo.is_finite() {
                subst.push(Subst::Shift(lo));
                n += 1;
            } else if hi.is_finite() {
                subst.push(Subst::Flip(hi));
                n += 1;
            } else {
                subst.push(Subst::Split);
                n += 2;
            }
        }

        // Assemble G x <= h.
        let mut g_rows: Vec<Vec<f64>> = Vec::new();
        let mut h: Vec<f64> = Vec::new();
        for i in 0..self.nrows() {
            if self.b[i] == f64::INFINITY {
                continue; // vacuous row
            }
            let arow = self.row(i);
            if arow.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite constraint coefficient"));
            }
            let mut grow = vec![0.0; n];
            let mut rhs = self.b[i];
            for k in 0..d {
                let col = col_of_var[k];
                match subst[k] {
                    Subst::Shift(lo) => {
                        grow[col] = arow[k];
                        rhs -= arow[k] * lo;
                    }
                    Subst::Flip(hi) => {
                        grow[col] = -arow[k];
                        rhs -= arow[k] * hi;
                    }
                    Subst::Split => {
                        grow[col] = arow[k];
                        grow[col + 1] = -arow[k];
                    }
                }
            }
            g_rows.push(grow);
            h.push(rhs);
        }
        // Upper-bound rows for doubly bounded variables.
        for k in 0..d {
            let (lo, hi) = self.bounds[k];
            if lo.is_finite() && hi.is_finite() && hi > lo {
                let mut grow = vec![0.0; n];
                grow[col_of_var[k]] = 1.0;
                g_rows.push(grow);
                h.push(hi - lo);
            }
            // lo == hi is handled by the zero upper bound row (hi - lo = 0):
            if lo.is_finite() && hi.is_finite() && hi == lo {
                let mut grow = vec![0.0; n];
                grow[col_of_var[k]] = 1.0;
                g_rows.push(grow);
                h.push(0.0);
            }
        }

        // Objective in x coordinates, plus the constant from substitution.
        let mut cx = vec![0.0; n];
        let mut c0 = 0.0;
        if let Some(c) = objective {
            for k in 0..d {
                let col = col_of_var[k];
                match subst[k] {
                    Subst::Shift(lo) => {
                        cx[col] = c[k];
                        c0 += c[k] * lo;
                    }
                    Subst::Flip(hi) => {
                        cx[col] = -c[k];
                        c0 += c[k] * hi;
                    }
                    Subst::Split => {
                        cx[col] = c[k];
                        cx[col + 1] = -c[k];
                    }
                }
            }
        }

        let cap = 10 * (self.nrows() + d) * (self.nrows() + d) + 100;
        let outcome = simplex_two_phase(&g_rows, &h, &cx, objective.is_some(), cap)?;

        Ok(match outcome {
            StdOutcome::Infeasible => LpOutcome::Infeasible,
            StdOutcome::Unbounded => LpOutcome::Unbounded,
            StdOutcome::Optimal { value, x } => {
                // Map x back to lambda.
                let mut lambda = vec![0.0; d];
                for k in 0..d {
                    let col = col_of_var[k];
                    lambda[k] = match subst[k] {
                        Subst::Shift(lo) => lo + x[col],
                        Subst::Flip(hi) => hi - x[col],
                        Subst::Split => x[col] - x[col + 1],
                    };
                }
                LpOutcome::Optimal {
                    value: value + c0,
                    point: lambda,
                }
            }
        })
    }
}

enum StdOutcome {
    Optimal { value: f64, x: Vec<f64> },
    Infeasible,
    Unbounded,
}

/// Two-phase tableau simplex for `max c'x  s.t.  G x <= h, x >= 0` with `h`
/// entries of arbitrary sign. Bland's rule throughout, so no cycling; the
/// iteration cap is a safeguard that errors out rather than returning a
/// wrong verdict.
fn simplex_two_phase(
    g: &[Vec<f64>],
    h: &[f64],
    c: &[f64],
    want_phase2: bool,
    cap: usize,
) -> Result<StdOutcome> {
    let m = g.len();
    let n = c.len();
    let mut n_art = 0usize;
    for &hi in h {
        if hi < 0.0 {
            n_art += 1;
        }
    }
    let ncols = n + m + n_art; // structural + slack + artificial
    let width = ncols + 1; // + rhs
    let mut t = vec![0.0; m * width];
    let mut basis = vec![0usize; m];
    let mut art_cols: Vec<usize> = Vec::with_capacity(n_art);

    let mut next_art = n + m;
    for i in 0..m {
        let neg = h[i] < 0.0;
        let sgn = if neg { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i * width + j] = sgn * g[i][j];
        }
        t[i * width + n + i] = sgn; // slack
        t[i * width + ncols] = sgn * h[i];
        if neg {
            t[i * width + next_art] = 1.0;
            basis[i] = next_art;
            art_cols.push(next_art);
            next_art += 1;
        } else {
            basis[i] = n + i;
        }
    }

    let mut iters = 0usize;

    // Phase 1: maximize -sum(artificials). Reduced costs r_j = c_j - z_j with
    // c = -1 on artificial columns; with artificials basic this is the sum of
    // their rows except on the artificial columns themselves.
    if n_art > 0 {
        let mut red = vec![0.0; ncols];
        let mut val = 0.0;
        for i in 0..m {
            if basis[i] >= n + m {
                for j in 0..ncols {
                    red[j] += t[i * width + j];
                }
                val -= t[i * width + ncols];
            }
        }
        for &j in &art_cols {
            red[j] = 0.0;
        }
        // Phase 1 is bounded above by 0, so Unbounded cannot occur.
        let _ = run_simplex(&mut t, &mut basis, &mut red, &mut val, m, ncols, width, cap, &mut iters)?;
        if val < -FEAS_TOL {
            return Ok(StdOutcome::Infeasible);
        }
        // Pivot remaining basic artificials out where possible; a row whose
        // structural and slack coefficients are all ~0 is redundant and stays
        // inert (its basic artificial sits at value ~0).
        let mut dummy_red = vec![0.0; ncols];
        let mut dummy_val = 0.0;
        for i in 0..m {
            if basis[i] >= n + m {
                if let Some(j) = (0..n + m).find(|&j| t[i * width + j].abs() > FEAS_TOL) {
                    pivot(&mut t, &mut basis, &mut dummy_red, &mut dummy_val, m, width, i, j);
                }
            }
        }
        // Zero out artificial columns so they can never re-enter.
        for &j in &art_cols {
            for i in 0..m {
                t[i * width + j] = 0.0;
            }
        }
    }

    if !want_phase2 {
        let x = extract(&t, &basis, m, n, width);
        return Ok(StdOutcome::Optimal { value: 0.0, x });
    }

    // Phase 2 with the real objective.
    let mut red = vec![0.0; ncols];
    let mut val = 0.0;
    for j in 0..ncols {
        red[j] = if j < n { c[j] } else { 0.0 };
    }
    for i in 0..m {
        let cb = if basis[i] < n { c[basis[i]] } else { 0.0 };
        if cb != 0.0 {
            for j in 0..ncols {
                red[j] -= cb * t[i * width + j];
            }
            val += cb * t[i * width + ncols];
        }
    }
    for &j in &art_cols {
        red[j] = f64::NEG_INFINITY; // never enter
    }
    match run_simplex(&mut t, &mut basis, &mut red, &mut val, m, ncols, width, cap, &mut iters)? {
        SimplexEnd::Optimal => {
            let x = extract(&t, &basis, m, n, width);
            Ok(StdOutcome::Optimal { value: val, x })
        }
        SimplexEnd::Unbounded => Ok(StdOutcome::Unbounded),
    }
}

enum SimplexEnd {
    Optimal,
    Unbounded,
}

#[allow(clippy::too_many_arguments)]
fn run_simplex(
    t: &mut [f64],
    basis: &mut [usize],
    red: &mut [f64],
    val: &mut f64,
    m: usize,
    ncols: usize,
    width: usize,
    cap: usize,
    iters: &mut usize,
) -> Result<SimplexEnd> {
    loop {
        *iters += 1;
        if *iters > cap {
            return Err(Error::SimplexStall { cap });
        }
        // Bland: entering column = smallest index with positive reduced cost.
        let Some(enter) = (0..ncols).find(|&j| red[j] > FEAS_TOL) else {
            return Ok(SimplexEnd::Optimal);
        };
        // Ratio test; Bland tie-break on smallest basis variable index.
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for i in 0..m {
            let a = t[i * width + enter];
            if a > FEAS_TOL {
                let ratio = t[i * width + ncols] / a;
                if ratio < best - 1e-12
                    || (ratio < best + 1e-12
                        && leave.is_some_and(|l| basis[i] < basis[l]))
                {
                    best = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(leave) = leave else {
            return Ok(SimplexEnd::Unbounded);
        };
        pivot(t, basis, red, val, m, width, leave, enter);
    }
}

fn pivot(
    t: &mut [f64],
    basis: &mut [usize],
    red: &mut [f64],
    val: &mut f64,
    m: usize,
    width: usize,
    leave: usize,
    enter: usize,
) {
    let ncols = width - 1;
    let piv = t[leave * width + enter];
    for j in 0..width {
        t[leave * width + j] /= piv;
    }
    for i in 0..m {
        if i != leave {
            let f = t[i * width + enter];
            if f != 0.0 {
                for j in 0..width {
                    t[i * width + j] -= f * t[leave * width + j];
                }
                t[i * width + enter] = 0.0;
            }
        }
    }
    let f = red[enter];
    if f != 0.0 && f.is_finite() {
        for j in 0..ncols {
            if red[j].is_finite() {
                red[j] -= f * t[leave * width + j];
            }
        }
        *val += f * t[leave * width + ncols];
        red[enter] = 0.0;
    }
    basis[leave] = enter;
}

fn extract(t: &[f64], basis: &[usize], m: usize, n: usize, width: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in 0..m {
        if basis[i] < n {
            x[basis[i]] = t[i * width + width - 1];
        }
    }
    x
}
