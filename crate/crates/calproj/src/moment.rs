//! Moment (in)equality model definitions and studentized sample moments.
//!
//! A model declares `J1` inequality moments `E[m_j] <= 0` and `J2` equality
//! moments `E[m_j] = 0` on a compact parameter box. Equalities are split into
//! two opposing inequalities and materialized, so every downstream loop runs
//! uniformly over `J = J1 + 2*J2` rows; rows `J1+J2..J` carry the negated
//! equality moments.

use crate::dataset::Dataset;
use crate::gms::GmsConfig;
use crate::{Error, Result};
use std::sync::Arc;

/// `(obs, theta, out)` with `out.len() == J1 + J2`.
pub type MomentFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(x, out)` — data part of a separable moment, `out.len() == J1 + J2`.
pub type DataFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// `(theta, out)` — deterministic part of a separable moment.
pub type ThetaFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// `(theta, sigma, out)` — analytic gradient rows of the studentized moments
/// for the first `J1 + J2` rows; `sigma` holds the studentization
/// denominators. Negated equality rows are mirrored automatically.
pub type GradientFn = Arc<dyn Fn(&[f64], &[f64], &mut [Vec<f64>]) + Send + Sync>;

/// How moment values are produced from data and parameter.
#[derive(Clone)]
pub enum MomentFamily {
    /// Arbitrary `m_j(X_i, theta)`.
    Generic(MomentFn),
    /// `m_j(X_i, theta) = h_j(X_i) - v_j(theta)`. The data part is cached, so
    /// sample standard deviations are free of `theta` and the bootstrap
    /// ensemble is shared across parameter values.
    Separable { data_part: DataFn, shift: ThetaFn },
}

/// Declares `R1` paired inequalities `(j, j + R1)`, `j = 0..R1` (0-based),
/// satisfying `m_{j+R1} = -m_j - t_j` with `t_j >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pairing {
    pub r1: usize,
}

/// Declarative description of a moment (in)equality model.
#[derive(Clone)]
pub struct MomentModel {
    pub name: String,
    pub dim: usize,
    pub j1: usize,
    pub j2: usize,
    pub theta_box: Vec<(f64, f64)>,
    pub pairing: Option<Pairing>,
    pub(crate) family: MomentFamily,
    pub(crate) gradient: Option<GradientFn>,
}

impl MomentModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        j1: usize,
        j2: usize,
        theta_box: Vec<(f64, f64)>,
        family: MomentFamily,
        gradient: Option<GradientFn>,
        pairing: Option<Pairing>,
    ) -> Result<Self> {
        if theta_box.len() != dim {
            return Err(Error::invalid("theta_box length != dim"));
        }
        if theta_box.iter().any(|(lo, hi)| !(hi > lo)) {
            return Err(Error::invalid(
                "theta_box must have strictly positive width in every coordinate",
            ));
        }
        if j1 + j2 == 0 {
            return Err(Error::invalid("model needs at least one moment"));
        }
        if let Some(p) = pairing {
            if p.r1 == 0 || 2 * p.r1 > j1 {
                return Err(Error::invalid("pairing requires 0 < R1 <= J1/2"));
            }
        }
        Ok(MomentModel {
            name: name.into(),
            dim,
            j1,
            j2,
            theta_box,
            pairing,
            family,
            gradient,
        })
    }

    /// Total constraint count `J = J1 + 2*J2`.
    pub fn j_total(&self) -> usize {
        self.j1 + 2 * self.j2
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn is_separable(&self) -> bool {
        matches!(self.family, MomentFamily::Separable { .. })
    }

    /// Scalar mean model `E[X - theta] = 0` (J1 = 0, J2 = 1).
    pub fn scalar_mean(lo: f64, hi: f64) -> MomentModel {
        MomentModel::new(
            "scalar-mean",
            1,
            0,
            1,
            vec![(lo, hi)],
            MomentFamily::Separable {
                data_part: Arc::new(|x, out| out[0] = x[0]),
                shift: Arc::new(|t, out| out[0] = t[0]),
            },
            Some(Arc::new(|_t, sigma, out| {
                out[0][0] = -1.0 / sigma[0];
            })),
            None,
        )
        .expect("valid scalar mean model")
    }

    /// Linear inequality moments `m_j = a_j' theta - X_j <= 0`, one data
    /// column per row. Gradients are analytic.
    pub fn linear_inequalities(a: Vec<Vec<f64>>, theta_box: Vec<(f64, f64)>) -> MomentModel {
        let d = theta_box.len();
        let m = a.len();
        assert!(a.iter().all(|r| r.len() == d));
        let a2 = a.clone();
        MomentModel::new(
            "linear",
            d,
            m,
            0,
            theta_box,
            MomentFamily::Separable {
                data_part: Arc::new(move |x, out| {
                    for j in 0..m {
                        out[j] = -x[j];
                    }
                }),
                shift: Arc::new(move |t, out| {
                    for (j, row) in a.iter().enumerate() {
                        out[j] = -dot(row, t);
                    }
                }),
            },
            Some(Arc::new(move |_t, sigma, out| {
                for (j, row) in a2.iter().enumerate() {
                    for k in 0..row.len() {
                        out[j][k] = row[k] / sigma[j];
                    }
                }
            })),
            None,
        )
        .expect("valid linear model")
    }
}

impl std::fmt::Debug for MomentModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MomentModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("j1", &self.j1)
            .field("j2", &self.j2)
            .field("pairing", &self.pairing)
            .finish_non_exhaustive()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cached studentized sample moments, standard deviations, paired-variance
/// estimators, and gradient estimates at one parameter value.
#[derive(Debug, Clone)]
pub struct SampleMoments {
    pub n: usize,
    pub j1: usize,
    pub j2: usize,
    /// `J`-vector of sample means, equality rows duplicated with sign flip.
    pub mbar: Vec<f64>,
    /// `J`-vector of sample standard deviations.
    pub sigma_hat: Vec<f64>,
    /// Merged estimators for paired inequalities (`R1` entries; entry `j`
    /// serves rows `j` and `j + R1`).
    pub sigma_m: Option<Vec<f64>>,
    /// `sqrt(n) * mbar_j / sigma_hat_j`.
    pub studentized: Vec<f64>,
    /// `J x d` gradient estimates of the studentized population moments.
    pub d_hat: Vec<Vec<f64>>,
}

impl SampleMoments {
    pub fn j_total(&self) -> usize {
        self.j1 + 2 * self.j2
    }

    /// Left-hand sides of the outer-problem constraints: studentized moments
    /// with the merged estimator substituted for both rows of each pair.
    /// Everything else uses the plain standard deviation.
    pub fn constraint_values(&self) -> Vec<f64> {
        let sqrt_n = (self.n as f64).sqrt();
        (0..self.j_total())
            .map(|j| sqrt_n * self.mbar[j] / self.denominator(j))
            .collect()
    }

    fn denominator(&self, j: usize) -> f64 {
        if let Some(sm) = &self.sigma_m {
            let r1 = sm.len();
            if j < 2 * r1 {
                return sm[j % r1];
            }
        }
        self.sigma_hat[j]
    }
}

/// Pair weights `(mu_j, mu_{j+R1})` from clipped ratios of studentized means.
/// An exactly zero denominator is treated as a both-binding tie: weight 1 on
/// the first member.
pub fn pair_weights(sm: &SampleMoments, r1: usize) -> Vec<(f64, f64)> {
    let mut w = Vec::with_capacity(r1);
    for j in 0..r1 {
        let a = sm.mbar[j] / sm.sigma_hat[j];
        let b = sm.mbar[j + r1] / sm.sigma_hat[j + r1];
        let den = a + b;
        let mu_second = if den == 0.0 {
            0.0
        } else {
            (a / den).clamp(0.0, 1.0)
        };
        w.push((1.0 - mu_second, mu_second));
    }
    w
}

/// Merged standard-deviation estimators for paired inequalities.
pub fn sigma_paired(sm: &SampleMoments, r1: usize) -> Vec<f64> {
    pair_weights(sm, r1)
        .iter()
        .enumerate()
        .map(|(j, (mu_first, _))| {
            mu_first * sm.sigma_hat[j] + (1.0 - mu_first) * sm.sigma_hat[j + r1]
        })
        .collect()
}

/// Binds a model to a dataset and caches whatever is parameter-free.
pub struct Evaluator<'a> {
    pub model: &'a MomentModel,
    pub data: &'a Dataset,
    sep: Option<SeparableCache>,
}

struct SeparableCache {
    hbar: Vec<f64>,
    sigma: Vec<f64>,
    /// `n x (J1+J2)` studentized residuals `(h_j(X_i) - hbar_j) / sigma_j`,
    /// the bootstrap building block.
    resid: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(model: &'a MomentModel, data: &'a Dataset) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(Error::invalid("need at least two observations"));
        }
        let sep = match &model.family {
            MomentFamily::Separable { data_part, .. } => {
                Some(Self::build_separable_cache(model, data, data_part)?)
            }
            MomentFamily::Generic(_) => None,
        };
        Ok(Evaluator { model, data, sep })
    }

    fn build_separable_cache(
        model: &MomentModel,
        data: &Dataset,
        data_part: &DataFn,
    ) -> Result<SeparableCache> {
        let jj = model.j1 + model.j2;
        let n = data.nrows();
        let mut vals = vec![0.0; n * jj];
        let mut buf = vec![0.0; jj];
        for (i, row) in data.rows().enumerate() {
            data_part(row, &mut buf);
            vals[i * jj..(i + 1) * jj].copy_from_slice(&buf);
        }
        let (hbar, sigma) = column_means_sds(&vals, n, jj)?;
        let mut resid = vals;
        for i in 0..n {
            for j in 0..jj {
                resid[i * jj + j] = (resid[i * jj + j] - hbar[j]) / sigma[j];
            }
        }
        Ok(SeparableCache { hbar, sigma, resid })
    }

    /// Studentized centered residuals for the bootstrap (separable models).
    pub(crate) fn separable_residuals(&self) -> Option<&[f64]> {
        self.sep.as_ref().map(|s| s.resid.as_slice())
    }

    /// Sample means and standard deviations of the first `J1+J2` rows.
    pub fn raw_moments(&self, theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let jj = self.model.j1 + self.model.j2;
        match (&self.model.family, &self.sep) {
            (MomentFamily::Separable { shift, .. }, Some(cache)) => {
                let mut v = vec![0.0; jj];
                shift(theta, &mut v);
                let mbar = (0..jj).map(|j| cache.hbar[j] - v[j]).collect();
                Ok((mbar, cache.sigma.clone()))
            }
            (MomentFamily::Generic(f), _) => {
                let n = self.data.nrows();
                let mut vals = vec![0.0; n * jj];
                let mut buf = vec![0.0; jj];
                for (i, row) in self.data.rows().enumerate() {
                    f(row, theta, &mut buf);
                    if buf.iter().any(|v| !v.is_finite()) {
                        return Err(Error::invalid("non-finite moment evaluation"));
                    }
                    vals[i * jj..(i + 1) * jj].copy_from_slice(&buf);
                }
                column_means_sds(&vals, n, jj)
            }
            _ => unreachable!("separable cache built at construction"),
        }
    }

    /// Full studentized sample moments with gradients and paired estimators.
    pub fn sample_moments(&self, theta: &[f64]) -> Result<SampleMoments> {
        let mut sm = self.sample_moments_light(theta)?;
        let sigma_first: Vec<f64> = sm.sigma_hat[..self.model.j1 + self.model.j2].to_vec();
        sm.d_hat = self.estimate_gradients(theta, &sigma_first)?;
        Ok(sm)
    }

    /// Everything except the gradient matrix (cheap path for feasibility
    /// checks in the outer optimizer).
    pub fn sample_moments_light(&self, theta: &[f64]) -> Result<SampleMoments> {
        let (mbar_raw, sigma_raw) = self.raw_moments(theta)?;
        let model = self.model;
        let (j1, j2) = (model.j1, model.j2);
        let j = model.j_total();
        let n = self.data.nrows();
        let sqrt_n = (n as f64).sqrt();

        let mut mbar = Vec::with_capacity(j);
        let mut sigma = Vec::with_capacity(j);
        mbar.extend_from_slice(&mbar_raw);
        sigma.extend_from_slice(&sigma_raw);
        for k in 0..j2 {
            mbar.push(-mbar_raw[j1 + k]);
            sigma.push(sigma_raw[j1 + k]);
        }
        let studentized: Vec<f64> = (0..j).map(|r| sqrt_n * mbar[r] / sigma[r]).collect();

        let mut sm = SampleMoments {
            n,
            j1,
            j2,
            mbar,
            sigma_hat: sigma,
            sigma_m: None,
            studentized,
            d_hat: Vec::new(),
        };
        if let Some(p) = model.pairing {
            sm.sigma_m = Some(sigma_paired(&sm, p.r1));
        }
        Ok(sm)
    }

    /// Outer-problem constraint values `g_j(theta)`.
    pub fn constraints(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.sample_moments_light(theta)?.constraint_values())
    }

    /// `J x d` gradient estimate: the supplied analytic rows when the model
    /// has them, otherwise central finite differences of the studentized
    /// sample analog with step `max(1e-6, 1e-7 |theta_k|)`, clamped to a
    /// one-sided difference at the parameter box boundary.
    pub fn estimate_gradients(&self, theta: &[f64], sigma: &[f64]) -> Result<Vec<Vec<f64>>> {
        let model = self.model;
        let jj = model.j1 + model.j2;
        let d = model.dim;
        let mut first = vec![vec![0.0; d]; jj];
        if let Some(g) = &model.gradient {
            g(theta, sigma, &mut first);
        } else {
            let ratio = |t: &[f64]| -> Result<Vec<f64>> {
                let (mb, sd) = self.raw_moments(t)?;
                Ok((0..jj).map(|j| mb[j] / sd[j]).collect())
            };
            for k in 0..d {
                let h = (1e-7 * theta[k].abs()).max(1e-6);
                let (lo, hi) = model.theta_box[k];
                let up_ok = theta[k] + h <= hi;
                let dn_ok = theta[k] - h >= lo;
                let mut tp = theta.to_vec();
                let mut tm = theta.to_vec();
                let scale;
                match (up_ok, dn_ok) {
                    (true, true) => {
                        tp[k] += h;
                        tm[k] -= h;
                        scale = 2.0 * h;
                    }
                    (true, false) => {
                        tp[k] += h;
                        scale = h;
                    }
                    (false, true) => {
                        tm[k] -= h;
                        scale = h;
                    }
                    (false, false) => {
                        return Err(Error::invalid(
                            "parameter box narrower than finite-difference step",
                        ));
                    }
                }
                let fp = ratio(&tp)?;
                let fm = ratio(&tm)?;
                for j in 0..jj {
                    first[j][k] = (fp[j] - fm[j]) / scale;
                }
            }
        }
        // Mirror the negated equality rows.
        let mut out = first;
        for kk in 0..model.j2 {
            let row: Vec<f64> = out[model.j1 + kk].iter().map(|v| -v).collect();
            out.push(row);
        }
        Ok(out)
    }

    /// Slackness measures and GMS values at `theta` (plain standard
    /// deviations throughout, per the construction of the bootstrap set).
    pub fn gms_values(&self, sm: &SampleMoments, gms: &GmsConfig) -> Vec<f64> {
        let xi = gms.xi_hat(&sm.studentized, self.model.j1);
        gms.apply(&xi, self.model.j1)
    }
}

fn column_means_sds(vals: &[f64], n: usize, jj: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut mean = vec![0.0; jj];
    for i in 0..n {
        for j in 0..jj {
            mean[j] += vals[i * jj + j];
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut var = vec![0.0; jj];
    for i in 0..n {
        for j in 0..jj {
            let c = vals[i * jj + j] - mean[j];
            var[j] += c * c;
        }
    }
    let mut sd = vec![0.0; jj];
    for j in 0..jj {
        // Analog estimator (divide by n, not n-1).
        let v = var[j] / n as f64;
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::DegenerateMoment { j });
        }
        sd[j] = v.sqrt();
    }
    Ok((mean, sd))
}
