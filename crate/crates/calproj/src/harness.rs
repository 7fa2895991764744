//! Monte Carlo experiment runner and configuration loading.
//!
//! Replications are independent work items over an immutable configuration;
//! each derives its own seed from the master seed and its index, so results
//! are identical across parallelism degrees and the aggregation is a
//! deterministic fold in index order.

use crate::critical::BootstrapMode;
use crate::eam::{confidence_interval, CiMode, CiOptions, EamOptions};
use crate::entry::EntryDgp;
use crate::gms::{GmsConfig, GmsKind};
use crate::moment::{Evaluator, MomentModel};
use crate::{critical, Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

/// Rule for the GMS thresholding sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaRule {
    SqrtLnN,
    N17,
    SqrtLnLnN,
}

impl KappaRule {
    pub fn value(self, n: usize) -> f64 {
        let nf = n as f64;
        match self {
            KappaRule::SqrtLnN => nf.ln().sqrt(),
            KappaRule::N17 => nf.powf(1.0 / 7.0),
            KappaRule::SqrtLnLnN => nf.ln().ln().sqrt(),
        }
    }
}

fn default_kappa() -> KappaRule {
    KappaRule::SqrtLnN
}

fn default_gms() -> GmsKind {
    GmsKind::Phi1Hard
}

fn default_alpha() -> Vec<f64> {
    vec![0.05]
}

fn default_methods() -> Vec<CiMethod> {
    vec![CiMethod::Calibrated]
}

/// Method selector in configs and result rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiMethod {
    Calibrated,
    AsProj,
    Onesided,
}

impl CiMethod {
    pub fn name(self) -> &'static str {
        match self {
            CiMethod::Calibrated => "calibrated",
            CiMethod::AsProj => "as-proj",
            CiMethod::Onesided => "onesided",
        }
    }

    pub fn mode(self) -> CiMode {
        match self {
            CiMethod::Calibrated => CiMode::Calibrated,
            CiMethod::AsProj => CiMode::AsProj,
            CiMethod::Onesided => CiMode::OneSided,
        }
    }
}

/// A Monte Carlo experiment over one built-in design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Built-in design id: `set1`, `set2-dgp1`, `set2-dgp2`, `set2-dgp3`.
    pub dgp: String,
    pub n: usize,
    pub mc_reps: usize,
    /// Bootstrap replicates per critical level.
    pub b: usize,
    #[serde(default = "default_alpha")]
    pub alpha: Vec<f64>,
    /// Localization box size; alternatively derive it from `eta`.
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "default_kappa")]
    pub kappa: KappaRule,
    #[serde(default = "default_gms")]
    pub gms: GmsKind,
    /// Component indices of theta to build intervals for.
    pub components: Vec<usize>,
    #[serde(default = "default_methods")]
    pub methods: Vec<CiMethod>,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads (0 = library default).
    #[serde(default)]
    pub parallelism: usize,
    #[serde(default)]
    pub conv_tol: Option<f64>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub bootstrap: Option<BootstrapMode>,
}

impl ExperimentConfig {
    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::invalid(format!(
                "cannot read config {}: {e}",
                path.as_ref().display()
            ))
        })?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::invalid(format!("malformed config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if EntryDgp::from_name(&self.dgp).is_none() {
            return Err(Error::invalid(format!("dgp: unknown design {:?}", self.dgp)));
        }
        if self.mc_reps == 0 {
            return Err(Error::invalid("mc_reps: must be at least 1"));
        }
        if self.n < 2 {
            return Err(Error::invalid("n: must be at least 2"));
        }
        if self.b == 0 {
            return Err(Error::invalid("b: must be at least 1"));
        }
        for a in &self.alpha {
            if !(*a > 0.0 && *a < 0.5) {
                return Err(Error::invalid(format!("alpha: {a} outside (0, 0.5)")));
            }
        }
        if self.rho.is_none() && self.eta.is_none() {
            return Err(Error::invalid("rho: either rho or eta must be given"));
        }
        if let Some(r) = self.rho {
            if !(r > 0.0) {
                return Err(Error::invalid("rho: must be positive"));
            }
        }
        if let Some(e) = self.eta {
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::invalid("eta: must lie in (0, 1)"));
            }
        }
        if self.components.is_empty() {
            return Err(Error::invalid("components: must name at least one"));
        }
        Ok(())
    }

    /// Effective localization-box size.
    pub fn rho_value(&self, model: &MomentModel) -> f64 {
        match (self.rho, self.eta) {
            (Some(r), _) => r,
            (None, Some(eta)) => critical::rho_from_eta(eta, model.j1 + model.j2, model.dim),
            (None, None) => unreachable!("validated"),
        }
    }
}

/// One aggregated line of the results table.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRow {
    pub component: usize,
    pub alpha: f64,
    pub method: &'static str,
    pub median_lower: f64,
    pub median_upper: f64,
    pub coverage_lower: f64,
    pub se_lower: f64,
    pub coverage_upper: f64,
    pub se_upper: f64,
    pub empty_frac: f64,
    pub avg_time_s: f64,
}

#[derive(Debug, Clone, Copy)]
struct RepOutcome {
    lower: f64,
    upper: f64,
    empty: bool,
    covered_lower: bool,
    covered_upper: bool,
    seconds: f64,
}

/// SplitMix-style per-replication seed derivation.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn median(sorted: &mut Vec<f64>) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let m = sorted.len();
    if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    }
}

/// Run the experiment; one result row per `(component, alpha, method)`.
pub fn run_monte_carlo(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let dgp = EntryDgp::from_name(&config.dgp)
        .ok_or_else(|| Error::invalid(format!("dgp: unknown design {:?}", config.dgp)))?;
    let spec = dgp.spec();
    let model = spec.model();
    let rho = config.rho_value(&model);
    let kappa = config.kappa.value(config.n);

    // Fail early when a requested component has no recorded bounds.
    for &comp in &config.components {
        spec.true_bounds(comp)?;
    }

    let body = || -> Result<Vec<ResultRow>> {
        let cells: Vec<(usize, f64, CiMethod)> = config
            .components
            .iter()
            .flat_map(|&c| {
                config.alpha.iter().flat_map(move |&a| {
                    config.methods.iter().map(move |&m| (c, a, m))
                })
            })
            .collect();

        // Each replication handles all cells on its own simulated sample.
        let per_rep: Vec<Result<Vec<RepOutcome>>> = (0..config.mc_reps as u64)
            .into_par_iter()
            .map(|rep| {
                let seed = derive_seed(config.seed, rep);
                let data = spec.simulate(config.n, seed);
                let mut outcomes = Vec::with_capacity(cells.len());
                for &(comp, alpha, method) in &cells {
                    let t0 = Instant::now();
                    let out = (|| -> Result<(f64, f64, bool)> {
                        let ev = Evaluator::new(&model, &data)?;
                        let mut p = vec![0.0; model.dim];
                        p[comp] = 1.0;
                        let mut opts =
                            CiOptions::new(alpha, rho, GmsConfig::new(config.gms, kappa));
                        opts.b = config.b;
                        opts.mode = method.mode();
                        opts.seed = seed;
                        if let Some(mode) = config.bootstrap {
                            opts.bootstrap = mode;
                        }
                        opts.eam = EamOptions {
                            seed,
                            conv_tol: config.conv_tol.unwrap_or(0.005),
                            max_iter: config.max_iter.unwrap_or(150),
                            ..EamOptions::default()
                        };
                        let ci = confidence_interval(&ev, &p, &opts)?;
                        Ok((ci.lower, ci.upper, ci.empty))
                    })();
                    let seconds = t0.elapsed().as_secs_f64();
                    let (tl, tu) = spec.true_bounds(comp)?;
                    let outcome = match out {
                        Ok((lower, upper, false)) => RepOutcome {
                            lower,
                            upper,
                            empty: false,
                            covered_lower: lower <= tl && tl <= upper,
                            covered_upper: lower <= tu && tu <= upper,
                            seconds,
                        },
                        // An empty interval (or a failed replication) covers
                        // nothing; it is recorded, not fatal.
                        _ => RepOutcome {
                            lower: f64::NAN,
                            upper: f64::NAN,
                            empty: true,
                            covered_lower: false,
                            covered_upper: false,
                            seconds,
                        },
                    };
                    outcomes.push(outcome);
                }
                Ok(outcomes)
            })
            .collect();

        let mut rows = Vec::with_capacity(cells.len());
        for (cell_idx, &(comp, alpha, method)) in cells.iter().enumerate() {
            let mut lowers = Vec::new();
            let mut uppers = Vec::new();
            let mut cov_l = 0usize;
            let mut cov_u = 0usize;
            let mut empties = 0usize;
            let mut total_s = 0.0;
            for rep in per_rep.iter() {
                let o = rep.as_ref().map_err(|e| Error::invalid(e.to_string()))?[cell_idx];
                if o.empty {
                    empties += 1;
                } else {
                    lowers.push(o.lower);
                    uppers.push(o.upper);
                }
                cov_l += usize::from(o.covered_lower);
                cov_u += usize::from(o.covered_upper);
                total_s += o.seconds;
            }
            let reps = config.mc_reps as f64;
            let p_l = cov_l as f64 / reps;
            let p_u = cov_u as f64 / reps;
            rows.push(ResultRow {
                component: comp,
                alpha,
                method: method.name(),
                median_lower: median(&mut lowers),
                median_upper: median(&mut uppers),
                coverage_lower: p_l,
                se_lower: (p_l * (1.0 - p_l) / reps).sqrt(),
                coverage_upper: p_u,
                se_upper: (p_u * (1.0 - p_u) / reps).sqrt(),
                empty_frac: empties as f64 / reps,
                avg_time_s: total_s / reps,
            });
        }
        Ok(rows)
    };

    if config.parallelism > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        pool.install(body)
    } else {
        body()
    }
}

/// Fixed-schema results CSV (one row per `(component, alpha, method)`).
pub fn write_results_csv(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record([
        "component",
        "alpha",
        "method",
        "median_lower",
        "median_upper",
        "coverage_lower",
        "se_lower",
        "coverage_upper",
        "se_upper",
        "empty_frac",
        "avg_time_s",
    ])?;
    for r in rows {
        w.write_record([
            r.component.to_string(),
            format!("{}", r.alpha),
            r.method.to_string(),
            format!("{:.6}", r.median_lower),
            format!("{:.6}", r.median_upper),
            format!("{:.6}", r.coverage_lower),
            format!("{:.6}", r.se_lower),
            format!("{:.6}", r.coverage_upper),
            format!("{:.6}", r.se_upper),
            format!("{:.6}", r.empty_frac),
            format!("{:.3}", r.avg_time_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// User model description loaded from a TOML file: declares counts, box
/// bounds, pairing, and a reference to a built-in moment family.
#[derive(Debug, Clone, Deserialize)]
pub struct ModelConfig {
    pub family: String,
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub j1: Option<usize>,
    #[serde(default)]
    pub j2: Option<usize>,
    /// Box bounds, one `[lo, hi]` pair per coordinate.
    #[serde(rename = "box", default)]
    pub bounds: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub pairing_r1: Option<usize>,
    /// Rows of the linear family `m_j = a_j' theta - X_j`.
    #[serde(default)]
    pub a: Option<Vec<Vec<f64>>>,
}

impl ModelConfig {
    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::invalid(format!("cannot read model {}: {e}", path.as_ref().display()))
        })?;
        toml::from_str(&text).map_err(|e| Error::invalid(format!("malformed model config: {e}")))
    }

    pub fn build(&self) -> Result<MomentModel> {
        let model = match self.family.as_str() {
            "scalar-mean" => {
                let b = self
                    .bounds
                    .as_ref()
                    .ok_or_else(|| Error::invalid("box: required for scalar-mean"))?;
                if b.len() != 1 {
                    return Err(Error::invalid("box: scalar-mean needs exactly one pair"));
                }
                MomentModel::scalar_mean(b[0][0], b[0][1])
            }
            "linear" => {
                let a = self
                    .a
                    .as_ref()
                    .ok_or_else(|| Error::invalid("a: required for the linear family"))?;
                let b = self
                    .bounds
                    .as_ref()
                    .ok_or_else(|| Error::invalid("box: required for the linear family"))?;
                let bounds: Vec<(f64, f64)> = b.iter().map(|p| (p[0], p[1])).collect();
                let mut model = MomentModel::linear_inequalities(a.clone(), bounds);
                if let Some(r1) = self.pairing_r1 {
                    model.pairing = Some(crate::moment::Pairing { r1 });
                }
                model
            }
            other => {
                let dgp = EntryDgp::from_name(other)
                    .ok_or_else(|| Error::invalid(format!("family: unknown {other:?}")))?;
                dgp.spec().model()
            }
        };
        if let Some(d) = self.d {
            if d != model.dim {
                return Err(Error::invalid(format!(
                    "d: declared {d}, family implies {}",
                    model.dim
                )));
            }
        }
        if let Some(j1) = self.j1 {
            if j1 != model.j1 {
                return Err(Error::invalid(format!(
                    "j1: declared {j1}, family implies {}",
                    model.j1
                )));
            }
        }
        if let Some(j2) = self.j2 {
            if j2 != model.j2 {
                return Err(Error::invalid(format!(
                    "j2: declared {j2}, family implies {}",
                    model.j2
                )));
            }
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            dgp: "set1".into(),
            n: 400,
            mc_reps: 4,
            b: 60,
            alpha: vec![0.15],
            rho: Some(5.04),
            eta: None,
            kappa: KappaRule::SqrtLnN,
            gms: GmsKind::Phi1Hard,
            components: vec![0],
            methods: vec![CiMethod::Calibrated],
            seed: 3,
            parallelism: 0,
            conv_tol: Some(0.01),
            max_iter: Some(25),
            bootstrap: None,
        }
    }

    #[test]
    fn kappa_rules() {
        assert!((KappaRule::SqrtLnN.value(4000) - 2.879).abs() < 1e-3);
        assert!((KappaRule::N17.value(4000) - 3.27).abs() < 0.01);
        assert!((KappaRule::SqrtLnLnN.value(4000) - 1.45).abs() < 0.01);
    }

    #[test]
    fn config_validation_names_offending_field() {
        let mut c = tiny_config();
        c.alpha = vec![0.7];
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("alpha"), "{err}");

        let mut c = tiny_config();
        c.rho = None;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("rho"), "{err}");

        let mut c = tiny_config();
        c.dgp = "set9".into();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("dgp"), "{err}");
    }

    #[test]
    fn aggregation_is_parallelism_independent() {
        let mut c = tiny_config();
        c.parallelism = 1;
        let rows1 = run_monte_carlo(&c).unwrap();
        c.parallelism = 4;
        let rows4 = run_monte_carlo(&c).unwrap();
        assert_eq!(rows1.len(), rows4.len());
        for (a, b) in rows1.iter().zip(&rows4) {
            assert_eq!(a.median_lower, b.median_lower);
            assert_eq!(a.median_upper, b.median_upper);
            assert_eq!(a.coverage_lower, b.coverage_lower);
            assert_eq!(a.coverage_upper, b.coverage_upper);
            assert_eq!(a.empty_frac, b.empty_frac);
        }
    }

    #[test]
    fn model_config_builds_and_cross_checks() {
        let cfg = ModelConfig {
            family: "set1".into(),
            d: Some(5),
            j1: Some(8),
            j2: Some(4),
            bounds: None,
            pairing_r1: None,
            a: None,
        };
        let m = cfg.build().unwrap();
        assert_eq!(m.j_total(), 16);

        let bad = ModelConfig {
            d: Some(7),
            ..cfg
        };
        let err = bad.build().unwrap_err().to_string();
        assert!(err.contains("d:"), "{err}");
    }

    #[test]
    fn derive_seed_spreads() {
        let a = derive_seed(1, 0);
        let b = derive_seed(1, 1);
        let c = derive_seed(2, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }
}
