//! Configuration-driven pipeline: system → monodromy → limit cycle → nominal
//! certificate → robust certificate → independent re-verification, plus
//! simulation and attractor projection of a certified design.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::control_sim::{attractor_projection, ClosedLoop, Trace};
use crate::error::{Error, Result};
use crate::io::{read_json, vector_from_slice, NominalCertificateFile, RobustCertificateFile, SystemFile};
use crate::model::{Cycle, NominalSelection, SamplingStrategy, SwitchedAffineSystem};
use crate::nominal::{
    compute_limit_cycle, max_mu, monodromy, synthesize_nominal_certificate, verify_nominal_certificate,
    NominalCertificate, NominalDesign, NominalMarginReport,
};
use crate::numerics::Tolerances;
use crate::robust::{
    assemble_robust_lmi, coupling_margins, gamma_sweep, synthesize_robust_certificate, verify_robust_certificate,
    LmiProblem, RobustCertificate, RobustMarginReport, SolverOptions,
};

/// Run configuration (JSON).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Inline system description.
    #[serde(default)]
    pub system: Option<SystemFile>,
    /// Path to a system description, relative to the configuration file.
    #[serde(default)]
    pub system_file: Option<PathBuf>,
    /// Sampling period for a continuous description.
    #[serde(default, rename = "T")]
    pub t: Option<f64>,
    /// One-based cycle; overrides the cycle of the system description.
    #[serde(default)]
    pub cycle: Option<Vec<usize>>,
    /// Nominal decay rate; `0.9·μ*` when absent.
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Solve at every grid value and keep the largest feasible `γ`.
    #[serde(default)]
    pub gamma_grid: Option<Vec<f64>>,
    /// Rescale synthesised `Pᵢ` so that their largest eigenvalue is this.
    #[serde(default)]
    pub p_scale: Option<f64>,
    /// Use this nominal certificate instead of synthesising one.
    #[serde(default)]
    pub nominal_certificate_file: Option<PathBuf>,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub x0: Option<Vec<f64>>,
    /// One-based initial mode; drawn at random when absent.
    pub sigma0: Option<usize>,
    pub horizon: usize,
    pub seed: u64,
    pub strategy: SamplingStrategy,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { x0: None, sigma0: None, horizon: 1000, seed: 0, strategy: SamplingStrategy::VertexRandom }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn in_unit_interval(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(config_err(format!("{name} must lie in (0, 1), got {v}")))
    }
}

/// A parsed configuration together with its SHA-256 hash and the directory
/// relative paths are resolved against.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub hash: String,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_text(&text, base)
    }

    pub fn from_text(text: &str, base_dir: PathBuf) -> Result<Self> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| config_err(format!("cannot parse configuration: {e}")))?;
        let hash = Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        let loaded = Self { config, hash, base_dir };
        loaded.validate()?;
        Ok(loaded)
    }

    /// Range checks; call again after applying command-line overrides.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        if c.system.is_some() == c.system_file.is_some() {
            return Err(config_err("give exactly one of 'system' and 'system_file'"));
        }
        if let Some(mu) = c.mu {
            in_unit_interval("mu", mu)?;
        }
        if let Some(g) = c.gamma {
            in_unit_interval("gamma", g)?;
        }
        for &g in c.gamma_grid.iter().flatten() {
            in_unit_interval("gamma grid value", g)?;
        }
        if let Some(t) = c.t {
            if !(t > 0.0 && t.is_finite()) {
                return Err(config_err(format!("sampling period must be positive, got {t}")));
            }
        }
        if let Some(s) = c.p_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(config_err(format!("p_scale must be positive, got {s}")));
            }
        }
        if c.simulation.horizon < 1 {
            return Err(config_err("simulation horizon must be at least 1"));
        }
        for p in [&c.system_file, &c.nominal_certificate_file].into_iter().flatten() {
            let path = self.resolve(p);
            if !path.exists() {
                return Err(config_err(format!("referenced file {} does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn system_file(&self) -> Result<SystemFile> {
        match (&self.config.system, &self.config.system_file) {
            (Some(s), _) => Ok(s.clone()),
            (None, Some(p)) => read_json(&self.resolve(p)),
            (None, None) => Err(config_err("no system given")),
        }
    }

    /// Vertex-form system, nominal selection and cycle.
    pub fn build_system(&self) -> Result<(SwitchedAffineSystem, NominalSelection, Cycle)> {
        let file = self.system_file()?;
        let (system, nominal) = file.build(self.config.t)?;
        let one_based = self
            .config
            .cycle
            .clone()
            .or(file.cycle)
            .ok_or_else(|| config_err("no cycle given in the configuration or the system file"))?;
        let cycle = Cycle::from_one_based(&one_based, system.num_modes())?;
        Ok((system, nominal, cycle))
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions { feas_tol: self.config.tolerances.feasibility, ..SolverOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub ok: bool,
    pub seconds: f64,
    pub detail: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Ordered stage outcomes; the first failure ends the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config_hash: String,
    pub success: bool,
    pub stages: Vec<StageReport>,
    pub artifacts: Vec<String>,
}

impl PipelineReport {
    pub fn new(config_hash: &str) -> Self {
        Self { config_hash: config_hash.to_string(), success: false, stages: Vec::new(), artifacts: Vec::new() }
    }

    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> Result<(T, Value)>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        let seconds = start.elapsed().as_secs_f64();
        match out {
            Ok((value, detail)) => {
                self.stages.push(StageReport { name: name.into(), ok: true, seconds, detail, error: None });
                Ok(value)
            }
            Err(e) => {
                let detail = match &e {
                    Error::Infeasible { best_margin, iterations } => {
                        json!({"best_margin": best_margin, "iterations": iterations})
                    }
                    Error::NotSchurStable { spectral_radius } => json!({"spectral_radius": spectral_radius}),
                    _ => Value::Null,
                };
                self.stages.push(StageReport { name: name.into(), ok: false, seconds, detail, error: Some(e.to_string()) });
                Err(e)
            }
        }
    }
}

fn nominal_json(r: &NominalMarginReport) -> Value {
    json!({"p_min_eigs": r.p_min_eigs, "decay_min_eigs": r.decay_min_eigs, "valid": r.valid})
}

fn robust_json(r: &RobustMarginReport) -> Value {
    json!({
        "coupling_min_eigs": r.coupling_min_eigs,
        "vertex_min_eigs": r.psi_min_eigs,
        "r_min_eig": r.r_min_eig,
        "q_min_eig": r.q_min_eig,
        "margin": r.margin(),
        "valid": r.valid,
    })
}

/// Outcome of [`certify`]. On failure the parts computed before the failing
/// stage are kept.
#[derive(Debug)]
pub struct Certification {
    pub report: PipelineReport,
    pub design: Option<NominalDesign>,
    pub robust: Option<RobustCertificate>,
    pub lmi: Option<LmiProblem>,
    pub error: Option<Error>,
}

impl Certification {
    pub fn into_result(self) -> Result<(NominalDesign, RobustCertificate)> {
        match (self.error, self.design, self.robust) {
            (None, Some(d), Some(r)) => Ok((d, r)),
            (Some(e), _, _) => Err(e),
            _ => Err(Error::CertificateInvalid("pipeline produced no certificate".into())),
        }
    }
}

/// Runs every certification stage.
pub fn certify(loaded: &LoadedConfig) -> Certification {
    let mut out = Certification {
        report: PipelineReport::new(&loaded.hash),
        design: None,
        robust: None,
        lmi: None,
        error: None,
    };
    if let Err(e) = certify_stages(loaded, &mut out) {
        out.error = Some(e);
    }
    out.report.success = out.error.is_none();
    out
}

fn certify_stages(loaded: &LoadedConfig, out: &mut Certification) -> Result<()> {
    let cfg = &loaded.config;
    let report = &mut out.report;

    let (system, nominal, cycle) = report.run("system", || {
        let (s, nom, c) = loaded.build_system()?;
        let detail = json!({
            "n": s.dim(),
            "modes": s.num_modes(),
            "vertices": s.modes().iter().map(|m| m.num_vertices()).collect::<Vec<_>>(),
            "cycle": c.one_based(),
            "T": cfg.t,
        });
        Ok(((s, nom, c), detail))
    })?;

    report.run("monodromy", || {
        let m = monodromy(&nominal, &cycle)?;
        if !m.schur_stable {
            return Err(Error::NotSchurStable { spectral_radius: m.spectral_radius });
        }
        Ok(((), json!({"spectral_radius": m.spectral_radius})))
    })?;

    let limit_cycle = report.run("limit_cycle", || {
        let lc = compute_limit_cycle(&nominal, &cycle)?;
        let residual = lc.max_residual(&nominal, &cycle);
        let rho: Vec<Vec<f64>> = lc.rho.iter().map(|r| r.iter().copied().collect()).collect();
        Ok((lc, json!({"rho": rho, "residual": residual})))
    })?;

    let certificate = report.run("nominal_certificate", || {
        let mu_star = max_mu(&nominal, &cycle, 1e-9)?;
        let (cert, source) = match &cfg.nominal_certificate_file {
            Some(path) => {
                let file: NominalCertificateFile = read_json(&loaded.resolve(path))?;
                let (_, mut cert) = file.parse()?;
                if let Some(mu) = cfg.mu {
                    cert.mu = mu;
                }
                (cert, "file")
            }
            None => {
                let mu = cfg.mu.unwrap_or(0.9 * mu_star);
                let cert = synthesize_nominal_certificate(&nominal, &cycle, mu)?;
                let cert = match cfg.p_scale {
                    Some(s) => cert.normalized(s),
                    None => cert,
                };
                (cert, "synthesized")
            }
        };
        let margins = verify_nominal_certificate(&cert, &nominal, &cycle)?;
        if !margins.valid {
            return Err(Error::CertificateInvalid(format!(
                "nominal certificate fails with margin {:.3e}",
                margins.min_margin()
            )));
        }
        let detail = json!({"source": source, "mu": cert.mu, "max_mu": mu_star, "margins": nominal_json(&margins)});
        Ok((cert, detail))
    })?;

    let design = NominalDesign::new(system, nominal, cycle, limit_cycle, certificate)?;
    out.design = Some(design.clone());
    let opts = loaded.solver_options();

    let robust = report.run("robust_certificate", || match &cfg.gamma_grid {
        Some(grid) => {
            let sweep = gamma_sweep(&design, grid, &opts)?;
            let table: Vec<Value> = sweep
                .rows
                .iter()
                .map(|r| json!({"gamma": r.gamma, "feasible": r.feasible, "margin": r.margin}))
                .collect();
            let best = sweep.rows.iter().rev().find_map(|r| r.certificate.clone()).ok_or_else(|| {
                Error::Infeasible {
                    best_margin: sweep.rows.iter().map(|r| r.margin).fold(f64::NEG_INFINITY, f64::max),
                    iterations: 0,
                }
            })?;
            let detail = json!({"sweep": table, "monotone": sweep.monotone, "gamma": best.gamma, "margin": best.margin});
            Ok((best, detail))
        }
        None => {
            let gamma = cfg.gamma.ok_or_else(|| config_err("no gamma or gamma_grid given"))?;
            let (cert, margins) = synthesize_robust_certificate(&design, gamma, &opts)?;
            Ok((cert, json!({"gamma": gamma, "margins": robust_json(&margins)})))
        }
    })?;
    out.lmi = Some(assemble_robust_lmi(&design, robust.gamma)?);
    out.robust = Some(robust.clone());

    report.run("verification", || {
        let nominal = verify_nominal_certificate(&design.certificate, &design.nominal, &design.cycle)?;
        let robust_margins = verify_robust_certificate(&design, &robust)?;
        if !nominal.valid || !robust_margins.valid {
            return Err(Error::CertificateInvalid("independent re-verification failed".into()));
        }
        Ok(((), json!({"nominal": nominal_json(&nominal), "robust": robust_json(&robust_margins)})))
    })?;
    Ok(())
}

/// Design assembled from a configuration and an existing nominal certificate
/// file; the limit cycle is recomputed from the system.
pub fn design_from_files(loaded: &LoadedConfig, nominal_file: &NominalCertificateFile) -> Result<NominalDesign> {
    let (system, nominal, cycle) = loaded.build_system()?;
    let limit_cycle = compute_limit_cycle(&nominal, &cycle)?;
    let (_, cert): (_, NominalCertificate) = nominal_file.parse()?;
    NominalDesign::new(system, nominal, cycle, limit_cycle, cert)
}

/// Result of a pure re-verification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    /// `full` or `coupling-only`.
    pub mode: String,
    pub nominal: Option<Value>,
    pub robust: Option<Value>,
    pub coupling_min_eigs: Vec<f64>,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Re-verifies certificates without any synthesis. Without a configuration
/// (or with `coupling_only`) only the system-free coupling blocks and the
/// signs of `R` and `Q` are checked.
pub fn verify_certificates(
    loaded: Option<&LoadedConfig>,
    nominal_file: &NominalCertificateFile,
    robust_file: Option<&RobustCertificateFile>,
    coupling_only: bool,
) -> Result<VerifyReport> {
    let (_, cert) = nominal_file.parse()?;
    let robust = robust_file.map(RobustCertificateFile::parse).transpose()?;
    let config_hash = loaded.map(|l| l.hash.clone());

    match loaded.filter(|_| !coupling_only) {
        None => {
            let robust = robust.ok_or_else(|| config_err("coupling-only verification needs a robust certificate"))?;
            let coupling = coupling_margins(&cert.p, &robust.r, &robust.q)?;
            let (r_min, q_min) = (robust.r.min_eig(), robust.q.min_eig());
            let valid = coupling.iter().all(|&m| m > 0.0) && r_min >= 0.0 && q_min > 0.0;
            Ok(VerifyReport {
                mode: "coupling-only".into(),
                nominal: None,
                robust: Some(json!({"r_min_eig": r_min, "q_min_eig": q_min})),
                coupling_min_eigs: coupling,
                valid,
                config_hash,
            })
        }
        Some(l) => {
            let design = design_from_files(l, nominal_file)?;
            let nominal = verify_nominal_certificate(&design.certificate, &design.nominal, &design.cycle)?;
            let mut valid = nominal.valid;
            let (robust_value, coupling) = match &robust {
                Some(r) => {
                    let m = verify_robust_certificate(&design, r)?;
                    valid &= m.valid;
                    (Some(robust_json(&m)), m.coupling_min_eigs.clone())
                }
                None => (None, Vec::new()),
            };
            Ok(VerifyReport {
                mode: "full".into(),
                nominal: Some(nominal_json(&nominal)),
                robust: robust_value,
                coupling_min_eigs: coupling,
                valid,
                config_hash,
            })
        }
    }
}

/// Closed-loop simulation with the configuration's simulation settings.
pub fn simulate(loaded: &LoadedConfig, design: NominalDesign, robust: RobustCertificate) -> Result<Trace> {
    let sim = &loaded.config.simulation;
    let x0 = sim.x0.as_ref().ok_or_else(|| config_err("simulation.x0 is required"))?;
    let x0 = vector_from_slice(x0)?;
    if x0.len() != design.dim() {
        return Err(config_err(format!("x0 must have length {}", design.dim())));
    }
    let sigma0 = match sim.sigma0 {
        Some(0) => return Err(config_err("sigma0 is one-based")),
        Some(s) if s > design.system.num_modes() => return Err(config_err(format!("sigma0 = {s} exceeds the mode count"))),
        Some(s) => Some(s - 1),
        None => None,
    };
    let cl = ClosedLoop::new(design, robust)?;
    cl.simulate(&x0, sigma0, sim.horizon, sim.seed, sim.strategy)
}

/// Attractor ellipsoids of a certified design.
pub fn project(
    design: &NominalDesign,
    robust: &RobustCertificate,
    resolution: usize,
    config_hash: Option<String>,
) -> Result<crate::io::EllipsoidFile> {
    let proj = attractor_projection(design, robust)?;
    Ok(crate::io::EllipsoidFile::new(&proj, resolution, config_hash))
}
