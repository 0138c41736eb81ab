use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sascycle::io::{
    read_json, write_json, write_trace_csv, write_v_history_csv, NominalCertificateFile, RobustCertificateFile,
    SystemFile, TraceMetadata,
};
use sascycle::model::SamplingStrategy;
use sascycle::nominal::NominalDesign;
use sascycle::pipeline::{self, LoadedConfig};
use sascycle::robust::RobustCertificate;
use sascycle::{Error, Result};

#[derive(Parser)]
#[command(name = "sascycle", version, about = "Limit-cycle certification and simulation for uncertain switched affine systems with delayed switching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Discretise a continuous system description into vertex form.
    Discretize {
        #[arg(long)]
        config: PathBuf,
        /// Output system file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full certification pipeline.
    Certify {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Re-verify existing certificates without synthesis.
    Verify {
        #[arg(long)]
        nominal: PathBuf,
        #[arg(long)]
        robust: Option<PathBuf>,
        /// System and cycle; without it only the coupling blocks are checked.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Check only the coupling blocks, which need no system data.
        #[arg(long)]
        coupling_only: bool,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate the closed loop and write the trace.
    Simulate {
        #[command(flatten)]
        certs: CertArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        strategy: Option<SamplingStrategy>,
    },
    /// Write the attractor ellipsoids and their disjointness.
    Project {
        #[command(flatten)]
        certs: CertArgs,
        /// Boundary points per ring.
        #[arg(long, default_value_t = 48)]
        resolution: usize,
    },
}

#[derive(Args)]
struct CertArgs {
    #[arg(long)]
    config: PathBuf,
    /// Certificates to use; synthesised from the configuration when absent.
    #[arg(long, requires = "robust")]
    nominal: Option<PathBuf>,
    #[arg(long, requires = "nominal")]
    robust: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
}

fn out_dir(loaded: &LoadedConfig, out: Option<PathBuf>) -> Result<PathBuf> {
    let dir = out.or_else(|| loaded.config.out_dir.as_ref().map(|p| loaded.resolve(p))).unwrap_or_else(|| "out".into());
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load(config: &Path, mu: Option<f64>, gamma: Option<f64>) -> Result<LoadedConfig> {
    let mut loaded = LoadedConfig::from_path(config)?;
    if mu.is_some() {
        loaded.config.mu = mu;
    }
    if gamma.is_some() {
        loaded.config.gamma = gamma;
        loaded.config.gamma_grid = None;
    }
    loaded.validate()?;
    Ok(loaded)
}

fn certified(loaded: &LoadedConfig, args: &CertArgs) -> Result<(NominalDesign, RobustCertificate)> {
    match (&args.nominal, &args.robust) {
        (Some(n), Some(r)) => {
            let nominal: NominalCertificateFile = read_json(n)?;
            let robust: RobustCertificateFile = read_json(r)?;
            Ok((pipeline::design_from_files(loaded, &nominal)?, robust.parse()?))
        }
        _ => {
            let c = pipeline::certify(loaded);
            if let Some(stage) = c.report.stages.iter().find(|s| !s.ok) {
                eprintln!("certification failed at stage '{}'", stage.name);
            }
            c.into_result()
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Discretize { config, out } => {
            let loaded = load(&config, None, None)?;
            let file = loaded.system_file()?;
            if file.continuous.is_none() {
                return Err(Error::Config("system has no continuous description to discretise".into()));
            }
            let (system, nominal) = file.build(loaded.config.t)?;
            let cycle = match loaded.config.cycle.clone().or(file.cycle.clone()) {
                Some(c) => Some(sascycle::model::Cycle::from_one_based(&c, system.num_modes())?),
                None => None,
            };
            let vertex_form = SystemFile::from_system(&system, &nominal, cycle.as_ref());
            let path = out.unwrap_or_else(|| "system.json".into());
            write_json(&path, &vertex_form)?;
            println!("wrote {} ({} modes, {} vertices)", path.display(), system.num_modes(), system.max_vertices());
        }
        Command::Certify { config, out, mu, gamma } => {
            let loaded = load(&config, mu, gamma)?;
            let dir = out_dir(&loaded, out)?;
            let mut c = pipeline::certify(&loaded);
            let hash = Some(loaded.hash.clone());
            if let Some(d) = &c.design {
                let path = dir.join("nominal_certificate.json");
                write_json(&path, &NominalCertificateFile::new(&d.limit_cycle, &d.certificate, hash.clone()))?;
                c.report.artifacts.push(path.display().to_string());
            }
            if let Some(r) = &c.robust {
                let path = dir.join("robust_certificate.json");
                write_json(&path, &RobustCertificateFile::new(r, hash.clone()))?;
                c.report.artifacts.push(path.display().to_string());
            }
            if let Some(lmi) = &c.lmi {
                let path = dir.join("lmi_problem.json");
                write_json(&path, &lmi.to_json())?;
                c.report.artifacts.push(path.display().to_string());
            }
            let report_path = dir.join("report.json");
            c.report.artifacts.push(report_path.display().to_string());
            write_json(&report_path, &c.report)?;
            for s in &c.report.stages {
                println!("{:<20} {:<6} {:.3}s", s.name, if s.ok { "ok" } else { "FAILED" }, s.seconds);
                if let Some(e) = &s.error {
                    println!("  {e}");
                }
            }
            if let Some(e) = c.error {
                return Err(e);
            }
        }
        Command::Verify { nominal, robust, config, coupling_only, out } => {
            let loaded = config.as_deref().map(LoadedConfig::from_path).transpose()?;
            let nominal: NominalCertificateFile = read_json(&nominal)?;
            let robust: Option<RobustCertificateFile> = robust.as_deref().map(read_json).transpose()?;
            let report = pipeline::verify_certificates(loaded.as_ref(), &nominal, robust.as_ref(), coupling_only)?;
            match out {
                Some(path) => write_json(&path, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
            if !report.valid {
                return Err(Error::CertificateInvalid("verification failed".into()));
            }
        }
        Command::Simulate { certs, seed, horizon, strategy } => {
            let mut loaded = load(&certs.config, certs.mu, certs.gamma)?;
            let sim = &mut loaded.config.simulation;
            sim.seed = seed.unwrap_or(sim.seed);
            sim.horizon = horizon.unwrap_or(sim.horizon);
            sim.strategy = strategy.unwrap_or(sim.strategy);
            loaded.validate()?;
            let dir = out_dir(&loaded, certs.out.clone())?;
            let (design, robust) = certified(&loaded, &certs)?;
            let max_vertices = design.system.max_vertices();
            let ellipsoids = pipeline::project(&design, &robust, 48, Some(loaded.hash.clone()));
            let trace = pipeline::simulate(&loaded, design, robust)?;

            let mut w = BufWriter::new(File::create(dir.join("trace.csv"))?);
            write_trace_csv(&mut w, &trace, max_vertices, &loaded.hash)?;
            let mut w = BufWriter::new(File::create(dir.join("v_history.csv"))?);
            write_v_history_csv(&mut w, &trace, &loaded.hash)?;
            let meta = TraceMetadata::new(&trace, &loaded.hash);
            write_json(&dir.join("trace.meta.json"), &meta)?;
            match ellipsoids {
                Ok(e) => write_json(&dir.join("ellipsoids.json"), &e)?,
                Err(e) => log::warn!("no ellipsoid output: {e}"),
            }
            println!(
                "{} steps, sigma0 = {}, first attractor entry {:?}, invariant after entry: {}",
                meta.horizon, meta.sigma0, meta.first_entry, meta.invariant_after_entry
            );
        }
        Command::Project { certs, resolution } => {
            let loaded = load(&certs.config, certs.mu, certs.gamma)?;
            let dir = out_dir(&loaded, certs.out.clone())?;
            let (design, robust) = certified(&loaded, &certs)?;
            let file = pipeline::project(&design, &robust, resolution, Some(loaded.hash.clone()))?;
            write_json(&dir.join("ellipsoids.json"), &file)?;
            for p in &file.pairs {
                println!("E{} vs E{}: separation {:.6}, disjoint {}", p.i, p.j, p.separation, p.disjoint);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
