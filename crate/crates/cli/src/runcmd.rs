//! Implementations of the `run`, `sweep`, and `verify` subcommands.

use crate::config::{
    output_root, prepare_run, suite_config, sweep_s_values, ConfigError, PreparedRun, RawConfig,
};
use crate::csvio::{PerK, RunTable};
use riccilab_core::error::Error as CoreError;
use riccilab_core::flow::{integrate, FlowKind, FlowState, SProvider, Truncation};
use riccilab_core::functionals::{
    average_scalar_curvature, einstein_residual, monitor, soliton_residual, SeriesName,
};
use riccilab_core::geometry::{volume, ScalarField};
use riccilab_core::harness::run_suite;
use riccilab_core::rescale::build_map;
use riccilab_core::spectral::{f_from_eigenfunction, lowest_eigenpair, EigenSolverConfig};
use std::fmt;
use std::path::{Path, PathBuf};

/// CLI failure modes, ordered by exit code: check failure (1),
/// configuration (2), runtime (3).
#[derive(Debug)]
pub enum CliError {
    CheckFailure(String),
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::CheckFailure(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::CheckFailure(m) => write!(f, "check failure: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

fn runtime(e: CoreError) -> CliError {
    CliError::Runtime(e.to_string())
}

fn io_runtime(context: &str, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{context}: {e}"))
}

#[derive(serde::Serialize)]
struct Manifest<'a> {
    config: &'a crate::config::RunConfig,
    states: usize,
    t_final: f64,
    truncation: &'a Option<Truncation>,
    csv: String,
}

pub struct RunOutcome {
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
    pub truncation: Option<Truncation>,
}

/// Integrate, monitor, and serialize one configured run.
pub fn execute_run(prep: &PreparedRun, out_dir: &Path) -> Result<RunOutcome, CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| io_runtime(&format!("creating {}", out_dir.display()), e))?;
    let cfg = &prep.config;
    let initial = FlowState::new(prep.metric.clone());
    let traj = integrate(
        &initial,
        cfg.t_end,
        cfg.dt_resolved,
        prep.flow_kind,
        &prep.provider,
    )
    .map_err(runtime)?;

    let len = traj.states.len();
    let times = traj.times();
    let n_dim = prep.metric.dim();

    // Reparameterized time and τ from the rescale map over the recorded
    // s-history; NaN wherever the map is undefined or exhausted.
    let mut t_bar = vec![f64::NAN; len];
    let mut tau = vec![f64::NAN; len];
    if len >= 2 {
        if let Ok(map) = build_map(n_dim, &traj.s_samples, &times) {
            for (i, &v) in map.t_bar.iter().enumerate() {
                t_bar[i] = v;
            }
            if let Some(tv) = &map.tau {
                for (i, &v) in tv.iter().enumerate() {
                    tau[i] = v;
                }
            }
        }
    }

    let s0 = traj.s_samples[0];
    let s_const = traj
        .s_samples
        .iter()
        .all(|&v| (v - s0).abs() <= 1e-12 * (1.0 + s0.abs()))
        .then_some(s0);

    let eig = EigenSolverConfig {
        tol: cfg.eig_tol,
        max_iter: 2000,
    };
    let series = monitor(&traj, &cfg.k_values, cfg.tau0_resolved, s_const, &eig).map_err(runtime)?;

    let volumes: Vec<f64> = traj.states.iter().map(|st| volume(&st.metric)).collect();
    // Residual columns: distance to Einstein at the L²-optimal constant
    // (the average scalar curvature) and to a gradient soliton with the
    // eigen-weight of the first monitored k.
    let mut einstein = Vec::with_capacity(len);
    let mut soliton = Vec::with_capacity(len);
    let k0 = cfg.k_values.first().copied().unwrap_or(1.0);
    let mut warm: Option<ScalarField> = None;
    for st in &traj.states {
        let avg_r = average_scalar_curvature(&st.metric);
        einstein.push(einstein_residual(&st.metric, avg_r));
        let res = lowest_eigenpair(&st.metric, k0, &eig, warm.as_ref()).map_err(runtime)?;
        let f = f_from_eigenfunction(&res).map_err(runtime)?;
        soliton.push(soliton_residual(&st.metric, &f, avg_r).map_err(runtime)?);
        warm = Some(res.eigenfunction);
    }

    let pick = |name: SeriesName, k: f64| -> Vec<f64> {
        series
            .iter()
            .find(|ms| ms.name == name && ms.k == k)
            .map(|ms| ms.values.clone())
            .unwrap_or_else(|| vec![f64::NAN; len])
    };
    let per_k: Vec<PerK> = cfg
        .k_values
        .iter()
        .map(|&k| PerK {
            k,
            lambda: pick(SeriesName::M1, k),
            lambda_bar: pick(SeriesName::M4, k),
            f_k: pick(SeriesName::Fk, k),
            w_k: pick(SeriesName::Wk, k),
            m2: pick(SeriesName::M2, k),
            m3: pick(SeriesName::M3, k),
        })
        .collect();

    let table = RunTable {
        t: times,
        t_bar,
        tau,
        s: traj.s_samples.clone(),
        volume: volumes,
        per_k,
        einstein,
        soliton,
    };

    let csv_path = out_dir.join(format!("{}.csv", cfg.prefix));
    table
        .write(&csv_path)
        .map_err(|e| io_runtime(&format!("writing {}", csv_path.display()), e))?;

    let manifest = Manifest {
        config: cfg,
        states: len,
        t_final: traj.final_state().t,
        truncation: &traj.truncation,
        csv: format!("{}.csv", cfg.prefix),
    };
    let manifest_path = out_dir.join(format!("{}.manifest.json", cfg.prefix));
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Runtime(format!("serializing manifest: {e}")))?;
    std::fs::write(&manifest_path, json)
        .map_err(|e| io_runtime(&format!("writing {}", manifest_path.display()), e))?;

    Ok(RunOutcome {
        csv_path,
        manifest_path,
        truncation: traj.truncation,
    })
}

pub fn cmd_run(config_path: &Path) -> Result<(), CliError> {
    let raw = RawConfig::load(config_path)?;
    let config_dir = config_path.parent().unwrap_or(Path::new("."));
    let prep = prepare_run(&raw, config_dir)?;
    let out_dir = output_root().join(&prep.config.output_dir);
    let outcome = execute_run(&prep, &out_dir)?;
    eprintln!(
        "run complete: {} (manifest {})",
        outcome.csv_path.display(),
        outcome.manifest_path.display()
    );
    if let Some(tr) = &outcome.truncation {
        return Err(CliError::Runtime(format!(
            "trajectory truncated at t = {:.6}: {} (partial CSV written)",
            tr.t, tr.reason
        )));
    }
    Ok(())
}

/// Cartesian sweep over the configured s values; each run writes into its
/// own subdirectory, concurrently.
pub fn cmd_sweep(config_path: &Path) -> Result<(), CliError> {
    let raw = RawConfig::load(config_path)?;
    let config_dir = config_path.parent().unwrap_or(Path::new("."));
    let base = prepare_run(&raw, config_dir)?;
    let s_values = sweep_s_values(&raw)?;
    if s_values.is_empty() {
        return Err(CliError::Config("sweep: empty s_values list".into()));
    }
    let out_base = output_root().join(&base.config.output_dir);

    let results: Vec<(f64, Result<RunOutcome, CliError>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = s_values
            .iter()
            .map(|&s| {
                let base = &base;
                let out_base = &out_base;
                scope.spawn(move || {
                    let mut config = base.config.clone();
                    let n_dim = base.metric.dim() as f64;
                    config.flow_kind = if s == 0.0 { "ricci" } else { "rescaled" }.into();
                    config.provider = "constant".into();
                    config.s0 = s;
                    config.tau0_resolved = (s < 0.0).then(|| -2.0 * n_dim / s);
                    let prep = PreparedRun {
                        config,
                        metric: base.metric.clone(),
                        flow_kind: if s == 0.0 {
                            FlowKind::Ricci
                        } else {
                            FlowKind::Rescaled
                        },
                        provider: SProvider::Constant(s),
                    };
                    let dir = out_base.join(format!("s={s}"));
                    (s, execute_run(&prep, &dir))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep thread")).collect()
    });

    let mut failure: Option<CliError> = None;
    for (s, result) in results {
        match result {
            Ok(outcome) => {
                eprintln!("sweep s={s}: wrote {}", outcome.csv_path.display());
                if let Some(tr) = outcome.truncation {
                    eprintln!("sweep s={s}: truncated at t = {:.6}: {}", tr.t, tr.reason);
                    failure.get_or_insert(CliError::Runtime(format!(
                        "sweep member s={s} truncated"
                    )));
                }
            }
            Err(e) => {
                eprintln!("sweep s={s}: {e}");
                failure.get_or_insert(e);
            }
        }
    }
    match failure {
        None => Ok(()),
        Some(e) => Err(e),
    }
}

pub fn cmd_verify(config_path: Option<&Path>) -> Result<(), CliError> {
    let raw = match config_path {
        Some(p) => Some(RawConfig::load(p)?),
        None => None,
    };
    let suite = match &raw {
        Some(r) => suite_config(r)?,
        None => Default::default(),
    };
    let out_dir_name = raw
        .as_ref()
        .and_then(|r| r.output_dir())
        .unwrap_or_else(|| "out".to_string());

    let report = run_suite(&suite).map_err(runtime)?;
    for c in &report.checks {
        let extra = match &c.skipped {
            Some(reason) => format!(" [{reason}]"),
            None => String::new(),
        };
        println!(
            "{:4} {:<55} observed {:>13.6e}  tol {:>9.3e}{extra}",
            c.status(),
            c.name,
            c.observed,
            c.tolerance
        );
    }
    let out_dir = output_root().join(&out_dir_name);
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| io_runtime(&format!("creating {}", out_dir.display()), e))?;
    let report_path = out_dir.join("report.json");
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Runtime(format!("serializing report: {e}")))?;
    std::fs::write(&report_path, json)
        .map_err(|e| io_runtime(&format!("writing {}", report_path.display()), e))?;
    let counted = report.checks.iter().filter(|c| c.counts()).count();
    let passed = report
        .checks
        .iter()
        .filter(|c| c.counts() && c.passed)
        .count();
    eprintln!(
        "verify: {passed}/{counted} checks passed ({} skipped); report at {}",
        report.checks.len() - counted,
        report_path.display()
    );
    if report.overall_pass {
        Ok(())
    } else {
        Err(CliError::CheckFailure(format!(
            "{} of {counted} checks failed",
            counted - passed
        )))
    }
}

pub fn cmd_plot(input: &Path, output: &Path) -> Result<(), CliError> {
    let table = crate::csvio::read_table(input).map_err(CliError::Config)?;
    let svg = crate::plot::render_svg(&table).map_err(CliError::Config)?;
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| io_runtime(&format!("creating {}", parent.display()), e))?;
        }
    }
    std::fs::write(output, svg)
        .map_err(|e| io_runtime(&format!("writing {}", output.display()), e))?;
    eprintln!("plot written to {}", output.display());
    Ok(())
}
