//! Flat `key = value` configuration files with `[section]` headers.
//!
//! The format is deliberately plain: `#` starts a comment, values are bare
//! words or comma-separated lists, mode pairs are written `mx:my`. Every
//! diagnostic names the offending key and the reason.

use riccilab_core::flow::{FlowKind, SProvider};
use riccilab_core::geometry::{sinusoid_u, ConformalTorus, Metric, RoundSphere, ScalarField};
use riccilab_core::grid::{Grid, GridField};
use riccilab_core::harness::SuiteConfig;
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type CfgResult<T> = std::result::Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> CfgResult<T> {
    Err(ConfigError(msg.into()))
}

/// Parsed but untyped configuration text.
#[derive(Debug)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

const KNOWN_KEYS: &[(&str, &[&str])] = &[
    (
        "metric",
        &[
            "family", "nx", "ny", "lx", "ly", "initial", "amplitude", "modes", "u_file", "dim",
            "r2",
        ],
    ),
    (
        "flow",
        &[
            "kind",
            "provider",
            "s0",
            "provider_k",
            "phi_amplitude",
            "phi_modes",
            "t_end",
            "dt",
        ],
    ),
    ("monitor", &["k", "tau0", "eig_tol"]),
    ("output", &["dir", "prefix"]),
    (
        "suite",
        &[
            "seed",
            "grid",
            "domain",
            "amplitude",
            "modes",
            "steps",
            "eig_tol",
            "checks",
            "s_values",
            "k_values",
            "oracle_count",
            "tau0",
            "dt",
        ],
    ),
    ("sweep", &["s_values"]),
];

impl RawConfig {
    pub fn parse(text: &str, origin: &str) -> CfgResult<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') {
                    return err(format!(
                        "{origin}:{}: malformed section header `{line}`",
                        lineno + 1
                    ));
                }
                current = line[1..line.len() - 1].trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let Some(eq) = line.find('=') else {
                return err(format!(
                    "{origin}:{}: expected `key = value`, got `{line}`",
                    lineno + 1
                ));
            };
            if current.is_empty() {
                return err(format!(
                    "{origin}:{}: key outside any [section]",
                    lineno + 1
                ));
            }
            let key = line[..eq].trim().to_string();
            let value = line[eq + 1..].trim().to_string();
            sections
                .entry(current.clone())
                .or_default()
                .insert(key, value);
        }
        let cfg = Self { sections };
        cfg.reject_unknown_keys(origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CfgResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ConfigError(format!("cannot read config file {}: {e}", path.display()))
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    fn reject_unknown_keys(&self, origin: &str) -> CfgResult<()> {
        for (section, keys) in &self.sections {
            let Some((_, known)) = KNOWN_KEYS.iter().find(|(s, _)| s == section) else {
                return err(format!("{origin}: unknown section [{section}]"));
            };
            for key in keys.keys() {
                if !known.contains(&key.as_str()) {
                    return err(format!(
                        "{origin}: unknown key `{key}` in section [{section}]"
                    ));
                }
            }
        }
        Ok(())
    }

    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|s| s.as_str())
    }

    /// The configured output directory, when one is present.
    pub fn output_dir(&self) -> Option<String> {
        self.get("output", "dir").map(str::to_string)
    }

    fn f64_or(&self, section: &str, key: &str, default: f64) -> CfgResult<f64> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v.parse::<f64>().map_err(|_| {
                ConfigError(format!("[{section}] {key}: expected a number, got `{v}`"))
            }),
        }
    }

    fn usize_or(&self, section: &str, key: &str, default: usize) -> CfgResult<usize> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v.parse::<usize>().map_err(|_| {
                ConfigError(format!(
                    "[{section}] {key}: expected a nonnegative integer, got `{v}`"
                ))
            }),
        }
    }

    fn f64_list_or(&self, section: &str, key: &str, default: &[f64]) -> CfgResult<Vec<f64>> {
        match self.get(section, key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|item| {
                    item.trim().parse::<f64>().map_err(|_| {
                        ConfigError(format!(
                            "[{section}] {key}: expected comma-separated numbers, got `{item}`"
                        ))
                    })
                })
                .collect(),
        }
    }

    fn modes_or(&self, section: &str, key: &str, default: &[(i64, i64)]) -> CfgResult<Vec<(i64, i64)>> {
        match self.get(section, key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|item| {
                    let item = item.trim();
                    let Some((a, b)) = item.split_once(':') else {
                        return err(format!(
                            "[{section}] {key}: expected `mx:my` pairs, got `{item}`"
                        ));
                    };
                    let mx = a.trim().parse::<i64>();
                    let my = b.trim().parse::<i64>();
                    match (mx, my) {
                        (Ok(x), Ok(y)) => Ok((x, y)),
                        _ => err(format!(
                            "[{section}] {key}: expected integer pair, got `{item}`"
                        )),
                    }
                })
                .collect(),
        }
    }
}

/// Fully resolved run configuration; serialized verbatim into the manifest.
#[derive(Clone, Debug, serde::Serialize)]
pub struct RunConfig {
    pub family: String,
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub dim: usize,
    pub r2: f64,
    pub initial: String,
    pub amplitude: f64,
    pub modes: Vec<(i64, i64)>,
    pub u_file: Option<String>,
    pub flow_kind: String,
    pub provider: String,
    pub s0: f64,
    pub provider_k: f64,
    pub phi_amplitude: f64,
    pub phi_modes: Vec<(i64, i64)>,
    pub t_end: f64,
    /// As written in the config ("auto" or a number).
    pub dt_spec: String,
    /// The step actually used.
    pub dt_resolved: f64,
    pub k_values: Vec<f64>,
    pub tau0_spec: String,
    pub tau0_resolved: Option<f64>,
    pub eig_tol: f64,
    pub output_dir: String,
    pub prefix: String,
}

#[derive(Debug)]
pub struct PreparedRun {
    pub config: RunConfig,
    pub metric: Metric,
    pub flow_kind: FlowKind,
    pub provider: SProvider,
}

fn positive(name: &str, v: f64) -> CfgResult<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        err(format!("{name}: must be positive and finite, got {v}"))
    }
}

pub fn prepare_run(raw: &RawConfig, config_dir: &Path) -> CfgResult<PreparedRun> {
    let family = raw.get("metric", "family").unwrap_or("torus").to_string();
    let nx = raw.usize_or("metric", "nx", 64)?;
    let ny = raw.usize_or("metric", "ny", nx)?;
    let lx = positive("[metric] lx", raw.f64_or("metric", "lx", 2.0 * std::f64::consts::PI)?)?;
    let ly = positive("[metric] ly", raw.f64_or("metric", "ly", lx)?)?;
    let dim = raw.usize_or("metric", "dim", 2)?;
    let r2 = positive("[metric] r2", raw.f64_or("metric", "r2", 1.0)?)?;
    let initial = raw.get("metric", "initial").unwrap_or("sinusoid").to_string();
    let amplitude = raw.f64_or("metric", "amplitude", 0.35)?;
    let modes = raw.modes_or("metric", "modes", &[(2, 1), (1, 2), (2, 2)])?;
    let u_file = raw.get("metric", "u_file").map(str::to_string);

    let metric = match family.as_str() {
        "torus" => {
            let grid = Grid::new(nx, ny, lx, ly)
                .map_err(|e| ConfigError(format!("[metric] grid: {e}")))?;
            let u = match initial.as_str() {
                "zero" => GridField::zeros(grid),
                "sinusoid" => sinusoid_u(grid, amplitude, &modes),
                "file" => {
                    let Some(name) = &u_file else {
                        return err("[metric] u_file: required when initial = file");
                    };
                    let path = config_dir.join(name);
                    let text = std::fs::read_to_string(&path).map_err(|e| {
                        ConfigError(format!("[metric] u_file {}: {e}", path.display()))
                    })?;
                    let values: Vec<f64> = text
                        .split_whitespace()
                        .map(|t| {
                            t.parse::<f64>().map_err(|_| {
                                ConfigError(format!(
                                    "[metric] u_file: non-numeric entry `{t}`"
                                ))
                            })
                        })
                        .collect::<CfgResult<_>>()?;
                    GridField::from_data(grid, values)
                        .map_err(|e| ConfigError(format!("[metric] u_file: {e}")))?
                }
                other => {
                    return err(format!(
                        "[metric] initial: expected zero | sinusoid | file, got `{other}`"
                    ))
                }
            };
            Metric::Torus(
                ConformalTorus::new(u).map_err(|e| ConfigError(format!("[metric]: {e}")))?,
            )
        }
        "sphere" => Metric::Sphere(
            RoundSphere::new(dim, r2).map_err(|e| ConfigError(format!("[metric]: {e}")))?,
        ),
        other => {
            return err(format!(
                "[metric] family: expected torus | sphere, got `{other}`"
            ))
        }
    };

    let kind_str = raw.get("flow", "kind").unwrap_or("ricci").to_string();
    let flow_kind = match kind_str.as_str() {
        "ricci" => FlowKind::Ricci,
        "rescaled" => FlowKind::Rescaled,
        "normalized" => FlowKind::Normalized,
        other => {
            return err(format!(
                "[flow] kind: expected ricci | rescaled | normalized, got `{other}`"
            ))
        }
    };
    let provider_str = raw.get("flow", "provider").unwrap_or("constant").to_string();
    let s0 = raw.f64_or("flow", "s0", 0.0)?;
    let provider_k = raw.f64_or("flow", "provider_k", 1.0)?;
    let phi_amplitude = raw.f64_or("flow", "phi_amplitude", 0.0)?;
    let phi_modes = raw.modes_or("flow", "phi_modes", &[(1, 1)])?;
    let provider = match provider_str.as_str() {
        "constant" => SProvider::Constant(s0),
        "average_scalar" => SProvider::AverageScalar,
        "eigen_normalized" => SProvider::EigenNormalized { k: provider_k },
        "test_function" => {
            let phi = match &metric {
                Metric::Torus(t) => {
                    ScalarField::Grid(sinusoid_u(t.grid(), phi_amplitude, &phi_modes))
                }
                Metric::Sphere(_) => ScalarField::Const(phi_amplitude),
            };
            SProvider::TestFunction {
                phi,
                k: provider_k,
            }
        }
        other => {
            return err(format!(
                "[flow] provider: expected constant | average_scalar | eigen_normalized | test_function, got `{other}`"
            ))
        }
    };

    let t_end = positive("[flow] t_end", raw.f64_or("flow", "t_end", 0.02)?)?;
    let dt_spec = raw.get("flow", "dt").unwrap_or("auto").to_string();
    let dt_resolved = match dt_spec.as_str() {
        "auto" => match riccilab_core::flow::cfl_bound(&metric) {
            Some(bound) => 0.5 * bound,
            None => t_end / 512.0,
        },
        v => positive(
            "[flow] dt",
            v.parse::<f64>()
                .map_err(|_| ConfigError(format!("[flow] dt: expected auto or a number, got `{v}`")))?,
        )?,
    };

    let k_values = raw.f64_list_or("monitor", "k", &[1.0, 2.0, 5.0])?;
    for &k in &k_values {
        if k < 1.0 {
            return err(format!("[monitor] k: every k must be >= 1, got {k}"));
        }
    }
    let eig_tol = positive("[monitor] eig_tol", raw.f64_or("monitor", "eig_tol", 1e-9)?)?;

    // τ₀ pairs with the constant-s branch: auto derives -2n/s when the flow
    // has a constant negative s, otherwise leaves M2/W_k columns undefined.
    let tau0_spec = raw.get("monitor", "tau0").unwrap_or("auto").to_string();
    let n_dim = metric.dim() as f64;
    let tau0_resolved = match tau0_spec.as_str() {
        "none" => None,
        "auto" => match (&flow_kind, &provider) {
            (FlowKind::Rescaled, SProvider::Constant(s)) if *s != 0.0 && -2.0 * n_dim / s > 0.0 => {
                Some(-2.0 * n_dim / s)
            }
            _ => None,
        },
        v => Some(positive(
            "[monitor] tau0",
            v.parse::<f64>().map_err(|_| {
                ConfigError(format!(
                    "[monitor] tau0: expected auto | none | number, got `{v}`"
                ))
            })?,
        )?),
    };

    let output_dir = raw.get("output", "dir").unwrap_or("out").to_string();
    let prefix = raw.get("output", "prefix").unwrap_or("run").to_string();

    Ok(PreparedRun {
        config: RunConfig {
            family,
            nx,
            ny,
            lx,
            ly,
            dim,
            r2,
            initial,
            amplitude,
            modes,
            u_file,
            flow_kind: kind_str,
            provider: provider_str,
            s0,
            provider_k,
            phi_amplitude,
            phi_modes,
            t_end,
            dt_spec,
            dt_resolved,
            k_values,
            tau0_spec,
            tau0_resolved,
            eig_tol,
            output_dir,
            prefix,
        },
        metric,
        flow_kind,
        provider,
    })
}

/// Suite configuration from the `[suite]` section (defaults when absent).
pub fn suite_config(raw: &RawConfig) -> CfgResult<SuiteConfig> {
    let defaults = SuiteConfig::default();
    let checks = match raw.get("suite", "checks") {
        None => None,
        Some("all") => None,
        Some(v) => Some(
            v.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
        ),
    };
    let tau0 = match raw.get("suite", "tau0") {
        None | Some("none") => None,
        Some(v) => Some(v.parse::<f64>().map_err(|_| {
            ConfigError(format!("[suite] tau0: expected none or a number, got `{v}`"))
        })?),
    };
    let dt_override = match raw.get("suite", "dt") {
        None | Some("auto") => None,
        Some(v) => Some(positive(
            "[suite] dt",
            v.parse::<f64>().map_err(|_| {
                ConfigError(format!("[suite] dt: expected auto or a number, got `{v}`"))
            })?,
        )?),
    };
    Ok(SuiteConfig {
        seed: raw.usize_or("suite", "seed", defaults.seed as usize)? as u64,
        grid_n: raw.usize_or("suite", "grid", defaults.grid_n)?,
        domain: raw.f64_or("suite", "domain", defaults.domain)?,
        amplitude: raw.f64_or("suite", "amplitude", defaults.amplitude)?,
        modes: raw.modes_or("suite", "modes", &defaults.modes)?,
        k_values: raw.f64_list_or("suite", "k_values", &defaults.k_values)?,
        s_values: raw.f64_list_or("suite", "s_values", &defaults.s_values)?,
        steps: raw.usize_or("suite", "steps", defaults.steps)?,
        eig_tol: raw.f64_or("suite", "eig_tol", defaults.eig_tol)?,
        tau0,
        checks,
        oracle_count: raw.usize_or("suite", "oracle_count", defaults.oracle_count)?,
        dt_override,
    })
}

/// s-values for `sweep`: its own section, falling back to the suite list.
pub fn sweep_s_values(raw: &RawConfig) -> CfgResult<Vec<f64>> {
    if raw.get("sweep", "s_values").is_some() {
        raw.f64_list_or("sweep", "s_values", &[])
    } else {
        raw.f64_list_or("suite", "s_values", &[0.0, -1.0, -5.0])
    }
}

/// Output root: the environment override, or the current directory.
pub fn output_root() -> PathBuf {
    match std::env::var_os("RICCILAB_OUTPUT_ROOT") {
        Some(root) if !root.is_empty() => PathBuf::from(root),
        _ => PathBuf::from("."),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_lists() {
        let text = "# comment\n[metric]\nfamily = torus\nnx = 16\nmodes = 2:1, 1:2\n\n[flow]\nkind = rescaled\nprovider = constant\ns0 = -1.0\nt_end = 0.01\n";
        let raw = RawConfig::parse(text, "test").unwrap();
        let run = prepare_run(&raw, Path::new(".")).unwrap();
        assert_eq!(run.config.nx, 16);
        assert_eq!(run.config.modes, vec![(2, 1), (1, 2)]);
        assert_eq!(run.config.flow_kind, "rescaled");
        // auto tau0 pairs with the constant negative s: -2n/s = 4.
        assert_eq!(run.config.tau0_resolved, Some(4.0));
    }

    #[test]
    fn unknown_keys_are_named_in_the_error() {
        let text = "[metric]\nfamly = torus\n";
        let e = RawConfig::parse(text, "test").unwrap_err();
        assert!(e.0.contains("famly"), "{}", e.0);
        let text2 = "[metrics]\nfamily = torus\n";
        let e2 = RawConfig::parse(text2, "test").unwrap_err();
        assert!(e2.0.contains("metrics"), "{}", e2.0);
    }

    #[test]
    fn invalid_values_name_the_field() {
        let text = "[flow]\nt_end = banana\n";
        let raw = RawConfig::parse(text, "test").unwrap();
        let e = prepare_run(&raw, Path::new(".")).unwrap_err();
        assert!(e.0.contains("t_end"), "{}", e.0);
        let text2 = "[monitor]\nk = 0.5\n";
        let raw2 = RawConfig::parse(text2, "test").unwrap();
        let e2 = prepare_run(&raw2, Path::new(".")).unwrap_err();
        assert!(e2.0.contains("k must be >= 1") || e2.0.contains("every k"), "{}", e2.0);
    }
}
