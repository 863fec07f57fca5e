//! Experiment configuration files.
//!
//! ```toml
//! [scenario]
//! preset = "desk"        # or "paper"; other keys override the preset
//! snr_db = 15.0          # used by `demo`
//! seed = 7
//!
//! [sweep]
//! snr_db = [0.0, 10.0, 20.0]
//! beta_t = [0.25]
//! beta_r = [0.25]
//! trials = 50
//!
//! [estimators]
//! enabled = ["tensor", "omp", "somp"]
//! grid_size = 64
//!
//! [estimators.als]
//! max_iters = 1000
//!
//! [output]
//! dir = "results"
//! wall_time = false
//! ```
//!
//! Pilot areas come from the `beta_t`/`beta_r` fractions and may not be set
//! in `[scenario]`. Every error names the file and line it refers to.

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::Spanned;

use crate::channel::ScenarioConfig;
use crate::cp::AlsOptions;
use crate::error::{Error, Result};
use crate::experiment::{EstimatorKind, SweepSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub wall_time: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            wall_time: false,
        }
    }
}

/// Parsed configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sweep: SweepSpec,
    pub output: OutputSpec,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    scenario: Option<Spanned<toml::Table>>,
    #[serde(default)]
    sweep: Option<Spanned<RawSweep>>,
    #[serde(default)]
    estimators: Option<RawEstimators>,
    #[serde(default)]
    output: Option<RawOutput>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    snr_db: Option<Spanned<Vec<f64>>>,
    beta_t: Option<Spanned<Vec<f64>>>,
    beta_r: Option<Spanned<Vec<f64>>>,
    trials: Option<Spanned<usize>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEstimators {
    enabled: Option<Spanned<Vec<Spanned<String>>>>,
    grid_size: Option<Spanned<usize>>,
    als: Option<RawAls>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAls {
    max_iters: Option<usize>,
    tol: Option<f64>,
    residual_floor: Option<f64>,
    restarts: Option<usize>,
    rebalance_every: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    wall_time: Option<bool>,
}

/// 1-based line and column of a byte offset.
fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(src.len());
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

struct Source<'a> {
    origin: &'a str,
    text: &'a str,
}

impl Source<'_> {
    fn err(&self, span: Range<usize>, msg: impl std::fmt::Display) -> Error {
        let (line, col) = line_col(self.text, span.start);
        Error::Config(format!("{}:{line}:{col}: {msg}", self.origin))
    }
}

fn scenario_from_table(table: toml::Table, src: &Source, span: Range<usize>) -> Result<ScenarioConfig> {
    let mut table = table;
    let base = match table.remove("preset") {
        None => ScenarioConfig::default(),
        Some(toml::Value::String(s)) if s == "desk" => ScenarioConfig::default(),
        Some(toml::Value::String(s)) if s == "paper" => ScenarioConfig::paper_preset(),
        Some(other) => return Err(src.err(span, format!("unknown scenario preset {other} (expected \"desk\" or \"paper\")"))),
    };
    for key in ["tx_pilot_area", "rx_pilot_area"] {
        if table.contains_key(key) {
            return Err(src.err(span, format!("`{key}` is derived from sweep.beta_t / sweep.beta_r and cannot be set")));
        }
    }
    let mut merged = toml::Table::try_from(&base).map_err(|e| src.err(span.clone(), e))?;
    merged.extend(table);
    let cfg: ScenarioConfig = merged.try_into().map_err(|e: toml::de::Error| src.err(span.clone(), e.message()))?;
    Ok(cfg)
}

/// Parses a configuration file's contents. `origin` names the file in errors.
pub fn parse_config(text: &str, origin: &str) -> Result<RunConfig> {
    let src = Source { origin, text };
    let raw: RawConfig = toml::from_str(text).map_err(|e| src.err(e.span().unwrap_or(0..0), e.message()))?;

    let (mut base, scenario_span) = match raw.scenario {
        Some(s) => {
            let span = s.span();
            (scenario_from_table(s.into_inner(), &src, span.clone())?, span)
        }
        None => (ScenarioConfig::default(), 0..0),
    };
    let mut spec = SweepSpec::new(base.clone());
    let mut sweep_span = 0..0;
    if let Some(sweep) = raw.sweep {
        sweep_span = sweep.span();
        let sweep = sweep.into_inner();
        if let Some(v) = sweep.snr_db {
            if let Some(s) = v.get_ref().iter().find(|s| s.is_nan() || **s == f64::NEG_INFINITY) {
                return Err(src.err(v.span(), format!("snr_db value {s} is not usable")));
            }
            spec.snr_grid = v.into_inner();
        }
        for (name, field, target) in [
            ("beta_t", sweep.beta_t, &mut spec.beta_t_grid),
            ("beta_r", sweep.beta_r, &mut spec.beta_r_grid),
        ] {
            if let Some(v) = field {
                if let Some(b) = v.get_ref().iter().find(|b| !(**b > 0.0 && **b <= 1.0)) {
                    return Err(src.err(v.span(), format!("{name} value {b} outside (0, 1]")));
                }
                if v.get_ref().is_empty() {
                    return Err(src.err(v.span(), format!("{name} must list at least one value")));
                }
                *target = v.into_inner();
            }
        }
        if let Some(t) = sweep.trials {
            if *t.get_ref() == 0 {
                return Err(src.err(t.span(), "trials must be at least 1"));
            }
            spec.trials = t.into_inner();
        }
    }
    spec.estimators = EstimatorKind::ALL.to_vec();
    if let Some(est) = raw.estimators {
        if let Some(list) = est.enabled {
            let span = list.span();
            let mut kinds = Vec::new();
            for name in list.into_inner() {
                let kind: EstimatorKind = name.get_ref().parse().map_err(|e: Error| src.err(name.span(), strip_kind(e)))?;
                if !kinds.contains(&kind) {
                    kinds.push(kind);
                }
            }
            if kinds.is_empty() {
                return Err(src.err(span, "at least one estimator must be enabled"));
            }
            spec.estimators = kinds;
        }
        if let Some(k) = est.grid_size {
            if *k.get_ref() < 2 {
                return Err(src.err(k.span(), "grid_size must be at least 2"));
            }
            spec.grid_size = k.into_inner();
        }
        if let Some(a) = est.als {
            let d = AlsOptions::default();
            spec.als = AlsOptions {
                max_iters: a.max_iters.unwrap_or(d.max_iters),
                tol: a.tol.unwrap_or(d.tol),
                residual_floor: a.residual_floor.unwrap_or(d.residual_floor),
                restarts: a.restarts.unwrap_or(d.restarts),
                rebalance_every: a.rebalance_every.unwrap_or(d.rebalance_every),
                seed: d.seed,
            };
        }
    }

    // The areas are placeholders until a sweep point picks them; give them a
    // valid value so scenario checks can run.
    let probe = spec.scenario_at(base.snr_db, spec.beta_t_grid[0], spec.beta_r_grid[0]);
    if let Ok(cfg) = &probe {
        base.tx_pilot_area = cfg.tx_pilot_area;
        base.rx_pilot_area = cfg.rx_pilot_area;
    }
    base.validate().map_err(|e| src.err(scenario_span.clone(), strip_kind(e)))?;
    spec.base = base;
    spec.validate().map_err(|e| src.err(sweep_span.clone(), strip_kind(e)))?;

    let output = match raw.output {
        Some(o) => {
            let d = OutputSpec::default();
            OutputSpec {
                dir: o.dir.unwrap_or(d.dir),
                wall_time: o.wall_time.unwrap_or(d.wall_time),
            }
        }
        None => OutputSpec::default(),
    };
    Ok(RunConfig { sweep: spec, output })
}

fn strip_kind(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_desk_defaults() {
        let c = parse_config("", "x.toml").unwrap();
        assert_eq!(c.sweep.base.tx_region, [4.0, 4.0]);
        assert_eq!(c.sweep.base.tx_pilot_area, [10, 10]);
        assert_eq!(c.sweep.estimators, EstimatorKind::ALL.to_vec());
        assert_eq!(c.output, OutputSpec::default());
    }

    #[test]
    fn paper_preset_with_override() {
        let c = parse_config("[scenario]\npreset = \"paper\"\nseed = 9\n", "p.toml").unwrap();
        assert_eq!(c.sweep.base.tx_region, [8.0, 8.0]);
        assert_eq!(c.sweep.base.seed, 9);
        assert_eq!(c.sweep.base.tx_pilot_area, [20, 20]);
    }

    #[test]
    fn full_file() {
        let text = r#"
[scenario]
eta = 2.0

[sweep]
snr_db = [0.0, inf]
beta_t = [0.1, 0.2]
trials = 3

[estimators]
enabled = ["somp", "tensor", "somp"]
grid_size = 16

[estimators.als]
restarts = 1

[output]
dir = "out"
wall_time = true
"#;
        let c = parse_config(text, "f.toml").unwrap();
        assert_eq!(c.sweep.snr_grid, vec![0.0, f64::INFINITY]);
        assert_eq!(c.sweep.beta_t_grid, vec![0.1, 0.2]);
        assert_eq!(c.sweep.trials, 3);
        assert_eq!(c.sweep.estimators, vec![EstimatorKind::Somp, EstimatorKind::Tensor]);
        assert_eq!(c.sweep.grid_size, 16);
        assert_eq!(c.sweep.als.restarts, 1);
        assert_eq!(c.sweep.als.max_iters, 1000);
        assert_eq!(c.sweep.base.eta, 2.0);
        assert_eq!(c.output.dir, PathBuf::from("out"));
        assert!(c.output.wall_time);
    }

    fn err_of(text: &str) -> String {
        parse_config(text, "bad.toml").unwrap_err().to_string()
    }

    #[test]
    fn errors_are_line_anchored() {
        let m = err_of("[sweep]\ntrials = 2\nbeta_t = [0.5, 1.5]\n");
        assert!(m.contains("bad.toml:3:"), "{m}");
        assert!(m.contains("outside"), "{m}");

        let m = err_of("[sweep]\n\n\nbogus = 1\n");
        assert!(m.contains("bad.toml:4:"), "{m}");

        let m = err_of("[estimators]\nenabled = [\n  \"tensor\",\n  \"lasso\",\n]\n");
        assert!(m.contains("bad.toml:4:"), "{m}");

        let m = err_of("[scenario]\ngrid_pitch = 0.7\n");
        assert!(m.contains("bad.toml:1:") && m.contains("half a wavelength"), "{m}");

        let m = err_of("[sweep]\nbeta_r = [0.3]\n");
        assert!(m.contains("bad.toml:1:") && m.contains("divisible"), "{m}");

        let m = err_of("[sweep\n");
        assert!(m.contains("bad.toml:1:"), "{m}");

        let m = err_of("[scenario]\ntx_pilot_area = [4, 4]\n");
        assert!(m.contains("derived"), "{m}");
    }
}
