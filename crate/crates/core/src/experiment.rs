//! Monte-Carlo sweeps over SNR and pilot-overhead fractions.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{build_dictionary, cs_estimate_with, AngleDictionary, CsVariant, DEFAULT_GRID_SIZE};
use crate::channel::{generate_channel, ScenarioConfig};
use crate::cp::{kruskal_ok, AlsOptions};
use crate::error::{Error, Result};
use crate::estimate::{run_algorithm1, EstimationResult, EstimatorOptions};
use crate::pilot::{build_pilot_plan, simulate, PilotPlan};
use crate::rng::{mix64, stream};

pub const ROWS_SCHEMA: &str = "# ma-tensor rows v1";
pub const SUMMARY_SCHEMA: &str = "# ma-tensor summary v1";

const CHANNEL_STREAM: u64 = 0xC4A1;
const NOISE_STREAM: u64 = 0x4015E;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Tensor,
    Omp,
    Somp,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::Tensor, EstimatorKind::Omp, EstimatorKind::Somp];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Tensor => "tensor",
            EstimatorKind::Omp => "omp",
            EstimatorKind::Somp => "somp",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator `{s}` (expected tensor, omp or somp)")))
    }
}

/// A full Monte-Carlo experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Scenario template; pilot areas and SNR are overridden per grid point.
    pub base: ScenarioConfig,
    pub snr_grid: Vec<f64>,
    pub beta_t_grid: Vec<f64>,
    pub beta_r_grid: Vec<f64>,
    pub trials: usize,
    pub estimators: Vec<EstimatorKind>,
    /// Dictionary points per virtual-angle axis for the sparse baselines.
    pub grid_size: usize,
    pub als: AlsOptions,
}

impl SweepSpec {
    pub fn new(base: ScenarioConfig) -> Self {
        Self {
            snr_grid: vec![base.snr_db],
            beta_t_grid: vec![0.25],
            beta_r_grid: vec![0.25],
            trials: 1,
            estimators: vec![EstimatorKind::Tensor],
            grid_size: DEFAULT_GRID_SIZE,
            als: AlsOptions::default(),
            base,
        }
    }

    /// Checks every grid value and that each `(β^t, β^r)` pair maps to a
    /// valid scenario.
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.snr_grid.is_empty() || self.beta_t_grid.is_empty() || self.beta_r_grid.is_empty() {
            return Err(Error::Config("snr, beta_t and beta_r grids must be nonempty".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("at least one estimator must be enabled".into()));
        }
        if self.grid_size < 2 {
            return Err(Error::Config(format!("dictionary grid_size must be at least 2, got {}", self.grid_size)));
        }
        for (name, grid) in [("beta_t", &self.beta_t_grid), ("beta_r", &self.beta_r_grid)] {
            if let Some(b) = grid.iter().find(|b| !(**b > 0.0 && **b <= 1.0)) {
                return Err(Error::Config(format!("{name} value {b} outside (0, 1]")));
            }
        }
        if let Some(s) = self.snr_grid.iter().find(|s| s.is_nan() || **s == f64::NEG_INFINITY) {
            return Err(Error::Config(format!("snr_db value {s} is not usable")));
        }
        for &bt in &self.beta_t_grid {
            for &br in &self.beta_r_grid {
                self.scenario_at(self.snr_grid[0], bt, br)?;
            }
        }
        Ok(())
    }

    /// Scenario for one grid point.
    pub fn scenario_at(&self, snr_db: f64, beta_t: f64, beta_r: f64) -> Result<ScenarioConfig> {
        let tx_grid = self.base.tx_grid()?;
        let rx_grid = self.base.rx_grid()?;
        let cfg = ScenarioConfig {
            snr_db,
            tx_pilot_area: area_for_fraction(beta_t, tx_grid.nx, tx_grid.ny),
            rx_pilot_area: area_for_fraction(beta_r, rx_grid.nx, rx_grid.ny),
            ..self.base.clone()
        };
        cfg.validate()
            .map_err(|e| Error::Config(format!("beta_t = {beta_t}, beta_r = {beta_r}: {e}")))?;
        Ok(cfg)
    }

    /// Grid points in output order: β^t, then β^r, then SNR.
    pub fn grid_points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &beta_t in &self.beta_t_grid {
            for &beta_r in &self.beta_r_grid {
                for &snr_db in &self.snr_grid {
                    out.push(GridPoint { snr_db, beta_t, beta_r });
                }
            }
        }
        out
    }
}

/// Probe area `[I_x, I_y]` covering the fraction `beta` of an `nx × ny` grid:
/// each side scaled by `√β`, rounded, and kept within `[2, n]`.
pub fn area_for_fraction(beta: f64, nx: usize, ny: usize) -> [usize; 2] {
    let side = |n: usize| ((beta.sqrt() * n as f64).round() as usize).clamp(2.min(n), n);
    [side(nx), side(ny)]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub snr_db: f64,
    pub beta_t: f64,
    pub beta_r: f64,
}

impl GridPoint {
    fn key(&self) -> [u64; 3] {
        [self.snr_db.to_bits(), self.beta_t.to_bits(), self.beta_r.to_bits()]
    }
}

/// One estimator on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub estimator: EstimatorKind,
    pub snr_db: f64,
    pub beta_t: f64,
    pub beta_r: f64,
    pub trial: usize,
    pub nmse: f64,
    pub iterations: usize,
    /// Seconds spent in the estimator; not written unless requested.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time: Option<f64>,
    pub seed: u64,
}

/// Execution settings that do not affect results.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Worker threads; `None` uses rayon's default.
    pub threads: Option<usize>,
    pub record_wall_time: bool,
    /// Emit ALS residual traces (CSV) to stderr.
    pub trace: bool,
}

struct PreparedPoint {
    point: GridPoint,
    cfg: ScenarioConfig,
    plan: PilotPlan,
    dict: Option<std::sync::Arc<AngleDictionary>>,
}

/// Runs every trial of every grid point. Within a trial, every estimator
/// sees the same observation. The channel of trial `k` depends only on
/// `(seed, k)` and the noise on `(seed, k, grid point)`, so growing a grid
/// never perturbs existing rows.
pub fn run_sweep(spec: &SweepSpec, opts: &RunOptions) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let seed = spec.base.seed;
    let needs_dict = spec.estimators.iter().any(|e| *e != EstimatorKind::Tensor);

    // Dictionaries depend only on the probe positions; share them across SNRs.
    let mut dicts: BTreeMap<[u64; 2], std::sync::Arc<AngleDictionary>> = BTreeMap::new();
    let mut prepared = Vec::new();
    for point in spec.grid_points() {
        let cfg = spec.scenario_at(point.snr_db, point.beta_t, point.beta_r)?;
        let plan = build_pilot_plan(&cfg)?;
        for (name, area, n, rank) in [
            ("stage-1", cfg.tx_pilot_area, cfg.rx_antennas, cfg.tx_paths),
            ("stage-2", cfg.rx_pilot_area, cfg.tx_antennas, cfg.rx_paths),
        ] {
            if !kruskal_ok(area[1], area[0], n, rank) {
                warn!(
                    "{name} tensor at beta_t = {}, beta_r = {} does not meet the uniqueness bound",
                    point.beta_t, point.beta_r
                );
            }
        }
        let dict = if needs_dict {
            let key = [point.beta_t.to_bits(), point.beta_r.to_bits()];
            let d = match dicts.get(&key) {
                Some(d) => d.clone(),
                None => {
                    let d = std::sync::Arc::new(build_dictionary(&plan, &cfg, spec.grid_size)?);
                    dicts.insert(key, d.clone());
                    d
                }
            };
            Some(d)
        } else {
            None
        };
        prepared.push(PreparedPoint { point, cfg, plan, dict });
    }

    let jobs: Vec<(usize, usize)> = (0..prepared.len()).flat_map(|p| (0..spec.trials).map(move |t| (p, t))).collect();
    let work = || {
        jobs.par_iter()
            .map(|&(p, trial)| run_trial(spec, &prepared[p], trial, seed, opts))
            .collect::<Result<Vec<Vec<ResultRow>>>>()
    };
    let nested = match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let mut rows: Vec<ResultRow> = nested.into_iter().flatten().collect();
    rows.sort_by(|a, b| row_order(a).partial_cmp(&row_order(b)).expect("grid values are not NaN"));
    Ok(rows)
}

fn row_order(r: &ResultRow) -> (EstimatorKind, f64, f64, f64, usize) {
    (r.estimator, r.beta_t, r.beta_r, r.snr_db, r.trial)
}

fn run_trial(spec: &SweepSpec, prep: &PreparedPoint, trial: usize, seed: u64, opts: &RunOptions) -> Result<Vec<ResultRow>> {
    let at = |e: Error| {
        let p = prep.point;
        Error::Input(format!(
            "snr_db = {}, beta_t = {}, beta_r = {}, trial {trial}: {e}",
            p.snr_db, p.beta_t, p.beta_r
        ))
    };
    let mut ch_rng = stream(seed, &[CHANNEL_STREAM, trial as u64]);
    let channel = generate_channel(&prep.cfg, &mut ch_rng).map_err(at)?;
    let [k0, k1, k2] = prep.point.key();
    let mut noise_rng = stream(seed, &[NOISE_STREAM, trial as u64, k0, k1, k2]);
    let obs = simulate(&prep.plan, &channel, &prep.cfg, &mut noise_rng).map_err(at)?;

    let mut rows = Vec::with_capacity(spec.estimators.len());
    for &kind in &spec.estimators {
        let start = Instant::now();
        let mut result: EstimationResult = match kind {
            EstimatorKind::Tensor => {
                let est_opts = EstimatorOptions {
                    als: AlsOptions {
                        seed: mix64(seed ^ mix64(trial as u64)),
                        ..spec.als.clone()
                    },
                    ..EstimatorOptions::default()
                };
                run_algorithm1(&obs, &prep.plan, &prep.cfg, &est_opts).map_err(at)?
            }
            EstimatorKind::Omp | EstimatorKind::Somp => {
                let variant = if kind == EstimatorKind::Omp { CsVariant::Omp } else { CsVariant::Somp };
                let dict = prep.dict.as_ref().expect("dictionary prepared for sparse estimators");
                cs_estimate_with(&obs, &prep.plan, &prep.cfg, dict, variant).map_err(at)?
            }
        };
        let elapsed = start.elapsed().as_secs_f64();
        let nmse = result.score_full_grid(&channel, &prep.cfg).map_err(at)?;
        if opts.trace {
            if let Some(reports) = &result.als_reports {
                let label = format!("{kind}:snr={}:trial={trial}", prep.point.snr_db);
                let mut err = std::io::stderr().lock();
                reports.tx.write_trace_csv(&mut err, &format!("{label}:tx"))?;
                reports.rx.write_trace_csv(&mut err, &format!("{label}:rx"))?;
            }
        }
        debug!("{kind} snr={} trial={trial} nmse={nmse:e}", prep.point.snr_db);
        rows.push(ResultRow {
            estimator: kind,
            snr_db: prep.point.snr_db,
            beta_t: prep.point.beta_t,
            beta_r: prep.point.beta_r,
            trial,
            nmse,
            iterations: result.total_iterations(),
            wall_time: opts.record_wall_time.then_some(elapsed),
            seed,
        });
    }
    Ok(rows)
}

/// Aggregate of one `(estimator, snr, β^t, β^r)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub estimator: EstimatorKind,
    pub snr_db: f64,
    pub beta_t: f64,
    pub beta_r: f64,
    pub trials: usize,
    pub median_nmse: f64,
    pub mean_nmse: f64,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn aggregate(rows: &[ResultRow]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(Error::Input("cannot summarize an empty result table".into()));
    }
    let mut cells: Vec<((EstimatorKind, f64, f64, f64), Vec<f64>)> = Vec::new();
    for r in rows {
        let key = (r.estimator, r.snr_db, r.beta_t, r.beta_r);
        match cells.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r.nmse),
            None => cells.push((key, vec![r.nmse])),
        }
    }
    let mut out: Vec<SummaryRow> = cells
        .into_iter()
        .map(|((estimator, snr_db, beta_t, beta_r), v)| SummaryRow {
            estimator,
            snr_db,
            beta_t,
            beta_r,
            trials: v.len(),
            median_nmse: median(&v).expect("cells are nonempty"),
            mean_nmse: v.iter().sum::<f64>() / v.len() as f64,
        })
        .collect();
    out.sort_by(|a, b| {
        (a.estimator, a.beta_t, a.beta_r, a.snr_db)
            .partial_cmp(&(b.estimator, b.beta_t, b.beta_r, b.snr_db))
            .expect("grid values are not NaN")
    });
    Ok(out)
}

fn write_table<W: Write, T: Serialize>(mut w: W, schema: &str, rows: &[T]) -> Result<()> {
    writeln!(w, "{schema}")?;
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r).map_err(|e| Error::Input(format!("csv: {e}")))?;
    }
    csv.flush()?;
    Ok(())
}

/// Columns: estimator, snr_db, beta_t, beta_r, trial, nmse, iterations,
/// [wall_time,] seed.
pub fn write_rows_csv<W: Write>(w: W, rows: &[ResultRow]) -> Result<()> {
    write_table(w, ROWS_SCHEMA, rows)
}

/// Columns: estimator, snr_db, beta_t, beta_r, trials, median_nmse, mean_nmse.
pub fn write_summary_csv<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    write_table(w, SUMMARY_SCHEMA, rows)
}

/// Reads a rows CSV written by [`write_rows_csv`].
pub fn read_rows_csv<R: std::io::Read>(r: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::Input(format!("rows csv: {e}"))))
        .collect()
}

/// Pilot-symbol accounting for one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct OverheadReport {
    pub tx_grid_points: usize,
    pub rx_grid_points: usize,
    pub tx_probes: usize,
    pub rx_probes: usize,
    /// `I + (J/N)·M_p`.
    pub pilot_symbols: usize,
    /// `log10(C(G^t, M)·C(G^r, N)/N)`.
    pub exhaustive_log10: f64,
    pub tx_unique: bool,
    pub rx_unique: bool,
}

impl OverheadReport {
    pub fn below_exhaustive(&self) -> bool {
        (self.pilot_symbols as f64).log10() < self.exhaustive_log10
    }
}

/// `ln C(n, k)`, exact enough for comparisons at any size.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

pub fn overhead(cfg: &ScenarioConfig) -> Result<OverheadReport> {
    let plan = build_pilot_plan(cfg)?;
    let gt = cfg.tx_grid()?.count();
    let gr = cfg.rx_grid()?.count();
    let ln = ln_binomial(gt, cfg.tx_antennas) + ln_binomial(gr, cfg.rx_antennas) - (cfg.rx_antennas as f64).ln();
    let [ix, iy] = cfg.tx_pilot_area;
    let [jx, jy] = cfg.rx_pilot_area;
    Ok(OverheadReport {
        tx_grid_points: gt,
        rx_grid_points: gr,
        tx_probes: plan.tx_moves.len(),
        rx_probes: plan.rx_probe_positions().len(),
        pilot_symbols: plan.pilot_symbols(),
        exhaustive_log10: ln / std::f64::consts::LN_10,
        tx_unique: kruskal_ok(iy, ix, cfg.rx_antennas, cfg.tx_paths),
        rx_unique: kruskal_ok(jy, jx, cfg.tx_antennas, cfg.rx_paths),
    })
}
