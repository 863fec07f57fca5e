//! Angle extraction, path-response estimation and channel reconstruction.

use std::f64::consts::PI;

use log::warn;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{field_response, MultipathChannel, PathAngles, PositionSet, ScenarioConfig};
use crate::cp::{cp_als, kruskal_ok, AlsOptions, AlsReport, FactorSet};
use crate::error::{Error, Result};
use crate::linalg::{condition_number, kronecker, least_squares, unvec, vec_col_major, ComplexMatrix};
use crate::pilot::{PilotObservation, PilotPlan};

/// Condition number above which the gain solve is flagged.
pub const ILL_CONDITIONED: f64 = 1e10;

/// LS ratio `[c]_{1:d-1}† · [c]_{2:d}` of a (noisy) Vandermonde column.
pub fn estimate_generator(col: &[Complex64]) -> Result<Complex64> {
    let d = col.len();
    if d < 2 {
        return Err(Error::Argument(format!("generator estimation needs at least 2 entries, got {d}")));
    }
    let (head, tail) = (&col[..d - 1], &col[1..]);
    let energy: f64 = head.iter().map(|z| z.norm_sqr()).sum();
    if energy == 0.0 || !energy.is_finite() {
        return Err(Error::DegenerateColumn("leading subvector is zero or non-finite".into()));
    }
    let cross: Complex64 = head.iter().zip(tail).map(|(a, b)| a.conj() * b).sum();
    Ok(cross / energy)
}

/// Virtual angle encoded by a generator `ω = exp(−j·2πΔ·ϑ/λ)`.
pub fn angle_from_generator(omega: Complex64, pitch: f64, wavelength: f64) -> f64 {
    -wavelength / (2.0 * PI * pitch) * omega.arg()
}

/// Estimated virtual angles for both link ends.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AngleEstimates {
    pub tx: PathAngles,
    pub rx: PathAngles,
    /// Number of values that fell outside `[−1, 1]` and were clipped.
    pub clipped: usize,
}

/// Reads `(ϑ̂, φ̂)` per component from a factor set whose first factor runs
/// along y and second along x. Returns the angles and the clip count.
pub fn extract_angles(f: &FactorSet, pitch: f64, wavelength: f64) -> Result<(PathAngles, usize)> {
    let mut clipped = 0;
    let mut read = |m: &ComplexMatrix, l: usize| -> Result<f64> {
        let col: Vec<Complex64> = m.column(l).iter().copied().collect();
        let v = angle_from_generator(estimate_generator(&col)?, pitch, wavelength);
        if v.abs() > 1.0 {
            clipped += 1;
            Ok(v.clamp(-1.0, 1.0))
        } else {
            Ok(v)
        }
    };
    let mut theta = Vec::with_capacity(f.rank());
    let mut phi = Vec::with_capacity(f.rank());
    for l in 0..f.rank() {
        theta.push(read(&f.u2, l)?);
        phi.push(read(&f.u1, l)?);
    }
    Ok((PathAngles::new(theta, phi), clipped))
}

/// AoDs from the stage-1 factors `{Â_y, Â_x, D̂_t}`.
pub fn extract_angles_tx(f: &FactorSet, cfg: &ScenarioConfig) -> Result<(PathAngles, usize)> {
    extract_angles(f, cfg.grid_pitch, cfg.wavelength)
}

/// AoAs from the stage-2 factors `{B̂_y, B̂_x, D̂_r}`.
pub fn extract_angles_rx(f: &FactorSet, cfg: &ScenarioConfig) -> Result<(PathAngles, usize)> {
    extract_angles(f, cfg.grid_pitch, cfg.wavelength)
}

/// Output of the gain solve.
#[derive(Debug, Clone, PartialEq)]
pub struct GainEstimate {
    /// Σ̂, `L_r × L_t`.
    pub prm: ComplexMatrix,
    pub condition: f64,
}

/// Stacked sensing matrix `Φ = √P·[G(D^t)^T ⊗ F(r̃^0)^H ; G(t̃^0)^T ⊗ F(D^r)^H]`
/// and measurement `[vec(Y^t); vec(Ȳ^r)]`.
pub fn sensing_system(
    obs: &PilotObservation,
    plan: &PilotPlan,
    angles: &AngleEstimates,
    cfg: &ScenarioConfig,
) -> Result<(ComplexMatrix, ComplexMatrix)> {
    let lambda = cfg.wavelength;
    let sqrt_p = Complex64::from(cfg.transmit_power().sqrt());
    let g_d = field_response(&plan.tx_moves, &angles.tx, lambda);
    let f_0 = field_response(&plan.rx_initial, &angles.rx, lambda);
    let g_0 = field_response(&plan.tx_initial, &angles.tx, lambda);
    let f_d = field_response(&plan.rx_probe_positions(), &angles.rx, lambda);
    let phi_t = kronecker(&g_d.transpose(), &f_0.adjoint()) * sqrt_p;
    let phi_r = kronecker(&g_0.transpose(), &f_d.adjoint()) * sqrt_p;
    let y_t = vec_col_major(&obs.y_t_matrix);
    let y_r = vec_col_major(&obs.y_r_matrix);
    if phi_t.nrows() != y_t.nrows() || phi_r.nrows() != y_r.nrows() {
        return Err(Error::Dimension(format!(
            "observation sizes ({}, {}) do not match the pilot plan ({}, {})",
            y_t.nrows(),
            y_r.nrows(),
            phi_t.nrows(),
            phi_r.nrows()
        )));
    }
    let cols = phi_t.ncols();
    let mut phi = ComplexMatrix::zeros(phi_t.nrows() + phi_r.nrows(), cols);
    phi.rows_mut(0, phi_t.nrows()).copy_from(&phi_t);
    phi.rows_mut(phi_t.nrows(), phi_r.nrows()).copy_from(&phi_r);
    let mut y = ComplexMatrix::zeros(y_t.nrows() + y_r.nrows(), 1);
    y.rows_mut(0, y_t.nrows()).copy_from(&y_t);
    y.rows_mut(y_t.nrows(), y_r.nrows()).copy_from(&y_r);
    Ok((phi, y))
}

/// Unweighted LS estimate of `γ = vec(Σ)` from both stages, reshaped to Σ̂.
pub fn estimate_gains(
    obs: &PilotObservation,
    plan: &PilotPlan,
    angles: &AngleEstimates,
    cfg: &ScenarioConfig,
) -> Result<GainEstimate> {
    let (phi, y) = sensing_system(obs, plan, angles, cfg)?;
    let gamma = least_squares(&phi, &y)?;
    let condition = condition_number(&phi);
    if condition > ILL_CONDITIONED {
        warn!("gain sensing matrix is ill-conditioned (cond = {condition:.3e})");
    }
    Ok(GainEstimate {
        prm: unvec(gamma.as_slice(), angles.rx.len(), angles.tx.len())?,
        condition,
    })
}

/// `Ĥ(r̃, t̃) = F̂(r̃)^H Σ̂ Ĝ(t̃)` at arbitrary positions.
pub fn reconstruct_channel(
    angles: &AngleEstimates,
    prm_hat: &ComplexMatrix,
    rx_pos: &PositionSet,
    tx_pos: &PositionSet,
    wavelength: f64,
) -> ComplexMatrix {
    field_response(rx_pos, &angles.rx, wavelength).adjoint() * prm_hat * field_response(tx_pos, &angles.tx, wavelength)
}

const NMSE_BLOCK_ROWS: usize = 256;

/// `‖H − Ĥ‖_F² / ‖H‖_F²` over all pairs of the given positions, evaluated in
/// row blocks of the receive positions.
pub fn nmse_between(
    truth: &MultipathChannel,
    angles: &AngleEstimates,
    prm_hat: &ComplexMatrix,
    rx_pos: &PositionSet,
    tx_pos: &PositionSet,
) -> f64 {
    let lambda = truth.wavelength;
    let sg = &truth.prm * field_response(tx_pos, &truth.aod, lambda);
    let sg_hat = prm_hat * field_response(tx_pos, &angles.tx, lambda);
    let (mut err, mut energy) = (0.0, 0.0);
    for chunk in rx_pos.coords.chunks(NMSE_BLOCK_ROWS) {
        let block = PositionSet::new(chunk.to_vec());
        let h = field_response(&block, &truth.aoa, lambda).adjoint() * &sg;
        let h_hat = field_response(&block, &angles.rx, lambda).adjoint() * &sg_hat;
        energy += h.norm_squared();
        err += (h - h_hat).norm_squared();
    }
    err / energy
}

/// Options for the full estimator.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorOptions {
    pub als: AlsOptions,
    /// CP rank for the stage-1 tensor; defaults to the configured Tx path count.
    pub tx_rank: Option<usize>,
    /// CP rank for the stage-2 tensor; defaults to the configured Rx path count.
    pub rx_rank: Option<usize>,
}

/// Diagnostics from the two decompositions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AlsReports {
    pub tx: AlsReport,
    pub rx: AlsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub angles: AngleEstimates,
    /// Σ̂, `L_r × L_t`.
    pub prm_hat: ComplexMatrix,
    /// Reconstructed channel for requested positions, when evaluated.
    pub h_hat: Option<ComplexMatrix>,
    pub nmse: Option<f64>,
    pub als_reports: Option<AlsReports>,
    /// Estimated third factors `(D̂_t, D̂_r)`, kept for diagnostics.
    pub aux_factors: Option<(ComplexMatrix, ComplexMatrix)>,
    pub gain_condition: f64,
    /// Greedy iterations for the sparse baselines.
    pub iterations: usize,
    pub warnings: Vec<String>,
}

impl EstimationResult {
    pub fn reconstruct(&self, rx_pos: &PositionSet, tx_pos: &PositionSet, wavelength: f64) -> ComplexMatrix {
        reconstruct_channel(&self.angles, &self.prm_hat, rx_pos, tx_pos, wavelength)
    }

    /// Scores the estimate against the true channel over every Tx/Rx grid
    /// pair of the scenario and stores the NMSE.
    pub fn score_full_grid(&mut self, truth: &MultipathChannel, cfg: &ScenarioConfig) -> Result<f64> {
        let rx = crate::channel::enumerate_grid(cfg.rx_region, cfg.grid_pitch)?;
        let tx = crate::channel::enumerate_grid(cfg.tx_region, cfg.grid_pitch)?;
        let v = nmse_between(truth, &self.angles, &self.prm_hat, &rx, &tx);
        self.nmse = Some(v);
        Ok(v)
    }

    pub fn total_iterations(&self) -> usize {
        match &self.als_reports {
            Some(r) => r.tx.iterations + r.rx.iterations,
            None => self.iterations,
        }
    }
}

/// Gain solve and bookkeeping shared by every estimator that produces angles.
pub fn finish_with_angles(
    obs: &PilotObservation,
    plan: &PilotPlan,
    cfg: &ScenarioConfig,
    angles: AngleEstimates,
    mut warnings: Vec<String>,
) -> Result<EstimationResult> {
    let gains = estimate_gains(obs, plan, &angles, cfg)?;
    if gains.condition > ILL_CONDITIONED {
        warnings.push(format!("gain solve ill-conditioned (cond = {:.3e})", gains.condition));
    }
    if angles.clipped > 0 {
        warnings.push(format!("{} virtual angle estimates clipped to [-1, 1]", angles.clipped));
    }
    Ok(EstimationResult {
        angles,
        prm_hat: gains.prm,
        h_hat: None,
        nmse: None,
        als_reports: None,
        aux_factors: None,
        gain_condition: gains.condition,
        iterations: 0,
        warnings,
    })
}

/// Tensor-decomposition estimator: CP-decompose both observation tensors,
/// read AoDs and AoAs from the Vandermonde factors, solve for Σ̂.
pub fn run_algorithm1(
    obs: &PilotObservation,
    plan: &PilotPlan,
    cfg: &ScenarioConfig,
    opts: &EstimatorOptions,
) -> Result<EstimationResult> {
    let tx_rank = opts.tx_rank.unwrap_or(cfg.tx_paths);
    let rx_rank = opts.rx_rank.unwrap_or(cfg.rx_paths);
    let mut warnings = Vec::new();
    if tx_rank != cfg.tx_paths || rx_rank != cfg.rx_paths {
        warnings.push(format!(
            "CP ranks ({tx_rank}, {rx_rank}) differ from configured path counts ({}, {})",
            cfg.tx_paths, cfg.rx_paths
        ));
    }
    for (name, t, rank) in [("stage-1", &obs.y_t_tensor, tx_rank), ("stage-2", &obs.y_r_tensor, rx_rank)] {
        let [d1, d2, d3] = t.dims();
        if !kruskal_ok(d1, d2, d3, rank) {
            warnings.push(format!("{name} tensor {d1}x{d2}x{d3} does not meet the uniqueness bound for rank {rank}"));
        }
    }

    let (tx_factors, tx_report) = cp_als(&obs.y_t_tensor, tx_rank, &opts.als).map_err(|e| e.at("CP decomposition of stage-1 tensor"))?;
    let rx_opts = AlsOptions {
        seed: opts.als.seed ^ 0x5EC0_4D,
        ..opts.als.clone()
    };
    let (rx_factors, rx_report) = cp_als(&obs.y_r_tensor, rx_rank, &rx_opts).map_err(|e| e.at("CP decomposition of stage-2 tensor"))?;

    let (tx, clipped_tx) = extract_angles_tx(&tx_factors, cfg).map_err(|e| e.at("AoD extraction"))?;
    let (rx, clipped_rx) = extract_angles_rx(&rx_factors, cfg).map_err(|e| e.at("AoA extraction"))?;
    let angles = AngleEstimates {
        tx,
        rx,
        clipped: clipped_tx + clipped_rx,
    };

    let mut result = finish_with_angles(obs, plan, cfg, angles, warnings).map_err(|e| e.at("path-response estimation"))?;
    result.iterations = tx_report.iterations + rx_report.iterations;
    result.als_reports = Some(AlsReports {
        tx: tx_report,
        rx: rx_report,
    });
    result.aux_factors = Some((tx_factors.u3, rx_factors.u3));
    for w in &result.warnings {
        warn!("{w}");
    }
    Ok(result)
}
