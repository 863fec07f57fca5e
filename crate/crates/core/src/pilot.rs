//! Two-stage Tx-Rx successive antenna-movement pilot protocol.
//!
//! Stage 1 parks the receive antennas and sweeps a single transmit antenna
//! over an `I_x × I_y` block of Tx grid cells. Stage 2 parks the transmit
//! antennas and moves the `N` receive antennas `J/N` times to cover a
//! `J_x × J_y` block. Both stages produce a matrix whose rows follow the
//! y-fastest probe order, so they fold directly into third-order tensors
//! `(y, x, antenna)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{field_response_rx, field_response_tx, GridSpec, MultipathChannel, Parking, Position, PositionSet, ScenarioConfig};
use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, ComplexTensor3};
use crate::rng::complex_gaussian;

/// Antenna positions and pilot sequence for one training round.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotPlan {
    /// Parking positions `t̃^0` of the M transmit antennas.
    pub tx_initial: PositionSet,
    /// Parking positions `r̃^0` of the N receive antennas.
    pub rx_initial: PositionSet,
    /// Stage-1 probe positions, y fastest within x.
    pub tx_moves: PositionSet,
    /// Stage-2 receive-array placements, `J/N` groups of `N`.
    pub rx_moves: Vec<PositionSet>,
    /// Stage-2 pilot matrix `S` (`M × M_p`) with `S·S^H = I`.
    pub pilot_matrix: ComplexMatrix,
    pub tx_area: [usize; 2],
    pub rx_area: [usize; 2],
}

impl PilotPlan {
    /// All stage-2 receive positions in stacking order.
    pub fn rx_probe_positions(&self) -> PositionSet {
        self.rx_moves.iter().flat_map(|g| g.coords.iter().copied()).collect()
    }

    pub fn pilot_length(&self) -> usize {
        self.pilot_matrix.ncols()
    }

    /// Pilot symbols spent: `I + (J/N)·M_p`.
    pub fn pilot_symbols(&self) -> usize {
        self.tx_moves.len() + self.rx_moves.len() * self.pilot_length()
    }
}

/// Unitary DFT pilot matrix scaled so that `S·S^H = I_M`.
pub fn make_pilot_matrix(m: usize) -> Result<ComplexMatrix> {
    if m == 0 {
        return Err(Error::Argument("pilot matrix needs at least one antenna".into()));
    }
    let scale = 1.0 / (m as f64).sqrt();
    Ok(ComplexMatrix::from_fn(m, m, |r, c| {
        // Reduce the exponent first to keep the phase exact for large r·c.
        let k = (r * c) % m;
        Complex64::from_polar(scale, -2.0 * PI * k as f64 / m as f64)
    }))
}

/// Grid cells ordered by distance to the corner at `(cx, cy)` (0 = low
/// edge, 1 = high edge), ties broken by x-fastest enumeration order.
fn cells_near_corner(grid: &GridSpec, cx: usize, cy: usize) -> Vec<(usize, usize)> {
    let mut cells: Vec<(usize, usize)> = (0..grid.ny).flat_map(|iy| (0..grid.nx).map(move |ix| (ix, iy))).collect();
    let flip = |i: usize, n: usize, hi: usize| if hi == 1 { n - 1 - i } else { i };
    // Distance² in cell units is exact in integers: (2i+1)² summed over axes.
    cells.sort_by_key(|&(ix, iy)| (2 * flip(ix, grid.nx, cx) + 1).pow(2) + (2 * flip(iy, grid.ny, cy) + 1).pow(2));
    cells
}

fn parking_cells(grid: &GridSpec, count: usize, parking: Parking) -> PositionSet {
    let corners: &[(usize, usize)] = match parking {
        Parking::NearestVertex => &[(0, 0)],
        Parking::Vertices => &[(0, 0), (1, 1), (1, 0), (0, 1)],
    };
    let lists: Vec<_> = corners.iter().map(|&(cx, cy)| cells_near_corner(grid, cx, cy)).collect();
    let mut taken = Vec::with_capacity(count);
    let mut cursor = vec![0; lists.len()];
    for k in 0..count {
        let c = k % lists.len();
        while taken.contains(&lists[c][cursor[c]]) {
            cursor[c] += 1;
        }
        taken.push(lists[c][cursor[c]]);
    }
    taken.into_iter().map(|(ix, iy)| grid.center(ix, iy)).collect()
}

/// `area[0] × area[1]` block in the corner opposite the origin, y fastest.
fn probe_block(grid: &GridSpec, area: [usize; 2]) -> PositionSet {
    let (x0, y0) = (grid.nx - area[0], grid.ny - area[1]);
    (x0..grid.nx)
        .flat_map(|ix| (y0..grid.ny).map(move |iy| (ix, iy)))
        .map(|(ix, iy)| grid.center(ix, iy))
        .collect()
}

pub fn build_pilot_plan(cfg: &ScenarioConfig) -> Result<PilotPlan> {
    cfg.validate()?;
    let tx_grid = cfg.tx_grid()?;
    let rx_grid = cfg.rx_grid()?;
    let rx_probes = probe_block(&rx_grid, cfg.rx_pilot_area);
    let n = cfg.rx_antennas;
    let rx_moves = rx_probes
        .coords
        .chunks(n)
        .map(|c| PositionSet::new(c.to_vec()))
        .collect();
    Ok(PilotPlan {
        tx_initial: parking_cells(&tx_grid, cfg.tx_antennas, cfg.parking),
        rx_initial: parking_cells(&rx_grid, cfg.rx_antennas, cfg.parking),
        tx_moves: probe_block(&tx_grid, cfg.tx_pilot_area),
        rx_moves,
        pilot_matrix: make_pilot_matrix(cfg.tx_antennas)?,
        tx_area: cfg.tx_pilot_area,
        rx_area: cfg.rx_pilot_area,
    })
}

/// Folds a `(dx·dy) × k` matrix with y-fastest rows into a `dy × dx × k` tensor.
pub fn tensorize(m: &ComplexMatrix, area: [usize; 2]) -> Result<ComplexTensor3> {
    let [dx, dy] = area;
    if m.nrows() != dx * dy {
        return Err(Error::Dimension(format!(
            "{} rows cannot be laid out on a {dx}x{dy} probe area",
            m.nrows()
        )));
    }
    Ok(ComplexTensor3::from_fn([dy, dx, m.ncols()], |y, x, k| m[(x * dy + y, k)]))
}

/// Inverse of [`tensorize`].
pub fn matricize(t: &ComplexTensor3) -> ComplexMatrix {
    let [dy, dx, k] = t.dims();
    ComplexMatrix::from_fn(dx * dy, k, |row, c| t.get(row % dy, row / dy, c))
}

/// Received pilot signals of both stages.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotObservation {
    /// `Y^t`, `N × I`, pilot symbols removed.
    pub y_t_matrix: ComplexMatrix,
    /// `(Y^t)^H` folded to `I_y × I_x × N`.
    pub y_t_tensor: ComplexTensor3,
    /// `Ȳ^r`, `J × M`, pilot-matched and stacked over moves.
    pub y_r_matrix: ComplexMatrix,
    /// `Ȳ^r` folded to `J_y × J_x × M`.
    pub y_r_tensor: ComplexTensor3,
}

impl PilotObservation {
    pub fn from_matrices(y_t: ComplexMatrix, y_r: ComplexMatrix, tx_area: [usize; 2], rx_area: [usize; 2]) -> Result<Self> {
        let y_t_tensor = tensorize(&y_t.adjoint(), tx_area)?;
        let y_r_tensor = tensorize(&y_r, rx_area)?;
        Ok(Self {
            y_t_matrix: y_t,
            y_t_tensor,
            y_r_matrix: y_r,
            y_r_tensor,
        })
    }

    pub fn tx_area(&self) -> [usize; 2] {
        let [dy, dx, _] = self.y_t_tensor.dims();
        [dx, dy]
    }

    pub fn rx_area(&self) -> [usize; 2] {
        let [dy, dx, _] = self.y_r_tensor.dims();
        [dx, dy]
    }

    /// Checks the tensor/matrix layout invariant for both stages.
    pub fn check_consistency(&self) -> Result<()> {
        let [dy, dx, n] = self.y_t_tensor.dims();
        if self.y_t_matrix.shape() != (n, dx * dy) {
            return Err(Error::Dimension(format!(
                "stage-1 matrix {:?} does not match tensor {:?}",
                self.y_t_matrix.shape(),
                self.y_t_tensor.dims()
            )));
        }
        let [jy, jx, m] = self.y_r_tensor.dims();
        if self.y_r_matrix.shape() != (jx * jy, m) {
            return Err(Error::Dimension(format!(
                "stage-2 matrix {:?} does not match tensor {:?}",
                self.y_r_matrix.shape(),
                self.y_r_tensor.dims()
            )));
        }
        if matricize(&self.y_t_tensor) != self.y_t_matrix.adjoint() {
            return Err(Error::Input("stage-1 tensor is not the conjugate transpose of the matrix".into()));
        }
        if matricize(&self.y_r_tensor) != self.y_r_matrix {
            return Err(Error::Input("stage-2 tensor does not match the matrix".into()));
        }
        Ok(())
    }
}

fn add_noise<R: Rng + ?Sized>(m: &mut ComplexMatrix, variance: f64, rng: &mut R) {
    if variance > 0.0 {
        // Column-major order: one probe (or pilot symbol) at a time.
        for z in m.iter_mut() {
            *z += complex_gaussian(rng, variance);
        }
    }
}

/// Stage 1: `Y^t = √P·F(r̃^0)^H Σ G(D^t) + Z^t` and its tensor form.
pub fn simulate_stage1<R: Rng + ?Sized>(
    plan: &PilotPlan,
    ch: &MultipathChannel,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<(ComplexMatrix, ComplexTensor3)> {
    let sqrt_p = cfg.transmit_power().sqrt();
    let f0 = field_response_rx(&plan.rx_initial, ch);
    let g = field_response_tx(&plan.tx_moves, ch);
    let mut y = (f0.adjoint() * &ch.prm * g) * Complex64::from(sqrt_p);
    add_noise(&mut y, cfg.noise_variance(), rng);
    let tensor = tensorize(&y.adjoint(), plan.tx_area)?;
    Ok((y, tensor))
}

/// Stage 2: per move `Y_j = √P·F(r̃_j)^H Σ G(t̃^0) S + Z_j`, matched by `S^H`
/// and stacked into `Ȳ^r` (`J × M`).
pub fn simulate_stage2<R: Rng + ?Sized>(
    plan: &PilotPlan,
    ch: &MultipathChannel,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<(ComplexMatrix, ComplexTensor3)> {
    let sqrt_p = Complex64::from(cfg.transmit_power().sqrt());
    let s = &plan.pilot_matrix;
    let sigma_g0s = &ch.prm * field_response_tx(&plan.tx_initial, ch) * s;
    let s_h = s.adjoint();
    let m = s.nrows();
    let j_total: usize = plan.rx_moves.iter().map(PositionSet::len).sum();
    let mut stacked = ComplexMatrix::zeros(j_total, m);
    let mut row = 0;
    for group in &plan.rx_moves {
        let f_j = field_response_rx(group, ch);
        let mut y_j = (f_j.adjoint() * &sigma_g0s) * sqrt_p;
        add_noise(&mut y_j, cfg.noise_variance(), rng);
        let matched = y_j * &s_h;
        stacked.rows_mut(row, group.len()).copy_from(&matched);
        row += group.len();
    }
    let tensor = tensorize(&stacked, plan.rx_area)?;
    Ok((stacked, tensor))
}

/// Runs both stages with a single noise stream (stage 1 first).
pub fn simulate<R: Rng + ?Sized>(
    plan: &PilotPlan,
    ch: &MultipathChannel,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<PilotObservation> {
    let (y_t_matrix, y_t_tensor) = simulate_stage1(plan, ch, cfg, rng)?;
    let (y_r_matrix, y_r_tensor) = simulate_stage2(plan, ch, cfg, rng)?;
    Ok(PilotObservation {
        y_t_matrix,
        y_t_tensor,
        y_r_matrix,
        y_r_tensor,
    })
}

/// Probe offsets relative to the first probe, in grid cells.
pub fn probe_offsets(set: &PositionSet, pitch: f64) -> Vec<(i64, i64)> {
    let Some(first) = set.coords.first().copied() else {
        return Vec::new();
    };
    set.iter()
        .map(|p: &Position| (((p.x - first.x) / pitch).round() as i64, ((p.y - first.y) / pitch).round() as i64))
        .collect()
}
