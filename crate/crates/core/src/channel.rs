//! Field-response multipath channel model.
//!
//! All lengths are in wavelengths. A path with virtual angles `(ϑ, φ)`
//! contributes the phase `2π/λ · (x·ϑ + y·φ)` at position `(x, y)`, and the
//! channel between receive positions `r̃` and transmit positions `t̃` is
//! `H = F(r̃)^H · Σ · G(t̃)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::rng::complex_gaussian;

const GRID_EPS: f64 = 1e-9;

/// Physical and protocol parameters of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Number of transmit-side movable antennas (M).
    pub tx_antennas: usize,
    /// Number of receive-side movable antennas (N).
    pub rx_antennas: usize,
    /// Transmit region `[A_x, A_y]` in wavelengths.
    pub tx_region: [f64; 2],
    /// Receive region `[B_x, B_y]` in wavelengths.
    pub rx_region: [f64; 2],
    /// Distance between adjacent grid centers (Δ).
    pub grid_pitch: f64,
    pub wavelength: f64,
    pub tx_paths: usize,
    pub rx_paths: usize,
    /// Average power ratio of diagonal to off-diagonal path-response entries.
    pub eta: f64,
    /// Transmit power to noise power ratio, dB. `inf` disables noise.
    pub snr_db: f64,
    /// Tx probe area `[I_x, I_y]` in grid cells.
    pub tx_pilot_area: [usize; 2],
    /// Rx probe area `[J_x, J_y]` in grid cells.
    pub rx_pilot_area: [usize; 2],
    /// Where the idle antennas sit while the other side probes.
    pub parking: Parking,
    pub seed: u64,
}

/// Placement of the parked antennas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parking {
    /// One antenna per region corner (origin, opposite, then the other two),
    /// further antennas on the next-nearest free cells of each corner in turn.
    #[default]
    Vertices,
    /// The cells nearest the origin corner.
    NearestVertex,
}

impl Default for ScenarioConfig {
    /// Desk-scale scenario: 4λ×4λ regions, Δ = λ/5, β^t = β^r = 25%.
    fn default() -> Self {
        Self {
            tx_antennas: 4,
            rx_antennas: 4,
            tx_region: [4.0, 4.0],
            rx_region: [4.0, 4.0],
            grid_pitch: 0.2,
            wavelength: 1.0,
            tx_paths: 3,
            rx_paths: 3,
            eta: 1.0,
            snr_db: 15.0,
            tx_pilot_area: [10, 10],
            rx_pilot_area: [10, 10],
            parking: Parking::Vertices,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// The 8λ×8λ setup with β^t = β^r = 25%.
    pub fn paper_preset() -> Self {
        Self {
            tx_region: [8.0, 8.0],
            rx_region: [8.0, 8.0],
            tx_pilot_area: [20, 20],
            rx_pilot_area: [20, 20],
            ..Self::default()
        }
    }

    pub fn tx_grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.tx_region, self.grid_pitch)
    }

    pub fn rx_grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.rx_region, self.grid_pitch)
    }

    /// Number of Tx probe positions `I = I_x·I_y`.
    pub fn tx_probes(&self) -> usize {
        self.tx_pilot_area[0] * self.tx_pilot_area[1]
    }

    /// Number of Rx probe positions `J = J_x·J_y`.
    pub fn rx_probes(&self) -> usize {
        self.rx_pilot_area[0] * self.rx_pilot_area[1]
    }

    pub fn transmit_power(&self) -> f64 {
        1.0
    }

    /// σ² = P·10^(−SNR/10).
    pub fn noise_variance(&self) -> f64 {
        self.transmit_power() * 10f64.powf(-self.snr_db / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |msg: String| Err(Error::Config(msg));
        if self.tx_antennas == 0 || self.rx_antennas == 0 {
            return cfg_err("tx_antennas and rx_antennas must be at least 1".into());
        }
        if self.tx_paths == 0 || self.rx_paths == 0 {
            return cfg_err("tx_paths and rx_paths must be at least 1".into());
        }
        if self.tx_paths != self.rx_paths {
            return cfg_err(format!(
                "tx_paths ({}) must equal rx_paths ({}) for the diagonal/off-diagonal path-response generator",
                self.tx_paths, self.rx_paths
            ));
        }
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return cfg_err("wavelength must be positive".into());
        }
        if !(self.grid_pitch.is_finite() && self.grid_pitch > 0.0) {
            return cfg_err("grid_pitch must be positive".into());
        }
        if self.grid_pitch > self.wavelength / 2.0 + GRID_EPS {
            return cfg_err(format!(
                "grid_pitch {} exceeds half a wavelength ({})",
                self.grid_pitch,
                self.wavelength / 2.0
            ));
        }
        if self.eta.is_nan() || self.eta <= 0.0 {
            return cfg_err("eta must be positive (inf allowed)".into());
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return cfg_err("snr_db must be a number or inf".into());
        }
        let tx = self.tx_grid()?;
        let rx = self.rx_grid()?;
        check_area("tx_pilot_area", self.tx_pilot_area, &tx)?;
        check_area("rx_pilot_area", self.rx_pilot_area, &rx)?;
        if self.tx_antennas > tx.count() {
            return cfg_err(format!("{} Tx antennas do not fit {} grid cells", self.tx_antennas, tx.count()));
        }
        if self.rx_antennas > rx.count() {
            return cfg_err(format!("{} Rx antennas do not fit {} grid cells", self.rx_antennas, rx.count()));
        }
        if self.rx_probes() % self.rx_antennas != 0 {
            return cfg_err(format!(
                "rx probe count J = {} is not divisible by rx_antennas N = {}",
                self.rx_probes(),
                self.rx_antennas
            ));
        }
        Ok(())
    }
}

fn check_area(name: &str, area: [usize; 2], grid: &GridSpec) -> Result<()> {
    if area[0] < 2 || area[1] < 2 {
        return Err(Error::Config(format!(
            "{name} {area:?} must span at least 2 cells along each axis"
        )));
    }
    if area[0] > grid.nx || area[1] > grid.ny {
        return Err(Error::Config(format!(
            "{name} {area:?} exceeds the {}x{} grid",
            grid.nx, grid.ny
        )));
    }
    Ok(())
}

/// Uniform grid over a rectangular region `[0, len_x] × [0, len_y]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub pitch: f64,
}

impl GridSpec {
    pub fn new(region: [f64; 2], pitch: f64) -> Result<Self> {
        let cells = |len: f64| -> Result<usize> {
            let n = len / pitch;
            let r = n.round();
            if !(len.is_finite() && len > 0.0) || r < 1.0 || (n - r).abs() > GRID_EPS * n.max(1.0) {
                return Err(Error::Config(format!(
                    "region length {len} is not a positive integer multiple of grid pitch {pitch}"
                )));
            }
            Ok(r as usize)
        };
        Ok(Self {
            nx: cells(region[0])?,
            ny: cells(region[1])?,
            pitch,
        })
    }

    pub fn count(&self) -> usize {
        self.nx * self.ny
    }

    /// Center of grid cell `(ix, iy)`.
    pub fn center(&self, ix: usize, iy: usize) -> Position {
        Position {
            x: (ix as f64 + 0.5) * self.pitch,
            y: (iy as f64 + 0.5) * self.pitch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

/// Ordered list of antenna positions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PositionSet {
    pub coords: Vec<Position>,
}

impl PositionSet {
    pub fn new(coords: Vec<Position>) -> Self {
        Self { coords }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Position> {
        self.coords.iter()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.coords.iter().map(|p| Position { x: p.x + dx, y: p.y + dy }).collect())
    }
}

impl FromIterator<Position> for PositionSet {
    fn from_iter<I: IntoIterator<Item = Position>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// All grid centers of a region, x fastest.
pub fn enumerate_grid(region: [f64; 2], pitch: f64) -> Result<PositionSet> {
    let grid = GridSpec::new(region, pitch)?;
    Ok((0..grid.ny)
        .flat_map(|iy| (0..grid.nx).map(move |ix| grid.center(ix, iy)))
        .collect())
}

/// Virtual angles (directional cosines) of a set of paths.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PathAngles {
    /// ϑ = cos θ · sin φ
    pub theta: Vec<f64>,
    /// φ_v = cos φ
    pub phi: Vec<f64>,
}

impl PathAngles {
    pub fn new(theta: Vec<f64>, phi: Vec<f64>) -> Self {
        debug_assert_eq!(theta.len(), phi.len());
        Self { theta, phi }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Maps azimuth/elevation pairs (radians) to virtual angles.
    pub fn from_physical(phys: &PhysicalAngles) -> Self {
        let (theta, phi) = phys
            .azimuth
            .iter()
            .zip(&phys.elevation)
            .map(|(&az, &el)| (az.cos() * el.sin(), el.cos()))
            .unzip();
        Self { theta, phi }
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            theta: perm.iter().map(|&p| self.theta[p]).collect(),
            phi: perm.iter().map(|&p| self.phi[p]).collect(),
        }
    }
}

/// Azimuth/elevation angles in radians.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PhysicalAngles {
    pub azimuth: Vec<f64>,
    pub elevation: Vec<f64>,
}

/// Ground-truth multipath channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MultipathChannel {
    pub aod: PathAngles,
    pub aoa: PathAngles,
    pub aod_physical: Option<PhysicalAngles>,
    pub aoa_physical: Option<PhysicalAngles>,
    /// Path-response matrix Σ, `L_r × L_t`.
    pub prm: ComplexMatrix,
    pub wavelength: f64,
}

impl MultipathChannel {
    pub fn new(aod: PathAngles, aoa: PathAngles, prm: ComplexMatrix, wavelength: f64) -> Result<Self> {
        if prm.shape() != (aoa.len(), aod.len()) {
            return Err(Error::Dimension(format!(
                "path-response matrix must be {}x{}, got {:?}",
                aoa.len(),
                aod.len(),
                prm.shape()
            )));
        }
        Ok(Self {
            aod,
            aoa,
            aod_physical: None,
            aoa_physical: None,
            prm,
            wavelength,
        })
    }

    pub fn tx_paths(&self) -> usize {
        self.aod.len()
    }

    pub fn rx_paths(&self) -> usize {
        self.aoa.len()
    }
}

/// Field-response matrix: entry `(l, m)` is `exp(j·2π/λ·(x_m ϑ_l + y_m φ_l))`.
pub fn field_response(pos: &PositionSet, angles: &PathAngles, wavelength: f64) -> ComplexMatrix {
    let k = 2.0 * PI / wavelength;
    ComplexMatrix::from_fn(angles.len(), pos.len(), |l, m| {
        let p = pos.coords[m];
        Complex64::from_polar(1.0, k * (p.x * angles.theta[l] + p.y * angles.phi[l]))
    })
}

/// `G(t̃)`, `L_t × |pos|`.
pub fn field_response_tx(pos: &PositionSet, ch: &MultipathChannel) -> ComplexMatrix {
    field_response(pos, &ch.aod, ch.wavelength)
}

/// `F(r̃)`, `L_r × |pos|`.
pub fn field_response_rx(pos: &PositionSet, ch: &MultipathChannel) -> ComplexMatrix {
    field_response(pos, &ch.aoa, ch.wavelength)
}

/// `H(r̃, t̃) = F(r̃)^H Σ G(t̃)`.
pub fn channel_matrix(rx_pos: &PositionSet, tx_pos: &PositionSet, ch: &MultipathChannel) -> ComplexMatrix {
    field_response_rx(rx_pos, ch).adjoint() * &ch.prm * field_response_tx(tx_pos, ch)
}

/// Variances `(diagonal, off_diagonal)` of the path-response entries.
///
/// With a single receive path there are no off-diagonal entries, and the
/// lone entry carries unit power.
pub fn prm_variances(eta: f64, rx_paths: usize) -> (f64, f64) {
    let l = rx_paths as f64;
    if rx_paths <= 1 {
        return (1.0, 0.0);
    }
    if eta.is_infinite() {
        return (1.0 / l, 0.0);
    }
    (eta / ((eta + 1.0) * l), 1.0 / ((eta + 1.0) * (l - 1.0) * l))
}

fn uniform_angles<R: Rng + ?Sized>(rng: &mut R, count: usize) -> PhysicalAngles {
    let mut draw = || (0..count).map(|_| rng.random_range(0.0..=PI)).collect::<Vec<_>>();
    let azimuth = draw();
    let elevation = draw();
    PhysicalAngles { azimuth, elevation }
}

/// Draws a random channel: i.i.d. uniform `[0, π]` azimuth and elevation per
/// path, complex Gaussian path responses split by `eta`.
pub fn generate_channel<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<MultipathChannel> {
    if cfg.tx_paths != cfg.rx_paths {
        return Err(Error::Config(format!(
            "path-response generator needs tx_paths == rx_paths, got {} and {}",
            cfg.tx_paths, cfg.rx_paths
        )));
    }
    let aod_phys = uniform_angles(rng, cfg.tx_paths);
    let aoa_phys = uniform_angles(rng, cfg.rx_paths);
    let (var_diag, var_off) = prm_variances(cfg.eta, cfg.rx_paths);
    let mut prm = ComplexMatrix::zeros(cfg.rx_paths, cfg.tx_paths);
    // Column-major draw order so the stream layout matches vec(Σ).
    for c in 0..cfg.tx_paths {
        for r in 0..cfg.rx_paths {
            let var = if r == c { var_diag } else { var_off };
            prm[(r, c)] = complex_gaussian(rng, var);
        }
    }
    let mut ch = MultipathChannel::new(
        PathAngles::from_physical(&aod_phys),
        PathAngles::from_physical(&aoa_phys),
        prm,
        cfg.wavelength,
    )?;
    ch.aod_physical = Some(aod_phys);
    ch.aoa_physical = Some(aoa_phys);
    Ok(ch)
}
