//! Compressed-sensing baselines: OMP and SOMP over a uniform grid of
//! virtual angles.
//!
//! Both stages expose the steering vectors through the column space of the
//! observation: the columns of `(Y^t)^H` live in the span of `G(D^t)^H`, and
//! the columns of the stacked `Ȳ^r` in the span of `F(D^r)^H`. Atoms therefore
//! carry the conjugate phase `exp(−j2π/λ·(xϑ + yφ))`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{PathAngles, PositionSet, ScenarioConfig};
use crate::error::{Error, Result};
use crate::estimate::{finish_with_angles, AngleEstimates, EstimationResult};
use crate::linalg::{least_squares, ComplexMatrix};
use crate::pilot::{PilotObservation, PilotPlan};

pub const DEFAULT_GRID_SIZE: usize = 64;

/// Steering-vector dictionaries for both stages.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleDictionary {
    pub grid_size: usize,
    /// `I × K²`, atom `k·K + q` is `(ϑ_k, φ_q)`.
    pub atoms_tx: ComplexMatrix,
    /// `J × K²`.
    pub atoms_rx: ComplexMatrix,
}

impl AngleDictionary {
    /// Virtual-angle pair `(ϑ, φ)` of atom `index`.
    pub fn angles_of(&self, index: usize) -> (f64, f64) {
        let k = self.grid_size;
        (grid_value(index / k, k), grid_value(index % k, k))
    }
}

fn grid_value(i: usize, k: usize) -> f64 {
    -1.0 + 2.0 * i as f64 / (k - 1) as f64
}

/// Atoms `exp(−j2π/λ·(xϑ_k + yφ_q))` at each position, for the `K × K` grid.
pub fn steering_atoms(pos: &PositionSet, k: usize, wavelength: f64) -> Result<ComplexMatrix> {
    if k < 2 {
        return Err(Error::Argument(format!("dictionary grid needs at least 2 points per axis, got {k}")));
    }
    let scale = 2.0 * PI / wavelength;
    Ok(ComplexMatrix::from_fn(pos.len(), k * k, |i, a| {
        let p = pos.coords[i];
        let (theta, phi) = (grid_value(a / k, k), grid_value(a % k, k));
        Complex64::from_polar(1.0, -scale * (p.x * theta + p.y * phi))
    }))
}

pub fn build_dictionary(plan: &PilotPlan, cfg: &ScenarioConfig, k: usize) -> Result<AngleDictionary> {
    Ok(AngleDictionary {
        grid_size: k,
        atoms_tx: steering_atoms(&plan.tx_moves, k, cfg.wavelength)?,
        atoms_rx: steering_atoms(&plan.rx_probe_positions(), k, cfg.wavelength)?,
    })
}

/// Greedy sparse fit.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFit {
    /// Selected atom indices in selection order.
    pub support: Vec<usize>,
    /// LS coefficients on the support, `|support| × columns`.
    pub coefficients: ComplexMatrix,
    /// Frobenius norm of the residual before the first and after each selection.
    pub residual_norms: Vec<f64>,
}

fn check_sparse_args(rows: usize, dict: &ComplexMatrix, sparsity: usize) -> Result<()> {
    if sparsity == 0 {
        return Err(Error::Argument("sparsity must be at least 1".into()));
    }
    if sparsity > dict.ncols() {
        return Err(Error::Argument(format!(
            "sparsity {sparsity} exceeds the {} available atoms",
            dict.ncols()
        )));
    }
    if rows != dict.nrows() {
        return Err(Error::Dimension(format!(
            "measurement length {rows} does not match dictionary rows {}",
            dict.nrows()
        )));
    }
    Ok(())
}

fn refit(dict: &ComplexMatrix, support: &[usize], y: &ComplexMatrix) -> Result<(ComplexMatrix, ComplexMatrix)> {
    let a = dict.select_columns(support);
    let coef = least_squares(&a, y)?;
    let residual = y - &a * &coef;
    Ok((coef, residual))
}

/// Orthogonal matching pursuit for a single measurement vector.
pub fn omp(y: &[Complex64], dict: &ComplexMatrix, sparsity: usize) -> Result<SparseFit> {
    check_sparse_args(y.len(), dict, sparsity)?;
    let y = ComplexMatrix::from_column_slice(y.len(), 1, y);
    let mut residual = y.clone();
    let mut support = Vec::with_capacity(sparsity);
    let mut norms = vec![residual.norm()];
    let mut coef = ComplexMatrix::zeros(0, 1);
    for _ in 0..sparsity {
        let mut best: Option<(usize, f64)> = None;
        for (idx, atom) in dict.column_iter().enumerate() {
            if support.contains(&idx) {
                continue;
            }
            let score = atom.dotc(&residual.column(0)).norm_sqr() / atom.norm_squared();
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((idx, score));
            }
        }
        let (idx, _) = best.expect("sparsity bounded by atom count");
        support.push(idx);
        (coef, residual) = refit(dict, &support, &y)?;
        norms.push(residual.norm());
    }
    Ok(SparseFit {
        support,
        coefficients: coef,
        residual_norms: norms,
    })
}

/// Simultaneous OMP: one support shared by all columns of `y`, chosen by
/// summed squared correlation.
pub fn somp(y: &ComplexMatrix, dict: &ComplexMatrix, sparsity: usize) -> Result<SparseFit> {
    check_sparse_args(y.nrows(), dict, sparsity)?;
    let mut residual = y.clone();
    let mut support = Vec::with_capacity(sparsity);
    let mut norms = vec![residual.norm()];
    let mut coef = ComplexMatrix::zeros(0, y.ncols());
    for _ in 0..sparsity {
        let mut best: Option<(usize, f64)> = None;
        for (idx, atom) in dict.column_iter().enumerate() {
            if support.contains(&idx) {
                continue;
            }
            let energy = atom.norm_squared();
            let score: f64 = residual.column_iter().map(|r| atom.dotc(&r).norm_sqr() / energy).sum();
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((idx, score));
            }
        }
        let (idx, _) = best.expect("sparsity bounded by atom count");
        support.push(idx);
        (coef, residual) = refit(dict, &support, y)?;
        norms.push(residual.norm());
    }
    Ok(SparseFit {
        support,
        coefficients: coef,
        residual_norms: norms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsVariant {
    /// OMP on the highest-energy observation column of each stage.
    Omp,
    /// SOMP on all observation columns of each stage.
    Somp,
}

fn strongest_column(m: &ComplexMatrix) -> Vec<Complex64> {
    let mut best = 0;
    let mut best_energy = f64::NEG_INFINITY;
    for (c, col) in m.column_iter().enumerate() {
        let e = col.norm_squared();
        if e > best_energy {
            best = c;
            best_energy = e;
        }
    }
    m.column(best).iter().copied().collect()
}

fn support_angles(dict: &AngleDictionary, support: &[usize]) -> PathAngles {
    let (theta, phi) = support.iter().map(|&i| dict.angles_of(i)).unzip();
    PathAngles::new(theta, phi)
}

fn stage_support(y: &ComplexMatrix, atoms: &ComplexMatrix, sparsity: usize, variant: CsVariant) -> Result<Vec<usize>> {
    let fit = match variant {
        CsVariant::Omp => omp(&strongest_column(y), atoms, sparsity)?,
        CsVariant::Somp => somp(y, atoms, sparsity)?,
    };
    Ok(fit.support)
}

/// Sparse-recovery baseline over a prebuilt dictionary: on-grid angles from
/// both stages, then the same stacked gain solve as the tensor estimator.
pub fn cs_estimate_with(
    obs: &PilotObservation,
    plan: &PilotPlan,
    cfg: &ScenarioConfig,
    dict: &AngleDictionary,
    variant: CsVariant,
) -> Result<EstimationResult> {
    let y_t_bar = obs.y_t_matrix.adjoint();
    let tx_support = stage_support(&y_t_bar, &dict.atoms_tx, cfg.tx_paths, variant).map_err(|e| e.at("Tx support recovery"))?;
    let rx_support = stage_support(&obs.y_r_matrix, &dict.atoms_rx, cfg.rx_paths, variant).map_err(|e| e.at("Rx support recovery"))?;
    let angles = AngleEstimates {
        tx: support_angles(dict, &tx_support),
        rx: support_angles(dict, &rx_support),
        clipped: 0,
    };
    let mut result = finish_with_angles(obs, plan, cfg, angles, Vec::new()).map_err(|e| e.at("path-response estimation"))?;
    result.iterations = tx_support.len() + rx_support.len();
    Ok(result)
}

pub fn cs_estimate(
    obs: &PilotObservation,
    plan: &PilotPlan,
    cfg: &ScenarioConfig,
    k: usize,
    variant: CsVariant,
) -> Result<EstimationResult> {
    let dict = build_dictionary(plan, cfg, k)?;
    cs_estimate_with(obs, plan, cfg, &dict, variant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_channel, MultipathChannel, Position};
    use crate::pilot::{build_pilot_plan, simulate};
    use crate::rng::stream;
    use crate::testutil::random_matrix;

    fn small_cfg() -> ScenarioConfig {
        ScenarioConfig {
            tx_pilot_area: [6, 6],
            rx_pilot_area: [6, 6],
            snr_db: f64::INFINITY,
            ..ScenarioConfig::default()
        }
    }

    fn line(n: usize) -> PositionSet {
        (0..n).map(|i| Position { x: 0.2 * i as f64, y: 0.1 * (i % 3) as f64 }).collect()
    }

    #[test]
    fn coarse_grid_has_four_atoms_at_extremes() {
        let d = steering_atoms(&line(5), 2, 1.0).unwrap();
        assert_eq!(d.ncols(), 4);
        let dict = AngleDictionary {
            grid_size: 2,
            atoms_tx: d.clone(),
            atoms_rx: d,
        };
        let got: Vec<_> = (0..4).map(|i| dict.angles_of(i)).collect();
        assert_eq!(got, vec![(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)]);
        assert!(steering_atoms(&line(5), 1, 1.0).is_err());
    }

    #[test]
    fn zero_angle_atom_is_all_ones_and_entries_unit_modulus() {
        // K = 3 puts 0 at grid index 1 on both axes.
        let d = steering_atoms(&line(7), 3, 1.0).unwrap();
        for v in d.column(4).iter() {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
        assert!(d.iter().all(|v| (v.norm() - 1.0).abs() < 1e-14));
    }

    #[test]
    fn normalized_gram_has_unit_diagonal() {
        let d = steering_atoms(&line(9), 4, 1.0).unwrap();
        let rows = d.nrows() as f64;
        let gram = d.adjoint() * &d / Complex64::from(rows);
        for i in 0..gram.nrows() {
            assert!((gram[(i, i)] - Complex64::new(1.0, 0.0)).norm() < 1e-13);
        }
    }

    #[test]
    fn omp_recovers_single_atom() {
        let cfg = small_cfg();
        let plan = build_pilot_plan(&cfg).unwrap();
        let dict = build_dictionary(&plan, &cfg, 16).unwrap();
        let y: Vec<_> = dict.atoms_tx.column(77).iter().map(|v| v * Complex64::new(0.3, -2.0)).collect();
        let fit = omp(&y, &dict.atoms_tx, 1).unwrap();
        assert_eq!(fit.support, vec![77]);
        assert!(*fit.residual_norms.last().unwrap() < 1e-12);
    }

    #[test]
    fn omp_recovers_two_separated_atoms_and_residual_decreases() {
        let cfg = small_cfg();
        let plan = build_pilot_plan(&cfg).unwrap();
        let dict = build_dictionary(&plan, &cfg, 16).unwrap();
        let (a, b) = (3 * 16 + 4, 12 * 16 + 11);
        let y: Vec<_> = (0..dict.atoms_tx.nrows())
            .map(|i| dict.atoms_tx[(i, a)] * 1.5 + dict.atoms_tx[(i, b)] * Complex64::new(0.0, 0.8))
            .collect();
        let fit = omp(&y, &dict.atoms_tx, 2).unwrap();
        let mut got = fit.support.clone();
        got.sort();
        assert_eq!(got, vec![a, b]);
        assert!(fit.residual_norms.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        // Residual is orthogonal to the selected atoms.
        let r = ComplexMatrix::from_column_slice(y.len(), 1, &y) - dict.atoms_tx.select_columns(&fit.support) * &fit.coefficients;
        for &s in &fit.support {
            assert!(dict.atoms_tx.column(s).dotc(&r.column(0)).norm() < 1e-10);
        }
    }

    #[test]
    fn off_grid_residual_bounded_by_dictionary_span_projection() {
        let cfg = small_cfg();
        let plan = build_pilot_plan(&cfg).unwrap();
        let dict = build_dictionary(&plan, &cfg, 8).unwrap();
        let y: Vec<_> = plan
            .tx_moves
            .iter()
            .map(|p| Complex64::from_polar(1.0, -2.0 * PI * (p.x * 0.123 + p.y * -0.456)))
            .collect();
        let yv = ComplexMatrix::from_column_slice(y.len(), 1, &y);
        let (_, full_residual) = refit(&dict.atoms_tx, &(0..dict.atoms_tx.ncols()).collect::<Vec<_>>(), &yv).unwrap();
        let fit = omp(&y, &dict.atoms_tx, 3).unwrap();
        assert!(*fit.residual_norms.last().unwrap() >= full_residual.norm() - 1e-9);
    }

    #[test]
    fn somp_single_column_matches_omp() {
        let mut rng = stream(3, &[]);
        let dict = random_matrix(&mut rng, 12, 40);
        for _ in 0..20 {
            let y = random_matrix(&mut rng, 12, 1);
            let a = omp(y.as_slice(), &dict, 4).unwrap();
            let b = somp(&y, &dict, 4).unwrap();
            assert_eq!(a.support, b.support);
            assert_eq!(b.support.len(), 4);
        }
    }

    #[test]
    fn somp_finds_shared_atom_once() {
        let cfg = small_cfg();
        let plan = build_pilot_plan(&cfg).unwrap();
        let dict = build_dictionary(&plan, &cfg, 16).unwrap();
        let atom = dict.atoms_tx.column(100);
        let y = ComplexMatrix::from_fn(atom.nrows(), 2, |i, c| atom[i] * if c == 0 { Complex64::new(2.0, 0.0) } else { Complex64::new(0.0, -0.5) });
        let fit = somp(&y, &dict.atoms_tx, 1).unwrap();
        assert_eq!(fit.support, vec![100]);
    }

    #[test]
    fn sparse_argument_errors() {
        let d = ComplexMatrix::zeros(3, 4);
        assert!(omp(&[Complex64::new(1.0, 0.0); 3], &d, 0).is_err());
        assert!(omp(&[Complex64::new(1.0, 0.0); 3], &d, 5).is_err());
        assert!(omp(&[Complex64::new(1.0, 0.0); 2], &d, 1).is_err());
    }

    fn on_grid_channel(cfg: &ScenarioConfig, k: usize, seed: u64) -> MultipathChannel {
        let mut rng = stream(seed, &[]);
        let ch = generate_channel(cfg, &mut rng).unwrap();
        let snap = |i: usize| grid_value(i, k);
        let aod = PathAngles::new(vec![snap(3), snap(20), snap(41)], vec![snap(50), snap(9), snap(30)]);
        let aoa = PathAngles::new(vec![snap(60), snap(12), snap(33)], vec![snap(5), snap(44), snap(25)]);
        MultipathChannel::new(aod, aoa, ch.prm, cfg.wavelength).unwrap()
    }

    #[test]
    fn on_grid_noiseless_recovery_is_exact() {
        let cfg = ScenarioConfig {
            snr_db: f64::INFINITY,
            ..ScenarioConfig::default()
        };
        let plan = build_pilot_plan(&cfg).unwrap();
        let ch = on_grid_channel(&cfg, 64, 9);
        let mut rng = stream(1, &[]);
        let obs = simulate(&plan, &ch, &cfg, &mut rng).unwrap();
        for variant in [CsVariant::Somp, CsVariant::Omp] {
            let mut res = cs_estimate(&obs, &plan, &cfg, 64, variant).unwrap();
            let nmse = res.score_full_grid(&ch, &cfg).unwrap();
            assert!(nmse < 1e-8, "{variant:?}: {nmse:e}");
        }
    }

    #[test]
    fn off_grid_high_snr_saturates() {
        let cfg = ScenarioConfig {
            snr_db: f64::INFINITY,
            ..ScenarioConfig::default()
        };
        let plan = build_pilot_plan(&cfg).unwrap();
        let mut rng = stream(21, &[]);
        let ch = generate_channel(&cfg, &mut rng).unwrap();
        let obs = simulate(&plan, &ch, &cfg, &mut rng).unwrap();
        let mut res = cs_estimate(&obs, &plan, &cfg, 16, CsVariant::Somp).unwrap();
        let nmse = res.score_full_grid(&ch, &cfg).unwrap();
        assert!(nmse > 1e-6, "{nmse:e}");
    }
}
