//! Canonical polyadic decomposition of third-order complex tensors by
//! alternating least squares.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{khatri_rao, least_squares, pseudo_inverse, ComplexMatrix, ComplexTensor3};
use crate::rng::{complex_gaussian, stream};

/// Factor matrices `(U1, U2, U3)` of a rank-L CP model.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    pub u1: ComplexMatrix,
    pub u2: ComplexMatrix,
    pub u3: ComplexMatrix,
}

impl FactorSet {
    pub fn new(u1: ComplexMatrix, u2: ComplexMatrix, u3: ComplexMatrix) -> Result<Self> {
        if u1.ncols() != u2.ncols() || u2.ncols() != u3.ncols() {
            return Err(Error::Dimension(format!(
                "factor column counts differ: {}, {}, {}",
                u1.ncols(),
                u2.ncols(),
                u3.ncols()
            )));
        }
        Ok(Self { u1, u2, u3 })
    }

    pub fn rank(&self) -> usize {
        self.u1.ncols()
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.u1.nrows(), self.u2.nrows(), self.u3.nrows()]
    }

    /// Same permutation of the components in every factor.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let pick = |m: &ComplexMatrix| ComplexMatrix::from_fn(m.nrows(), perm.len(), |r, c| m[(r, perm[c])]);
        Self {
            u1: pick(&self.u1),
            u2: pick(&self.u2),
            u3: pick(&self.u3),
        }
    }

    /// Equalizes the column norms of the three factors without changing
    /// the rank-one terms.
    pub fn rebalance(&mut self) {
        for l in 0..self.rank() {
            let n = [self.u1.column(l).norm(), self.u2.column(l).norm(), self.u3.column(l).norm()];
            if n.iter().any(|&x| x == 0.0 || !x.is_finite()) {
                continue;
            }
            let g = (n[0] * n[1] * n[2]).cbrt();
            self.u1.column_mut(l).scale_mut(g / n[0]);
            self.u2.column_mut(l).scale_mut(g / n[1]);
            self.u3.column_mut(l).scale_mut(g / n[2]);
        }
    }
}

/// `t[i, j, k] = Σ_l u1[i,l]·u2[j,l]·u3[k,l]`.
pub fn reconstruct(f: &FactorSet) -> ComplexTensor3 {
    // Mode-3 unfolding U3·(U2 ⊙ U1)^T, folded back.
    let kr = khatri_rao(&f.u2, &f.u1).expect("factor ranks agree");
    let m3 = &f.u3 * kr.transpose();
    ComplexTensor3::fold(&m3, 3, f.dims()).expect("shape follows from factors")
}

/// Kruskal-type sufficient condition for essential uniqueness:
/// `min(d1, L) + min(d2, L) + min(d3, L) ≥ 2L + 2`.
pub fn kruskal_ok(d1: usize, d2: usize, d3: usize, rank: usize) -> bool {
    d1.min(rank) + d2.min(rank) + d3.min(rank) >= 2 * rank + 2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    RandomGaussian,
    SvdUnfolding,
    /// Generalized eigendecomposition of two random slice mixtures, tried with
    /// each mode as the slice mode. Exact on noiseless tensors with two
    /// dimensions `≥ L` and the third `≥ 2`; falls back to
    /// [`InitStrategy::SvdUnfolding`] otherwise.
    Gevd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlsOptions {
    pub max_iters: usize,
    /// Stop when the relative change of the residual drops below this.
    pub tol: f64,
    /// Stop once the relative residual itself is below this.
    pub residual_floor: f64,
    /// Random restarts on top of the GEVD and SVD starts.
    pub restarts: usize,
    pub rebalance_every: usize,
    pub seed: u64,
}

impl Default for AlsOptions {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            tol: 1e-10,
            residual_floor: 1e-13,
            restarts: 3,
            rebalance_every: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AlsReport {
    pub iterations: usize,
    /// Relative Frobenius residual after each full sweep.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    /// Which run produced the kept factors (0: GEVD, 1: SVD, then random).
    pub restart: usize,
}

impl AlsReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::INFINITY)
    }

    /// Per-iteration residuals as `label,restart,iteration,residual` lines.
    pub fn write_trace_csv<W: Write>(&self, mut w: W, label: &str) -> std::io::Result<()> {
        for (k, r) in self.residual_history.iter().enumerate() {
            writeln!(w, "{label},{},{},{:e}", self.restart, k + 1, r)?;
        }
        Ok(())
    }
}

fn random_factor<R: Rng + ?Sized>(rng: &mut R, rows: usize, rank: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, rank, |_, _| complex_gaussian(rng, 1.0))
}

/// Starting factors for ALS.
pub fn init_factors<R: Rng + ?Sized>(
    t: &ComplexTensor3,
    rank: usize,
    strategy: InitStrategy,
    rng: &mut R,
) -> Result<FactorSet> {
    let dims = t.dims();
    if strategy == InitStrategy::Gevd {
        return match gevd_best(t, rank, rng)? {
            Some(f) => Ok(f),
            None => init_factors(t, rank, InitStrategy::SvdUnfolding, rng),
        };
    }
    let mut factors = Vec::with_capacity(3);
    for (mode, &d) in (1..=3).zip(dims.iter()) {
        let u = match strategy {
            InitStrategy::RandomGaussian => random_factor(rng, d, rank),
            _ => {
                let u = leading_left_vectors(&t.unfold(mode)?, rank);
                let mut out = random_factor(rng, d, rank);
                for c in 0..u.ncols() {
                    out.set_column(c, &u.column(c));
                }
                out
            }
        };
        factors.push(u);
    }
    let u3 = factors.pop().expect("three factors");
    let u2 = factors.pop().expect("three factors");
    let u1 = factors.pop().expect("three factors");
    FactorSet::new(u1, u2, u3)
}

/// Up to `count` left singular vectors, by descending singular value.
fn leading_left_vectors(m: &ComplexMatrix, count: usize) -> ComplexMatrix {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    // nalgebra does not sort singular values.
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    order.truncate(count);
    ComplexMatrix::from_fn(m.nrows(), order.len(), |r, c| u[(r, order[c])])
}

/// Eigenvectors of a small general complex matrix, one per Schur eigenvalue.
fn eigenvectors(m: &ComplexMatrix) -> ComplexMatrix {
    let n = m.nrows();
    let (_, tri) = m.clone().schur().unpack();
    let mut out = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        let shifted = m - ComplexMatrix::identity(n, n) * tri[(i, i)];
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("right singular vectors requested");
        let k = svd.singular_values.imin();
        for r in 0..n {
            out[(r, i)] = v_t[(k, r)].conj();
        }
    }
    out
}

/// Tensor with modes reordered so that mode `k` of the result is mode
/// `order[k]` of `t`.
fn permute_modes(t: &ComplexTensor3, order: [usize; 3]) -> ComplexTensor3 {
    let d = t.dims();
    ComplexTensor3::from_fn([d[order[0]], d[order[1]], d[order[2]]], |i, j, k| {
        let mut idx = [0; 3];
        idx[order[0]] = i;
        idx[order[1]] = j;
        idx[order[2]] = k;
        t.get(idx[0], idx[1], idx[2])
    })
}

/// GEVD with each mode in turn as the slice mode; keeps the best fit.
fn gevd_best<R: Rng + ?Sized>(t: &ComplexTensor3, rank: usize, rng: &mut R) -> Result<Option<FactorSet>> {
    let x3 = t.unfold(3)?;
    let norm = t.frobenius_norm();
    let mut best: Option<(f64, FactorSet)> = None;
    for order in [[0, 1, 2], [1, 2, 0], [2, 0, 1]] {
        let Some(p) = gevd_factors(&permute_modes(t, order), rank, rng)? else {
            continue;
        };
        let mut slots = [None, None, None];
        slots[order[0]] = Some(p.u1);
        slots[order[1]] = Some(p.u2);
        slots[order[2]] = Some(p.u3);
        let [u1, u2, u3] = slots.map(|m| m.expect("each mode assigned once"));
        let f = FactorSet::new(u1, u2, u3)?;
        let res = relative_residual(&x3, &f, norm)?;
        if res.is_finite() && best.as_ref().is_none_or(|(r, _)| res < *r) {
            best = Some((res, f));
        }
    }
    Ok(best.map(|(_, f)| f))
}

fn gevd_factors<R: Rng + ?Sized>(t: &ComplexTensor3, rank: usize, rng: &mut R) -> Result<Option<FactorSet>> {
    let [d1, d2, d3] = t.dims();
    if d1 < rank || d2 < rank || d3 < 2 {
        return Ok(None);
    }
    let x1 = t.unfold(1)?;
    let u = leading_left_vectors(&x1, rank);
    let v = leading_left_vectors(&t.unfold(2)?, rank);
    if u.ncols() < rank || v.ncols() < rank {
        return Ok(None);
    }
    // Compressed slices U^H·T_k·conj(V) = W1·diag(U3[k, :])·W2^T.
    let v_conj = v.map(|z| z.conj());
    let u_h = u.adjoint();
    let mut p = ComplexMatrix::zeros(rank, rank);
    let mut q = ComplexMatrix::zeros(rank, rank);
    for k in 0..d3 {
        let slice = ComplexMatrix::from_fn(d1, d2, |i, j| t.get(i, j, k));
        let s = &u_h * slice * &v_conj;
        p += &s * complex_gaussian(rng, 1.0);
        q += &s * complex_gaussian(rng, 1.0);
    }
    // P·Q⁻¹ = W1·D·W1⁻¹
    let w1 = eigenvectors(&(p * pseudo_inverse(&q)));
    let u1 = &u * w1;
    // X_(1) = U1·(U3 ⊙ U2)^T; each row of U1†·X_(1) is a rank-one d2×d3 matrix.
    let kr_t = pseudo_inverse(&u1) * &x1;
    let mut u2 = ComplexMatrix::zeros(d2, rank);
    let mut u3 = ComplexMatrix::zeros(d3, rank);
    for l in 0..rank {
        let m = ComplexMatrix::from_fn(d2, d3, |i, k| kr_t[(l, i + d2 * k)]);
        let svd = m.svd(true, true);
        let top = svd.singular_values.imax();
        let sigma = svd.singular_values[top];
        let lu = svd.u.expect("left singular vectors requested");
        let lv = svd.v_t.expect("right singular vectors requested");
        for i in 0..d2 {
            u2[(i, l)] = lu[(i, top)] * sigma;
        }
        for k in 0..d3 {
            u3[(k, l)] = lv[(top, k)];
        }
    }
    if !(u1.iter().chain(u2.iter()).chain(u3.iter())).all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Ok(None);
    }
    Ok(Some(FactorSet::new(u1, u2, u3)?))
}

/// Least-squares update of one factor with the other two fixed.
fn update_factor(unfolded: &ComplexMatrix, a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    // X_(n) ≈ U·(A ⊙ B)^T  ⇔  X_(n)^T ≈ (A ⊙ B)·U^T
    let kr = khatri_rao(a, b)?;
    Ok(least_squares(&kr, &unfolded.transpose())?.transpose())
}

fn relative_residual(m3: &ComplexMatrix, f: &FactorSet, norm: f64) -> Result<f64> {
    let model = &f.u3 * khatri_rao(&f.u2, &f.u1)?.transpose();
    let r = (m3 - model).norm();
    Ok(if norm > 0.0 { r / norm } else { r })
}

/// Runs ALS from the given starting point.
pub fn als_from(t: &ComplexTensor3, mut f: FactorSet, opts: &AlsOptions) -> Result<(FactorSet, AlsReport)> {
    let x1 = t.unfold(1)?;
    let x2 = t.unfold(2)?;
    let x3 = t.unfold(3)?;
    let norm = t.frobenius_norm();
    let mut report = AlsReport::default();
    let mut prev = relative_residual(&x3, &f, norm)?;
    for it in 1..=opts.max_iters {
        f.u1 = update_factor(&x1, &f.u3, &f.u2)?;
        f.u2 = update_factor(&x2, &f.u3, &f.u1)?;
        f.u3 = update_factor(&x3, &f.u2, &f.u1)?;
        if opts.rebalance_every > 0 && it % opts.rebalance_every == 0 {
            f.rebalance();
        }
        let res = relative_residual(&x3, &f, norm)?;
        report.residual_history.push(res);
        report.iterations = it;
        if !res.is_finite() {
            break;
        }
        if res < opts.residual_floor || (prev - res).abs() / prev.max(1e-15) < opts.tol {
            report.converged = true;
            break;
        }
        prev = res;
    }
    Ok((f, report))
}

/// CP decomposition from a GEVD start, an SVD start and `opts.restarts`
/// random starts; the lowest final residual wins.
pub fn cp_als(t: &ComplexTensor3, rank: usize, opts: &AlsOptions) -> Result<(FactorSet, AlsReport)> {
    if rank == 0 {
        return Err(Error::Argument("CP rank must be at least 1".into()));
    }
    let [d1, d2, _] = t.dims();
    if rank > d1 * d2 {
        return Err(Error::Argument(format!("CP rank {rank} exceeds d1·d2 = {}", d1 * d2)));
    }
    if !t.is_finite() {
        return Err(Error::Input("tensor has non-finite entries".into()));
    }
    let mut best: Option<(FactorSet, AlsReport)> = None;
    for restart in 0..opts.restarts + 2 {
        let mut rng = stream(opts.seed, &[0xA15, restart as u64]);
        let strategy = match restart {
            0 => InitStrategy::Gevd,
            1 => InitStrategy::SvdUnfolding,
            _ => InitStrategy::RandomGaussian,
        };
        let init = init_factors(t, rank, strategy, &mut rng)?;
        let (f, mut report) = als_from(t, init, opts)?;
        report.restart = restart;
        let better = match &best {
            None => true,
            Some((_, b)) => report.final_residual() < b.final_residual(),
        };
        if better {
            best = Some((f, report));
        }
        if best.as_ref().is_some_and(|(_, b)| b.final_residual() < opts.residual_floor) {
            break;
        }
    }
    Ok(best.expect("at least one run"))
}

/// `|⟨a, b⟩| / (‖a‖‖b‖)` for every column pair.
pub fn column_correlations(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let na: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let nb: Vec<f64> = b.column_iter().map(|c| c.norm()).collect();
    let g = a.adjoint() * b;
    ComplexMatrix::from_fn(a.ncols(), b.ncols(), |i, j| {
        num_complex::Complex64::from(g[(i, j)].norm() / (na[i] * nb[j]).max(f64::MIN_POSITIVE))
    })
}

/// Greedy one-to-one matching by descending `score(est, truth)`. Entry `t`
/// holds the estimate paired with truth `t`, if any remained.
pub fn greedy_match(score: impl Fn(usize, usize) -> f64, n_est: usize, n_truth: usize) -> Vec<Option<usize>> {
    let mut pairs: Vec<(usize, usize, f64)> =
        (0..n_est).flat_map(|e| (0..n_truth).map(move |t| (e, t))).map(|(e, t)| (e, t, score(e, t))).collect();
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut used_e = vec![false; n_est];
    let mut out = vec![None; n_truth];
    for (e, t, _) in pairs {
        if !used_e[e] && out[t].is_none() {
            used_e[e] = true;
            out[t] = Some(e);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_matrix;
    use num_complex::Complex64;

    fn random_factors(seed: u64, dims: [usize; 3], rank: usize) -> FactorSet {
        let mut rng = stream(seed, &[]);
        FactorSet::new(
            random_matrix(&mut rng, dims[0], rank),
            random_matrix(&mut rng, dims[1], rank),
            random_matrix(&mut rng, dims[2], rank),
        )
        .unwrap()
    }

    #[test]
    fn kruskal_examples() {
        assert!(kruskal_ok(3, 2, 4, 3));
        assert!(!kruskal_ok(1, 1, 1, 1));
        assert!(kruskal_ok(20, 20, 4, 3));
        assert!(!kruskal_ok(2, 2, 4, 3));
    }

    #[test]
    fn reconstruct_cases() {
        let ones = |d| ComplexMatrix::from_element(d, 1, Complex64::new(1.0, 0.0));
        let f = FactorSet::new(ones(2), ones(3), ones(4)).unwrap();
        assert!(reconstruct(&f).as_slice().iter().all(|&z| z == Complex64::new(1.0, 0.0)));

        let f = random_factors(1, [3, 4, 2], 2);
        let t = reconstruct(&f);
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..2 {
                    let want: Complex64 = (0..2).map(|l| f.u1[(i, l)] * f.u2[(j, l)] * f.u3[(k, l)]).sum();
                    assert!((t.get(i, j, k) - want).norm() < 1e-14);
                }
            }
        }
        let mut doubled = f.clone();
        doubled.u3 *= Complex64::new(2.0, 0.0);
        let t2 = reconstruct(&doubled);
        for (a, b) in t2.as_slice().iter().zip(t.as_slice()) {
            assert!((a - b * 2.0).norm() < 1e-14);
        }
    }

    #[test]
    fn mismatched_factors_rejected() {
        let mut rng = stream(0, &[]);
        let r = FactorSet::new(random_matrix(&mut rng, 2, 2), random_matrix(&mut rng, 2, 3), random_matrix(&mut rng, 2, 2));
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn rank_one_converges_fast() {
        let f = random_factors(2, [4, 5, 3], 1);
        let t = reconstruct(&f);
        let (_, rep) = cp_als(&t, 1, &AlsOptions::default()).unwrap();
        assert!(rep.final_residual() < 1e-10);
        assert!(rep.iterations <= 10);
    }

    #[test]
    fn argument_errors() {
        let t = reconstruct(&random_factors(3, [2, 2, 2], 1));
        assert!(matches!(cp_als(&t, 0, &AlsOptions::default()), Err(Error::Argument(_))));
        assert!(matches!(cp_als(&t, 5, &AlsOptions::default()), Err(Error::Argument(_))));
        let mut bad = t.clone();
        bad.set(0, 0, 0, Complex64::new(f64::NAN, 0.0));
        assert!(matches!(cp_als(&bad, 1, &AlsOptions::default()), Err(Error::Input(_))));
    }

    #[test]
    fn init_shapes_and_determinism() {
        let t = reconstruct(&random_factors(4, [2, 2, 2], 1));
        let a = init_factors(&t, 1, InitStrategy::RandomGaussian, &mut stream(5, &[])).unwrap();
        assert_eq!(a.dims(), [2, 2, 2]);
        assert_eq!(a.rank(), 1);
        let b = init_factors(&t, 1, InitStrategy::RandomGaussian, &mut stream(5, &[])).unwrap();
        assert_eq!(a, b);
        // Rank above the unfolding's row count pads with random columns.
        let c = init_factors(&t, 3, InitStrategy::SvdUnfolding, &mut stream(5, &[])).unwrap();
        assert_eq!(c.rank(), 3);
    }

    #[test]
    fn rebalance_preserves_tensor() {
        let mut f = random_factors(6, [3, 3, 3], 2);
        f.u1 *= Complex64::new(1e3, 0.0);
        let before = reconstruct(&f);
        f.rebalance();
        let after = reconstruct(&f);
        let d = after.sub(&before).unwrap().frobenius_norm() / before.frobenius_norm();
        assert!(d < 1e-14);
        let n1 = f.u1.column(0).norm();
        assert!((n1 - f.u2.column(0).norm()).abs() < 1e-9 * n1);
    }

    #[test]
    fn trace_csv_lines() {
        let rep = AlsReport {
            iterations: 2,
            residual_history: vec![0.5, 0.25],
            converged: true,
            restart: 1,
        };
        let mut out = Vec::new();
        rep.write_trace_csv(&mut out, "tx").unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "tx,1,1,5e-1\ntx,1,2,2.5e-1\n");
    }

    #[test]
    fn greedy_match_picks_best_pairs() {
        let score = |e: usize, t: usize| [[0.1, 0.9], [0.8, 0.7]][e][t];
        assert_eq!(greedy_match(score, 2, 2), vec![Some(1), Some(0)]);
    }
}
