//! Linear + second-order Wiener chaos processes and their block
//! decomposition.
//!
//! The process is `Z(t) = Σ_i a_i W^i_t + Σ_{i,j} a_{i,j} ∫_0^t W^i ∘ dW^j`
//! with vector coefficients. `[0, δ]` is split into `d` blocks
//! `[s_{k−1}, s_k]`, `s_k = kδ/d`; the decomposition rewrites `Z(δ)` in
//! terms of per-block increments and iterated integrals, isolating the
//! principal Gaussian part `Σ_p a_p W^p_δ`, the bracket part
//! `Σ_p Σ_{i≠p} (a_{i,p} − a_{p,i}) Δ_p^{i,p}` and two remainder groups.
//!
//! Under the midpoint discretization the rewrite is an exact algebraic
//! identity on the lattice (block boundaries snap to lattice nodes), so the
//! reported residual is pure floating-point roundoff at every level.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::Result;
use crate::lattice::{block_integrals_on_range, BlockIntegrals, BrownianLattice};
use crate::rng::NormalStream;

/// Coefficients of the chaos process: `a[i]` and `a2[i*d + j] = a_{i,j}`,
/// all vectors in `R^n`.
#[derive(Clone, Debug)]
pub struct Coefficients {
    pub n: usize,
    pub d: usize,
    pub a: Vec<DVector<f64>>,
    pub a2: Vec<DVector<f64>>,
    /// `ā = 1 ∨ max_{i,j} |a_{i,j}|`
    pub abar: f64,
}

impl Coefficients {
    pub fn new(n: usize, d: usize, a: Vec<DVector<f64>>, a2: Vec<DVector<f64>>) -> Self {
        assert_eq!(a.len(), d);
        assert_eq!(a2.len(), d * d);
        let abar = a2
            .iter()
            .map(|v| v.norm())
            .fold(1.0_f64, |acc, v| acc.max(v));
        Self { n, d, a, a2, abar }
    }

    #[inline]
    pub fn a2_at(&self, i: usize, j: usize) -> &DVector<f64> {
        &self.a2[i * self.d + j]
    }

    /// `[a]_{i,p} = a_{i,p} − a_{p,i}` (antisymmetric).
    pub fn bracket(&self, i: usize, p: usize) -> DVector<f64> {
        self.a2_at(i, p) - self.a2_at(p, i)
    }

    /// Random coefficients for studies and tests.
    pub fn random(n: usize, d: usize, stream: &mut NormalStream) -> Self {
        let a = (0..d)
            .map(|_| DVector::from_fn(n, |_, _| stream.next_normal()))
            .collect();
        let a2 = (0..d * d)
            .map(|_| DVector::from_fn(n, |_, _| stream.next_normal()))
            .collect();
        Self::new(n, d, a, a2)
    }

    pub fn scale(&self) -> f64 {
        self.a.iter().map(|v| v.norm()).sum::<f64>()
            + self.a2.iter().map(|v| v.norm()).sum::<f64>()
    }
}

/// `Z(t)` evaluated by midpoint-rule sums on the lattice.
pub fn z_process(coeffs: &Coefficients, lattice: &BrownianLattice, t: f64) -> DVector<f64> {
    let d = coeffs.d;
    assert_eq!(d, lattice.d());
    let hi = lattice.node_index(t);
    let mut z = DVector::zeros(coeffs.n);
    let w_t = lattice.node(hi);
    for i in 0..d {
        z += &coeffs.a[i] * w_t[i];
    }
    // accumulate all pair integrals in one pass
    let mut pair = DMatrix::<f64>::zeros(d, d);
    for k in 0..hi {
        let l = lattice.node(k);
        let r = lattice.node(k + 1);
        for i in 0..d {
            let mid = 0.5 * (l[i] + r[i]);
            for j in 0..d {
                pair[(i, j)] += mid * (r[j] - l[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..d {
            z += coeffs.a2_at(i, j) * pair[(i, j)];
        }
    }
    z
}

/// All pieces of the block decomposition of `Z(δ)`.
#[derive(Clone, Debug)]
pub struct DecompositionReport {
    /// `Σ_p a_p (Δ_p^p + μ_p)`
    pub principal: DVector<f64>,
    /// `Σ_p Σ_{i≠p} [a]_{i,p} Δ_p^{i,p}`
    pub bracket_part: DVector<f64>,
    pub eta: DVector<f64>,
    pub psi: DVector<f64>,
    pub reconstruction: DVector<f64>,
    pub z_direct: DVector<f64>,
    pub residual: f64,
}

/// Decompose `Z(δ)` into the block form and compare with the direct
/// evaluation. Blocks are `s_k = kδ/d` snapped to lattice nodes; each must
/// hold at least two lattice steps.
pub fn decompose(
    coeffs: &Coefficients,
    lattice: &BrownianLattice,
    delta: f64,
) -> Result<DecompositionReport> {
    let d = coeffs.d;
    let n = coeffs.n;
    assert_eq!(d, lattice.d());
    let mut blocks: Vec<BlockIntegrals> = Vec::with_capacity(d);
    let mut end_node = 0;
    for p in 1..=d {
        let (lo, hi) = lattice.block_range(delta, p, d)?;
        blocks.push(block_integrals_on_range(lattice, lo, hi));
        end_node = hi;
    }
    let inc = |block: usize, comp: usize| blocks[block].increments[comp];

    let mut principal = DVector::zeros(n);
    let mut bracket_part = DVector::zeros(n);
    let mut eta = DVector::zeros(n);
    let mut psi = DVector::zeros(n);

    for p in 0..d {
        // μ_p = Σ_{blocks i≠p} Δ_i^p
        let mut mu_p = 0.0;
        for b in 0..d {
            if b != p {
                mu_p += inc(b, p);
            }
        }
        principal += &coeffs.a[p] * (inc(p, p) + mu_p);

        for i in 0..d {
            if i != p {
                bracket_part += coeffs.bracket(i, p) * blocks[p].pairs[(i, p)];
            }
        }

        // ε_p = Σ_{l>p} Σ_{j≠l} a_{p,j} Δ_l^j + Σ_{l<p} Σ_{j≠l} a_{j,p} Δ_l^j
        //       + Σ_{j≠p} a_{p,j} Δ_p^j
        let mut eps_p = DVector::zeros(n);
        for l in p + 1..d {
            for j in 0..d {
                if j != l {
                    eps_p += coeffs.a2_at(p, j) * inc(l, j);
                }
            }
        }
        for l in 0..p {
            for j in 0..d {
                if j != l {
                    eps_p += coeffs.a2_at(j, p) * inc(l, j);
                }
            }
        }
        for j in 0..d {
            if j != p {
                eps_p += coeffs.a2_at(p, j) * inc(p, j);
            }
        }

        // η_p = ½ a_{p,p} |Δ_p^p|² + Σ_{l>p} a_{p,l} Δ_l^l Δ_p^p + Δ_p^p ε_p
        let dpp = inc(p, p);
        eta += coeffs.a2_at(p, p) * (0.5 * dpp * dpp);
        for l in p + 1..d {
            eta += coeffs.a2_at(p, l) * (inc(l, l) * dpp);
        }
        eta += eps_p * dpp;

        // ψ_p = Σ_{i≠j, i≠p, j≠p} a_{i,j} Δ_p^{i,j}
        //       + Σ_{l>p} Σ_{i≠p} Σ_{j≠l} a_{i,j} Δ_l^j Δ_p^i
        //       + ½ Σ_{i≠p} a_{i,i} |Δ_p^i|²
        for i in 0..d {
            for j in 0..d {
                if i != j && i != p && j != p {
                    psi += coeffs.a2_at(i, j) * blocks[p].pairs[(i, j)];
                }
            }
        }
        for l in p + 1..d {
            for i in 0..d {
                if i == p {
                    continue;
                }
                for j in 0..d {
                    if j != l {
                        psi += coeffs.a2_at(i, j) * (inc(l, j) * inc(p, i));
                    }
                }
            }
        }
        for i in 0..d {
            if i != p {
                psi += coeffs.a2_at(i, i) * (0.5 * inc(p, i) * inc(p, i));
            }
        }
    }

    let reconstruction = &principal + &bracket_part + &eta + &psi;
    let z_direct = z_process(coeffs, lattice, end_node as f64 * lattice.dt());
    let residual = (&reconstruction - &z_direct).norm();
    Ok(DecompositionReport {
        principal,
        bracket_part,
        eta,
        psi,
        reconstruction,
        z_direct,
        residual,
    })
}

/// Conditional covariance `Q_p(B)` of `Θ_p = (Δ_p^p, Δ_p^{j,p})_{j≠p}` on
/// the block rescaled to unit length, given the off-`p` components.
///
/// The quadrature uses the same per-cell midpoint values as the iterated
/// integral sums, so the discrete conditional law of `Θ_p` is Gaussian with
/// exactly this covariance.
#[derive(Clone, Debug)]
pub struct ConditionalCovariance {
    /// 1-based block index, matching `Δ_p`.
    pub p: usize,
    pub q: DMatrix<f64>,
}

pub fn conditional_covariance(
    lattice: &BrownianLattice,
    delta: f64,
    p: usize,
) -> Result<ConditionalCovariance> {
    let d = lattice.d();
    let (lo, hi) = lattice.block_range(delta, p, d)?;
    let len = (hi - lo) as f64 * lattice.dt();
    let base = lattice.node(lo).to_vec();
    let own = p - 1;
    let mut q = DMatrix::zeros(d, d);
    q[(own, own)] = 1.0;
    let w = lattice.dt() / len;
    let scale = len.sqrt();
    let mut cvals = vec![0.0; d];
    for k in lo..hi {
        let l = lattice.node(k);
        let r = lattice.node(k + 1);
        for i in 0..d {
            cvals[i] = (0.5 * (l[i] + r[i]) - base[i]) / scale;
        }
        for i in 0..d {
            if i == own {
                continue;
            }
            q[(own, i)] += cvals[i] * w;
            for j in i..d {
                if j != own {
                    q[(i, j)] += cvals[i] * cvals[j] * w;
                }
            }
        }
    }
    // mirror: own row/column, then the off-own pair block
    for i in 0..d {
        if i != own {
            q[(i, own)] = q[(own, i)];
        }
        for j in i + 1..d {
            if i != own && j != own {
                q[(j, i)] = q[(i, j)];
            }
        }
    }
    q[(own, own)] = 1.0;
    Ok(ConditionalCovariance { p, q })
}

// ---------------------------------------------------------------------
// Support event
// ---------------------------------------------------------------------

/// Path functionals entering the support event on a unit block: with `k`
/// control components `B = (B^1..B^k)`, the `(k+1) x (k+1)` matrix `Q` has
/// `Q^{j,p} = ∫ B^j B^p`, `Q^{c,j} = ∫ B^j` and `Q^{c,c} = 1` (`c` the
/// constant row), `q = Σ_i |B_1^i| + Σ_{j≠p} |∫ B^j dB^p|`, and `sup` is
/// the running Euclidean norm.
#[derive(Clone, Copy, Debug)]
pub struct SupportStats {
    pub det_q: f64,
    pub sup_norm: f64,
    pub q: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct SupportReport {
    pub member: bool,
    pub det_q: f64,
    pub sup_norm: f64,
    pub q: f64,
}

/// Membership in `Λ_{ρ,ε} = {det Q ≥ ε^ρ, sup ≤ ε^{−ρ}, q ≤ ε}`.
pub fn support_member(stats: &SupportStats, rho: f64, eps: f64) -> bool {
    stats.det_q >= eps.powf(rho) && stats.sup_norm <= eps.powf(-rho) && stats.q <= eps
}

/// Assemble the support matrix `Q` from per-cell midpoint values of the
/// whole lattice treated as one unit block (the horizon is rescaled to 1).
pub fn support_matrix(lattice: &BrownianLattice) -> DMatrix<f64> {
    let k = lattice.d();
    let t = lattice.horizon();
    let scale = t.sqrt();
    let steps = lattice.steps();
    let w = 1.0 / steps as f64;
    let mut q = DMatrix::zeros(k + 1, k + 1);
    q[(k, k)] = 1.0;
    for c in 0..steps {
        let l = lattice.node(c);
        let r = lattice.node(c + 1);
        for i in 0..k {
            let mi = 0.5 * (l[i] + r[i]) / scale;
            q[(i, k)] += mi * w;
            for j in i..k {
                let mj = 0.5 * (l[j] + r[j]) / scale;
                q[(i, j)] += mi * mj * w;
            }
        }
    }
    // the upper triangle is filled; mirror it
    for i in 0..=k {
        for j in 0..i {
            q[(i, j)] = q[(j, i)];
        }
    }
    q
}

pub fn support_stats(lattice: &BrownianLattice) -> SupportStats {
    let k = lattice.d();
    let t = lattice.horizon();
    let scale = t.sqrt();
    let steps = lattice.steps();
    let q_mat = support_matrix(lattice);
    let det_q = q_mat.determinant();

    let mut sup = 0.0_f64;
    for node in 0..=steps {
        let v = lattice.node(node);
        let nrm2: f64 = v.iter().map(|x| x * x).sum::<f64>() / t;
        sup = sup.max(nrm2);
    }
    let sup_norm = sup.sqrt();

    let endpoint = lattice.node(steps);
    let mut q_val: f64 = (0..k).map(|i| (endpoint[i] / scale).abs()).sum();
    // areas ∫ B^j dB^p, midpoint rule, over ordered pairs j != p
    for j in 0..k {
        for p in 0..k {
            if j == p {
                continue;
            }
            let mut acc = 0.0;
            for c in 0..steps {
                let l = lattice.node(c);
                let r = lattice.node(c + 1);
                acc += 0.5 * (l[j] + r[j]) * (r[p] - l[p]);
            }
            q_val += (acc / t).abs();
        }
    }
    SupportStats {
        det_q,
        sup_norm,
        q: q_val,
    }
}

/// Evaluate the support event for one block path.
pub fn support_event(lattice: &BrownianLattice, rho: f64, eps: f64) -> SupportReport {
    let stats = support_stats(lattice);
    SupportReport {
        member: support_member(&stats, rho, eps),
        det_q: stats.det_q,
        sup_norm: stats.sup_norm,
        q: stats.q,
    }
}

/// Quadratic-form identity of the support matrix: `⟨Qξ,ξ⟩ = α² + β` with
/// `α = ξ_c + ∫⟨B,ξ_*⟩` and `β = ∫⟨B,ξ_*⟩² − (∫⟨B,ξ_*⟩)²`. Returns the
/// two sides, identical up to roundoff when the same quadrature is used.
pub fn support_quadratic_identity(lattice: &BrownianLattice, xi: &DVector<f64>) -> (f64, f64) {
    let k = lattice.d();
    assert_eq!(xi.len(), k + 1);
    let q_mat = support_matrix(lattice);
    let lhs = (&q_mat * xi).dot(xi);
    let t = lattice.horizon();
    let scale = t.sqrt();
    let steps = lattice.steps();
    let w = 1.0 / steps as f64;
    let mut int1 = 0.0;
    let mut int2 = 0.0;
    for c in 0..steps {
        let l = lattice.node(c);
        let r = lattice.node(c + 1);
        let mut dot = 0.0;
        for i in 0..k {
            dot += 0.5 * (l[i] + r[i]) / scale * xi[i];
        }
        int1 += dot * w;
        int2 += dot * dot * w;
    }
    let alpha = xi[k] + int1;
    let beta = int2 - int1 * int1;
    (lhs, alpha * alpha + beta)
}

/// Parallel Monte Carlo sweep of the support event over `n_paths` unit
/// blocks with `k` components. Counts are integer sums over a fixed path
/// partition, so the result is independent of the worker count.
#[derive(Clone, Debug)]
pub struct SupportSweep {
    pub rho: f64,
    pub eps: Vec<f64>,
    pub n_paths: u64,
    pub member_counts: Vec<u64>,
    /// diagnostic: how often `q ≤ ε` alone holds
    pub q_only_counts: Vec<u64>,
}

pub fn support_sweep(
    seed: u64,
    n_paths: u64,
    k: usize,
    level: u32,
    rho: f64,
    eps: &[f64],
) -> SupportSweep {
    let chunk: u64 = 4096;
    let n_chunks = n_paths.div_ceil(chunk);
    let counts = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * chunk;
            let hi = ((c + 1) * chunk).min(n_paths);
            let mut member = vec![0u64; eps.len()];
            let mut q_only = vec![0u64; eps.len()];
            for p in lo..hi {
                let lat = BrownianLattice::sample(seed, p, k, 1.0, level).expect("lattice");
                let stats = support_stats(&lat);
                for (i, &e) in eps.iter().enumerate() {
                    if support_member(&stats, rho, e) {
                        member[i] += 1;
                    }
                    if stats.q <= e {
                        q_only[i] += 1;
                    }
                }
            }
            (member, q_only)
        })
        .reduce(
            || (vec![0u64; eps.len()], vec![0u64; eps.len()]),
            |mut a, b| {
                for i in 0..a.0.len() {
                    a.0[i] += b.0[i];
                    a.1[i] += b.1[i];
                }
                a
            },
        );
    SupportSweep {
        rho,
        eps: eps.to_vec(),
        n_paths,
        member_counts: counts.0,
        q_only_counts: counts.1,
    }
}

// ---------------------------------------------------------------------
// Tail exponents for iterated integrals
// ---------------------------------------------------------------------

/// `p_1 = 2`, `p_{k+1} = 2 p_k / (2 + p_k)`; in closed form `p_k = 2/k`.
pub fn tail_exponents(kmax: usize) -> Vec<f64> {
    assert!(kmax >= 1);
    let mut out = Vec::with_capacity(kmax);
    let mut p = 2.0;
    out.push(p);
    for _ in 1..kmax {
        p = 2.0 * p / (2.0 + p);
        out.push(p);
    }
    out
}

/// Empirical exceedance curve of `sup_{t≤1} |I_k(1,W)(t)|` where `I_k` is
/// the iterated integral over the multi-index `(1, 2, .., k)`.
#[derive(Clone, Debug)]
pub struct TailCurve {
    pub order: usize,
    pub thresholds: Vec<f64>,
    pub exceedance: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_paths: u64,
}

impl TailCurve {
    /// Fit of `log P` against `K^{p_k}`; the tail bound predicts a line.
    pub fn log_fit(&self) -> crate::stats::LinearFit {
        let pk = tail_exponents(self.order)[self.order - 1];
        let pts: Vec<(f64, f64)> = self
            .thresholds
            .iter()
            .zip(&self.exceedance)
            .filter(|(_, &p)| p > 0.0)
            .map(|(&k, &p)| (k.powf(pk), p.ln()))
            .collect();
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        crate::stats::linear_fit(&xs, &ys)
    }
}

pub fn estimate_tail(
    seed: u64,
    order: usize,
    n_paths: u64,
    level: u32,
    thresholds: &[f64],
) -> TailCurve {
    assert!((1..=3).contains(&order), "desk scale covers k <= 3");
    let chunk: u64 = 2048;
    let n_chunks = n_paths.div_ceil(chunk);
    let counts = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * chunk;
            let hi = ((c + 1) * chunk).min(n_paths);
            let mut counts = vec![0u64; thresholds.len()];
            let steps = 1usize << level;
            let dt = 1.0 / steps as f64;
            let sdt = dt.sqrt();
            let mut dw = vec![0.0f64; order];
            for p in lo..hi {
                let mut stream = NormalStream::new(seed, p, 0);
                // running iterated integrals I_1..I_order, left-point rule
                let mut w1 = 0.0f64;
                let mut iter = vec![0.0f64; order]; // iter[m-1] = I_m
                let mut sup = 0.0f64;
                for _ in 0..steps {
                    for z in dw.iter_mut() {
                        *z = stream.next_normal() * sdt;
                    }
                    // I_m picks up the pre-step value of I_{m-1} (adapted)
                    for m in (1..order).rev() {
                        iter[m] += iter[m - 1] * dw[m];
                    }
                    w1 += dw[0];
                    iter[0] = w1;
                    sup = sup.max(iter[order - 1].abs());
                }
                for (i, &k) in thresholds.iter().enumerate() {
                    if sup >= k {
                        counts[i] += 1;
                    }
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; thresholds.len()],
            |mut a, b| {
                for i in 0..a.len() {
                    a[i] += b[i];
                }
                a
            },
        );
    let exceedance: Vec<f64> = counts.iter().map(|&c| c as f64 / n_paths as f64).collect();
    let stderr = exceedance
        .iter()
        .map(|&p| (p * (1.0 - p) / n_paths as f64).sqrt())
        .collect();
    TailCurve {
        order,
        thresholds: thresholds.to_vec(),
        exceedance,
        stderr,
        n_paths,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_process_linear_case() {
        // a2 = 0 → Z(t) = Σ a_i W^i_t exactly
        let lat = BrownianLattice::sample(3, 1, 2, 1.0, 8).unwrap();
        let a = vec![
            DVector::from_column_slice(&[1.0, 0.0]),
            DVector::from_column_slice(&[0.0, 2.0]),
        ];
        let a2 = vec![DVector::zeros(2); 4];
        let coeffs = Coefficients::new(2, 2, a, a2);
        let z = z_process(&coeffs, &lat, 1.0);
        let w = lat.node(lat.steps());
        assert!((z[0] - w[0]).abs() < 1e-14);
        assert!((z[1] - 2.0 * w[1]).abs() < 1e-14);
    }

    #[test]
    fn z_process_stratonovich_square() {
        // n = d = 1, a = 0, a_{1,1} = 1 → Z(t) = ½ W_t² exactly under the
        // midpoint rule
        let lat = BrownianLattice::sample(5, 0, 1, 1.0, 10).unwrap();
        let coeffs = Coefficients::new(
            1,
            1,
            vec![DVector::zeros(1)],
            vec![DVector::from_column_slice(&[1.0])],
        );
        let z = z_process(&coeffs, &lat, 1.0);
        let w = lat.node(lat.steps())[0];
        assert!((z[0] - 0.5 * w * w).abs() < 1e-12);
    }

    #[test]
    fn z_process_matches_independent_resummation() {
        let lat = BrownianLattice::sample(6, 2, 2, 1.0, 10).unwrap();
        let mut stream = NormalStream::new(60, 0, 0);
        let coeffs = Coefficients::random(3, 2, &mut stream);
        let z = z_process(&coeffs, &lat, 1.0);
        // independent summation via the per-pair integral helper
        let hi = lat.steps();
        let mut alt = DVector::zeros(3);
        for i in 0..2 {
            alt += &coeffs.a[i] * lat.node(hi)[i];
            for j in 0..2 {
                alt += coeffs.a2_at(i, j)
                    * crate::lattice::stratonovich_pair_integral(&lat, i, j, hi);
            }
        }
        assert!((z - alt).norm() < 1e-12);
    }

    #[test]
    fn decompose_linear_case_is_exact_zero() {
        let lat = BrownianLattice::sample(9, 4, 2, 1.0, 10).unwrap();
        let mut stream = NormalStream::new(90, 0, 0);
        let mut coeffs = Coefficients::random(3, 2, &mut stream);
        for v in coeffs.a2.iter_mut() {
            v.fill(0.0);
        }
        let rep = decompose(&coeffs, &lat, 1.0).unwrap();
        assert!(rep.eta.norm() == 0.0);
        assert!(rep.psi.norm() == 0.0);
        assert!(rep.bracket_part.norm() == 0.0);
        assert!(rep.residual < 1e-13 * coeffs.scale());
    }

    #[test]
    fn decompose_symmetric_coefficients_kill_bracket() {
        let lat = BrownianLattice::sample(10, 4, 3, 1.0, 10).unwrap();
        let mut stream = NormalStream::new(91, 0, 0);
        let mut coeffs = Coefficients::random(2, 3, &mut stream);
        for i in 0..3 {
            for j in 0..i {
                let v = coeffs.a2[j * 3 + i].clone();
                coeffs.a2[i * 3 + j] = v;
            }
        }
        let rep = decompose(&coeffs, &lat, 1.0).unwrap();
        assert!(rep.bracket_part.norm() == 0.0);
        assert!(rep.residual < 1e-12 * coeffs.scale());
    }

    #[test]
    fn decompose_exact_identity_random_coefficients() {
        for (d, seed) in [(2usize, 100u64), (3, 101)] {
            let lat = BrownianLattice::sample(seed, 0, d, 1.0, 12).unwrap();
            let mut stream = NormalStream::new(seed, 1, 7);
            let coeffs = Coefficients::random(3, d, &mut stream);
            let rep = decompose(&coeffs, &lat, 1.0).unwrap();
            assert!(
                rep.residual <= 1e-12 * coeffs.scale(),
                "d={d}: residual {}",
                rep.residual
            );
        }
    }

    #[test]
    fn decompose_residual_independent_of_sum_order() {
        // reversing the off-diagonal enumeration changes nothing beyond
        // roundoff: the algebra is order free
        let lat = BrownianLattice::sample(11, 0, 3, 1.0, 10).unwrap();
        let mut stream = NormalStream::new(110, 0, 0);
        let coeffs = Coefficients::random(2, 3, &mut stream);
        let rep = decompose(&coeffs, &lat, 1.0).unwrap();
        // permuted re-summation of ψ's first group
        let mut perm = DVector::zeros(2);
        let mut blocks = Vec::new();
        for p in 1..=3 {
            let (lo, hi) = lat.block_range(1.0, p, 3).unwrap();
            blocks.push(block_integrals_on_range(&lat, lo, hi));
        }
        for p in (0..3).rev() {
            for i in (0..3).rev() {
                for j in (0..3).rev() {
                    if i != j && i != p && j != p {
                        perm += coeffs.a2_at(i, j) * blocks[p].pairs[(i, j)];
                    }
                }
            }
        }
        let mut forward = DVector::zeros(2);
        for p in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    if i != j && i != p && j != p {
                        forward += coeffs.a2_at(i, j) * blocks[p].pairs[(i, j)];
                    }
                }
            }
        }
        assert!((perm - forward).norm() < 1e-12 * coeffs.scale().max(1.0));
        assert!(rep.residual < 1e-12 * coeffs.scale());
    }

    #[test]
    fn conditional_covariance_linear_control_closed_form() {
        // d=2, p=2, rescaled control B¹_s = s: Q^{2,2} = 1, Q^{2,1} = ½,
        // Q^{1,1} = ⅓. Craft the path: component 0 rises linearly on the
        // second block [1, 2] of the horizon 2 lattice.
        let level = 12u32;
        let steps = 1usize << level;
        let dt = 2.0 / steps as f64;
        let mut nodes = vec![0.0; (steps + 1) * 2];
        for k in 0..=steps {
            let t = k as f64 * dt;
            nodes[k * 2] = (t - 1.0).max(0.0);
            nodes[k * 2 + 1] = 0.3 * t; // own component, irrelevant to Q
        }
        let lat = BrownianLattice::from_nodes(2, 2.0, nodes).unwrap();
        let cc = conditional_covariance(&lat, 2.0, 2).unwrap();
        assert!((cc.q[(1, 1)] - 1.0).abs() < 1e-15);
        assert!((cc.q[(1, 0)] - 0.5).abs() < 1e-10); // midpoint exact on linear
        assert!((cc.q[(0, 0)] - 1.0 / 3.0).abs() < 1e-7); // O(Δt²) quadrature
        assert_eq!(cc.q[(0, 1)], cc.q[(1, 0)]);
    }

    #[test]
    fn tail_exponents_exact_values() {
        let p = tail_exponents(5);
        assert_eq!(p[0], 2.0);
        assert_eq!(p[1], 1.0);
        assert!((p[2] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[3] - 0.5).abs() < 1e-15);
        for w in p.windows(2) {
            assert!(w[1] < w[0]);
        }
        // closed form 2/k
        for (k, v) in p.iter().enumerate() {
            assert!((v - 2.0 / (k as f64 + 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn tail_k1_matches_reflection_oracle() {
        let curve = estimate_tail(17, 1, 40_000, 12, &[0.0, 1.0]);
        assert_eq!(curve.exceedance[0], 1.0);
        let oracle = 1.0 - crate::stats::sup_abs_brownian_cdf(1.0, 1.0);
        // grid sup underestimates, so allow the discretization bias on top
        // of 3 standard errors
        let bias_allowance = 0.012; // ~0.53·√Δt at level 12
        let got = curve.exceedance[1];
        assert!(
            (got - oracle).abs() <= 3.0 * curve.stderr[1] + bias_allowance,
            "got {got}, oracle {oracle}"
        );
    }

    #[test]
    fn support_identity_and_psd() {
        let lat = BrownianLattice::sample(23, 5, 2, 1.0, 9).unwrap();
        let mut stream = NormalStream::new(5, 5, 5);
        for _ in 0..20 {
            let xi = DVector::from_fn(3, |_, _| stream.next_normal());
            let (lhs, rhs) = support_quadratic_identity(&lat, &xi);
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        }
        let q = support_matrix(&lat);
        let eig = q.symmetric_eigen();
        assert!(eig.eigenvalues.min() >= -1e-10);
    }

    #[test]
    fn support_zero_path_degenerate() {
        // B ≡ 0: q = 0, sup = 0, det Q = 0 (degenerate block structure);
        // membership is decided by ε^ρ against det Q alone.
        let steps = 1 << 6;
        let lat = BrownianLattice::from_nodes(2, 1.0, vec![0.0; (steps + 1) * 2]).unwrap();
        let rep = support_event(&lat, 0.5, 0.1);
        assert_eq!(rep.q, 0.0);
        assert_eq!(rep.sup_norm, 0.0);
        assert_eq!(rep.det_q, 0.0);
        assert!(!rep.member); // det Q = 0 < ε^ρ
    }
}
