//! Quantitative inverse-function machinery and perturbed Gaussian density
//! sandwiches.
//!
//! `Φ(θ) = θ + η(θ)` with `η(0) = 0` and `|∇η(0)| ≤ ½` is inverted on
//! `B(0, h/2)` by the contraction iteration
//! `θ_{k+1} = (∇Φ(0))^{-1} (y − [η(θ_k) − ∇η(0) θ_k])`, whose Lipschitz
//! constant is ½ on `B(0, 2h)` when
//! `h ≤ ½ ∧ 1 / (4 d³ (c₂ + c₃))`. The resulting inverse satisfies
//! `¼ |Φ^{-1}(y)| ≤ |y| ≤ 4 |Φ^{-1}(y)|`.
//!
//! For `G = y + Γ Θ + η(Θ)` with `Θ ~ N(0, Q)` the density on the
//! `Γ`-ball of radius `r` is sandwiched between explicit Gaussian-shaped
//! envelopes driven by the extreme eigenvalues of `Q`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TubeError};
use crate::rng::NormalStream;

/// A perturbation `η: R^d → R^d` with certified derivative bounds on the
/// unit ball: `c2 >= sup |∂²_{ij} η^k|`, `c3 >= sup |∂³_{ijk} η^l|`.
pub struct PerturbationProfile<'a> {
    pub dim: usize,
    pub eta: &'a (dyn Fn(&[f64], &mut [f64]) + Sync),
    /// `∇η(0)`, row-major `dim x dim`.
    pub grad0: DMatrix<f64>,
    pub c2: f64,
    pub c3: f64,
}

impl<'a> PerturbationProfile<'a> {
    /// The inversion radius: `h ≤ ½` and `h ≤ 1/(4 d³ (c₂ + c₃))`.
    pub fn h_eta(&self) -> f64 {
        let d3 = (self.dim * self.dim * self.dim) as f64;
        let cap = if self.c2 + self.c3 > 0.0 {
            1.0 / (4.0 * d3 * (self.c2 + self.c3))
        } else {
            f64::INFINITY
        };
        0.5_f64.min(cap)
    }

    pub fn eval(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        (self.eta)(theta.as_slice(), out.as_mut_slice());
        out
    }

    /// `Φ(θ) = θ + η(θ)`
    pub fn phi(&self, theta: &DVector<f64>) -> DVector<f64> {
        theta + self.eval(theta)
    }

    /// One step of the contraction map `U_y`.
    pub fn contraction_step(
        &self,
        grad_phi0_inv: &DMatrix<f64>,
        y: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> DVector<f64> {
        // tail(θ) = η(θ) − ∇η(0) θ is the quadratic remainder of η at 0
        let tail = self.eval(theta) - &self.grad0 * theta;
        grad_phi0_inv * (y - tail)
    }
}

const RESIDUAL_TOL: f64 = 1e-12;
const MAX_ITERS: usize = 200;

/// Solve `Φ(θ) = θ + η(θ) = y` for `|y| ≤ h_eta / 2`.
pub fn invert_phi(profile: &PerturbationProfile, y: &DVector<f64>) -> Result<DVector<f64>> {
    let h = profile.h_eta();
    let radius = 0.5 * h;
    if y.norm() > radius {
        return Err(TubeError::OutOfRadius {
            norm: y.norm(),
            radius,
        });
    }
    let grad0_norm = profile.grad0.clone().svd(false, false).singular_values.max();
    if grad0_norm > 0.5 + 1e-12 {
        return Err(TubeError::InvalidArgument(format!(
            "|∇η(0)| = {grad0_norm} exceeds 1/2"
        )));
    }
    let d = profile.dim;
    let grad_phi0 = DMatrix::identity(d, d) + &profile.grad0;
    let grad_phi0_inv = grad_phi0
        .try_inverse()
        .ok_or_else(|| TubeError::InvalidArgument("∇Φ(0) not invertible".into()))?;
    let mut theta = DVector::zeros(d);
    for _ in 0..MAX_ITERS {
        let next = profile.contraction_step(&grad_phi0_inv, y, &theta);
        theta = next;
        let residual = (profile.phi(&theta) - y).norm();
        if residual <= RESIDUAL_TOL {
            return Ok(theta);
        }
        if !theta.norm().is_finite() || theta.norm() > 2.0 * h + 1.0 {
            break;
        }
    }
    let residual = (profile.phi(&theta) - y).norm();
    Err(TubeError::NonContraction {
        iters: MAX_ITERS,
        residual,
    })
}

/// Smallest eigenvalue of `B^* B` (squared smallest singular value).
pub fn lambda_star_cols(b: &DMatrix<f64>) -> f64 {
    let s = b.clone().svd(false, false).singular_values;
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    min * min
}

/// Diagnostics of the perturbed linear solve `y = Bθ + r(θ)`: both sides
/// of the two certified bounds.
#[derive(Clone, Debug)]
pub struct PerturbedSolve {
    pub theta: DVector<f64>,
    /// `|θ|` and its certified cap `4 λ_*^{-1/2}(B) |y|`
    pub theta_norm: f64,
    pub theta_cap: f64,
    /// `|θ⃗|` (trailing block) and its certified cap through `Π^⊥` and the
    /// orthogonalized trailing columns
    pub trailing_norm: f64,
    pub trailing_cap: f64,
}

/// Solve `y = B θ + r(θ)` with `r(0) = ∇r(0) = 0` under the caps
/// `|y| < λ_*^{1/2}(B)/4` and `|y| < λ_*(B) / (8 d³ (c₂(r) + c₃(r)))`.
/// `d_prime` splits the coordinates into leading/trailing blocks.
pub fn solve_perturbed_linear(
    b: &DMatrix<f64>,
    r: &(dyn Fn(&[f64], &mut [f64]) + Sync),
    c2_r: f64,
    c3_r: f64,
    y: &DVector<f64>,
    d_prime: usize,
) -> Result<PerturbedSolve> {
    let d = b.nrows();
    assert_eq!(b.ncols(), d);
    assert!((1..=d).contains(&d_prime));
    let lam = lambda_star_cols(b);
    if lam <= 0.0 || !lam.is_finite() {
        return Err(TubeError::SingularB { lambda: lam });
    }
    let cap1 = lam.sqrt() / 4.0;
    let cap2 = if c2_r + c3_r > 0.0 {
        lam / (8.0 * (d * d * d) as f64 * (c2_r + c3_r))
    } else {
        f64::INFINITY
    };
    let y_norm = y.norm();
    if y_norm >= cap1 || y_norm >= cap2 {
        return Err(TubeError::CapViolated {
            what: format!("|y| = {y_norm:.3e} vs caps ({cap1:.3e}, {cap2:.3e})"),
        });
    }
    let b_inv = b
        .clone()
        .try_inverse()
        .ok_or(TubeError::SingularB { lambda: lam })?;
    // θ ← B^{-1}(y − r(θ)); contraction on the admissible ball
    let mut theta = DVector::zeros(d);
    let mut rbuf = DVector::zeros(d);
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        (r)(theta.as_slice(), rbuf.as_mut_slice());
        let next = &b_inv * (y - &rbuf);
        residual = (&next - &theta).norm();
        theta = next;
        if residual <= RESIDUAL_TOL {
            break;
        }
    }
    if residual > 1e-9 {
        return Err(TubeError::NonContraction {
            iters: MAX_ITERS,
            residual,
        });
    }

    let theta_norm = theta.norm();
    let theta_cap = 4.0 / lam.sqrt() * y_norm;

    // orthogonalized trailing columns: Π^⊥ projects off the leading span
    let leading = b.columns(0, d_prime).into_owned();
    let svd = leading.svd(true, false);
    let u = svd.u.as_ref().expect("svd u");
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-12 * smax)
        .count();
    let us = u.columns(0, rank).into_owned();
    let proj_s = &us * us.transpose();
    let proj_perp = DMatrix::identity(d, d) - &proj_s;
    let trailing = b.columns(d_prime, d - d_prime).into_owned();
    let trailing_perp = &proj_perp * &trailing;

    let trailing_norm = theta.rows(d_prime, d - d_prime).norm();
    let trailing_cap = if d_prime == d {
        0.0
    } else {
        let lam_perp = lambda_star_cols(&trailing_perp);
        let b_inf = b.iter().cloned().fold(0.0_f64, |a, v| a.max(v.abs()));
        let perp_y = (&proj_perp * y).norm();
        b_inf / lam_perp * perp_y + 16.0 * c2_r * b_inf / (lam_perp * lam) * y_norm * y_norm
    };

    Ok(PerturbedSolve {
        theta,
        theta_norm,
        theta_cap,
        trailing_norm,
        trailing_cap,
    })
}

// ---------------------------------------------------------------------
// Density sandwich
// ---------------------------------------------------------------------

/// `c_*(η, h) = sup_{|x| ≤ 2h} max_{i,j} |∂_i η^j|`, estimated by central
/// differences on randomized probe points when not declared.
pub fn probe_c_star(
    eta: &(dyn Fn(&[f64], &mut [f64]) + Sync),
    dim_in: usize,
    dim_out: usize,
    h: f64,
    probes: usize,
    seed: u64,
) -> f64 {
    let mut stream = NormalStream::new(seed, 0, 0);
    let fd = 1e-6 * (1.0 + 2.0 * h);
    let mut sup: f64 = 0.0;
    let mut xp = vec![0.0; dim_in];
    let mut plus = vec![0.0; dim_out];
    let mut minus = vec![0.0; dim_out];
    for _ in 0..probes {
        // uniform direction scaled into B(0, 2h)
        let mut x: Vec<f64> = (0..dim_in).map(|_| stream.next_normal()).collect();
        let nrm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let rad = 2.0 * h * stream.next_uniform();
        for v in &mut x {
            *v *= rad / nrm;
        }
        for i in 0..dim_in {
            xp.copy_from_slice(&x);
            xp[i] = x[i] + fd;
            (eta)(&xp, &mut plus);
            xp[i] = x[i] - fd;
            (eta)(&xp, &mut minus);
            for j in 0..dim_out {
                sup = sup.max(((plus[j] - minus[j]) / (2.0 * fd)).abs());
            }
        }
    }
    sup
}

/// The two envelope values at `|z − y|_Γ² = s²` for `Θ ~ N(0, Q)` in
/// dimension `m` mapped to `R^n` through `Γ`.
pub fn density_envelopes(
    q: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    gamma_dist_sq: f64,
) -> (f64, f64) {
    let m = q.nrows() as f64;
    let n = gamma.nrows() as f64;
    let eig = q.clone().symmetric_eigen();
    let lam_lo = eig.eigenvalues.min();
    let lam_hi = eig.eigenvalues.max();
    let det_q = eig.eigenvalues.iter().product::<f64>();
    let gg = gamma * gamma.transpose();
    let det_gg = gg.determinant();
    let pi = std::f64::consts::PI;
    let lower = lam_lo.powf((m - n) / 2.0)
        / (pi.powf(n / 2.0)
            * 8.0_f64.powf(m / 2.0)
            * 2.0_f64.powf((m - n) / 2.0)
            * (det_q * det_gg).sqrt())
        * (-2.0 / lam_lo * gamma_dist_sq).exp();
    let upper = lam_hi.powf((m - n) / 2.0) * 8.0_f64.powf((m - n) / 2.0) * 2.0_f64.powf(m / 2.0)
        / (pi.powf(n / 2.0) * (det_q * det_gg).sqrt())
        * (-1.0 / (8.0 * lam_hi) * gamma_dist_sq).exp();
    (lower, upper)
}

/// One histogram bin of the sandwich check (scalar target, `n = 1`).
#[derive(Clone, Debug)]
pub struct DensityBin {
    pub z_lo: f64,
    pub z_hi: f64,
    pub p_emp: f64,
    pub stderr: f64,
    pub lower_int: f64,
    pub upper_int: f64,
    pub ok: bool,
}

#[derive(Clone, Debug)]
pub struct DensityReport {
    pub bins: Vec<DensityBin>,
    pub all_ok: bool,
    pub radius: f64,
}

/// Simulate `G = y + ΓΘ + η(Θ)` and check the histogram on `B_Γ(y, r)`
/// against the envelope integrals, bin by bin at three standard errors.
/// Scalar target only (`Γ` is `1 x m`), which covers the sandwich both in
/// the square case `m = 1` and the marginal case `m > n`.
#[allow(clippy::too_many_arguments)]
pub fn density_sandwich_check(
    q: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    y: f64,
    eta: &(dyn Fn(&[f64], &mut [f64]) + Sync),
    h_eta: f64,
    c_star_4r: impl Fn(f64) -> f64,
    n_samples: u64,
    n_bins: usize,
    seed: u64,
) -> Result<DensityReport> {
    let m = q.nrows();
    assert_eq!(gamma.nrows(), 1);
    assert_eq!(gamma.ncols(), m);
    let gg = (gamma * gamma.transpose())[(0, 0)];
    let lam_gamma = gg; // single row: ΓΓ^* is scalar
    // (DENSITY6): r ≤ ½ λ_*(Γ)^{1/2} h_eta and c_*(η, 4r)/λ_*^{1/2} ≤ 1/(2m)
    let r = 0.5 * lam_gamma.sqrt() * h_eta;
    if c_star_4r(4.0 * r) / lam_gamma.sqrt() > 1.0 / (2.0 * m as f64) {
        return Err(TubeError::CapViolated {
            what: "c_*(η, 4r) too large for the density sandwich".into(),
        });
    }
    let chol = q
        .clone()
        .cholesky()
        .ok_or_else(|| TubeError::InvalidArgument("Q not positive definite".into()))?;
    let l = chol.l();

    // histogram over z ∈ [y − w, y + w], w = r √(ΓΓ^*): |z−y|_Γ = |z−y|/√gg
    let w = r * gg.sqrt();
    let mut counts = vec![0u64; n_bins];
    let mut stream = NormalStream::new(seed, 0, 0);
    let mut zvec = DVector::zeros(m);
    let mut eta_out = vec![0.0; 1];
    for _ in 0..n_samples {
        for i in 0..m {
            zvec[i] = stream.next_normal();
        }
        let theta = &l * &zvec;
        (eta)(theta.as_slice(), &mut eta_out);
        let g = y + (gamma * &theta)[(0, 0)] + eta_out[0];
        let rel = (g - (y - w)) / (2.0 * w);
        if (0.0..1.0).contains(&rel) {
            counts[(rel * n_bins as f64) as usize] += 1;
        }
    }

    let mut bins = Vec::with_capacity(n_bins);
    let mut all_ok = true;
    for (i, &c) in counts.iter().enumerate() {
        let z_lo = y - w + 2.0 * w * i as f64 / n_bins as f64;
        let z_hi = y - w + 2.0 * w * (i + 1) as f64 / n_bins as f64;
        // envelope integrals by composite Simpson
        let quad = |which_lower: bool| -> f64 {
            let pieces = 64;
            let h = (z_hi - z_lo) / pieces as f64;
            let f = |z: f64| {
                let s2 = (z - y) * (z - y) / gg;
                let (lo, hi) = density_envelopes(q, gamma, s2);
                if which_lower {
                    lo
                } else {
                    hi
                }
            };
            let mut acc = f(z_lo) + f(z_hi);
            for k in 1..pieces {
                let z = z_lo + k as f64 * h;
                acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(z);
            }
            acc * h / 3.0
        };
        let lower_int = quad(true);
        let upper_int = quad(false);
        let p_emp = c as f64 / n_samples as f64;
        let stderr = (p_emp * (1.0 - p_emp) / n_samples as f64).sqrt();
        let ok = p_emp + 3.0 * stderr >= lower_int && p_emp - 3.0 * stderr <= upper_int;
        all_ok &= ok;
        bins.push(DensityBin {
            z_lo,
            z_hi,
            p_emp,
            stderr,
            lower_int,
            upper_int,
            ok,
        });
    }
    Ok(DensityReport {
        bins,
        all_ok,
        radius: r,
    })
}
