//! Skeleton and SDE integration.
//!
//! The skeleton `dx = Σ σ_j(t,x) φ^j(t) dt + b(t,x) dt` is integrated with
//! classical fourth-order one-step rules on the requested grid. The
//! Stratonovich SDE uses a Heun predictor-corrector per lattice interval,
//! which is midpoint-consistent with the lattice's iterated integrals:
//! linear-field models reproduce the chaos process exactly, node by node.

use nalgebra::DVector;

use crate::error::{Result, TubeError};
use crate::lattice::BrownianLattice;
use crate::model::{directional_derivative, eval_fields, DiffusionModel};

/// Abort threshold for runaway user models.
pub const DIVERGENCE_GUARD: f64 = 1e8;

pub trait Control: Sync {
    fn dim(&self) -> usize;
    fn eval_into(&self, t: f64, out: &mut [f64]);

    fn eval(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.eval_into(t, out.as_mut_slice());
        out
    }

    /// `∫_0^t |φ_s|² ds` by composite Simpson on a fine grid; exact for the
    /// piecewise-constant controls used throughout.
    fn energy(&self, t: f64) -> f64 {
        let d = self.dim();
        let steps = 4096;
        let h = t / steps as f64;
        let mut buf = vec![0.0; d];
        let mut acc = 0.0;
        for k in 0..steps {
            self.eval_into((k as f64 + 0.5) * h, &mut buf);
            acc += buf.iter().map(|v| v * v).sum::<f64>() * h;
        }
        acc
    }
}

pub struct ZeroControl(pub usize);

impl Control for ZeroControl {
    fn dim(&self) -> usize {
        self.0
    }
    fn eval_into(&self, _t: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn energy(&self, _t: f64) -> f64 {
        0.0
    }
}

pub struct ConstantControl(pub Vec<f64>);

impl Control for ConstantControl {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn eval_into(&self, _t: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
    fn energy(&self, t: f64) -> f64 {
        t * self.0.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Piecewise-constant control on `[t0, t1]` with `segments` equal pieces.
/// Values are segment-major: `values[s * d + j]`.
#[derive(Clone, Debug)]
pub struct PiecewiseConstantControl {
    pub t0: f64,
    pub t1: f64,
    pub d: usize,
    pub values: Vec<f64>,
}

impl PiecewiseConstantControl {
    pub fn new(t0: f64, t1: f64, d: usize, values: Vec<f64>) -> Self {
        assert!(t1 > t0 && !values.is_empty() && values.len() % d == 0);
        Self { t0, t1, d, values }
    }

    pub fn segments(&self) -> usize {
        self.values.len() / self.d
    }

    pub fn segment_at(&self, t: f64) -> usize {
        let n = self.segments();
        let rel = (t - self.t0) / (self.t1 - self.t0);
        ((rel * n as f64).floor() as isize).clamp(0, n as isize - 1) as usize
    }
}

impl Control for PiecewiseConstantControl {
    fn dim(&self) -> usize {
        self.d
    }
    fn eval_into(&self, t: f64, out: &mut [f64]) {
        let s = self.segment_at(t);
        out.copy_from_slice(&self.values[s * self.d..(s + 1) * self.d]);
    }
    fn energy(&self, t: f64) -> f64 {
        let n = self.segments();
        let seg_len = (self.t1 - self.t0) / n as f64;
        let mut acc = 0.0;
        let mut remaining = (t - self.t0).max(0.0);
        for s in 0..n {
            if remaining <= 0.0 {
                break;
            }
            let span = remaining.min(seg_len);
            let sq: f64 = self.values[s * self.d..(s + 1) * self.d]
                .iter()
                .map(|v| v * v)
                .sum();
            acc += sq * span;
            remaining -= span;
        }
        acc
    }
}

/// A time grid with the state at each node.
#[derive(Clone, Debug)]
pub struct PathRecord {
    pub times: Vec<f64>,
    /// node-major, `n` entries per node
    pub states: Vec<f64>,
    pub n: usize,
}

impl PathRecord {
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.n..(k + 1) * self.n]
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.times.len() - 1)
    }

    /// CSV dump with columns `t, x_1..x_n`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for j in 1..=self.n {
            out.push_str(&format!(",x_{j}"));
        }
        out.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t}"));
            for v in self.state(k) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[inline]
fn guard(x: &[f64], t: f64) -> Result<()> {
    if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_GUARD) {
        return Err(TubeError::DivergedPath {
            t,
            guard: DIVERGENCE_GUARD,
        });
    }
    Ok(())
}

struct OdeScratch {
    sig: Vec<f64>,
    b: Vec<f64>,
    phi: Vec<f64>,
}

impl OdeScratch {
    fn new(n: usize, d: usize) -> Self {
        Self {
            sig: vec![0.0; n * d],
            b: vec![0.0; n],
            phi: vec![0.0; d],
        }
    }

    /// `f(t, x) = σ(t,x) φ(t) + b(t,x)`
    fn vector_field(
        &mut self,
        model: &dyn DiffusionModel,
        control: &dyn Control,
        t: f64,
        x: &[f64],
        out: &mut [f64],
    ) {
        let (n, d) = (model.state_dim(), model.noise_dim());
        model.sigma_into(t, x, &mut self.sig);
        model.drift_into(t, x, &mut self.b);
        control.eval_into(t, &mut self.phi);
        for i in 0..n {
            let mut acc = self.b[i];
            for j in 0..d {
                acc += self.sig[j * n + i] * self.phi[j];
            }
            out[i] = acc;
        }
    }
}

/// Integrate the skeleton ODE on `[0, horizon]` with `steps` RK4 steps.
pub fn integrate_skeleton(
    model: &dyn DiffusionModel,
    control: &dyn Control,
    x0: &[f64],
    horizon: f64,
    steps: usize,
) -> Result<PathRecord> {
    let n = model.state_dim();
    let h = horizon / steps as f64;
    let mut scratch = OdeScratch::new(n, model.noise_dim());
    let mut x = x0.to_vec();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity((steps + 1) * n);
    times.push(0.0);
    states.extend_from_slice(&x);
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    );
    for step in 0..steps {
        let t = step as f64 * h;
        scratch.vector_field(model, control, t, &x, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        scratch.vector_field(model, control, t + 0.5 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        scratch.vector_field(model, control, t + 0.5 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        scratch.vector_field(model, control, t + h, &tmp, &mut k4);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        guard(&x, t + h)?;
        times.push((step + 1) as f64 * h);
        states.extend_from_slice(&x);
    }
    Ok(PathRecord { times, states, n })
}

/// One Heun (Stratonovich predictor-corrector) step, shared by the path
/// recorder and the allocation-free Monte Carlo drivers.
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn heun_step(
    model: &dyn DiffusionModel,
    t: f64,
    dt: f64,
    x: &mut [f64],
    dw: &[f64],
    sig0: &mut [f64],
    sig1: &mut [f64],
    b0: &mut [f64],
    b1: &mut [f64],
    pred: &mut [f64],
) {
    let n = x.len();
    let d = dw.len();
    model.sigma_into(t, x, sig0);
    model.drift_into(t, x, b0);
    for i in 0..n {
        let mut acc = x[i] + b0[i] * dt;
        for j in 0..d {
            acc += sig0[j * n + i] * dw[j];
        }
        pred[i] = acc;
    }
    model.sigma_into(t + dt, pred, sig1);
    model.drift_into(t + dt, pred, b1);
    for i in 0..n {
        let mut acc = x[i] + 0.5 * (b0[i] + b1[i]) * dt;
        for j in 0..d {
            acc += 0.5 * (sig0[j * n + i] + sig1[j * n + i]) * dw[j];
        }
        x[i] = acc;
    }
}

/// Integrate the Stratonovich SDE along a lattice path (strong order 1/2).
pub fn integrate_sde(
    model: &dyn DiffusionModel,
    lattice: &BrownianLattice,
    x0: &[f64],
) -> Result<PathRecord> {
    let n = model.state_dim();
    let d = model.noise_dim();
    assert_eq!(d, lattice.d(), "lattice dimension must match the model");
    let steps = lattice.steps();
    let dt = lattice.dt();
    let mut x = x0.to_vec();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity((steps + 1) * n);
    times.push(0.0);
    states.extend_from_slice(&x);
    let mut sig0 = vec![0.0; n * d];
    let mut sig1 = vec![0.0; n * d];
    let mut b0 = vec![0.0; n];
    let mut b1 = vec![0.0; n];
    let mut pred = vec![0.0; n];
    let mut dw = vec![0.0; d];
    for k in 0..steps {
        let t = k as f64 * dt;
        for j in 0..d {
            dw[j] = lattice.increment(k, j);
        }
        heun_step(
            model, t, dt, &mut x, &dw, &mut sig0, &mut sig1, &mut b0, &mut b1, &mut pred,
        );
        guard(&x, t + dt)?;
        times.push((k + 1) as f64 * dt);
        states.extend_from_slice(&x);
    }
    Ok(PathRecord { times, states, n })
}

/// Remainder of the order-two stochastic Taylor expansion at time `t`:
/// `R_t = X_t − X_0 − Z_t − b(0,X_0) t`, with the chaos process `Z` built
/// from `a_i = σ_i(0,X_0)` and `a_{i,j} = ∂_{σ_i} σ_j (0,X_0)`.
pub fn taylor_remainder(
    model: &dyn DiffusionModel,
    lattice: &BrownianLattice,
    x0: &[f64],
    t: f64,
) -> Result<DVector<f64>> {
    use crate::decomp::{z_process, Coefficients};
    let n = model.state_dim();
    let d = model.noise_dim();
    if t > lattice.horizon() * (1.0 + 1e-12) {
        return Err(TubeError::InvalidArgument(format!(
            "t = {t} beyond lattice horizon"
        )));
    }
    let (sig, b) = eval_fields(model, 0.0, x0);
    let mut a = Vec::with_capacity(d);
    for i in 0..d {
        a.push(sig.column(i).into_owned());
    }
    let mut a2 = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            a2.push(directional_derivative(model, i, j, 0.0, x0));
        }
    }
    let coeffs = Coefficients::new(n, d, a, a2);
    let path = integrate_sde(model, lattice, x0)?;
    let k = lattice.node_index(t);
    let x_t = DVector::from_column_slice(path.state(k));
    let z_t = z_process(&coeffs, lattice, t);
    let x0v = DVector::from_column_slice(x0);
    let t_snap = k as f64 * lattice.dt();
    Ok(x_t - x0v - z_t - b * t_snap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BuiltinModel;

    #[test]
    fn zero_control_zero_drift_is_constant() {
        let m = BuiltinModel::Heisenberg;
        let path =
            integrate_skeleton(&m, &ZeroControl(2), &[0.3, -0.2, 1.0], 1.0, 64).unwrap();
        assert_eq!(path.last(), &[0.3, -0.2, 1.0]);
    }

    #[test]
    fn heisenberg_horizontal_line() {
        // constant φ = (a, 0) from the origin: x_T = (aT, 0, 0)
        let m = BuiltinModel::Heisenberg;
        let a = 0.8;
        let path = integrate_skeleton(
            &m,
            &ConstantControl(vec![a, 0.0]),
            &[0.0; 3],
            2.0,
            128,
        )
        .unwrap();
        let x = path.last();
        assert!((x[0] - a * 2.0).abs() < 1e-10);
        assert!(x[1].abs() < 1e-12 && x[2].abs() < 1e-12);
    }

    #[test]
    fn elliptic_linear_flow() {
        let m = BuiltinModel::Elliptic { dim: 2 };
        let path = integrate_skeleton(
            &m,
            &ConstantControl(vec![1.0, 1.0]),
            &[0.0, 0.0],
            1.0,
            32,
        )
        .unwrap();
        assert!((path.last()[0] - 1.0).abs() < 1e-12);
        assert!((path.last()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sde_example1_additive_component_exact() {
        let m = BuiltinModel::Example1;
        let lat = BrownianLattice::sample(4, 9, 2, 1.0, 10).unwrap();
        let path = integrate_sde(&m, &lat, &[0.0, 0.0]).unwrap();
        let k = lat.steps();
        assert!((path.state(k)[0] - lat.node(k)[0]).abs() < 1e-12);
        // X² equals the midpoint sum Σ ½(W¹_l + W¹_{l+1}) ΔW²_l exactly
        let mid_sum = crate::lattice::stratonovich_pair_integral(&lat, 0, 1, k);
        assert!((path.state(k)[1] - mid_sum).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_lattice_keeps_state() {
        // all increments zero and b = 0: the path never moves
        let steps = 1 << 6;
        let lat = BrownianLattice::from_nodes(2, 1.0, vec![0.0; (steps + 1) * 2]).unwrap();
        let m = BuiltinModel::Heisenberg;
        let path = integrate_sde(&m, &lat, &[2.0, -3.0, 0.5]).unwrap();
        assert_eq!(path.last(), &[2.0, -3.0, 0.5]);
    }

    #[test]
    fn divergence_guard_fires() {
        struct Blowup;
        impl DiffusionModel for Blowup {
            fn state_dim(&self) -> usize {
                1
            }
            fn noise_dim(&self) -> usize {
                1
            }
            fn sigma_into(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
                out[0] = 0.0;
            }
            fn drift_into(&self, _t: f64, x: &[f64], out: &mut [f64]) {
                out[0] = 1e9 * (1.0 + x[0] * x[0]);
            }
            fn bound(&self, _t: f64, _x: &[f64]) -> f64 {
                1.0
            }
        }
        let err = integrate_skeleton(&Blowup, &ZeroControl(1), &[0.0], 1.0, 16).unwrap_err();
        assert!(matches!(err, TubeError::DivergedPath { .. }));
    }

    #[test]
    fn strong_convergence_on_example1() {
        // error against a 4x finer self-consistent reference halves like
        // Δt^{1/2} on multiplicative noise
        let m = BuiltinModel::Example1;
        let mut errs = Vec::new();
        for level in [6u32, 8] {
            let mut rms = 0.0;
            let paths = 64;
            for p in 0..paths {
                let mut lat = BrownianLattice::sample(13, p, 2, 1.0, level).unwrap();
                let coarse = integrate_sde(&m, &lat, &[1.0, 0.0]).unwrap();
                lat.refine().unwrap();
                lat.refine().unwrap();
                let fine = integrate_sde(&m, &lat, &[1.0, 0.0]).unwrap();
                let e0 = coarse.last()[1] - fine.last()[1];
                rms += e0 * e0;
            }
            errs.push((rms / paths as f64).sqrt());
        }
        // Δt shrank by 4 between the two levels: expect roughly halving
        assert!(
            errs[1] < errs[0] / 1.3,
            "strong error did not shrink: {errs:?}"
        );
    }

    #[test]
    fn taylor_remainder_vanishes_for_linear_fields() {
        // constant-coefficient and linear-field models have an exact
        // order-two expansion: elliptic, Heisenberg (any x0), Example1
        let lat = BrownianLattice::sample(8, 0, 2, 0.5, 10).unwrap();
        for (model, x0) in [
            (BuiltinModel::Elliptic { dim: 2 }, vec![0.0, 0.0]),
            (BuiltinModel::Heisenberg, vec![0.0, 0.0, 0.0]),
            (BuiltinModel::Heisenberg, vec![1.0, -2.0, 0.7]),
            (BuiltinModel::Example1, vec![0.0, 0.0]),
            (BuiltinModel::Example1, vec![2.0, 1.0]),
        ] {
            let lat = if model.state_dim() == 2 {
                lat.clone()
            } else {
                BrownianLattice::sample(8, 0, 2, 0.5, 10).unwrap()
            };
            let r = taylor_remainder(&model, &lat, &x0, 0.5).unwrap();
            assert!(
                r.norm() < 1e-10,
                "remainder {r:?} for {} at {x0:?}",
                model.name()
            );
        }
    }

    #[test]
    fn taylor_remainder_three_halves_rate_on_nonlinear_fields() {
        // Nonlinear fields make the remainder genuinely O(t^{3/2}):
        // log-log slope of E|R_t| over dyadic t at least 1.4.
        struct Curved;
        impl DiffusionModel for Curved {
            fn state_dim(&self) -> usize {
                2
            }
            fn noise_dim(&self) -> usize {
                2
            }
            fn sigma_into(&self, _t: f64, x: &[f64], out: &mut [f64]) {
                out[0] = 1.0;
                out[1] = 0.2 * x[1];
                out[2] = 0.0;
                out[3] = (x[0]).sin() + 1.5;
            }
            fn drift_into(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
                out.fill(0.0);
            }
            fn bound(&self, _t: f64, _x: &[f64]) -> f64 {
                4.0
            }
        }
        let ts = [0.25, 0.125, 0.0625, 0.03125];
        let mut means = Vec::new();
        for &t in &ts {
            let mut acc = 0.0;
            let paths = 200;
            for p in 0..paths {
                let lat = BrownianLattice::sample(23, p, 2, t, 12).unwrap();
                let r = taylor_remainder(&Curved, &lat, &[0.3, -0.1], t).unwrap();
                acc += r.norm();
            }
            means.push(acc / paths as f64);
        }
        // least-squares slope of log E|R| vs log t
        let xs: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
        let ys: Vec<f64> = means.iter().map(|m| m.ln()).collect();
        let xm = xs.iter().sum::<f64>() / xs.len() as f64;
        let ym = ys.iter().sum::<f64>() / ys.len() as f64;
        let slope = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - xm) * (y - ym))
            .sum::<f64>()
            / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>();
        assert!(slope >= 1.4, "remainder slope {slope} below 1.4: {means:?}");
    }
}
