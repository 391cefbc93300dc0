//! Diffusion models: vector fields, drift, Lie brackets and the local
//! regularity bound `n(t,x)`.
//!
//! A model describes `dX = Σ_j σ_j(t,X) ∘ dW^j + b(t,X) dt` on `R^n` with
//! `d` driving noises. Evaluators are slice-based so the Monte Carlo inner
//! loops stay allocation free; matrix-returning wrappers are provided for
//! analysis code and tests.
//!
//! Evaluators must be pure: they are called concurrently from many workers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TubeError};

/// Relative finite-difference step used when a model does not supply
/// analytic Jacobians. Central differences, scale-aware in `|x|`.
pub fn fd_step(x: &[f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    1e-5 * (1.0 + norm)
}

pub trait DiffusionModel: Sync {
    /// State dimension `n`.
    fn state_dim(&self) -> usize;

    /// Driving-noise dimension `d`.
    fn noise_dim(&self) -> usize;

    /// Write the `n x d` field matrix (column `j` is `σ_j(t,x)`) into
    /// `out`, column-major.
    fn sigma_into(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// Write the drift `b(t,x)` into `out`.
    fn drift_into(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// Spatial Jacobian of `σ_j` (row-major `n x n`). Returns `false` when
    /// no analytic Jacobian is available; callers then fall back to central
    /// finite differences.
    fn sigma_jacobian_into(&self, _t: f64, _x: &[f64], _j: usize, _out: &mut [f64]) -> bool {
        false
    }

    fn drift_jacobian_into(&self, _t: f64, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    /// The regularity bound `n(t,x) >= 1`: a constant dominating every
    /// field, drift and their space/time derivatives up to order three on
    /// the unit ball around `x`. For user models the declared bound is
    /// trusted; built-ins return the analytically smallest valid constant
    /// padded to `>= 1`.
    fn bound(&self, t: f64, x: &[f64]) -> f64;

    fn name(&self) -> &str {
        "user"
    }
}

/// Evaluate `(σ(t,x), b(t,x))` as `(n x d matrix, n-vector)`.
pub fn eval_fields(
    model: &dyn DiffusionModel,
    t: f64,
    x: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let (n, d) = (model.state_dim(), model.noise_dim());
    let mut sig = DMatrix::zeros(n, d);
    model.sigma_into(t, x, sig.as_mut_slice());
    let mut b = DVector::zeros(n);
    model.drift_into(t, x, b.as_mut_slice());
    (sig, b)
}

/// Regularity bound `n(t,x)`.
pub fn regularity_bound(model: &dyn DiffusionModel, t: f64, x: &[f64]) -> f64 {
    model.bound(t, x)
}

/// Spatial Jacobian of `σ_j`, analytic when the model provides it and
/// central finite differences otherwise.
pub fn sigma_jacobian(model: &dyn DiffusionModel, t: f64, x: &[f64], j: usize) -> DMatrix<f64> {
    let n = model.state_dim();
    let mut jac = vec![0.0; n * n];
    if model.sigma_jacobian_into(t, x, j, &mut jac) {
        return DMatrix::from_row_slice(n, n, &jac);
    }
    let d = model.noise_dim();
    let h = fd_step(x);
    let mut xp = x.to_vec();
    let mut plus = vec![0.0; n * d];
    let mut minus = vec![0.0; n * d];
    let mut out = DMatrix::zeros(n, n);
    for col in 0..n {
        xp[col] = x[col] + h;
        model.sigma_into(t, &xp, &mut plus);
        xp[col] = x[col] - h;
        model.sigma_into(t, &xp, &mut minus);
        xp[col] = x[col];
        for row in 0..n {
            // column-major field matrix: entry (row, j) at j*n + row
            out[(row, col)] = (plus[j * n + row] - minus[j * n + row]) / (2.0 * h);
        }
    }
    out
}

/// Directional derivative `∂_{σ_i} σ_j (t,x) = J_{σ_j}(t,x) σ_i(t,x)`.
pub fn directional_derivative(
    model: &dyn DiffusionModel,
    i: usize,
    j: usize,
    t: f64,
    x: &[f64],
) -> DVector<f64> {
    let n = model.state_dim();
    let (sig, _) = eval_fields(model, t, x);
    let jac_j = sigma_jacobian(model, t, x, j);
    let mut si = DVector::zeros(n);
    si.copy_from(&sig.column(i));
    jac_j * si
}

/// Lie bracket `[σ_i, σ_j](t,x) = ∂_{σ_j} σ_i − ∂_{σ_i} σ_j`, antisymmetric
/// in `(i, j)`.
pub fn lie_bracket(
    model: &dyn DiffusionModel,
    i: usize,
    j: usize,
    t: f64,
    x: &[f64],
) -> Result<DVector<f64>> {
    let d = model.noise_dim();
    if i >= d || j >= d {
        return Err(TubeError::IndexOutOfRange {
            index: i.max(j),
            dim: d,
        });
    }
    if i == j {
        return Ok(DVector::zeros(model.state_dim()));
    }
    Ok(directional_derivative(model, j, i, t, x) - directional_derivative(model, i, j, t, x))
}

/// The built-in models. All are time homogeneous with zero drift.
#[derive(Clone, Debug, PartialEq)]
pub enum BuiltinModel {
    /// `σ` = canonical basis of `R^n`, `b = 0`: brackets vanish.
    Elliptic { dim: usize },
    /// `n = d = 2`: `σ_1 = (1, 0)`, `σ_2 = (0, x_1)`, `b = 0`.
    Example1,
    /// Principal invariant diffusion on the Heisenberg group, `n = 3`,
    /// `d = 2`: `σ_1 = (1, 0, −x_2/2)`, `σ_2 = (0, 1, x_1/2)`, `b = 0`.
    Heisenberg,
}

impl BuiltinModel {
    /// Look a model up by its CLI name: `"elliptic"` (with a dimension,
    /// e.g. `"elliptic:3"`, default 1), `"example1"`, `"heisenberg"`.
    pub fn by_name(name: &str) -> Result<Self> {
        let name = name.trim();
        if let Some(rest) = name.strip_prefix("elliptic") {
            let dim = match rest.strip_prefix(':') {
                Some(s) => s
                    .parse::<usize>()
                    .map_err(|_| TubeError::Config(format!("bad elliptic dimension: {s}")))?,
                None if rest.is_empty() => 1,
                _ => return Err(TubeError::Config(format!("unknown model: {name}"))),
            };
            if dim == 0 {
                return Err(TubeError::Config("elliptic dimension must be >= 1".into()));
            }
            return Ok(BuiltinModel::Elliptic { dim });
        }
        match name {
            "example1" => Ok(BuiltinModel::Example1),
            "heisenberg" => Ok(BuiltinModel::Heisenberg),
            _ => Err(TubeError::Config(format!("unknown model: {name}"))),
        }
    }
}

impl DiffusionModel for BuiltinModel {
    fn state_dim(&self) -> usize {
        match self {
            BuiltinModel::Elliptic { dim } => *dim,
            BuiltinModel::Example1 => 2,
            BuiltinModel::Heisenberg => 3,
        }
    }

    fn noise_dim(&self) -> usize {
        match self {
            BuiltinModel::Elliptic { dim } => *dim,
            BuiltinModel::Example1 => 2,
            BuiltinModel::Heisenberg => 2,
        }
    }

    fn sigma_into(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        match self {
            BuiltinModel::Elliptic { dim } => {
                out.fill(0.0);
                for j in 0..*dim {
                    out[j * dim + j] = 1.0;
                }
            }
            BuiltinModel::Example1 => {
                out[0] = 1.0;
                out[1] = 0.0;
                out[2] = 0.0;
                out[3] = x[0];
            }
            BuiltinModel::Heisenberg => {
                out[0] = 1.0;
                out[1] = 0.0;
                out[2] = -0.5 * x[1];
                out[3] = 0.0;
                out[4] = 1.0;
                out[5] = 0.5 * x[0];
            }
        }
    }

    fn drift_into(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn sigma_jacobian_into(&self, _t: f64, _x: &[f64], j: usize, out: &mut [f64]) -> bool {
        out.fill(0.0);
        match self {
            BuiltinModel::Elliptic { .. } => {}
            BuiltinModel::Example1 => {
                if j == 1 {
                    // row-major: d sigma_2 / dx = [[0,0],[1,0]]
                    out[2] = 1.0;
                }
            }
            BuiltinModel::Heisenberg => {
                if j == 0 {
                    out[7] = -0.5; // row 2, col 1
                } else {
                    out[6] = 0.5; // row 2, col 0
                }
            }
        }
        true
    }

    fn drift_jacobian_into(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        true
    }

    fn bound(&self, _t: f64, x: &[f64]) -> f64 {
        match self {
            BuiltinModel::Elliptic { .. } => 1.0,
            // Analytic sup over B(x,1) of the individual field values and
            // derivatives, padded to >= 1.
            BuiltinModel::Example1 => (x[0].abs() + 1.0).max(1.0),
            BuiltinModel::Heisenberg => ((x[0].abs() + 1.0) / 2.0 + 1.0)
                .max((x[1].abs() + 1.0) / 2.0 + 1.0)
                .max(1.0),
        }
    }

    fn name(&self) -> &str {
        match self {
            BuiltinModel::Elliptic { .. } => "elliptic",
            BuiltinModel::Example1 => "example1",
            BuiltinModel::Heisenberg => "heisenberg",
        }
    }
}
