//! Brownian lattices on dyadic grids with cached increments and
//! block-iterated integrals.
//!
//! A lattice holds a `d`-dimensional Brownian path sampled at `2^L + 1`
//! equally spaced nodes on `[0, T]`. Construction is keyed by
//! `(seed, path_index)`; refining to level `L+1` inserts Brownian-bridge
//! midpoints drawn from a dedicated stream lane, so the coarse nodes are
//! preserved exactly.
//!
//! Stratonovich iterated integrals use the midpoint rule
//! `Σ ½(v_l + v_{l+1})(w_{l+1} − w_l)`, which makes the two algebraic
//! identities `|Δ^i|² = 2 Δ^{i,i}` and `Δ^i Δ^j = Δ^{i,j} + Δ^{j,i}` hold
//! exactly on the lattice.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TubeError};
use crate::rng::{purpose_refine, NormalStream, PURPOSE_BASE};

pub const MAX_LEVEL: u32 = 30;

#[derive(Clone, Debug)]
pub struct BrownianLattice {
    d: usize,
    horizon: f64,
    level: u32,
    seed: u64,
    path_index: u64,
    /// `(steps + 1) * d` node values, node-major.
    nodes: Vec<f64>,
}

impl BrownianLattice {
    /// Sample a fresh lattice with i.i.d. `N(0, Δt)` increments.
    pub fn sample(seed: u64, path_index: u64, d: usize, horizon: f64, level: u32) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(TubeError::InvalidArgument(format!(
                "lattice level {level} exceeds {MAX_LEVEL}"
            )));
        }
        if d == 0 || horizon <= 0.0 {
            return Err(TubeError::InvalidArgument(
                "lattice needs d >= 1 and a positive horizon".into(),
            ));
        }
        let steps = 1usize << level;
        let dt_sqrt = (horizon / steps as f64).sqrt();
        let mut stream = NormalStream::new(seed, path_index, PURPOSE_BASE);
        let mut nodes = vec![0.0; (steps + 1) * d];
        for k in 0..steps {
            for j in 0..d {
                nodes[(k + 1) * d + j] = nodes[k * d + j] + dt_sqrt * stream.next_normal();
            }
        }
        Ok(Self {
            d,
            horizon,
            level,
            seed,
            path_index,
            nodes,
        })
    }

    /// Wrap explicit node values (node-major, `(2^L + 1) * d` entries) as a
    /// lattice. Used for crafted control paths in studies and tests.
    pub fn from_nodes(d: usize, horizon: f64, nodes: Vec<f64>) -> Result<Self> {
        if d == 0 || horizon <= 0.0 || nodes.len() % d != 0 {
            return Err(TubeError::InvalidArgument("bad node layout".into()));
        }
        let count = nodes.len() / d;
        let steps = count.checked_sub(1).filter(|s| s.is_power_of_two()).ok_or(
            TubeError::InvalidArgument("node count must be 2^L + 1".into()),
        )?;
        let level = steps.trailing_zeros();
        Ok(Self {
            d,
            horizon,
            level,
            seed: 0,
            path_index: 0,
            nodes,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn steps(&self) -> usize {
        1usize << self.level
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    /// Node values `W_{t_k}` as a `d`-slice.
    #[inline]
    pub fn node(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.d..(k + 1) * self.d]
    }

    pub fn times(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..=self.steps()).map(|k| k as f64 * dt).collect()
    }

    #[inline]
    pub fn increment(&self, k: usize, j: usize) -> f64 {
        self.nodes[(k + 1) * self.d + j] - self.nodes[k * self.d + j]
    }

    /// Refine in place by Brownian-bridge midpoint insertion. Coarse node
    /// values are carried over bit for bit.
    pub fn refine(&mut self) -> Result<()> {
        if self.level + 1 > MAX_LEVEL {
            return Err(TubeError::InvalidArgument(format!(
                "refinement beyond level {MAX_LEVEL}"
            )));
        }
        let steps = self.steps();
        let d = self.d;
        let new_level = self.level + 1;
        let mut stream = NormalStream::new(self.seed, self.path_index, purpose_refine(new_level));
        let half_sd = (self.dt() / 4.0).sqrt();
        let mut nodes = vec![0.0; (2 * steps + 1) * d];
        for k in 0..steps {
            let left = &self.nodes[k * d..(k + 1) * d];
            let right = &self.nodes[(k + 1) * d..(k + 2) * d];
            nodes[2 * k * d..(2 * k + 1) * d].copy_from_slice(left);
            for j in 0..d {
                nodes[(2 * k + 1) * d + j] =
                    0.5 * (left[j] + right[j]) + half_sd * stream.next_normal();
            }
        }
        let last = &self.nodes[steps * d..(steps + 1) * d];
        nodes[2 * steps * d..(2 * steps + 1) * d].copy_from_slice(last);
        self.nodes = nodes;
        self.level = new_level;
        Ok(())
    }

    /// Index of the lattice node nearest to time `t`.
    pub fn node_index(&self, t: f64) -> usize {
        let k = (t / self.dt()).round() as isize;
        k.clamp(0, self.steps() as isize) as usize
    }

    /// Boundaries of the `d` sub-blocks of `[0, δ]` (`s_k = k δ / d`),
    /// snapped to lattice nodes. `block` is 1-based as in the block
    /// quantities `Δ_k`.
    pub fn block_range(&self, delta: f64, block: usize, noise_dim: usize) -> Result<(usize, usize)> {
        if block == 0 || block > noise_dim {
            return Err(TubeError::InvalidArgument(format!(
                "block {block} out of 1..={noise_dim}"
            )));
        }
        if delta > self.horizon * (1.0 + 1e-12) {
            return Err(TubeError::InvalidArgument(format!(
                "delta {delta} exceeds lattice horizon {}",
                self.horizon
            )));
        }
        let lo = self.node_index((block - 1) as f64 * delta / noise_dim as f64);
        let hi = self.node_index(block as f64 * delta / noise_dim as f64);
        if hi < lo + 2 {
            return Err(TubeError::UnresolvedBlock {
                lo: lo as f64 * self.dt(),
                hi: hi as f64 * self.dt(),
                steps: hi.saturating_sub(lo),
                needed: 2,
            });
        }
        Ok((lo, hi))
    }
}

/// Iterated integrals of one sub-block: the increment vector `Δ_k^i` and
/// the matrix `Δ_k^{i,j} = ∫ (W^i − W^i_{s_{k−1}}) ∘ dW^j` over
/// `[s_{k−1}(δ), s_k(δ)]`, midpoint rule.
#[derive(Clone, Debug)]
pub struct BlockIntegrals {
    pub increments: DVector<f64>,
    pub pairs: DMatrix<f64>,
}

pub fn iterated_integrals(
    lattice: &BrownianLattice,
    delta: f64,
    block: usize,
) -> Result<BlockIntegrals> {
    let d = lattice.d();
    let (lo, hi) = lattice.block_range(delta, block, d)?;
    Ok(block_integrals_on_range(lattice, lo, hi))
}

/// Midpoint-rule integrals over an explicit node range.
pub fn block_integrals_on_range(
    lattice: &BrownianLattice,
    lo: usize,
    hi: usize,
) -> BlockIntegrals {
    let d = lattice.d();
    let base = lattice.node(lo).to_vec();
    let mut increments = DVector::zeros(d);
    for j in 0..d {
        increments[j] = lattice.node(hi)[j] - base[j];
    }
    let mut pairs = DMatrix::zeros(d, d);
    for k in lo..hi {
        let left = lattice.node(k);
        let right = lattice.node(k + 1);
        for i in 0..d {
            let mid_i = 0.5 * (left[i] + right[i]) - base[i];
            for j in 0..d {
                pairs[(i, j)] += mid_i * (right[j] - left[j]);
            }
        }
    }
    BlockIntegrals { increments, pairs }
}

/// Midpoint-rule Stratonovich integral `∫_0^{t_k} W^i ∘ dW^j` accumulated
/// from node 0 up to node `hi` (used as an independent summation check and
/// by the chaos process evaluator).
pub fn stratonovich_pair_integral(
    lattice: &BrownianLattice,
    i: usize,
    j: usize,
    hi: usize,
) -> f64 {
    let mut acc = 0.0;
    for k in 0..hi {
        let left = lattice.node(k);
        let right = lattice.node(k + 1);
        acc += 0.5 * (left[i] + right[i]) * (right[j] - left[j]);
    }
    acc
}
