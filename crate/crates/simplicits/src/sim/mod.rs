//! Reduced-space elastodynamics over handle transforms.
//!
//! The network is evaluated once, at a fixed Monte-Carlo cubature drawn in
//! the rest pose; weights, weight gradients, basis rows, and the reduced
//! mass matrix are all cached. Time stepping then never touches the network:
//! backward Euler becomes a small dense minimization over the 12n handle
//! DOFs, solved with projected Newton (see [`Stepper`]).

mod stepper;

pub use stepper::{
    apply_script, barrier_energy, initial_penetration, NewtonReport, StepReport, Stepper,
};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::elastic::{default_fd_step, EnergyKind, HandleTransforms};
use crate::linalg::{DenseMatrix, LinalgError};
use crate::mlp::SkinningField;
use crate::occupancy::{sample_interior_with_volume, OccupancyError, OccupancyField, Region};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid sim config: {0}")]
    Config(String),
    #[error(transparent)]
    Occupancy(#[from] OccupancyError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("cubature count {count} too small for {n} handles (need at least {min})")]
    CubatureTooSmall { count: usize, n: usize, min: usize },
    #[error("infeasible state: cubature point {point} penetrates a collider (distance {distance:e})")]
    Infeasible { point: usize, distance: f64 },
    #[error("non-finite state during step {0}")]
    NonFinite(usize),
}

/// Fixed Monte-Carlo sample of the rest shape with everything the stepper
/// needs cached per point.
#[derive(Debug, Clone)]
pub struct CubatureSet {
    points: Vec<Vector3<f64>>,
    occupancy: Vec<f64>,
    masses: Vec<f64>,
    lambdas: Vec<f64>,
    mus: Vec<f64>,
    /// Cached weights W(X_i), p x n.
    weights: DenseMatrix,
    /// Cached weight gradients, index [i * n + j].
    weight_grads: Vec<Vector3<f64>>,
    /// Basis rows: flatten(x_i - X_i) = B_i z. Stored per point as a 3 x 12n
    /// block, row-major: [i][(a, column)].
    basis: Vec<f64>,
    /// Deformation-gradient generators: F_i(z) = I + sum_j Z_j Ghat_ij with
    /// Ghat a 4x3 block per handle, stored [i][j][c][l].
    generators: Vec<f64>,
    volume: f64,
    n_handles: usize,
    needs_regularization: bool,
}

impl CubatureSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_handles(&self) -> usize {
        self.n_handles
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn needs_regularization(&self) -> bool {
        self.needs_regularization
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn weight_gradient(&self, point: usize, handle: usize) -> Vector3<f64> {
        self.weight_grads[point * self.n_handles + handle]
    }

    /// The 3 x 12n basis block of one point.
    pub fn basis_block(&self, point: usize) -> &[f64] {
        let dofs = 12 * self.n_handles;
        &self.basis[point * 3 * dofs..(point + 1) * 3 * dofs]
    }

    /// `B_i z` for one point.
    pub fn displacement(&self, point: usize, z: &[f64]) -> Vector3<f64> {
        let dofs = 12 * self.n_handles;
        let block = self.basis_block(point);
        let mut out = Vector3::zeros();
        for a in 0..3 {
            out[a] = crate::linalg::dot(&block[a * dofs..(a + 1) * dofs], z);
        }
        out
    }

    /// Deformed position of one cubature point.
    pub fn deformed(&self, point: usize, z: &[f64]) -> Vector3<f64> {
        self.points[point] + self.displacement(point, z)
    }

    /// `B_i^T v` accumulated into `out` with a scale factor.
    pub(crate) fn add_basis_t_vec(&self, point: usize, v: &Vector3<f64>, scale: f64, out: &mut [f64]) {
        let n = self.n_handles;
        let q = homogeneous(&self.points[point]);
        let wrow = self.weights.row(point);
        for j in 0..n {
            let wj = wrow[j];
            if wj == 0.0 {
                continue;
            }
            for a in 0..3 {
                let va = scale * wj * v[a];
                let base = j * 12 + a * 4;
                for c in 0..4 {
                    out[base + c] += va * q[c];
                }
            }
        }
    }

    /// Deformation gradient of one point: `I + sum_j Z_j Ghat_ij`.
    pub fn deformation_gradient(&self, point: usize, transforms: &HandleTransforms) -> Matrix3<f64> {
        let n = self.n_handles;
        let gen = &self.generators[point * n * 12..(point + 1) * n * 12];
        let mut f = Matrix3::identity();
        for j in 0..n {
            let g = &gen[j * 12..(j + 1) * 12];
            for c in 0..4 {
                let zc0 = transforms.entry(j, 0, c);
                let zc1 = transforms.entry(j, 1, c);
                let zc2 = transforms.entry(j, 2, c);
                let gl = &g[c * 3..(c + 1) * 3];
                for l in 0..3 {
                    f[(0, l)] += zc0 * gl[l];
                    f[(1, l)] += zc1 * gl[l];
                    f[(2, l)] += zc2 * gl[l];
                }
            }
        }
        f
    }

    /// Generator block `Ghat_ij` as 4 rows of 3 (`[c][l]`).
    pub(crate) fn generator(&self, point: usize, handle: usize) -> &[f64] {
        let n = self.n_handles;
        &self.generators[point * n * 12 + handle * 12..point * n * 12 + (handle + 1) * 12]
    }

    pub fn occupancy(&self) -> &[f64] {
        &self.occupancy
    }

    pub fn lame(&self, point: usize) -> (f64, f64) {
        (self.lambdas[point], self.mus[point])
    }

    pub fn mean_mu(&self) -> f64 {
        self.mus.iter().sum::<f64>() / self.mus.len().max(1) as f64
    }

    /// Reduced linear momentum `sum_i m_i B_i zdot`.
    pub fn linear_momentum(&self, zdot: &[f64]) -> Vector3<f64> {
        let mut p = Vector3::zeros();
        for i in 0..self.len() {
            p += self.masses[i] * self.displacement(i, zdot);
        }
        p
    }

    /// Elastic potential energy `(V/p) sum_i phi_i psi(F_i(z))`.
    pub fn elastic_energy(&self, kind: EnergyKind, z: &[f64]) -> f64 {
        let transforms = HandleTransforms::from_flat(z.to_vec());
        let w = self.volume / self.len() as f64;
        (0..self.len())
            .map(|i| {
                let f = self.deformation_gradient(i, &transforms);
                w * self.occupancy[i] * crate::elastic::psi(kind, &f, self.lambdas[i], self.mus[i])
            })
            .sum()
    }

    /// Indices of cubature points inside a region (selected at rest).
    pub fn points_in_region(&self, region: &Region) -> Vec<usize> {
        (0..self.len()).filter(|&i| region.contains(&self.points[i])).collect()
    }
}

#[inline]
fn homogeneous(x: &Vector3<f64>) -> [f64; 4] {
    [x.x, x.y, x.z, 1.0]
}

/// Samples the cubature once and caches weights, weight gradients (central
/// differences), basis rows, and deformation-gradient generators.
pub fn build_cubature(
    field: &OccupancyField,
    net: &SkinningField,
    count: usize,
    seed: u64,
) -> Result<CubatureSet, SimError> {
    let n = net.n_handles();
    let min = 4 * n;
    if count < min {
        return Err(SimError::CubatureTooSmall { count, n, min });
    }
    let sample = sample_interior_with_volume(field, count, seed)?;
    let p = sample.points.len();
    let volume = sample.volume.volume;

    let positions: Vec<Vector3<f64>> = sample.points.iter().map(|s| s.position).collect();
    let weights = net.forward_batch(&positions);

    let h = default_fd_step(net);
    let mut offset_queries = Vec::with_capacity(6 * p);
    for x in &positions {
        for k in 0..3 {
            let mut plus = *x;
            let mut minus = *x;
            plus[k] += h;
            minus[k] -= h;
            offset_queries.push(plus);
            offset_queries.push(minus);
        }
    }
    let offsets = net.forward_batch(&offset_queries);
    let mut weight_grads = vec![Vector3::zeros(); p * n];
    for i in 0..p {
        for j in 0..n {
            let mut g = Vector3::zeros();
            for k in 0..3 {
                let wp = offsets.row(i * 6 + k * 2)[j];
                let wm = offsets.row(i * 6 + k * 2 + 1)[j];
                g[k] = (wp - wm) / (2.0 * h);
            }
            weight_grads[i * n + j] = g;
        }
    }

    let dofs = 12 * n;
    let mut basis = vec![0.0; p * 3 * dofs];
    let mut generators = vec![0.0; p * n * 12];
    for i in 0..p {
        let q = homogeneous(&positions[i]);
        let wrow = weights.row(i);
        let block = &mut basis[i * 3 * dofs..(i + 1) * 3 * dofs];
        for j in 0..n {
            for a in 0..3 {
                for c in 0..4 {
                    block[a * dofs + j * 12 + a * 4 + c] = wrow[j] * q[c];
                }
            }
        }
        for j in 0..n {
            let w = wrow[j];
            let grad = weight_grads[i * n + j];
            let g = &mut generators[i * n * 12 + j * 12..i * n * 12 + (j + 1) * 12];
            // Columns c < 3: g_c = w e_c + X_c grad; column 3: grad.
            for c in 0..3 {
                for l in 0..3 {
                    g[c * 3 + l] = positions[i][c] * grad[l];
                }
                g[c * 3 + c] += w;
            }
            for l in 0..3 {
                g[9 + l] = grad[l];
            }
        }
    }

    let masses: Vec<f64> =
        sample.points.iter().map(|s| s.density * volume / p as f64).collect();
    let cubature = CubatureSet {
        points: positions,
        occupancy: sample.points.iter().map(|s| s.occupancy).collect(),
        masses,
        lambdas: sample.points.iter().map(|s| s.lambda).collect(),
        mus: sample.points.iter().map(|s| s.mu).collect(),
        weights,
        weight_grads,
        basis,
        generators,
        volume,
        n_handles: n,
        needs_regularization: false,
    };

    // Rank check on the reduced metric; a deficient basis flips on Tikhonov
    // regularization in the Newton solves.
    let mass_matrix = build_mass_matrix(&cubature);
    let (eigs, _) = crate::linalg::sym_eig(&mass_matrix)?;
    let max_eig = eigs.last().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let deficient = eigs.first().copied().unwrap_or(0.0) < 1e-10 * max_eig;
    let mut cubature = cubature;
    cubature.needs_regularization = deficient;
    Ok(cubature)
}

/// Reduced mass matrix `M = B^T M_p B` with `M_p` the lumped point masses.
///
/// Uses the block structure `M[(j,a,c),(k,a',c')] = delta_aa' S_jk_cc'` with
/// `S = sum_i m_i w_ij w_ik q_c q_c'`.
pub fn build_mass_matrix(cub: &CubatureSet) -> DenseMatrix {
    let n = cub.n_handles;
    let dofs = 12 * n;
    let mut s = vec![0.0; n * n * 16];
    for i in 0..cub.len() {
        let q = homogeneous(&cub.points[i]);
        let wrow = cub.weights.row(i);
        let m = cub.masses[i];
        if m == 0.0 {
            continue;
        }
        for j in 0..n {
            let mj = m * wrow[j];
            for k in 0..n {
                let mjk = mj * wrow[k];
                let block = &mut s[(j * n + k) * 16..(j * n + k + 1) * 16];
                for c in 0..4 {
                    let qc = mjk * q[c];
                    for cc in 0..4 {
                        block[c * 4 + cc] += qc * q[cc];
                    }
                }
            }
        }
    }
    let mut mass = DenseMatrix::zeros(dofs, dofs);
    for j in 0..n {
        for k in 0..n {
            let block = &s[(j * n + k) * 16..(j * n + k + 1) * 16];
            for a in 0..3 {
                for c in 0..4 {
                    for cc in 0..4 {
                        mass[(j * 12 + a * 4 + c, k * 12 + a * 4 + cc)] += block[c * 4 + cc];
                    }
                }
            }
        }
    }
    mass
}

/// Reduced simulation state: handle DOFs, their velocity, time, and the last
/// barrier stiffness used.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub z: Vec<f64>,
    pub zdot: Vec<f64>,
    pub time: f64,
    pub kappa: f64,
}

impl SimState {
    /// Rest pose: zero transforms and velocity.
    pub fn rest(n_handles: usize, kappa0: f64) -> Self {
        Self { z: vec![0.0; 12 * n_handles], zdot: vec![0.0; 12 * n_handles], time: 0.0, kappa: kappa0 }
    }
}

/// Static pin: points in the region are held at their rest positions by
/// penalty springs.
#[derive(Debug, Clone, PartialEq)]
pub struct PinSet {
    pub region: Region,
    pub stiffness: Option<f64>,
}

/// One keyframe of a rigid motion: rotation as an axis-angle vector applied
/// about `MotionScript::center`, then a translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keyframe {
    pub time: f64,
    pub translation: Vector3<f64>,
    pub rotation: Vector3<f64>,
}

/// Keyframed rigid-motion script driving the points of a region through
/// penalty targets; piecewise-linear in the keyframe parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionScript {
    pub region: Region,
    pub center: Vector3<f64>,
    pub keyframes: Vec<Keyframe>,
    pub stiffness: Option<f64>,
}

/// Static analytic colliders with outside-positive signed distance.
#[derive(Debug, Clone, PartialEq)]
pub enum Collider {
    /// Half-space floor: `d = z - height`.
    Ground { height: f64 },
    Sphere { center: Vector3<f64>, radius: f64 },
}

impl Collider {
    pub fn distance(&self, x: &Vector3<f64>) -> f64 {
        match self {
            Collider::Ground { height } => x.z - height,
            Collider::Sphere { center, radius } => (x - center).norm() - radius,
        }
    }

    pub fn gradient(&self, x: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Collider::Ground { .. } => Vector3::z(),
            Collider::Sphere { center, .. } => {
                let d = x - center;
                let norm = d.norm().max(1e-12);
                d / norm
            }
        }
    }

    /// Spatial Hessian of the signed distance.
    pub fn distance_hessian(&self, x: &Vector3<f64>) -> Matrix3<f64> {
        match self {
            Collider::Ground { .. } => Matrix3::zeros(),
            Collider::Sphere { center, .. } => {
                let d = x - center;
                let norm = d.norm().max(1e-12);
                let n = d / norm;
                (Matrix3::identity() - n * n.transpose()) / norm
            }
        }
    }
}

/// Resolved integrator settings for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub timestep: f64,
    pub gravity: Vector3<f64>,
    pub newton_max_iters: usize,
    pub newton_tol: f64,
    pub barrier_iters: usize,
    pub barrier_kappa0: f64,
    pub barrier_growth: f64,
    /// Barrier clamp distance; `None` resolves to 1% of the bbox diagonal.
    pub barrier_dhat: Option<f64>,
    /// Penalty stiffness; `None` resolves to `1e5 * mean_mu * V^(1/3)`.
    pub pin_stiffness: Option<f64>,
    pub pins: Vec<PinSet>,
    pub scripts: Vec<MotionScript>,
    pub colliders: Vec<Collider>,
    pub energy: EnergyKind,
    pub cubature_count: usize,
    pub cubature_seed: u64,
    pub steps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            timestep: 0.01,
            gravity: Vector3::new(0.0, 0.0, -9.8),
            newton_max_iters: 10,
            newton_tol: 1e-6,
            barrier_iters: 1,
            barrier_kappa0: 1e3,
            barrier_growth: 10.0,
            barrier_dhat: None,
            pin_stiffness: None,
            pins: Vec::new(),
            scripts: Vec::new(),
            colliders: Vec::new(),
            energy: EnergyKind::StableNeohookean,
            cubature_count: 2000,
            cubature_seed: 1,
            steps: 70,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |m: String| Err(SimError::Config(m));
        if !(self.timestep > 0.0) {
            return fail(format!("timestep must be positive, got {}", self.timestep));
        }
        if !(self.newton_tol > 0.0) {
            return fail(format!("newton_tol must be positive, got {}", self.newton_tol));
        }
        if self.newton_max_iters < 1 || self.barrier_iters < 1 {
            return fail("iteration counts must be at least 1".into());
        }
        if !(self.barrier_kappa0 > 0.0) || !(self.barrier_growth >= 1.0) {
            return fail("barrier stiffness must be positive with growth >= 1".into());
        }
        if let Some(d) = self.barrier_dhat {
            if !(d > 0.0) {
                return fail(format!("barrier clamp distance must be positive, got {d}"));
            }
        }
        if let Some(k) = self.pin_stiffness {
            if !(k > 0.0) {
                return fail(format!("pin stiffness must be positive, got {k}"));
            }
        }
        for s in &self.scripts {
            if s.keyframes.is_empty() {
                return fail("script has no keyframes".into());
            }
            if s.keyframes.windows(2).any(|w| w[1].time <= w[0].time) {
                return fail("script keyframes must have strictly increasing times".into());
            }
        }
        if self.steps < 1 {
            return fail("sim steps must be at least 1".into());
        }
        Ok(())
    }
}
