//! Backward-Euler time stepping by projected Newton.
//!
//! Each step minimizes
//!
//! ```text
//! 1/2 |z - z~|^2_M + h^2 (E_elastic + E_gravity + E_penalty + E_barrier)
//! ```
//!
//! with `z~ = z_prev + h zdot_prev`. Pins and scripted targets enter as
//! penalty springs on cubature points; ground/analytic contact as a clamped
//! log barrier that is infinite at zero distance, so the backtracking line
//! search keeps every iterate feasible.

use nalgebra::{Matrix3, Vector3};

use crate::elastic::{psi, psi_gradient, psi_hessian, HandleTransforms};
use crate::linalg::{cholesky_factor, cholesky_solve_factored, spd_project, DenseMatrix};

use super::{Collider, CubatureSet, MotionScript, SimConfig, SimError, SimState};

/// Clamped log-barrier density: zero for `d >= dhat`, `-(d - dhat)^2 ln(d/dhat)`
/// inside the band, infinite at contact.
pub fn barrier_energy(d: f64, dhat: f64) -> f64 {
    if d >= dhat {
        0.0
    } else if d <= 0.0 {
        f64::INFINITY
    } else {
        let gap = d - dhat;
        -gap * gap * (d / dhat).ln()
    }
}

fn barrier_first_derivative(d: f64, dhat: f64) -> f64 {
    if d >= dhat || d <= 0.0 {
        0.0
    } else {
        let gap = d - dhat;
        -2.0 * gap * (d / dhat).ln() - gap * gap / d
    }
}

fn barrier_second_derivative(d: f64, dhat: f64) -> f64 {
    if d >= dhat || d <= 0.0 {
        0.0
    } else {
        let gap = d - dhat;
        -2.0 * (d / dhat).ln() - 4.0 * gap / d + gap * gap / (d * d)
    }
}

/// Rigid motion of a script at time `t`, clamped to the keyframe range:
/// piecewise-linear interpolation of the translation and rotation vectors,
/// the rotation applied exactly via Rodrigues' formula.
pub fn apply_script(script: &MotionScript, t: f64) -> (Matrix3<f64>, Vector3<f64>) {
    let keys = &script.keyframes;
    debug_assert!(!keys.is_empty());
    let (rotvec, translation) = if t <= keys[0].time {
        (keys[0].rotation, keys[0].translation)
    } else if t >= keys[keys.len() - 1].time {
        let last = &keys[keys.len() - 1];
        (last.rotation, last.translation)
    } else {
        let seg = keys.windows(2).find(|w| t <= w[1].time).expect("t inside range");
        let (a, b) = (&seg[0], &seg[1]);
        let s = (t - a.time) / (b.time - a.time);
        (
            a.rotation + s * (b.rotation - a.rotation),
            a.translation + s * (b.translation - a.translation),
        )
    };
    (rodrigues(&rotvec), translation)
}

fn rodrigues(rotvec: &Vector3<f64>) -> Matrix3<f64> {
    let angle = rotvec.norm();
    if angle < 1e-12 {
        return Matrix3::identity();
    }
    let axis = rotvec / angle;
    let k = Matrix3::new(
        0.0, -axis.z, axis.y,
        axis.z, 0.0, -axis.x,
        -axis.y, axis.x, 0.0,
    );
    Matrix3::identity() + angle.sin() * k + (1.0 - angle.cos()) * (k * k)
}

/// Returns the first cubature point penetrating a collider at `z`, if any.
pub fn initial_penetration(
    cub: &CubatureSet,
    colliders: &[Collider],
    z: &[f64],
) -> Option<(usize, f64)> {
    for i in 0..cub.len() {
        let x = cub.deformed(i, z);
        for c in colliders {
            let d = c.distance(&x);
            if d <= 0.0 {
                return Some((i, d));
            }
        }
    }
    None
}

/// One pinned cubature point with its current target.
#[derive(Debug, Clone, Copy)]
struct PinTarget {
    point: usize,
    target: Vector3<f64>,
    stiffness: f64,
}

/// Newton solve outcome; `objectives` holds the accepted objective values,
/// which are non-increasing by the Armijo acceptance rule.
#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub iterations: usize,
    pub converged: bool,
    pub stalled: bool,
    pub gradient_norm: f64,
    pub objectives: Vec<f64>,
}

/// Per-step diagnostics: one Newton report per barrier iteration.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub newton: Vec<NewtonReport>,
}

impl StepReport {
    pub fn stalled(&self) -> bool {
        self.newton.iter().any(|n| n.stalled)
    }
}

/// Owns the assembled constants of one simulation: reduced mass matrix,
/// gravity force, pinned point sets, and resolved default stiffnesses.
pub struct Stepper<'a> {
    cub: &'a CubatureSet,
    cfg: &'a SimConfig,
    mass: DenseMatrix,
    /// `B^T (m x g)`, constant over the simulation.
    gravity_force: Vec<f64>,
    /// Static pins (targets are rest positions).
    static_pins: Vec<PinTarget>,
    /// Scripted pins: (script index, point, stiffness).
    script_pins: Vec<(usize, usize, f64)>,
    dhat: f64,
    dofs: usize,
}

impl<'a> Stepper<'a> {
    pub fn new(cub: &'a CubatureSet, cfg: &'a SimConfig, bbox_diagonal: f64) -> Result<Self, SimError> {
        cfg.validate()?;
        let dofs = 12 * cub.n_handles();
        let mass = super::build_mass_matrix(cub);
        let mut gravity_force = vec![0.0; dofs];
        for i in 0..cub.len() {
            cub.add_basis_t_vec(i, &cfg.gravity, cub.masses()[i], &mut gravity_force);
        }
        let default_k = 1e5 * cub.mean_mu() * cub.volume().abs().powf(1.0 / 3.0);
        let mut static_pins = Vec::new();
        for pin in &cfg.pins {
            let k = pin.stiffness.or(cfg.pin_stiffness).unwrap_or(default_k);
            for i in cub.points_in_region(&pin.region) {
                static_pins.push(PinTarget { point: i, target: cub.points()[i], stiffness: k });
            }
        }
        let mut script_pins = Vec::new();
        for (s, script) in cfg.scripts.iter().enumerate() {
            let k = script.stiffness.or(cfg.pin_stiffness).unwrap_or(default_k);
            for i in cub.points_in_region(&script.region) {
                script_pins.push((s, i, k));
            }
        }
        let dhat = cfg.barrier_dhat.unwrap_or(0.01 * bbox_diagonal);
        Ok(Self { cub, cfg, mass, gravity_force, static_pins, script_pins, dhat, dofs })
    }

    pub fn mass_matrix(&self) -> &DenseMatrix {
        &self.mass
    }

    pub fn barrier_clamp_distance(&self) -> f64 {
        self.dhat
    }

    pub fn pinned_point_count(&self) -> usize {
        self.static_pins.len() + self.script_pins.len()
    }

    /// All pins with targets evaluated at time `t`.
    fn pin_targets(&self, t: f64) -> Vec<PinTarget> {
        let mut targets = self.static_pins.clone();
        for &(s, i, k) in &self.script_pins {
            let script = &self.cfg.scripts[s];
            let (r, trans) = apply_script(script, t);
            let x = self.cub.points()[i];
            let target = script.center + r * (x - script.center) + trans;
            targets.push(PinTarget { point: i, target, stiffness: k });
        }
        targets
    }

    fn predictor(&self, z_prev: &[f64], zdot_prev: &[f64]) -> Vec<f64> {
        let h = self.cfg.timestep;
        z_prev.iter().zip(zdot_prev).map(|(z, zd)| z + h * zd).collect()
    }

    /// Incremental-potential objective at `z` for one step from
    /// `(z_prev, zdot_prev)` with barrier stiffness `kappa`, scripted targets
    /// at time `t_next`.
    pub fn step_objective(
        &self,
        z: &[f64],
        z_prev: &[f64],
        zdot_prev: &[f64],
        t_next: f64,
        kappa: f64,
    ) -> f64 {
        let z_tilde = self.predictor(z_prev, zdot_prev);
        self.objective_with(z, &z_tilde, &self.pin_targets(t_next), kappa)
    }

    fn objective_with(&self, z: &[f64], z_tilde: &[f64], pins: &[PinTarget], kappa: f64) -> f64 {
        let h2 = self.cfg.timestep * self.cfg.timestep;
        let diff: Vec<f64> = z.iter().zip(z_tilde).map(|(a, b)| a - b).collect();
        let m_diff = self.mass.matvec(&diff);
        let inertia = 0.5 * crate::linalg::dot(&diff, &m_diff);

        let transforms = HandleTransforms::from_flat(z.to_vec());
        let vol_w = self.cub.volume() / self.cub.len() as f64;
        let mut elastic = 0.0;
        let mut gravity = 0.0;
        let mut barrier = 0.0;
        for i in 0..self.cub.len() {
            let f = self.cub.deformation_gradient(i, &transforms);
            let (lambda, mu) = self.cub.lame(i);
            elastic += vol_w * self.cub.occupancy()[i] * psi(self.cfg.energy, &f, lambda, mu);
            let x = self.cub.deformed(i, z);
            gravity -= self.cub.masses()[i] * self.cfg.gravity.dot(&x);
            for c in &self.cfg.colliders {
                barrier += barrier_energy(c.distance(&x), self.dhat);
                if barrier.is_infinite() {
                    return f64::INFINITY;
                }
            }
        }
        let mut penalty = 0.0;
        for pin in pins {
            let x = self.cub.deformed(pin.point, z);
            penalty += 0.5 * pin.stiffness * (x - pin.target).norm_squared();
        }
        inertia + h2 * (elastic + gravity + penalty + kappa * barrier)
    }

    pub fn step_gradient(
        &self,
        z: &[f64],
        z_prev: &[f64],
        zdot_prev: &[f64],
        t_next: f64,
        kappa: f64,
    ) -> Vec<f64> {
        let z_tilde = self.predictor(z_prev, zdot_prev);
        self.gradient_with(z, &z_tilde, &self.pin_targets(t_next), kappa)
    }

    fn gradient_with(&self, z: &[f64], z_tilde: &[f64], pins: &[PinTarget], kappa: f64) -> Vec<f64> {
        let h2 = self.cfg.timestep * self.cfg.timestep;
        let diff: Vec<f64> = z.iter().zip(z_tilde).map(|(a, b)| a - b).collect();
        let mut grad = self.mass.matvec(&diff);

        let transforms = HandleTransforms::from_flat(z.to_vec());
        let n = self.cub.n_handles();
        let vol_w = self.cub.volume() / self.cub.len() as f64;
        let mut force = vec![0.0; self.dofs];
        for i in 0..self.cub.len() {
            let f = self.cub.deformation_gradient(i, &transforms);
            let (lambda, mu) = self.cub.lame(i);
            let dpsi = psi_gradient(self.cfg.energy, &f, lambda, mu);
            let scale = vol_w * self.cub.occupancy()[i];
            // dE/dZ_j = dPsi/dF * G_ij, scattered into the flat layout.
            for j in 0..n {
                let g = self.cub.generator(i, j);
                for c in 0..4 {
                    let gl = &g[c * 3..(c + 1) * 3];
                    for a in 0..3 {
                        let mut s = 0.0;
                        for l in 0..3 {
                            s += dpsi[(a, l)] * gl[l];
                        }
                        force[j * 12 + a * 4 + c] += scale * s;
                    }
                }
            }
            // Barrier chain rule through the deformed position.
            if !self.cfg.colliders.is_empty() {
                let x = self.cub.deformed(i, z);
                for collider in &self.cfg.colliders {
                    let d = collider.distance(&x);
                    let db = kappa * barrier_first_derivative(d, self.dhat);
                    if db != 0.0 {
                        let dir = collider.gradient(&x);
                        self.cub.add_basis_t_vec(i, &dir, db, &mut force);
                    }
                }
            }
        }
        for (f, g) in force.iter_mut().zip(&self.gravity_force) {
            *f -= g;
        }
        for pin in pins {
            let x = self.cub.deformed(pin.point, z);
            let residual = x - pin.target;
            self.cub.add_basis_t_vec(pin.point, &residual, pin.stiffness, &mut force);
        }
        for (g, f) in grad.iter_mut().zip(&force) {
            *g += h2 * f;
        }
        grad
    }

    pub fn step_hessian(
        &self,
        z: &[f64],
        z_prev: &[f64],
        zdot_prev: &[f64],
        t_next: f64,
        kappa: f64,
    ) -> DenseMatrix {
        let _ = (z_prev, zdot_prev);
        self.hessian_with(z, &self.pin_targets(t_next), kappa)
    }

    fn hessian_with(&self, z: &[f64], pins: &[PinTarget], kappa: f64) -> DenseMatrix {
        let h2 = self.cfg.timestep * self.cfg.timestep;
        let n = self.cub.n_handles();
        let dofs = self.dofs;
        let mut hess = self.mass.clone();
        let transforms = HandleTransforms::from_flat(z.to_vec());
        let vol_w = self.cub.volume() / self.cub.len() as f64;

        // Elastic blocks: K_i = Lambda_i^T Hpsi Lambda_i where column (j,a,c)
        // of Lambda_i is vec(e_a g_ijc^T). First T = Hpsi Lambda (9 x 12n),
        // then K = Lambda^T T.
        let mut t_mat = vec![0.0; 9 * dofs];
        for i in 0..self.cub.len() {
            let f = self.cub.deformation_gradient(i, &transforms);
            let (lambda, mu) = self.cub.lame(i);
            let hpsi = psi_hessian(self.cfg.energy, &f, lambda, mu);
            let scale = h2 * vol_w * self.cub.occupancy()[i];
            t_mat.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..n {
                let g = self.cub.generator(i, j);
                for c in 0..4 {
                    let gl = &g[c * 3..(c + 1) * 3];
                    for a in 0..3 {
                        let col = j * 12 + a * 4 + c;
                        // T[.][col] = sum_l' Hpsi[.][l'*3 + a] g[l'].
                        for row in 0..9 {
                            let mut s = 0.0;
                            for lp in 0..3 {
                                s += hpsi[(row, lp * 3 + a)] * gl[lp];
                            }
                            t_mat[row * dofs + col] = s;
                        }
                    }
                }
            }
            for j in 0..n {
                let g = self.cub.generator(i, j);
                for c in 0..4 {
                    let gl = &g[c * 3..(c + 1) * 3];
                    for a in 0..3 {
                        let row_dof = j * 12 + a * 4 + c;
                        // K[row_dof][col] = sum_l g[l] T[l*3 + a][col].
                        let hrow = hess.row_mut(row_dof);
                        for col in row_dof..dofs {
                            let mut s = 0.0;
                            for l in 0..3 {
                                s += gl[l] * t_mat[(l * 3 + a) * dofs + col];
                            }
                            hrow[col] += scale * s;
                        }
                    }
                }
            }
        }
        // Penalty blocks k B_i^T B_i.
        for pin in pins {
            self.add_scaled_btb(&mut hess, pin.point, h2 * pin.stiffness, None);
        }
        // Barrier blocks kappa (b'' (B^T grad)(B^T grad)^T + b' B^T Hd B).
        if !self.cfg.colliders.is_empty() {
            for i in 0..self.cub.len() {
                let x = self.cub.deformed(i, z);
                for collider in &self.cfg.colliders {
                    let d = collider.distance(&x);
                    if d >= self.dhat || d <= 0.0 {
                        continue;
                    }
                    let b1 = barrier_first_derivative(d, self.dhat);
                    let b2 = barrier_second_derivative(d, self.dhat);
                    let dir = collider.gradient(&x);
                    let mut bt_dir = vec![0.0; dofs];
                    self.cub.add_basis_t_vec(i, &dir, 1.0, &mut bt_dir);
                    let s2 = h2 * kappa * b2;
                    for r in 0..dofs {
                        let vr = s2 * bt_dir[r];
                        if vr == 0.0 {
                            continue;
                        }
                        let hrow = hess.row_mut(r);
                        for c in r..dofs {
                            hrow[c] += vr * bt_dir[c];
                        }
                    }
                    let hd = collider.distance_hessian(&x);
                    self.add_scaled_btb(&mut hess, i, h2 * kappa * b1, Some(&hd));
                }
            }
        }
        // Mirror the upper triangle (the mass part is already symmetric).
        for r in 0..dofs {
            for c in (r + 1)..dofs {
                hess[(c, r)] = hess[(r, c)];
            }
        }
        hess
    }

    /// Adds `scale * B_i^T S B_i` (upper triangle) with `S` either identity
    /// or a 3x3 matrix; exploits `B_i[a][(j,a',c)] = delta w_ij q_c`.
    fn add_scaled_btb(
        &self,
        hess: &mut DenseMatrix,
        point: usize,
        scale: f64,
        s_mat: Option<&Matrix3<f64>>,
    ) {
        if scale == 0.0 {
            return;
        }
        let n = self.cub.n_handles();
        let q = [
            self.cub.points()[point].x,
            self.cub.points()[point].y,
            self.cub.points()[point].z,
            1.0,
        ];
        let wrow = self.cub.weights().row(point);
        for j in 0..n {
            let wj = wrow[j];
            if wj == 0.0 {
                continue;
            }
            for k in 0..n {
                let wjk = scale * wj * wrow[k];
                if wjk == 0.0 {
                    continue;
                }
                for a in 0..3 {
                    for ap in 0..3 {
                        let s_val = match s_mat {
                            Some(s) => s[(a, ap)],
                            None => {
                                if a == ap {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        if s_val == 0.0 {
                            continue;
                        }
                        for c in 0..4 {
                            let row = j * 12 + a * 4 + c;
                            for cp in 0..4 {
                                let col = k * 12 + ap * 4 + cp;
                                if col < row {
                                    continue;
                                }
                                hess[(row, col)] += wjk * s_val * q[c] * q[cp];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Projected Newton with backtracking line search. Stops when the
    /// gradient norm falls below `tol * max(1, |M z~|)` or iterations are
    /// exhausted; an exhausted line search accepts the zero step and reports
    /// a stall.
    pub fn newton_solve(
        &self,
        z0: &[f64],
        z_prev: &[f64],
        zdot_prev: &[f64],
        t_next: f64,
        kappa: f64,
    ) -> (Vec<f64>, NewtonReport) {
        let z_tilde = self.predictor(z_prev, zdot_prev);
        let pins = self.pin_targets(t_next);
        let mut z = z0.to_vec();
        let m_ztilde = self.mass.matvec(&z_tilde);
        let rhs_scale = norm(&m_ztilde).max(1.0);
        let mut report = NewtonReport {
            iterations: 0,
            converged: false,
            stalled: false,
            gradient_norm: f64::INFINITY,
            objectives: vec![self.objective_with(&z, &z_tilde, &pins, kappa)],
        };
        const ARMIJO_C: f64 = 1e-4;
        const MAX_HALVINGS: usize = 40;
        for _ in 0..self.cfg.newton_max_iters {
            let grad = self.gradient_with(&z, &z_tilde, &pins, kappa);
            report.gradient_norm = norm(&grad);
            if report.gradient_norm <= self.cfg.newton_tol * rhs_scale {
                report.converged = true;
                break;
            }
            report.iterations += 1;
            let mut hess = self.hessian_with(&z, &pins, kappa);
            if self.cub.needs_regularization() {
                let eps = 1e-8 * hess.trace().abs().max(1.0);
                for d in 0..self.dofs {
                    hess[(d, d)] += eps;
                }
            }
            let floor = 1e-8 * hess.trace().abs().max(f64::MIN_POSITIVE) / self.dofs as f64;
            let direction = spd_project(&hess, floor)
                .and_then(|p| cholesky_factor(&p))
                .map(|l| {
                    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                    cholesky_solve_factored(&l, &neg)
                });
            let mut dz = match direction {
                Ok(d) => d,
                Err(_) => grad.iter().map(|g| -g).collect(),
            };
            let mut slope = crate::linalg::dot(&grad, &dz);
            if slope >= 0.0 {
                // Projection guarantees descent in exact arithmetic; fall
                // back to steepest descent if roundoff says otherwise.
                dz = grad.iter().map(|g| -g).collect();
                slope = -report.gradient_norm * report.gradient_norm;
            }
            let f0 = *report.objectives.last().unwrap();
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let candidate: Vec<f64> =
                    z.iter().zip(&dz).map(|(a, d)| a + step * d).collect();
                let f1 = self.objective_with(&candidate, &z_tilde, &pins, kappa);
                if f1 <= f0 + ARMIJO_C * step * slope {
                    accepted = Some((candidate, f1));
                    break;
                }
                step *= 0.5;
            }
            match accepted {
                Some((candidate, f1)) => {
                    z = candidate;
                    report.objectives.push(f1);
                }
                None => {
                    report.stalled = true;
                    break;
                }
            }
        }
        if !report.converged && !report.stalled {
            let grad = self.gradient_with(&z, &z_tilde, &pins, kappa);
            report.gradient_norm = norm(&grad);
            report.converged = report.gradient_norm <= self.cfg.newton_tol * rhs_scale;
        }
        (z, report)
    }

    /// Advances one backward-Euler step, restiffening the barrier
    /// `barrier_iters` times from `kappa0`.
    pub fn step(&self, state: &SimState) -> Result<(SimState, StepReport), SimError> {
        let h = self.cfg.timestep;
        let t_next = state.time + h;
        let mut kappa = self.cfg.barrier_kappa0;
        let mut z = state.z.clone();
        let mut report = StepReport::default();
        for _ in 0..self.cfg.barrier_iters {
            let (z_new, newton) = self.newton_solve(&z, &state.z, &state.zdot, t_next, kappa);
            z = z_new;
            report.newton.push(newton);
            kappa *= self.cfg.barrier_growth;
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite(0));
        }
        let zdot: Vec<f64> = z.iter().zip(&state.z).map(|(a, b)| (a - b) / h).collect();
        let last_kappa = kappa / self.cfg.barrier_growth;
        Ok((SimState { z, zdot, time: t_next, kappa: last_kappa }, report))
    }
}

fn norm(v: &[f64]) -> f64 {
    crate::linalg::dot(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::SkinningField;
    use crate::occupancy::{build_occupancy, Region, SourceSpec};
    use crate::sim::{build_cubature, Keyframe, PinSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_cube_field() -> crate::occupancy::OccupancyField {
        build_occupancy(&SourceSpec::Box {
            min: nalgebra::Vector3::zeros(),
            max: nalgebra::Vector3::new(1.0, 1.0, 1.0),
        })
        .unwrap()
    }

    fn no_force_config() -> SimConfig {
        SimConfig { gravity: Vector3::zeros(), ..SimConfig::default() }
    }

    #[test]
    fn barrier_is_smooth_and_clamped() {
        let dhat = 0.1;
        assert_eq!(barrier_energy(0.2, dhat), 0.0);
        assert_eq!(barrier_energy(dhat, dhat), 0.0);
        assert!(barrier_energy(1e-12, dhat).is_finite());
        assert!(barrier_energy(0.0, dhat).is_infinite());
        assert!(barrier_energy(-0.1, dhat).is_infinite());
        // Value and both derivatives vanish at the clamp distance.
        assert!(barrier_first_derivative(dhat - 1e-9, dhat).abs() < 1e-7);
        // FD agreement in the interior of the band.
        for d in [0.02, 0.05, 0.08] {
            let h = 1e-7;
            let fd1 = (barrier_energy(d + h, dhat) - barrier_energy(d - h, dhat)) / (2.0 * h);
            let an1 = barrier_first_derivative(d, dhat);
            assert!((fd1 - an1).abs() < 1e-5 * an1.abs().max(1.0), "d={d}");
            let fd2 = (barrier_first_derivative(d + h, dhat)
                - barrier_first_derivative(d - h, dhat))
                / (2.0 * h);
            let an2 = barrier_second_derivative(d, dhat);
            assert!((fd2 - an2).abs() < 1e-4 * an2.abs().max(1.0), "d={d}");
        }
    }

    #[test]
    fn script_interpolation() {
        let script = MotionScript {
            region: Region::Whole,
            center: Vector3::zeros(),
            keyframes: vec![
                Keyframe { time: 0.0, translation: Vector3::zeros(), rotation: Vector3::zeros() },
                Keyframe {
                    time: 1.0,
                    translation: Vector3::new(1.0, 0.0, 0.0),
                    rotation: Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2),
                },
            ],
            stiffness: None,
        };
        // Exact at keyframes.
        let (r0, t0) = apply_script(&script, 0.0);
        assert!((r0 - Matrix3::identity()).norm() < 1e-14);
        assert_eq!(t0, Vector3::zeros());
        let (r1, t1) = apply_script(&script, 1.0);
        assert!((t1 - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-14);
        let rotated = r1 * Vector3::x();
        assert!((rotated - Vector3::y()).norm() < 1e-12);
        // Midpoint: linear translation, half-angle rotation.
        let (rh, th) = apply_script(&script, 0.5);
        assert!((th - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-14);
        let quarter = rh * Vector3::x();
        let expect = Vector3::new((0.25f64 * std::f64::consts::PI).cos(),
                                  (0.25f64 * std::f64::consts::PI).sin(), 0.0);
        assert!((quarter - expect).norm() < 1e-12);
        // Out-of-range times clamp.
        let (_, tc) = apply_script(&script, 99.0);
        assert_eq!(tc, t1);
    }

    #[test]
    fn rest_state_is_a_fixed_point() {
        let field = unit_cube_field();
        let net = SkinningField::init(2, 2, 8, 5).unwrap();
        let cub = build_cubature(&field, &net, 100, 7).unwrap();
        let cfg = no_force_config();
        let stepper = Stepper::new(&cub, &cfg, field.bbox().diagonal()).unwrap();
        let state = SimState::rest(2, cfg.barrier_kappa0);
        let (next, report) = stepper.step(&state).unwrap();
        assert!(norm(&next.z) < 1e-12, "rest pose drifted: |z| = {}", norm(&next.z));
        assert!(report.newton[0].converged);
    }

    #[test]
    fn objective_zero_at_rest_without_external_energy() {
        let field = unit_cube_field();
        let net = SkinningField::constant(1, &[1.0]);
        let cub = build_cubature(&field, &net, 60, 3).unwrap();
        let cfg = no_force_config();
        let stepper = Stepper::new(&cub, &cfg, field.bbox().diagonal()).unwrap();
        let z = vec![0.0; 12];
        let value = stepper.step_objective(&z, &z, &z, 0.01, cfg.barrier_kappa0);
        assert_eq!(value, 0.0);
    }

    #[test]
    fn inertia_term_matches_translation_mass_block() {
        let field = unit_cube_field();
        let net = SkinningField::constant(1, &[1.0]);
        let cub = build_cubature(&field, &net, 500, 3).unwrap();
        let cfg = no_force_config();
        let stepper = Stepper::new(&cub, &cfg, field.bbox().diagonal()).unwrap();
        // z differs from z~ = 0 by a pure translation delta: the objective
        // reduces to 1/2 delta^T M_tt delta = 1/2 (total mass) |delta|^2.
        let delta = Vector3::new(0.02, -0.01, 0.03);
        let mut transforms = HandleTransforms::zeros(1);
        transforms.set_handle(0, &Matrix3::zeros(), &delta);
        let zero = vec![0.0; 12];
        let value =
            stepper.step_objective(transforms.as_flat(), &zero, &zero, 0.01, cfg.barrier_kappa0);
        let expected = 0.5 * cub.total_mass() * delta.norm_squared();
        assert!(
            (value - expected).abs() < 1e-9 * expected,
            "objective {value} vs expected {expected}"
        );
    }

    #[test]
    fn objective_infinite_below_ground() {
        let field = unit_cube_field();
        let net = SkinningField::constant(1, &[1.0]);
        let cub = build_cubature(&field, &net, 60, 3).unwrap();
        let cfg = SimConfig {
            gravity: Vector3::zeros(),
            colliders: vec![Collider::Ground { height: 0.2 }],
            ..SimConfig::default()
        };
        let stepper = Stepper::new(&cub, &cfg, field.bbox().diagonal()).unwrap();
        // Rest state already has points below z = 0.2.
        let z = vec![0.0; 12];
        assert!(stepper.step_objective(&z, &z, &z, 0.01, 1e3).is_infinite());
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let field = unit_cube_field();
        let net = SkinningField::init(2, 2, 6, 11).unwrap();
        let cub = build_cubature(&field, &net, 50, 19).unwrap();
        let cfg = SimConfig {
            colliders: vec![Collider::Ground { height: -0.4 }],
            pins: vec![PinSet {
                region: Region::Box {
                    min: Vector3::new(0.0, 0.0, 0.0),
                    max: Vector3::new(0.3, 1.0, 1.0),
                },
                stiffness: Some(2e4),
            }],
            barrier_dhat: Some(0.5),
            ..SimConfig::default()
        };
        let stepper = Stepper::new(&cub, &cfg, field.bbox().diagonal()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let kappa = 1e3;
        for trial in 0..5 {
            let z: Vec<f64> = (0..24).map(|_| rng.random_range(-0.02..0.02)).collect();
            let z_prev: Vec<f64> = (0..24).map(|_| rng.random_range(-0.01..0.01)).collect();
            let zdot: Vec<f64> = (0..24).map(|_| rng.random_range(-0.1..0.1)).collect();
            let t = 0.3;
            let grad = stepper.step_gradient(&z, &z_prev, &zdot, t, kappa);
            let gnorm = norm(&grad).max(1.0);
            let h = 1e-6;
            for d in (0..24).step_by(5) {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[d] += h;
                zm[d] -= h;
                let fd = (stepper.step_objective(&zp, &z_prev, &zdot, t, kappa)
                    - stepper.step_objective(&zm, &z_prev, &zdot, t, kappa))
                    / (2.0 * h);
                assert!(
                    (fd - grad[d]).abs() / gnorm < 1e-5,
                    "trial {trial} dof {d}: fd {fd} vs grad {}",
                    grad[d]
                );
            }
            let hess = stepper.step_hessian(&z, &z_prev, &zdot, t, kappa);
            assert!(hess.symmetry_deviation() < 1e-9 * hess.max_abs());
            let hscale = hess.max_abs();
            for d in (0..24).step_by(7) {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[d] += h;
                zm[d] -= h;
                let gp = stepper.step_gradient(&zp, &z_prev, &zdot, t, kappa);
                let gm = stepper.step_gradient(&zm, &z_prev, &zdot, t, kappa);
                for r in (0..24).step_by(3) {
                    let fd = (gp[r] - gm[r]) / (2.0 * h);
                    assert!(
                        (fd - hess[(r, d)]).abs() / hscale < 1e-5,
                        "hessian ({r},{d}): fd {fd} vs {}",
                        hess[(r, d)]
                    );
                }
            }
        }
    }

    #[test]
    fn free_fall_converges_in_one_newton_iteration() {
        let field = unit_cube_field();
        let net = SkinningField::constant(1, &[1.0]);
        let cub = build_cubature(&field, &net, 200, 3).unwrap();
        let cfg = SimConfig { newton_tol: 1e-12, ..SimConfig::default() };
        let stepper = Stepper::new(&cub, &cfg, field.bbox().diagonal()).unwrap();
        let state = SimState::rest(1, cfg.barrier_kappa0);
        let (next, report) = stepper.step(&state).unwrap();
        assert_eq!(report.newton[0].iterations, 1, "expected a single Newton iteration");
        assert!(report.newton[0].converged);
        // The increment is the pure translation h^2 g.
        let t = HandleTransforms::from_flat(next.z.clone());
        let h2g = cfg.timestep * cfg.timestep * cfg.gravity;
        assert!((t.translation(0) - h2g).norm() < 1e-10);
        assert!(t.linear_block(0).norm() < 1e-10);
    }

    #[test]
    fn newton_objectives_are_non_increasing() {
        let field = unit_cube_field();
        let net = SkinningField::init(2, 2, 8, 23).unwrap();
        let cub = build_cubature(&field, &net, 120, 29).unwrap();
        let cfg = SimConfig {
            pins: vec![PinSet { region: Region::Whole, stiffness: Some(1e5) }],
            ..SimConfig::default()
        };
        let stepper = Stepper::new(&cub, &cfg, field.bbox().diagonal()).unwrap();
        let mut state = SimState::rest(2, cfg.barrier_kappa0);
        for _ in 0..5 {
            let (next, report) = stepper.step(&state).unwrap();
            for newton in &report.newton {
                for pair in newton.objectives.windows(2) {
                    assert!(pair[1] <= pair[0] + 1e-12 * pair[0].abs().max(1.0));
                }
            }
            state = next;
        }
    }

    #[test]
    fn initial_penetration_detects_points_below_ground() {
        let field = unit_cube_field();
        let net = SkinningField::constant(1, &[1.0]);
        let cub = build_cubature(&field, &net, 60, 3).unwrap();
        let colliders = [Collider::Ground { height: 0.5 }];
        let z = vec![0.0; 12];
        assert!(initial_penetration(&cub, &colliders, &z).is_some());
        let clear = [Collider::Ground { height: -1.0 }];
        assert!(initial_penetration(&cub, &clear, &z).is_none());
    }
}
