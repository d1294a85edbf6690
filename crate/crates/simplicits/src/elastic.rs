//! Deformation map, deformation gradients, and hyperelastic energy densities.
//!
//! The deformation of a point `X` is a linear blend of per-handle affine
//! transforms `Z_j` in `R^{3x4}`, scaled by scalar weights `w_j(X)`:
//!
//! ```text
//! phi(X) = X + sum_j w_j(X) * Z_j * [X; 1]
//! ```
//!
//! which is linear in the stacked transform vector `z` for any fixed weight
//! field. Energy densities take the spatial Jacobian `F` of `phi` and return
//! Pa; their first and second derivatives are assembled in closed form.

use nalgebra::{Matrix3, SMatrix, Vector3};

use crate::mlp::SkinningField;

/// Per-handle 3x4 affine transforms plus the flattened DOF view.
///
/// Flattening is handle-major, then row-major within each 3x4 block:
/// entry `(row, col)` of handle `j` lives at `z[12*j + 4*row + col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HandleTransforms {
    n: usize,
    z: Vec<f64>,
}

impl HandleTransforms {
    pub fn zeros(n: usize) -> Self {
        Self { n, z: vec![0.0; 12 * n] }
    }

    pub fn from_flat(z: Vec<f64>) -> Self {
        assert_eq!(z.len() % 12, 0, "flattened transforms must have length 12n");
        Self { n: z.len() / 12, z }
    }

    pub fn n_handles(&self) -> usize {
        self.n
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.z
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.z
    }

    #[inline]
    pub fn entry(&self, handle: usize, row: usize, col: usize) -> f64 {
        self.z[12 * handle + 4 * row + col]
    }

    #[inline]
    pub fn set_entry(&mut self, handle: usize, row: usize, col: usize, value: f64) {
        self.z[12 * handle + 4 * row + col] = value;
    }

    /// The 3x3 linear block `A_j` of handle `j`.
    pub fn linear_block(&self, handle: usize) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.entry(handle, r, c))
    }

    /// The translation column `t_j` of handle `j`.
    pub fn translation(&self, handle: usize) -> Vector3<f64> {
        Vector3::new(
            self.entry(handle, 0, 3),
            self.entry(handle, 1, 3),
            self.entry(handle, 2, 3),
        )
    }

    pub fn set_handle(&mut self, handle: usize, linear: &Matrix3<f64>, translation: &Vector3<f64>) {
        for r in 0..3 {
            for c in 0..3 {
                self.set_entry(handle, r, c, linear[(r, c)]);
            }
            self.set_entry(handle, r, 3, translation[r]);
        }
    }

    /// `Z_j * [X; 1]` for handle `j`.
    #[inline]
    pub fn apply_homogeneous(&self, handle: usize, x: &Vector3<f64>) -> Vector3<f64> {
        let b = 12 * handle;
        let z = &self.z;
        Vector3::new(
            z[b] * x.x + z[b + 1] * x.y + z[b + 2] * x.z + z[b + 3],
            z[b + 4] * x.x + z[b + 5] * x.y + z[b + 6] * x.z + z[b + 7],
            z[b + 8] * x.x + z[b + 9] * x.y + z[b + 10] * x.z + z[b + 11],
        )
    }
}

/// Forward deformation map `phi(X) = X + sum_j w_j Z_j [X; 1]`.
pub fn deformation_map(
    weights: &[f64],
    transforms: &HandleTransforms,
    x: &Vector3<f64>,
) -> Vector3<f64> {
    debug_assert_eq!(weights.len(), transforms.n_handles());
    let mut out = *x;
    for (j, &w) in weights.iter().enumerate() {
        if w != 0.0 {
            out += w * transforms.apply_homogeneous(j, x);
        }
    }
    out
}

/// Deformation gradient from weights and their spatial gradients:
/// `F = I + sum_j (w_j A_j + (Z_j [X;1]) grad_w_j^T)`.
pub fn deformation_gradient_analytic(
    weights: &[f64],
    weight_gradients: &[Vector3<f64>],
    transforms: &HandleTransforms,
    x: &Vector3<f64>,
) -> Matrix3<f64> {
    debug_assert_eq!(weights.len(), transforms.n_handles());
    debug_assert_eq!(weight_gradients.len(), transforms.n_handles());
    let mut f = Matrix3::identity();
    for (j, (&w, g)) in weights.iter().zip(weight_gradients.iter()).enumerate() {
        f += w * transforms.linear_block(j);
        let zq = transforms.apply_homogeneous(j, x);
        f += zq * g.transpose();
    }
    f
}

/// Deformation gradient by central finite differences of `phi` composed with
/// the weight network, column `k` being `(phi(X + h e_k) - phi(X - h e_k)) / 2h`.
pub fn deformation_gradient_fd(
    net: &SkinningField,
    transforms: &HandleTransforms,
    x: &Vector3<f64>,
    h: f64,
) -> Matrix3<f64> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut f = Matrix3::zeros();
    for k in 0..3 {
        let mut xp = *x;
        let mut xm = *x;
        xp[k] += h;
        xm[k] -= h;
        let wp = net.forward(&xp);
        let wm = net.forward(&xm);
        let col = (deformation_map(&wp, transforms, &xp)
            - deformation_map(&wm, transforms, &xm))
            / (2.0 * h);
        f.set_column(k, &col);
    }
    f
}

/// Default finite-difference step for spatial derivatives of a weight field:
/// ~1e-4 of the input scale, chosen as a power of two so central differences
/// of affine deformations are exact in floating point.
pub fn default_fd_step(net: &SkinningField) -> f64 {
    net.input_scale() * 2.0f64.powi(-13)
}

/// Hyperelastic energy density models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyKind {
    /// `mu tr(eps^T eps) + lambda/2 tr(eps)^2` with Green strain
    /// `eps = (F^T F - I) / 2` (St. Venant-Kirchhoff form).
    Linear,
    /// `mu/2 (I1 - 3) + lambda/2 (J - 1)^2` with `I1 = tr(F^T F)`.
    Neohookean,
    /// `mu/2 (I1 - 3) - mu (J - 1) + lambda/2 (J - 1)^2`; log-free, so it
    /// stays finite through inversion (J <= 0).
    StableNeohookean,
}

impl EnergyKind {
    pub fn name(self) -> &'static str {
        match self {
            EnergyKind::Linear => "linear",
            EnergyKind::Neohookean => "neohookean",
            EnergyKind::StableNeohookean => "stable_neohookean",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(EnergyKind::Linear),
            "neohookean" => Some(EnergyKind::Neohookean),
            "stable_neohookean" => Some(EnergyKind::StableNeohookean),
            _ => None,
        }
    }
}

/// Cofactor matrix of `F` (the gradient of `det F`), via column cross
/// products; polynomial in F, so valid for singular and inverted states.
#[inline]
fn cofactor(f: &Matrix3<f64>) -> Matrix3<f64> {
    let c0 = f.column(0).into_owned();
    let c1 = f.column(1).into_owned();
    let c2 = f.column(2).into_owned();
    Matrix3::from_columns(&[c1.cross(&c2), c2.cross(&c0), c0.cross(&c1)])
}

/// Directional derivative of `cofactor(F)` along `H`.
#[inline]
fn cofactor_directional(f: &Matrix3<f64>, h: &Matrix3<f64>) -> Matrix3<f64> {
    let f0 = f.column(0).into_owned();
    let f1 = f.column(1).into_owned();
    let f2 = f.column(2).into_owned();
    let h0 = h.column(0).into_owned();
    let h1 = h.column(1).into_owned();
    let h2 = h.column(2).into_owned();
    Matrix3::from_columns(&[
        h1.cross(&f2) + f1.cross(&h2),
        h2.cross(&f0) + f2.cross(&h0),
        h0.cross(&f1) + f0.cross(&h1),
    ])
}

#[inline]
fn green_strain(f: &Matrix3<f64>) -> Matrix3<f64> {
    0.5 * (f.transpose() * f - Matrix3::identity())
}

pub fn psi_linear(f: &Matrix3<f64>, lambda: f64, mu: f64) -> f64 {
    let eps = green_strain(f);
    let frob2 = (eps.transpose() * eps).trace();
    mu * frob2 + 0.5 * lambda * eps.trace() * eps.trace()
}

pub fn psi_neohookean(f: &Matrix3<f64>, lambda: f64, mu: f64) -> f64 {
    let i1 = (f.transpose() * f).trace();
    let j = f.determinant();
    0.5 * mu * (i1 - 3.0) + 0.5 * lambda * (j - 1.0) * (j - 1.0)
}

pub fn psi_stable_neohookean(f: &Matrix3<f64>, lambda: f64, mu: f64) -> f64 {
    let ic = (f.transpose() * f).trace();
    let j = f.determinant();
    0.5 * mu * (ic - 3.0) - mu * (j - 1.0) + 0.5 * lambda * (j - 1.0) * (j - 1.0)
}

/// Training-schedule blend `(1 - alpha) psi_linear + alpha psi_neohookean`.
pub fn scheduled_energy(f: &Matrix3<f64>, lambda: f64, mu: f64, alpha: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&alpha));
    (1.0 - alpha) * psi_linear(f, lambda, mu) + alpha * psi_neohookean(f, lambda, mu)
}

pub fn psi(kind: EnergyKind, f: &Matrix3<f64>, lambda: f64, mu: f64) -> f64 {
    match kind {
        EnergyKind::Linear => psi_linear(f, lambda, mu),
        EnergyKind::Neohookean => psi_neohookean(f, lambda, mu),
        EnergyKind::StableNeohookean => psi_stable_neohookean(f, lambda, mu),
    }
}

/// First Piola-Kirchhoff stress `dPsi/dF`.
pub fn psi_gradient(kind: EnergyKind, f: &Matrix3<f64>, lambda: f64, mu: f64) -> Matrix3<f64> {
    match kind {
        EnergyKind::Linear => {
            let eps = green_strain(f);
            2.0 * mu * (f * eps) + lambda * eps.trace() * f
        }
        EnergyKind::Neohookean => {
            let j = f.determinant();
            mu * f + lambda * (j - 1.0) * cofactor(f)
        }
        EnergyKind::StableNeohookean => {
            let j = f.determinant();
            mu * f + (lambda * (j - 1.0) - mu) * cofactor(f)
        }
    }
}

/// Directional derivative of `psi_gradient` along `H`.
fn psi_gradient_directional(
    kind: EnergyKind,
    f: &Matrix3<f64>,
    h: &Matrix3<f64>,
    lambda: f64,
    mu: f64,
) -> Matrix3<f64> {
    match kind {
        EnergyKind::Linear => {
            let eps = green_strain(f);
            let deps = 0.5 * (h.transpose() * f + f.transpose() * h);
            let dtr = (f.transpose() * h).trace();
            2.0 * mu * (h * eps + f * deps) + lambda * (dtr * f + eps.trace() * h)
        }
        EnergyKind::Neohookean => {
            let j = f.determinant();
            let cof = cofactor(f);
            let dj = cof.component_mul(h).sum();
            mu * h + lambda * (dj * cof + (j - 1.0) * cofactor_directional(f, h))
        }
        EnergyKind::StableNeohookean => {
            let j = f.determinant();
            let cof = cofactor(f);
            let dj = cof.component_mul(h).sum();
            mu * h
                + lambda * dj * cof
                + (lambda * (j - 1.0) - mu) * cofactor_directional(f, h)
        }
    }
}

/// Second derivative `d^2 Psi / dF^2` as a 9x9 matrix over `vec(F)` in
/// column-major order (entry `(r, c)` of F at index `3c + r`).
pub fn psi_hessian(
    kind: EnergyKind,
    f: &Matrix3<f64>,
    lambda: f64,
    mu: f64,
) -> SMatrix<f64, 9, 9> {
    let mut hess = SMatrix::<f64, 9, 9>::zeros();
    for m in 0..9 {
        let (r, c) = (m % 3, m / 3);
        let mut dir = Matrix3::zeros();
        dir[(r, c)] = 1.0;
        let dgrad = psi_gradient_directional(kind, f, &dir, lambda, mu);
        for cc in 0..3 {
            for rr in 0..3 {
                hess[(3 * cc + rr, m)] = dgrad[(rr, cc)];
            }
        }
    }
    hess
}
