//! Geometry as an occupancy function with spatially varying materials.
//!
//! Every supported source (analytic SDF primitives, triangle meshes, point
//! clouds, thresholded density grids) reduces to one interface: an occupancy
//! `eval(x) in [0, 1]` that is zero outside a bounding box, plus material
//! rules answering density and Lame parameters at interior points.

mod sampling;
mod source;

pub use sampling::{
    estimate_volume, sample_interior, sample_interior_with_volume, InteriorSample, SamplePoint,
    VolumeEstimate, ACCEPT_THRESHOLD,
};
pub use source::SourceSpec;

use nalgebra::Vector3;
use thiserror::Error;

use crate::formats::FormatError;
use source::Source;

#[derive(Debug, Error)]
pub enum OccupancyError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("degenerate mesh: zero triangles")]
    EmptyMesh,
    #[error("empty point cloud")]
    EmptyPointCloud,
    #[error("empty occupancy: no grid value above threshold {threshold}")]
    EmptyGrid { threshold: f64 },
    #[error("non-finite primitive parameter in {0}")]
    NonFiniteParameter(String),
    #[error("degenerate primitive: {0}")]
    DegeneratePrimitive(String),
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("material undefined outside object (occupancy is 0 at {0:?})")]
    MaterialUndefined(Vector3<f64>),
    #[error("occupancy too sparse: rejection budget exhausted after {proposals} proposals")]
    SparseOccupancy { proposals: u64 },
}

/// Axis-aligned bounding box in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        (0..3).all(|i| x[i] >= self.min[i] && x[i] <= self.max[i])
    }

    pub fn center(&self) -> Vector3<f64> {
        0.5 * (self.min + self.max)
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    /// Grows the box by `fraction` of its extent on every side.
    pub fn padded(&self, fraction: f64) -> Self {
        let pad = fraction * self.extent();
        Self { min: self.min - pad, max: self.max + pad }
    }
}

/// Spatial scope of a material rule.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Whole,
    Box { min: Vector3<f64>, max: Vector3<f64> },
    Sphere { center: Vector3<f64>, radius: f64 },
}

impl Region {
    pub fn contains(&self, x: &Vector3<f64>) -> bool {
        match self {
            Region::Whole => true,
            Region::Box { min, max } => (0..3).all(|i| x[i] >= min[i] && x[i] <= max[i]),
            Region::Sphere { center, radius } => (x - center).norm_squared() <= radius * radius,
        }
    }
}

/// One material rule: density plus Young's modulus / Poisson's ratio over a
/// region. The last matching rule in the list wins.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialRegion {
    pub region: Region,
    pub density: f64,
    pub youngs: f64,
    pub poisson: f64,
}

impl MaterialRegion {
    pub fn validate(&self) -> Result<(), OccupancyError> {
        if !(self.density > 0.0) || !self.density.is_finite() {
            return Err(OccupancyError::InvalidMaterial(format!(
                "density must be positive, got {}",
                self.density
            )));
        }
        if !(self.youngs > 0.0) || !self.youngs.is_finite() {
            return Err(OccupancyError::InvalidMaterial(format!(
                "Young's modulus must be positive, got {}",
                self.youngs
            )));
        }
        lame_from_young_poisson(self.youngs, self.poisson)?;
        Ok(())
    }
}

/// `(lambda, mu)` from Young's modulus and Poisson's ratio.
pub fn lame_from_young_poisson(youngs: f64, poisson: f64) -> Result<(f64, f64), OccupancyError> {
    if !youngs.is_finite() || !poisson.is_finite() || youngs <= 0.0 {
        return Err(OccupancyError::InvalidMaterial(format!(
            "E must be finite and positive, got E={youngs}"
        )));
    }
    if !(0.0..0.5).contains(&poisson) {
        return Err(OccupancyError::InvalidMaterial(format!(
            "Poisson ratio must satisfy 0 <= nu < 0.5, got {poisson}"
        )));
    }
    let mu = youngs / (2.0 * (1.0 + poisson));
    let lambda = youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
    Ok((lambda, mu))
}

/// Immutable occupancy field: geometry source + bounding box + materials.
#[derive(Debug, Clone)]
pub struct OccupancyField {
    source: Source,
    bbox: Aabb,
    density_threshold: f64,
    materials: Vec<MaterialRegion>,
}

/// Fraction of bbox extent added on each side of the tight bounds.
pub const BBOX_PADDING: f64 = 0.05;

fn default_material() -> MaterialRegion {
    MaterialRegion { region: Region::Whole, density: 1000.0, youngs: 5e6, poisson: 0.45 }
}

/// Builds a field from a source description with the default whole-object
/// material.
pub fn build_occupancy(spec: &SourceSpec) -> Result<OccupancyField, OccupancyError> {
    build_occupancy_with_materials(spec, vec![default_material()])
}

pub fn build_occupancy_with_materials(
    spec: &SourceSpec,
    materials: Vec<MaterialRegion>,
) -> Result<OccupancyField, OccupancyError> {
    if materials.is_empty() || materials[0].region != Region::Whole {
        return Err(OccupancyError::InvalidMaterial(
            "material rule 0 must cover the whole object".into(),
        ));
    }
    for m in &materials {
        m.validate()?;
    }
    let (source, tight_bbox, threshold) = source::resolve(spec)?;
    let bbox = tight_bbox.padded(BBOX_PADDING);
    let extent = bbox.extent();
    if (0..3).any(|i| !(extent[i] > 0.0) || !extent[i].is_finite()) {
        return Err(OccupancyError::DegeneratePrimitive(format!(
            "geometry bounds have non-positive extent {:?}",
            extent
        )));
    }
    Ok(OccupancyField { source, bbox, density_threshold: threshold, materials })
}

impl OccupancyField {
    /// Occupancy in [0, 1]; exactly 0 outside the bounding box.
    pub fn eval(&self, x: &Vector3<f64>) -> f64 {
        if !self.bbox.contains(x) {
            return 0.0;
        }
        self.source.eval(x)
    }

    /// Density and Lame parameters `(rho, lambda, mu)` at an interior point.
    pub fn eval_material(&self, x: &Vector3<f64>) -> Result<(f64, f64, f64), OccupancyError> {
        if self.eval(x) <= 0.0 {
            return Err(OccupancyError::MaterialUndefined(*x));
        }
        let rule = self
            .materials
            .iter()
            .rev()
            .find(|m| m.region.contains(x))
            .expect("rule 0 covers the whole object");
        let (lambda, mu) = lame_from_young_poisson(rule.youngs, rule.poisson)?;
        Ok((rule.density, lambda, mu))
    }

    pub fn bbox(&self) -> Aabb {
        self.bbox
    }

    pub fn density_threshold(&self) -> f64 {
        self.density_threshold
    }

    pub fn materials(&self) -> &[MaterialRegion] {
        &self.materials
    }
}
