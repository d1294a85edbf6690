//! Geometry sources behind an occupancy field.

use std::path::PathBuf;

use nalgebra::Vector3;

use super::{Aabb, OccupancyError};
use crate::formats::{self, ScalarGrid, TriMesh};

/// User-facing description of where geometry comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    Sphere { center: Vector3<f64>, radius: f64 },
    Box { min: Vector3<f64>, max: Vector3<f64> },
    Torus { center: Vector3<f64>, major_radius: f64, minor_radius: f64 },
    Beam { origin: Vector3<f64>, size: Vector3<f64> },
    Capsule { a: Vector3<f64>, b: Vector3<f64>, radius: f64 },
    MeshFile(PathBuf),
    PointCloudFile(PathBuf),
    GridFile { path: PathBuf, threshold: f64 },
}

/// Resolved evaluator. Analytic shapes keep their parameters; file-backed
/// shapes hold fully loaded data so evaluation never touches the filesystem.
#[derive(Debug, Clone)]
pub(super) enum Source {
    Sphere { center: Vector3<f64>, radius: f64 },
    Box { min: Vector3<f64>, max: Vector3<f64> },
    Torus { center: Vector3<f64>, major_radius: f64, minor_radius: f64 },
    Capsule { a: Vector3<f64>, b: Vector3<f64>, radius: f64 },
    Mesh(MeshOccupancy),
    Points(BallCloud),
    Grid(IndicatorGrid),
}

fn check_finite(name: &str, values: &[f64]) -> Result<(), OccupancyError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(OccupancyError::NonFiniteParameter(name.to_string()));
    }
    Ok(())
}

/// Builds the evaluator plus the tight (unpadded) bounds of its support.
pub(super) fn resolve(spec: &SourceSpec) -> Result<(Source, Aabb, f64), OccupancyError> {
    match spec {
        SourceSpec::Sphere { center, radius } => {
            check_finite("sphere", &[center.x, center.y, center.z, *radius])?;
            if *radius <= 0.0 {
                return Err(OccupancyError::DegeneratePrimitive("sphere radius <= 0".into()));
            }
            let r = Vector3::repeat(*radius);
            Ok((
                Source::Sphere { center: *center, radius: *radius },
                Aabb::new(center - r, center + r),
                0.0,
            ))
        }
        SourceSpec::Box { min, max } => {
            check_finite("box", &[min.x, min.y, min.z, max.x, max.y, max.z])?;
            if (0..3).any(|i| max[i] <= min[i]) {
                return Err(OccupancyError::DegeneratePrimitive("box has non-positive extent".into()));
            }
            Ok((Source::Box { min: *min, max: *max }, Aabb::new(*min, *max), 0.0))
        }
        SourceSpec::Beam { origin, size } => {
            check_finite("beam", &[origin.x, origin.y, origin.z, size.x, size.y, size.z])?;
            if (0..3).any(|i| size[i] <= 0.0) {
                return Err(OccupancyError::DegeneratePrimitive("beam has non-positive size".into()));
            }
            let max = origin + size;
            Ok((Source::Box { min: *origin, max }, Aabb::new(*origin, max), 0.0))
        }
        SourceSpec::Torus { center, major_radius, minor_radius } => {
            check_finite("torus", &[center.x, center.y, center.z, *major_radius, *minor_radius])?;
            if *major_radius <= 0.0 || *minor_radius <= 0.0 {
                return Err(OccupancyError::DegeneratePrimitive("torus radii must be positive".into()));
            }
            let reach = Vector3::new(
                major_radius + minor_radius,
                major_radius + minor_radius,
                *minor_radius,
            );
            Ok((
                Source::Torus {
                    center: *center,
                    major_radius: *major_radius,
                    minor_radius: *minor_radius,
                },
                Aabb::new(center - reach, center + reach),
                0.0,
            ))
        }
        SourceSpec::Capsule { a, b, radius } => {
            check_finite("capsule", &[a.x, a.y, a.z, b.x, b.y, b.z, *radius])?;
            if *radius <= 0.0 {
                return Err(OccupancyError::DegeneratePrimitive("capsule radius <= 0".into()));
            }
            let lo = Vector3::new(a.x.min(b.x), a.y.min(b.y), a.z.min(b.z))
                - Vector3::repeat(*radius);
            let hi = Vector3::new(a.x.max(b.x), a.y.max(b.y), a.z.max(b.z))
                + Vector3::repeat(*radius);
            Ok((Source::Capsule { a: *a, b: *b, radius: *radius }, Aabb::new(lo, hi), 0.0))
        }
        SourceSpec::MeshFile(path) => {
            let mesh = formats::read_obj(path)?;
            if mesh.faces.is_empty() {
                return Err(OccupancyError::EmptyMesh);
            }
            let bbox = bounds_of(&mesh.vertices).expect("faces imply vertices");
            Ok((Source::Mesh(MeshOccupancy::new(mesh)), bbox, 0.0))
        }
        SourceSpec::PointCloudFile(path) => {
            let points = formats::read_xyz(path)?;
            if points.is_empty() {
                return Err(OccupancyError::EmptyPointCloud);
            }
            let cloud = BallCloud::new(points);
            let raw = bounds_of(&cloud.points).expect("non-empty");
            let r = Vector3::repeat(cloud.radius);
            let bbox = Aabb::new(raw.min - r, raw.max + r);
            Ok((Source::Points(cloud), bbox, 0.0))
        }
        SourceSpec::GridFile { path, threshold } => {
            check_finite("grid threshold", &[*threshold])?;
            let grid = formats::read_svol(path)?;
            let indicator = IndicatorGrid::new(grid, *threshold)?;
            let bbox = indicator.support_bounds();
            Ok((Source::Grid(indicator), bbox, *threshold))
        }
    }
}

fn bounds_of(points: &[Vector3<f64>]) -> Option<Aabb> {
    let first = points.first()?;
    let mut min = *first;
    let mut max = *first;
    for p in points {
        for i in 0..3 {
            min[i] = min[i].min(p[i]);
            max[i] = max[i].max(p[i]);
        }
    }
    Some(Aabb::new(min, max))
}

impl Source {
    pub(super) fn eval(&self, x: &Vector3<f64>) -> f64 {
        match self {
            Source::Sphere { center, radius } => {
                hard((x - center).norm() - radius)
            }
            Source::Box { min, max } => {
                let inside = (0..3).all(|i| x[i] >= min[i] && x[i] <= max[i]);
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            Source::Torus { center, major_radius, minor_radius } => {
                let d = x - center;
                let ring = (d.x * d.x + d.y * d.y).sqrt() - major_radius;
                hard((ring * ring + d.z * d.z).sqrt() - minor_radius)
            }
            Source::Capsule { a, b, radius } => {
                hard(distance_to_segment(x, a, b) - radius)
            }
            Source::Mesh(mesh) => mesh.eval(x),
            Source::Points(cloud) => cloud.eval(x),
            Source::Grid(grid) => grid.eval(x),
        }
    }
}

#[inline]
fn hard(signed_distance: f64) -> f64 {
    if signed_distance <= 0.0 {
        1.0
    } else {
        0.0
    }
}

fn distance_to_segment(x: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (x - a).norm();
    }
    let t = ((x - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (x - (a + t * ab)).norm()
}

// ---------------------------------------------------------------------------
// Triangle-mesh occupancy: parity of ray crossings along the three axis
// directions with a majority vote, so one grazing hit cannot flip the result.

#[derive(Debug, Clone)]
pub(super) struct MeshOccupancy {
    mesh: TriMesh,
}

impl MeshOccupancy {
    fn new(mesh: TriMesh) -> Self {
        Self { mesh }
    }

    fn eval(&self, x: &Vector3<f64>) -> f64 {
        // Nominally axis-aligned rays, skewed by a fixed tiny amount so that
        // symmetric queries do not hit shared triangle edges exactly (an
        // exact edge hit counts both incident triangles and flips parity).
        const E1: f64 = 1.83e-4;
        const E2: f64 = 7.19e-5;
        let dirs = [
            Vector3::new(1.0, E1, E2),
            Vector3::new(E2, 1.0, E1),
            Vector3::new(E1, E2, 1.0),
        ];
        let mut votes = 0;
        for dir in &dirs {
            if self.crossings(x, dir) % 2 == 1 {
                votes += 1;
            }
        }
        if votes >= 2 {
            1.0
        } else {
            0.0
        }
    }

    fn crossings(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> usize {
        let mut count = 0;
        for f in &self.mesh.faces {
            let v0 = &self.mesh.vertices[f[0]];
            let v1 = &self.mesh.vertices[f[1]];
            let v2 = &self.mesh.vertices[f[2]];
            if ray_hits_triangle(origin, dir, v0, v1, v2) {
                count += 1;
            }
        }
        count
    }
}

/// Moller-Trumbore with a strictly positive ray parameter.
fn ray_hits_triangle(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    v0: &Vector3<f64>,
    v1: &Vector3<f64>,
    v2: &Vector3<f64>,
) -> bool {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-14 {
        return false; // Ray parallel to the triangle plane.
    }
    let inv_det = 1.0 / det;
    let tvec = origin - v0;
    let u = tvec.dot(&pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    e2.dot(&qvec) * inv_det > 1e-14
}

// ---------------------------------------------------------------------------
// Point clouds as a union of balls, radius 1.5x the median nearest-neighbor
// spacing, with a uniform hash grid for the containment queries.

#[derive(Debug, Clone)]
pub(super) struct BallCloud {
    points: Vec<Vector3<f64>>,
    radius: f64,
    grid_min: Vector3<f64>,
    cell: f64,
    dims: [usize; 3],
    buckets: Vec<Vec<u32>>,
}

impl BallCloud {
    fn new(points: Vec<Vector3<f64>>) -> Self {
        let radius = 1.5 * median_nn_spacing(&points);
        let raw = bounds_of(&points).expect("non-empty cloud");
        // Cell size at least the ball radius keeps the 3x3x3 neighborhood
        // query exact; the lower bound on top caps the bucket count for
        // clouds with outliers.
        let max_extent = raw.extent().max().max(1e-12);
        let cell = radius.max(max_extent / 64.0).max(1e-12);
        let grid_min = raw.min - Vector3::repeat(cell);
        let span = raw.max - grid_min + Vector3::repeat(cell);
        let dims = [
            (span.x / cell).ceil() as usize + 1,
            (span.y / cell).ceil() as usize + 1,
            (span.z / cell).ceil() as usize + 1,
        ];
        let mut buckets = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        for (i, p) in points.iter().enumerate() {
            let c = cell_of(p, &grid_min, cell, &dims);
            buckets[(c[2] * dims[1] + c[1]) * dims[0] + c[0]].push(i as u32);
        }
        Self { points, radius, grid_min, cell, dims, buckets }
    }

    fn eval(&self, x: &Vector3<f64>) -> f64 {
        let c = cell_of(x, &self.grid_min, self.cell, &self.dims);
        let r2 = self.radius * self.radius;
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let cx = c[0] as i64 + dx;
                    let cy = c[1] as i64 + dy;
                    let cz = c[2] as i64 + dz;
                    if cx < 0
                        || cy < 0
                        || cz < 0
                        || cx >= self.dims[0] as i64
                        || cy >= self.dims[1] as i64
                        || cz >= self.dims[2] as i64
                    {
                        continue;
                    }
                    let bucket = &self.buckets
                        [((cz as usize) * self.dims[1] + cy as usize) * self.dims[0] + cx as usize];
                    for &idx in bucket {
                        if (self.points[idx as usize] - x).norm_squared() <= r2 {
                            return 1.0;
                        }
                    }
                }
            }
        }
        0.0
    }
}

fn cell_of(p: &Vector3<f64>, grid_min: &Vector3<f64>, cell: f64, dims: &[usize; 3]) -> [usize; 3] {
    let mut out = [0usize; 3];
    for i in 0..3 {
        let c = ((p[i] - grid_min[i]) / cell).floor();
        out[i] = (c.max(0.0) as usize).min(dims[i] - 1);
    }
    out
}

fn median_nn_spacing(points: &[Vector3<f64>]) -> f64 {
    if points.len() < 2 {
        return 1.0;
    }
    let mut spacings: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    spacings.sort_by(|a, b| a.partial_cmp(b).expect("finite spacings"));
    spacings[spacings.len() / 2]
}

// ---------------------------------------------------------------------------
// Density grids: threshold to a 0/1 indicator at the grid vertices, then
// interpolate trilinearly, giving a blurry band one cell wide.

#[derive(Debug, Clone)]
pub(super) struct IndicatorGrid {
    nx: usize,
    ny: usize,
    nz: usize,
    origin: Vector3<f64>,
    spacing: Vector3<f64>,
    indicator: Vec<f32>,
}

impl IndicatorGrid {
    fn new(grid: ScalarGrid, threshold: f64) -> Result<Self, OccupancyError> {
        let indicator: Vec<f32> = grid
            .values
            .iter()
            .map(|&v| if (v as f64) > threshold { 1.0 } else { 0.0 })
            .collect();
        if indicator.iter().all(|&v| v == 0.0) {
            return Err(OccupancyError::EmptyGrid { threshold });
        }
        Ok(Self {
            nx: grid.nx,
            ny: grid.ny,
            nz: grid.nz,
            origin: grid.origin,
            spacing: grid.spacing,
            indicator,
        })
    }

    #[inline]
    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.indicator[(k * self.ny + j) * self.nx + i] as f64
    }

    /// Tight bounds of nonzero occupancy: occupied vertices dilated by one
    /// cell of trilinear support, clipped to the grid extent.
    fn support_bounds(&self) -> Aabb {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        for k in 0..self.nz {
            for j in 0..self.ny {
                for i in 0..self.nx {
                    if self.at(i, j, k) > 0.0 {
                        let idx = [i, j, k];
                        for a in 0..3 {
                            lo[a] = lo[a].min(idx[a]);
                            hi[a] = hi[a].max(idx[a]);
                        }
                    }
                }
            }
        }
        let dims = [self.nx, self.ny, self.nz];
        let mut min = self.origin;
        let mut max = self.origin;
        for a in 0..3 {
            let lo_idx = lo[a].saturating_sub(1) as f64;
            let hi_idx = (hi[a] + 1).min(dims[a] - 1) as f64;
            min[a] = self.origin[a] + lo_idx * self.spacing[a];
            max[a] = self.origin[a] + hi_idx * self.spacing[a];
        }
        Aabb::new(min, max)
    }

    fn eval(&self, x: &Vector3<f64>) -> f64 {
        let mut coord = [0.0f64; 3];
        let dims = [self.nx, self.ny, self.nz];
        for a in 0..3 {
            coord[a] = (x[a] - self.origin[a]) / self.spacing[a];
            if coord[a] < 0.0 || coord[a] > (dims[a] - 1) as f64 {
                return 0.0;
            }
        }
        let cell: Vec<usize> =
            (0..3).map(|a| (coord[a].floor() as usize).min(dims[a].saturating_sub(2))).collect();
        let frac: Vec<f64> = (0..3).map(|a| coord[a] - cell[a] as f64).collect();
        let mut value = 0.0;
        for corner in 0..8 {
            let di = corner & 1;
            let dj = (corner >> 1) & 1;
            let dk = (corner >> 2) & 1;
            // Degenerate axes (single-layer grids) clamp to the lone sample.
            let i = (cell[0] + di).min(self.nx - 1);
            let j = (cell[1] + dj).min(self.ny - 1);
            let k = (cell[2] + dk).min(self.nz - 1);
            let wx = if di == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if dj == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if dk == 1 { frac[2] } else { 1.0 - frac[2] };
            value += wx * wy * wz * self.at(i, j, k);
        }
        value.clamp(0.0, 1.0)
    }
}
