//! Exporters: deformed points, meshes, Gaussian splats, weight grids, and
//! the per-frame transform log.
//!
//! Everything here maps rest geometry through the trained deformation for a
//! given set of handle transforms; nothing mutates simulation state.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use thiserror::Error;

use crate::elastic::{deformation_gradient_fd, deformation_map, default_fd_step, HandleTransforms};
use crate::formats::{self, FormatError, GaussianSplat, GaussianSplatSet, ScalarGrid, TriMesh};
use crate::mlp::SkinningField;
use crate::occupancy::Aabb;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid export request: {0}")]
    Invalid(String),
}

fn io_err(path: &Path, source: std::io::Error) -> ExportError {
    ExportError::Io { path: path.display().to_string(), source }
}

/// Writes deformed positions as an XYZ text file.
pub fn export_points(path: &Path, positions: &[Vector3<f64>]) -> Result<(), ExportError> {
    formats::write_xyz(path, positions)?;
    Ok(())
}

/// Maps every vertex of a rest mesh through the deformation and writes an
/// OBJ with the faces unchanged.
pub fn export_mesh(
    path: &Path,
    rest: &TriMesh,
    net: &SkinningField,
    transforms: &HandleTransforms,
) -> Result<(), ExportError> {
    let deformed = TriMesh {
        vertices: rest
            .vertices
            .iter()
            .map(|v| deformation_map(&net.forward(v), transforms, v))
            .collect(),
        faces: rest.faces.clone(),
    };
    formats::write_obj(path, &deformed)?;
    Ok(())
}

/// Transforms Gaussian splats: means through the deformation map, covariances
/// by `F Sigma F^T` with `F` the finite-difference deformation gradient at
/// the rest mean. Opacity and payload are preserved.
pub fn transform_gaussians(
    set: &GaussianSplatSet,
    net: &SkinningField,
    transforms: &HandleTransforms,
) -> GaussianSplatSet {
    let h = default_fd_step(net);
    let splats = set
        .splats
        .iter()
        .map(|s| {
            let weights = net.forward(&s.mean);
            let mean = deformation_map(&weights, transforms, &s.mean);
            let f = deformation_gradient_fd(net, transforms, &s.mean, h);
            let cov = f * s.covariance * f.transpose();
            let cov = 0.5 * (cov + cov.transpose());
            GaussianSplat { mean, covariance: cov, opacity: s.opacity, payload: s.payload.clone() }
        })
        .collect();
    GaussianSplatSet { splats }
}

/// Samples each handle's weight on a regular grid over `bbox` and writes one
/// SVOL file per handle into `dir`. Returns the written paths.
pub fn export_weight_grid(
    net: &SkinningField,
    bbox: &Aabb,
    resolution: usize,
    dir: &Path,
) -> Result<Vec<PathBuf>, ExportError> {
    if resolution < 2 {
        return Err(ExportError::Invalid(format!(
            "grid resolution must be at least 2 per axis, got {resolution}"
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let extent = bbox.extent();
    let spacing = extent / (resolution - 1) as f64;
    let n = net.n_handles();
    let mut values = vec![Vec::with_capacity(resolution.pow(3)); n];
    for k in 0..resolution {
        for j in 0..resolution {
            for i in 0..resolution {
                let x = Vector3::new(
                    bbox.min.x + i as f64 * spacing.x,
                    bbox.min.y + j as f64 * spacing.y,
                    bbox.min.z + k as f64 * spacing.z,
                );
                let w = net.forward(&x);
                for (handle, v) in values.iter_mut().enumerate() {
                    v.push(w[handle] as f32);
                }
            }
        }
    }
    let mut paths = Vec::with_capacity(n);
    for (handle, v) in values.into_iter().enumerate() {
        let grid = ScalarGrid {
            nx: resolution,
            ny: resolution,
            nz: resolution,
            origin: bbox.min,
            spacing,
            values: v,
        };
        let path = dir.join(format!("weight_{handle:03}.svol"));
        formats::write_svol(&path, &grid)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Per-frame handle-transform log: `frame,time,z[0],...,z[12n-1]` rows.
pub struct TransformLog {
    writer: BufWriter<File>,
    path: PathBuf,
}

impl TransformLog {
    pub fn create(path: &Path) -> Result<Self, ExportError> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        Ok(Self { writer: BufWriter::new(file), path: path.to_path_buf() })
    }

    pub fn write_row(&mut self, frame: usize, time: f64, z: &[f64]) -> Result<(), ExportError> {
        let mut row = format!("{frame},{time}");
        for v in z {
            row.push(',');
            row.push_str(&v.to_string());
        }
        row.push('\n');
        self.writer
            .write_all(row.as_bytes())
            .map_err(|e| io_err(&self.path.clone(), e))
    }

    pub fn finish(mut self) -> Result<(), ExportError> {
        self.writer.flush().map_err(|e| io_err(&self.path.clone(), e))
    }
}
