//! On-disk formats: OBJ meshes, XYZ point clouds, SVOL density grids, and
//! SPLT Gaussian-splat containers.
//!
//! SVOL: magic "SVOL", u32 version=1, u32 nx ny nz, 3xf64 origin,
//! 3xf64 spacing, then nx*ny*nz f32 values in x-fastest order, all
//! little-endian.
//!
//! SPLT: magic "SPLT", u32 count, then per splat 3xf32 mean, 6xf32
//! covariance upper triangle (xx, xy, xz, yy, yz, zz), f32 opacity,
//! u32 payload length + payload bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: bad magic (expected {expected:?})")]
    BadMagic { path: String, expected: &'static str },
    #[error("{path}: unsupported version {version}")]
    UnsupportedVersion { path: String, version: u32 },
    #[error("{path}: truncated file")]
    Truncated { path: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn io_err(path: &Path, source: std::io::Error) -> FormatError {
    FormatError::Io { path: path.display().to_string(), source }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Parse { path: path.display().to_string(), line, message: message.into() }
}

// ---------------------------------------------------------------------------
// Wavefront OBJ (vertices and triangular faces only)

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

pub fn read_obj(path: &Path) -> Result<TriMesh, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| parse_err(path, lineno + 1, "vertex needs 3 coordinates"))?;
                    *c = tok.parse().map_err(|_| {
                        parse_err(path, lineno + 1, format!("bad vertex coordinate {tok:?}"))
                    })?;
                }
                vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let refs: Vec<&str> = tokens.collect();
                if refs.len() != 3 {
                    return Err(parse_err(
                        path,
                        lineno + 1,
                        format!("face has {} vertices; only triangles are supported", refs.len()),
                    ));
                }
                let mut idx = [0usize; 3];
                for (slot, tok) in idx.iter_mut().zip(&refs) {
                    // "v", "v/vt", "v/vt/vn", "v//vn" all start with the vertex index.
                    let head = tok.split('/').next().unwrap_or("");
                    let v: i64 = head.parse().map_err(|_| {
                        parse_err(path, lineno + 1, format!("bad face index {tok:?}"))
                    })?;
                    let resolved = if v > 0 {
                        (v - 1) as usize
                    } else if v < 0 {
                        let from_end = vertices.len() as i64 + v;
                        if from_end < 0 {
                            return Err(parse_err(path, lineno + 1, "negative index out of range"));
                        }
                        from_end as usize
                    } else {
                        return Err(parse_err(path, lineno + 1, "face index 0 is invalid"));
                    };
                    *slot = resolved;
                }
                faces.push(idx);
            }
            _ => {} // Comments, normals, texture records and the rest are ignored.
        }
    }
    for face in &faces {
        for &v in face {
            if v >= vertices.len() {
                return Err(FormatError::Invalid {
                    path: path.display().to_string(),
                    message: format!("face references vertex {} of {}", v + 1, vertices.len()),
                });
            }
        }
    }
    Ok(TriMesh { vertices, faces })
}

pub fn write_obj(path: &Path, mesh: &TriMesh) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    let mut emit = |s: String| w.write_all(s.as_bytes()).map_err(|e| io_err(path, e));
    for v in &mesh.vertices {
        emit(format!("v {:.17e} {:.17e} {:.17e}\n", v.x, v.y, v.z))?;
    }
    for f in &mesh.faces {
        emit(format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// XYZ point clouds (one whitespace-separated point per line)

pub fn read_xyz(path: &Path) -> Result<Vec<Vector3<f64>>, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut points = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let mut coords = [0.0f64; 3];
        for c in &mut coords {
            let tok = toks
                .next()
                .ok_or_else(|| parse_err(path, lineno + 1, "point needs 3 coordinates"))?;
            *c = tok
                .parse()
                .map_err(|_| parse_err(path, lineno + 1, format!("bad coordinate {tok:?}")))?;
        }
        if toks.next().is_some() {
            return Err(parse_err(path, lineno + 1, "more than 3 values on a point line"));
        }
        points.push(Vector3::new(coords[0], coords[1], coords[2]));
    }
    Ok(points)
}

/// Writes points as text with 17 significant digits per component.
pub fn write_xyz(path: &Path, points: &[Vector3<f64>]) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    for p in points {
        w.write_all(format!("{:.16e} {:.16e} {:.16e}\n", p.x, p.y, p.z).as_bytes())
            .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// SVOL scalar grids

pub const SVOL_MAGIC: &[u8; 4] = b"SVOL";
pub const SVOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub origin: Vector3<f64>,
    pub spacing: Vector3<f64>,
    /// x-fastest order: index = (k * ny + j) * nx + i.
    pub values: Vec<f32>,
}

impl ScalarGrid {
    #[inline]
    pub fn value(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[(k * self.ny + j) * self.nx + i]
    }
}

struct ByteReader<'a> {
    path: &'a Path,
    inner: BufReader<File>,
}

impl<'a> ByteReader<'a> {
    fn open(path: &'a Path) -> Result<Self, FormatError> {
        Ok(Self { path, inner: BufReader::new(File::open(path).map_err(|e| io_err(path, e))?) })
    }

    fn bytes(&mut self, buf: &mut [u8]) -> Result<(), FormatError> {
        let mut filled = 0;
        while filled < buf.len() {
            let n = self.inner.read(&mut buf[filled..]).map_err(|e| io_err(self.path, e))?;
            if n == 0 {
                return Err(FormatError::Truncated { path: self.path.display().to_string() });
            }
            filled += n;
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f32(&mut self) -> Result<f32, FormatError> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
}

pub fn read_svol(path: &Path) -> Result<ScalarGrid, FormatError> {
    let mut r = ByteReader::open(path)?;
    let mut magic = [0u8; 4];
    r.bytes(&mut magic)?;
    if &magic != SVOL_MAGIC {
        return Err(FormatError::BadMagic { path: path.display().to_string(), expected: "SVOL" });
    }
    let version = r.u32()?;
    if version != SVOL_VERSION {
        return Err(FormatError::UnsupportedVersion { path: path.display().to_string(), version });
    }
    let nx = r.u32()? as usize;
    let ny = r.u32()? as usize;
    let nz = r.u32()? as usize;
    let origin = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
    let spacing = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(FormatError::Invalid {
            path: path.display().to_string(),
            message: format!("empty grid dimensions {nx}x{ny}x{nz}"),
        });
    }
    if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(FormatError::Invalid {
            path: path.display().to_string(),
            message: "grid spacing must be positive and finite".into(),
        });
    }
    let count = nx * ny * nz;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        values.push(r.f32()?);
    }
    Ok(ScalarGrid { nx, ny, nz, origin, spacing, values })
}

pub fn write_svol(path: &Path, grid: &ScalarGrid) -> Result<(), FormatError> {
    assert_eq!(grid.values.len(), grid.nx * grid.ny * grid.nz);
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    let mut emit = |bytes: &[u8]| w.write_all(bytes).map_err(|e| io_err(path, e));
    emit(SVOL_MAGIC)?;
    emit(&SVOL_VERSION.to_le_bytes())?;
    emit(&(grid.nx as u32).to_le_bytes())?;
    emit(&(grid.ny as u32).to_le_bytes())?;
    emit(&(grid.nz as u32).to_le_bytes())?;
    for i in 0..3 {
        emit(&grid.origin[i].to_le_bytes())?;
    }
    for i in 0..3 {
        emit(&grid.spacing[i].to_le_bytes())?;
    }
    for v in &grid.values {
        emit(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// SPLT Gaussian splats

pub const SPLT_MAGIC: &[u8; 4] = b"SPLT";

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSplat {
    pub mean: Vector3<f64>,
    /// Symmetric covariance; only the upper triangle is stored on disk.
    pub covariance: Matrix3<f64>,
    pub opacity: f32,
    /// Opaque renderer payload (colors, harmonics, ...), preserved verbatim.
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianSplatSet {
    pub splats: Vec<GaussianSplat>,
}

/// Reads a SPLT container, checking that every covariance is symmetric PSD
/// (up to f32 roundoff).
pub fn read_splt(path: &Path) -> Result<GaussianSplatSet, FormatError> {
    let mut r = ByteReader::open(path)?;
    let mut magic = [0u8; 4];
    r.bytes(&mut magic)?;
    if &magic != SPLT_MAGIC {
        return Err(FormatError::BadMagic { path: path.display().to_string(), expected: "SPLT" });
    }
    let count = r.u32()? as usize;
    let mut splats = Vec::with_capacity(count);
    for s in 0..count {
        let mean = Vector3::new(r.f32()? as f64, r.f32()? as f64, r.f32()? as f64);
        let (xx, xy, xz) = (r.f32()? as f64, r.f32()? as f64, r.f32()? as f64);
        let (yy, yz, zz) = (r.f32()? as f64, r.f32()? as f64, r.f32()? as f64);
        let covariance = Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz);
        let opacity = r.f32()?;
        let payload_len = r.u32()? as usize;
        let mut payload = vec![0u8; payload_len];
        r.bytes(&mut payload)?;
        let min_eig = min_symmetric_eigenvalue(&covariance);
        let scale = covariance.norm().max(1e-12);
        if min_eig < -1e-5 * scale {
            return Err(FormatError::Invalid {
                path: path.display().to_string(),
                message: format!("splat {s} covariance is not PSD (min eigenvalue {min_eig:e})"),
            });
        }
        splats.push(GaussianSplat { mean, covariance, opacity, payload });
    }
    Ok(GaussianSplatSet { splats })
}

pub fn write_splt(path: &Path, set: &GaussianSplatSet) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    let mut emit = |bytes: &[u8]| w.write_all(bytes).map_err(|e| io_err(path, e));
    emit(SPLT_MAGIC)?;
    emit(&(set.splats.len() as u32).to_le_bytes())?;
    for s in &set.splats {
        for i in 0..3 {
            emit(&(s.mean[i] as f32).to_le_bytes())?;
        }
        let c = &s.covariance;
        for &v in &[c[(0, 0)], c[(0, 1)], c[(0, 2)], c[(1, 1)], c[(1, 2)], c[(2, 2)]] {
            emit(&(v as f32).to_le_bytes())?;
        }
        emit(&s.opacity.to_le_bytes())?;
        emit(&(s.payload.len() as u32).to_le_bytes())?;
        emit(&s.payload)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Smallest eigenvalue of a symmetric 3x3 matrix.
pub fn min_symmetric_eigenvalue(m: &Matrix3<f64>) -> f64 {
    let sym = 0.5 * (m + m.transpose());
    sym.symmetric_eigenvalues().iter().fold(f64::INFINITY, |a, &b| a.min(b))
}
