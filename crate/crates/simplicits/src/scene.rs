//! Scene configuration: a line-oriented `section.key = value` text format.
//!
//! Sections: `geometry`, `material.N`, `train`, `sim`, `export`, `pins.N`,
//! `script.N`, `colliders.N`. Unknown keys are errors, numbered sections
//! must be contiguous from 0, and referenced files must exist at parse time.
//! `#` starts a comment. Parsing then serializing then parsing again yields
//! an identical config.
//!
//! ```text
//! geometry.kind = beam
//! geometry.size = 2 0.5 0.5
//!
//! material.0.region = whole
//! material.0.youngs = 5e6
//!
//! train.handles = 4
//! sim.gravity = 0 0 -9.8
//! colliders.0.kind = ground
//! colliders.0.height = -1
//! export.formats = points
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use thiserror::Error;

use crate::elastic::EnergyKind;
use crate::occupancy::{MaterialRegion, Region, SourceSpec};
use crate::sim::{Collider, Keyframe, MotionScript, PinSet, SimConfig};
use crate::training::{TrainConfig, TrainingEnergy};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which geometry exports to write each stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Points,
    Mesh,
    Splats,
}

impl ExportFormat {
    fn name(self) -> &'static str {
        match self {
            ExportFormat::Points => "points",
            ExportFormat::Mesh => "mesh",
            ExportFormat::Splats => "splats",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportConfig {
    pub formats: Vec<ExportFormat>,
    pub stride: usize,
    pub dir: Option<PathBuf>,
    /// Rest surface mesh deformed per exported frame.
    pub mesh_path: Option<PathBuf>,
    /// Gaussian splats transformed per exported frame.
    pub splats_path: Option<PathBuf>,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            formats: vec![ExportFormat::Points],
            stride: 1,
            dir: None,
            mesh_path: None,
            splats_path: None,
        }
    }
}

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub geometry: SourceSpec,
    pub materials: Vec<MaterialRegion>,
    pub train: TrainConfig,
    pub sim: SimConfig,
    pub export: ExportConfig,
}

impl SceneConfig {
    pub fn parse_file(path: &Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SceneError::Io { path: path.display().to_string(), source: e })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse_str(&text, base, &path.display().to_string())
    }

    pub fn parse_str(text: &str, base_dir: &Path, label: &str) -> Result<Self, SceneError> {
        Parser::new(base_dir, label).parse(text)
    }

    /// Canonical text form; `parse(serialize(c)) == c`.
    pub fn to_scene_text(&self) -> String {
        let mut s = String::new();
        let geo = &self.geometry;
        match geo {
            SourceSpec::Sphere { center, radius } => {
                push_kv(&mut s, "geometry.kind", "sphere");
                push_vec3(&mut s, "geometry.center", center);
                push_num(&mut s, "geometry.radius", *radius);
            }
            SourceSpec::Box { min, max } => {
                push_kv(&mut s, "geometry.kind", "box");
                push_vec3(&mut s, "geometry.min", min);
                push_vec3(&mut s, "geometry.max", max);
            }
            SourceSpec::Torus { center, major_radius, minor_radius } => {
                push_kv(&mut s, "geometry.kind", "torus");
                push_vec3(&mut s, "geometry.center", center);
                push_num(&mut s, "geometry.major_radius", *major_radius);
                push_num(&mut s, "geometry.minor_radius", *minor_radius);
            }
            SourceSpec::Beam { origin, size } => {
                push_kv(&mut s, "geometry.kind", "beam");
                push_vec3(&mut s, "geometry.origin", origin);
                push_vec3(&mut s, "geometry.size", size);
            }
            SourceSpec::Capsule { a, b, radius } => {
                push_kv(&mut s, "geometry.kind", "capsule");
                push_vec3(&mut s, "geometry.a", a);
                push_vec3(&mut s, "geometry.b", b);
                push_num(&mut s, "geometry.radius", *radius);
            }
            SourceSpec::MeshFile(path) => {
                push_kv(&mut s, "geometry.kind", "mesh");
                push_kv(&mut s, "geometry.path", &path.display().to_string());
            }
            SourceSpec::PointCloudFile(path) => {
                push_kv(&mut s, "geometry.kind", "points");
                push_kv(&mut s, "geometry.path", &path.display().to_string());
            }
            SourceSpec::GridFile { path, threshold } => {
                push_kv(&mut s, "geometry.kind", "grid");
                push_kv(&mut s, "geometry.path", &path.display().to_string());
                push_num(&mut s, "geometry.threshold", *threshold);
            }
        }
        for (i, m) in self.materials.iter().enumerate() {
            let pre = format!("material.{i}");
            push_region(&mut s, &pre, &m.region);
            push_num(&mut s, &format!("{pre}.density"), m.density);
            push_num(&mut s, &format!("{pre}.youngs"), m.youngs);
            push_num(&mut s, &format!("{pre}.poisson"), m.poisson);
        }
        let t = &self.train;
        push_num(&mut s, "train.handles", t.n_handles as f64);
        push_num(&mut s, "train.depth", t.depth as f64);
        push_num(&mut s, "train.width", t.width as f64);
        push_num(&mut s, "train.steps", t.steps as f64);
        push_num(&mut s, "train.lr_start", t.lr_start);
        push_num(&mut s, "train.lr_end", t.lr_end);
        push_num(&mut s, "train.batch_transforms", t.batch_transforms as f64);
        push_num(&mut s, "train.cubature_per_step", t.cubature_per_step as f64);
        push_num(&mut s, "train.sigma", t.transform_sigma);
        push_num(&mut s, "train.lambda_elastic", t.lambda_elastic);
        push_num(&mut s, "train.lambda_ortho", t.lambda_ortho);
        push_num(&mut s, "train.seed", t.seed as f64);
        let energy_name = match t.energy {
            TrainingEnergy::Scheduled => "scheduled".to_string(),
            TrainingEnergy::Fixed(kind) => kind.name().to_string(),
        };
        push_kv(&mut s, "train.energy", &energy_name);
        let sim = &self.sim;
        push_num(&mut s, "sim.timestep", sim.timestep);
        push_vec3(&mut s, "sim.gravity", &sim.gravity);
        push_num(&mut s, "sim.newton_max_iters", sim.newton_max_iters as f64);
        push_num(&mut s, "sim.newton_tol", sim.newton_tol);
        push_num(&mut s, "sim.barrier_iters", sim.barrier_iters as f64);
        push_num(&mut s, "sim.barrier_kappa0", sim.barrier_kappa0);
        push_num(&mut s, "sim.barrier_growth", sim.barrier_growth);
        if let Some(d) = sim.barrier_dhat {
            push_num(&mut s, "sim.barrier_dhat", d);
        }
        if let Some(k) = sim.pin_stiffness {
            push_num(&mut s, "sim.pin_stiffness", k);
        }
        push_kv(&mut s, "sim.energy", sim.energy.name());
        push_num(&mut s, "sim.cubature", sim.cubature_count as f64);
        push_num(&mut s, "sim.cubature_seed", sim.cubature_seed as f64);
        push_num(&mut s, "sim.steps", sim.steps as f64);
        for (i, pin) in sim.pins.iter().enumerate() {
            let pre = format!("pins.{i}");
            push_region(&mut s, &pre, &pin.region);
            if let Some(k) = pin.stiffness {
                push_num(&mut s, &format!("{pre}.stiffness"), k);
            }
        }
        for (i, script) in sim.scripts.iter().enumerate() {
            let pre = format!("script.{i}");
            push_region(&mut s, &pre, &script.region);
            push_vec3(&mut s, &format!("{pre}.center"), &script.center);
            if let Some(k) = script.stiffness {
                push_num(&mut s, &format!("{pre}.stiffness"), k);
            }
            for (k, key) in script.keyframes.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{pre}.key.{k} = {} {} {} {} {} {} {}",
                    key.time,
                    key.translation.x,
                    key.translation.y,
                    key.translation.z,
                    key.rotation.x,
                    key.rotation.y,
                    key.rotation.z
                );
            }
        }
        for (i, collider) in sim.colliders.iter().enumerate() {
            let pre = format!("colliders.{i}");
            match collider {
                Collider::Ground { height } => {
                    push_kv(&mut s, &format!("{pre}.kind"), "ground");
                    push_num(&mut s, &format!("{pre}.height"), *height);
                }
                Collider::Sphere { center, radius } => {
                    push_kv(&mut s, &format!("{pre}.kind"), "sphere");
                    push_vec3(&mut s, &format!("{pre}.center"), center);
                    push_num(&mut s, &format!("{pre}.radius"), *radius);
                }
            }
        }
        let e = &self.export;
        let formats: Vec<&str> = e.formats.iter().map(|f| f.name()).collect();
        push_kv(&mut s, "export.formats", &formats.join(" "));
        push_num(&mut s, "export.stride", e.stride as f64);
        if let Some(dir) = &e.dir {
            push_kv(&mut s, "export.dir", &dir.display().to_string());
        }
        if let Some(p) = &e.mesh_path {
            push_kv(&mut s, "export.mesh_path", &p.display().to_string());
        }
        if let Some(p) = &e.splats_path {
            push_kv(&mut s, "export.splats_path", &p.display().to_string());
        }
        s
    }
}

fn push_kv(s: &mut String, key: &str, value: &str) {
    let _ = writeln!(s, "{key} = {value}");
}

fn push_num(s: &mut String, key: &str, value: f64) {
    let _ = writeln!(s, "{key} = {value}");
}

fn push_vec3(s: &mut String, key: &str, v: &Vector3<f64>) {
    let _ = writeln!(s, "{key} = {} {} {}", v.x, v.y, v.z);
}

fn push_region(s: &mut String, prefix: &str, region: &Region) {
    match region {
        Region::Whole => push_kv(s, &format!("{prefix}.region"), "whole"),
        Region::Box { min, max } => {
            push_kv(s, &format!("{prefix}.region"), "box");
            push_vec3(s, &format!("{prefix}.min"), min);
            push_vec3(s, &format!("{prefix}.max"), max);
        }
        Region::Sphere { center, radius } => {
            push_kv(s, &format!("{prefix}.region"), "sphere");
            push_vec3(s, &format!("{prefix}.center"), center);
            push_num(s, &format!("{prefix}.radius"), *radius);
        }
    }
}

/// One raw `key = value` occurrence.
struct RawEntry {
    line: usize,
    value: String,
    consumed: std::cell::Cell<bool>,
}

struct Parser<'a> {
    base_dir: &'a Path,
    label: String,
    entries: BTreeMap<String, RawEntry>,
}

impl<'a> Parser<'a> {
    fn new(base_dir: &'a Path, label: &str) -> Self {
        Self { base_dir, label: label.to_string(), entries: BTreeMap::new() }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> SceneError {
        SceneError::Parse { path: self.label.clone(), line, message: message.into() }
    }

    fn invalid(&self, message: impl Into<String>) -> SceneError {
        SceneError::Invalid { path: self.label.clone(), message: message.into() }
    }

    fn parse(mut self, text: &str) -> Result<SceneConfig, SceneError> {
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| self.err(line_no, "expected `key = value`"))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() || value.is_empty() {
                return Err(self.err(line_no, "empty key or value"));
            }
            if self.entries.contains_key(&key) {
                return Err(self.err(line_no, format!("duplicate key {key:?}")));
            }
            self.entries.insert(
                key,
                RawEntry { line: line_no, value, consumed: std::cell::Cell::new(false) },
            );
        }

        let geometry = self.parse_geometry()?;
        let materials = self.parse_materials()?;
        let train = self.parse_train()?;
        let sim = self.parse_sim()?;
        let export = self.parse_export()?;

        // Strictness: every key present must have been consumed.
        for (key, entry) in &self.entries {
            if !entry.consumed.get() {
                return Err(self.err(entry.line, format!("unknown key {key:?}")));
            }
        }
        Ok(SceneConfig { geometry, materials, train, sim, export })
    }

    fn take(&self, key: &str) -> Option<&RawEntry> {
        let entry = self.entries.get(key)?;
        entry.consumed.set(true);
        Some(entry)
    }

    fn required(&self, key: &str) -> Result<&RawEntry, SceneError> {
        self.take(key).ok_or_else(|| self.invalid(format!("missing required key {key:?}")))
    }

    fn f64_value(&self, entry: &RawEntry) -> Result<f64, SceneError> {
        entry
            .value
            .parse::<f64>()
            .map_err(|_| self.err(entry.line, format!("expected a number, got {:?}", entry.value)))
    }

    fn f64_opt(&self, key: &str) -> Result<Option<f64>, SceneError> {
        self.take(key).map(|e| self.f64_value(e)).transpose()
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, SceneError> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    fn usize_opt(&self, key: &str) -> Result<Option<usize>, SceneError> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => {
                let v = e.value.parse::<usize>().map_err(|_| {
                    self.err(e.line, format!("expected a non-negative integer, got {:?}", e.value))
                })?;
                Ok(Some(v))
            }
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize, SceneError> {
        Ok(self.usize_opt(key)?.unwrap_or(default))
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64, SceneError> {
        match self.take(key) {
            None => Ok(default),
            Some(e) => e.value.parse::<u64>().map_err(|_| {
                self.err(e.line, format!("expected an unsigned integer, got {:?}", e.value))
            }),
        }
    }

    fn vec3_value(&self, entry: &RawEntry) -> Result<Vector3<f64>, SceneError> {
        let parts: Vec<&str> = entry.value.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(self.err(entry.line, format!("expected 3 numbers, got {:?}", entry.value)));
        }
        let mut out = [0.0; 3];
        for (slot, part) in out.iter_mut().zip(&parts) {
            *slot = part
                .parse()
                .map_err(|_| self.err(entry.line, format!("bad number {part:?}")))?;
        }
        Ok(Vector3::new(out[0], out[1], out[2]))
    }

    fn vec3_required(&self, key: &str) -> Result<Vector3<f64>, SceneError> {
        let entry = self.required(key)?;
        self.vec3_value(entry)
    }

    fn vec3_or(&self, key: &str, default: Vector3<f64>) -> Result<Vector3<f64>, SceneError> {
        match self.take(key) {
            None => Ok(default),
            Some(e) => self.vec3_value(e),
        }
    }

    fn path_required(&self, key: &str) -> Result<PathBuf, SceneError> {
        let entry = self.required(key)?;
        let path = self.base_dir.join(&entry.value);
        if !path.exists() {
            return Err(self.err(entry.line, format!("referenced file {path:?} does not exist")));
        }
        Ok(path)
    }

    fn path_opt(&self, key: &str) -> Result<Option<PathBuf>, SceneError> {
        match self.take(key) {
            None => Ok(None),
            Some(entry) => {
                let path = self.base_dir.join(&entry.value);
                if !path.exists() {
                    return Err(
                        self.err(entry.line, format!("referenced file {path:?} does not exist"))
                    );
                }
                Ok(Some(path))
            }
        }
    }

    /// Indices of a numbered section, checked contiguous from 0.
    fn section_indices(&self, section: &str) -> Result<usize, SceneError> {
        let mut max_index: Option<usize> = None;
        let prefix = format!("{section}.");
        for key in self.entries.keys() {
            if let Some(rest) = key.strip_prefix(&prefix) {
                let idx_str = rest.split('.').next().unwrap_or("");
                let idx: usize = idx_str.parse().map_err(|_| {
                    self.invalid(format!("section {section:?} needs numeric indices, got {key:?}"))
                })?;
                max_index = Some(max_index.map_or(idx, |m: usize| m.max(idx)));
            }
        }
        let count = max_index.map_or(0, |m| m + 1);
        for i in 0..count {
            if !self.entries.keys().any(|k| k.starts_with(&format!("{section}.{i}."))) {
                return Err(self.invalid(format!("section {section}.{i} is missing (gap)")));
            }
        }
        Ok(count)
    }

    fn parse_region(&self, prefix: &str) -> Result<Region, SceneError> {
        let entry = self.required(&format!("{prefix}.region"))?;
        match entry.value.as_str() {
            "whole" => Ok(Region::Whole),
            "box" => Ok(Region::Box {
                min: self.vec3_required(&format!("{prefix}.min"))?,
                max: self.vec3_required(&format!("{prefix}.max"))?,
            }),
            "sphere" => Ok(Region::Sphere {
                center: self.vec3_required(&format!("{prefix}.center"))?,
                radius: self.f64_value(self.required(&format!("{prefix}.radius"))?)?,
            }),
            other => Err(self.err(entry.line, format!("unknown region kind {other:?}"))),
        }
    }

    fn parse_geometry(&self) -> Result<SourceSpec, SceneError> {
        let kind = self.required("geometry.kind")?;
        match kind.value.as_str() {
            "sphere" => Ok(SourceSpec::Sphere {
                center: self.vec3_or("geometry.center", Vector3::zeros())?,
                radius: self.f64_value(self.required("geometry.radius")?)?,
            }),
            "box" => Ok(SourceSpec::Box {
                min: self.vec3_required("geometry.min")?,
                max: self.vec3_required("geometry.max")?,
            }),
            "torus" => Ok(SourceSpec::Torus {
                center: self.vec3_or("geometry.center", Vector3::zeros())?,
                major_radius: self.f64_value(self.required("geometry.major_radius")?)?,
                minor_radius: self.f64_value(self.required("geometry.minor_radius")?)?,
            }),
            "beam" => Ok(SourceSpec::Beam {
                origin: self.vec3_or("geometry.origin", Vector3::zeros())?,
                size: self.vec3_required("geometry.size")?,
            }),
            "capsule" => Ok(SourceSpec::Capsule {
                a: self.vec3_required("geometry.a")?,
                b: self.vec3_required("geometry.b")?,
                radius: self.f64_value(self.required("geometry.radius")?)?,
            }),
            "mesh" => Ok(SourceSpec::MeshFile(self.path_required("geometry.path")?)),
            "points" => Ok(SourceSpec::PointCloudFile(self.path_required("geometry.path")?)),
            "grid" => Ok(SourceSpec::GridFile {
                path: self.path_required("geometry.path")?,
                threshold: self.f64_value(self.required("geometry.threshold")?)?,
            }),
            other => Err(self.err(kind.line, format!("unknown geometry kind {other:?}"))),
        }
    }

    fn parse_materials(&self) -> Result<Vec<MaterialRegion>, SceneError> {
        let count = self.section_indices("material")?;
        if count == 0 {
            // Whole-object default: water-density rubber-like solid.
            return Ok(vec![MaterialRegion {
                region: Region::Whole,
                density: 1000.0,
                youngs: 5e6,
                poisson: 0.45,
            }]);
        }
        let mut materials = Vec::with_capacity(count);
        for i in 0..count {
            let pre = format!("material.{i}");
            let region = self.parse_region(&pre)?;
            materials.push(MaterialRegion {
                region,
                density: self.f64_or(&format!("{pre}.density"), 1000.0)?,
                youngs: self.f64_or(&format!("{pre}.youngs"), 5e6)?,
                poisson: self.f64_or(&format!("{pre}.poisson"), 0.45)?,
            });
        }
        if materials[0].region != Region::Whole {
            return Err(self.invalid("material.0 must have region = whole"));
        }
        for (i, m) in materials.iter().enumerate() {
            if !(m.density > 0.0) || !(m.youngs > 0.0) || !(0.0..0.5).contains(&m.poisson) {
                return Err(self.invalid(format!(
                    "material.{i} out of range: density {}, youngs {}, poisson {}",
                    m.density, m.youngs, m.poisson
                )));
            }
        }
        Ok(materials)
    }

    fn parse_train(&self) -> Result<TrainConfig, SceneError> {
        let d = TrainConfig::default();
        let energy = match self.take("train.energy") {
            None => TrainingEnergy::Scheduled,
            Some(e) => match e.value.as_str() {
                "scheduled" => TrainingEnergy::Scheduled,
                other => TrainingEnergy::Fixed(EnergyKind::parse(other).ok_or_else(|| {
                    self.err(e.line, format!("unknown training energy {other:?}"))
                })?),
            },
        };
        let config = TrainConfig {
            n_handles: self.usize_or("train.handles", d.n_handles)?,
            depth: self.usize_or("train.depth", d.depth)?,
            width: self.usize_or("train.width", d.width)?,
            steps: self.usize_or("train.steps", d.steps)?,
            lr_start: self.f64_or("train.lr_start", d.lr_start)?,
            lr_end: self.f64_or("train.lr_end", d.lr_end)?,
            batch_transforms: self.usize_or("train.batch_transforms", d.batch_transforms)?,
            cubature_per_step: self.usize_or("train.cubature_per_step", d.cubature_per_step)?,
            transform_sigma: self.f64_or("train.sigma", d.transform_sigma)?,
            lambda_elastic: self.f64_or("train.lambda_elastic", d.lambda_elastic)?,
            lambda_ortho: self.f64_or("train.lambda_ortho", d.lambda_ortho)?,
            seed: self.u64_or("train.seed", d.seed)?,
            energy,
        };
        config.validate().map_err(|e| self.invalid(e.to_string()))?;
        Ok(config)
    }

    fn parse_sim(&self) -> Result<SimConfig, SceneError> {
        let d = SimConfig::default();
        let energy = match self.take("sim.energy") {
            None => EnergyKind::StableNeohookean,
            Some(e) => EnergyKind::parse(&e.value)
                .ok_or_else(|| self.err(e.line, format!("unknown energy {:?}", e.value)))?,
        };
        let mut pins = Vec::new();
        for i in 0..self.section_indices("pins")? {
            let pre = format!("pins.{i}");
            pins.push(PinSet {
                region: self.parse_region(&pre)?,
                stiffness: self.f64_opt(&format!("{pre}.stiffness"))?,
            });
        }
        let mut scripts = Vec::new();
        for i in 0..self.section_indices("script")? {
            let pre = format!("script.{i}");
            let region = self.parse_region(&pre)?;
            let center = self.vec3_required(&format!("{pre}.center"))?;
            let stiffness = self.f64_opt(&format!("{pre}.stiffness"))?;
            let mut keyframes = Vec::new();
            let mut k = 0;
            while let Some(entry) = self.take(&format!("{pre}.key.{k}")) {
                let parts: Vec<&str> = entry.value.split_whitespace().collect();
                if parts.len() != 7 {
                    return Err(self.err(
                        entry.line,
                        "keyframe needs 7 numbers: t tx ty tz rx ry rz".to_string(),
                    ));
                }
                let mut nums = [0.0f64; 7];
                for (slot, part) in nums.iter_mut().zip(&parts) {
                    *slot = part
                        .parse()
                        .map_err(|_| self.err(entry.line, format!("bad number {part:?}")))?;
                }
                keyframes.push(Keyframe {
                    time: nums[0],
                    translation: Vector3::new(nums[1], nums[2], nums[3]),
                    rotation: Vector3::new(nums[4], nums[5], nums[6]),
                });
                k += 1;
            }
            if keyframes.is_empty() {
                return Err(self.invalid(format!("{pre} has no keyframes")));
            }
            scripts.push(MotionScript { region, center, keyframes, stiffness });
        }
        let mut colliders = Vec::new();
        for i in 0..self.section_indices("colliders")? {
            let pre = format!("colliders.{i}");
            let kind = self.required(&format!("{pre}.kind"))?;
            match kind.value.as_str() {
                "ground" => colliders.push(Collider::Ground {
                    height: self.f64_value(self.required(&format!("{pre}.height"))?)?,
                }),
                "sphere" => colliders.push(Collider::Sphere {
                    center: self.vec3_required(&format!("{pre}.center"))?,
                    radius: self.f64_value(self.required(&format!("{pre}.radius"))?)?,
                }),
                other => {
                    return Err(self.err(kind.line, format!("unknown collider kind {other:?}")))
                }
            }
        }
        let config = SimConfig {
            timestep: self.f64_or("sim.timestep", d.timestep)?,
            gravity: self.vec3_or("sim.gravity", d.gravity)?,
            newton_max_iters: self.usize_or("sim.newton_max_iters", d.newton_max_iters)?,
            newton_tol: self.f64_or("sim.newton_tol", d.newton_tol)?,
            barrier_iters: self.usize_or("sim.barrier_iters", d.barrier_iters)?,
            barrier_kappa0: self.f64_or("sim.barrier_kappa0", d.barrier_kappa0)?,
            barrier_growth: self.f64_or("sim.barrier_growth", d.barrier_growth)?,
            barrier_dhat: self.f64_opt("sim.barrier_dhat")?,
            pin_stiffness: self.f64_opt("sim.pin_stiffness")?,
            pins,
            scripts,
            colliders,
            energy,
            cubature_count: self.usize_or("sim.cubature", d.cubature_count)?,
            cubature_seed: self.u64_or("sim.cubature_seed", d.cubature_seed)?,
            steps: self.usize_or("sim.steps", d.steps)?,
        };
        config.validate().map_err(|e| self.invalid(e.to_string()))?;
        Ok(config)
    }

    fn parse_export(&self) -> Result<ExportConfig, SceneError> {
        let formats = match self.take("export.formats") {
            None => vec![ExportFormat::Points],
            Some(entry) => {
                let mut formats = Vec::new();
                for token in entry.value.split_whitespace() {
                    let f = match token {
                        "points" => ExportFormat::Points,
                        "mesh" => ExportFormat::Mesh,
                        "splats" => ExportFormat::Splats,
                        other => {
                            return Err(
                                self.err(entry.line, format!("unknown export format {other:?}"))
                            )
                        }
                    };
                    if formats.contains(&f) {
                        return Err(self.err(entry.line, format!("duplicate format {token:?}")));
                    }
                    formats.push(f);
                }
                formats
            }
        };
        let stride = self.usize_or("export.stride", 1)?;
        if stride == 0 {
            return Err(self.invalid("export.stride must be at least 1"));
        }
        let dir = self.take("export.dir").map(|e| self.base_dir.join(&e.value));
        let mesh_path = self.path_opt("export.mesh_path")?;
        let splats_path = self.path_opt("export.splats_path")?;
        if formats.contains(&ExportFormat::Mesh) && mesh_path.is_none() {
            return Err(self.invalid("export format `mesh` requires export.mesh_path"));
        }
        if formats.contains(&ExportFormat::Splats) && splats_path.is_none() {
            return Err(self.invalid("export format `splats` requires export.splats_path"));
        }
        Ok(ExportConfig { formats, stride, dir, mesh_path, splats_path })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<SceneConfig, SceneError> {
        SceneConfig::parse_str(text, Path::new("."), "test-scene")
    }

    const MINIMAL: &str = "geometry.kind = sphere\ngeometry.radius = 1\n";

    #[test]
    fn minimal_scene_fills_defaults() {
        let scene = parse(MINIMAL).unwrap();
        assert_eq!(scene.train.n_handles, 10);
        assert_eq!(scene.train.steps, 10_000);
        assert_eq!(scene.sim.cubature_count, 2000);
        assert_eq!(scene.sim.steps, 70);
        assert!((scene.sim.timestep - 0.01).abs() < 1e-15);
        assert_eq!(scene.materials.len(), 1);
        assert_eq!(scene.export.formats, vec![ExportFormat::Points]);
    }

    #[test]
    fn misspelled_key_is_an_error_naming_it() {
        let text = format!("{MINIMAL}train.handels = 4\n");
        match parse(&text) {
            Err(SceneError::Parse { message, .. }) => {
                assert!(message.contains("train.handels"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn negative_timestep_is_a_range_error() {
        let text = format!("{MINIMAL}sim.timestep = -0.01\n");
        match parse(&text) {
            Err(SceneError::Invalid { message, .. }) => {
                assert!(message.contains("timestep"), "{message}");
            }
            other => panic!("expected range error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_rejected() {
        let text = format!("{MINIMAL}train.seed = 1\ntrain.seed = 2\n");
        assert!(matches!(parse(&text), Err(SceneError::Parse { .. })));
    }

    #[test]
    fn material_gap_rejected() {
        let text = format!(
            "{MINIMAL}material.0.region = whole\nmaterial.2.region = whole\n"
        );
        assert!(parse(&text).is_err());
    }

    #[test]
    fn missing_referenced_file_rejected() {
        let text = "geometry.kind = mesh\ngeometry.path = does_not_exist.obj\n";
        assert!(matches!(parse(text), Err(SceneError::Parse { .. })));
    }

    #[test]
    fn full_scene_roundtrip() {
        let text = r#"
# A bar pinned at one end with a scripted pull at the other.
geometry.kind = beam
geometry.origin = 0 0 0
geometry.size = 2 0.5 0.5

material.0.region = whole
material.0.density = 1000
material.0.youngs = 5e6
material.0.poisson = 0.45
material.1.region = sphere
material.1.center = 1 0.25 0.25
material.1.radius = 0.2
material.1.density = 500
material.1.youngs = 1e5
material.1.poisson = 0.3

train.handles = 4
train.depth = 6
train.width = 64
train.steps = 500
train.sigma = 0.1
train.seed = 7

sim.timestep = 0.005
sim.gravity = 0 0 -9.8
sim.energy = stable_neohookean
sim.cubature = 800
sim.steps = 50

pins.0.region = box
pins.0.min = -0.1 0 0
pins.0.max = 0.1 0.5 0.5
pins.0.stiffness = 1e6

script.0.region = box
script.0.min = 1.9 0 0
script.0.max = 2.1 0.5 0.5
script.0.center = 2 0.25 0.25
script.0.key.0 = 0 0 0 0 0 0 0
script.0.key.1 = 0.5 0.4 0 0 0 0 0

colliders.0.kind = ground
colliders.0.height = -1

export.formats = points
export.stride = 10
"#;
        let scene = parse(text).unwrap();
        assert_eq!(scene.materials.len(), 2);
        assert_eq!(scene.sim.pins.len(), 1);
        assert_eq!(scene.sim.scripts.len(), 1);
        assert_eq!(scene.sim.scripts[0].keyframes.len(), 2);
        assert_eq!(scene.sim.colliders.len(), 1);
        let serialized = scene.to_scene_text();
        let reparsed = parse(&serialized).unwrap();
        assert_eq!(scene, reparsed);
    }

    #[test]
    fn roundtrip_of_defaults() {
        let scene = parse(MINIMAL).unwrap();
        let reparsed = parse(&scene.to_scene_text()).unwrap();
        assert_eq!(scene, reparsed);
    }

    #[test]
    fn file_backed_geometry_kinds_resolve_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("shape.obj"), "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
            .unwrap();
        std::fs::write(dir.path().join("cloud.xyz"), "0 0 0\n1 1 1\n").unwrap();
        let grid = crate::formats::ScalarGrid {
            nx: 2,
            ny: 2,
            nz: 2,
            origin: nalgebra::Vector3::zeros(),
            spacing: nalgebra::Vector3::repeat(1.0),
            values: vec![1.0; 8],
        };
        crate::formats::write_svol(&dir.path().join("density.svol"), &grid).unwrap();
        for (text, expect_thresh) in [
            ("geometry.kind = mesh\ngeometry.path = shape.obj\n", None),
            ("geometry.kind = points\ngeometry.path = cloud.xyz\n", None),
            (
                "geometry.kind = grid\ngeometry.path = density.svol\ngeometry.threshold = 0.5\n",
                Some(0.5),
            ),
        ] {
            let scene = SceneConfig::parse_str(text, dir.path(), "geo-test").unwrap();
            match (&scene.geometry, expect_thresh) {
                (SourceSpec::MeshFile(p), None) | (SourceSpec::PointCloudFile(p), None) => {
                    assert!(p.is_absolute() || p.starts_with(dir.path()));
                    assert!(p.exists());
                }
                (SourceSpec::GridFile { path, threshold }, Some(t)) => {
                    assert!(path.exists());
                    assert_eq!(*threshold, t);
                }
                other => panic!("unexpected geometry {other:?}"),
            }
        }
    }

    #[test]
    fn keyframes_must_increase() {
        let text = format!(
            "{MINIMAL}script.0.region = whole\nscript.0.center = 0 0 0\n\
             script.0.key.0 = 1 0 0 0 0 0 0\nscript.0.key.1 = 0.5 0 0 0 0 0 0\n"
        );
        assert!(parse(&text).is_err());
    }

    #[test]
    fn mesh_export_requires_mesh_path() {
        let text = format!("{MINIMAL}export.formats = mesh\n");
        assert!(parse(&text).is_err());
    }
}
