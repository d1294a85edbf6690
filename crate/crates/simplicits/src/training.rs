//! Fits a skinning-weight field to an occupancy function.
//!
//! Each step draws a fresh batch of random handle transforms and a fresh set
//! of Monte-Carlo cubature points, then descends
//!
//! ```text
//! L = lambda_elastic * L_elastic / (V * mean_mu) + lambda_ortho * L_ortho
//! ```
//!
//! where `L_elastic` integrates the scheduled energy density of the blended
//! deformation and `L_ortho` pushes the volume-normalized Gram matrix of the
//! weights toward identity. Deformation gradients inside the loss use the
//! same central finite differences of the weight field as the simulator, so
//! the analytic parameter gradient is exact for the loss actually evaluated.
//! The elastic term is divided by volume and mean shear modulus to make it
//! unit-free across materials quoted in pascals; the default
//! `lambda_elastic` then keeps it a smoothness preference that cannot
//! out-muscle orthonormality (an even balance stalls with shrunken weights).

use nalgebra::{Matrix3, Vector3};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::elastic::{
    default_fd_step, psi_gradient, psi_linear, psi_neohookean, EnergyKind, HandleTransforms,
};
use crate::linalg::DenseMatrix;
use crate::mlp::{adam_step, AdamState, MlpError, SkinningField};
use crate::occupancy::{
    sample_interior_with_volume, OccupancyError, OccupancyField, SamplePoint,
};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Occupancy(#[from] OccupancyError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error("divergent sample: non-finite loss")]
    DivergentSample,
    #[error("training diverged: {0} consecutive non-finite steps ending at step {1}")]
    Diverged(usize, usize),
    #[error("report io: {0}")]
    Io(#[from] std::io::Error),
}

/// Energy used inside the training loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainingEnergy {
    /// `(1 - alpha) psi_linear + alpha psi_neohookean`, alpha ramping 0 -> 1
    /// over the run.
    Scheduled,
    Fixed(EnergyKind),
}

impl TrainingEnergy {
    fn value(&self, alpha: f64, f: &Matrix3<f64>, lambda: f64, mu: f64) -> f64 {
        match self {
            TrainingEnergy::Scheduled => {
                (1.0 - alpha) * psi_linear(f, lambda, mu)
                    + alpha * psi_neohookean(f, lambda, mu)
            }
            TrainingEnergy::Fixed(kind) => crate::elastic::psi(*kind, f, lambda, mu),
        }
    }

    fn gradient(&self, alpha: f64, f: &Matrix3<f64>, lambda: f64, mu: f64) -> Matrix3<f64> {
        match self {
            TrainingEnergy::Scheduled => {
                (1.0 - alpha) * psi_gradient(EnergyKind::Linear, f, lambda, mu)
                    + alpha * psi_gradient(EnergyKind::Neohookean, f, lambda, mu)
            }
            TrainingEnergy::Fixed(kind) => psi_gradient(*kind, f, lambda, mu),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_handles: usize,
    pub depth: usize,
    pub width: usize,
    pub steps: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub batch_transforms: usize,
    pub cubature_per_step: usize,
    pub transform_sigma: f64,
    pub lambda_elastic: f64,
    pub lambda_ortho: f64,
    pub seed: u64,
    pub energy: TrainingEnergy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_handles: 10,
            depth: 9,
            width: 64,
            steps: 10_000,
            lr_start: 1e-3,
            lr_end: 1e-4,
            batch_transforms: 10,
            cubature_per_step: 1000,
            transform_sigma: 1.0,
            lambda_elastic: 0.05,
            lambda_ortho: 1.0,
            seed: 0,
            energy: TrainingEnergy::Scheduled,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let fail = |msg: String| Err(TrainingError::Config(msg));
        if self.steps < 1 {
            return fail("steps must be at least 1".into());
        }
        if !(self.lr_end > 0.0) || self.lr_start < self.lr_end {
            return fail(format!(
                "learning rates must satisfy lr_start >= lr_end > 0, got {} -> {}",
                self.lr_start, self.lr_end
            ));
        }
        if self.batch_transforms < 1 {
            return fail("batch_transforms must be at least 1".into());
        }
        if !(self.transform_sigma > 0.0) {
            return fail(format!("transform sigma must be positive, got {}", self.transform_sigma));
        }
        if self.n_handles < 1 || self.depth < 1 || self.width < 1 {
            return fail("network shape values must be at least 1".into());
        }
        if self.cubature_per_step < self.n_handles {
            return fail(format!(
                "cubature_per_step ({}) must be at least n_handles ({})",
                self.cubature_per_step, self.n_handles
            ));
        }
        if self.lambda_elastic < 0.0 || self.lambda_ortho < 0.0 {
            return fail("loss weights must be non-negative".into());
        }
        Ok(())
    }

    /// Linearly interpolated learning rate for a step index.
    pub fn learning_rate(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            return self.lr_start;
        }
        let t = step as f64 / (self.steps - 1) as f64;
        self.lr_start + (self.lr_end - self.lr_start) * t
    }

    /// Energy-schedule parameter: 0 at the first step, (steps-1)/steps at
    /// the last.
    pub fn alpha(&self, step: usize) -> f64 {
        step as f64 / self.steps as f64
    }
}

/// Per-step scalars recorded during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub elastic_loss: f64,
    pub ortho_loss: f64,
    pub lr: f64,
    pub alpha: f64,
}

/// Training run summary: one record per step plus the final Gram matrix of
/// the weights under the volume-normalized occupancy inner product.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
    pub gram: DenseMatrix,
}

impl TrainReport {
    /// Entrywise max norm of `G - I`.
    pub fn gram_deviation(&self) -> f64 {
        let n = self.gram.rows();
        let mut dev = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((self.gram[(i, j)] - target).abs());
            }
        }
        dev
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<(), TrainingError> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "step,elastic_loss,ortho_loss,lr,alpha")?;
        for (i, r) in self.records.iter().enumerate() {
            writeln!(w, "{},{},{},{},{}", i, r.elastic_loss, r.ortho_loss, r.lr, r.alpha)?;
        }
        Ok(())
    }
}

/// Draws `batch` sets of `n` transforms with every entry of every 3x4 matrix
/// an independent zero-mean Gaussian of standard deviation `sigma`.
pub fn sample_transforms(
    n: usize,
    sigma: f64,
    batch: usize,
    rng: &mut impl RngCore,
) -> Vec<HandleTransforms> {
    assert!(sigma > 0.0);
    (0..batch)
        .map(|_| {
            let z: Vec<f64> = (0..12 * n)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(rng);
                    sigma * g
                })
                .collect();
            HandleTransforms::from_flat(z)
        })
        .collect()
}

/// Volume-normalized Gram matrix `G_ab = (1/N) sum_k phi_k w_a(X_k) w_b(X_k)`.
pub fn weight_gram(net: &SkinningField, points: &[SamplePoint]) -> DenseMatrix {
    let n = net.n_handles();
    let m = points.len();
    let positions: Vec<Vector3<f64>> = points.iter().map(|p| p.position).collect();
    let w = net.forward_batch(&positions);
    gram_from_rows(&w, points, n, m)
}

fn gram_from_rows(w: &DenseMatrix, points: &[SamplePoint], n: usize, m: usize) -> DenseMatrix {
    let mut gram = DenseMatrix::zeros(n, n);
    for (k, p) in points.iter().enumerate() {
        let row = w.row(k);
        let scale = p.occupancy / m as f64;
        for a in 0..n {
            let wa = row[a] * scale;
            if wa == 0.0 {
                continue;
            }
            for b in 0..n {
                gram[(a, b)] += wa * row[b];
            }
        }
    }
    gram
}

fn gram_identity_deviation_sq(gram: &DenseMatrix) -> f64 {
    let n = gram.rows();
    let mut loss = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            let d = gram[(i, j)] - target;
            loss += d * d;
        }
    }
    loss
}

/// Squared deviation of the Gram matrix from identity.
pub fn ortho_loss(net: &SkinningField, points: &[SamplePoint]) -> f64 {
    assert!(
        points.len() >= net.n_handles(),
        "need at least as many points as handles for the Gram estimate"
    );
    gram_identity_deviation_sq(&weight_gram(net, points))
}

/// Mean elastic energy over the transform batch:
/// `(1/B) sum_b (V/N) sum_i phi_i psi(F_i(Z_b))`, with `F` from central
/// differences of the weight field.
pub fn elastic_loss(
    net: &SkinningField,
    points: &[SamplePoint],
    volume: f64,
    z_batch: &[HandleTransforms],
    alpha: f64,
    energy: &TrainingEnergy,
) -> Result<f64, TrainingError> {
    let m = points.len();
    assert!(m > 0 && !z_batch.is_empty());
    let h = default_fd_step(net);
    let queries = offset_queries(points, h);
    let wq = net.forward_batch(&queries);
    let mut total = 0.0;
    for z in z_batch {
        for (i, p) in points.iter().enumerate() {
            let f = fd_deformation_gradient(&wq, i, p, z, h, 0);
            total += p.occupancy * energy.value(alpha, &f, p.lambda, p.mu);
        }
    }
    let loss = total * volume / (m as f64 * z_batch.len() as f64);
    if !loss.is_finite() {
        return Err(TrainingError::DivergentSample);
    }
    Ok(loss)
}

/// Offset query points only (6 per cubature point), i-major then axis-major
/// with +/- adjacent.
fn offset_queries(points: &[SamplePoint], h: f64) -> Vec<Vector3<f64>> {
    let mut queries = Vec::with_capacity(points.len() * 6);
    for p in points {
        for k in 0..3 {
            let mut plus = p.position;
            let mut minus = p.position;
            plus[k] += h;
            minus[k] -= h;
            queries.push(plus);
            queries.push(minus);
        }
    }
    queries
}

#[inline]
fn offset_row(rows_before_offsets: usize, i: usize, k: usize, sign: usize) -> usize {
    rows_before_offsets + i * 6 + k * 2 + sign
}

/// F for point `i` from weight rows of the offset queries: column k is
/// `e_k + sum_j (w+_j (v0_j + h a_jk) - w-_j (v0_j - h a_jk)) / 2h` where
/// `v0_j = Z_j [X;1]` and `a_jk` is column k of the linear block.
fn fd_deformation_gradient(
    wq: &DenseMatrix,
    i: usize,
    p: &SamplePoint,
    z: &HandleTransforms,
    h: f64,
    rows_before_offsets: usize,
) -> Matrix3<f64> {
    let n = z.n_handles();
    let mut f = Matrix3::identity();
    for j in 0..n {
        let v0 = z.apply_homogeneous(j, &p.position);
        let a = z.linear_block(j);
        for k in 0..3 {
            let wp = wq.row(offset_row(rows_before_offsets, i, k, 0))[j];
            let wm = wq.row(offset_row(rows_before_offsets, i, k, 1))[j];
            let ak = a.column(k).into_owned();
            let col = (wp * (v0 + h * ak) - wm * (v0 - h * ak)) / (2.0 * h);
            for r in 0..3 {
                f[(r, k)] += col[r];
            }
        }
    }
    f
}

/// Losses plus the parameter gradient of the combined objective.
pub struct LossAndGrad {
    pub elastic_loss: f64,
    pub ortho_loss: f64,
    pub total_loss: f64,
    pub grad: Vec<f64>,
}

/// Evaluates the combined training loss and its exact parameter gradient for
/// fixed cubature points and transform batch.
pub fn loss_and_grad(
    net: &SkinningField,
    points: &[SamplePoint],
    volume: f64,
    z_batch: &[HandleTransforms],
    alpha: f64,
    config: &TrainConfig,
) -> Result<LossAndGrad, TrainingError> {
    let m = points.len();
    let n = net.n_handles();
    let batch = z_batch.len();
    assert!(m >= n && batch > 0);
    let h = default_fd_step(net);

    // Query layout: m centers, then 6m offsets.
    let mut queries: Vec<Vector3<f64>> = points.iter().map(|p| p.position).collect();
    queries.extend(offset_queries(points, h));
    let wq = net.forward_batch(&queries);
    let mut upstream = DenseMatrix::zeros(queries.len(), n);

    // Orthogonality term from the center rows.
    let gram = gram_from_rows(&wq, points, n, m);
    let ortho = gram_identity_deviation_sq(&gram);
    if config.lambda_ortho != 0.0 {
        for (k, p) in points.iter().enumerate() {
            let wrow: Vec<f64> = wq.row(k).to_vec();
            let coeff = 4.0 * config.lambda_ortho * p.occupancy / m as f64;
            let urow = upstream.row_mut(k);
            for a in 0..n {
                let mut s = 0.0;
                for b in 0..n {
                    let target = if a == b { 1.0 } else { 0.0 };
                    s += (gram[(a, b)] - target) * wrow[b];
                }
                urow[a] = coeff * s;
            }
        }
    }

    // Elastic term over the offset rows. The normalization folds in volume
    // and mean shear modulus so the 1:1 default weighting is unit-free.
    let mean_mu = points.iter().map(|p| p.mu).sum::<f64>() / m as f64;
    let elastic_norm = 1.0 / (volume * mean_mu).max(f64::MIN_POSITIVE);
    let point_weight = volume / (m as f64 * batch as f64);
    let mut elastic_raw = 0.0;
    for z in z_batch {
        for (i, p) in points.iter().enumerate() {
            let f = fd_deformation_gradient(&wq, i, p, z, h, m);
            elastic_raw +=
                point_weight * p.occupancy * config.energy.value(alpha, &f, p.lambda, p.mu);
            if config.lambda_elastic == 0.0 {
                continue;
            }
            let dpsi = config.energy.gradient(alpha, &f, p.lambda, p.mu);
            let coeff =
                config.lambda_elastic * elastic_norm * point_weight * p.occupancy / (2.0 * h);
            for j in 0..n {
                let v0 = z.apply_homogeneous(j, &p.position);
                let a = z.linear_block(j);
                for k in 0..3 {
                    let dcol = dpsi.column(k).into_owned();
                    let ak = a.column(k).into_owned();
                    let vplus = v0 + h * ak;
                    let vminus = v0 - h * ak;
                    upstream.row_mut(offset_row(m, i, k, 0))[j] += coeff * dcol.dot(&vplus);
                    upstream.row_mut(offset_row(m, i, k, 1))[j] -= coeff * dcol.dot(&vminus);
                }
            }
        }
    }

    let total = config.lambda_elastic * elastic_raw * elastic_norm + config.lambda_ortho * ortho;
    if !total.is_finite() {
        return Err(TrainingError::DivergentSample);
    }
    let grad = net.backward(&queries, &upstream)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(TrainingError::DivergentSample);
    }
    Ok(LossAndGrad { elastic_loss: elastic_raw, ortho_loss: ortho, total_loss: total, grad })
}

/// Incremental training driver; owns the network, optimizer, and RNG stream.
pub struct TrainSession<'a> {
    field: &'a OccupancyField,
    config: TrainConfig,
    net: SkinningField,
    adam: AdamState,
    rng: ChaCha8Rng,
    records: Vec<StepRecord>,
    consecutive_divergent: usize,
}

impl<'a> TrainSession<'a> {
    pub fn new(field: &'a OccupancyField, config: TrainConfig) -> Result<Self, TrainingError> {
        config.validate()?;
        let mut net =
            SkinningField::init(config.n_handles, config.depth, config.width, config.seed)?;
        let bbox = field.bbox();
        net.set_normalization(bbox.center(), 0.5 * bbox.diagonal());
        let adam = AdamState::new(net.params().len());
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { field, config, net, adam, rng, records: Vec::new(), consecutive_divergent: 0 })
    }

    pub fn net(&self) -> &SkinningField {
        &self.net
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    /// One optimization step: fresh cubature, fresh transforms, one Adam
    /// update. A divergent sample skips the update; more than five in a row
    /// aborts.
    pub fn train_step(&mut self, step_index: usize) -> Result<StepRecord, TrainingError> {
        assert!(step_index < self.config.steps);
        let point_seed = self.rng.next_u64();
        let transform_seed = self.rng.next_u64();
        let sample =
            sample_interior_with_volume(self.field, self.config.cubature_per_step, point_seed)?;
        let mut trng = ChaCha8Rng::seed_from_u64(transform_seed);
        let z_batch = sample_transforms(
            self.config.n_handles,
            self.config.transform_sigma,
            self.config.batch_transforms,
            &mut trng,
        );
        let alpha = self.config.alpha(step_index);
        let lr = self.config.learning_rate(step_index);
        match loss_and_grad(
            &self.net,
            &sample.points,
            sample.volume.volume,
            &z_batch,
            alpha,
            &self.config,
        ) {
            Ok(out) => {
                adam_step(&mut self.adam, self.net.params_mut(), &out.grad, lr)?;
                self.consecutive_divergent = 0;
                let record = StepRecord {
                    elastic_loss: out.elastic_loss,
                    ortho_loss: out.ortho_loss,
                    lr,
                    alpha,
                };
                self.records.push(record);
                Ok(record)
            }
            Err(TrainingError::DivergentSample) => {
                self.consecutive_divergent += 1;
                if self.consecutive_divergent > 5 {
                    return Err(TrainingError::Diverged(self.consecutive_divergent, step_index));
                }
                let record =
                    StepRecord { elastic_loss: f64::NAN, ortho_loss: f64::NAN, lr, alpha };
                self.records.push(record);
                Ok(record)
            }
            Err(other) => Err(other),
        }
    }

    /// Runs any remaining steps and estimates the final Gram matrix on a
    /// fresh 10^4-point sample.
    pub fn finish(mut self) -> Result<(SkinningField, TrainReport), TrainingError> {
        for step in self.records.len()..self.config.steps {
            self.train_step(step)?;
        }
        let gram_seed = self.rng.next_u64();
        let points = crate::occupancy::sample_interior(self.field, 10_000, gram_seed)?;
        let gram = weight_gram(&self.net, &points);
        Ok((self.net, TrainReport { records: self.records, gram }))
    }
}

/// Full training run per the config; deterministic for a fixed seed.
pub fn train(
    field: &OccupancyField,
    config: TrainConfig,
) -> Result<(SkinningField, TrainReport), TrainingError> {
    TrainSession::new(field, config)?.finish()
}


#[cfg(test)]
mod bench {
    use super::*;
    use crate::occupancy::{build_occupancy, SourceSpec};

    /// Diagnostic, not a check: prints the Gram trajectory while training
    /// the bar, for eyeballing loss-balance changes.
    #[test]
    #[ignore]
    fn bar_gram_trajectory() {
        let field = build_occupancy(&SourceSpec::Beam {
            origin: Vector3::zeros(),
            size: Vector3::new(2.0, 0.5, 0.5),
        })
        .unwrap();
        let config = TrainConfig {
            n_handles: 4,
            depth: 6,
            width: 64,
            steps: 3000,
            cubature_per_step: 500,
            transform_sigma: 0.1,
            seed: 4,
            ..TrainConfig::default()
        };
        let mut session = TrainSession::new(&field, config).unwrap();
        for step in 0..3000 {
            let rec = session.train_step(step).unwrap();
            if step % 500 == 0 || step == 2999 {
                let pts = crate::occupancy::sample_interior(&field, 4000, 999).unwrap();
                let gram = weight_gram(session.net(), &pts);
                let mut dev = 0.0f64;
                for i in 0..gram.rows() {
                    for j in 0..gram.cols() {
                        let t = if i == j { 1.0 } else { 0.0 };
                        dev = dev.max((gram[(i, j)] - t).abs());
                    }
                }
                println!(
                    "step {step}: ortho {:.4}, elastic {:.3e}, |G-I|inf {:.4}",
                    rec.ortho_loss, rec.elastic_loss, dev
                );
            }
        }
    }

    #[test]
    #[ignore]
    fn time_bar_train_step() {
        let field = build_occupancy(&SourceSpec::Beam {
            origin: Vector3::zeros(),
            size: Vector3::new(2.0, 0.5, 0.5),
        })
        .unwrap();
        let config = TrainConfig {
            n_handles: 4,
            depth: 6,
            width: 64,
            steps: 10_000,
            cubature_per_step: 500,
            transform_sigma: 0.1,
            ..TrainConfig::default()
        };
        let mut session = TrainSession::new(&field, config).unwrap();
        let t0 = std::time::Instant::now();
        for i in 0..50 {
            session.train_step(i).unwrap();
        }
        let dt = t0.elapsed().as_secs_f64() / 50.0;
        println!("per-step: {:.1} ms -> full run {:.1} min", dt * 1e3, dt * 10_000.0 / 60.0);
    }
}
