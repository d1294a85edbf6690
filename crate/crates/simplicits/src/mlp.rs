//! A small multilayer perceptron for skinning-weight fields.
//!
//! `W_theta : R^3 -> R^n` with ELU hidden activations and a linear output
//! layer, left unconstrained in sign. Everything is f64: the Newton solves
//! downstream want well-conditioned derivatives and the parameter counts are
//! tiny. Batched forward/backward are written as row-blocked matrix products
//! so the training loop stays usable on a CPU.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::DenseMatrix;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("invalid network shape: {0}")]
    InvalidShape(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("divergent training step: non-finite gradient")]
    DivergentStep,
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint magic (expected \"SWGT\")")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint file")]
    Truncated,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"SWGT";
const CHECKPOINT_VERSION: u32 = 1;

/// Rows processed per parallel work item in batched passes. Fixed so the
/// reduction order (and therefore every f64 bit) is independent of the
/// worker count.
const ROW_CHUNK: usize = 512;

/// `out[r][:] += sum_k a[r][k] * b[k][:]` for row-major `a` (rows x inner)
/// and `b` (inner x cols). Callers pre-initialize `out` (zeros or bias).
/// Rows are processed four at a time so each `b` row load is amortized.
fn matmul_rows_into(out: &mut [f64], a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize) {
    debug_assert_eq!(out.len(), rows * cols);
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(b.len(), inner * cols);
    let mut chunks = out.chunks_exact_mut(cols);
    let mut r = 0;
    while rows - r >= 4 {
        let o0 = chunks.next().unwrap();
        let o1 = chunks.next().unwrap();
        let o2 = chunks.next().unwrap();
        let o3 = chunks.next().unwrap();
        for k in 0..inner {
            let brow = &b[k * cols..k * cols + cols];
            let a0 = a[r * inner + k];
            let a1 = a[(r + 1) * inner + k];
            let a2 = a[(r + 2) * inner + k];
            let a3 = a[(r + 3) * inner + k];
            for o in 0..cols {
                let wv = brow[o];
                o0[o] += a0 * wv;
                o1[o] += a1 * wv;
                o2[o] += a2 * wv;
                o3[o] += a3 * wv;
            }
        }
        r += 4;
    }
    for orow in chunks {
        for k in 0..inner {
            let brow = &b[k * cols..k * cols + cols];
            let av = a[r * inner + k];
            for o in 0..cols {
                orow[o] += av * brow[o];
            }
        }
        r += 1;
    }
}

/// `dw[k][:] += sum_i x[i][k] * d[i][:]` (the weight-gradient outer-product
/// sum), rows of the batch blocked by four.
fn accumulate_weight_grad(
    dw: &mut [f64],
    x: &[f64],
    d: &[f64],
    rows: usize,
    fan_in: usize,
    fan_out: usize,
) {
    debug_assert_eq!(dw.len(), fan_in * fan_out);
    let mut i = 0;
    while rows - i >= 4 {
        for k in 0..fan_in {
            let x0 = x[i * fan_in + k];
            let x1 = x[(i + 1) * fan_in + k];
            let x2 = x[(i + 2) * fan_in + k];
            let x3 = x[(i + 3) * fan_in + k];
            let d0 = &d[i * fan_out..(i + 1) * fan_out];
            let d1 = &d[(i + 1) * fan_out..(i + 2) * fan_out];
            let d2 = &d[(i + 2) * fan_out..(i + 3) * fan_out];
            let d3 = &d[(i + 3) * fan_out..(i + 4) * fan_out];
            let dwrow = &mut dw[k * fan_out..(k + 1) * fan_out];
            for o in 0..fan_out {
                dwrow[o] += x0 * d0[o] + x1 * d1[o] + x2 * d2[o] + x3 * d3[o];
            }
        }
        i += 4;
    }
    while i < rows {
        for k in 0..fan_in {
            let xv = x[i * fan_in + k];
            if xv == 0.0 {
                continue;
            }
            let drow = &d[i * fan_out..(i + 1) * fan_out];
            let dwrow = &mut dw[k * fan_out..(k + 1) * fan_out];
            for o in 0..fan_out {
                dwrow[o] += xv * drow[o];
            }
        }
        i += 1;
    }
}

#[inline]
fn elu(u: f64) -> f64 {
    if u >= 0.0 {
        u
    } else {
        u.exp() - 1.0
    }
}

/// ELU derivative recovered from the post-activation value: for u < 0 the
/// activation is exp(u) - 1, so the derivative exp(u) is activation + 1.
#[inline]
fn elu_prime_from_activation(a: f64) -> f64 {
    if a >= 0.0 {
        1.0
    } else {
        a + 1.0
    }
}

/// Neural skinning-weight field `W_theta : R^3 -> R^n`.
///
/// Layer shapes: input 3 -> width, (depth - 1) hidden width -> width, output
/// width -> n_handles. Inputs are normalized to `(x - center) / scale`
/// before the first layer. Weights for each layer are stored input-major
/// (`w[in][out]`), followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinningField {
    n_handles: usize,
    depth: usize,
    width: usize,
    params: Vec<f64>,
    input_center: Vector3<f64>,
    input_scale: f64,
}

/// (input dim, output dim) of every linear layer.
fn layer_dims(n_handles: usize, depth: usize, width: usize) -> Vec<(usize, usize)> {
    let mut dims = Vec::with_capacity(depth + 1);
    dims.push((3, width));
    for _ in 1..depth {
        dims.push((width, width));
    }
    dims.push((width, n_handles));
    dims
}

pub fn param_count(n_handles: usize, depth: usize, width: usize) -> usize {
    layer_dims(n_handles, depth, width)
        .iter()
        .map(|(i, o)| i * o + o)
        .sum()
}

impl SkinningField {
    /// Fresh network with uniform(-sqrt(6/fan_in), sqrt(6/fan_in)) weights
    /// and zero biases, deterministic per seed.
    pub fn init(n_handles: usize, depth: usize, width: usize, seed: u64) -> Result<Self, MlpError> {
        if n_handles < 1 || depth < 1 || width < 1 {
            return Err(MlpError::InvalidShape(format!(
                "n_handles={n_handles}, depth={depth}, width={width} (all must be >= 1)"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count(n_handles, depth, width));
        for (fan_in, fan_out) in layer_dims(n_handles, depth, width) {
            let limit = (6.0 / fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-limit..limit));
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Ok(Self {
            n_handles,
            depth,
            width,
            params,
            input_center: Vector3::zeros(),
            input_scale: 1.0,
        })
    }

    /// Network that outputs the given constant weight vector everywhere.
    pub fn constant(n_handles: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), n_handles);
        let mut net = Self::init(n_handles, 1, 1, 0).expect("valid shape");
        net.params.iter_mut().for_each(|p| *p = 0.0);
        let bias_start = net.params.len() - n_handles;
        net.params[bias_start..].copy_from_slice(values);
        net
    }

    /// Network computing exact affine weights
    /// `w_j(x) = coeffs_j . (x - center) + offsets_j`.
    ///
    /// Built by biasing one hidden layer into the linear region of ELU, so
    /// the result is exact wherever `|x - center| / scale < 4` per axis.
    pub fn affine(
        coeffs: &[[f64; 3]],
        offsets: &[f64],
        center: Vector3<f64>,
        scale: f64,
    ) -> Self {
        assert_eq!(coeffs.len(), offsets.len());
        assert!(scale > 0.0);
        let n = coeffs.len();
        let mut net = Self::init(n, 1, 3, 0).expect("valid shape");
        net.params.iter_mut().for_each(|p| *p = 0.0);
        net.input_center = center;
        net.input_scale = scale;
        const SHIFT: f64 = 4.0;
        let dims = layer_dims(n, 1, 3);
        // Hidden layer: identity weights, large positive bias.
        let (in0, out0) = dims[0];
        for k in 0..in0 {
            net.params[k * out0 + k] = 1.0;
        }
        for o in 0..out0 {
            net.params[in0 * out0 + o] = SHIFT;
        }
        // Output layer: scaled coefficients, bias cancels the shift.
        let base = in0 * out0 + out0;
        let (in1, out1) = dims[1];
        for (j, row) in coeffs.iter().enumerate() {
            let mut shift_sum = 0.0;
            for k in 0..in1 {
                let a = row[k] * scale;
                net.params[base + k * out1 + j] = a;
                shift_sum += a * SHIFT;
            }
            net.params[base + in1 * out1 + j] = offsets[j] - shift_sum;
        }
        net
    }

    pub fn n_handles(&self) -> usize {
        self.n_handles
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn input_center(&self) -> Vector3<f64> {
        self.input_center
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    pub fn set_normalization(&mut self, center: Vector3<f64>, scale: f64) {
        assert!(scale > 0.0, "input scale must be positive");
        self.input_center = center;
        self.input_scale = scale;
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn dims(&self) -> Vec<(usize, usize)> {
        layer_dims(self.n_handles, self.depth, self.width)
    }

    /// Weight and bias slices of layer `l` within the flat parameter array.
    fn layer_offsets(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut out = Vec::new();
        let mut cursor = 0;
        for (fan_in, fan_out) in self.dims() {
            let w = cursor;
            let b = cursor + fan_in * fan_out;
            cursor = b + fan_out;
            out.push((w, b, fan_in, fan_out));
        }
        out
    }

    /// Evaluates the weight vector at one point.
    pub fn forward(&self, x: &Vector3<f64>) -> Vec<f64> {
        let u = (x - self.input_center) / self.input_scale;
        let mut cur = vec![u.x, u.y, u.z];
        let offsets = self.layer_offsets();
        let last = offsets.len() - 1;
        for (l, &(w, b, fan_in, fan_out)) in offsets.iter().enumerate() {
            let mut next = self.params[b..b + fan_out].to_vec();
            // Same accumulation order as the batched kernel, so single and
            // batched evaluation agree bit for bit.
            for (k, &xk) in cur.iter().enumerate() {
                let wrow = &self.params[w + k * fan_out..w + (k + 1) * fan_out];
                for (nv, &wv) in next.iter_mut().zip(wrow) {
                    *nv += xk * wv;
                }
            }
            debug_assert_eq!(fan_in, cur.len());
            if l != last {
                next.iter_mut().for_each(|v| *v = elu(*v));
            }
            cur = next;
        }
        cur
    }

    /// Row `i` of the result equals `forward(xs[i])`.
    pub fn forward_batch(&self, xs: &[Vector3<f64>]) -> DenseMatrix {
        let acts = self.forward_batch_activations(xs);
        acts.into_iter().next_back().unwrap_or_else(|| DenseMatrix::zeros(0, self.n_handles))
    }

    /// All layer activations (normalized input first, network output last).
    fn forward_batch_activations(&self, xs: &[Vector3<f64>]) -> Vec<DenseMatrix> {
        let m = xs.len();
        let mut a0 = DenseMatrix::zeros(m, 3);
        for (i, x) in xs.iter().enumerate() {
            let u = (x - self.input_center) / self.input_scale;
            let row = a0.row_mut(i);
            row[0] = u.x;
            row[1] = u.y;
            row[2] = u.z;
        }
        let offsets = self.layer_offsets();
        let last = offsets.len() - 1;
        let mut acts = Vec::with_capacity(offsets.len() + 1);
        acts.push(a0);
        for (l, &(w, b, fan_in, fan_out)) in offsets.iter().enumerate() {
            let prev = acts.last().unwrap();
            let weights = &self.params[w..w + fan_in * fan_out];
            let bias = &self.params[b..b + fan_out];
            let mut next = DenseMatrix::zeros(m, fan_out);
            next.data_mut()
                .par_chunks_mut(ROW_CHUNK * fan_out)
                .zip(prev.data().par_chunks(ROW_CHUNK * fan_in))
                .for_each(|(out_chunk, in_chunk)| {
                    let rows = out_chunk.len() / fan_out;
                    for orow in out_chunk.chunks_exact_mut(fan_out) {
                        orow.copy_from_slice(bias);
                    }
                    matmul_rows_into(out_chunk, in_chunk, weights, rows, fan_in, fan_out);
                    if l != last {
                        out_chunk.iter_mut().for_each(|v| *v = elu(*v));
                    }
                });
            acts.push(next);
        }
        acts
    }

    /// Gradient of `sum_i upstream_i . forward(xs[i])` with respect to the
    /// flat parameter vector.
    pub fn backward(
        &self,
        xs: &[Vector3<f64>],
        upstream: &DenseMatrix,
    ) -> Result<Vec<f64>, MlpError> {
        if upstream.rows() != xs.len() || upstream.cols() != self.n_handles {
            return Err(MlpError::ShapeMismatch(format!(
                "upstream is {}x{}, expected {}x{}",
                upstream.rows(),
                upstream.cols(),
                xs.len(),
                self.n_handles
            )));
        }
        let acts = self.forward_batch_activations(xs);
        let offsets = self.layer_offsets();
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = upstream.clone();
        for (l, &(w, b, fan_in, fan_out)) in offsets.iter().enumerate().rev() {
            let input = &acts[l];
            let m = input.rows();
            // Per-chunk weight/bias gradients, combined in fixed chunk order.
            let chunk_grads: Vec<(Vec<f64>, Vec<f64>)> = delta
                .data()
                .par_chunks(ROW_CHUNK * fan_out)
                .zip(input.data().par_chunks(ROW_CHUNK * fan_in))
                .map(|(dchunk, xchunk)| {
                    let rows = dchunk.len() / fan_out;
                    let mut dw = vec![0.0; fan_in * fan_out];
                    let mut db = vec![0.0; fan_out];
                    accumulate_weight_grad(&mut dw, xchunk, dchunk, rows, fan_in, fan_out);
                    for drow in dchunk.chunks_exact(fan_out) {
                        for (bv, &dv) in db.iter_mut().zip(drow) {
                            *bv += dv;
                        }
                    }
                    (dw, db)
                })
                .collect();
            for (dw, db) in chunk_grads {
                for (g, v) in grad[w..w + fan_in * fan_out].iter_mut().zip(dw) {
                    *g += v;
                }
                for (g, v) in grad[b..b + fan_out].iter_mut().zip(db) {
                    *g += v;
                }
            }
            if l == 0 {
                break;
            }
            // Propagate to the previous layer: dX = delta W^T, then apply the
            // activation derivative of layer l-1 recovered from its output.
            let weights = &self.params[w..w + fan_in * fan_out];
            let mut wt = vec![0.0; fan_in * fan_out];
            for k in 0..fan_in {
                for o in 0..fan_out {
                    wt[o * fan_in + k] = weights[k * fan_out + o];
                }
            }
            let mut prev_delta = DenseMatrix::zeros(m, fan_in);
            prev_delta
                .data_mut()
                .par_chunks_mut(ROW_CHUNK * fan_in)
                .zip(delta.data().par_chunks(ROW_CHUNK * fan_out))
                .zip(input.data().par_chunks(ROW_CHUNK * fan_in))
                .for_each(|((pchunk, dchunk), achunk)| {
                    let rows = pchunk.len() / fan_in;
                    matmul_rows_into(pchunk, dchunk, &wt, rows, fan_out, fan_in);
                    for (pv, &av) in pchunk.iter_mut().zip(achunk.iter()) {
                        *pv *= elu_prime_from_activation(av);
                    }
                });
            delta = prev_delta;
        }
        Ok(grad)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), MlpError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_handles as u32).to_le_bytes())?;
        w.write_all(&(self.depth as u32).to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        for i in 0..3 {
            w.write_all(&self.input_center[i].to_le_bytes())?;
        }
        w.write_all(&self.input_scale.to_le_bytes())?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, MlpError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(MlpError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(MlpError::UnsupportedVersion(version));
        }
        let n_handles = read_u32(&mut r)? as usize;
        let depth = read_u32(&mut r)? as usize;
        let width = read_u32(&mut r)? as usize;
        let input_center = Vector3::new(read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?);
        let input_scale = read_f64(&mut r)?;
        let count = read_u64(&mut r)? as usize;
        if n_handles < 1 || depth < 1 || width < 1 || input_scale <= 0.0 {
            return Err(MlpError::InvalidShape(format!(
                "n_handles={n_handles}, depth={depth}, width={width}, scale={input_scale}"
            )));
        }
        if count != param_count(n_handles, depth, width) {
            return Err(MlpError::InvalidShape(format!(
                "parameter count {count} does not match layer shapes"
            )));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            params.push(read_f64(&mut r)?);
        }
        Ok(Self { n_handles, depth, width, params, input_center, input_scale })
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), MlpError> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(MlpError::Truncated);
        }
        filled += n;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, MlpError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, MlpError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64, MlpError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Adam optimizer state; moment arrays match the parameter layout.
#[derive(Debug, Clone)]
pub struct AdamState {
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(param_len: usize) -> Self {
        Self {
            t: 0,
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update with bias correction, in place.
pub fn adam_step(
    state: &mut AdamState,
    theta: &mut [f64],
    grad: &[f64],
    lr: f64,
) -> Result<(), MlpError> {
    if theta.len() != grad.len() || theta.len() != state.m.len() {
        return Err(MlpError::ShapeMismatch(format!(
            "theta {} / grad {} / moments {}",
            theta.len(),
            grad.len(),
            state.m.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(MlpError::DivergentStep);
    }
    state.t += 1;
    let b1 = state.beta1;
    let b2 = state.beta2;
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..theta.len() {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * grad[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}
