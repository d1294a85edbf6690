//! Monte-Carlo interior sampling and volume estimation by rejection.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{OccupancyField, OccupancyError};

/// Hard acceptance threshold tau for rejection sampling. Integrals still
/// weight by the full occupancy value, so blurry boundaries contribute
/// fractionally; tau only keeps "inside" well-defined for the sampler.
pub const ACCEPT_THRESHOLD: f64 = 0.5;

/// Proposal budget per requested point before giving up.
const PROPOSALS_PER_POINT: u64 = 1_000_000;

/// One interior cubature point with cached material parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub position: Vector3<f64>,
    pub occupancy: f64,
    pub density: f64,
    pub lambda: f64,
    pub mu: f64,
}

/// Monte-Carlo volume estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeEstimate {
    pub volume: f64,
    pub std_error: f64,
    pub accepted: u64,
    pub proposed: u64,
}

/// Points drawn uniformly from the occupied interior plus the volume
/// estimate implied by the same rejection pass.
#[derive(Debug, Clone)]
pub struct InteriorSample {
    pub points: Vec<SamplePoint>,
    pub volume: VolumeEstimate,
}

/// Draws exactly `count` points uniformly from `{x : occupancy(x) > tau}`.
pub fn sample_interior(
    field: &OccupancyField,
    count: usize,
    rng_seed: u64,
) -> Result<Vec<SamplePoint>, OccupancyError> {
    Ok(sample_interior_with_volume(field, count, rng_seed)?.points)
}

/// Same as [`sample_interior`], also reporting the acceptance-ratio volume
/// estimate from the identical proposal stream.
pub fn sample_interior_with_volume(
    field: &OccupancyField,
    count: usize,
    rng_seed: u64,
) -> Result<InteriorSample, OccupancyError> {
    assert!(count >= 1, "sample count must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let bbox = field.bbox();
    let extent = bbox.extent();
    let budget = PROPOSALS_PER_POINT.saturating_mul(count as u64);
    let mut points = Vec::with_capacity(count);
    let mut proposed: u64 = 0;
    while points.len() < count {
        if proposed >= budget {
            return Err(OccupancyError::SparseOccupancy { proposals: proposed });
        }
        let x = Vector3::new(
            bbox.min.x + rng.random::<f64>() * extent.x,
            bbox.min.y + rng.random::<f64>() * extent.y,
            bbox.min.z + rng.random::<f64>() * extent.z,
        );
        proposed += 1;
        let occupancy = field.eval(&x);
        if occupancy > ACCEPT_THRESHOLD {
            let (density, lambda, mu) = field.eval_material(&x)?;
            points.push(SamplePoint { position: x, occupancy, density, lambda, mu });
        }
    }
    let accepted = points.len() as u64;
    let volume = binomial_volume(bbox.volume(), accepted, proposed);
    Ok(InteriorSample { points, volume })
}

/// Estimates occupied volume from `n_samples` uniform proposals.
pub fn estimate_volume(field: &OccupancyField, n_samples: u64, rng_seed: u64) -> VolumeEstimate {
    assert!(n_samples >= 100, "volume estimation needs at least 100 samples");
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let bbox = field.bbox();
    let extent = bbox.extent();
    let mut accepted: u64 = 0;
    for _ in 0..n_samples {
        let x = Vector3::new(
            bbox.min.x + rng.random::<f64>() * extent.x,
            bbox.min.y + rng.random::<f64>() * extent.y,
            bbox.min.z + rng.random::<f64>() * extent.z,
        );
        if field.eval(&x) > ACCEPT_THRESHOLD {
            accepted += 1;
        }
    }
    binomial_volume(bbox.volume(), accepted, n_samples)
}

fn binomial_volume(bbox_volume: f64, accepted: u64, proposed: u64) -> VolumeEstimate {
    let p = accepted as f64 / proposed as f64;
    VolumeEstimate {
        volume: bbox_volume * p,
        std_error: bbox_volume * (p * (1.0 - p) / proposed as f64).sqrt(),
        accepted,
        proposed,
    }
}
