//! Turning a subsampled grid into normalized training samples.
//!
//! Each retained trajectory point becomes one sample of six dimensionless
//! features -- coordinates over the maximum range, the range fraction, the
//! unit direction, and the point angle over pi -- labeled with the owning
//! trajectory's launch angle over pi.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::grid::GridBundle;
use crate::vec2::Vec2;
use crate::{Error, Result};

/// One training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    /// `(x/R, y/R, |p|/R, x/|p|, y/|p|, atan2(y, x)/pi)`.
    pub features: [f64; 6],
    /// Launch elevation angle over pi, in `[0, 1]`.
    pub label: f64,
    /// Which trajectory the point came from.
    pub angle_index: u32,
    /// Position of the point within its trajectory (provenance only; not
    /// serialized).
    pub point_index: u32,
}

/// An ordered collection of samples plus its provenance.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<DatasetSample>,
    /// The normalization range in meters.
    pub r_max: f64,
    /// Angular density of the source grid.
    pub density: u32,
    /// FNV-1a digest of the source grid's serialized bytes; 0 when the
    /// dataset was loaded from a file rather than built from a grid.
    pub source_digest: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Reconstruct the 2D target point of a sample, in meters.
    pub fn target_point(&self, sample: &DatasetSample) -> Vec2 {
        Vec2::new(sample.features[0] * self.r_max, sample.features[1] * self.r_max)
    }
}

/// The six normalized features of a nonzero point.
pub fn features_for_point(p: Vec2, r_max: f64) -> Result<[f64; 6]> {
    if !p.is_finite() || !(r_max.is_finite() && r_max > 0.0) {
        return Err(Error::InvalidInput("point and r_max must be finite, r_max > 0".to_string()));
    }
    let norm = p.norm();
    if norm == 0.0 {
        return Err(Error::InvalidInput(
            "the origin has no direction features; skip zero-norm points".to_string(),
        ));
    }
    Ok([p.x / r_max, p.y / r_max, norm / r_max, p.x / norm, p.y / norm, p.y.atan2(p.x) / PI])
}

/// Normalize a launch angle to the `[0, 1]` label range.
pub fn label_for_angle(theta: f64) -> Result<f64> {
    if !theta.is_finite() || !(0.0..=PI).contains(&theta) {
        return Err(Error::InvalidInput(format!("angle must lie in [0, pi], got {theta}")));
    }
    Ok(theta / PI)
}

/// Build one sample per retained point of a subsampled grid.
///
/// The origin point of each trajectory is dropped (its direction features
/// are undefined), as is any point below the ground plane (the point-angle
/// feature encodes the upper half plane only; below-ground points occur
/// solely on launches that never rise, such as the horizontal endpoint
/// angles). Order is deterministic: by angle index, then point order.
pub fn build_dataset(grid: &GridBundle, r_max: f64) -> Result<Dataset> {
    if !grid.subsampled {
        return Err(Error::InvalidInput("build_dataset expects a subsampled grid".to_string()));
    }
    if grid.trajectories.is_empty() {
        return Err(Error::InvalidInput("empty grid".to_string()));
    }
    let mut samples = Vec::new();
    for traj in &grid.trajectories {
        let label = label_for_angle(traj.initial_angle)?;
        for (i, &p) in traj.points.iter().enumerate().skip(1) {
            if p.y < 0.0 || p.norm() == 0.0 {
                continue;
            }
            samples.push(DatasetSample {
                features: features_for_point(p, r_max)?,
                label,
                angle_index: traj.angle_index,
                point_index: i as u32,
            });
        }
    }
    Ok(Dataset { samples, r_max, density: grid.sim_config.angular_density, source_digest: 0 })
}

/// Deterministically permute the samples with a seeded Fisher-Yates pass.
pub fn shuffle(ds: &Dataset, seed: u64) -> Dataset {
    let mut out = ds.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    out.samples.shuffle(&mut rng);
    out
}
