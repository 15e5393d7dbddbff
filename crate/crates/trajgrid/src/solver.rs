//! The classical inverse solver: nearest baked grid point (with a segment
//! refinement) looked up through a 2D k-d tree, plus a linear-scan oracle.
//!
//! Ties are broken totally and deterministically -- smallest squared
//! distance, then smallest `(angle_index, point_index)` -- so the tree and
//! the oracle agree exactly, bit for bit.

use crate::dynamics::map_3d_to_2d;
use crate::grid::GridBundle;
use crate::vec2::Vec2;
use crate::{Error, Result};

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone, Copy)]
struct Entry {
    pos: Vec2,
    angle_index: u32,
    point_index: u32,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: u8, value: f64, left: usize, right: usize },
}

/// A k-d tree over every retained point of a grid.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    entries: Vec<Entry>,
    nodes: Vec<Node>,
    root: usize,
}

/// A nearest-point query answer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestPoint {
    pub angle_index: u32,
    pub point_index: u32,
    pub distance: f64,
}

/// The launch parameters recovered for a target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialConditions {
    /// Elevation angle of the winning trajectory, radians.
    pub elevation_angle: f64,
    /// Rotation of the firing plane recovered from the 3D target, radians.
    pub azimuth: f64,
    /// Launch speed (the profile's muzzle speed), m/s.
    pub speed: f64,
    /// In-plane distance between the target and the winning trajectory,
    /// meters.
    pub miss_distance: f64,
}

/// A solve outcome: the conditions plus whether the miss is inside the
/// acceptance threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Solution {
    pub conditions: InitialConditions,
    pub hit: bool,
    pub nearest: NearestPoint,
}

/// Candidate ordering shared by the tree search and the oracle.
fn better(d2: f64, ai: u32, pi: u32, best: &(f64, u32, u32)) -> bool {
    d2 < best.0 || (d2 == best.0 && (ai, pi) < (best.1, best.2))
}

/// Build the index over all points of `grid` (raw or subsampled).
///
/// Construction is deterministic: splits use a total order on coordinate,
/// then provenance.
pub fn build_index(grid: &GridBundle) -> Result<SpatialIndex> {
    let mut entries = Vec::new();
    for traj in &grid.trajectories {
        for (i, &p) in traj.points.iter().enumerate() {
            entries.push(Entry { pos: p, angle_index: traj.angle_index, point_index: i as u32 });
        }
    }
    if entries.is_empty() {
        return Err(Error::InvalidInput("cannot index an empty grid".to_string()));
    }
    let mut index = SpatialIndex { entries, nodes: Vec::new(), root: 0 };
    let n = index.entries.len();
    index.root = index.build_node(0, n);
    Ok(index)
}

impl SpatialIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return self.nodes.len() - 1;
        }
        let slice = &mut self.entries[start..end];
        let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
        for e in slice.iter() {
            min_x = min_x.min(e.pos.x);
            max_x = max_x.max(e.pos.x);
            min_y = min_y.min(e.pos.y);
            max_y = max_y.max(e.pos.y);
        }
        let axis: u8 = if max_x - min_x >= max_y - min_y { 0 } else { 1 };
        let coord = |e: &Entry| if axis == 0 { e.pos.x } else { e.pos.y };
        slice.sort_unstable_by(|a, b| {
            coord(a)
                .total_cmp(&coord(b))
                .then_with(|| (a.angle_index, a.point_index).cmp(&(b.angle_index, b.point_index)))
        });
        let mid = start + (end - start) / 2;
        let value = coord(&self.entries[mid]);
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        let id = self.nodes.len();
        self.nodes.push(Node::Split { axis, value, left, right });
        id
    }

    fn search(&self, node: usize, target: Vec2, best: &mut (f64, u32, u32)) {
        match &self.nodes[node] {
            Node::Leaf { start, end } => {
                for e in &self.entries[*start..*end] {
                    let d2 = (e.pos - target).norm_sq();
                    if better(d2, e.angle_index, e.point_index, best) {
                        *best = (d2, e.angle_index, e.point_index);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let t = if *axis == 0 { target.x } else { target.y };
                let (near, far) = if t < *value { (*left, *right) } else { (*right, *left) };
                self.search(near, target, best);
                // The far side may hold an equal-distance point with a lower
                // provenance, so prune only on a strict distance excess.
                let gap = t - *value;
                if gap * gap <= best.0 {
                    self.search(far, target, best);
                }
            }
        }
    }
}

/// Nearest retained grid point to `target` via the index.
pub fn nearest_segment(index: &SpatialIndex, target: Vec2) -> Result<NearestPoint> {
    if !target.is_finite() {
        return Err(Error::InvalidInput("target must be finite".to_string()));
    }
    let mut best = (f64::INFINITY, u32::MAX, u32::MAX);
    index.search(index.root, target, &mut best);
    Ok(NearestPoint { angle_index: best.1, point_index: best.2, distance: best.0.sqrt() })
}

/// Linear-scan oracle with the identical tie-break.
pub fn nearest_segment_bruteforce(grid: &GridBundle, target: Vec2) -> Result<NearestPoint> {
    if !target.is_finite() {
        return Err(Error::InvalidInput("target must be finite".to_string()));
    }
    let mut best = (f64::INFINITY, u32::MAX, u32::MAX);
    let mut found = false;
    for traj in &grid.trajectories {
        for (i, &p) in traj.points.iter().enumerate() {
            let d2 = (p - target).norm_sq();
            if better(d2, traj.angle_index, i as u32, &best) {
                best = (d2, traj.angle_index, i as u32);
                found = true;
            }
        }
    }
    if !found {
        return Err(Error::InvalidInput("cannot scan an empty grid".to_string()));
    }
    Ok(NearestPoint { angle_index: best.1, point_index: best.2, distance: best.0.sqrt() })
}

/// Recover launch conditions for a 3D target.
///
/// The target is collapsed onto its firing plane, matched against the
/// nearest baked point, and the miss distance is tightened by projecting
/// onto the two polyline segments incident to the winning point. Succeeds
/// (`hit`) when the miss is within `threshold`, which defaults to the
/// grid's mean last-point spacing. Targets farther than 1.5x the baked
/// radius are rejected as out of envelope, distinct from an in-envelope
/// miss.
pub fn solve_initial_conditions(
    index: &SpatialIndex,
    grid: &GridBundle,
    target3: [f64; 3],
    threshold: Option<f64>,
) -> Result<Solution> {
    let (target2, azimuth) = map_3d_to_2d(target3)?;
    let limit = 1.5 * grid.sim_config.max_radius;
    let range = target2.norm();
    if range > limit {
        return Err(Error::OutOfEnvelope { range, limit });
    }
    let nearest = nearest_segment(index, target2)?;
    let traj = &grid.trajectories[nearest.angle_index as usize];
    let pi = nearest.point_index as usize;
    let mut miss = nearest.distance;
    if pi > 0 {
        miss = miss.min(target2.distance_to_segment(traj.points[pi - 1], traj.points[pi]));
    }
    if pi + 1 < traj.points.len() {
        miss = miss.min(target2.distance_to_segment(traj.points[pi], traj.points[pi + 1]));
    }
    let threshold = threshold.unwrap_or(grid.spacing_mean);
    Ok(Solution {
        conditions: InitialConditions {
            elevation_angle: traj.initial_angle,
            azimuth,
            speed: grid.profile.projectile.muzzle_speed,
            miss_distance: miss,
        },
        hit: miss <= threshold,
        nearest,
    })
}

/// Convenience for tests and the CLI: bake-time envelope targets.
pub fn uniform_disk_targets(count: usize, radius: f64, seed: u64) -> Vec<Vec2> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            // Rejection sampling keeps the distribution uniform on the disk.
            loop {
                let x = rng.gen_range(-radius..=radius);
                let y = rng.gen_range(-radius..=radius);
                let p = Vec2::new(x, y);
                if p.norm() <= radius {
                    break p;
                }
            }
        })
        .collect()
}
