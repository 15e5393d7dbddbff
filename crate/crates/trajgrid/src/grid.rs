//! Baking the angle grid, last-point spacing statistics, and spatial
//! subsampling.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::dynamics::{simulate, Profile, SimConfig};
use crate::vec2::Vec2;
use crate::{Error, Result};

/// Why a simulation stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationCause {
    /// The position reached the configured radius.
    Radius,
    /// The projectile descended through the ground plane after rising.
    Ground,
    /// The step cap was hit.
    StepCap,
}

impl TerminationCause {
    pub fn as_u8(self) -> u8 {
        match self {
            TerminationCause::Radius => 0,
            TerminationCause::Ground => 1,
            TerminationCause::StepCap => 2,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(TerminationCause::Radius),
            1 => Ok(TerminationCause::Ground),
            2 => Ok(TerminationCause::StepCap),
            _ => Err(Error::BadFormat(format!("unknown termination cause {v}"))),
        }
    }
}

/// The ordered point list produced by one simulated launch.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Launch elevation angle in radians.
    pub initial_angle: f64,
    /// Position of this angle in the baked grid, `0..angular_density`.
    pub angle_index: u32,
    /// Recorded positions; `points[0]` is the origin.
    pub points: Vec<Vec2>,
    pub termination_cause: TerminationCause,
}

impl Trajectory {
    pub fn last_point(&self) -> Vec2 {
        *self.points.last().expect("trajectory is never empty")
    }
}

/// A full baked grid: one trajectory per angle plus spacing statistics.
#[derive(Debug, Clone)]
pub struct GridBundle {
    pub sim_config: SimConfig,
    pub profile: Profile,
    /// Ordered by `angle_index`, angles strictly increasing.
    pub trajectories: Vec<Trajectory>,
    /// Mean Euclidean distance between angle-adjacent final points, meters.
    pub spacing_mean: f64,
    /// Population variance of those distances, square meters.
    pub spacing_variance: f64,
    pub subsampled: bool,
}

/// The launch angle for grid slot `k`: `pi * k / (s - 1)`, endpoints
/// included. The ratio is formed first so the top slot lands on pi
/// exactly instead of one rounding step above it.
pub fn grid_angle(k: u32, angular_density: u32) -> f64 {
    PI * (f64::from(k) / f64::from(angular_density - 1))
}

/// Simulate every grid angle and compute the spacing statistics.
///
/// Baking is parallel across angles; trajectories are assembled in angle
/// order, so the result is deterministic regardless of scheduling.
pub fn bake_grid(cfg: &SimConfig, profile: &Profile) -> Result<GridBundle> {
    cfg.validate()?;
    profile.validate()?;
    let s = cfg.angular_density;
    let mut trajectories = (0..s)
        .into_par_iter()
        .map(|k| simulate(grid_angle(k, s), cfg, &profile.environment, &profile.projectile))
        .collect::<Result<Vec<_>>>()?;
    for (k, traj) in trajectories.iter_mut().enumerate() {
        traj.angle_index = k as u32;
        if traj.points.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "trajectory {k} has fewer than 2 points; radius or step cap too small"
            )));
        }
    }
    let mut grid = GridBundle {
        sim_config: cfg.clone(),
        profile: profile.clone(),
        trajectories,
        spacing_mean: 0.0,
        spacing_variance: 0.0,
        subsampled: false,
    };
    let (mean, variance) = last_point_spacing_stats(&grid)?;
    grid.spacing_mean = mean;
    grid.spacing_variance = variance;
    Ok(grid)
}

/// Mean and population variance of the Euclidean distances between final
/// points of angle-adjacent trajectories.
pub fn last_point_spacing_stats(grid: &GridBundle) -> Result<(f64, f64)> {
    let trajs = &grid.trajectories;
    if trajs.len() < 2 {
        return Err(Error::InvalidInput("spacing statistics need at least 2 trajectories".to_string()));
    }
    let gaps: Vec<f64> =
        trajs.windows(2).map(|w| w[0].last_point().distance(w[1].last_point())).collect();
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n;
    let variance = gaps.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / n;
    Ok((mean, variance))
}

/// Result of subsampling one trajectory.
#[derive(Debug, Clone)]
pub struct SubsampleOutcome {
    pub trajectory: Trajectory,
    /// Stride that was applied (1 = unchanged).
    pub stride: usize,
    /// True when even consecutive raw points exceed the bound, so the
    /// trajectory was returned unchanged.
    pub unsatisfiable: bool,
}

/// Keep every k-th point for the largest stride whose retained consecutive
/// pairs all stay within `max_spacing`; the first and final points are
/// always retained.
///
/// If even stride 1 (the raw point sequence) violates the bound the
/// trajectory is returned unchanged and flagged.
pub fn subsample_trajectory(traj: &Trajectory, max_spacing: f64) -> Result<SubsampleOutcome> {
    if !(max_spacing.is_finite() && max_spacing > 0.0) {
        return Err(Error::InvalidInput(format!("max_spacing must be > 0, got {max_spacing}")));
    }
    if traj.points.is_empty() {
        return Err(Error::InvalidInput("cannot subsample an empty trajectory".to_string()));
    }
    let stride_ok = |k: usize| {
        let pts = &traj.points;
        let mut prev = pts[0];
        let mut i = k;
        while i < pts.len() {
            if prev.distance(pts[i]) > max_spacing {
                return false;
            }
            prev = pts[i];
            i += k;
        }
        // The appended final point must satisfy the bound as well.
        let last = pts[pts.len() - 1];
        prev == last || prev.distance(last) <= max_spacing
    };

    if !stride_ok(1) {
        return Ok(SubsampleOutcome { trajectory: traj.clone(), stride: 1, unsatisfiable: true });
    }
    let mut stride = 1;
    while stride < traj.points.len() && stride_ok(stride + 1) {
        stride += 1;
    }

    let mut points: Vec<Vec2> = traj.points.iter().copied().step_by(stride).collect();
    let last = traj.points[traj.points.len() - 1];
    if *points.last().unwrap() != last {
        points.push(last);
    }
    Ok(SubsampleOutcome {
        trajectory: Trajectory { points, ..traj.clone() },
        stride,
        unsatisfiable: false,
    })
}

/// Summary of a whole-grid subsampling pass.
#[derive(Debug, Clone, Default)]
pub struct SubsampleSummary {
    /// Angle indices whose trajectories could not satisfy the bound.
    pub unsatisfiable: Vec<u32>,
    pub points_before: usize,
    pub points_after: usize,
}

/// Subsample every trajectory with `max_spacing = spacing_mean` and mark
/// the bundle; the input grid is left untouched.
pub fn subsample_grid(grid: &GridBundle) -> Result<(GridBundle, SubsampleSummary)> {
    if grid.subsampled {
        return Err(Error::InvalidInput("grid is already subsampled".to_string()));
    }
    let bound = grid.spacing_mean;
    let mut summary = SubsampleSummary::default();
    let outcomes = grid
        .trajectories
        .par_iter()
        .map(|t| subsample_trajectory(t, bound))
        .collect::<Result<Vec<_>>>()?;
    let mut trajectories = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        summary.points_before += grid.trajectories[outcome.trajectory.angle_index as usize].points.len();
        summary.points_after += outcome.trajectory.points.len();
        if outcome.unsatisfiable {
            summary.unsatisfiable.push(outcome.trajectory.angle_index);
        }
        trajectories.push(outcome.trajectory);
    }
    let subsampled = GridBundle { trajectories, subsampled: true, ..grid.clone() };
    Ok((subsampled, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Profile;
    use approx::assert_relative_eq;

    fn line_traj(spacings: &[f64]) -> Trajectory {
        let mut x = 0.0;
        let mut points = vec![Vec2::ZERO];
        for s in spacings {
            x += s;
            points.push(Vec2::new(x, 0.0));
        }
        Trajectory {
            initial_angle: 0.0,
            angle_index: 0,
            points,
            termination_cause: TerminationCause::Radius,
        }
    }

    #[test]
    fn grid_angles_include_both_endpoints() {
        assert_eq!(grid_angle(0, 3), 0.0);
        assert_eq!(grid_angle(1, 3), PI / 2.0);
        assert_eq!(grid_angle(2, 3), PI);
    }

    #[test]
    fn bake_produces_sorted_angles_and_radius_bounded_last_points() {
        let profile = Profile::vacuum();
        let cfg = SimConfig::new(100, 200.0, &profile.name);
        let grid = bake_grid(&cfg, &profile).unwrap();
        assert_eq!(grid.trajectories.len(), 100);
        for w in grid.trajectories.windows(2) {
            assert!(w[0].initial_angle < w[1].initial_angle);
        }
        let v0 = profile.projectile.muzzle_speed;
        for traj in &grid.trajectories {
            let r = traj.last_point().norm();
            assert!(
                (200.0..=200.0 + 1.01 * v0 * cfg.dt).contains(&r),
                "angle {} terminated at radius {r}",
                traj.initial_angle
            );
        }
    }

    #[test]
    fn vacuum_spacing_mean_matches_circular_arc_geometry() {
        let profile = Profile::vacuum();
        let cfg = SimConfig::new(500, 200.0, &profile.name);
        let grid = bake_grid(&cfg, &profile).unwrap();
        let expected = 200.0 * PI / 499.0;
        assert_relative_eq!(grid.spacing_mean, expected, max_relative = 0.05);
    }

    #[test]
    fn spacing_stats_hand_cases() {
        let mk = |last: Vec2| {
            let mut t = line_traj(&[1.0]);
            t.points.push(last);
            t
        };
        let mut grid = GridBundle {
            sim_config: SimConfig::new(2, 10.0, "vacuum"),
            profile: Profile::vacuum(),
            trajectories: vec![mk(Vec2::new(0.0, 0.0)), mk(Vec2::new(3.0, 4.0))],
            spacing_mean: 0.0,
            spacing_variance: 0.0,
            subsampled: false,
        };
        let (mean, var) = last_point_spacing_stats(&grid).unwrap();
        assert_eq!((mean, var), (5.0, 0.0));

        grid.trajectories =
            vec![mk(Vec2::new(0.0, 0.0)), mk(Vec2::new(1.0, 0.0)), mk(Vec2::new(2.0, 0.0))];
        let (mean, var) = last_point_spacing_stats(&grid).unwrap();
        assert_eq!((mean, var), (1.0, 0.0));

        grid.trajectories.truncate(1);
        assert!(last_point_spacing_stats(&grid).is_err());
    }

    #[test]
    fn subsample_stride_two_exactly_meets_bound() {
        let traj = line_traj(&[1.0; 10]);
        let out = subsample_trajectory(&traj, 2.0).unwrap();
        assert!(!out.unsatisfiable);
        assert_eq!(out.stride, 2);
        let xs: Vec<f64> = out.trajectory.points.iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
    }

    #[test]
    fn subsample_below_native_spacing_is_flagged_unsatisfiable() {
        let traj = line_traj(&[1.0; 10]);
        let out = subsample_trajectory(&traj, 0.5).unwrap();
        assert!(out.unsatisfiable);
        assert_eq!(out.trajectory.points, traj.points);
    }

    #[test]
    fn subsample_always_keeps_first_and_last_points() {
        let traj = line_traj(&[1.0; 7]);
        let out = subsample_trajectory(&traj, 3.0).unwrap();
        assert_eq!(out.stride, 3);
        let xs: Vec<f64> = out.trajectory.points.iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![0.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn subsampled_grid_respects_bound_everywhere() {
        let profile = Profile::vacuum();
        let cfg = SimConfig::new(120, 100.0, &profile.name);
        let grid = bake_grid(&cfg, &profile).unwrap();
        let (sub, summary) = subsample_grid(&grid).unwrap();
        assert!(sub.subsampled);
        assert!(summary.unsatisfiable.is_empty());
        assert!(summary.points_after < summary.points_before);
        for traj in &sub.trajectories {
            for w in traj.points.windows(2) {
                assert!(w[0].distance(w[1]) <= grid.spacing_mean + 1e-12);
            }
        }
        // Last points are preserved, so spacing statistics are unchanged.
        let (mean, _) = last_point_spacing_stats(&sub).unwrap();
        assert_eq!(mean, grid.spacing_mean);
        // Original bundle untouched.
        assert!(!grid.subsampled);
    }

    #[test]
    fn subsampling_twice_is_rejected_but_stride_reaches_fixpoint() {
        let profile = Profile::vacuum();
        let cfg = SimConfig::new(60, 80.0, &profile.name);
        let grid = bake_grid(&cfg, &profile).unwrap();
        let (sub, _) = subsample_grid(&grid).unwrap();
        assert!(subsample_grid(&sub).is_err());
        // Re-running per trajectory with the same bound is a no-op.
        for traj in &sub.trajectories {
            let again = subsample_trajectory(traj, grid.spacing_mean).unwrap();
            assert_eq!(again.stride, 1);
            assert_eq!(again.trajectory.points, traj.points);
        }
    }

    #[test]
    fn huge_bound_collapses_to_endpoints() {
        let traj = line_traj(&[1.0; 9]);
        let out = subsample_trajectory(&traj, 100.0).unwrap();
        assert_eq!(out.trajectory.points.len(), 2);
        assert_eq!(out.trajectory.points[0], Vec2::ZERO);
        assert_eq!(out.trajectory.points[1], Vec2::new(9.0, 0.0));
    }

    #[test]
    fn drag_grid_has_varying_point_counts() {
        let profile = Profile::plausible_rifle();
        let cfg = SimConfig::new(50, 150.0, &profile.name);
        let grid = bake_grid(&cfg, &profile).unwrap();
        let first = grid.trajectories[0].points.len();
        assert!(grid.trajectories.iter().any(|t| t.points.len() != first));
    }

    #[test]
    fn spacing_mean_dominates_variance_on_drag_grids() {
        let profile = Profile::plausible_rifle();
        for s in [200, 500] {
            let cfg = SimConfig::new(s, 200.0, &profile.name);
            let grid = bake_grid(&cfg, &profile).unwrap();
            assert!(
                grid.spacing_mean >= 1000.0 * grid.spacing_variance,
                "s={s}: mean {} vs variance {}",
                grid.spacing_mean,
                grid.spacing_variance
            );
        }
    }
}
