//! Binary artifact formats and CSV exports.
//!
//! All binary formats are little-endian with a 4-byte magic and a u32
//! version:
//!
//! * grid (`TGRD`): density, profile block (6 x f64), dt, max_radius,
//!   subsampled flag, then per trajectory angle / termination / count /
//!   interleaved xy points.
//! * dataset (`TDST`): density, r_max, count, then per sample 7 x f32
//!   (six features and the label) plus the u32 angle index.
//! * model (`TMLP`): architecture block (dims, repeat, width rule, batch
//!   norm constants, training density, seed), then every tensor as a u64
//!   length plus f64 data, in layer order: gamma, beta, running mean,
//!   running variance, weight (row-major), bias.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use crate::dataset::{Dataset, DatasetSample};
use crate::dynamics::{Environment, Profile, ProjectileParams, SimConfig};
use crate::grid::{GridBundle, TerminationCause, Trajectory};
use crate::mlp::{EpochStats, MlpConfig, Network};
use crate::{Error, Result};

const GRID_MAGIC: &[u8; 4] = b"TGRD";
const DATASET_MAGIC: &[u8; 4] = b"TDST";
const MODEL_MAGIC: &[u8; 4] = b"TMLP";
const FORMAT_VERSION: u32 = 1;

fn check_magic<R: Read>(r: &mut R, expected: &[u8; 4]) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != expected {
        return Err(Error::BadFormat(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(expected)
        )));
    }
    let version = r.read_u32::<LE>()?;
    if version != FORMAT_VERSION {
        return Err(Error::BadFormat(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    Ok(())
}

/// FNV-1a over a byte slice; used to fingerprint a dataset's source grid.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

// ---------------------------------------------------------------- grid --

pub fn grid_to_bytes(grid: &GridBundle) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(GRID_MAGIC);
    out.write_u32::<LE>(FORMAT_VERSION).unwrap();
    out.write_u32::<LE>(grid.sim_config.angular_density).unwrap();
    let p = &grid.profile.projectile;
    let e = &grid.profile.environment;
    for v in [p.mass, p.drag_coeff, p.ref_area, p.muzzle_speed, e.gravity, e.air_density] {
        out.write_f64::<LE>(v).unwrap();
    }
    out.write_f64::<LE>(grid.sim_config.dt).unwrap();
    out.write_f64::<LE>(grid.sim_config.max_radius).unwrap();
    out.write_u8(grid.subsampled as u8).unwrap();
    for traj in &grid.trajectories {
        out.write_f64::<LE>(traj.initial_angle).unwrap();
        out.write_u8(traj.termination_cause.as_u8()).unwrap();
        out.write_u64::<LE>(traj.points.len() as u64).unwrap();
        for point in &traj.points {
            out.write_f64::<LE>(point.x).unwrap();
            out.write_f64::<LE>(point.y).unwrap();
        }
    }
    out
}

pub fn write_grid(path: &Path, grid: &GridBundle) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&grid_to_bytes(grid))?;
    Ok(())
}

/// Fingerprint used to tie datasets back to the grid that produced them.
pub fn grid_digest(grid: &GridBundle) -> u64 {
    fnv1a(&grid_to_bytes(grid))
}

pub fn read_grid(path: &Path) -> Result<GridBundle> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, GRID_MAGIC)?;
    let density = r.read_u32::<LE>()?;
    let mut profile_block = [0.0f64; 6];
    for v in profile_block.iter_mut() {
        *v = r.read_f64::<LE>()?;
    }
    let dt = r.read_f64::<LE>()?;
    let max_radius = r.read_f64::<LE>()?;
    let subsampled = r.read_u8()? != 0;

    let projectile = ProjectileParams {
        mass: profile_block[0],
        drag_coeff: profile_block[1],
        ref_area: profile_block[2],
        muzzle_speed: profile_block[3],
    };
    let environment = Environment { gravity: profile_block[4], air_density: profile_block[5] };
    let name = ["paper-verbatim", "plausible-rifle", "vacuum"]
        .iter()
        .find(|n| {
            let b = Profile::builtin(n).unwrap();
            b.projectile == projectile && b.environment == environment
        })
        .map_or("custom", |n| *n)
        .to_string();
    let profile = Profile { name: name.clone(), projectile, environment };

    let mut sim_config = SimConfig::new(density, max_radius, &name);
    sim_config.dt = dt;
    sim_config.validate()?;

    let mut trajectories = Vec::with_capacity(density as usize);
    for k in 0..density {
        let angle = r.read_f64::<LE>()?;
        let cause = TerminationCause::from_u8(r.read_u8()?)?;
        let count = r.read_u64::<LE>()? as usize;
        if count < 2 {
            return Err(Error::BadFormat(format!("trajectory {k} has {count} points")));
        }
        let mut points = Vec::with_capacity(count.min(1 << 22));
        for _ in 0..count {
            let x = r.read_f64::<LE>()?;
            let y = r.read_f64::<LE>()?;
            points.push(crate::vec2::Vec2::new(x, y));
        }
        trajectories.push(Trajectory {
            initial_angle: angle,
            angle_index: k,
            points,
            termination_cause: cause,
        });
    }
    let mut grid = GridBundle {
        sim_config,
        profile,
        trajectories,
        spacing_mean: 0.0,
        spacing_variance: 0.0,
        subsampled,
    };
    let (mean, variance) = crate::grid::last_point_spacing_stats(&grid)?;
    grid.spacing_mean = mean;
    grid.spacing_variance = variance;
    Ok(grid)
}

/// Lossless CSV export of every point: `angle_index,point_index,x,y`.
pub fn grid_to_csv<W: Write>(w: &mut W, grid: &GridBundle) -> Result<()> {
    writeln!(w, "angle_index,point_index,x,y")?;
    for traj in &grid.trajectories {
        for (i, p) in traj.points.iter().enumerate() {
            writeln!(w, "{},{},{},{}", traj.angle_index, i, p.x, p.y)?;
        }
    }
    Ok(())
}

// ------------------------------------------------------------- dataset --

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_u32::<LE>(FORMAT_VERSION)?;
    w.write_u32::<LE>(ds.density)?;
    w.write_f64::<LE>(ds.r_max)?;
    w.write_u64::<LE>(ds.samples.len() as u64)?;
    for s in &ds.samples {
        for &f in &s.features {
            w.write_f32::<LE>(f as f32)?;
        }
        w.write_f32::<LE>(s.label as f32)?;
        w.write_u32::<LE>(s.angle_index)?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, DATASET_MAGIC)?;
    let density = r.read_u32::<LE>()?;
    let r_max = r.read_f64::<LE>()?;
    let count = r.read_u64::<LE>()? as usize;
    let mut samples = Vec::with_capacity(count.min(1 << 24));
    for i in 0..count {
        let mut features = [0.0f64; 6];
        for f in features.iter_mut() {
            *f = f64::from(r.read_f32::<LE>()?);
        }
        let label = f64::from(r.read_f32::<LE>()?);
        let angle_index = r.read_u32::<LE>()?;
        // Point provenance is not stored; file order stands in for it.
        samples.push(DatasetSample { features, label, angle_index, point_index: i as u32 });
    }
    Ok(Dataset { samples, r_max, density, source_digest: 0 })
}

/// CSV mirror of the dataset columns.
pub fn dataset_to_csv<W: Write>(w: &mut W, ds: &Dataset) -> Result<()> {
    writeln!(w, "f0,f1,f2,f3,f4,f5,label,angle_index")?;
    for s in &ds.samples {
        let f = &s.features;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            f[0], f[1], f[2], f[3], f[4], f[5], s.label, s.angle_index
        )?;
    }
    Ok(())
}

// --------------------------------------------------------------- model --

fn write_tensor<W: Write>(w: &mut W, data: impl Iterator<Item = f64>, len: usize) -> Result<()> {
    w.write_u64::<LE>(len as u64)?;
    let mut written = 0usize;
    for v in data {
        w.write_f64::<LE>(v)?;
        written += 1;
    }
    debug_assert_eq!(written, len);
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R, expected: usize) -> Result<Vec<f64>> {
    let len = r.read_u64::<LE>()? as usize;
    if len != expected {
        return Err(Error::BadFormat(format!("tensor length {len}, expected {expected}")));
    }
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(r.read_f64::<LE>()?);
    }
    Ok(out)
}

/// Persist a trained network along with the density it was trained at and
/// the seed that produced it.
pub fn write_model(path: &Path, net: &Network, density: u32, seed: u64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MODEL_MAGIC)?;
    w.write_u32::<LE>(FORMAT_VERSION)?;
    let cfg = &net.config;
    w.write_u32::<LE>(cfg.input_dim as u32)?;
    w.write_u32::<LE>(cfg.output_dim as u32)?;
    w.write_u32::<LE>(cfg.layer_dims.len() as u32)?;
    for &d in &cfg.layer_dims {
        w.write_u32::<LE>(d as u32)?;
    }
    w.write_u32::<LE>(cfg.block_repeat as u32)?;
    w.write_u8(cfg.append_8192_when_density_exceeds_4096 as u8)?;
    w.write_f64::<LE>(cfg.bn_epsilon)?;
    w.write_f64::<LE>(cfg.bn_momentum)?;
    w.write_u32::<LE>(density)?;
    w.write_u64::<LE>(seed)?;

    for layer in &net.layers {
        if let Some(bn) = &layer.norm {
            write_tensor(&mut w, bn.gamma.iter().copied(), bn.gamma.len())?;
            write_tensor(&mut w, bn.beta.iter().copied(), bn.beta.len())?;
            write_tensor(&mut w, bn.running_mean.iter().copied(), bn.running_mean.len())?;
            write_tensor(&mut w, bn.running_var.iter().copied(), bn.running_var.len())?;
        }
        write_tensor(&mut w, layer.weight.iter().copied(), layer.weight.len())?;
        write_tensor(&mut w, layer.bias.iter().copied(), layer.bias.len())?;
    }
    Ok(())
}

/// Load a model; returns the network, its training density, and its seed.
pub fn read_model(path: &Path) -> Result<(Network, u32, u64)> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, MODEL_MAGIC)?;
    let input_dim = r.read_u32::<LE>()? as usize;
    let output_dim = r.read_u32::<LE>()? as usize;
    let n_dims = r.read_u32::<LE>()? as usize;
    if n_dims == 0 || n_dims > 64 {
        return Err(Error::BadFormat(format!("implausible layer_dims count {n_dims}")));
    }
    let mut layer_dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        layer_dims.push(r.read_u32::<LE>()? as usize);
    }
    let block_repeat = r.read_u32::<LE>()? as usize;
    let append = r.read_u8()? != 0;
    let bn_epsilon = r.read_f64::<LE>()?;
    let bn_momentum = r.read_f64::<LE>()?;
    let density = r.read_u32::<LE>()?;
    let seed = r.read_u64::<LE>()?;
    let config = MlpConfig {
        layer_dims,
        block_repeat,
        append_8192_when_density_exceeds_4096: append,
        input_dim,
        output_dim,
        bn_epsilon,
        bn_momentum,
    };
    let mut net = Network::init(&config, 0)?;
    for layer in &mut net.layers {
        if let Some(bn) = layer.norm.as_mut() {
            bn.gamma = Array1::from_vec(read_tensor(&mut r, bn.gamma.len())?);
            bn.beta = Array1::from_vec(read_tensor(&mut r, bn.beta.len())?);
            bn.running_mean = Array1::from_vec(read_tensor(&mut r, bn.running_mean.len())?);
            bn.running_var = Array1::from_vec(read_tensor(&mut r, bn.running_var.len())?);
        }
        let dim = layer.weight.dim();
        layer.weight = Array2::from_shape_vec(dim, read_tensor(&mut r, dim.0 * dim.1)?)
            .expect("shape matches length by construction");
        layer.bias = Array1::from_vec(read_tensor(&mut r, layer.bias.len())?);
    }
    Ok((net, density, seed))
}

// ------------------------------------------------------------- reports --

/// Training history as CSV. The wall-seconds column is informational and
/// excluded from reproducibility comparisons.
pub fn history_to_csv<W: Write>(w: &mut W, epochs: &[EpochStats]) -> Result<()> {
    writeln!(w, "epoch,loss,lr,wall_seconds")?;
    for e in epochs {
        writeln!(w, "{},{},{},{:.3}", e.epoch, e.loss, e.lr, e.wall_seconds)?;
    }
    Ok(())
}

/// JSON-lines report: one row per metric, one row per closed-loop target.
pub fn report_to_jsonl<W: Write>(w: &mut W, report: &crate::eval::MetricsReport) -> Result<()> {
    let metrics = [
        ("mse", report.mse),
        ("pae_mean_pct", report.pae_mean_pct),
        ("pae_median_pct", report.pae_median_pct),
        ("pae_p95_pct", report.pae_p95_pct),
        ("quantization_accuracy", report.quantization_accuracy),
        ("density", f64::from(report.density)),
        ("e_d", report.e_d),
        ("sample_count", report.sample_count as f64),
    ];
    for (name, value) in metrics {
        writeln!(w, "{}", serde_json::json!({ "metric": name, "value": value }))?;
    }
    for entry in &report.closed_loop {
        writeln!(
            w,
            "{}",
            serde_json::json!({
                "target_x": entry.target_x,
                "target_y": entry.target_y,
                "miss_distance": entry.miss_distance,
            })
        )?;
    }
    Ok(())
}

/// CSV report mirroring the JSON-lines rows.
pub fn report_to_csv<W: Write>(w: &mut W, report: &crate::eval::MetricsReport) -> Result<()> {
    writeln!(w, "row,name,value,target_x,target_y")?;
    let metrics = [
        ("mse", report.mse),
        ("pae_mean_pct", report.pae_mean_pct),
        ("pae_median_pct", report.pae_median_pct),
        ("pae_p95_pct", report.pae_p95_pct),
        ("quantization_accuracy", report.quantization_accuracy),
        ("density", f64::from(report.density)),
        ("e_d", report.e_d),
        ("sample_count", report.sample_count as f64),
    ];
    for (name, value) in metrics {
        writeln!(w, "metric,{name},{value},,")?;
    }
    for e in &report.closed_loop {
        writeln!(w, "closed_loop,miss_distance,{},{},{}", e.miss_distance, e.target_x, e.target_y)?;
    }
    Ok(())
}
