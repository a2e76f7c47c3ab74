use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use occpred::navsim::{read_episode_rows, summarize, write_ply};
use occpred::tensornn::io::read_weights;
use occpred::voxel::{read_grid, OccupancyGrid, Point};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Args, Clone, Debug)]
pub struct InspectArgs {
    /// `.ocgr` grid, `.opnw` weights, episodes `.csv` or a `.json` manifest/report.
    pub file: PathBuf,
    /// Write one PGM image per slice of a grid into this directory.
    #[arg(long)]
    pub slices: Option<PathBuf>,
    /// Slicing axis for `--slices`.
    #[arg(long, value_enum, default_value = "z")]
    pub axis: Axis,
    /// Write the centers of occupied voxels of a grid as a PLY point list.
    #[arg(long)]
    pub ply: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

/// Gray levels: unknown mid-gray, free white, occupied black.
fn shade(v: f32, threshold: f64) -> u8 {
    if v < 0.0 {
        128
    } else if v as f64 > threshold {
        0
    } else {
        255
    }
}

/// Binary PGM slices; returns the number of images written.
pub fn write_slices(grid: &OccupancyGrid<f32>, dir: &Path, axis: Axis, threshold: f64) -> std::io::Result<usize> {
    fs::create_dir_all(dir)?;
    let [dx, dy, dz] = grid.dims();
    let raw = grid.raw();
    let at = |i: usize, j: usize, k: usize| raw[(i * dy + j) * dz + k];
    let (n, w, h) = match axis {
        Axis::X => (dx, dy, dz),
        Axis::Y => (dy, dx, dz),
        Axis::Z => (dz, dx, dy),
    };
    let name = format!("{axis:?}").to_lowercase();
    for s in 0..n {
        let mut img = format!("P5\n{w} {h}\n255\n").into_bytes();
        // image rows run top-down, so the second in-plane axis is flipped
        for r in (0..h).rev() {
            for c in 0..w {
                let v = match axis {
                    Axis::X => at(s, c, r),
                    Axis::Y => at(c, s, r),
                    Axis::Z => at(c, r, s),
                };
                img.push(shade(v, threshold));
            }
        }
        fs::write(dir.join(format!("{name}_{s:04}.pgm")), img)?;
    }
    Ok(n)
}

fn inspect_grid(a: &InspectArgs) -> Result<(), CliError> {
    let grid: OccupancyGrid<f32> = read_grid(&a.file)?;
    let g = grid.geometry();
    let known = grid.known_count();
    let occupied = grid.occupied_count(a.threshold);
    println!("grid {}", a.file.display());
    println!("  dims {:?} resolution {} m origin {:?}", grid.dims(), g.resolution, g.origin().as_slice());
    println!(
        "  cells {}: unknown {} free {} occupied {}",
        grid.len(),
        grid.len() - known,
        known - occupied,
        occupied
    );
    if let Some(dir) = &a.slices {
        let n = write_slices(&grid, dir, a.axis, a.threshold).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
        println!("  wrote {n} slices to {}", dir.display());
    }
    if let Some(path) = &a.ply {
        let pts: Vec<Point> = g
            .indices()
            .filter(|&idx| grid.get_raw(idx) as f64 > a.threshold)
            .map(|idx| grid.index_to_world(idx))
            .collect();
        write_ply(path, &pts)?;
        println!("  wrote {} points to {}", pts.len(), path.display());
    }
    Ok(())
}

fn inspect_weights(path: &Path) -> Result<(), CliError> {
    let layers = read_weights::<f32>(path)?;
    let total: usize = layers.iter().map(|l| l.param_count()).sum();
    println!("weights {}: {} layers, {total} parameters", path.display(), layers.len());
    for l in &layers {
        let s = l.spec();
        println!("  {:<12} {:>3} -> {:<3} params {}", l.id(), s.in_channels, s.out_channels, l.param_count());
    }
    Ok(())
}

fn inspect_episodes(path: &Path) -> Result<(), CliError> {
    let rows = read_episode_rows(path)?;
    println!("episodes {}: {} rows", path.display(), rows.len());
    for s in summarize(&rows) {
        println!(
            "  {:<24} success {:>5.1}% time {:?} stops {:?}",
            s.scheme, s.success_rate, s.mean_travel_time, s.mean_emergency_stops
        );
    }
    Ok(())
}

fn inspect_json(path: &Path) -> Result<(), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let doc: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    println!("json {}", path.display());
    if let Some(p) = doc.get("provenance") {
        println!("  command {}", p["command"]);
        println!("  code version {}", p["code_version"]);
        println!("  root seed {}", p["root_seed"]);
        println!("  config hash {}", p["config_hash"]);
        println!("  files {}", p["files"].as_array().map_or(0, Vec::len));
    }
    if let Some(obj) = doc.as_object() {
        let keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        println!("  keys {}", keys.join(", "));
    }
    Ok(())
}

pub fn inspect(a: &InspectArgs) -> Result<(), CliError> {
    if !a.file.is_file() {
        return Err(CliError::input(format!("{} is not a file", a.file.display())));
    }
    let ext = a.file.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if ext != "ocgr" && (a.slices.is_some() || a.ply.is_some()) {
        return Err(CliError::config("--slices and --ply apply to .ocgr grids only"));
    }
    match ext.as_str() {
        "ocgr" => inspect_grid(a),
        "opnw" => inspect_weights(&a.file),
        "csv" => inspect_episodes(&a.file),
        "json" => inspect_json(&a.file),
        _ => Err(CliError::input(format!("don't know how to inspect {}", a.file.display()))),
    }
}
