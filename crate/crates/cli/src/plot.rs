use std::path::Path;

use anyhow::{bail, Context, Result};
use image::{Rgb, RgbImage};

/// Numeric grid from comma-separated text. A first row or column that does
/// not parse as numbers is treated as labels and dropped.
pub fn read_grid(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    let numeric = |s: &String| s.parse::<f64>().is_ok();
    if rows.first().is_some_and(|r| !r.iter().skip(1).any(numeric)) {
        rows.remove(0);
    }
    if !rows.is_empty() && rows.iter().all(|r| r.first().is_some_and(|c| !numeric(c))) {
        for r in &mut rows {
            r.remove(0);
        }
    }
    let grid: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().map(|c| c.parse::<f64>()).collect::<Result<Vec<_>, _>>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("{} holds a non-numeric cell", path.display()))?;
    let width = grid.first().map_or(0, Vec::len);
    if width == 0 || grid.iter().any(|r| r.len() != width) {
        bail!("{} is not a rectangular grid", path.display());
    }
    Ok(grid)
}

// dark blue -> teal -> yellow
const STOPS: [[f64; 3]; 3] = [[38., 24., 110.], [33., 145., 140.], [250., 230., 40.]];

fn colour(u: f64) -> Rgb<u8> {
    let u = u.clamp(0.0, 1.0) * 2.0;
    let i = (u.floor() as usize).min(1);
    let f = u - i as f64;
    let c = |k: usize| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Renders the grid as a heatmap, one square of `cell` pixels per value,
/// colours scaled between the grid's minimum and maximum.
pub fn heatmap(grid: &[Vec<f64>], cell: u32) -> Result<RgbImage> {
    if cell == 0 {
        bail!("cell size must be positive");
    }
    let (lo, hi) = grid
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        bail!("grid holds non-finite values");
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (h, w) = (grid.len() as u32, grid[0].len() as u32);
    Ok(RgbImage::from_fn(w * cell, h * cell, |x, y| {
        colour((grid[(y / cell) as usize][(x / cell) as usize] - lo) / span)
    }))
}
