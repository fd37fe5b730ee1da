//! Barrier and saddle-proximity statistics of sampled path sets, plus CSV,
//! JSON and SVG exports.
//!
//! Standard deviations use the population formula (divide by `n`).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gfm::TransitionPath;
use crate::surface::{CriticalPointRegistry, Surface};

/// Highest energy along the path grid.
pub fn path_max_energy(path: &TransitionPath, surface: &dyn Surface) -> Result<f64> {
    let mut hi = f64::NEG_INFINITY;
    for row in path.states.rows() {
        hi = hi.max(surface.energy(row.as_slice().unwrap())?);
    }
    Ok(hi)
}

/// Smallest per-path maximum energy.
pub fn minmax_energy(paths: &[TransitionPath], surface: &dyn Surface) -> Result<f64> {
    if paths.is_empty() {
        return Err(Error::Config("no paths to evaluate".into()));
    }
    paths
        .iter()
        .map(|p| path_max_energy(p, surface))
        .try_fold(f64::INFINITY, |acc, m| Ok(acc.min(m?)))
}

/// Closest approach of the path grid to `saddle`.
pub fn saddle_distance(path: &TransitionPath, saddle: &[f64]) -> f64 {
    path.states
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(saddle).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min)
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMetrics {
    pub path_id: usize,
    pub max_energy: f64,
    pub d1: Option<f64>,
    pub d2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSetReport {
    pub n_paths: usize,
    pub minmax_energy: f64,
    pub max_energy_mean: f64,
    pub max_energy_std: f64,
    pub d1_mean: Option<f64>,
    pub d1_std: Option<f64>,
    pub d2_mean: Option<f64>,
    pub d2_std: Option<f64>,
    pub u_evaluations: u64,
}

/// Per-path metrics and their aggregate. `d1`/`d2` are distances to the
/// first and second registered saddles when they exist.
pub fn report(
    paths: &[TransitionPath],
    surface: &dyn Surface,
    registry: &CriticalPointRegistry,
    u_evaluations: u64,
) -> Result<(PathSetReport, Vec<PathMetrics>)> {
    if paths.is_empty() {
        return Err(Error::Config("no paths to evaluate".into()));
    }
    let per: Vec<PathMetrics> = paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(PathMetrics {
                path_id: i,
                max_energy: path_max_energy(p, surface)?,
                d1: registry.saddles.first().map(|s| saddle_distance(p, s)),
                d2: registry.saddles.get(1).map(|s| saddle_distance(p, s)),
            })
        })
        .collect::<Result<_>>()?;
    let maxes: Vec<f64> = per.iter().map(|m| m.max_energy).collect();
    let (max_energy_mean, max_energy_std) = mean_std(&maxes);
    let stats = |f: fn(&PathMetrics) -> Option<f64>| -> (Option<f64>, Option<f64>) {
        let v: Option<Vec<f64>> = per.iter().map(f).collect();
        match v {
            Some(v) => {
                let (m, s) = mean_std(&v);
                (Some(m), Some(s))
            }
            None => (None, None),
        }
    };
    let (d1_mean, d1_std) = stats(|m| m.d1);
    let (d2_mean, d2_std) = stats(|m| m.d2);
    let rep = PathSetReport {
        n_paths: paths.len(),
        minmax_energy: maxes.iter().copied().fold(f64::INFINITY, f64::min),
        max_energy_mean,
        max_energy_std,
        d1_mean,
        d1_std,
        d2_mean,
        d2_std,
        u_evaluations,
    };
    Ok((rep, per))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

pub fn metrics_csv(per: &[PathMetrics]) -> String {
    let mut s = String::from("path_id,max_energy,d1,d2\n");
    for m in per {
        let _ = writeln!(s, "{},{},{},{}", m.path_id, m.max_energy, opt(m.d1), opt(m.d2));
    }
    s
}

/// Write `report.csv`, `summary.json` and `paths.svg` into `dir`.
pub fn write_report(
    dir: &Path,
    rep: &PathSetReport,
    per: &[PathMetrics],
    paths: &[TransitionPath],
    surface: &dyn Surface,
    registry: &CriticalPointRegistry,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write("report.csv", metrics_csv(per))?;
    write("summary.json", serde_json::to_string_pretty(rep)? + "\n")?;
    if surface.dim() == 2 {
        write("paths.svg", render_svg(paths, surface, &registry.saddles, 100)?)?;
    }
    Ok(())
}

const GRID: usize = 300;
const CANVAS: f64 = 600.0;
const N_LEVELS: usize = 24;

/// Contour plot of a 2-D surface with up to `max_paths` paths overlaid and
/// saddles marked by stars.
pub fn render_svg(
    paths: &[TransitionPath],
    surface: &dyn Surface,
    saddles: &[Vec<f64>],
    max_paths: usize,
) -> Result<String> {
    if surface.dim() != 2 {
        return Err(Error::Config("contour rendering needs a 2-D surface".into()));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (-1.5f64, 1.2f64, -0.2f64, 2.0f64);
    for p in paths.iter().take(max_paths) {
        for r in p.states.rows() {
            x0 = x0.min(r[0]);
            x1 = x1.max(r[0]);
            y0 = y0.min(r[1]);
            y1 = y1.max(r[1]);
        }
    }
    let gx = |i: usize| x0 + (x1 - x0) * i as f64 / (GRID - 1) as f64;
    let gy = |j: usize| y0 + (y1 - y0) * j as f64 / (GRID - 1) as f64;
    let mut u = vec![0.0; GRID * GRID];
    for j in 0..GRID {
        for i in 0..GRID {
            u[j * GRID + i] = surface.energy(&[gx(i), gy(j)])?;
        }
    }
    let lo = u.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = u.iter().copied().fold(f64::NEG_INFINITY, f64::max).min(lo + 400.0);
    // log-spaced offsets above the minimum
    let span = (hi - lo + 1.0).ln();
    let levels: Vec<f64> = (1..=N_LEVELS)
        .map(|k| lo - 1.0 + (span * k as f64 / (N_LEVELS + 1) as f64).exp())
        .collect();

    let px = |x: f64| (x - x0) / (x1 - x0) * CANVAS;
    let py = |y: f64| CANVAS - (y - y0) / (y1 - y0) * CANVAS;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{c}" height="{c}" viewBox="0 0 {c} {c}">"#,
        c = CANVAS
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, &level) in levels.iter().enumerate() {
        let shade = 40 + (180 * k / N_LEVELS);
        let _ = write!(s, r#"<path fill="none" stroke="rgb({shade},{shade},255)" stroke-width="0.8" d=""#);
        for (a, b) in marching_squares(&u, level) {
            let (ax, ay) = (x0 + (x1 - x0) * a.0 / (GRID - 1) as f64, y0 + (y1 - y0) * a.1 / (GRID - 1) as f64);
            let (bx, by) = (x0 + (x1 - x0) * b.0 / (GRID - 1) as f64, y0 + (y1 - y0) * b.1 / (GRID - 1) as f64);
            let _ = write!(s, "M{:.1} {:.1}L{:.1} {:.1}", px(ax), py(ay), px(bx), py(by));
        }
        let _ = writeln!(s, r#""/>"#);
    }
    for p in paths.iter().take(max_paths) {
        let stride = (p.len() / 100).max(1);
        let mut pts: Vec<String> = (0..p.len())
            .step_by(stride)
            .map(|k| format!("{:.1},{:.1}", px(p.states[[k, 0]]), py(p.states[[k, 1]])))
            .collect();
        let last = p.len() - 1;
        if last % stride != 0 {
            pts.push(format!("{:.1},{:.1}", px(p.states[[last, 0]]), py(p.states[[last, 1]])));
        }
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="rgb(220,40,40)" stroke-opacity="0.35" stroke-width="1" points="{}"/>"#,
            pts.join(" ")
        );
    }
    for sd in saddles {
        let _ = writeln!(s, "{}", star(px(sd[0]), py(sd[1]), 9.0));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn star(cx: f64, cy: f64, r: f64) -> String {
    let pts: Vec<String> = (0..10)
        .map(|k| {
            let rad = if k % 2 == 0 { r } else { 0.45 * r };
            let a = std::f64::consts::PI * (k as f64 / 5.0 - 0.5);
            format!("{:.1},{:.1}", cx + rad * a.cos(), cy + rad * a.sin())
        })
        .collect();
    format!(r#"<polygon fill="gold" stroke="black" stroke-width="0.8" points="{}"/>"#, pts.join(" "))
}

type Pt = (f64, f64);

/// Iso-line segments of a row-major `GRID x GRID` field, in grid coordinates.
fn marching_squares(u: &[f64], level: f64) -> Vec<(Pt, Pt)> {
    let at = |i: usize, j: usize| u[j * GRID + i];
    let lerp = |a: f64, b: f64| if (b - a).abs() < f64::MIN_POSITIVE { 0.5 } else { (level - a) / (b - a) };
    let mut segs = Vec::new();
    for j in 0..GRID - 1 {
        for i in 0..GRID - 1 {
            let (v00, v10, v11, v01) = (at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
            let case = (v00 > level) as u8 | ((v10 > level) as u8) << 1 | ((v11 > level) as u8) << 2 | ((v01 > level) as u8) << 3;
            if case == 0 || case == 15 {
                continue;
            }
            let (fi, fj) = (i as f64, j as f64);
            let bottom = (fi + lerp(v00, v10), fj);
            let right = (fi + 1.0, fj + lerp(v10, v11));
            let top = (fi + lerp(v01, v11), fj + 1.0);
            let left = (fi, fj + lerp(v00, v01));
            match case {
                1 | 14 => segs.push((left, bottom)),
                2 | 13 => segs.push((bottom, right)),
                3 | 12 => segs.push((left, right)),
                4 | 11 => segs.push((right, top)),
                6 | 9 => segs.push((bottom, top)),
                7 | 8 => segs.push((left, top)),
                5 => {
                    segs.push((left, top));
                    segs.push((bottom, right));
                }
                10 => {
                    segs.push((left, bottom));
                    segs.push((right, top));
                }
                _ => unreachable!(),
            }
        }
    }
    segs
}
