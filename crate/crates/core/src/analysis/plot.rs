//! CSV and SVG output. Rendering is deterministic: the same input always
//! produces the same bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{AnalysisError, DriftReport, EmbeddingTrace, Trajectory};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

fn write_file(dir: &Path, name: String, contents: &str) -> Result<PathBuf, AnalysisError> {
    let io = |path: &Path, e: std::io::Error| AnalysisError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| io(&path, e))?;
    Ok(path)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Linear map from `[lo, hi]` to `[a, b]`; a flat range maps to the middle.
fn scale(value: f64, lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        return (a + b) / 2.0;
    }
    a + (value - lo) / (hi - lo) * (b - a)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

struct Svg(String);

impl Svg {
    fn new(title: &str) -> Self {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(
            s,
            r#"<path d="M {l:.2} {t:.2} L {l:.2} {b:.2} L {r:.2} {b:.2}" fill="none" stroke="black" stroke-width="1"/>"#
        );
        Svg(s)
    }

    fn axis_labels(&mut self, x: &str, y: &str, x_range: (f64, f64), y_range: (f64, f64)) {
        let s = &mut self.0;
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let text = |s: &mut String, x: f64, y: f64, anchor: &str, body: String| {
            let _ = writeln!(
                s,
                r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{}</text>"#,
                escape(&body)
            );
        };
        text(s, (l + r) / 2.0, HEIGHT - 12.0, "middle", x.to_string());
        text(s, l, b + 16.0, "middle", format!("{:.4}", x_range.0));
        text(s, r, b + 16.0, "middle", format!("{:.4}", x_range.1));
        text(s, l - 4.0, b, "end", format!("{:.4}", y_range.0));
        text(s, l - 4.0, t, "end", format!("{:.4}", y_range.1));
        text(s, l, t - 8.0, "start", y.to_string());
    }

    fn polyline(&mut self, points: &[(f64, f64)], colour: &str) {
        let coords: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.0,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            coords.join(" ")
        );
    }

    fn point(&mut self, x: f64, y: f64, label: Option<&str>) {
        let _ = writeln!(self.0, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="steelblue"/>"#);
        if let Some(label) = label {
            let _ = writeln!(
                self.0,
                r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="9">{}</text>"#,
                x + 4.0,
                y - 4.0,
                escape(label)
            );
        }
    }

    fn finish(mut self) -> String {
        self.0.push_str("</svg>\n");
        self.0
    }
}

fn series_plot(title: &str, y_label: &str, xs: &[f64], ys: &[f64]) -> String {
    let xr = bounds(xs.iter().copied());
    let yr = bounds(ys.iter().copied());
    let mut svg = Svg::new(title);
    svg.axis_labels("iteration", y_label, xr, yr);
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            (
                scale(*x, xr.0, xr.1, MARGIN, WIDTH - MARGIN),
                scale(*y, yr.0, yr.1, HEIGHT - MARGIN, MARGIN),
            )
        })
        .collect();
    svg.polyline(&pts, "steelblue");
    for (x, y) in &pts {
        svg.point(*x, *y, None);
    }
    svg.finish()
}

/// `<stem>.csv` (iteration, value) and `<stem>.svg` (line plot).
pub fn emit_trajectory(trajectory: &Trajectory, dir: &Path, stem: &str) -> Result<Vec<PathBuf>, AnalysisError> {
    let mut csv = format!("iteration,{}\n", trajectory.label);
    for (t, v) in trajectory.iterations.iter().zip(&trajectory.values) {
        let _ = writeln!(csv, "{t},{v}");
    }
    let xs: Vec<f64> = trajectory.iterations.iter().map(|&t| f64::from(t)).collect();
    let svg = series_plot(&trajectory.label, &trajectory.label, &xs, &trajectory.values);
    Ok(vec![
        write_file(dir, format!("{stem}.csv"), &csv)?,
        write_file(dir, format!("{stem}.svg"), &svg)?,
    ])
}

/// `<stem>.csv` (iteration, x, y) and `<stem>.svg` (scatter labelled by
/// iteration with a connecting path). The trace must carry a projection.
pub fn emit_projection(trace: &EmbeddingTrace, dir: &Path, stem: &str) -> Result<Vec<PathBuf>, AnalysisError> {
    let projection = trace
        .projection_2d
        .as_ref()
        .expect("emit_projection needs a projected trace");
    let mut csv = String::from("iteration,x,y\n");
    for (t, (x, y)) in trace.iterations.iter().zip(projection) {
        let _ = writeln!(csv, "{t},{x},{y}");
    }
    let xr = bounds(projection.iter().map(|p| p.0));
    let yr = bounds(projection.iter().map(|p| p.1));
    let mut svg = Svg::new("prompt embeddings (PCA)");
    svg.axis_labels("PC1", "PC2", xr, yr);
    let pts: Vec<(f64, f64)> = projection
        .iter()
        .map(|(x, y)| {
            (
                scale(*x, xr.0, xr.1, MARGIN, WIDTH - MARGIN),
                scale(*y, yr.0, yr.1, HEIGHT - MARGIN, MARGIN),
            )
        })
        .collect();
    svg.polyline(&pts, "lightgray");
    for ((x, y), t) in pts.iter().zip(&trace.iterations) {
        svg.point(*x, *y, Some(&t.to_string()));
    }
    Ok(vec![
        write_file(dir, format!("{stem}.csv"), &csv)?,
        write_file(dir, format!("{stem}.svg"), &svg.finish())?,
    ])
}

/// `<stem>.csv` with per-iteration drift and `<stem>.svg` plotting the
/// distance to the start.
pub fn emit_drift(report: &DriftReport, dir: &Path, stem: &str) -> Result<Vec<PathBuf>, AnalysisError> {
    let mut csv = String::from("iteration,distance_to_start,step_distance\n");
    for row in &report.rows {
        let step = row.step_distance.map_or(String::new(), |d| d.to_string());
        let _ = writeln!(csv, "{},{},{}", row.iteration, row.distance_to_start, step);
    }
    let xs: Vec<f64> = report.rows.iter().map(|r| f64::from(r.iteration)).collect();
    let ys: Vec<f64> = report.rows.iter().map(|r| r.distance_to_start).collect();
    let svg = series_plot("cosine distance to seed", "distance", &xs, &ys);
    Ok(vec![
        write_file(dir, format!("{stem}.csv"), &csv)?,
        write_file(dir, format!("{stem}.svg"), &svg)?,
    ])
}
