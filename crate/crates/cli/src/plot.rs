//! Standalone SVG line plots, density overlays and heat-map surfaces.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use consensus_core::io::{parse_csv, parse_f64, read_to_string, write_atomic};
use consensus_core::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn axes(svg: &mut String, f: &Frame, title: &str, x_label: &str, y_label: &str, log_y: bool) {
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(svg, r##"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="#000"/>"##, x1 - x0, y1 - y0);
    for k in 0..=5 {
        let s = k as f64 / 5.0;
        let xv = f.x.0 + s * (f.x.1 - f.x.0);
        let yv = f.y.0 + s * (f.y.1 - f.y.0);
        let (px, py) = (f.px(xv), f.py(yv));
        let ylab = if log_y { tick_label(10f64.powf(yv)) } else { tick_label(yv) };
        let _ = writeln!(svg, r##"<line x1="{px:.2}" y1="{y1}" x2="{px:.2}" y2="{}" stroke="#000"/>"##, y1 + 5.0);
        let _ = writeln!(
            svg,
            r#"<text x="{px:.2}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
            y1 + 18.0,
            tick_label(xv)
        );
        let _ = writeln!(svg, r##"<line x1="{}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="#000"/>"##, x0 - 5.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" font-size="11" text-anchor="end">{ylab}</text>"#, x0 - 8.0, py + 4.0);
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" font-size="14" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{0}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn open() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n"
    )
}

impl LinePlot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        LinePlot { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), log_y: false, series: Vec::new() }
    }

    pub fn with_series(mut self, label: &str, points: Vec<(f64, f64)>) -> Self {
        self.series.push(Series { label: label.into(), points });
        self
    }

    fn transform(&self, y: f64) -> f64 {
        if self.log_y {
            if y > 0.0 {
                y.log10()
            } else {
                f64::NAN
            }
        } else {
            y
        }
    }

    pub fn to_svg(&self) -> String {
        let pts = || self.series.iter().flat_map(|s| s.points.iter());
        let frame = Frame { x: range(pts().map(|p| p.0)), y: range(pts().map(|p| self.transform(p.1))) };
        let mut svg = open();
        axes(&mut svg, &frame, &self.title, &self.x_label, &self.y_label, self.log_y);
        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let mut path = String::new();
            for &(x, y) in &s.points {
                let ty = self.transform(y);
                if x.is_finite() && ty.is_finite() {
                    let _ = write!(path, "{:.2},{:.2} ", frame.px(x), frame.py(ty));
                }
            }
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                path.trim_end()
            );
            if self.series.len() > 1 {
                let ly = TOP + 14.0 + 15.0 * k as f64;
                let lx = WIDTH - RIGHT - 130.0;
                let _ = writeln!(
                    svg,
                    r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
                    lx + 18.0
                );
                let _ = writeln!(
                    svg,
                    r#"<text x="{}" y="{}" font-size="11">{}</text>"#,
                    lx + 24.0,
                    ly + 4.0,
                    escape(&s.label)
                );
            }
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Piecewise-linear blue-to-yellow colour map on `[0, 1]`.
fn color(t: f64) -> String {
    const STOPS: [(f64, [f64; 3]); 4] =
        [(0.0, [68.0, 1.0, 84.0]), (0.33, [49.0, 104.0, 142.0]), (0.66, [53.0, 183.0, 121.0]), (1.0, [253.0, 231.0, 37.0])];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let k = STOPS.iter().position(|s| s.0 >= t).unwrap_or(STOPS.len() - 1).max(1);
    let (a, b) = (STOPS[k - 1], STOPS[k]);
    let w = (t - a.0) / (b.0 - a.0);
    let c: Vec<u8> = (0..3).map(|i| (a.1[i] + w * (b.1[i] - a.1[i])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Heat map of `rows[r][c]` with row `r` at `y_values[r]` and column `c` at
/// `x_values[c]`, both assumed uniformly spaced.
pub fn surface_svg(title: &str, x_label: &str, y_label: &str, x_values: &[f64], y_values: &[f64], rows: &[Vec<f64>]) -> String {
    let half = |v: &[f64]| if v.len() > 1 { 0.5 * (v[1] - v[0]) } else { 0.5 };
    let (hx, hy) = (half(x_values), half(y_values));
    let (xr, yr) = (range(x_values.iter().copied()), range(y_values.iter().copied()));
    let frame = Frame { x: (xr.0 - hx, xr.1 + hx), y: (yr.0 - hy, yr.1 + hy) };
    let zmax = rows.iter().flatten().copied().filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    let mut svg = open();
    for (r, row) in rows.iter().enumerate() {
        for (c, z) in row.iter().enumerate() {
            let (x, y) = (x_values[c], y_values[r]);
            let (px0, px1) = (frame.px(x - hx), frame.px(x + hx));
            let (py0, py1) = (frame.py(y + hy), frame.py(y - hy));
            let _ = writeln!(
                svg,
                r#"<rect x="{px0:.2}" y="{py0:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                px1 - px0 + 0.3,
                py1 - py0 + 0.3,
                color(if zmax > 0.0 { z / zmax } else { 0.0 })
            );
        }
    }
    axes(&mut svg, &frame, title, x_label, y_label, false);
    svg.push_str("</svg>\n");
    svg
}

pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    write_atomic(path, |w| w.write_all(svg.as_bytes()))
}

/// CSV layouts the plotter recognises, keyed by their header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsvKind {
    Trajectory,
    Histogram,
    Moments,
    History,
}

const KINDS: [(CsvKind, &[&str]); 4] = [
    (CsvKind::Trajectory, &["t", "xi", "xj", "ui", "uj", "cost", "gap"]),
    (CsvKind::Histogram, &["bin_center", "density"]),
    (CsvKind::Moments, &["step", "mean", "variance"]),
    (CsvKind::History, &["epoch", "train_loss", "val_loss"]),
];

/// Parsed numeric table with its detected layout.
pub struct Table {
    pub kind: CsvKind,
    pub columns: Vec<Vec<f64>>,
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = read_to_string(path)?;
    let header = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::schema(path, "empty file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let (kind, expected) = KINDS
        .iter()
        .find(|(_, h)| *h == cols.as_slice())
        .ok_or_else(|| Error::schema(path, format!("unrecognised header '{header}'")))?;
    let rows = parse_csv(path, &text, expected)?;
    if rows.is_empty() {
        return Err(Error::schema(path, "no data rows"));
    }
    let mut columns = vec![Vec::with_capacity(rows.len()); expected.len()];
    for row in rows {
        for (c, f) in row.iter().enumerate() {
            columns[c].push(parse_f64(path, f)?);
        }
    }
    Ok(Table { kind: *kind, columns })
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "plot".into())
}

fn zip(a: &[f64], b: &[f64]) -> Vec<(f64, f64)> {
    a.iter().copied().zip(b.iter().copied()).collect()
}

pub fn density_plot(title: &str, series: Vec<Series>) -> String {
    LinePlot { title: title.into(), x_label: "opinion x".into(), y_label: "density".into(), log_y: false, series }.to_svg()
}

/// Renders one SVG per input file, plus a combined overlay when more than
/// one histogram is given. Returns the written paths.
pub fn plot_files(inputs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        return Err(Error::InvalidConfig("no input CSV files given".into()));
    }
    let tables: Vec<(PathBuf, Table)> = inputs.iter().map(|p| read_table(p).map(|t| (p.clone(), t))).collect::<Result<_>>()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut histograms = Vec::new();
    for (path, t) in &tables {
        let name = stem(path);
        let c = &t.columns;
        let svg = match t.kind {
            CsvKind::Trajectory => LinePlot::new(&format!("Consensus gap: {name}"), "time t", "|x_i - x_j|")
                .with_series(&name, zip(&c[0], &c[6]))
                .to_svg(),
            CsvKind::Histogram => {
                let s = Series { label: name.clone(), points: zip(&c[0], &c[1]) };
                histograms.push(s.clone());
                density_plot(&format!("Density: {name}"), vec![s])
            }
            CsvKind::Moments => LinePlot::new(&format!("Variance: {name}"), "step", "variance")
                .with_series("variance", zip(&c[0], &c[2]))
                .to_svg(),
            CsvKind::History => LinePlot {
                log_y: true,
                ..LinePlot::new(&format!("Training loss: {name}"), "epoch", "loss")
                    .with_series("train", zip(&c[0], &c[1]))
                    .with_series("validation", zip(&c[0], &c[2]))
            }
            .to_svg(),
        };
        let out = out_dir.join(format!("{name}.svg"));
        write_svg(&out, &svg)?;
        written.push(out);
    }
    if histograms.len() > 1 {
        let out = out_dir.join("overlay.svg");
        write_svg(&out, &density_plot("Density overlay", histograms))?;
        written.push(out);
    }
    Ok(written)
}
