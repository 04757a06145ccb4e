//! Standalone SVG charts of metrics and reliability CSVs.
//!
//! Output is a pure function of the input text: fixed canvas, fixed palette,
//! coordinates printed with two decimals.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 400.0;
pub const MARGIN_LEFT: f64 = 60.0;
pub const MARGIN_RIGHT: f64 = 20.0;
pub const MARGIN_TOP: f64 = 30.0;
pub const MARGIN_BOTTOM: f64 = 50.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#333333"];
const TICKS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Every loss component against the iteration.
    Loss,
    /// Test accuracy (1 - eval_error) at evaluation points.
    Accuracy,
    /// Mask ratio and data utilization.
    Mask,
    /// Reliability diagram from a `reliability.csv`.
    Reliability,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [PlotKind::Loss, PlotKind::Accuracy, PlotKind::Mask, PlotKind::Reliability];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::Loss => "loss",
            PlotKind::Accuracy => "accuracy",
            PlotKind::Mask => "mask",
            PlotKind::Reliability => "reliability",
        }
    }
}

impl FromStr for PlotKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| anyhow!("unknown plot kind `{s}` (expected loss, accuracy, mask or reliability)"))
    }
}

/// Parsed CSV: header plus cells, empty cells as `None`.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let row = record
                .iter()
                .map(|cell| {
                    let cell = cell.trim();
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        cell.parse::<f64>()
                            .map(Some)
                            .map_err(|e| anyhow!("row {}: bad number `{cell}`: {e}", i + 2))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let idx = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("unknown column `{name}` (available: {})", self.header.join(", ")))?;
        Ok(self.rows.iter().map(|r| r.get(idx).copied().flatten()).collect())
    }
}

/// Axis ranges of the plotting area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl Frame {
    pub fn map_x(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.x_lo) / (self.x_hi - self.x_lo) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    pub fn map_y(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM - (y - self.y_lo) / (self.y_hi - self.y_lo) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

/// x range of a line chart: data extent, `[0, 1]` when empty, widened by one
/// when all points share an x.
pub fn x_extent(xs: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = xs
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if lo > hi {
        (0.0, 1.0)
    } else if lo == hi {
        (lo, lo + 1.0)
    } else {
        (lo, hi)
    }
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn series(table: &Table, x_col: &str, y_col: &str, label: &str, f: impl Fn(f64) -> f64) -> Result<Series> {
    let xs = table.column(x_col)?;
    let ys = table.column(y_col)?;
    let points = xs
        .into_iter()
        .zip(ys)
        .filter_map(|(x, y)| Some((x?, f(y?))))
        .collect();
    Ok(Series { name: label.to_string(), points })
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

fn open_svg(out: &mut String, title: &str, frame: &Frame, x_label: &str, y_label: &str) {
    let (x0, x1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (y0, y1) = (HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="14">{title}</text>"#,
        WIDTH / 2.0
    );
    let _ = writeln!(out, r#"<g class="axes" stroke="black" stroke-width="1">"#);
    let _ = writeln!(out, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}"/>"#);
    let _ = writeln!(out, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}"/>"#);
    for i in 0..TICKS {
        let t = i as f64 / (TICKS - 1) as f64;
        let xv = frame.x_lo + t * (frame.x_hi - frame.x_lo);
        let yv = frame.y_lo + t * (frame.y_hi - frame.y_lo);
        let (px, py) = (frame.map_x(xv), frame.map_y(yv));
        let _ = writeln!(out, r#"<line x1="{px:.2}" y1="{y0:.2}" x2="{px:.2}" y2="{:.2}"/>"#, y0 + 4.0);
        let _ = writeln!(out, r#"<line x1="{:.2}" y1="{py:.2}" x2="{x0:.2}" y2="{py:.2}"/>"#, x0 - 4.0);
        let _ = writeln!(
            out,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle" stroke="none">{}</text>"#,
            y0 + 16.0,
            fmt_tick(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" stroke="none">{}</text>"#,
            x0 - 6.0,
            py + 4.0,
            fmt_tick(yv)
        );
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x_label}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{y_label}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
}

fn legend(out: &mut String, entries: &[(&str, &str)]) {
    for (i, &(name, color)) in entries.iter().enumerate() {
        let y = MARGIN_TOP + 12.0 + 14.0 * i as f64;
        let x = WIDTH - MARGIN_RIGHT - 120.0;
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
            y - 4.0,
            x + 16.0,
            y - 4.0
        );
        let _ = writeln!(out, r#"<text x="{:.2}" y="{y:.2}">{name}</text>"#, x + 20.0);
    }
}

/// Line chart; `y_range` of `None` means `[0, max]` over the data (`[0, 1]`
/// when there is nothing positive).
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], y_range: Option<(f64, f64)>) -> String {
    let (x_lo, x_hi) = x_extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y_lo, y_hi) = y_range.unwrap_or_else(|| {
        let max = series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .fold(0.0f64, f64::max);
        (0.0, if max > 0.0 { max } else { 1.0 })
    });
    let frame = Frame { x_lo, x_hi, y_lo, y_hi };
    let mut out = String::new();
    open_svg(&mut out, title, &frame, x_label, y_label);
    let mut entries = Vec::new();
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.points.is_empty() {
            continue;
        }
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.map_x(x), frame.map_y(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="series" data-name="{}" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            s.name,
            color,
            pts.join(" ")
        );
        entries.push((s.name.as_str(), color));
    }
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

/// Reliability diagram: one bar per non-empty bin at its accuracy, plus the
/// diagonal of perfect calibration when there is any data.
pub fn reliability_chart(table: &Table) -> Result<String> {
    let lows = table.column("bin_low")?;
    let highs = table.column("bin_high")?;
    let counts = table.column("count")?;
    let accs = table.column("mean_acc")?;
    let frame = Frame { x_lo: 0.0, x_hi: 1.0, y_lo: 0.0, y_hi: 1.0 };
    let mut out = String::new();
    open_svg(&mut out, "reliability", &frame, "confidence", "accuracy");
    if !lows.is_empty() {
        let _ = writeln!(
            out,
            r##"<line class="diagonal" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999999" stroke-dasharray="4 3"/>"##,
            frame.map_x(0.0),
            frame.map_y(0.0),
            frame.map_x(1.0),
            frame.map_y(1.0)
        );
    }
    for i in 0..lows.len() {
        let (Some(lo), Some(hi), Some(n), Some(acc)) = (lows[i], highs[i], counts[i], accs[i]) else {
            continue;
        };
        if n <= 0.0 {
            continue;
        }
        let (x0, x1) = (frame.map_x(lo), frame.map_x(hi));
        let (top, base) = (frame.map_y(acc), frame.map_y(0.0));
        let _ = writeln!(
            out,
            r#"<rect class="bin" x="{x0:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{}" stroke="white"/>"#,
            x1 - x0,
            base - top,
            PALETTE[0]
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

const LOSS_COLUMNS: [&str; 6] = ["l_sup", "l_u_ce", "l_kl_wm", "l_kl_ms", "l_kl_ws", "total"];

/// Renders `csv_text` (a metrics CSV, or a reliability CSV for
/// [`PlotKind::Reliability`]).
pub fn render(kind: PlotKind, csv_text: &str) -> Result<String> {
    let table = Table::parse(csv_text)?;
    match kind {
        PlotKind::Loss => {
            let s = LOSS_COLUMNS
                .iter()
                .map(|c| series(&table, "iter", c, c, |v| v))
                .collect::<Result<Vec<_>>>()?;
            Ok(line_chart("loss", "iteration", "loss", &s, None))
        }
        PlotKind::Accuracy => {
            let s = series(&table, "iter", "eval_error", "accuracy", |e| 1.0 - e)?;
            Ok(line_chart("test accuracy", "iteration", "accuracy", &[s], Some((0.0, 1.0))))
        }
        PlotKind::Mask => {
            let s = vec![
                series(&table, "iter", "mask_ratio", "mask_ratio", |v| v)?,
                series(&table, "iter", "utilization", "utilization", |v| v)?,
            ];
            Ok(line_chart("mask ratio and utilization", "iteration", "fraction", &s, Some((0.0, 1.0))))
        }
        PlotKind::Reliability => reliability_chart(&table),
    }
}

pub fn plot_file(kind: PlotKind, input: &Path, output: &Path) -> Result<()> {
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let svg = render(kind, &text).with_context(|| format!("plotting {}", input.display()))?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(output, svg).with_context(|| format!("writing {}", output.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_round_trip() {
        for k in PlotKind::ALL {
            assert_eq!(k.name().parse::<PlotKind>().unwrap(), k);
        }
        assert!("histogram".parse::<PlotKind>().is_err());
    }

    #[test]
    fn frame_maps_corners() {
        let f = Frame { x_lo: 10.0, x_hi: 20.0, y_lo: 0.0, y_hi: 2.0 };
        assert_eq!(f.map_x(10.0), MARGIN_LEFT);
        assert_eq!(f.map_x(20.0), WIDTH - MARGIN_RIGHT);
        assert_eq!(f.map_y(0.0), HEIGHT - MARGIN_BOTTOM);
        assert_eq!(f.map_y(2.0), MARGIN_TOP);
    }

    #[test]
    fn extent_edge_cases() {
        assert_eq!(x_extent([]), (0.0, 1.0));
        assert_eq!(x_extent([3.0]), (3.0, 4.0));
        assert_eq!(x_extent([5.0, 2.0, 4.0]), (2.0, 5.0));
    }

    #[test]
    fn ticks_are_trimmed() {
        assert_eq!(fmt_tick(0.5), "0.5");
        assert_eq!(fmt_tick(2000.0), "2000");
        assert_eq!(fmt_tick(-0.0001), "0");
    }

    #[test]
    fn missing_column_is_reported() {
        let err = render(PlotKind::Mask, "iter,lr\n1,0.1\n").unwrap_err();
        assert!(err.to_string().contains("mask_ratio"), "{err}");
        assert!(render(PlotKind::Reliability, "bin_low,count\n").is_err());
    }
}
