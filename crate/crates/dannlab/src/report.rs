//! CSV tables and SVG heatmaps from a sweep result.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so
//! parsing a CSV cell gives back the exact `f64` from the result file.
//!
//! Heatmap cells are colored on a linear ramp from `#f7fbff` (grid minimum)
//! to `#08306b` (grid maximum). When every cell is equal the whole map uses
//! the low end of the ramp.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::SweepResult;

pub const RAMP_LOW: [u8; 3] = [0xf7, 0xfb, 0xff];
pub const RAMP_HIGH: [u8; 3] = [0x08, 0x30, 0x6b];

const CELL: usize = 40;
const MARGIN: usize = 80;
const LEGEND_W: usize = 20;

/// Writes degradation.csv, cost.csv, gain.csv, accuracy.csv,
/// gain_heatmap.svg, accuracy_heatmap.svg and fits.json into `out_dir`.
pub fn write_report(result: &SweepResult, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let d = &result.decomposition;
    let t = &result.test_axis.values;
    let a = &result.da_axis.values;
    let files = [
        ("degradation.csv", series_csv("test_shift", "degradation", t, &d.degradation)),
        ("cost.csv", series_csv("da_shift", "cost", a, &d.cost)),
        ("gain.csv", grid_csv(t, a, &d.gain)),
        ("accuracy.csv", grid_csv(t, a, &d.accuracy)),
        (
            "gain_heatmap.svg",
            heatmap_svg("gain", &result.test_axis.name, &result.da_axis.name, t, a, &d.gain),
        ),
        (
            "accuracy_heatmap.svg",
            heatmap_svg("accuracy", &result.test_axis.name, &result.da_axis.name, t, a, &d.accuracy),
        ),
        (
            "fits.json",
            serde_json::to_string_pretty(&result.fits).expect("fits serialize") + "\n",
        ),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

pub fn series_csv(axis: &str, column: &str, xs: &[f64], ys: &[f64]) -> String {
    let mut s = format!("{axis},{column}\n");
    for (x, y) in xs.iter().zip(ys) {
        let _ = writeln!(s, "{x},{y}");
    }
    s
}

/// Rows are test shifts, columns DA shifts; the header row holds the DA
/// axis values.
pub fn grid_csv(rows: &[f64], cols: &[f64], grid: &[Vec<f64>]) -> String {
    let mut s = String::from("test_shift\\da_shift");
    for c in cols {
        let _ = write!(s, ",{c}");
    }
    s.push('\n');
    for (r, row) in rows.iter().zip(grid) {
        let _ = write!(s, "{r}");
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// A parsed grid CSV: `(row axis, column axis, cells)`.
pub type ParsedGrid = (Vec<f64>, Vec<f64>, Vec<Vec<f64>>);

pub fn parse_grid_csv(text: &str) -> Result<ParsedGrid> {
    let num = |s: &str, line: usize| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::input(format!("line {line}: {s:?} is not a number")))
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::input("empty CSV"))?;
    let cols = header
        .split(',')
        .skip(1)
        .map(|c| num(c, 1))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut grid = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut fields = line.split(',');
        rows.push(num(fields.next().unwrap_or(""), i + 2)?);
        let row = fields.map(|f| num(f, i + 2)).collect::<Result<Vec<_>>>()?;
        if row.len() != cols.len() {
            return Err(Error::input(format!(
                "line {}: {} cells, header has {}",
                i + 2,
                row.len(),
                cols.len()
            )));
        }
        grid.push(row);
    }
    Ok((rows, cols, grid))
}

/// Color for `t` in `[0, 1]` on the ramp.
pub fn ramp(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let mut out = [0u8; 3];
    for i in 0..3 {
        let lo = RAMP_LOW[i] as f64;
        let hi = RAMP_HIGH[i] as f64;
        out[i] = (lo + (hi - lo) * t).round() as u8;
    }
    out
}

fn hex(c: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// One `<rect>` per cell, test shift increasing downward, DA shift to the
/// right, plus a vertical legend bar labelled with the grid range.
pub fn heatmap_svg(
    title: &str,
    row_name: &str,
    col_name: &str,
    rows: &[f64],
    cols: &[f64],
    grid: &[Vec<f64>],
) -> String {
    let values = grid.iter().flatten().copied().filter(|v| v.is_finite());
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo <= hi { (lo, hi) } else { (0.0, 0.0) };
    let span = hi - lo;
    let scale = |v: f64| if span > 0.0 { (v - lo) / span } else { 0.0 };

    let width = MARGIN + cols.len() * CELL + 3 * LEGEND_W + 60;
    let height = MARGIN + rows.len() * CELL + 40;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="20" font-size="14">{title}</text>"#);
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="{}" >{}</text>"#,
        MARGIN - 28,
        escape(col_name)
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" transform="rotate(-90 12 {})">{}</text>"#,
        MARGIN + rows.len() * CELL / 2,
        MARGIN + rows.len() * CELL / 2,
        escape(row_name)
    );
    for (j, c) in cols.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{c}</text>"#,
            MARGIN + j * CELL + CELL / 2,
            MARGIN - 8
        );
    }
    for (i, (r, row)) in rows.iter().zip(grid).enumerate() {
        let y = MARGIN + i * CELL;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{r}</text>"#,
            MARGIN - 6,
            y + CELL / 2 + 4
        );
        for (j, &v) in row.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{}" y="{y}" width="{CELL}" height="{CELL}" fill="{}"><title>{v}</title></rect>"#,
                MARGIN + j * CELL,
                hex(ramp(scale(v)))
            );
        }
    }
    // legend: top is the maximum
    let lx = MARGIN + cols.len() * CELL + LEGEND_W;
    let lh = rows.len() * CELL;
    let _ = writeln!(
        s,
        r#"<defs><linearGradient id="ramp" x1="0" y1="1" x2="0" y2="0"><stop offset="0" stop-color="{}"/><stop offset="1" stop-color="{}"/></linearGradient></defs>"#,
        hex(ramp(0.0)),
        hex(if span > 0.0 { ramp(1.0) } else { ramp(0.0) })
    );
    let _ = writeln!(
        s,
        r#"<rect class="legend" x="{lx}" y="{MARGIN}" width="{LEGEND_W}" height="{lh}" fill="url(#ramp)" stroke="black" stroke-width="0.5"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text class="legend-max" x="{}" y="{}">{hi}</text>"#,
        lx + LEGEND_W + 4,
        MARGIN + 8
    );
    let _ = writeln!(
        s,
        r#"<text class="legend-min" x="{}" y="{}">{lo}</text>"#,
        lx + LEGEND_W + 4,
        MARGIN + lh
    );
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), RAMP_LOW);
        assert_eq!(ramp(1.0), RAMP_HIGH);
        assert_eq!(ramp(f64::NAN), RAMP_LOW);
    }

    #[test]
    fn uniform_grid_is_one_color() {
        let grid = vec![vec![0.0; 3]; 2];
        let svg = heatmap_svg("gain", "test", "da", &[0.0, 1.0], &[0.0, 0.5, 1.0], &grid);
        let fills: Vec<&str> = svg
            .lines()
            .filter(|l| l.contains(r#"class="cell""#))
            .map(|l| l.split("fill=\"").nth(1).unwrap().split('"').next().unwrap())
            .collect();
        assert_eq!(fills.len(), 6);
        assert!(fills.iter().all(|&f| f == "#f7fbff"));
        assert!(svg.contains(r#"class="legend-max" x="220" y="88">0<"#) || svg.contains(">0</text>"));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = [0.0, 0.1, 1.2];
        let cols = [0.5, 0.9];
        let grid = vec![vec![0.1 + 0.2, -0.0], vec![1.0 / 3.0, 5e-324], vec![0.979_999_999_999_999_9, 1.0]];
        let (r, c, g) = parse_grid_csv(&grid_csv(&rows, &cols, &grid)).unwrap();
        assert_eq!(r, rows);
        assert_eq!(c, cols);
        for (a, b) in g.iter().flatten().zip(grid.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
