//! Minimal CSV to SVG renderer: one x column against one or more y columns,
//! as lines or as scatter points. Output depends only on the input text.

use std::fmt::Write as _;
use std::path::Path;

use trackcast::{Error, Result};

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    Line,
    Scatter,
}

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.into(),
        line: 1,
        message: e.to_string(),
    })?;
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            path: path.into(),
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.into(),
            line: i + 2,
            message: e.to_string(),
        })?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(Table { header, rows })
}

fn column(t: &Table, name: &str) -> Result<usize> {
    t.header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Usage(format!("no column `{name}`; columns are {}", t.header.join(", "))))
}

/// Empty cells are skipped, anything else must parse as a number.
fn values(t: &Table, col: usize) -> Result<Vec<Option<f64>>> {
    t.rows
        .iter()
        .enumerate()
        .map(|(i, r)| match r.get(col).map(String::as_str) {
            None | Some("") => Ok(None),
            Some(s) => s
                .parse::<f64>()
                .map(|v| v.is_finite().then_some(v))
                .map_err(|_| Error::Usage(format!("row {}: `{s}` in column `{}` is not a number", i + 2, t.header[col]))),
        })
        .collect()
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    (0..=4).map(|k| lo + (hi - lo) * k as f64 / 4.0).collect()
}

fn span(v: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if lo > hi {
        return None;
    }
    Some(if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) })
}

pub fn render(t: &Table, x: &str, ys: &[String], kind: PlotKind) -> Result<String> {
    if ys.is_empty() {
        return Err(Error::Usage("no y columns to plot".into()));
    }
    let xv = values(t, column(t, x)?)?;
    let series: Vec<(String, Vec<(f64, f64)>)> = ys
        .iter()
        .map(|y| {
            let yv = values(t, column(t, y)?)?;
            let pts = xv
                .iter()
                .zip(&yv)
                .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
                .collect();
            Ok((y.clone(), pts))
        })
        .collect::<Result<_>>()?;
    let all = || series.iter().flat_map(|(_, p)| p.iter());
    let (x0, x1) = span(all().map(|p| p.0)).ok_or_else(|| Error::Usage("nothing to plot".into()))?;
    let (y0, y1) = span(all().map(|p| p.1)).expect("x span implies points");
    let px = |v: f64| LEFT + (v - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |v: f64| H - BOTTOM - (v - y0) / (y1 - y0) * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    for v in ticks(x0, x1) {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            px(v),
            H - BOTTOM + 16.0,
            fmt_tick(v)
        );
    }
    for v in ticks(y0, y1) {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            py(v) + 4.0,
            fmt_tick(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0,
        escape(x)
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        match kind {
            PlotKind::Line => {
                let path: Vec<String> = pts.iter().map(|&(a, b)| format!("{:.2},{:.2}", px(a), py(b))).collect();
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    path.join(" ")
                );
            }
            PlotKind::Scatter => {
                for &(a, b) in pts {
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}" fill-opacity="0.6"/>"#,
                        px(a),
                        py(b)
                    );
                }
            }
        }
        let ly = TOP + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            W - RIGHT + 10.0,
            ly - 9.0,
            W - RIGHT + 24.0,
            ly,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> Table {
        let mut lines = text.lines();
        Table {
            header: lines.next().unwrap().split(',').map(String::from).collect(),
            rows: lines.map(|l| l.split(',').map(String::from).collect()).collect(),
        }
    }

    #[test]
    fn line_plot_has_one_polyline_per_series() {
        let t = table("epoch,train_loss,val_loss\n1,3,4\n2,2,3\n3,1,2");
        let svg = render(&t, "epoch", &["train_loss".into(), "val_loss".into()], PlotKind::Line).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn empty_cells_are_skipped() {
        let t = table("x,y\n1,\n2,5\n3,6");
        let svg = render(&t, "x", &["y".into()], PlotKind::Scatter).unwrap();
        assert_eq!(svg.matches("<circle").count(), 2);
    }

    #[test]
    fn unknown_column_is_a_usage_error() {
        let t = table("x,y\n1,2");
        assert!(matches!(render(&t, "x", &["z".into()], PlotKind::Line), Err(Error::Usage(_))));
    }
}
