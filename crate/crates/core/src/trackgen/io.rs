//! Dataset directory layout:
//!
//! ```text
//! meta                     key value lines
//! dates.csv                t,day
//! irregularities.csv       t,channel,<L position columns>
//! exogenous/<source>.csv   same layout; spatial-only sources use t = 0
//! ground_truth_u.csv       optional, channel is left/right
//! ```
//!
//! Reals are written with 17 significant digits so reads are bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use super::{TrackDataset, CHANNELS, SIDES};
use crate::embed::{ExogenousBundle, JOINT_TYPES, MAINTENANCE_CATEGORIES, RAINFALL_CHANNELS};
use crate::error::{Error, Result};
use crate::nn::Tensor3;

pub const FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "trackcast-dataset";

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn header(positions: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "channel".to_string()];
    h.extend((0..positions).map(|l| l.to_string()));
    h
}

fn write_table<F>(path: &Path, positions: usize, rows: usize, channels: &[&str], cell: F) -> Result<()>
where
    F: Fn(usize, usize, usize) -> String,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header(positions)).map_err(|e| csv_error(path, e))?;
    for t in 0..rows {
        for (c, name) in channels.iter().enumerate() {
            let mut rec = vec![t.to_string(), name.to_string()];
            rec.extend((0..positions).map(|l| cell(t, c, l)));
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

pub fn write_dataset(dataset: &TrackDataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    let (t_n, l_n) = (dataset.inspections(), dataset.positions());
    fs::create_dir_all(dir.join("exogenous")).map_err(|e| Error::io(dir, e))?;

    let meta = format!(
        "format {FORMAT_NAME}\nversion {FORMAT_VERSION}\npositions {l_n}\ninspections {t_n}\nground_truth {}\nprovenance {}\n",
        u8::from(dataset.ground_truth_u.is_some()),
        dataset.provenance.replace('\n', " ")
    );
    let meta_path = dir.join("meta");
    fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;

    let dates_path = dir.join("dates.csv");
    let mut w = csv::Writer::from_path(&dates_path).map_err(|e| csv_error(&dates_path, e))?;
    w.write_record(["t", "day"]).map_err(|e| csv_error(&dates_path, e))?;
    for (t, d) in dataset.dates.iter().enumerate() {
        w.write_record([t.to_string(), d.to_string()])
            .map_err(|e| csv_error(&dates_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&dates_path, e))?;

    let p = &dataset.irregularities;
    write_table(&dir.join("irregularities.csv"), l_n, t_n, &CHANNELS, |t, c, l| real(p.get(t, c, l)))?;

    let x = &dataset.exogenous;
    let exo = dir.join("exogenous");
    write_table(&exo.join("maintenance.csv"), l_n, t_n, &MAINTENANCE_CATEGORIES, |t, c, l| {
        x.maintenance_at(t, c, l).to_string()
    })?;
    write_table(&exo.join("under_structure.csv"), l_n, 1, &["category"], |_, _, l| {
        x.under_structure[l].to_string()
    })?;
    write_table(&exo.join("rail_joint.csv"), l_n, 1, &JOINT_TYPES, |_, c, l| x.joint_at(l, c).to_string())?;
    write_table(&exo.join("ballast_age.csv"), l_n, t_n, &["years"], |t, _, l| real(x.ballast_at(t, l)))?;
    write_table(&exo.join("tonnage.csv"), l_n, t_n, &["tonnage"], |t, _, l| real(x.tonnage_at(t, l)))?;
    write_table(&exo.join("rainfall.csv"), l_n, t_n, &RAINFALL_CHANNELS, |t, c, l| {
        real(x.rainfall_at(t, c, l))
    })?;

    if let Some(u) = &dataset.ground_truth_u {
        write_table(&dir.join("ground_truth_u.csv"), l_n, t_n, &SIDES, |t, c, l| real(u.get(t, c, l)))?;
    }
    Ok(())
}

struct Meta {
    positions: usize,
    inspections: usize,
    ground_truth: bool,
    provenance: String,
}

fn parse_meta(path: &Path) -> Result<Meta> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut fields = std::collections::BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once(' ').unwrap_or((line, ""));
        fields.insert(k.to_string(), (i + 1, v.trim().to_string()));
    }
    let get = |k: &str| -> Result<(usize, String)> {
        fields
            .get(k)
            .cloned()
            .ok_or_else(|| perr(0, format!("missing key `{k}`")))
    };
    let num = |k: &str| -> Result<usize> {
        let (line, v) = get(k)?;
        v.parse().map_err(|_| perr(line, format!("`{k}` must be a count, got `{v}`")))
    };
    let (line, format) = get("format")?;
    if format != FORMAT_NAME {
        return Err(perr(line, format!("unknown format `{format}`")));
    }
    let version = num("version")?;
    if version != FORMAT_VERSION as usize {
        return Err(perr(get("version")?.0, format!("unsupported version {version}")));
    }
    Ok(Meta {
        positions: num("positions")?,
        inspections: num("inspections")?,
        ground_truth: num("ground_truth")? == 1,
        provenance: fields.get("provenance").map(|(_, v)| v.clone()).unwrap_or_default(),
    })
}

/// Reads a `t,channel,values...` table into `[t][channel][l]` strings, checking
/// that every (t, channel) pair appears exactly once in order.
fn read_table(path: &Path, rows: usize, channels: &[&str], positions: usize) -> Result<Vec<Vec<Vec<String>>>> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let head = r.headers().map_err(|e| csv_error(path, e))?.clone();
    let expected = header(positions);
    if head.len() != expected.len() || head.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(perr(
            1,
            format!("header must be t,channel followed by {positions} position columns"),
        ));
    }
    let mut out = vec![vec![Vec::new(); channels.len()]; rows];
    let mut count = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let t: usize = rec[0]
            .parse()
            .map_err(|_| perr(line, format!("field t: `{}` is not a count", &rec[0])))?;
        let c = channels
            .iter()
            .position(|c| *c == &rec[1])
            .ok_or_else(|| perr(line, format!("field channel: unknown channel `{}`", &rec[1])))?;
        let (want_t, want_c) = (count / channels.len(), count % channels.len());
        if (t, c) != (want_t, want_c) {
            return Err(perr(
                line,
                format!("expected row t={want_t} channel={}, got t={t} channel={}", channels[want_c], &rec[1]),
            ));
        }
        out[t][c] = rec.iter().skip(2).map(str::to_string).collect();
        count += 1;
        if count > rows * channels.len() {
            return Err(perr(line, "more rows than declared inspections".into()));
        }
    }
    if count != rows * channels.len() {
        return Err(perr(0, format!("expected {} rows, found {count}", rows * channels.len())));
    }
    Ok(out)
}

fn parse_cells<T: std::str::FromStr>(
    path: &Path,
    table: &[Vec<Vec<String>>],
    kind: &str,
    mut put: impl FnMut(usize, usize, usize, T),
) -> Result<()> {
    for (t, row) in table.iter().enumerate() {
        for (c, vals) in row.iter().enumerate() {
            for (l, s) in vals.iter().enumerate() {
                let v = s.parse::<T>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: 0,
                    message: format!("t={t} channel={c} position={l}: `{s}` is not {kind}"),
                })?;
                put(t, c, l, v);
            }
        }
    }
    Ok(())
}

fn reals(path: &Path, rows: usize, channels: &[&str], positions: usize) -> Result<Tensor3> {
    let table = read_table(path, rows, channels, positions)?;
    let mut out = Tensor3::zeros(rows, channels.len(), positions);
    parse_cells::<f64>(path, &table, "a real number", |t, c, l, v| out.set(t, c, l, v))?;
    Ok(out)
}

fn ints(path: &Path, rows: usize, channels: &[&str], positions: usize, mut put: impl FnMut(usize, usize, usize, u8)) -> Result<()> {
    let table = read_table(path, rows, channels, positions)?;
    parse_cells::<u8>(path, &table, "a small non-negative integer", &mut put)
}

pub fn read_dataset(dir: &Path) -> Result<TrackDataset> {
    let meta = parse_meta(&dir.join("meta"))?;
    let (t_n, l_n) = (meta.inspections, meta.positions);
    if t_n == 0 || l_n == 0 {
        return Err(Error::Parse {
            path: dir.join("meta"),
            line: 0,
            message: "positions and inspections must be at least 1".into(),
        });
    }

    let dates_path = dir.join("dates.csv");
    let mut r = csv::Reader::from_path(&dates_path).map_err(|e| csv_error(&dates_path, e))?;
    let mut dates = Vec::with_capacity(t_n);
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(&dates_path, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let perr = |m: String| Error::Parse {
            path: dates_path.clone(),
            line,
            message: m,
        };
        if rec.len() != 2 || rec[0] != dates.len().to_string() {
            return Err(perr(format!("expected `{},<day>`", dates.len())));
        }
        dates.push(
            rec[1]
                .parse::<i64>()
                .map_err(|_| perr(format!("field day: `{}` is not an integer", &rec[1])))?,
        );
    }
    if dates.len() != t_n {
        return Err(Error::Parse {
            path: dates_path,
            line: 0,
            message: format!("expected {t_n} dates, found {}", dates.len()),
        });
    }

    let irregularities = reals(&dir.join("irregularities.csv"), t_n, &CHANNELS, l_n)?;

    let exo = dir.join("exogenous");
    let mut b = ExogenousBundle::zeros(t_n, l_n);
    ints(&exo.join("maintenance.csv"), t_n, &MAINTENANCE_CATEGORIES, l_n, |t, c, l, v| {
        b.set_maintenance(t, c, l, v)
    })?;
    let mut structure = vec![0u8; l_n];
    ints(&exo.join("under_structure.csv"), 1, &["category"], l_n, |_, _, l, v| structure[l] = v)?;
    b.under_structure = structure;
    let mut joints = vec![0u8; l_n * JOINT_TYPES.len()];
    ints(&exo.join("rail_joint.csv"), 1, &JOINT_TYPES, l_n, |_, c, l, v| {
        joints[l * JOINT_TYPES.len() + c] = v
    })?;
    b.rail_joint = joints;
    b.ballast_age = reals(&exo.join("ballast_age.csv"), t_n, &["years"], l_n)?.data().to_vec();
    b.tonnage = reals(&exo.join("tonnage.csv"), t_n, &["tonnage"], l_n)?.data().to_vec();
    b.rainfall = reals(&exo.join("rainfall.csv"), t_n, &RAINFALL_CHANNELS, l_n)?.data().to_vec();

    let gt_path: PathBuf = dir.join("ground_truth_u.csv");
    let ground_truth_u = if meta.ground_truth {
        Some(reals(&gt_path, t_n, &SIDES, l_n)?)
    } else {
        None
    };

    let ds = TrackDataset {
        dates,
        irregularities,
        exogenous: b,
        ground_truth_u,
        provenance: meta.provenance,
    };
    ds.validate()?;
    Ok(ds)
}
