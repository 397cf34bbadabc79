//! Text formats.
//!
//! Profiles and snapshots:
//!
//! ```text
//! # benjamin profile v1
//! # r = 0.5
//! # m = 1
//! # q = 2
//! # gamma = 1.5
//! # delta = 1
//! # c_s = 0.75
//! # normalized = false
//! # l = 128
//! # N = 2048
//! # t = 10            (snapshots only)
//! x phi
//! -1.2800000000000000e2 1.3877787807814457e-17
//! ...
//! ```
//!
//! CSV files start with a `# benjamin <kind> v1` line followed by a header row.

use std::fs;
use std::path::Path;

use crate::accel::IterateKind;
use crate::error::{Error, Result};
use crate::evolve::fmt_f;
use crate::solitary::{TraceEntry, WaveProfile};
use crate::spectral::{EquationParams, PeriodicGrid, SpectralField};

pub const PROFILE_MAGIC: &str = "# benjamin profile v1";

#[derive(Clone, Debug)]
pub struct ProfileFile {
    pub params: EquationParams,
    pub normalized: bool,
    pub time: Option<f64>,
    pub field: SpectralField,
}

impl ProfileFile {
    pub fn from_profile(p: &WaveProfile) -> Self {
        ProfileFile {
            params: p.params,
            normalized: p.normalized,
            time: None,
            field: p.field.clone(),
        }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        self.field.grid()
    }

    pub fn to_text(&self) -> String {
        let p = &self.params;
        let g = self.grid();
        let mut s = String::with_capacity(48 * g.len() + 256);
        s.push_str(PROFILE_MAGIC);
        s.push('\n');
        let mut kv = |k: &str, v: String| s.push_str(&format!("# {k} = {v}\n"));
        kv("r", fmt_f(p.r));
        kv("m", p.m.to_string());
        kv("q", p.q.to_string());
        kv("gamma", fmt_f(p.gamma));
        kv("delta", fmt_f(p.delta));
        kv("c_s", p.speed.map(fmt_f).unwrap_or_else(|| "none".into()));
        kv("normalized", self.normalized.to_string());
        kv("l", fmt_f(g.half_length()));
        kv("N", g.len().to_string());
        if let Some(t) = self.time {
            kv("t", fmt_f(t));
        }
        s.push_str("x phi\n");
        for (x, v) in g.nodes().iter().zip(self.field.values()) {
            s.push_str(&fmt_f(*x));
            s.push(' ');
            s.push_str(&fmt_f(*v));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(PROFILE_MAGIC) {
            return Err(Error::Parse("missing profile header line".into()));
        }
        let mut header = std::collections::BTreeMap::new();
        let mut rows = Vec::new();
        let mut in_body = false;
        for (no, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if in_body {
                    return Err(Error::Parse(format!("line {}: header after data", no + 2)));
                }
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", no + 2)))?;
                header.insert(k.trim().to_string(), v.trim().to_string());
            } else if !in_body {
                if line.split_whitespace().collect::<Vec<_>>() != ["x", "phi"] {
                    return Err(Error::Parse(format!("line {}: expected column header 'x phi'", no + 2)));
                }
                in_body = true;
            } else {
                let mut it = line.split_whitespace();
                let x = parse_f(it.next(), no + 2)?;
                let v = parse_f(it.next(), no + 2)?;
                if it.next().is_some() {
                    return Err(Error::Parse(format!("line {}: too many columns", no + 2)));
                }
                rows.push((x, v));
            }
        }
        let get = |k: &str| header.get(k).ok_or_else(|| Error::Parse(format!("missing header key '{k}'")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Parse(format!("bad value for '{k}'"))) };
        let int = |k: &str| -> Result<u32> { get(k)?.parse().map_err(|_| Error::Parse(format!("bad value for '{k}'"))) };
        let speed = match get("c_s")?.as_str() {
            "none" => None,
            v => Some(v.parse().map_err(|_| Error::Parse("bad value for 'c_s'".into()))?),
        };
        let params = EquationParams {
            r: num("r")?,
            m: int("m")?,
            q: int("q")?,
            gamma: num("gamma")?,
            delta: num("delta")?,
            speed,
        };
        params.validate()?;
        let normalized = get("normalized")?
            .parse()
            .map_err(|_| Error::Parse("bad value for 'normalized'".into()))?;
        let l = num("l")?;
        let n = int("N")? as usize;
        let time = header.get("t").map(|v| v.parse::<f64>()).transpose().map_err(|_| Error::Parse("bad value for 't'".into()))?;
        let grid = PeriodicGrid::new(l, n)?;
        if rows.len() != n {
            return Err(Error::Parse(format!("{} data rows for N = {n}", rows.len())));
        }
        for (j, (x, _)) in rows.iter().enumerate() {
            if (x - grid.node(j)).abs() > 1e-9 * l.max(1.0) {
                return Err(Error::Parse(format!("row {j}: x = {x} is not node {}", grid.node(j))));
            }
        }
        let field = SpectralField::from_values(&grid, rows.into_iter().map(|r| r.1).collect())?;
        Ok(ProfileFile {
            params,
            normalized,
            time,
            field,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn parse_f(tok: Option<&str>, line: usize) -> Result<f64> {
    tok.ok_or_else(|| Error::Parse(format!("line {line}: missing column")))?
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}: not a number")))
}

fn kind_name(k: IterateKind) -> &'static str {
    match k {
        IterateKind::Base => "base",
        IterateKind::Extrapolated => "extrapolated",
    }
}

/// `iteration,kind,accepted,sfe,residual`.
pub fn trace_csv(trace: &[TraceEntry]) -> String {
    let mut s = String::from("# benjamin trace v1\niteration,kind,accepted,sfe,residual\n");
    for e in trace {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            e.iteration,
            kind_name(e.kind),
            e.accepted,
            fmt_f(e.sfe),
            fmt_f(e.residual)
        ));
    }
    s
}

/// Generic two-or-more column CSV with the versioned comment line.
pub fn series_csv(kind: &str, columns: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut s = format!("# benjamin {kind} v1\n{}\n", columns.join(","));
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| fmt_f(*v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Reads the numeric rows of a CSV written by this crate (comment line and
/// header skipped, empty cells become NaN).
pub fn read_series_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Parse("empty CSV".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (no, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|c| if c.is_empty() { Ok(f64::NAN) } else { c.parse::<f64>() })
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|_| Error::Parse(format!("CSV row {}: not numeric", no + 1)))?;
        if row.len() != header.len() {
            return Err(Error::Parse(format!("CSV row {}: {} cells for {} columns", no + 1, row.len(), header.len())));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ProfileFile {
        let g = PeriodicGrid::new(12.5, 64).unwrap();
        ProfileFile {
            params: EquationParams::gbenjamin(2, 1.5).with_speed(0.75),
            normalized: false,
            time: Some(3.25),
            field: SpectralField::from_fn(&g, |x| 1.0 / (0.7 * x).cosh() + 1e-17 * x),
        }
    }

    #[test]
    fn profile_round_trip_is_exact() {
        let p = sample();
        let back = ProfileFile::parse(&p.to_text()).unwrap();
        assert_eq!(back.field.values(), p.field.values());
        assert_eq!(back.params, p.params);
        assert_eq!(back.time, Some(3.25));
        assert_eq!(back.grid(), p.grid());
    }

    #[test]
    fn profile_without_time_or_speed() {
        let mut p = sample();
        p.time = None;
        p.params.speed = None;
        let back = ProfileFile::parse(&p.to_text()).unwrap();
        assert_eq!(back.time, None);
        assert_eq!(back.params.speed, None);
    }

    #[test]
    fn profile_parse_errors() {
        let text = sample().to_text();
        assert!(ProfileFile::parse("nonsense").is_err());
        let short: String = text.lines().take(20).collect::<Vec<_>>().join("\n");
        assert!(matches!(ProfileFile::parse(&short), Err(Error::Parse(_))));
        let bad = text.replacen("# q = 2", "# q = two", 1);
        assert!(ProfileFile::parse(&bad).is_err());
        let missing = text.replacen("# delta", "# dlt", 1);
        assert!(ProfileFile::parse(&missing).is_err());
    }

    #[test]
    fn series_round_trip() {
        let csv = series_csv("phase-plot", &["phi", "dphi"], vec![vec![1.0, -0.1], vec![0.1 + 0.2, 1e-300]]);
        let (h, rows) = read_series_csv(&csv).unwrap();
        assert_eq!(h, vec!["phi", "dphi"]);
        assert_eq!(rows[1], vec![0.1 + 0.2, 1e-300]);
    }
}
