//! Report emission: every artifact is a JSON envelope whose payload is a
//! pure function of (config, seed). Timestamps live in a separate metadata
//! block so reports stay byte-comparable; truncation and surrogate flags
//! ride along explicitly.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::errors::QResult;

#[derive(Clone, Debug, Serialize)]
pub struct Meta {
    pub timestamp_unix: u64,
    pub tool: String,
    pub version: String,
}

impl Meta {
    pub fn now() -> Meta {
        let timestamp_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Meta {
            timestamp_unix,
            tool: "quenched".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// The envelope around every emitted report.
#[derive(Clone, Debug, Serialize)]
pub struct Report<T: Serialize> {
    pub meta: Meta,
    pub config_hash: String,
    pub seed: u64,
    /// Truncation and surrogate caveats that apply to the payload
    /// (A_L-window truncation, fitted decay prefactor, relaxation horizon).
    pub flags: Vec<String>,
    pub report: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(config_hash: &str, seed: u64, flags: Vec<String>, report: T) -> Report<T> {
        Report { meta: Meta::now(), config_hash: config_hash.to_string(), seed, flags, report }
    }

    pub fn to_json(&self) -> QResult<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The deterministic part: everything except the metadata block.
    pub fn deterministic_json(&self) -> QResult<String> {
        #[derive(Serialize)]
        struct Stripped<'a, T: Serialize> {
            config_hash: &'a str,
            seed: u64,
            flags: &'a [String],
            report: &'a T,
        }
        Ok(serde_json::to_string_pretty(&Stripped {
            config_hash: &self.config_hash,
            seed: self.seed,
            flags: &self.flags,
            report: &self.report,
        })?)
    }

    pub fn write(&self, path: &Path) -> QResult<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_json()?.as_bytes())?;
        file.write_all(b"\n")?;
        Ok(())
    }
}

/// Write a CSV table: '.' decimal, '\n' line endings, one header row.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<f64>]) -> QResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::with_capacity(rows.len() * 32 + header.len() + 1);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&format!("{v}"));
            first = false;
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Serialize a grid function with its parameters in the header.
pub fn write_grid_csv(
    path: &Path,
    g: &crate::holder::HolderFunction,
    alpha: f64,
    xi: f64,
) -> QResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::new();
    out.push_str(&format!("# M={} alpha={alpha} xi={xi}\n", g.grid_size()));
    out.push_str("value\n");
    for v in g.values() {
        out.push_str(&format!("{v}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read back a grid CSV written by `write_grid_csv`.
pub fn read_grid_csv(path: &Path) -> QResult<(crate::holder::HolderFunction, f64, f64)> {
    let text = std::fs::read_to_string(path)?;
    let mut alpha = 1.0;
    let mut xi = 0.25;
    let mut values = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            for part in rest.split_whitespace() {
                if let Some(v) = part.strip_prefix("alpha=") {
                    alpha = v.parse().unwrap_or(alpha);
                } else if let Some(v) = part.strip_prefix("xi=") {
                    xi = v.parse().unwrap_or(xi);
                }
            }
        } else if line != "value" && !line.is_empty() {
            values.push(line.parse::<f64>().map_err(|e| {
                crate::errors::QuenchedError::Argument(format!("bad grid csv value: {e}"))
            })?);
        }
    }
    Ok((crate::holder::HolderFunction::from_values(values)?, alpha, xi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Clone)]
    struct Payload {
        x: f64,
        tag: String,
    }

    #[test]
    fn deterministic_part_excludes_meta() {
        let payload = Payload { x: 0.125, tag: "t".into() };
        let a = Report::new("abc", 7, vec!["flag".into()], payload.clone());
        std::thread::sleep(std::time::Duration::from_millis(5));
        let b = Report::new("abc", 7, vec!["flag".into()], payload);
        assert_eq!(a.deterministic_json().unwrap(), b.deterministic_json().unwrap());
        assert!(a.to_json().unwrap().contains("timestamp_unix"));
    }

    #[test]
    fn grid_csv_roundtrip() {
        let dir = std::env::temp_dir().join("quenched_report_test");
        let path = dir.join("grid.csv");
        let g = crate::holder::HolderFunction::from_fn(64, |x| x * x - 0.3).unwrap();
        write_grid_csv(&path, &g, 1.0, 0.25).unwrap();
        let (back, alpha, xi) = read_grid_csv(&path).unwrap();
        assert_eq!(alpha, 1.0);
        assert_eq!(xi, 0.25);
        assert_eq!(g.values(), back.values());
        std::fs::remove_dir_all(&dir).ok();
    }
}
