//! Versioned CSV reports and metadata sidecars.
//!
//! Every report opens with the schema line `# treeglass-schema v1`, then a
//! header row, then data rows. Floating-point fields are written in the
//! shortest decimal form that round-trips, so a report is byte-identical
//! across runs with the same configuration and seed. Trailing comment
//! lines carry run-level summaries such as fitted exponents.
//!
//! The sidecar `<out>.meta.json` echoes the merged configuration together
//! with the package version and wall time. It records provenance and is
//! the one artifact allowed to differ between otherwise identical runs.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde_json::json;
use treeglass_core::{Error, Result};

use crate::config::RunConfig;

/// First line of every report file; bump the version when columns change
/// meaning.
pub const SCHEMA_LINE: &str = "# treeglass-schema v1";

/// An in-memory report: header, rows and trailing comment lines.
#[derive(Debug)]
pub struct Report {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    comments: Vec<String>,
}

impl Report {
    /// Starts a report with the given column names.
    pub fn new(header: &[&str]) -> Self {
        Report {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            comments: Vec::new(),
        }
    }

    /// Appends a data row; the width must match the header.
    pub fn push_row(&mut self, row: Vec<String>) {
        assert_eq!(
            row.len(),
            self.header.len(),
            "report row width must match the header"
        );
        self.rows.push(row);
    }

    /// Appends a trailing comment line (the `# ` prefix is added here).
    pub fn push_comment(&mut self, line: impl Into<String>) {
        self.comments.push(line.into());
    }

    /// Serializes the report: schema line, CSV body, trailing comments.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(SCHEMA_LINE.as_bytes());
        buf.push(b'\n');
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(&self.header).map_err(csv_error)?;
            for row in &self.rows {
                w.write_record(row).map_err(csv_error)?;
            }
            w.flush()
                .map_err(|e| Error::Invalid(format!("cannot serialize report: {e}")))?;
        }
        for comment in &self.comments {
            buf.extend_from_slice(b"# ");
            buf.extend_from_slice(comment.as_bytes());
            buf.push(b'\n');
        }
        Ok(buf)
    }

    /// Writes the serialized report to `path`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| {
            Error::Invalid(format!("cannot write report {}: {e}", path.display()))
        })
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Invalid(format!("cannot serialize report: {e}"))
}

/// Shortest round-trip decimal form of a float. This is what keeps report
/// bytes stable: the same value always prints the same way.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Renders a yes/no verdict column.
pub fn fmt_bool(ok: bool) -> &'static str {
    if ok {
        "yes"
    } else {
        "no"
    }
}

/// Path of the metadata sidecar belonging to a report.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_os_string();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Writes the metadata sidecar: command name, merged configuration echo,
/// effective seed, package version and wall time.
pub fn write_sidecar(
    out: &Path,
    command: &str,
    config: &RunConfig,
    wall: Duration,
) -> Result<()> {
    let meta = json!({
        "command": command,
        "config": config,
        "seed": config.seed_or_default(),
        "version": env!("CARGO_PKG_VERSION"),
        "wall_time_secs": wall.as_secs_f64(),
    });
    let path = sidecar_path(out);
    let text = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::Invalid(format!("cannot serialize metadata: {e}")))?;
    std::fs::write(&path, text + "\n").map_err(|e| {
        Error::Invalid(format!("cannot write metadata {}: {e}", path.display()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_layout_is_schema_header_rows_comments() {
        let mut r = Report::new(&["a", "b"]);
        r.push_row(vec!["1".into(), fmt_f64(0.1)]);
        r.push_comment("fit: slope=2");
        let text = String::from_utf8(r.to_bytes().unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SCHEMA_LINE);
        assert_eq!(lines[1], "a,b");
        assert_eq!(lines[2], "1,0.1");
        assert_eq!(lines[3], "# fit: slope=2");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn float_formatting_round_trips() {
        for x in [0.1, 1.0 / 3.0, 2.0_f64.sqrt(), 1e-300, -7.25, 0.0] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s} must round-trip exactly");
        }
    }

    #[test]
    fn sidecar_path_appends_suffix() {
        assert_eq!(
            sidecar_path(Path::new("runs/gap.csv")),
            PathBuf::from("runs/gap.csv.meta.json")
        );
    }
}
