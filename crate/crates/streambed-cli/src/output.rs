//! Deterministic run outputs: CSV tables plus a `*.meta.json` sidecar.
//!
//! Two invocations with the same arguments and seed list must produce
//! byte-identical files, so nothing here records timestamps, hostnames, or
//! absolute paths, and floats go through Rust's shortest round-trip
//! formatting.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// Resolves the output directory: `--out` flag, then `$STREAMBED_OUT`, then
/// `./streambed-out`.
pub fn resolve_out(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("STREAMBED_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("streambed-out"))
}

/// 64-bit FNV-1a over raw bytes; used to fingerprint the effective
/// configuration in the sidecar.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Shortest decimal that parses back to exactly `x`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// One CSV file: a stem (the file becomes `<stem>.csv`), a header, and rows
/// whose cells are already formatted.
pub struct Table {
    pub stem: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(stem: &str, header: &[&str]) -> Self {
        Table {
            stem: stem.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize)]
struct Meta<'a> {
    artifact_version: &'static str,
    command: &'a str,
    config_hash: String,
    seeds: &'a [u64],
    config: &'a serde_json::Value,
    outputs: Vec<String>,
}

/// Writes every table plus the `<command>.meta.json` sidecar into `out_dir`,
/// creating the directory if needed. Prints one `wrote <name>` line per file
/// (names only, so stdout does not depend on where the directory lives).
pub fn write_run(
    out_dir: &Path,
    command: &str,
    seeds: &[u64],
    config: &serde_json::Value,
    tables: &[Table],
) -> Result<(), CliError> {
    fs::create_dir_all(out_dir)?;
    let mut outputs = Vec::new();
    let mut data_rows = 0usize;
    for table in tables {
        let name = format!("{}.csv", table.stem);
        fs::write(out_dir.join(&name), table.render())?;
        println!("wrote {name}");
        outputs.push(name);
        data_rows += table.rows.len();
    }
    let config_hash = format!("{:016x}", fnv1a64(serde_json::to_string(config)?.as_bytes()));
    let meta = Meta {
        artifact_version: env!("CARGO_PKG_VERSION"),
        command,
        config_hash,
        seeds,
        config,
        outputs,
    };
    let meta_name = format!("{command}.meta.json");
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    fs::write(out_dir.join(&meta_name), text)?;
    println!("wrote {meta_name}");
    println!(
        "ok: {command}, {} file(s), {data_rows} data row(s)",
        tables.len() + 1
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_matches_reference_vectors() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn float_formatting_round_trips() {
        for &x in &[0.1, 1.0 / 3.0, 1e-300, -2.5, 0.0, 12345.6789] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn table_renders_header_and_rows_with_trailing_newline() {
        let mut t = Table::new("demo", &["a", "b"]);
        t.push(vec!["1".into(), "2".into()]);
        assert_eq!(t.render(), "a,b\n1,2\n");
    }
}
