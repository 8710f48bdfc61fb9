//! CSV and manifest output. Floats are printed with 17 significant digits so
//! that reruns of the same config and seed reproduce output files bitwise.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::checkers::{Verdict, Witness};

/// 17 significant digits: enough to round-trip any f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Multi-coordinate points inside one CSV cell.
pub fn fmt_point(p: &[f64]) -> String {
    p.iter().map(|&c| fmt_f64(c)).collect::<Vec<_>>().join(";")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes a header row plus data rows, comma-delimited. Fields are written
/// verbatim; callers keep commas out of cell values.
pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: &[Vec<String>],
) -> std::io::Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)
}

/// Witness columns shared by the verdict CSVs.
pub fn witness_columns(witness: &Option<Witness>) -> [String; 4] {
    match witness {
        Some(w) => [
            w.member.to_string(),
            fmt_point(&w.point),
            fmt_f64(w.gap),
            w.atom.map(|a| a.to_string()).unwrap_or_default(),
        ],
        None => [String::new(), String::new(), String::new(), String::new()],
    }
}

pub fn verdict_columns(verdict: &Verdict) -> Vec<String> {
    let w = witness_columns(&verdict.witness);
    vec![
        verdict.status.as_str().to_string(),
        w[0].clone(),
        w[1].clone(),
        w[2].clone(),
        w[3].clone(),
    ]
}

/// The reproducibility record written next to every command's outputs:
/// tool version, exact command, config identity and hash, seeds, jobs and
/// the produced files. No timestamps, so a rerun reproduces it bitwise.
pub struct Manifest {
    pub command: String,
    pub config: String,
    pub config_sha256: String,
    pub seed: u64,
    pub jobs: usize,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn write(&self, out_dir: &Path) -> std::io::Result<PathBuf> {
        let path = out_dir.join("manifest.txt");
        let mut f = fs::File::create(&path)?;
        writeln!(f, "tool = mchar {}", env!("CARGO_PKG_VERSION"))?;
        writeln!(f, "command = {}", self.command)?;
        writeln!(f, "config = {}", self.config)?;
        writeln!(f, "config_sha256 = {}", self.config_sha256)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "jobs = {}", self.jobs)?;
        for o in &self.outputs {
            writeln!(f, "output = {o}")?;
        }
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, -1.5e-300, 4.0 / 3.0, 12345.678901234567, f64::MIN_POSITIVE] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
    }

    #[test]
    fn sha_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
