//! Provenance record written next to every fit, refine and error run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Default)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    /// Digest of the effective settings (see [`RunManifest::config`]).
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub seed_generated: bool,
    pub wall_time: Duration,
    pub inputs: Vec<(PathBuf, String)>,
    pub outputs: Vec<(PathBuf, String)>,
}

impl RunManifest {
    pub fn new(command_line: Vec<String>) -> Self {
        Self {
            command_line,
            ..Default::default()
        }
    }

    /// Hashes a canonical `key value` rendering of the settings.
    pub fn config(&mut self, settings: &[(&str, String)]) {
        let mut s = String::new();
        for (k, v) in settings {
            let _ = writeln!(s, "{k} {v}");
        }
        self.config_sha256 = sha256_hex(s.as_bytes());
    }

    pub fn input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.inputs.push((path.to_path_buf(), sha256_hex(&bytes)));
        Ok(bytes)
    }

    /// Writes `contents` to `path` and records its digest.
    pub fn output(&mut self, path: &Path, contents: &str) -> Result<()> {
        std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        self.outputs.push((path.to_path_buf(), sha256_hex(contents.as_bytes())));
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = String::from("# nafons run manifest\n[run]\n");
        let _ = writeln!(s, "command {}", self.command_line.join(" "));
        let _ = writeln!(s, "config_sha256 {}", self.config_sha256);
        match self.seed {
            Some(seed) if self.seed_generated => {
                let _ = writeln!(s, "seed {seed} generated");
            }
            Some(seed) => {
                let _ = writeln!(s, "seed {seed}");
            }
            None => {}
        }
        let _ = writeln!(s, "nafons_version {}", nafons::VERSION);
        let _ = writeln!(s, "cli_version {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "wall_time_s {:.3}", self.wall_time.as_secs_f64());
        s.push_str("\n[inputs]\n");
        for (p, d) in &self.inputs {
            let _ = writeln!(s, "{d} {}", p.display());
        }
        s.push_str("\n[outputs]\n");
        for (p, d) in &self.outputs {
            let _ = writeln!(s, "{d} {}", p.display());
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).with_context(|| format!("cannot write {}", path.display()))
    }
}

/// `report.txt` → `report.txt.manifest` (or `report.txt.<tag>.manifest`).
pub fn manifest_path(report: &Path, tag: Option<&str>) -> PathBuf {
    let mut name = report.as_os_str().to_owned();
    if let Some(t) = tag {
        name.push(".");
        name.push(t);
    }
    name.push(".manifest");
    PathBuf::from(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn manifest_paths() {
        assert_eq!(
            manifest_path(Path::new("a/r.txt"), None),
            PathBuf::from("a/r.txt.manifest")
        );
        assert_eq!(
            manifest_path(Path::new("r.txt"), Some("errors")),
            PathBuf::from("r.txt.errors.manifest")
        );
    }
}
