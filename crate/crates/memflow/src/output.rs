//! Command artifacts and their on-disk layout
//! `<out>/<command>/<config-hash>/` with a manifest of SHA-256 digests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::RunError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Everything a command produces before it touches the file system.
#[derive(Clone, Debug, Default)]
pub struct Artifacts {
    pub command: String,
    /// `(relative name, contents)`; CSV contents exclude the hash line.
    pub files: Vec<(String, String)>,
    pub checks: Vec<Check>,
    pub summary: Value,
    /// Lines for standard output.
    pub lines: Vec<String>,
}

impl Artifacts {
    pub fn new(command: &str) -> Self {
        Self { command: command.to_string(), summary: json!({}), ..Self::default() }
    }

    pub fn file(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.to_string(), passed, detail: detail.into() });
    }

    pub fn say(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }

    /// Moves another command's artifacts under `prefix/`.
    pub fn absorb(&mut self, prefix: &str, other: Artifacts) {
        for (name, contents) in other.files {
            self.files.push((format!("{prefix}/{name}"), contents));
        }
        for c in other.checks {
            self.checks.push(Check { name: format!("{prefix}: {}", c.name), ..c });
        }
        for l in other.lines {
            self.lines.push(format!("[{prefix}] {l}"));
        }
        if let Value::Object(map) = &mut self.summary {
            map.insert(prefix.to_string(), other.summary);
        }
    }
}

/// `{:.17e}`, the shortest fixed format that round-trips every `f64`.
pub fn num(v: f64) -> String {
    format!("{v:.17e}")
}

/// CSV text from a header and rows of preformatted cells.
pub fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn stamp(name: &str, contents: &str, hash: &str) -> String {
    if name.ends_with(".csv") {
        format!("# config_hash={hash}\n{contents}")
    } else {
        contents.to_string()
    }
}

/// Writes the artifacts, `summary.json` and `manifest.json`; returns the
/// output directory.
pub fn write(out: &Path, art: &Artifacts, hash: &str) -> Result<PathBuf, RunError> {
    let dir = out.join(&art.command).join(hash);
    std::fs::create_dir_all(&dir)?;
    let summary = json!({
        "command": art.command,
        "config_hash": hash,
        "passed": art.failures() == 0,
        "checks": art.checks,
        "summary": art.summary,
    });
    let mut files: Vec<(String, String)> = art.files.iter().map(|(n, c)| (n.clone(), stamp(n, c, hash))).collect();
    files.push(("summary.json".to_string(), serde_json::to_string_pretty(&summary).expect("json") + "\n"));
    let mut entries = Vec::new();
    for (name, contents) in &files {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents)?;
        entries.push(json!({ "name": name, "bytes": contents.len(), "sha256": sha256_hex(contents.as_bytes()) }));
    }
    let manifest = json!({ "command": art.command, "config_hash": hash, "files": entries });
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("json") + "\n")?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let text = csv(&["a", "b"], vec![vec!["1".into(), "2".into()]]);
        assert_eq!(text, "a,b\n1,2\n");
    }

    #[test]
    fn written_files_declare_hash() {
        let dir = tempfile::tempdir().unwrap();
        let mut art = Artifacts::new("demo");
        art.file("x.csv", "a\n1\n".into());
        art.check("ok", true, "");
        let path = write(dir.path(), &art, "abcd").unwrap();
        let text = std::fs::read_to_string(path.join("x.csv")).unwrap();
        assert!(text.starts_with("# config_hash=abcd\n"));
        let manifest = std::fs::read_to_string(path.join("manifest.json")).unwrap();
        assert!(manifest.contains("x.csv") && manifest.contains("summary.json"));
    }

    proptest::proptest! {
        #[test]
        fn num_round_trips(bits in proptest::num::u64::ANY) {
            let v = f64::from_bits(bits);
            proptest::prop_assume!(v.is_finite());
            proptest::prop_assert_eq!(num(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
