//! JSON summaries and CSV tables written by the command-line driver.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const TOOL: &str = "boxavg";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A named pass/fail assertion of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// The configuration after defaults and flag overrides.
    pub config: serde_json::Value,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub result: serde_json::Value,
}

impl Report {
    pub fn new<C: Serialize, R: Serialize>(command: &str, seed: u64, config: &C, checks: Vec<Check>, result: &R) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            seed,
            config: serde_json::to_value(config).expect("config serializes"),
            passed: checks.iter().all(|c| c.passed),
            checks,
            result: serde_json::to_value(result).expect("result serializes"),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Writes `<dir>/<name>.json` and returns its path.
pub fn write_json(dir: &Path, name: &str, report: &Report) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, report.to_json())?;
    Ok(path)
}

/// Writes serializable rows with a header row.
pub fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{name}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r).map_err(io::Error::other)?;
    }
    w.flush()?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        k: usize,
        value: f64,
    }

    #[test]
    fn json_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let checks = vec![Check::new("a", true, ""), Check::new("b", false, "x")];
        let r = Report::new("demo", 7, &serde_json::json!({"k": 1}), checks, &[1, 2]);
        assert!(!r.passed);
        let p = write_json(dir.path(), "demo", &r).unwrap();
        let back: Report = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(back, r);
        let c = write_csv(dir.path(), "rows", &[Row { k: 1, value: 0.5 }]).unwrap();
        assert_eq!(fs::read_to_string(c).unwrap(), "k,value\n1,0.5\n");
    }
}
