//! Run directories: written under a hidden temporary name and renamed into
//! place only when every file is on disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::Failure;

#[derive(Debug, Default)]
pub struct Output {
    /// (file name, CSV text)
    pub tables: Vec<(String, String)>,
    pub summary: serde_json::Value,
    /// (file name, SVG text)
    pub plots: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub tool: String,
    pub tool_version: String,
    pub master_seed: u64,
    pub workers: usize,
    pub wall_time_s: f64,
    pub config: RunConfig,
    /// sha256 of every table, keyed by file name.
    pub tables: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn io_err(what: &str, p: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{what} {}: {e}", p.display()))
}

fn free_name(parent: &Path, name: &str) -> PathBuf {
    let first = parent.join(name);
    if !first.exists() {
        return first;
    }
    (2..).map(|i| parent.join(format!("{name}-{i}"))).find(|p| !p.exists()).expect("unbounded search")
}

pub fn write(parent: &Path, name: &str, manifest: &Manifest, out: &Output) -> Result<PathBuf, Failure> {
    fs::create_dir_all(parent).map_err(|e| io_err("cannot create", parent, e))?;
    let tmp = parent.join(format!(".{name}.partial-{}", std::process::id()));
    let result = (|| {
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| io_err("cannot clear", &tmp, e))?;
        }
        fs::create_dir(&tmp).map_err(|e| io_err("cannot create", &tmp, e))?;
        let put = |file: &str, body: &[u8]| {
            let p = tmp.join(file);
            fs::write(&p, body).map_err(|e| io_err("cannot write", &p, e))
        };
        for (file, csv) in &out.tables {
            put(file, csv.as_bytes())?;
        }
        for (file, svg) in &out.plots {
            put(file, svg.as_bytes())?;
        }
        put("summary.json", serde_json::to_string_pretty(&out.summary).expect("json").as_bytes())?;
        put("manifest.json", serde_json::to_string_pretty(manifest).expect("json").as_bytes())?;
        let dest = free_name(parent, name);
        fs::rename(&tmp, &dest).map_err(|e| io_err("cannot publish", &dest, e))?;
        Ok(dest)
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    result
}

pub fn read_manifest(path: &Path) -> Result<Manifest, Failure> {
    let p = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
    let text = fs::read_to_string(&p).map_err(|e| Failure::Config(format!("cannot read {}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))
}
