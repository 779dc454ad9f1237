use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use clap::ValueEnum;
use serde::Serialize;

use crate::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Tsv,
    Json,
}

/// Provenance echoed at the top of every output.
#[derive(Debug, Clone, Serialize)]
pub struct Header {
    pub version: &'static str,
    pub seed: u64,
    pub threads: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cpu: Option<String>,
}

impl Header {
    pub fn new(seed: u64, threads: usize) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION"),
            seed,
            threads,
            cpu: None,
        }
    }

    pub fn with_cpu(mut self) -> Self {
        self.cpu = Some(cpu_model());
        self
    }

    /// `# xferscore <version> seed=<seed> threads=<n>[ cpu=<model>]`, newline
    /// terminated.
    pub fn line(&self) -> String {
        let mut s = format!(
            "# xferscore {} seed={} threads={}",
            self.version, self.seed, self.threads
        );
        if let Some(cpu) = &self.cpu {
            s.push_str(&format!(" cpu={cpu}"));
        }
        s.push('\n');
        s
    }
}

fn cpu_model() -> String {
    fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string())
}

pub fn json<T: Serialize>(header: &Header, body: &T) -> Result<String, Failure> {
    let value = serde_json::json!({ "header": header, "result": body });
    let mut s = serde_json::to_string_pretty(&value).map_err(|e| Failure::Numeric(format!("JSON encoding: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Input(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|()| stdout.flush())
                .map_err(|e| Failure::Input(format!("stdout: {e}")))
        }
    }
}

pub fn append_manifest_row(manifest: &Path, row: &str) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Input(format!("{}: {e}", manifest.display()));
    let fresh = !manifest.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(manifest)
        .map_err(io)?;
    if fresh {
        writeln!(f, "{}", xferscore::matrixio::MANIFEST_HEADER.join("\t")).map_err(io)?;
    }
    writeln!(f, "{row}").map_err(io)
}
