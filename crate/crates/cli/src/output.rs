//! CSV and JSON artifacts with a provenance line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

/// Where a run writes and what identifies it.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub command: &'static str,
    pub out: PathBuf,
    pub seed: u64,
    pub config_hash: String,
}

impl RunContext {
    pub fn provenance(&self) -> String {
        format!(
            "relaxplast {} command={} config_sha256={} seed={}",
            env!("CARGO_PKG_VERSION"),
            self.command,
            self.config_hash,
            self.seed
        )
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn csv(&self, name: &str, header: &[&str]) -> anyhow::Result<Csv> {
        Csv::create(&self.path(name), &self.provenance(), header)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> anyhow::Result<()> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            provenance: String,
            #[serde(flatten)]
            body: &'a T,
        }
        let path = self.path(name);
        let text = serde_json::to_string_pretty(&Wrapped { provenance: self.provenance(), body: value })?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// Comma-separated rows after a `#` provenance comment and a header.
pub struct Csv {
    out: BufWriter<File>,
    columns: usize,
    path: PathBuf,
}

impl Csv {
    pub fn create(path: &Path, provenance: &str, header: &[&str]) -> anyhow::Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "# {provenance}")?;
        writeln!(out, "{}", header.join(","))?;
        Ok(Self { out, columns: header.len(), path: path.to_owned() })
    }

    pub fn row(&mut self, fields: &[String]) -> anyhow::Result<()> {
        assert_eq!(fields.len(), self.columns, "row width differs from the header");
        writeln!(self.out, "{}", fields.join(",")).with_context(|| format!("writing {}", self.path.display()))
    }

    pub fn finish(mut self) -> anyhow::Result<()> {
        self.out.flush().with_context(|| format!("writing {}", self.path.display()))
    }
}

/// Shortest representation that reads back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}
