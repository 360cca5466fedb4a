use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct SolveRecord {
    pub label: String,
    pub status: Option<String>,
    pub gap: Option<f64>,
    pub objective: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub args: Vec<String>,
    /// sha256 over the effective argument list.
    pub config_digest: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub timings: BTreeMap<String, f64>,
    pub solves: Vec<SolveRecord>,
    pub details: BTreeMap<String, serde_json::Value>,
    #[serde(skip)]
    started: Option<(String, Instant)>,
}

pub fn digest(args: &[String]) -> String {
    let mut h = Sha256::new();
    for a in args {
        h.update(a.as_bytes());
        h.update([0u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &str, args: &[String]) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            args: args.to_vec(),
            config_digest: digest(args),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
            solves: Vec::new(),
            details: BTreeMap::new(),
            started: None,
        }
    }

    pub fn seed(&mut self, name: &str, v: u64) {
        self.seeds.insert(name.to_string(), v);
    }

    pub fn input(&mut self, p: impl AsRef<Path>) {
        self.inputs.push(p.as_ref().to_path_buf());
    }

    pub fn output(&mut self, p: impl AsRef<Path>) {
        self.outputs.push(p.as_ref().to_path_buf());
    }

    pub fn detail(&mut self, key: &str, v: impl Serialize) {
        self.details
            .insert(key.to_string(), serde_json::to_value(v).unwrap_or(serde_json::Value::Null));
    }

    pub fn schedule(&mut self, label: &str, s: &orsched::Schedule) {
        self.solves.push(SolveRecord {
            label: label.to_string(),
            status: s.status.map(|x| format!("{x:?}")),
            gap: s.gap,
            objective: s.objective.total,
        });
    }

    pub fn start(&mut self, phase: &str) {
        self.stop();
        self.started = Some((phase.to_string(), Instant::now()));
    }

    pub fn stop(&mut self) {
        if let Some((p, t)) = self.started.take() {
            *self.timings.entry(p).or_default() += t.elapsed().as_secs_f64();
        }
    }

    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.stop();
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self)? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable_hex() {
        let a = digest(&["solve".into(), "--seed=1".into()]);
        assert_eq!(a.len(), 64);
        assert_eq!(a, digest(&["solve".into(), "--seed=1".into()]));
        assert_ne!(a, digest(&["solve".into(), "--seed=2".into()]));
        // An argument boundary is part of the input.
        assert_ne!(digest(&["ab".into()]), digest(&["a".into(), "b".into()]));
    }
}
