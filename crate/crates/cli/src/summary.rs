//! The run-summary document written next to the CSV artifacts.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::Failure;

pub const SUMMARY_FILE: &str = "summary.json";

/// SHA-256 of the model file bytes followed by the serialized inputs.
pub fn inputs_digest(model_bytes: &[u8], inputs: &Value) -> String {
    let mut h = Sha256::new();
    h.update(model_bytes);
    h.update(b"\n");
    h.update(inputs.to_string().as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Summary {
    command: &'static str,
    inputs: Value,
    digest: String,
    started: Instant,
}

impl Summary {
    pub fn new(command: &'static str, model_bytes: &[u8], inputs: impl Serialize) -> Summary {
        let inputs = serde_json::to_value(inputs).expect("inputs serialize");
        Summary {
            command,
            digest: inputs_digest(model_bytes, &inputs),
            inputs,
            started: Instant::now(),
        }
    }

    /// Writes `summary.json` into `dir`.
    pub fn write(
        &self,
        dir: &Path,
        results: Value,
        artifacts: &[&str],
    ) -> Result<(), Failure> {
        let doc = json!({
            "command": self.command,
            "inputs": self.inputs,
            "inputs_digest": self.digest,
            "results": results,
            "artifacts": artifacts,
            "timings": { "total_seconds": self.started.elapsed().as_secs_f64() },
        });
        write_file(dir, SUMMARY_FILE, &serde_json::to_string_pretty(&doc)?)
    }
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

pub fn read_summary(dir: &Path) -> Result<Value, Failure> {
    let path = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}
