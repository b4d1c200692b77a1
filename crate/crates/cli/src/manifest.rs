//! The experiment manifest: a single serializable record of everything a
//! command needs, so any run can be reproduced exactly from the saved file.
//!
//! Resolution order is command-line flags, then the loaded manifest, then
//! built-in defaults. The resolved manifest is written next to the outputs
//! and its digest is embedded in every artifact. The output directory is
//! deliberately *not* part of the manifest, so re-running into a different
//! directory yields byte-identical artifacts.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use vdr_core::fit::SearchConfig;
use vdr_core::model::ModelSpec;
use vdr_core::quad::QuadConfig;
use vdr_core::sim::SimConfig;

/// Small per-command knobs that do not warrant their own config structs.
#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(default)]
pub struct CmdOptions {
    pub bins: Option<usize>,
    pub equal_count: bool,
    pub max_lag: Option<usize>,
    pub grid: Vec<u64>,
    pub reps: Option<usize>,
    pub threshold: Option<f64>,
    pub points: Option<usize>,
    pub rule: Option<u8>,
    pub row: Option<usize>,
    pub col: Option<usize>,
}

/// Complete description of one command invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub command: String,
    pub seed: u64,
    #[serde(default)]
    pub spec: Option<ModelSpec>,
    #[serde(default)]
    pub sim: Option<SimConfig>,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub quad: QuadConfig,
    /// Input file paths, in the order the command expects them.
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    #[serde(default)]
    pub options: CmdOptions,
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        ExperimentManifest {
            command: String::new(),
            seed: 0,
            spec: None,
            sim: None,
            search: SearchConfig::default(),
            quad: QuadConfig::default(),
            inputs: Vec::new(),
            options: CmdOptions::default(),
        }
    }
}

impl ExperimentManifest {
    /// FNV-1a digest of the serialized manifest, hex-encoded. Struct field
    /// order is fixed, so the serialization (and the digest) is stable.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("manifest serializes");
        let mut h = 0xcbf29ce484222325u64;
        for b in json.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// Provenance block embedded in every JSON artifact (and, as comment lines,
/// in every CSV artifact).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub manifest_digest: String,
}

impl Provenance {
    pub fn new(manifest: &ExperimentManifest) -> Self {
        Provenance {
            tool: "vdr".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: manifest.seed,
            manifest_digest: manifest.digest(),
        }
    }

    /// Comment lines appended to CSV outputs.
    pub fn csv_footer(&self) -> String {
        format!(
            "# seed={} manifest={} version={}\n",
            self.seed, self.manifest_digest, self.version
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExperimentManifest {
        ExperimentManifest {
            command: "fit".into(),
            seed: 42,
            spec: Some(ModelSpec::general_vdr(4, 7).unwrap()),
            inputs: vec![PathBuf::from("data.csv")],
            options: CmdOptions {
                bins: Some(10),
                ..CmdOptions::default()
            },
            ..ExperimentManifest::default()
        }
    }

    #[test]
    fn manifest_json_round_trips() {
        let m = sample();
        let json = m.to_json();
        let back: ExperimentManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_json(), json);
        assert_eq!(back.digest(), m.digest());
    }

    #[test]
    fn digest_is_stable_and_content_sensitive() {
        let m = sample();
        assert_eq!(m.digest(), m.clone().digest());
        let mut other = sample();
        other.seed = 43;
        assert_ne!(m.digest(), other.digest());
    }

    #[test]
    fn defaults_fill_missing_fields() {
        let m: ExperimentManifest =
            serde_json::from_str(r#"{"command":"simulate","seed":7}"#).unwrap();
        assert_eq!(m.search.n_starts, SearchConfig::default().n_starts);
        assert!(m.inputs.is_empty());
    }
}
