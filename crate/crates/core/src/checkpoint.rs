//! Versioned JSON checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::meta::MetaState;
use crate::{Error, Result};

pub const FORMAT: &str = "neuronml-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub state: MetaState,
}

impl Checkpoint {
    pub fn new(config: &RunConfig, state: &MetaState) -> Self {
        Self { format: FORMAT.into(), version: VERSION, config: config.clone(), state: state.clone() }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("not a JSON document: {e}")))?;
        if value.get("format").and_then(|f| f.as_str()) != Some(FORMAT) {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == VERSION as u64 => {}
            Some(v) => return Err(Error::Checkpoint(format!("unsupported checkpoint version {v} (expected {VERSION})"))),
            None => return Err(Error::Checkpoint("checkpoint has no version".into())),
        }
        let ck: Checkpoint = serde_json::from_value(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ck.check()?;
        Ok(ck)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn check(&self) -> Result<()> {
        let net = &self.state.net;
        let dims = net.dims();
        let expected: usize = dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        let bad = dims.len() < 2
            || dims.contains(&0)
            || net.activations().len() != dims.len() - 1
            || net.params().len() != expected
            || self.state.mask.logits.len() != net.mask_len(self.state.mask.granularity)
            || self.state.tracker.importance.len() != self.state.mask.logits.len();
        if bad {
            return Err(Error::Checkpoint("checkpoint arrays do not match its architecture".into()));
        }
        if net.params().iter().chain(&self.state.mask.logits).any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("checkpoint holds non-finite values".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = RunConfig { hidden: vec![3], iterations: 0, ..RunConfig::default() };
        let state = MetaState::init(&cfg.train_config()).unwrap();
        Checkpoint::new(&cfg, &state)
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let text = serde_json::to_string(&sample()).unwrap().replace("\"version\":1", "\"version\":99");
        let err = Checkpoint::from_json(&text).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(ref m) if m.contains("99")));
    }

    #[test]
    fn missing_file_is_a_checkpoint_error() {
        assert!(matches!(Checkpoint::load(Path::new("/nonexistent/ck.json")), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn truncated_arrays_are_rejected() {
        let mut ck = sample();
        ck.state.mask.logits.pop();
        let text = serde_json::to_string(&ck).unwrap();
        assert!(matches!(Checkpoint::from_json(&text), Err(Error::Checkpoint(_))));
    }
}
