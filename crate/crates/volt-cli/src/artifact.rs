//! Versioned model container: JSON with an explicit format version, checked
//! on load.

use serde::{Deserialize, Serialize};
use std::path::Path;

use volt::error::{Result, VoltError};
use volt::model::{MtVoltModel, VoltModel};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub single: Option<VoltModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multi: Option<MtVoltModel>,
}

impl ModelArtifact {
    pub fn single(model: VoltModel) -> Self {
        ModelArtifact {
            format_version: FORMAT_VERSION,
            kind: "single".into(),
            single: Some(model),
            multi: None,
        }
    }

    pub fn multi(model: MtVoltModel) -> Self {
        ModelArtifact {
            format_version: FORMAT_VERSION,
            kind: "multi".into(),
            single: None,
            multi: Some(model),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| VoltError::Invalid(format!("serialize model: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let artifact: ModelArtifact = serde_json::from_str(&text)
            .map_err(|e| VoltError::Invalid(format!("parse model artifact: {e}")))?;
        if artifact.format_version != FORMAT_VERSION {
            return Err(VoltError::Invalid(format!(
                "unsupported model format version {} (expected {FORMAT_VERSION})",
                artifact.format_version
            )));
        }
        Ok(artifact)
    }
}
