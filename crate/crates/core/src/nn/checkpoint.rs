use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Self-describing JSON container for trained models.
///
/// `tag` names the model family (`"vae"`, `"pude-kde"`, `"pude-em"`, `"nnpu"`,
/// `"mlp"`); `payload` holds the model's own serialization, including configs,
/// parameter arrays and batchnorm running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub tag: String,
    pub payload: serde_json::Value,
}

impl Checkpoint {
    pub fn new<T: Serialize>(tag: &str, model: &T) -> Result<Self> {
        Ok(Self {
            format_version: FORMAT_VERSION,
            tag: tag.to_string(),
            payload: serde_json::to_value(model)?,
        })
    }

    pub fn decode<T: DeserializeOwned>(&self, expected_tag: &str) -> Result<T> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "checkpoint format version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.tag != expected_tag {
            return Err(Error::Validation(format!(
                "checkpoint is tagged {:?}, expected {expected_tag:?}",
                self.tag
            )));
        }
        Ok(T::deserialize(&self.payload)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
