use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainedModel};
use crate::corpus::Vocabulary;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to classify raw text: vocabulary, class names and weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub class_names: Vec<String>,
    pub config: TrainConfig,
    pub vocabulary: Vocabulary,
    pub model: TrainedModel,
}

impl ModelBundle {
    pub fn new(
        class_names: Vec<String>,
        config: TrainConfig,
        vocabulary: Vocabulary,
        model: TrainedModel,
    ) -> Result<Self> {
        let bundle = Self {
            format_version: FORMAT_VERSION,
            class_names,
            config,
            vocabulary,
            model,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.model.input_dim() != self.vocabulary.len() {
            return Err(Error::ModelFormat(format!(
                "model input dimension {} does not match vocabulary size {}",
                self.model.input_dim(),
                self.vocabulary.len()
            )));
        }
        if self.model.num_classes() != self.class_names.len() {
            return Err(Error::ModelFormat(format!(
                "model has {} classes but {} class names are given",
                self.model.num_classes(),
                self.class_names.len()
            )));
        }
        Ok(())
    }
}

pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_vec(bundle)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&json).map_err(|e| Error::io(path, e))?;
    file.write_all(b"\n").map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bundle: ModelBundle = serde_json::from_slice(&bytes)?;
    bundle.validate()?;
    Ok(bundle)
}
