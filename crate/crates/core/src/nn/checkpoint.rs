//! Self-describing JSON checkpoints. Floats are written with shortest
//! round-trip formatting and parsed exactly, so save then load is bit-exact.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::error::{Error, Result};

pub const MLP_FORMAT: &str = "ood-baseline/mlp/1";

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    #[serde(flatten)]
    body: T,
}

#[derive(Deserialize)]
struct Tag {
    format: String,
}

#[derive(Serialize, Deserialize)]
struct MlpBody {
    model: Mlp,
}

pub(crate) fn encode<T: Serialize>(format: &str, body: &T) -> Result<String> {
    Ok(serde_json::to_string(&Envelope {
        format: format.to_string(),
        body,
    })?)
}

pub(crate) fn decode<T: DeserializeOwned>(format: &str, text: &str) -> Result<T> {
    let tag: Tag = serde_json::from_str(text)?;
    if tag.format != format {
        return Err(Error::CheckpointFormat { found: tag.format });
    }
    let env: Envelope<T> = serde_json::from_str(text)?;
    Ok(env.body)
}

pub(crate) fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn mlp_to_json(model: &Mlp) -> Result<String> {
    encode(MLP_FORMAT, &MlpBody {
        model: model.clone(),
    })
}

pub fn mlp_from_json(text: &str) -> Result<Mlp> {
    let body: MlpBody = decode(MLP_FORMAT, text)?;
    body.model.validate()?;
    Ok(body.model)
}

pub fn save_mlp(model: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &mlp_to_json(model)?)
}

pub fn load_mlp(path: impl AsRef<Path>) -> Result<Mlp> {
    mlp_from_json(&read(path.as_ref())?)
}
