//! JSON checkpoints for trained models and fitted calibrators.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Marker identifying checkpoint files written by this crate.
pub const CHECKPOINT_MAGIC: &str = "EDGECAL1";

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    magic: String,
    kind: String,
    body: T,
}

/// Writes `value` under a `kind` tag. Floats round-trip exactly.
pub fn save<T: Serialize>(path: &Path, kind: &str, value: &T) -> Result<()> {
    let env = Envelope {
        magic: CHECKPOINT_MAGIC.to_string(),
        kind: kind.to_string(),
        body: value,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(&env)?)?;
    Ok(())
}

/// Reads a checkpoint written by [`save`], checking its magic and kind.
pub fn load<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let env: Envelope<T> = serde_json::from_str(&fs::read_to_string(path)?)?;
    if env.magic != CHECKPOINT_MAGIC {
        return contract(format!("{} is not a checkpoint", path.display()));
    }
    if env.kind != kind {
        return contract(format!("{} holds a '{}', expected '{kind}'", path.display(), env.kind));
    }
    Ok(env.body)
}
