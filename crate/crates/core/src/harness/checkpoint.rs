//! Checkpoint files: a UTF-8 `key=value` header with the model config, a
//! blank line, then the binary parameter store.

use std::io::Write;
use std::path::Path;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig, ModelKind};

const BANNER: &str = "# npl checkpoint\n";

pub fn checkpoint_bytes(cfg: &ModelConfig, store: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(BANNER.as_bytes());
    out.extend_from_slice(cfg.to_kv_lines().as_bytes());
    out.push(b'\n');
    store.write_to(&mut out)?;
    Ok(out)
}

/// Writes through a temporary sibling and renames, so an interrupted write
/// never replaces the previous checkpoint.
pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, store: &ParamStore) -> Result<()> {
    let bytes = checkpoint_bytes(cfg, store)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(Model, ParamStore)> {
    let split = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::Format("checkpoint header is not terminated by a blank line".into()))?;
    let header = std::str::from_utf8(&bytes[..split + 1])
        .map_err(|e| Error::Format(format!("checkpoint header is not utf-8: {e}")))?;
    let cfg = ModelConfig::from_kv_lines(header)?;
    let saved = ParamStore::read_from(&bytes[split + 2..])?;
    let (model, mut store) = Model::new(cfg, 0)?;
    store.load_values(&saved)?;
    Ok((model, store))
}

/// Loads a checkpoint, optionally requiring a model kind.
pub fn load_checkpoint(path: &Path, expect: Option<ModelKind>) -> Result<(Model, ParamStore)> {
    let bytes = std::fs::read(path)?;
    let (model, store) = parse_checkpoint(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if let Some(kind) = expect {
        if model.cfg.kind != kind {
            return Err(Error::Config(format!(
                "{} holds a {} model, expected {kind}",
                path.display(),
                model.cfg.kind
            )));
        }
    }
    Ok((model, store))
}
