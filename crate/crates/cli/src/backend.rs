//! Backend descriptors: `toy:PATH` or `remote:URL`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use coboost::backend::{CachedModel, RemoteModel};
use coboost::tokenizer::WordVocab;
use coboost::{Error, LanguageModel, ToyLm};

/// Environment variable whose value is sent as the `Authorization` header.
pub const AUTH_ENV: &str = "COBOOST_REMOTE_AUTH";

pub fn vocab_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".vocab");
    PathBuf::from(s)
}

/// Loads a toy model and, when present, its `.vocab` sidecar.
pub fn load_toy(path: &Path) -> Result<ToyLm> {
    let model = ToyLm::load(path).with_context(|| format!("loading model {}", path.display()))?;
    let vp = vocab_path(path);
    if !vp.exists() {
        return Ok(model);
    }
    let vocab = WordVocab::load(&vp)?;
    if vocab.len() != model.vocab_size() {
        return Err(Error::Format(format!(
            "{} has {} words but the model vocabulary is {}",
            vp.display(),
            vocab.len(),
            model.vocab_size()
        ))
        .into());
    }
    Ok(model.with_tokenizer(Arc::new(vocab)))
}

pub fn open_backend(spec: &str) -> Result<Box<dyn LanguageModel>> {
    if let Some(path) = spec.strip_prefix("toy:") {
        return Ok(Box::new(CachedModel::new(load_toy(Path::new(path))?)));
    }
    if let Some(url) = spec.strip_prefix("remote:") {
        let auth = std::env::var(AUTH_ENV).ok();
        let remote = RemoteModel::connect(url, None, auth)?;
        return Ok(Box::new(CachedModel::new(remote)));
    }
    Err(Error::InvalidArgument(format!("backend must be toy:PATH or remote:URL, got {spec:?}")).into())
}
