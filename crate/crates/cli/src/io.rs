use std::path::{Path, PathBuf};

use spanib_core::corpus::{read_conll_document, Sentence, TagScheme};

use crate::error::{CliError, CliResult};

/// Reads a CoNLL file, warning about repaired tags.
pub fn load_corpus(path: &Path, scheme: TagScheme) -> CliResult<Vec<Sentence>> {
    if !path.is_file() {
        return Err(CliError::usage(format!("corpus file not found: {}", path.display())));
    }
    let doc = read_conll_document(path, scheme)?;
    if doc.repaired_tags > 0 {
        log::warn!(
            "{}: {} I- tags did not continue an entity and were read as B-",
            path.display(),
            doc.repaired_tags
        );
    }
    Ok(doc.sentences)
}

pub fn load_nonempty(path: &Path, scheme: TagScheme, role: &str) -> CliResult<Vec<Sentence>> {
    let sentences = load_corpus(path, scheme)?;
    if sentences.is_empty() {
        return Err(CliError::usage(format!("{role} corpus {} has no sentences", path.display())));
    }
    Ok(sentences)
}

/// The flag value if given, else the configured path.
pub fn pick_path(flag: &Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.clone()
        .or_else(|| configured.clone())
        .ok_or_else(|| CliError::usage(format!("missing --{name} (or data.{name} in the config)")))
}

pub fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes")
}
