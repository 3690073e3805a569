//! Prompt templates with `{{name}}` placeholders.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use regex::Regex;
use std::sync::OnceLock;
use thiserror::Error;

pub const DEFAULT_DECOMPOSE: &str = include_str!("../templates/decompose.txt");
pub const DEFAULT_DECIDE: &str = include_str!("../templates/decide.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template {name:?} is missing placeholder {{{{{placeholder}}}}}")]
    MissingPlaceholder { name: String, placeholder: String },
    #[error("template {name:?}: no value supplied for {{{{{placeholder}}}}}")]
    MissingValue { name: String, placeholder: String },
    #[error("reading template {path}: {message}")]
    Io { path: String, message: String },
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").unwrap())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            body: body.into(),
        }
    }

    pub fn default_decompose() -> Self {
        Self::new("decompose", DEFAULT_DECOMPOSE)
    }

    pub fn default_decide() -> Self {
        Self::new("decide", DEFAULT_DECIDE)
    }

    pub fn from_file(path: &Path) -> Result<Self, TemplateError> {
        let body = fs::read_to_string(path).map_err(|e| TemplateError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "template".into());
        Ok(Self { name, body })
    }

    pub fn placeholders(&self) -> BTreeSet<String> {
        placeholder_re()
            .captures_iter(&self.body)
            .map(|c| c[1].to_string())
            .collect()
    }

    pub fn has_placeholder(&self, name: &str) -> bool {
        self.placeholders().contains(name)
    }

    /// Errors unless every name in `required` appears in the body.
    pub fn require(&self, required: &[&str]) -> Result<(), TemplateError> {
        let present = self.placeholders();
        match required.iter().find(|r| !present.contains(**r)) {
            Some(missing) => Err(TemplateError::MissingPlaceholder {
                name: self.name.clone(),
                placeholder: missing.to_string(),
            }),
            None => Ok(()),
        }
    }

    /// Substitutes every placeholder. Values are inserted verbatim, so a value
    /// containing `{{x}}` is not expanded again.
    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len());
        let mut last = 0;
        for caps in placeholder_re().captures_iter(&self.body) {
            let whole = caps.get(0).unwrap();
            let key = &caps[1];
            let value = values.get(key).ok_or_else(|| TemplateError::MissingValue {
                name: self.name.clone(),
                placeholder: key.to_string(),
            })?;
            out.push_str(&self.body[last..whole.start()]);
            out.push_str(value);
            last = whole.end();
        }
        out.push_str(&self.body[last..]);
        Ok(out)
    }
}
