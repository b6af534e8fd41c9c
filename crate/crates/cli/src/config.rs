//! Optional TOML config. Command-line flags override every field.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use faaf_core::gateway::{BackendDescriptor, BackendKind};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub backend: Option<String>,
    pub model: Option<String>,
    pub fixture: Option<PathBuf>,
    pub formulation: Option<String>,
    pub variants: Option<Vec<String>>,
    pub out: Option<PathBuf>,
    pub parallel: Option<usize>,
    pub max_calls: Option<u64>,
    pub max_tokens: Option<u64>,
    pub cache_dir: Option<PathBuf>,
    /// Extra backends by name. The table key becomes the descriptor name.
    #[serde(default)]
    pub backends: BTreeMap<String, toml::Table>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn custom_backend(&self, name: &str) -> Result<Option<BackendDescriptor>> {
        let Some(table) = self.backends.get(name) else {
            return Ok(None);
        };
        let mut table = table.clone();
        table.insert("name".into(), toml::Value::String(name.to_string()));
        let d: BackendDescriptor = table
            .try_into()
            .with_context(|| format!("backend `{name}` in config"))?;
        Ok(Some(d))
    }
}

pub const DEFAULT_OPENAI_MODEL: &str = "gpt-4-turbo";
pub const DEFAULT_ANTHROPIC_MODEL: &str = "claude-3-opus-20240229";

/// Resolves a backend name: built-ins first, then the config's table.
pub fn resolve_backend(
    name: &str,
    model: Option<&str>,
    fixture: Option<&Path>,
    file: &FileConfig,
) -> Result<BackendDescriptor> {
    let mut d = match name {
        "mock-oracle" => BackendDescriptor::mock_oracle(),
        "mock-adversarial" => BackendDescriptor::mock_adversarial(),
        "mock-scripted" => {
            let Some(path) = fixture else {
                bail!("mock-scripted needs --fixture (or `fixture` in the config)");
            };
            BackendDescriptor::mock_scripted(path)
        }
        "openai" => BackendDescriptor::openai(model.unwrap_or(DEFAULT_OPENAI_MODEL)),
        "anthropic" => BackendDescriptor::anthropic(model.unwrap_or(DEFAULT_ANTHROPIC_MODEL)),
        other => match file.custom_backend(other)? {
            Some(d) => d,
            None => bail!(
                "unknown backend `{other}`; use mock-oracle, mock-scripted, mock-adversarial, openai, anthropic or a [backends.{other}] table"
            ),
        },
    };
    if let (BackendKind::HttpJsonTools | BackendKind::HttpXmlTools, Some(m)) = (d.kind, model) {
        d.model_id = m.to_string();
    }
    d.validate()?;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn custom_backends_come_from_tables() {
        let cfg: FileConfig = toml::from_str(
            r#"
            backend = "local"
            [backends.local]
            kind = "http_json_tools"
            model_id = "llama"
            endpoint = "http://localhost:8080/v1/chat/completions"
            api_key_env = "LOCAL_KEY"
            "#,
        )
        .unwrap();
        let d = resolve_backend("local", None, None, &cfg).unwrap();
        assert_eq!(d.name, "local");
        assert_eq!(d.model_id, "llama");
        assert_eq!(d.max_concurrency, 4);
        assert!(resolve_backend("nope", None, None, &cfg).is_err());
    }

    #[test]
    fn builtins() {
        let cfg = FileConfig::default();
        assert_eq!(resolve_backend("openai", Some("gpt-4o"), None, &cfg).unwrap().model_id, "gpt-4o");
        assert_eq!(
            resolve_backend("anthropic", None, None, &cfg).unwrap().model_id,
            DEFAULT_ANTHROPIC_MODEL
        );
        assert!(resolve_backend("mock-scripted", None, None, &cfg).is_err());
        assert!(resolve_backend("mock-oracle", None, None, &cfg).unwrap().kind.is_mock());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("datasett = 'x'").is_err());
    }
}
