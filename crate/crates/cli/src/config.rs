//! Effective settings: CLI flag > config file > built-in default.

use std::path::{Path, PathBuf};

use qfuse_core::metrics::Cutoffs;
use qfuse_core::provider::{HashMode, InstructionSet, InstructionTemplate};
use qfuse_core::textproc::KeywordBound;
use qfuse_core::{FusionSpec, FusionStrategy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Hash,
    Http,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    seed: Option<u64>,
    threads: Option<usize>,
    provider: Option<ProviderKind>,
    endpoint: Option<String>,
    sentence_level: Option<bool>,
    strategy: Option<FusionStrategy>,
    w0: Option<f64>,
    k: Option<usize>,
    #[serde(default)]
    hash: HashFile,
    #[serde(default)]
    generation: GenerationFile,
    #[serde(default)]
    segmenter: SegmenterFile,
    #[serde(default)]
    filter: FilterFile,
    #[serde(default)]
    eval: EvalFile,
    #[serde(default)]
    http: HttpFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct HashFile {
    dim: Option<usize>,
    mode: Option<HashMode>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerationFile {
    fixture: Option<PathBuf>,
    num_sequences: Option<usize>,
    max_new_tokens: Option<usize>,
    decoding: Option<String>,
    allow_instruction_override: Option<bool>,
    instructions: Option<Vec<InstructionTemplate>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmenterFile {
    min_sentence_chars: Option<usize>,
    initials: Option<bool>,
    abbreviations: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FilterFile {
    keyword_bound: Option<KeywordBound>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalFile {
    ndcg: Option<usize>,
    mrr: Option<usize>,
    recall: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct HttpFile {
    batch_size: Option<usize>,
    max_in_flight: Option<usize>,
    retries: Option<usize>,
    backoff_ms: Option<u64>,
}

impl FileConfig {
    /// Reads a TOML file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut cfg: FileConfig = toml::from_str(&raw)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let anchor = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        anchor(&mut cfg.generation.fixture);
        anchor(&mut cfg.segmenter.abbreviations);
        Ok(cfg)
    }
}

/// Values given on the command line; `None` defers to the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub provider: Option<ProviderKind>,
    pub endpoint: Option<String>,
    pub sentence_level: Option<bool>,
    pub strategy: Option<FusionStrategy>,
    pub w0: Option<f64>,
    pub k: Option<usize>,
    pub fixture: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HashSettings {
    pub dim: usize,
    pub mode: HashMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationSettings {
    pub fixture: Option<PathBuf>,
    pub num_sequences: usize,
    pub max_new_tokens: usize,
    pub decoding: String,
    pub allow_instruction_override: bool,
    pub instructions: InstructionSet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmenterSettings {
    pub min_sentence_chars: usize,
    pub initials: bool,
    pub abbreviations: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HttpSettings {
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub retries: usize,
    pub backoff_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub seed: u64,
    pub threads: Option<usize>,
    pub provider: ProviderKind,
    pub endpoint: String,
    pub sentence_level: bool,
    pub strategy: FusionStrategy,
    pub w0: f64,
    pub k: usize,
    pub hash: HashSettings,
    pub generation: GenerationSettings,
    pub segmenter: SegmenterSettings,
    pub keyword_bound: KeywordBound,
    pub eval: Cutoffs,
    pub http: HttpSettings,
}

impl Settings {
    pub const DEFAULT_SEED: u64 = 42;

    pub fn resolve(file: FileConfig, cli: Overrides) -> Result<Self, CliError> {
        let defaults = Cutoffs::default();
        let instructions = match file.generation.instructions {
            Some(list) => InstructionSet::new(list)?,
            None => InstructionSet::default(),
        };
        let s = Settings {
            seed: cli.seed.or(file.seed).unwrap_or(Self::DEFAULT_SEED),
            threads: cli.threads.or(file.threads),
            provider: cli.provider.or(file.provider).unwrap_or(ProviderKind::Hash),
            endpoint: cli
                .endpoint
                .or(file.endpoint)
                .unwrap_or_else(|| "http://127.0.0.1:8000".into()),
            sentence_level: cli.sentence_level.or(file.sentence_level).unwrap_or(true),
            strategy: cli.strategy.or(file.strategy).unwrap_or(FusionStrategy::Manual),
            w0: cli.w0.or(file.w0).unwrap_or(FusionSpec::DEFAULT_W0),
            k: cli.k.or(file.k).unwrap_or(100),
            hash: HashSettings {
                dim: file.hash.dim.unwrap_or(256),
                mode: file.hash.mode.unwrap_or_default(),
            },
            generation: GenerationSettings {
                fixture: cli.fixture.or(file.generation.fixture),
                num_sequences: file.generation.num_sequences.unwrap_or(1),
                max_new_tokens: file.generation.max_new_tokens.unwrap_or(64),
                decoding: file.generation.decoding.unwrap_or_else(|| "greedy".into()),
                allow_instruction_override: file
                    .generation
                    .allow_instruction_override
                    .unwrap_or(false),
                instructions,
            },
            segmenter: SegmenterSettings {
                min_sentence_chars: file.segmenter.min_sentence_chars.unwrap_or(2),
                initials: file.segmenter.initials.unwrap_or(false),
                abbreviations: file.segmenter.abbreviations,
            },
            keyword_bound: file.filter.keyword_bound.unwrap_or_default(),
            eval: Cutoffs {
                ndcg: file.eval.ndcg.unwrap_or(defaults.ndcg),
                mrr: file.eval.mrr.unwrap_or(defaults.mrr),
                recall: file.eval.recall.unwrap_or(defaults.recall),
            },
            http: HttpSettings {
                batch_size: file.http.batch_size.unwrap_or(32),
                max_in_flight: file.http.max_in_flight.unwrap_or(4),
                retries: file.http.retries.unwrap_or(3),
                backoff_ms: file.http.backoff_ms.unwrap_or(200),
            },
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Usage(m.to_string()));
        if self.k == 0 {
            return bad("k must be positive");
        }
        if self.threads == Some(0) {
            return bad("threads must be positive");
        }
        if self.hash.dim == 0 {
            return bad("hash.dim must be positive");
        }
        if self.generation.num_sequences == 0 || self.generation.max_new_tokens == 0 {
            return bad("generation.num_sequences and generation.max_new_tokens must be positive");
        }
        if self.segmenter.min_sentence_chars == 0 {
            return bad("segmenter.min_sentence_chars must be positive");
        }
        if self.eval.ndcg == 0 || self.eval.mrr == 0 || self.eval.recall == 0 {
            return bad("eval cutoffs must be positive");
        }
        self.fusion_spec()?;
        Ok(())
    }

    pub fn fusion_spec(&self) -> Result<FusionSpec, CliError> {
        FusionSpec::new(self.strategy, self.w0).map_err(|e| CliError::Usage(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("settings serialize");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(toml_src: &str) -> FileConfig {
        toml::from_str(toml_src).unwrap()
    }

    #[test]
    fn precedence_cli_over_file_over_default() {
        let f = file("w0 = 0.3\nk = 50\nseed = 7\n[hash]\ndim = 16\n");
        let cli = Overrides {
            w0: Some(0.8),
            ..Default::default()
        };
        let s = Settings::resolve(f, cli).unwrap();
        assert_eq!(s.w0, 0.8);
        assert_eq!(s.k, 50);
        assert_eq!(s.seed, 7);
        assert_eq!(s.hash.dim, 16);
        assert_eq!(s.strategy, FusionStrategy::Manual);
        assert!(s.sentence_level);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("colour = 1").is_err());
        assert!(toml::from_str::<FileConfig>("[hash]\nsize = 1").is_err());
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let r = Settings::resolve(file("w0 = 1.5"), Overrides::default());
        assert!(matches!(r, Err(CliError::Usage(_))));
        let r = Settings::resolve(file("k = 0"), Overrides::default());
        assert!(matches!(r, Err(CliError::Usage(_))));
    }

    #[test]
    fn hash_tracks_settings() {
        let a = Settings::resolve(FileConfig::default(), Overrides::default()).unwrap();
        let b = Settings::resolve(FileConfig::default(), Overrides::default()).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = Settings::resolve(
            FileConfig::default(),
            Overrides {
                seed: Some(1),
                ..Default::default()
            },
        )
        .unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn translated_instructions() {
        let f = file(
            "[generation]\nallow_instruction_override = true\n[[generation.instructions]]\nkind = \"question\"\ntext = \"Lies den Text und stelle eine Frage.\"\n",
        );
        let s = Settings::resolve(f, Overrides::default()).unwrap();
        assert_eq!(s.generation.instructions.templates().len(), 1);
        assert!(s.generation.allow_instruction_override);
    }
}
