//! Pipeline configuration. Each value comes from the first source that
//! sets it: command-line flag, `LEAFLET_*` environment variable, config file,
//! built-in default.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;

use leaflet_core::fusion::{DEFAULT_TEXT_WEIGHT, DEFAULT_TOP_K};
use leaflet_core::ocr::DEFAULT_LANGUAGES;

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_TESSERACT: &str = "tesseract";

/// Flags shared by all subcommands. Clap resolves flag-over-environment;
/// the config file fills whatever is still unset.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML config file; keys match the long flag names with underscores.
    #[arg(long, global = true, env = "LEAFLET_CONFIG")]
    pub config: Option<PathBuf>,
    /// Corpus manifest (JSON Lines).
    #[arg(long, global = true, env = "LEAFLET_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Extraction cache (JSON Lines).
    #[arg(long, global = true, env = "LEAFLET_CACHE")]
    pub cache: Option<PathBuf>,
    #[arg(long, global = true, env = "LEAFLET_TEXT_MODEL")]
    pub text_model: Option<PathBuf>,
    #[arg(long, global = true, env = "LEAFLET_IMAGE_MODEL")]
    pub image_model: Option<PathBuf>,
    /// Image-branch scores produced outside this tool; replaces the image model.
    #[arg(long, global = true, env = "LEAFLET_EXTERNAL_SCORES")]
    pub external_scores: Option<PathBuf>,
    /// Weight of the text branch in fusion.
    #[arg(long, global = true, env = "LEAFLET_TEXT_WEIGHT")]
    pub text_weight: Option<f64>,
    #[arg(long, global = true, env = "LEAFLET_TOP_K")]
    pub top_k: Option<usize>,
    /// OCR worker threads.
    #[arg(long, global = true, env = "LEAFLET_WORKERS")]
    pub workers: Option<usize>,
    /// OCR engine binary.
    #[arg(long, global = true, env = "LEAFLET_TESSERACT")]
    pub tesseract: Option<PathBuf>,
    /// OCR language packs, `+`-separated.
    #[arg(long, global = true, env = "LEAFLET_LANGUAGES")]
    pub languages: Option<String>,
    #[arg(long, global = true, env = "LEAFLET_SEED")]
    pub seed: Option<u64>,
    /// Review service bind address.
    #[arg(long, global = true, env = "LEAFLET_BIND")]
    pub bind: Option<String>,
    /// Review queue directory.
    #[arg(long, global = true, env = "LEAFLET_QUEUE")]
    pub queue: Option<PathBuf>,
    /// Review UI bundle served at `/`.
    #[arg(long, global = true, env = "LEAFLET_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    manifest: Option<PathBuf>,
    cache: Option<PathBuf>,
    text_model: Option<PathBuf>,
    image_model: Option<PathBuf>,
    external_scores: Option<PathBuf>,
    text_weight: Option<f64>,
    top_k: Option<usize>,
    workers: Option<usize>,
    tesseract: Option<PathBuf>,
    languages: Option<String>,
    seed: Option<u64>,
    bind: Option<String>,
    queue: Option<PathBuf>,
    static_dir: Option<PathBuf>,
}

/// Resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub manifest: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub text_model: Option<PathBuf>,
    pub image_model: Option<PathBuf>,
    pub external_scores: Option<PathBuf>,
    pub text_weight: f64,
    pub top_k: usize,
    pub workers: usize,
    pub tesseract: PathBuf,
    pub languages: String,
    pub seed: u64,
    pub bind: String,
    pub queue: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
}

/// Relative paths in a config file are taken relative to the file.
fn rebase(base: &Path, p: Option<PathBuf>) -> Option<PathBuf> {
    p.map(|p| if p.is_relative() { base.join(p) } else { p })
}

impl PipelineConfig {
    pub fn resolve(args: &ConfigArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
                let mut f: FileConfig = toml::from_str(&text).with_context(|| format!("parsing config file {}", path.display()))?;
                let base = path.parent().unwrap_or(Path::new("."));
                f.manifest = rebase(base, f.manifest);
                f.cache = rebase(base, f.cache);
                f.text_model = rebase(base, f.text_model);
                f.image_model = rebase(base, f.image_model);
                f.external_scores = rebase(base, f.external_scores);
                f.queue = rebase(base, f.queue);
                f.static_dir = rebase(base, f.static_dir);
                f
            }
            None => FileConfig::default(),
        };
        let a = args.clone();
        let cfg = PipelineConfig {
            manifest: a.manifest.or(file.manifest),
            cache: a.cache.or(file.cache),
            text_model: a.text_model.or(file.text_model),
            image_model: a.image_model.or(file.image_model),
            external_scores: a.external_scores.or(file.external_scores),
            text_weight: a.text_weight.or(file.text_weight).unwrap_or(DEFAULT_TEXT_WEIGHT),
            top_k: a.top_k.or(file.top_k).unwrap_or(DEFAULT_TOP_K),
            workers: a.workers.or(file.workers).unwrap_or(4),
            tesseract: a.tesseract.or(file.tesseract).unwrap_or_else(|| DEFAULT_TESSERACT.into()),
            languages: a.languages.or(file.languages).unwrap_or_else(|| DEFAULT_LANGUAGES.into()),
            seed: a.seed.or(file.seed).unwrap_or(0),
            bind: a.bind.or(file.bind).unwrap_or_else(|| DEFAULT_BIND.into()),
            queue: a.queue.or(file.queue),
            static_dir: a.static_dir.or(file.static_dir),
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if !(self.text_weight.is_finite() && self.text_weight > 0.0) {
            bail!("text weight must be a positive number, got {}", self.text_weight);
        }
        if self.workers == 0 {
            bail!("worker count must be at least 1");
        }
        if self.top_k == 0 {
            bail!("top-k must be at least 1");
        }
        Ok(())
    }

    /// A path that must be configured for the current command.
    pub fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        match value {
            Some(p) => Ok(p),
            None => bail!(
                "missing --{flag} (or LEAFLET_{}, or `{}` in the config file)",
                flag.to_uppercase().replace('-', "_"),
                flag.replace('-', "_")
            ),
        }
    }
}
