//! Training configuration file.
//!
//! ```toml
//! [data]
//! cache = "cache"                 # prepared feature cache
//! manifest = "toy/manifest.tsv"   # only used in error hints
//! provider = "stub"               # must match the cache
//!
//! [run]
//! out_dir = "run"
//! steps = 2000
//! checkpoint_every = 500
//! eval_every = 500
//!
//! [train]                         # hyperparameters, see TrainConfig
//! batch_size = 2
//! seed = 0
//! [train.optimizer]
//! lr = 2e-4
//! [train.model]
//! hidden = 192
//! ```
//!
//! Relative paths resolve against the file's directory. `DTTS_CACHE`
//! overrides `data.cache`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dtts::corpus::cache::cache_root;
use dtts::training::TrainConfig;
use serde::Deserialize;

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub cache: PathBuf,
    pub manifest: Option<PathBuf>,
    pub provider: Option<String>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            cache: PathBuf::from("cache"),
            manifest: None,
            provider: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub out_dir: PathBuf,
    pub steps: u64,
    pub checkpoint_every: u64,
    pub eval_every: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("run"),
            steps: 2000,
            checkpoint_every: 500,
            eval_every: 500,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub data: DataSection,
    pub run: RunSection,
    pub train: TrainConfig,
}

impl ConfigFile {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: ConfigFile = toml::from_str(text)?;
        let resolve = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        cfg.data.cache = cache_root(&resolve(&cfg.data.cache));
        cfg.data.manifest = cfg.data.manifest.as_deref().map(resolve);
        cfg.run.out_dir = resolve(&cfg.run.out_dir);
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
            .with_context(|| format!("invalid configuration {}", path.display()))
    }
}
