//! Corpus description: vocabulary, manifest, per-speaker splits, the
//! feature cache and batch collation.

pub mod batch;
pub mod cache;
pub mod toy;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub use batch::{collate, Batch, BatchItem};
pub use cache::{
    prepare, Corpus, CorpusInfo, PrepareOptions, PrepareReport, Utterance, UtteranceMeta,
};

/// Ordered symbol inventory; a token id is a symbol's line number.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(Error::Input(format!("invalid vocabulary symbol {s:?}")));
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary symbol {s:?}")));
            }
        }
        if symbols.is_empty() {
            return Err(Error::Input("empty vocabulary".into()));
        }
        Ok(Self { symbols, index })
    }

    /// One symbol per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_text(&self) -> String {
        self.symbols.iter().map(|s| format!("{s}\n")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    /// Space-separated symbols to ids.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let ids = text
            .split_whitespace()
            .map(|s| {
                self.id(s)
                    .ok_or_else(|| Error::Input(format!("unknown symbol {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if ids.is_empty() {
            return Err(Error::Input("empty symbol sequence".into()));
        }
        Ok(ids)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub wav: PathBuf,
    /// Space-separated IPA symbols as written in the manifest.
    pub text: String,
    pub language: usize,
    pub speaker: usize,
}

/// Parses a tab-separated manifest: id, wav path, IPA tokens, language id,
/// speaker id. Relative wav paths resolve against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |what: &str| Error::Input(format!("manifest line {}: {what}", n + 1));
        if fields.len() != 5 {
            return Err(bad(&format!(
                "expected 5 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let id = fields[0].trim().to_string();
        if id.is_empty() || id.contains(['/', '\\']) {
            return Err(bad(&format!("invalid utterance id {id:?}")));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Input(format!("duplicate utterance id {id:?}")));
        }
        let wav = Path::new(fields[1].trim());
        let parse_id = |s: &str, what: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| bad(&format!("{what} id {s:?} is not a non-negative integer")))
        };
        out.push(ManifestEntry {
            wav: if wav.is_absolute() {
                wav.to_path_buf()
            } else {
                base.join(wav)
            },
            text: fields[2].split_whitespace().collect::<Vec<_>>().join(" "),
            language: parse_id(fields[3], "language")?,
            speaker: parse_id(fields[4], "speaker")?,
            id,
        });
    }
    if out.is_empty() {
        return Err(Error::Input("manifest has no utterances".into()));
    }
    for (what, ids) in [
        (
            "language",
            out.iter().map(|e| e.language).collect::<BTreeSet<_>>(),
        ),
        (
            "speaker",
            out.iter().map(|e| e.speaker).collect::<BTreeSet<_>>(),
        ),
    ] {
        if ids.iter().copied().ne(0..ids.len()) {
            return Err(Error::Input(format!(
                "{what} ids {ids:?} are not dense from 0"
            )));
        }
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|&p| !(0.0..=1.0).contains(&p))
            || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "split fractions {parts:?} must be in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }

    /// Splits each speaker's utterances (in id order) into train, valid and
    /// test shares.
    pub fn split(&self, entries: &[ManifestEntry]) -> Result<Splits> {
        self.validate()?;
        let mut by_speaker: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
        for e in entries {
            by_speaker.entry(e.speaker).or_default().push(&e.id);
        }
        let mut out = Splits::default();
        for ids in by_speaker.values_mut() {
            ids.sort_unstable();
            let n = ids.len() as f64;
            let n_valid = (n * self.valid).round() as usize;
            let n_test = ((n * self.test).round() as usize).min(ids.len() - n_valid.min(ids.len()));
            let n_train = ids.len() - n_valid.min(ids.len()) - n_test;
            let (train, rest) = ids.split_at(n_train);
            let (test, valid) = rest.split_at(n_test);
            out.train.extend(train.iter().map(|s| s.to_string()));
            out.test.extend(test.iter().map(|s| s.to_string()));
            out.valid.extend(valid.iter().map(|s| s.to_string()));
        }
        Ok(out)
    }
}
