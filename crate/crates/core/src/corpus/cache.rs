//! Content-addressed feature cache.
//!
//! ```text
//! <root>/corpus.toml            corpus-level counts and provider
//! <root>/vocab.txt
//! <root>/speaker_stats.tsv      speaker, voiced f0 mean, std
//! <root>/splits/{train,valid,test}.txt
//! <root>/utt/<id>/meta.toml     frames, tokens, ids, content hash
//! <root>/utt/<id>/{mel,pitch,energy,ld_pitch,ld_energy,ssl}.bin
//! ```
//!
//! The binary LD targets stored here come from uniform durations; training
//! recomputes them from the aligner's durations.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{read_manifest, ManifestEntry, SplitSpec, Splits, Vocabulary};
use crate::error::{Error, Result};
use crate::signal::io::{read_record, read_wav, write_record};
use crate::signal::{extract_pitch, frame_energy, mel_spectrogram, PerturbConfig, PitchTrack};
use crate::targets::linguistic::{perturbed_ssl, trim_to};
use crate::targets::{
    build_ld_targets, BinarySeq, DurationSeq, PitchMoments, SpeakerStats, SslProvider,
};
use crate::tensor::Tensor;

/// Environment variable overriding the cache root.
pub const CACHE_ENV: &str = "DTTS_CACHE";
/// Bumped whenever cached features change meaning.
const FORMAT: u32 = 1;
const FILES: [&str; 6] = ["mel", "pitch", "energy", "ld_pitch", "ld_energy", "ssl"];

/// `DTTS_CACHE` when set, otherwise `fallback`.
pub fn cache_root(fallback: &Path) -> PathBuf {
    std::env::var_os(CACHE_ENV).map_or_else(|| fallback.to_path_buf(), PathBuf::from)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub n_languages: usize,
    pub n_speakers: usize,
    pub ssl_dim: usize,
    pub provider: String,
    pub utterances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMeta {
    pub id: String,
    pub frames: usize,
    pub tokens: Vec<usize>,
    pub language: usize,
    pub speaker: usize,
    pub hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub meta: UtteranceMeta,
    /// `T × 80` log-mel.
    pub mel: Tensor<f32>,
    /// Raw f0 in Hz, 0 when unvoiced.
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
    pub ld_pitch: BinarySeq,
    pub ld_energy: BinarySeq,
    /// `T × D_ssl` features of the perturbed waveform.
    pub ssl: Tensor<f32>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.meta.frames
    }

    pub fn dir(root: &Path, id: &str) -> PathBuf {
        root.join("utt").join(id)
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        let dir = Self::dir(root, &self.meta.id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let col = |v: &[f64]| Tensor::from_vec(v.len(), 1, v.to_vec());
        let bin = |b: &BinarySeq| col(&b.as_reals::<f64>());
        write_record(&dir.join("mel.bin"), &self.mel)?;
        write_record(&dir.join("pitch.bin"), &col(&self.pitch))?;
        write_record(&dir.join("energy.bin"), &col(&self.energy))?;
        write_record(&dir.join("ld_pitch.bin"), &bin(&self.ld_pitch))?;
        write_record(&dir.join("ld_energy.bin"), &bin(&self.ld_energy))?;
        write_record(&dir.join("ssl.bin"), &self.ssl)?;
        // meta last: its presence marks a complete record
        let meta = dir.join("meta.toml");
        let text = toml::to_string(&self.meta).map_err(|e| Error::Input(e.to_string()))?;
        fs::write(&meta, text).map_err(|e| Error::io(&meta, e))
    }

    pub fn read_meta(root: &Path, id: &str) -> Result<UtteranceMeta> {
        let path = Self::dir(root, id).join("meta.toml");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| Error::Corrupt {
            path,
            reason: e.to_string(),
        })
    }

    pub fn read(root: &Path, id: &str) -> Result<Self> {
        let meta = Self::read_meta(root, id)?;
        let dir = Self::dir(root, id);
        let t = meta.frames;
        let l = meta.tokens.len();
        let load = |name: &str, rows: usize, cols: Option<usize>| -> Result<Tensor<f32>> {
            let path = dir.join(format!("{name}.bin"));
            let r = read_record(&path)?;
            if r.rows() != rows || cols.is_some_and(|c| c != r.cols()) {
                return Err(Error::Corrupt {
                    path,
                    reason: format!("shape {:?} does not match {rows} rows", r.shape()),
                });
            }
            Ok(r)
        };
        let reals = |t: Tensor<f32>| t.data().iter().map(|&v| f64::from(v)).collect::<Vec<_>>();
        let bits =
            |t: Tensor<f32>| BinarySeq(t.data().iter().map(|&v| u8::from(v > 0.5)).collect());
        Ok(Self {
            mel: load("mel", t, Some(crate::N_MELS))?,
            pitch: reals(load("pitch", t, Some(1))?),
            energy: reals(load("energy", t, Some(1))?),
            ld_pitch: bits(load("ld_pitch", l, Some(1))?),
            ld_energy: bits(load("ld_energy", l, Some(1))?),
            ssl: load("ssl", t, None)?,
            meta,
        })
    }

    fn complete(root: &Path, id: &str) -> bool {
        let dir = Self::dir(root, id);
        FILES.iter().all(|f| dir.join(format!("{f}.bin")).is_file())
            && dir.join("meta.toml").is_file()
    }
}

#[derive(Clone, Debug)]
pub struct PrepareOptions {
    pub provider: SslProvider,
    pub perturb: PerturbConfig,
    pub split: SplitSpec,
}

#[derive(Clone, Debug, Default)]
pub struct PrepareReport {
    pub computed: Vec<String>,
    pub cached: Vec<String>,
    pub failed: Vec<(String, String)>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn content_hash(
    audio: &[u8],
    entry: &ManifestEntry,
    tokens: &[usize],
    opts: &PrepareOptions,
) -> String {
    let mut h = Sha256::new();
    h.update(FORMAT.to_le_bytes());
    h.update((audio.len() as u64).to_le_bytes());
    h.update(audio);
    h.update(format!(
        "{tokens:?}|{}|{}|{:?}|{:?}",
        entry.language, entry.speaker, opts.provider, opts.perturb
    ));
    hex(&h.finalize())
}

/// Per-utterance perturbation seed derived from the base seed and the id.
fn perturb_seed(base: u64, id: &str) -> u64 {
    let d = Sha256::digest(id.as_bytes());
    base ^ u64::from_le_bytes(d[..8].try_into().unwrap())
}

fn uniform_durations(frames: usize, tokens: usize) -> DurationSeq {
    DurationSeq(
        (0..tokens)
            .map(|i| (i + 1) * frames / tokens - i * frames / tokens)
            .collect(),
    )
}

fn compute(
    entry: &ManifestEntry,
    tokens: Vec<usize>,
    hash: String,
    opts: &PrepareOptions,
) -> Result<Utterance> {
    let w = read_wav(&entry.wav)?;
    if w.samples.is_empty() || !w.is_finite() {
        return Err(Error::Input(format!(
            "{}: empty or non-finite audio",
            entry.wav.display()
        )));
    }
    let mel = mel_spectrogram(&w)?;
    let frames = mel.len();
    if frames < tokens.len() {
        return Err(Error::InfeasibleAlignment {
            frames,
            tokens: tokens.len(),
        });
    }
    let pitch = extract_pitch(&w)?;
    let energy = frame_energy(&mel);
    let cfg = PerturbConfig {
        seed: perturb_seed(opts.perturb.seed, &entry.id),
        ..opts.perturb.clone()
    };
    let ssl = trim_to(&perturbed_ssl(&w, &cfg, &opts.provider, &entry.id)?, frames)?;
    let (ld_pitch, ld_energy) =
        build_ld_targets(&pitch, &energy, &uniform_durations(frames, tokens.len()))?;
    Ok(Utterance {
        meta: UtteranceMeta {
            id: entry.id.clone(),
            frames,
            tokens,
            language: entry.language,
            speaker: entry.speaker,
            hash,
        },
        mel: mel.frames.cast(),
        pitch: pitch.f0,
        energy,
        ld_pitch,
        ld_energy,
        ssl: ssl.cast(),
    })
}

/// Builds or refreshes the cache for every manifest entry. Entries whose
/// content hash matches a complete cached record are skipped.
pub fn prepare(
    manifest: &Path,
    vocab: &Vocabulary,
    root: &Path,
    opts: &PrepareOptions,
) -> Result<PrepareReport> {
    opts.perturb.validate()?;
    let entries = read_manifest(manifest)?;
    let splits = opts.split.split(&entries)?;
    fs::create_dir_all(root.join("utt")).map_err(|e| Error::io(root, e))?;
    let mut report = PrepareReport::default();
    let mut tracks: Vec<(usize, PitchTrack)> = Vec::new();
    let mut ssl_dim = None;
    for entry in &entries {
        let result = (|| -> Result<(bool, Vec<f64>, usize)> {
            let tokens = vocab.encode(&entry.text)?;
            let audio = fs::read(&entry.wav).map_err(|e| Error::io(&entry.wav, e))?;
            let hash = content_hash(&audio, entry, &tokens, opts);
            if Utterance::complete(root, &entry.id) {
                if let Ok(meta) = Utterance::read_meta(root, &entry.id) {
                    if meta.hash == hash {
                        let u = Utterance::read(root, &entry.id)?;
                        return Ok((true, u.pitch, u.ssl.cols()));
                    }
                }
            }
            let u = compute(entry, tokens, hash, opts)?;
            u.write(root)?;
            Ok((false, u.pitch, u.ssl.cols()))
        })();
        match result {
            Ok((hit, pitch, dim)) => {
                if hit {
                    report.cached.push(entry.id.clone());
                } else {
                    report.computed.push(entry.id.clone());
                }
                ssl_dim.get_or_insert(dim);
                tracks.push((entry.speaker, PitchTrack { f0: pitch }));
            }
            Err(e) => report.failed.push((entry.id.clone(), e.to_string())),
        }
    }
    let stats = SpeakerStats::from_tracks(tracks.iter().map(|(s, t)| (*s, t)));
    write_stats(&root.join("speaker_stats.tsv"), &stats)?;
    vocab.save(&root.join("vocab.txt"))?;
    write_splits(root, &splits)?;
    let info = CorpusInfo {
        n_languages: entries.iter().map(|e| e.language).max().unwrap_or(0) + 1,
        n_speakers: entries.iter().map(|e| e.speaker).max().unwrap_or(0) + 1,
        ssl_dim: ssl_dim.unwrap_or(0),
        provider: opts.provider.mode().to_string(),
        utterances: entries.len(),
    };
    let path = root.join("corpus.toml");
    let text = toml::to_string(&info).map_err(|e| Error::Input(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

pub fn write_stats(path: &Path, stats: &SpeakerStats) -> Result<()> {
    let mut text = String::from("speaker\tmean\tstd\n");
    for (spk, m) in &stats.speakers {
        text.push_str(&format!("{spk}\t{:?}\t{:?}\n", m.mean, m.std));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_stats(path: &Path) -> Result<SpeakerStats> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let mut stats = SpeakerStats::default();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| corrupt(format!("{line:?}: {e}")))
        };
        if f.len() != 3 {
            return Err(corrupt(format!("bad line {line:?}")));
        }
        let spk = f[0]
            .parse::<usize>()
            .map_err(|e| corrupt(format!("{line:?}: {e}")))?;
        stats.speakers.insert(
            spk,
            PitchMoments {
                mean: parse(f[1])?,
                std: parse(f[2])?,
            },
        );
    }
    Ok(stats)
}

fn write_splits(root: &Path, s: &Splits) -> Result<()> {
    let dir = root.join("splits");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (name, ids) in [("train", &s.train), ("valid", &s.valid), ("test", &s.test)] {
        let path = dir.join(format!("{name}.txt"));
        let text: String = ids.iter().map(|i| format!("{i}\n")).collect();
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn read_split(root: &Path, name: &str) -> Result<Vec<String>> {
    let path = root.join("splits").join(format!("{name}.txt"));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// A prepared corpus loaded into memory.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub info: CorpusInfo,
    pub vocab: Vocabulary,
    pub stats: SpeakerStats,
    pub splits: Splits,
    /// All utterances in id order.
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn load(root: &Path) -> Result<Self> {
        let info_path = root.join("corpus.toml");
        if !info_path.is_file() {
            return Err(Error::Input(format!(
                "no prepared corpus at {}; run `dtts prepare` first",
                root.display()
            )));
        }
        let text = fs::read_to_string(&info_path).map_err(|e| Error::io(&info_path, e))?;
        let info: CorpusInfo = toml::from_str(&text).map_err(|e| Error::Corrupt {
            path: info_path.clone(),
            reason: e.to_string(),
        })?;
        let splits = Splits {
            train: read_split(root, "train")?,
            valid: read_split(root, "valid")?,
            test: read_split(root, "test")?,
        };
        let mut ids: Vec<&String> = splits
            .train
            .iter()
            .chain(&splits.valid)
            .chain(&splits.test)
            .collect();
        ids.sort();
        let utterances = ids
            .into_iter()
            .map(|id| {
                Utterance::read(root, id).map_err(|e| {
                    Error::Input(format!(
                        "cached features for {id} unusable ({e}); rerun `dtts prepare`"
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            vocab: Vocabulary::load(&root.join("vocab.txt"))?,
            stats: read_stats(&root.join("speaker_stats.tsv"))?,
            info,
            splits,
            utterances,
        })
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.utterances
            .binary_search_by(|u| u.meta.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.utterances[i])
    }

    /// Utterances of a named split, in split-file order.
    pub fn split(&self, name: &str) -> Result<Vec<&Utterance>> {
        let ids = match name {
            "train" => &self.splits.train,
            "valid" => &self.splits.valid,
            "test" => &self.splits.test,
            "all" => return Ok(self.utterances.iter().collect()),
            other => return Err(Error::Config(format!("unknown split {other:?}"))),
        };
        ids.iter()
            .map(|id| {
                self.get(id)
                    .ok_or_else(|| Error::Input(format!("split lists unknown utterance {id}")))
            })
            .collect()
    }
}
