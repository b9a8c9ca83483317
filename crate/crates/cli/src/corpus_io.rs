//! On-disk corpus layout:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/pair_000/source_1/utt_000.wav ...   (last file is the test utterance)
//! <dir>/pair_000/source_2/utt_000.wav ...
//! <dir>/pair_000/mixture.wav
//! <dir>/pair_000/reference_1.wav
//! <dir>/pair_000/reference_2.wav
//! ```
//!
//! Loading re-derives the mixture and references from the source
//! directories, so hand-assembled corpora (for example recorded speech) only
//! need the `source_*` folders.

use std::fs;
use std::path::{Path, PathBuf};

use gensep::corpus::{corpus_hash, derive_seed, ingest_wav_dir, pair_from_sources, CorpusConfig, ExperimentPair};
use gensep::signal::{write_wav, Waveform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
const MANIFEST_FORMAT: &str = "gensep-corpus/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub label: String,
    pub seed: u64,
    pub dir: String,
    pub train: Vec<String>,
    pub test: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub id: usize,
    pub seed: u64,
    pub dir: String,
    pub hash: String,
    pub sources: [SourceEntry; 2],
    pub mixture: String,
    pub references: [String; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format: String,
    pub corpus_hash: String,
    pub sample_rate: u32,
    pub config: Option<CorpusConfig>,
    pub pairs: Vec<PairEntry>,
}

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub pairs: Vec<ExperimentPair>,
    pub hash: String,
}

pub fn pair_dir_name(id: usize) -> String {
    format!("pair_{id:03}")
}

fn write(path: &Path, w: &Waveform) -> CliResult<()> {
    Ok(write_wav(path, w)?)
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write_pair(root: &Path, pair: &ExperimentPair) -> CliResult<PairEntry> {
    let dir = pair_dir_name(pair.id);
    let mut sources = Vec::with_capacity(2);
    for (k, src) in pair.sources.iter().enumerate() {
        let sdir = format!("{dir}/source_{}", k + 1);
        create_dir(&root.join(&sdir))?;
        let name = |j: usize| format!("{sdir}/utt_{j:03}.wav");
        let mut train = Vec::with_capacity(src.train.len());
        for (j, w) in src.train.iter().enumerate() {
            write(&root.join(name(j)), w)?;
            train.push(name(j));
        }
        let test = name(src.train.len());
        write(&root.join(&test), &src.test)?;
        sources.push(SourceEntry { label: src.label.clone(), seed: src.seed, dir: sdir, train, test });
    }
    let mixture = format!("{dir}/mixture.wav");
    write(&root.join(&mixture), &pair.mixture)?;
    let references = [format!("{dir}/reference_1.wav"), format!("{dir}/reference_2.wav")];
    for (path, w) in references.iter().zip(&pair.references) {
        write(&root.join(path), w)?;
    }
    let sources: [SourceEntry; 2] = sources.try_into().expect("two sources");
    Ok(PairEntry {
        id: pair.id,
        seed: pair.seed,
        dir,
        hash: corpus_hash(std::slice::from_ref(pair)),
        sources,
        mixture,
        references,
    })
}

/// Writes every pair and the manifest. Call inside a rayon pool to control
/// parallelism.
pub fn write_corpus(root: &Path, pairs: &[ExperimentPair], config: Option<&CorpusConfig>) -> CliResult<CorpusManifest> {
    create_dir(root)?;
    let entries = pairs.par_iter().map(|p| write_pair(root, p)).collect::<CliResult<Vec<_>>>()?;
    let manifest = CorpusManifest {
        format: MANIFEST_FORMAT.into(),
        corpus_hash: corpus_hash(pairs),
        sample_rate: pairs.first().map_or(0, |p| p.mixture.sample_rate),
        config: config.cloned(),
        pairs: entries,
    };
    let path = root.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&path, json).map_err(|e| io_err(&path, e))?;
    Ok(manifest)
}

fn load_pair(root: &Path, id: usize, seed: u64, dir: &str, sample_rate: u32) -> CliResult<ExperimentPair> {
    let load = |k: usize| -> CliResult<_> {
        let sdir = root.join(dir).join(format!("source_{k}"));
        let mut c = ingest_wav_dir(&sdir, sample_rate, &format!("source_{k}"))?;
        c.seed = derive_seed(seed, k as u64 - 1);
        Ok(c)
    };
    Ok(pair_from_sources(id, seed, [load(1)?, load(2)?])?)
}

/// Loads a corpus directory. With a manifest, its pair list, labels and
/// seeds are used and every hash is verified; without one, `pair_*`
/// directories are taken in name order.
pub fn load_corpus(root: &Path, sample_rate: u32) -> CliResult<LoadedCorpus> {
    let manifest_path = root.join(MANIFEST);
    let pairs = if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
        let m: CorpusManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", manifest_path.display())))?;
        if m.format != MANIFEST_FORMAT {
            return Err(CliError::Data(format!("{}: unknown format {:?}", manifest_path.display(), m.format)));
        }
        let pairs = m
            .pairs
            .par_iter()
            .map(|e| {
                let mut p = load_pair(root, e.id, e.seed, &e.dir, sample_rate)?;
                for (src, entry) in p.sources.iter_mut().zip(&e.sources) {
                    src.label.clone_from(&entry.label);
                    src.seed = entry.seed;
                }
                let hash = corpus_hash(std::slice::from_ref(&p));
                if hash != e.hash {
                    return Err(CliError::Data(format!("{}: audio does not match the manifest hash", e.dir)));
                }
                Ok(p)
            })
            .collect::<CliResult<Vec<_>>>()?;
        if corpus_hash(&pairs) != m.corpus_hash {
            return Err(CliError::Data(format!("{}: corpus hash mismatch", root.display())));
        }
        pairs
    } else {
        let mut dirs: Vec<PathBuf> = fs::read_dir(root)
            .map_err(|e| io_err(root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("pair_")))
            .collect();
        dirs.sort();
        dirs.par_iter()
            .enumerate()
            .map(|(id, d)| {
                let name = d.file_name().expect("named dir").to_string_lossy().into_owned();
                load_pair(root, id, derive_seed(0, id as u64), &name, sample_rate)
            })
            .collect::<CliResult<Vec<_>>>()?
    };
    if pairs.is_empty() {
        return Err(CliError::Data(format!("{}: corpus holds no pairs", root.display())));
    }
    let hash = corpus_hash(&pairs);
    Ok(LoadedCorpus { pairs, hash })
}
