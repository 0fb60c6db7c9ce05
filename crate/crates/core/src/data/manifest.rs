//! JSON-lines dataset manifests. Each line describes one record:
//!
//! ```json
//! {"id":"m1","modality":"music","va":[5.0,6.0],"scale":"nine_point",
//!  "feature_file":"music.mmvf","offset":0,"pair_id":"p1","split":"train"}
//! ```
//!
//! `feature_file` is resolved relative to the manifest's directory.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::featfile::FeatureFile;
use super::normalize::{normalize_va, VaScale};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::training::TrainSet;
use crate::types::{check_music_caption, validate_record_with, FeatureDims, FeatureRecord, Features, Modality};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown split `{s}` (expected train, val or test)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub modality: Modality,
    /// Raw rating on `scale`.
    pub va: [f64; 2],
    pub scale: VaScale,
    pub feature_file: String,
    pub offset: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
    pub split: Split,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut buf, e)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Per-split record counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub images: usize,
    pub music: usize,
    pub captions: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DatasetReport {
    pub counts: BTreeMap<Split, SplitCounts>,
    /// Feature rows referenced from more than one split, per modality. A
    /// non-zero value means the same sample leaks across splits.
    pub shared_rows: BTreeMap<Modality, usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub splits: BTreeMap<Split, TrainSet>,
    pub report: DatasetReport,
}

impl Dataset {
    pub fn split(&self, s: Split) -> Option<&TrainSet> {
        self.splits.get(&s)
    }
}

fn invalid(id: &str, reason: impl Into<String>) -> Error {
    Error::Validation { id: id.to_owned(), reason: reason.into() }
}

/// Loads, validates and groups a manifest. Music clips and captions are
/// joined on `pair_id`; both halves of a pair must sit in the same split.
pub fn load_dataset(manifest: impl AsRef<Path>, dims: &FeatureDims) -> Result<Dataset> {
    let manifest = manifest.as_ref();
    let entries = read_manifest(manifest)?;
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut files: Vec<&str> = entries.iter().map(|e| e.feature_file.as_str()).collect();
    files.sort_unstable();
    files.dedup();
    let loaded = par::map_indexed(Exec::default(), files.len(), |i| FeatureFile::read(base.join(files[i])));
    let mut by_name: HashMap<&str, FeatureFile> = HashMap::with_capacity(files.len());
    for (name, f) in files.iter().zip(loaded) {
        by_name.insert(name, f?);
    }

    let mut seen_ids: HashMap<&str, ()> = HashMap::new();
    let mut row_splits: HashMap<(Modality, &str, u64), Vec<Split>> = HashMap::new();
    let mut records: Vec<(FeatureRecord, Split)> = Vec::with_capacity(entries.len());
    for e in &entries {
        if seen_ids.insert(e.id.as_str(), ()).is_some() {
            return Err(invalid(&e.id, "duplicate id"));
        }
        let file = &by_name[e.feature_file.as_str()];
        let row = file.row(e.offset as usize).ok_or_else(|| {
            invalid(&e.id, format!("offset {} beyond the {} rows of {}", e.offset, file.rows(), e.feature_file))
        })?;
        let values: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        let features = match file.shape() {
            [_] => Features::Flat(values),
            [layers, dim] => Features::Stacked { layers: *layers, dim: *dim, data: values },
            s => return Err(invalid(&e.id, format!("unsupported feature shape {s:?}"))),
        };
        let va = normalize_va((e.va[0], e.va[1]), e.scale)?;
        let rec = FeatureRecord { id: e.id.clone(), modality: e.modality, features, va, pair_id: e.pair_id.clone() };
        validate_record_with(&rec, dims)?;
        let splits = row_splits.entry((e.modality, e.feature_file.as_str(), e.offset)).or_default();
        if !splits.contains(&e.split) {
            splits.push(e.split);
        }
        records.push((rec, e.split));
    }

    let mut captions: HashMap<String, usize> = HashMap::new();
    for (i, (r, _)) in records.iter().enumerate() {
        if r.modality == Modality::Caption {
            let pid = r.pair_id.as_ref().ok_or_else(|| invalid(&r.id, "caption without pair_id"))?;
            if captions.insert(pid.clone(), i).is_some() {
                return Err(invalid(pid, "more than one caption for this pair"));
            }
        }
    }

    let mut ds = Dataset::default();
    for s in Split::ALL {
        ds.report.counts.insert(s, SplitCounts::default());
    }
    let mut used_captions = 0usize;
    let mut music_pairs: HashMap<&str, ()> = HashMap::new();
    for (r, split) in &records {
        let counts = ds.report.counts.get_mut(split).expect("all splits present");
        let set = ds.splits.entry(*split).or_insert_with(|| TrainSet { images: Vec::new(), pairs: Vec::new() });
        match r.modality {
            Modality::Image => {
                counts.images += 1;
                set.images.push(r.clone());
            }
            Modality::Music => {
                let pid = r.pair_id.as_ref().ok_or_else(|| invalid(&r.id, "music clip without pair_id"))?;
                if music_pairs.insert(pid.as_str(), ()).is_some() {
                    return Err(invalid(pid, "more than one music clip for this pair"));
                }
                let &ci = captions.get(pid).ok_or_else(|| invalid(pid, "music clip has no caption"))?;
                let (cap, cap_split) = &records[ci];
                if cap_split != split {
                    return Err(invalid(pid, format!("music in {split} but caption in {cap_split}")));
                }
                check_music_caption(r, cap)?;
                counts.music += 1;
                counts.captions += 1;
                used_captions += 1;
                set.pairs.push((r.clone(), cap.clone()));
            }
            Modality::Caption => {}
        }
    }
    if used_captions != captions.len() {
        let orphan = captions.keys().filter(|p| !music_pairs.contains_key(p.as_str())).min().expect("an orphan exists");
        return Err(invalid(orphan, "caption has no music clip"));
    }
    for ((m, _, _), splits) in &row_splits {
        if splits.len() > 1 {
            *ds.report.shared_rows.entry(*m).or_default() += 1;
        }
    }
    Ok(ds)
}

/// Collects records into per-modality feature files plus a manifest in
/// `dir`. VA labels are written on the unit scale.
pub struct DatasetWriter {
    dir: PathBuf,
    files: BTreeMap<Modality, FeatureFile>,
    entries: Vec<ManifestEntry>,
}

impl DatasetWriter {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into(), files: BTreeMap::new(), entries: Vec::new() }
    }

    fn file_name(m: Modality) -> String {
        format!("{}.mmvf", m.as_str())
    }

    pub fn push(&mut self, r: &FeatureRecord, split: Split) -> Result<()> {
        let file = match self.files.get_mut(&r.modality) {
            Some(f) => f,
            None => self.files.entry(r.modality).or_insert(FeatureFile::new(r.features.shape())?),
        };
        let offset = file.push_row_f64(r.features.values())?;
        self.entries.push(ManifestEntry {
            id: r.id.clone(),
            modality: r.modality,
            va: r.va.as_array(),
            scale: VaScale::Unit,
            feature_file: Self::file_name(r.modality),
            offset,
            pair_id: r.pair_id.clone(),
            split,
        });
        Ok(())
    }

    pub fn push_set(&mut self, set: &TrainSet, split: Split) -> Result<()> {
        for r in &set.images {
            self.push(r, split)?;
        }
        for (m, c) in &set.pairs {
            self.push(m, split)?;
            self.push(c, split)?;
        }
        Ok(())
    }

    /// Writes everything and returns the manifest path.
    pub fn finish(self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        for (m, f) in &self.files {
            f.write(self.dir.join(Self::file_name(*m)))?;
        }
        let path = self.dir.join("manifest.jsonl");
        write_manifest(&path, &self.entries)?;
        Ok(path)
    }
}
