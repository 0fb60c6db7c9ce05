//! Cross-modal retrieval in VA space and its ranking metrics.
//!
//! A query (e.g. a caption) is mapped to a VA point, every corpus entry
//! (e.g. a music clip) is scored by its matching score to that point, and
//! entries are ranked by descending score, ties to the smaller id. Because
//! the score is a decreasing function of distance, the ranking is the
//! ascending-distance order and does not depend on sigma.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{va_distance, SigmaStats};
use crate::model::MmvaModel;
use crate::par::{self, Exec};
use crate::types::{FeatureRecord, Modality, VaVector};

const INDEX_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexSource {
    Predicted,
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusIndex {
    entries: Vec<(String, VaVector)>,
    source: IndexSource,
}

impl CorpusIndex {
    pub fn new(entries: Vec<(String, VaVector)>, source: IndexSource) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for (id, _) in &entries {
            if !seen.insert(id.as_str()) {
                return Err(Error::Validation { id: id.clone(), reason: "duplicate id in corpus".into() });
            }
        }
        Ok(Self { entries, source })
    }

    pub fn entries(&self) -> &[(String, VaVector)] {
        &self.entries
    }

    pub fn source(&self) -> IndexSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub id: String,
    pub score: f64,
    pub rank: usize,
}

/// Builds an index over records of one modality. `model` is required for
/// [`IndexSource::Predicted`].
pub fn build_index(model: Option<&MmvaModel>, records: &[FeatureRecord], source: IndexSource) -> Result<CorpusIndex> {
    build_index_with(Exec::default(), model, records, source)
}

pub fn build_index_with(exec: Exec, model: Option<&MmvaModel>, records: &[FeatureRecord], source: IndexSource) -> Result<CorpusIndex> {
    if let Some(first) = records.first() {
        if let Some(r) = records.iter().find(|r| r.modality != first.modality) {
            return Err(Error::MixedModalities(first.modality.to_string(), r.modality.to_string()));
        }
    }
    let vas = match source {
        IndexSource::GroundTruth => records.iter().map(|r| r.va).collect(),
        IndexSource::Predicted => {
            let model = model.ok_or_else(|| Error::Config("predicted index needs a model".into()))?;
            let chunks: Vec<&[FeatureRecord]> = records.chunks(INDEX_BATCH).collect();
            let parts = par::map_indexed(exec, chunks.len(), |k| {
                let refs: Vec<&FeatureRecord> = chunks[k].iter().collect();
                model.predict_records(&refs)
            });
            let mut vas = Vec::with_capacity(records.len());
            for p in parts {
                vas.extend(p?);
            }
            vas
        }
    };
    CorpusIndex::new(records.iter().map(|r| r.id.clone()).zip(vas).collect(), source)
}

/// Full ranking of the corpus for one query.
pub fn rank_all(query: &VaVector, index: &CorpusIndex, sigma: &SigmaStats) -> Result<Vec<RankedResult>> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let mut scored: Vec<(f64, &str)> = index.entries.iter().map(|(id, va)| (va_distance(query, va), id.as_str())).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (d, id))| RankedResult { id: id.to_owned(), score: (-d / sigma.sigma).exp(), rank: i + 1 })
        .collect())
}

/// Top `k` corpus entries for a query VA.
pub fn retrieve(query: &VaVector, index: &CorpusIndex, k: usize, sigma: &SigmaStats) -> Result<Vec<RankedResult>> {
    if k == 0 {
        return Err(Error::OutOfRange { what: "k", value: 0.0 });
    }
    let mut all = rank_all(query, index, sigma)?;
    all.truncate(k);
    Ok(all)
}

/// One retrieval run: top-k hits plus the rank of the relevant item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: String,
    pub results: Vec<RankedResult>,
    pub relevant_rank: Option<usize>,
}

/// Runs every `(query_id, query_va, relevant_id)` against the index.
pub fn run_queries_with(
    exec: Exec,
    queries: &[(String, VaVector, String)],
    index: &CorpusIndex,
    k: usize,
    sigma: &SigmaStats,
) -> Result<Vec<QueryOutcome>> {
    if k == 0 {
        return Err(Error::OutOfRange { what: "k", value: 0.0 });
    }
    par::map_indexed(exec, queries.len(), |q| {
        let (qid, va, relevant) = &queries[q];
        let mut ranked = rank_all(va, index, sigma)?;
        let relevant_rank = ranked.iter().find(|r| &r.id == relevant).map(|r| r.rank);
        ranked.truncate(k);
        Ok(QueryOutcome { query_id: qid.clone(), results: ranked, relevant_rank })
    })
    .into_iter()
    .collect()
}

/// Fraction of queries whose relevant item ranks within the top `k`.
pub fn recall_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r >= 1 && r <= k).count() as f64 / ranks.len() as f64
}

/// Mean reciprocal rank truncated at 10, i.e. average precision at 10 with a
/// single relevant item per query.
pub fn map_at_10(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|&r| if (1..=10).contains(&r) { 1.0 / r as f64 } else { 0.0 }).sum::<f64>() / ranks.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub map_at_10: f64,
    pub queries: usize,
}

impl RetrievalMetrics {
    pub fn from_ranks(ranks: &[usize]) -> Self {
        Self {
            recall_at_1: recall_at_k(ranks, 1),
            recall_at_5: recall_at_k(ranks, 5),
            recall_at_10: recall_at_k(ranks, 10),
            map_at_10: map_at_10(ranks),
            queries: ranks.len(),
        }
    }
}

/// Records of `modality` only.
pub fn of_modality(records: &[FeatureRecord], modality: Modality) -> Vec<FeatureRecord> {
    records.iter().filter(|r| r.modality == modality).cloned().collect()
}
