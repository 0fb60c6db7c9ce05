//! Importance-driven video summarization and temporal F-score.
//!
//! Clip importance is usually the predicted arousal of a representative
//! frame. Clips are chosen by exact 0/1 knapsack: maximize total importance
//! while the summary stays within a fraction of the video's length.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MmvaModel;
use crate::types::FeatureRecord;

/// Share of the video a summary may cover by default.
pub const DEFAULT_BUDGET_FRACTION: f64 = 0.15;
/// Durations are discretized to tenths of a second for the DP table.
pub const TICKS_PER_SECOND: f64 = 10.0;
const TICK_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoClip {
    pub clip_id: String,
    pub start_s: f64,
    pub duration_s: f64,
    pub importance: f64,
}

impl VideoClip {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }
}

/// Clips must have positive finite durations, finite importance, and be
/// ordered and non-overlapping.
pub fn validate_clips(clips: &[VideoClip]) -> Result<()> {
    for (i, c) in clips.iter().enumerate() {
        if !(c.duration_s > 0.0) || !c.duration_s.is_finite() || !c.start_s.is_finite() || c.start_s < 0.0 {
            return Err(Error::Validation { id: c.clip_id.clone(), reason: format!("bad timing start={} duration={}", c.start_s, c.duration_s) });
        }
        if !c.importance.is_finite() {
            return Err(Error::NonFinite(format!("importance of clip `{}`", c.clip_id)));
        }
        if i > 0 && clips[i - 1].end_s() > c.start_s + TICK_SLACK {
            return Err(Error::Validation { id: c.clip_id.clone(), reason: "clips overlap or are out of order".into() });
        }
    }
    Ok(())
}

/// Exact 0/1 knapsack over integer weights. Returns the optimal value and
/// the chosen item indices in ascending order.
///
/// An item is taken only if it strictly improves the table entry, so among
/// equal-value solutions the backtrack excludes later items.
pub fn knapsack_01(weights: &[usize], values: &[f64], capacity: usize) -> (f64, Vec<usize>) {
    assert_eq!(weights.len(), values.len(), "one weight per value");
    let n = weights.len();
    let width = capacity + 1;
    let mut best = vec![0.0f64; width];
    let mut take = vec![false; n * width];
    for i in 0..n {
        let w = weights[i];
        if w > capacity {
            continue;
        }
        for c in (w..=capacity).rev() {
            let with = best[c - w] + values[i];
            if with > best[c] {
                best[c] = with;
                take[i * width + c] = true;
            }
        }
    }
    let mut chosen = Vec::new();
    let mut c = capacity;
    for i in (0..n).rev() {
        if take[i * width + c] {
            chosen.push(i);
            c -= weights[i];
        }
    }
    chosen.reverse();
    (best[capacity], chosen)
}

/// Clip duration in ticks, rounded up so the real total never exceeds the
/// discretized one.
pub fn duration_ticks(duration_s: f64) -> usize {
    (duration_s * TICKS_PER_SECOND - TICK_SLACK).ceil().max(0.0) as usize
}

pub fn budget_ticks(budget_s: f64) -> usize {
    (budget_s * TICKS_PER_SECOND + TICK_SLACK).floor().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSummary {
    pub selected: Vec<String>,
    pub total_duration_s: f64,
    pub budget_s: f64,
    pub objective: f64,
    /// Selected `[start, end)` intervals, in clip order.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub intervals: Vec<(f64, f64)>,
}

/// Picks clips maximizing total importance within `budget_fraction` of the
/// total clip duration.
pub fn knapsack_select(clips: &[VideoClip], budget_fraction: f64) -> Result<VideoSummary> {
    if clips.is_empty() {
        return Err(Error::EmptyClips);
    }
    if !(budget_fraction > 0.0 && budget_fraction < 1.0) {
        return Err(Error::OutOfRange { what: "budget_fraction", value: budget_fraction });
    }
    validate_clips(clips)?;
    let total: f64 = clips.iter().map(|c| c.duration_s).sum();
    let budget_s = budget_fraction * total;
    let capacity = budget_ticks(budget_s);
    let weights: Vec<usize> = clips.iter().map(|c| duration_ticks(c.duration_s)).collect();
    if weights.iter().all(|&w| w > capacity) {
        return Err(Error::BudgetTooSmall { budget_s });
    }
    let values: Vec<f64> = clips.iter().map(|c| c.importance).collect();
    let (objective, chosen) = knapsack_01(&weights, &values, capacity);
    let total_duration_s: f64 = chosen.iter().map(|&i| clips[i].duration_s).sum();
    assert!(total_duration_s <= budget_s + TICK_SLACK, "summary of {total_duration_s} s exceeds budget {budget_s} s");
    Ok(VideoSummary {
        selected: chosen.iter().map(|&i| clips[i].clip_id.clone()).collect(),
        total_duration_s,
        budget_s,
        objective,
        intervals: chosen.iter().map(|&i| (clips[i].start_s, clips[i].end_s())).collect(),
    })
}

/// Where clip importance comes from.
pub enum ArousalSource<'a> {
    /// Use each clip's `importance` as given.
    Supplied,
    /// Predicted arousal of one representative image per clip, aligned with
    /// the clip list.
    Predicted { model: &'a MmvaModel, frames: &'a [FeatureRecord] },
}

/// Replaces clip importance with arousal (when predicted) and runs the
/// knapsack selection.
pub fn summarize_video(mut clips: Vec<VideoClip>, source: ArousalSource<'_>, budget_fraction: f64) -> Result<VideoSummary> {
    if let ArousalSource::Predicted { model, frames } = source {
        if frames.len() != clips.len() {
            return Err(Error::Data(format!("{} frames for {} clips", frames.len(), clips.len())));
        }
        let refs: Vec<&FeatureRecord> = frames.iter().collect();
        for (c, va) in clips.iter_mut().zip(model.predict_records(&refs)?) {
            c.importance = va.arousal();
        }
    }
    knapsack_select(&clips, budget_fraction)
}

/// Sorted, merged copy of a set of `[start, end)` intervals.
pub fn normalize_intervals(intervals: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = intervals.iter().copied().filter(|(s, e)| e > s).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (s, e) in v {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

fn covered(intervals: &[(f64, f64)]) -> f64 {
    intervals.iter().map(|(s, e)| e - s).sum()
}

fn overlap(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if hi > lo {
            total += hi - lo;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

/// Harmonic mean of temporal precision and recall between two summaries
/// given as unions of `[start, end)` intervals.
pub fn f_score(predicted: &[(f64, f64)], reference: &[(f64, f64)]) -> Result<f64> {
    let p = normalize_intervals(predicted);
    let r = normalize_intervals(reference);
    let (lp, lr) = (covered(&p), covered(&r));
    if lp == 0.0 || lr == 0.0 {
        return Err(Error::EmptySummary);
    }
    let inter = overlap(&p, &r);
    let precision = inter / lp;
    let recall = inter / lr;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(id: usize, start: f64, dur: f64, imp: f64) -> VideoClip {
        VideoClip { clip_id: format!("c{id:02}"), start_s: start, duration_s: dur, importance: imp }
    }

    fn uniform(imps: &[f64], dur: f64) -> Vec<VideoClip> {
        imps.iter().enumerate().map(|(i, &v)| clip(i, i as f64 * dur, dur, v)).collect()
    }

    #[test]
    fn classic_instance() {
        let (v, chosen) = knapsack_01(&[2, 3, 4, 5], &[3.0, 4.0, 5.0, 6.0], 5);
        assert_eq!(v, 7.0);
        assert_eq!(chosen, vec![0, 1]);
    }

    #[test]
    fn uniform_weights_pick_top_k() {
        let clips = uniform(&[0.1, 0.9, 0.3, 0.8, 0.05, 0.7, 0.2, 0.4, 0.6, 0.5], 2.0);
        let s = knapsack_select(&clips, 0.3).unwrap();
        assert_eq!(s.selected, vec!["c01", "c03", "c05"]);
        assert!(s.total_duration_s <= s.budget_s);
    }

    #[test]
    fn equal_importance_respects_tie_policy_and_budget() {
        let clips = uniform(&[0.5; 10], 2.0);
        let s = knapsack_select(&clips, 0.3).unwrap();
        assert_eq!(s.selected, vec!["c00", "c01", "c02"]);
        assert_eq!(s.total_duration_s, 6.0);
    }

    #[test]
    fn lone_bright_clip_is_selected() {
        let mut imps = [0.0; 8];
        imps[5] = 1.0;
        let s = knapsack_select(&uniform(&imps, 2.0), 0.15).unwrap();
        assert_eq!(s.selected, vec!["c05"]);
        assert_eq!(s.objective, 1.0);
    }

    #[test]
    fn selection_errors() {
        assert!(matches!(knapsack_select(&[], 0.15), Err(Error::EmptyClips)));
        assert!(matches!(knapsack_select(&uniform(&[1.0, 1.0], 2.0), 0.15), Err(Error::BudgetTooSmall { .. })));
        assert!(knapsack_select(&uniform(&[1.0], 2.0), 1.0).is_err());
        let overlapping = vec![clip(0, 0.0, 2.0, 1.0), clip(1, 1.0, 2.0, 1.0)];
        assert!(matches!(knapsack_select(&overlapping, 0.5), Err(Error::Validation { .. })));
    }

    #[test]
    fn f_score_examples() {
        let a = [(0.0, 10.0)];
        assert_eq!(f_score(&a, &a).unwrap(), 1.0);
        assert_eq!(f_score(&a, &[(10.0, 20.0)]).unwrap(), 0.0);
        // P = 5/10, R = 5/15
        assert!((f_score(&a, &[(5.0, 20.0)]).unwrap() - 0.4).abs() < 1e-12);
        assert!(matches!(f_score(&[], &a), Err(Error::EmptySummary)));
    }

    #[test]
    fn intervals_merge() {
        assert_eq!(normalize_intervals(&[(4.0, 6.0), (0.0, 2.0), (1.0, 3.0), (6.0, 7.0)]), vec![(0.0, 3.0), (4.0, 7.0)]);
    }

    #[test]
    fn tick_rounding() {
        assert_eq!(duration_ticks(2.0), 20);
        assert_eq!(duration_ticks(0.1 + 0.2), 3);
        assert_eq!(duration_ticks(2.01), 21);
        assert_eq!(budget_ticks(0.3 * 20.0), 60);
    }
}
