//! Emotional matching between images and music clips.
//!
//! Two samples match to the degree their VA labels agree:
//! `score = exp(-d / sigma)`, where `d` is the Euclidean distance between
//! the labels and `sigma` the mean distance over every image/music pair of
//! the reference (training) corpus.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::rng::SeededRng;
use crate::types::{FeatureRecord, Triplet, VaVector};

/// Images drawn per clip during pair selection.
pub const IMAGES_PER_CLIP: usize = 50;
const RANDOM_PER_CLIP: usize = 30;
const EXTREME_PER_CLIP: usize = 10;

pub fn va_distance(p: &VaVector, q: &VaVector) -> f64 {
    let dv = p.valence() - q.valence();
    let da = p.arousal() - q.arousal();
    (dv * dv + da * da).sqrt()
}

/// Global distance scale of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaStats {
    pub sigma: f64,
    pub n_images: usize,
    pub n_music: usize,
}

impl SigmaStats {
    /// Wraps a previously computed sigma (e.g. one restored from a checkpoint).
    pub fn from_value(sigma: f64, n_images: usize, n_music: usize) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::NonPositiveSigma(sigma));
        }
        Ok(Self { sigma, n_images, n_music })
    }

    pub fn score(&self, a: &VaVector, b: &VaVector) -> f64 {
        (-va_distance(a, b) / self.sigma).exp()
    }
}

pub fn compute_sigma(image_vas: &[VaVector], music_vas: &[VaVector]) -> Result<SigmaStats> {
    compute_sigma_with(Exec::default(), image_vas, music_vas)
}

/// Mean image/music VA distance without materializing the `a x b` matrix.
///
/// Each image row is summed with compensated summation over the music list,
/// and row sums are combined by a fixed pairwise tree, so the result does not
/// depend on the execution policy.
pub fn compute_sigma_with(
    exec: Exec,
    image_vas: &[VaVector],
    music_vas: &[VaVector],
) -> Result<SigmaStats> {
    if image_vas.is_empty() {
        return Err(Error::EmptySet("image VA list"));
    }
    if music_vas.is_empty() {
        return Err(Error::EmptySet("music VA list"));
    }
    let rows = par::map_indexed(exec, image_vas.len(), |i| {
        let img = &image_vas[i];
        par::compensated_sum(music_vas.iter().map(|m| va_distance(img, m)))
    });
    let total = par::pairwise_sum(&rows);
    let sigma = total / (image_vas.len() as f64 * music_vas.len() as f64);
    if sigma == 0.0 {
        return Err(Error::DegenerateSigma);
    }
    Ok(SigmaStats { sigma, n_images: image_vas.len(), n_music: music_vas.len() })
}

pub fn match_score(d: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveSigma(sigma));
    }
    if !(d >= 0.0) {
        return Err(Error::OutOfRange { what: "distance", value: d });
    }
    Ok((-d / sigma).exp())
}

/// Index form of [`sample_random_triplets`]: `(image_index, pair_index)`.
pub fn sample_triplet_indices(
    rng: &mut SeededRng,
    n_images: usize,
    n_pairs: usize,
    batch_size: usize,
) -> Result<Vec<(usize, usize)>> {
    if n_images == 0 {
        return Err(Error::EmptySet("images"));
    }
    if n_pairs == 0 {
        return Err(Error::EmptySet("music-caption pairs"));
    }
    Ok((0..batch_size).map(|_| (rng.index(n_images), rng.index(n_pairs))).collect())
}

/// Draws images and music-caption pairs independently (uniform, with
/// replacement) and labels each combination with its matching score.
pub fn sample_random_triplets(
    rng: &mut SeededRng,
    images: &[FeatureRecord],
    music_caption_pairs: &[(FeatureRecord, FeatureRecord)],
    batch_size: usize,
    sigma: &SigmaStats,
) -> Result<Vec<Triplet>> {
    let idx = sample_triplet_indices(rng, images.len(), music_caption_pairs.len(), batch_size)?;
    Ok(idx
        .into_iter()
        .map(|(i, j)| {
            let image = images[i].clone();
            let (music, caption) = music_caption_pairs[j].clone();
            let target_score = sigma.score(&image.va, &music.va);
            Triplet { image, music, caption, target_score }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub image_id: String,
    pub music_id: String,
    pub score: f64,
}

/// Image/music pairs with their matching scores, free of duplicates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairList {
    entries: Vec<PairEntry>,
}

impl PairList {
    pub fn new(entries: Vec<PairEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert((e.image_id.as_str(), e.music_id.as_str())) {
                return Err(Error::Validation {
                    id: format!("{}/{}", e.image_id, e.music_id),
                    reason: "duplicate pair".into(),
                });
            }
            if !(e.score > 0.0 && e.score <= 1.0) {
                return Err(Error::OutOfRange { what: "pair score", value: e.score });
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[PairEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Images picked for one clip, in selection order: the random draw, then the
/// best matches, then the worst matches.
pub fn select_images_for_clip(
    rng: &mut SeededRng,
    images: &[FeatureRecord],
    clip: &FeatureRecord,
) -> Result<Vec<usize>> {
    if images.len() < IMAGES_PER_CLIP {
        return Err(Error::InsufficientImages { needed: IMAGES_PER_CLIP, got: images.len() });
    }
    let mut chosen = rng.sample_without_replacement(images.len(), RANDOM_PER_CLIP);
    let mut taken = vec![false; images.len()];
    for &i in &chosen {
        taken[i] = true;
    }

    // Ordering by distance is ordering by score; ties go to the smaller id.
    let mut rest: Vec<(f64, usize)> = (0..images.len())
        .filter(|&i| !taken[i])
        .map(|i| (va_distance(&images[i].va, &clip.va), i))
        .collect();
    rest.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| images[a.1].id.cmp(&images[b.1].id)));
    let best: Vec<usize> = rest.iter().take(EXTREME_PER_CLIP).map(|&(_, i)| i).collect();

    rest.drain(..EXTREME_PER_CLIP);
    rest.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| images[a.1].id.cmp(&images[b.1].id)));
    let worst = rest.iter().take(EXTREME_PER_CLIP).map(|&(_, i)| i);

    chosen.extend(best);
    chosen.extend(worst);
    Ok(chosen)
}

/// Fifty images per clip (30 random, the 10 best and the 10 worst
/// matches), then a uniform 10% subsample of all resulting pairs.
///
/// Clip `k` draws from stream `k` of `rng`'s seed, so the result is the same
/// under any execution policy; the subsample is drawn from `rng` itself.
pub fn imemnet_pair_selection(
    rng: &mut SeededRng,
    images: &[FeatureRecord],
    clips: &[FeatureRecord],
    sigma: &SigmaStats,
) -> Result<PairList> {
    imemnet_pair_selection_with(Exec::default(), rng, images, clips, sigma)
}

pub fn imemnet_pair_selection_with(
    exec: Exec,
    rng: &mut SeededRng,
    images: &[FeatureRecord],
    clips: &[FeatureRecord],
    sigma: &SigmaStats,
) -> Result<PairList> {
    if images.len() < IMAGES_PER_CLIP {
        return Err(Error::InsufficientImages { needed: IMAGES_PER_CLIP, got: images.len() });
    }
    let per_clip = par::map_indexed(exec, clips.len(), |k| {
        let mut clip_rng = rng.fork(k as u64);
        select_images_for_clip(&mut clip_rng, images, &clips[k])
    });
    let mut all = Vec::with_capacity(clips.len() * IMAGES_PER_CLIP);
    for (clip, picks) in clips.iter().zip(per_clip) {
        for i in picks? {
            all.push(PairEntry {
                image_id: images[i].id.clone(),
                music_id: clip.id.clone(),
                score: sigma.score(&images[i].va, &clip.va),
            });
        }
    }
    let keep = subsample_count(all.len());
    let mut idx = rng.sample_without_replacement(all.len(), keep);
    idx.sort_unstable();
    PairList::new(idx.into_iter().map(|i| all[i].clone()).collect())
}

/// Ten percent, rounded half up.
pub fn subsample_count(total: usize) -> usize {
    (total + 5) / 10
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Features, Modality};

    fn va(v: f64, a: f64) -> VaVector {
        VaVector::new(v, a).unwrap()
    }

    fn image(id: &str, v: f64, a: f64) -> FeatureRecord {
        FeatureRecord {
            id: id.into(),
            modality: Modality::Image,
            features: Features::Flat(vec![0.0; 4]),
            va: va(v, a),
            pair_id: None,
        }
    }

    #[test]
    fn distance_examples() {
        assert_eq!(va_distance(&va(0.5, 0.5), &va(0.5, 0.5)), 0.0);
        assert!((va_distance(&va(0.0, 0.0), &va(1.0, 1.0)) - 2f64.sqrt()).abs() < 1e-15);
        assert!((va_distance(&va(0.2, 0.4), &va(0.5, 0.8)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sigma_examples() {
        let s = compute_sigma(&[va(0.0, 0.0)], &[va(1.0, 1.0)]).unwrap();
        assert!((s.sigma - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!((s.n_images, s.n_music), (1, 1));

        let corners = [va(0.0, 0.0), va(1.0, 1.0)];
        let s = compute_sigma(&corners, &corners).unwrap();
        // (0 + sqrt2 + sqrt2 + 0) / 4
        assert!((s.sigma - 0.707_106_781_186_547_5).abs() < 1e-15);

        let same = vec![va(0.3, 0.3); 4];
        assert!(matches!(compute_sigma(&same, &same), Err(Error::DegenerateSigma)));
        assert!(matches!(compute_sigma(&[], &same), Err(Error::EmptySet(_))));
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn score_examples() {
        assert_eq!(match_score(0.0, 0.5).unwrap(), 1.0);
        assert!((match_score(0.3, 0.3).unwrap() - (-1f64).exp()).abs() < 1e-16);
        // exp(-0.5 / 0.70710678) = exp(-0.70710678...) evaluated by series below
        let x: f64 = 0.5 / 0.707_106_78;
        let series: f64 = (0..40).map(|k| (-x).powi(k) / (1..=k).map(f64::from).product::<f64>()).sum();
        assert!((match_score(0.5, 0.707_106_78).unwrap() - series).abs() < 1e-14);
        assert!((series - 0.493_068_69).abs() < 1e-8);
        assert!(matches!(match_score(0.1, 0.0), Err(Error::NonPositiveSigma(_))));
    }

    #[test]
    fn forced_triplet_sampling() {
        let imgs = vec![image("i", 0.2, 0.4)];
        let m = FeatureRecord {
            id: "m".into(),
            modality: Modality::Music,
            features: Features::Stacked { layers: 1, dim: 2, data: vec![0.0; 2] },
            va: va(0.5, 0.8),
            pair_id: Some("p".into()),
        };
        let c = FeatureRecord { id: "c".into(), modality: Modality::Caption, ..m.clone() };
        let sigma = SigmaStats::from_value(0.5, 1, 1).unwrap();
        let mut rng = SeededRng::new(0);
        assert!(sample_random_triplets(&mut rng, &imgs, &[(m.clone(), c.clone())], 0, &sigma)
            .unwrap()
            .is_empty());
        let ts = sample_random_triplets(&mut rng, &imgs, &[(m, c)], 3, &sigma).unwrap();
        assert_eq!(ts.len(), 3);
        for t in &ts {
            assert_eq!(t, &ts[0]);
            assert!((t.target_score - (-1f64).exp()).abs() < 1e-15);
        }
        assert!(sample_random_triplets(&mut rng, &[], &[], 1, &sigma).is_err());
    }

    #[test]
    fn fifty_images_one_clip() {
        let imgs: Vec<_> = (0..50).map(|i| image(&format!("img{i:02}"), i as f64 / 49.0, 0.5)).collect();
        let clip = FeatureRecord { modality: Modality::Music, ..image("clip", 0.3, 0.6) };
        let mut rng = SeededRng::new(11);
        let picks = select_images_for_clip(&mut rng, &imgs, &clip).unwrap();
        let mut sorted = picks.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());

        let sigma = SigmaStats::from_value(0.4, 50, 1).unwrap();
        let pl = imemnet_pair_selection(&mut SeededRng::new(11), &imgs, std::slice::from_ref(&clip), &sigma).unwrap();
        assert_eq!(pl.len(), 5);
        for e in pl.entries() {
            let img = imgs.iter().find(|r| r.id == e.image_id).unwrap();
            assert_eq!(e.score, sigma.score(&img.va, &clip.va));
        }
    }

    #[test]
    fn too_few_images() {
        let imgs: Vec<_> = (0..49).map(|i| image(&i.to_string(), 0.5, 0.5)).collect();
        let sigma = SigmaStats::from_value(0.4, 49, 1).unwrap();
        let r = imemnet_pair_selection(&mut SeededRng::new(0), &imgs, &[imgs[0].clone()], &sigma);
        assert!(matches!(r, Err(Error::InsufficientImages { needed: 50, got: 49 })));
    }

    #[test]
    fn top_ten_boundary_tie_prefers_smaller_id() {
        // 80 images far from the clip; the rest sit at controlled distances.
        let clip = FeatureRecord { modality: Modality::Music, ..image("clip", 0.5, 0.5) };
        let mut imgs: Vec<_> = (0..80).map(|i| image(&format!("far{i:03}"), 1.0, 1.0)).collect();
        for i in 0..9 {
            imgs.push(image(&format!("near{i}"), 0.5, 0.5 + 0.01 * i as f64));
        }
        // two candidates for the tenth slot at identical distance
        imgs.push(image("tie_b", 0.5, 0.8));
        imgs.push(image("tie_a", 0.5, 0.2));
        for seed in 0..200 {
            let mut rng = SeededRng::new(seed);
            let random: HashSet<usize> =
                rng.clone().sample_without_replacement(imgs.len(), RANDOM_PER_CLIP).into_iter().collect();
            let near_or_tie = |i: usize| !imgs[i].id.starts_with("far");
            if random.iter().any(|&i| near_or_tie(i)) {
                continue;
            }
            let picks = select_images_for_clip(&mut rng, &imgs, &clip).unwrap();
            let best: Vec<&str> = picks[30..40].iter().map(|&i| imgs[i].id.as_str()).collect();
            assert!(best.contains(&"tie_a"));
            assert!(!best.contains(&"tie_b"));
            return;
        }
        panic!("no seed avoided the near images");
    }
}
