//! Synthetic datasets whose VA labels are linearly decodable from the
//! features: every modality is a fixed random linear map of its VA label
//! plus small Gaussian noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::SigmaStats;
use crate::rng::SeededRng;
use crate::training::TrainSet;
use crate::types::{FeatureDims, FeatureRecord, Features, Modality, Triplet, VaVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub noise: f64,
    pub va_low: f64,
    pub va_high: f64,
    pub dims: FeatureDims,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { n_train: 512, n_test: 128, noise: 0.01, va_low: 0.05, va_high: 0.95, dims: FeatureDims::default(), seed: 7 }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: TrainSet,
    pub test: TrainSet,
    /// Sigma of the training split.
    pub sigma: SigmaStats,
    /// Test image `i` with test pair `i`, scored with the training sigma.
    pub test_triplets: Vec<Triplet>,
}

struct Maps {
    image: Vec<[f64; 2]>,
    stack: Vec<[f64; 2]>,
}

impl Maps {
    fn draw(dims: &FeatureDims, rng: &mut SeededRng) -> Self {
        let mut draw = |n: usize| (0..n).map(|_| [rng.normal(), rng.normal()]).collect();
        Self { image: draw(dims.image_dim), stack: draw(dims.layers * dims.token_dim) }
    }
}

// Values are rounded to f32 so they survive a feature-file round trip.
fn project(map: &[[f64; 2]], va: &VaVector, noise: f64, rng: &mut SeededRng) -> Vec<f64> {
    let [v, a] = va.as_array();
    map.iter().map(|w| ((w[0] * v + w[1] * a + noise * rng.normal()) as f32) as f64).collect()
}

fn make_split(cfg: &SyntheticConfig, maps: &Maps, split: &str, n: usize, rng: &mut SeededRng) -> Result<TrainSet> {
    let mut va = || VaVector::new(rng.uniform_range(cfg.va_low, cfg.va_high), rng.uniform_range(cfg.va_low, cfg.va_high));
    let mut labels = Vec::with_capacity(2 * n);
    for _ in 0..2 * n {
        labels.push(va()?);
    }
    let d = cfg.dims;
    let mut set = TrainSet::default();
    for i in 0..n {
        let iva = labels[i];
        set.images.push(FeatureRecord {
            id: format!("img-{split}-{i:05}"),
            modality: Modality::Image,
            features: Features::Flat(project(&maps.image, &iva, cfg.noise, rng)),
            va: iva,
            pair_id: None,
        });
        let mva = labels[n + i];
        let pair = format!("pair-{split}-{i:05}");
        let stack = |rng: &mut SeededRng| Features::Stacked { layers: d.layers, dim: d.token_dim, data: project(&maps.stack, &mva, cfg.noise, rng) };
        let music = FeatureRecord { id: format!("mus-{split}-{i:05}"), modality: Modality::Music, features: stack(rng), va: mva, pair_id: Some(pair.clone()) };
        let caption = FeatureRecord { id: format!("cap-{split}-{i:05}"), modality: Modality::Caption, features: stack(rng), va: mva, pair_id: Some(pair) };
        set.pairs.push((music, caption));
    }
    Ok(set)
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    if cfg.n_train == 0 || cfg.n_test == 0 {
        return Err(Error::Config("synthetic splits must be non-empty".into()));
    }
    if !(0.0 <= cfg.va_low && cfg.va_low < cfg.va_high && cfg.va_high <= 1.0) || !(cfg.noise >= 0.0) {
        return Err(Error::Config("synthetic VA range or noise out of bounds".into()));
    }
    let root = SeededRng::new(cfg.seed);
    let maps = Maps::draw(&cfg.dims, &mut root.fork(0));
    let train = make_split(cfg, &maps, "train", cfg.n_train, &mut root.fork(1))?;
    let test = make_split(cfg, &maps, "test", cfg.n_test, &mut root.fork(2))?;
    let sigma = train.sigma()?;
    let test_triplets = (0..cfg.n_test).map(|i| test.triplet(i, i, &sigma)).collect();
    Ok(SyntheticData { train, test, sigma, test_triplets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::validate_record_with;

    fn small() -> SyntheticConfig {
        SyntheticConfig { n_train: 16, n_test: 4, dims: FeatureDims { image_dim: 6, layers: 3, token_dim: 4 }, ..Default::default() }
    }

    #[test]
    fn shapes_labels_and_pairs_are_valid() {
        let cfg = small();
        let d = generate(&cfg).unwrap();
        assert_eq!((d.train.images.len(), d.train.pairs.len(), d.test_triplets.len()), (16, 16, 4));
        d.train.validate().unwrap();
        for t in &d.test_triplets {
            t.validate(&cfg.dims).unwrap();
        }
        for r in &d.train.images {
            validate_record_with(r, &cfg.dims).unwrap();
            assert!(r.va.valence() >= 0.05 && r.va.valence() <= 0.95);
            assert!(r.features.values().iter().all(|&x| (x as f32) as f64 == x));
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.train.images, b.train.images);
        assert_eq!(a.test_triplets, b.test_triplets);
        let c = generate(&SyntheticConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.train.images, c.train.images);
    }

    #[test]
    fn noiseless_features_are_exactly_linear() {
        let d = generate(&SyntheticConfig { noise: 0.0, ..small() }).unwrap();
        let (a, b) = (&d.train.pairs[0].0, &d.train.pairs[0].1);
        assert_eq!(a.features, b.features);
    }
}
