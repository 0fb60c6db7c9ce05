use mmva::data::{load_dataset, read_manifest, read_pair_list, write_manifest, write_pair_list, DatasetWriter, Split, VaScale};
use mmva::matching::imemnet_pair_selection;
use mmva::model::{ModelConfig, ModelDims};
use mmva::synthetic::{generate, SyntheticConfig};
use mmva::training::{evaluate, init_model, load_checkpoint, save_checkpoint, train, CheckpointMeta, TrainConfig, TrainMode, TrainingData};
use mmva::{Error, FeatureDims, Modality, SeededRng};

fn dims() -> FeatureDims {
    FeatureDims { image_dim: 6, layers: 3, token_dim: 4 }
}

fn small() -> SyntheticConfig {
    SyntheticConfig { n_train: 60, n_test: 12, dims: dims(), ..Default::default() }
}

fn written(dir: &std::path::Path) -> (mmva::synthetic::SyntheticData, std::path::PathBuf) {
    let data = generate(&small()).unwrap();
    let mut w = DatasetWriter::new(dir);
    w.push_set(&data.train, Split::Train).unwrap();
    w.push_set(&data.test, Split::Test).unwrap();
    (data, w.finish().unwrap())
}

#[test]
fn dataset_round_trips_through_manifest_and_feature_files() {
    let dir = tempfile::tempdir().unwrap();
    let (data, manifest) = written(dir.path());
    let ds = load_dataset(&manifest, &dims()).unwrap();
    assert_eq!(ds.split(Split::Train).unwrap(), &data.train);
    assert_eq!(ds.split(Split::Test).unwrap(), &data.test);
    assert!(ds.split(Split::Val).is_none());
    assert_eq!(ds.report.counts[&Split::Train].images, 60);
    assert!(ds.report.shared_rows.values().all(|&n| n == 0));
    assert!(matches!(load_dataset(&manifest, &FeatureDims { image_dim: 7, ..dims() }), Err(Error::Validation { .. } | Error::ShapeMismatch(_))));
}

#[test]
fn raw_scales_are_normalized_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let (data, manifest) = written(dir.path());
    let mut entries = read_manifest(&manifest).unwrap();
    for e in entries.iter_mut().filter(|e| e.modality == Modality::Image) {
        e.va = [1.0 + 8.0 * e.va[0], 1.0 + 8.0 * e.va[1]];
        e.scale = VaScale::NinePoint;
    }
    write_manifest(&manifest, &entries).unwrap();
    let ds = load_dataset(&manifest, &dims()).unwrap();
    for (got, want) in ds.split(Split::Train).unwrap().images.iter().zip(&data.train.images) {
        assert!((got.va.valence() - want.va.valence()).abs() < 1e-12);
        assert!((got.va.arousal() - want.va.arousal()).abs() < 1e-12);
    }
}

#[test]
fn pair_halves_must_share_a_split() {
    let dir = tempfile::tempdir().unwrap();
    let (_, manifest) = written(dir.path());
    let mut entries = read_manifest(&manifest).unwrap();
    let caption = entries.iter_mut().find(|e| e.modality == Modality::Caption && e.split == Split::Train).unwrap();
    caption.split = Split::Val;
    let pair = caption.pair_id.clone().unwrap();
    write_manifest(&manifest, &entries).unwrap();
    match load_dataset(&manifest, &dims()) {
        Err(Error::Validation { id, .. }) => assert_eq!(id, pair),
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn fixed_pairs_train_and_checkpoint_restores_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(&small()).unwrap();
    let clips: Vec<_> = data.train.pairs.iter().map(|p| p.0.clone()).collect();
    let pairs = imemnet_pair_selection(&mut SeededRng::new(4), &data.train.images, &clips, &data.sigma).unwrap();
    assert_eq!(pairs.len(), (60 * 50 + 5) / 10);
    let path = dir.path().join("pairs.jsonl");
    write_pair_list(&path, &pairs).unwrap();
    let back = read_pair_list(&path).unwrap();
    assert_eq!(back, pairs);

    let model_cfg = ModelConfig { dims: ModelDims { features: dims(), embed_dim: 6, hidden_dim: 5 }, ..Default::default() };
    let cfg = TrainConfig { epochs: 2, batch_size: 16, mode: TrainMode::NoRandomMatching, seed: 9, ..Default::default() };
    let mut model = init_model(model_cfg, 9).unwrap();
    let fixed = data.train.resolve(&back).unwrap();
    let td = TrainingData { train: &data.train, sigma: data.sigma, fixed_pairs: Some(fixed), validation: Some(&data.test_triplets) };
    let history = train(&mut model, &td, &cfg).unwrap();
    assert_eq!(history.len(), 2);
    assert!(history.iter().all(|h| h.validation.is_some() && h.mean_loss.is_finite()));

    let ckpt = dir.path().join("m.ckpt");
    let meta = CheckpointMeta { sigma: Some(data.sigma), seed: Some(9), train: Some(cfg), ..CheckpointMeta::new(model_cfg) };
    save_checkpoint(&model, &meta, &ckpt).unwrap();
    let (restored, restored_meta) = load_checkpoint(&ckpt).unwrap();
    assert_eq!(restored_meta, meta);
    assert_eq!(evaluate(&restored, &data.test_triplets).unwrap(), evaluate(&model, &data.test_triplets).unwrap());
}
