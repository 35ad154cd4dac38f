use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikedisc::layers::HeadKind;
use spikedisc::models::{
    build_audio, build_smlp, build_visual, AudioModelConfig, Checkpoint, FusionConfig, ModelGraph, NetworkCommon,
    VisualModelConfig,
};
use spikedisc::Tensor;

fn random_images(batch: usize, size: usize, seed: u64) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = batch * 3 * size * size;
    Tensor::new(vec![batch, 3, size, size], (0..n).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()
}

fn desk_visual(head: HeadKind, seed: u64) -> ModelGraph {
    build_visual(&VisualModelConfig::desk(), &NetworkCommon::default().with_head(head), seed).unwrap()
}

#[test]
fn full_scale_feature_widths() {
    let common = NetworkCommon::default();
    let v = VisualModelConfig::full().to_spec(&common).unwrap();
    assert_eq!(v.feature_dim().unwrap(), 512);
    let a = AudioModelConfig::full().to_spec(&common).unwrap();
    assert_eq!(a.feature_dim().unwrap(), 27136);
    let f = FusionConfig::full();
    assert_eq!(f.concat_width(), 27648);
    assert_eq!(f.to_spec(&common).unwrap().input_shape, vec![27648]);
}

#[test]
fn desk_presets_match_fusion_defaults() {
    let v = desk_visual(HeadKind::L2norm, 0);
    let a = build_audio(&AudioModelConfig::desk(), &NetworkCommon::default(), 0).unwrap();
    let f = FusionConfig::default();
    assert_eq!(v.feature_dim(), f.visual_dim);
    assert_eq!(a.feature_dim(), f.audio_dim);
}

#[test]
fn desk_forward_counts_and_unit_embeddings() {
    let steps = 6;
    let m = desk_visual(HeadKind::L2norm, 3);
    let out = m.forward(&[random_images(5, 8, 1)], steps).unwrap();
    assert_eq!(out.counts.shape(), &[5, 4]);
    assert!(out.counts.data().iter().all(|&c| c >= 0.0 && c <= steps as f64 && c.fract() == 0.0));
    assert!(out.logits.data().iter().all(|&l| (-1.0..=1.0).contains(&l)));
    assert_eq!(out.embeddings.shape(), &[steps, 5, m.feature_dim()]);
    let z = out.normalized.expect("l2 head exposes unit embeddings");
    for (row, _) in z.data().chunks(m.feature_dim()).zip(0..) {
        let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-12, "norm {norm}");
    }
}

#[test]
fn zero_input_stays_silent() {
    let m = desk_visual(HeadKind::L2norm, 0);
    let out = m.forward(&[Tensor::zeros(&[2, 3, 8, 8])], 4).unwrap();
    assert!(out.counts.data().iter().all(|&c| c == 0.0));
}

#[test]
fn single_timestep_runs() {
    let m = desk_visual(HeadKind::Vanilla, 1);
    let out = m.forward(&[random_images(3, 8, 2)], 1).unwrap();
    assert!(out.counts.data().iter().all(|&c| c == 0.0 || c == 1.0));
    assert!(m.forward(&[random_images(3, 8, 2)], 0).is_err());
}

#[test]
fn forward_is_deterministic() {
    let x = random_images(4, 8, 9);
    let a = desk_visual(HeadKind::L2norm, 11).forward(&[x.clone()], 5).unwrap();
    let b = desk_visual(HeadKind::L2norm, 11).forward(&[x], 5).unwrap();
    assert_eq!(a.counts, b.counts);
    assert_eq!(a.logits, b.logits);
    assert_eq!(a.embeddings, b.embeddings);
}

#[test]
fn wrong_input_shape_is_rejected() {
    let m = desk_visual(HeadKind::L2norm, 0);
    assert!(m.forward(&[random_images(2, 9, 0)], 2).is_err());
}

#[test]
fn fusion_forward_takes_both_embeddings() {
    let cfg = FusionConfig::default();
    let m = build_smlp(&cfg, &NetworkCommon::default(), 4).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let v = Tensor::new(vec![3, cfg.visual_dim], (0..3 * cfg.visual_dim).map(|_| r.random_range(0.0..3.0)).collect()).unwrap();
    let a = Tensor::new(vec![3, cfg.audio_dim], (0..3 * cfg.audio_dim).map(|_| r.random_range(0.0..3.0)).collect()).unwrap();
    let out = m.forward(&[v.clone(), a], 4).unwrap();
    assert_eq!(out.counts.shape(), &[3, cfg.classes]);
    assert!(m.forward(&[v], 4).is_err());
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let m = desk_visual(HeadKind::Vanilla, 21);
    let x = random_images(3, 8, 4);
    let before = m.forward(&[x.clone()], 3).unwrap();
    let bytes = Checkpoint::new(m).to_bytes().unwrap();
    let restored = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(restored.to_bytes().unwrap(), bytes);
    let after = restored.model.forward(&[x], 3).unwrap();
    assert_eq!(before.counts, after.counts);
    assert_eq!(before.logits, after.logits);
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let mut bytes = Checkpoint::new(desk_visual(HeadKind::L2norm, 0)).to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    bytes[0] ^= 0xff;
    assert!(Checkpoint::from_bytes(&bytes).is_err());
}
