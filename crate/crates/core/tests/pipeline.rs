use grnn::graph::{build_gso, sbm, GsoKind, Permutation};
use grnn::model::{copy_last_forward, init_model, load_checkpoint, save_checkpoint, GatingKind, GrnnSpec};
use grnn::process::{kstep_dataset, noisy_diffusion, standard_normal_signal, NoiseSpec, SplitSizes, Targets};
use grnn::rng::seeded;
use grnn::stability::check_equivariance;
use grnn::train::{evaluate, rrmse, train, LossKind, TrainConfig};
use grnn::Mat;
use proptest::prelude::*;
use rand::Rng as _;

fn diffusion_setup(seed: u64) -> (Mat, grnn::process::GraphProcessDataset) {
    let g = sbm(10, 2, 0.8, 0.2, &mut seeded(seed)).unwrap();
    let s = build_gso(&g, GsoKind::NormalizedAdjacency).unwrap().into_matrix();
    let noise = NoiseSpec::new(0.01, 0.01).unwrap();
    let gen = |r: &mut grnn::rng::Rng| {
        let x0 = standard_normal_signal(10, r);
        noisy_diffusion(&s, &x0, 12, noise, r)
    };
    let ds = kstep_dataset(gen, 2, SplitSizes { train: 60, val: 10, test: 20 }, seed).unwrap();
    (s, ds)
}

#[test]
fn training_reduces_loss_and_checkpoint_round_trips() {
    let (s, ds) = diffusion_setup(1);
    let spec = GrnnSpec::basic(1, 4, 3, 1).with_gating(GatingKind::Node, None);
    let mut model = init_model(&spec, &mut seeded(2)).unwrap();
    let before = evaluate(&model, &s, &ds.test).unwrap().rrmse.unwrap();
    let cfg = TrainConfig {
        lr: 1e-2,
        epochs: 8,
        batch_size: 10,
        loss: LossKind::L1,
        seed: 3,
        clip_norm: None,
        select_on_validation: false,
    };
    let report = train(&mut model, &s, &ds, &cfg).unwrap();
    assert_eq!(report.losses.len(), 8 * 6);
    let after = evaluate(&model, &s, &ds.test).unwrap().rrmse.unwrap();
    assert!(after < before, "{after} vs {before}");

    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&model, Some(3), dir.path()).unwrap();
    let loaded = load_checkpoint(dir.path()).unwrap();
    assert_eq!(loaded, model);
    assert_eq!(evaluate(&loaded, &s, &ds.test).unwrap().rrmse.unwrap(), after);
}

#[test]
fn copy_last_baseline_matches_manual_rrmse() {
    let (_, ds) = diffusion_setup(4);
    let sample = &ds.test[0];
    let pred = copy_last_forward(&sample.inputs);
    let Targets::Signals(target) = &sample.targets else { panic!() };
    let manual: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).norm() / t.norm()).sum::<f64>() / target.len() as f64;
    let got = rrmse(&pred, target).unwrap();
    assert!((got - manual).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn relabeling_nodes_commutes_with_every_gating(seed in 0u64..10_000, kind in 0usize..4) {
        let kind = [GatingKind::None, GatingKind::Time, GatingKind::Node, GatingKind::Edge][kind];
        let n = 9;
        let g = sbm(n, 3, 0.7, 0.1, &mut seeded(seed)).unwrap();
        let s = build_gso(&g, GsoKind::NormalizedAdjacency).unwrap().into_matrix();
        let model = init_model(&GrnnSpec::basic(2, 3, 3, 2).with_gating(kind, Some(n)), &mut seeded(seed + 1)).unwrap();
        let mut r = seeded(seed + 2);
        let x: Vec<Mat> = (0..5).map(|_| Mat::from_fn(n, 2, |_, _| r.random::<f64>() - 0.5)).collect();
        let p = Permutation::random(n, &mut r);
        let rep = check_equivariance(&model, &s, &x, &p, 1e-9).unwrap();
        prop_assert!(rep.passed, "{}", rep.max_deviation);
    }
}
