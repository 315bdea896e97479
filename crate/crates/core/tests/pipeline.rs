use gradfeat::grad::{decode_features, encode_features};
use gradfeat::pipeline::{extract_features, run, EvalReport, PipelineConfig};
use gradfeat::{
    gram, BlockRef, Dataset, Error, FeatureMode, KernelKind, MultiLabelSet, SyntheticTask,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn task(noise: f64) -> SyntheticTask {
    SyntheticTask {
        seed: 11,
        n: 60,
        test_n: 40,
        dims: vec![16, 12, 10, 6],
        classes: 3,
        noise,
        inclusion: 0.35,
    }
}

#[test]
fn gradient_features_have_layer_dims() {
    let d = task(0.3).generate().unwrap();
    for k in 1..=3 {
        let f = extract_features(&d.net, &d.train, &PipelineConfig::new(FeatureMode::Gradient, k)).unwrap();
        let dims = d.net.dims();
        assert_eq!(f.dims(), (dims[k - 1], dims[k]));
        let bytes = encode_features(&f);
        assert_eq!(bytes[8], 0);
    }
    let fwd = extract_features(&d.net, &d.train, &PipelineConfig::new(FeatureMode::Forward, 2)).unwrap();
    assert_eq!(fwd.dims(), (10, 0));
    assert_eq!(encode_features(&fwd)[8], 1);
    let cat = extract_features(&d.net, &d.train, &PipelineConfig::new(FeatureMode::Concat, 2)).unwrap();
    assert_eq!(cat.dims(), (22, 0));
}

#[test]
fn extraction_is_repeatable() {
    let d = task(0.3).generate().unwrap();
    let cfg = PipelineConfig::new(FeatureMode::Gradient, 2);
    let a = encode_features(&extract_features(&d.net, &d.train, &cfg).unwrap());
    let b = encode_features(&extract_features(&d.net, &d.train, &cfg).unwrap());
    assert_eq!(a, b);
}

#[test]
fn reloaded_features_give_the_same_gram() {
    let d = task(0.3).generate().unwrap();
    for mode in [FeatureMode::Gradient, FeatureMode::Concat] {
        let cfg = PipelineConfig::new(mode, 2);
        let f = extract_features(&d.net, &d.train, &cfg).unwrap();
        let back = decode_features(&encode_features(&f)).unwrap();
        assert_eq!(gram(&f, cfg.kernel).unwrap().entries(), gram(&back, cfg.kernel).unwrap().entries());
    }
}

#[test]
fn noiseless_task_is_ranked_perfectly() {
    let d = task(0.0).generate().unwrap();
    let out = run(&d.net, &d.train, &d.test, &PipelineConfig::new(FeatureMode::Gradient, 2)).unwrap();
    assert_eq!(out.report.map.mean, 1.0);
}

#[test]
fn report_round_trips_and_lists_every_class() {
    let d = task(0.5).generate().unwrap();
    let out = run(&d.net, &d.train, &d.test, &PipelineConfig::new(FeatureMode::Concat, 3)).unwrap();
    let text = out.report.to_text();
    assert_eq!(text.lines().filter(|l| l.starts_with("ap[")).count(), 3);
    assert!(text.contains("mode: concat\n") && text.contains("blocks: x2,x3\n"));
    assert_eq!(EvalReport::from_text(&text).unwrap(), out.report);
    assert!(EvalReport::from_text("mode: gradient\n").is_err());
}

#[test]
fn trained_labels_beat_a_permuted_control() {
    let d = task(0.8).generate().unwrap();
    let cfg = PipelineConfig::new(FeatureMode::Gradient, 2);
    let real = run(&d.net, &d.train, &d.train, &cfg).unwrap().report.map.mean;

    let l = d.train.labels();
    let mut order: Vec<usize> = (0..l.n()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    let permuted: Vec<u8> = order
        .iter()
        .flat_map(|&i| (0..l.classes()).map(move |j| u8::from(l.get(i, j))))
        .collect();
    let samples: Vec<f32> = (0..d.train.n()).flat_map(|i| d.train.sample(i).to_vec()).collect();
    let shuffled = Dataset::new(
        d.train.dim(),
        samples,
        MultiLabelSet::new(l.n(), l.classes(), permuted).unwrap(),
    )
    .unwrap();
    let control = run(&d.net, &shuffled, &shuffled, &cfg).unwrap().report.map.mean;
    assert!(real >= control, "{real} < {control}");
}

#[test]
fn kernel_tag_does_not_change_forward_values() {
    let d = task(0.3).generate().unwrap();
    let cfg = PipelineConfig::new(FeatureMode::Forward, 2);
    let f = extract_features(&d.net, &d.train, &cfg).unwrap();
    let dot = gram(&f, KernelKind::Dot).unwrap();
    let tr = gram(&f, KernelKind::Trace).unwrap();
    assert_eq!(dot.entries(), tr.entries());
    assert_ne!(dot.kind(), tr.kind());

    let a = run(&d.net, &d.train, &d.test, &cfg).unwrap().report;
    let b = run(&d.net, &d.train, &d.test, &PipelineConfig { kernel: KernelKind::Trace, ..cfg }).unwrap().report;
    assert_eq!(a.map, b.map);
    assert_ne!(a.to_text(), b.to_text());
}

#[test]
fn invalid_configurations_are_rejected() {
    let d = task(0.3).generate().unwrap();
    let bad_tau = PipelineConfig { tau: 0.0, ..PipelineConfig::new(FeatureMode::Gradient, 1) };
    assert!(matches!(extract_features(&d.net, &d.train, &bad_tau), Err(Error::InvalidTemperature(_))));
    let bad_layer = PipelineConfig::new(FeatureMode::Gradient, 4);
    assert!(matches!(extract_features(&d.net, &d.train, &bad_layer), Err(Error::InvalidLayer { .. })));
    let bad_block = PipelineConfig {
        blocks: Some(vec![BlockRef::Activation(9)]),
        ..PipelineConfig::new(FeatureMode::Forward, 1)
    };
    assert!(extract_features(&d.net, &d.train, &bad_block).is_err());

    let other = SyntheticTask { dims: vec![5, 4, 3], ..task(0.3) }.generate().unwrap();
    assert!(matches!(
        extract_features(&d.net, &other.train, &PipelineConfig::new(FeatureMode::Gradient, 1)),
        Err(Error::DimensionMismatch { .. })
    ));
}
