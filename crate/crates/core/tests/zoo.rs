use gconv_core::checkpoint::Checkpoint;
use gconv_core::nn::init::Init;
use gconv_core::nn::{ConvKind, Mode};
use gconv_core::zoo::{
    build_model, count_weights, dummy_input, shape_audit, ArchSpec, CountPolicy, Resolution, Role,
};

fn audit(res: Resolution, kind: ConvKind) -> gconv_core::zoo::ParamReport {
    let spec = ArchSpec::new(res, Role::Generator, kind).with_init(Init::Zeros);
    count_weights(&build_model(&spec).unwrap(), CountPolicy::ConvOnly)
}

#[test]
fn generator_32_matches_reported_counts() {
    let conv = audit(Resolution::R32, ConvKind::Conv);
    let gconv = audit(Resolution::R32, ConvKind::GConv);
    assert_eq!(conv.conv_weights, 6 * 3 * 3 * 256 * 256 + 3 * 3 * 256 * 3);
    assert_eq!(conv.conv_weights, 3_545_856);
    assert_eq!(gconv.conv_weights, 4_381_440);
    assert!((conv.conv_weights as f64 / 3.54e6 - 1.0).abs() < 0.01);
    assert!((gconv.conv_weights as f64 / 4.37e6 - 1.0).abs() < 0.01);
    assert_eq!(conv.gconv_extra, 0);
    assert_eq!(conv.layers.len(), 7);
}

#[test]
fn gconv_counts_add_exactly_the_converting_weights() {
    for res in [
        Resolution::Toy,
        Resolution::R32,
        Resolution::R128,
        Resolution::R256,
    ] {
        let conv = audit(res, ConvKind::Conv);
        let gconv = audit(res, ConvKind::GConv);
        assert_eq!(
            gconv.conv_weights,
            conv.conv_weights + gconv.gconv_extra,
            "{res}"
        );
        let want: usize = gconv
            .layers
            .iter()
            .filter(|l| l.name.ends_with(".ws") || l.name.ends_with(".wl"))
            .map(|l| l.count)
            .sum();
        assert_eq!(gconv.gconv_extra, want);
        // each generative layer holds (m + d_z) n + n^2 extra weights
        for l in gconv.layers.iter().filter(|l| l.name.ends_with(".ws")) {
            let n = l.shape[1];
            let wl = gconv
                .layers
                .iter()
                .find(|x| x.name == l.name.replace(".ws", ".wl"))
                .unwrap();
            assert_eq!(wl.shape, [n, n]);
            let k = gconv
                .layers
                .iter()
                .find(|x| x.name == l.name.replace(".ws", ".k"))
                .unwrap();
            assert_eq!(l.shape[0], k.shape[2] + 32);
        }
    }
}

#[test]
fn all_policy_covers_every_trainable_entry() {
    let spec =
        ArchSpec::new(Resolution::R32, Role::Generator, ConvKind::GConv).with_init(Init::Zeros);
    let model = build_model(&spec).unwrap();
    let all = count_weights(&model, CountPolicy::All);
    assert_eq!(
        all.layers.iter().map(|l| l.count).sum::<usize>(),
        all.total_weights
    );
    assert!(all.total_weights > all.conv_weights);
}

#[test]
fn generator_32_forward_is_bounded_image() {
    let spec = ArchSpec::new(Resolution::R32, Role::Generator, ConvKind::GConv);
    let mut model = build_model(&spec).unwrap();
    let y = model.infer(&dummy_input(&spec), Mode::Train).unwrap();
    assert_eq!(y.shape(), &[2, 32, 32, 3]);
    assert!(y.data().iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn discriminator_128_scores_batch() {
    let spec = ArchSpec::new(Resolution::R128, Role::Discriminator, ConvKind::Conv)
        .with_init(Init::Scaled);
    let trace = shape_audit(&spec).unwrap();
    assert_eq!(trace.first().unwrap().shape, [2, 128, 128, 3]);
    assert_eq!(trace.last().unwrap().shape, [2, 1]);
}

#[test]
fn large_generators_reach_their_resolution() {
    for res in [Resolution::R128, Resolution::R256] {
        let spec = ArchSpec::new(res, Role::Generator, ConvKind::Conv);
        let trace = shape_audit(&spec).unwrap();
        let s = res.size().unwrap();
        assert_eq!(trace.last().unwrap().shape, [2, s, s, 3]);
        if res == Resolution::R256 {
            assert_eq!(spec.stages.len(), 6);
        }
    }
}

#[test]
fn toy_discriminator_trace() {
    let spec = ArchSpec::new(Resolution::Toy, Role::Discriminator, ConvKind::Conv);
    let widths: Vec<usize> = shape_audit(&spec)
        .unwrap()
        .iter()
        .map(|t| *t.shape.last().unwrap())
        .collect();
    assert_eq!(widths, [2, 128, 128, 128, 1]);
}

#[test]
fn builds_are_deterministic_per_seed() {
    for role in [Role::Generator, Role::Discriminator] {
        let spec = ArchSpec::new(Resolution::Toy, role, ConvKind::Conv).with_seed(5);
        let a = Checkpoint::capture(&build_model(&spec).unwrap().params);
        let b = Checkpoint::capture(&build_model(&spec).unwrap().params);
        assert_eq!(a, b);
        let c = Checkpoint::capture(&build_model(&spec.clone().with_seed(6)).unwrap().params);
        assert_ne!(a, c);
    }
}

#[test]
fn report_serializes_with_expected_fields() {
    let r = audit(Resolution::R32, ConvKind::Conv);
    let v: serde_json::Value = serde_json::to_value(&r).unwrap();
    for key in [
        "resolution",
        "conv_kind",
        "conv_weights",
        "gconv_extra",
        "layers",
    ] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert_eq!(v["resolution"], "32");
    assert_eq!(v["layers"][0].as_object().unwrap().len(), 3);
}
