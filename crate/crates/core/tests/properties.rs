use lffd_core::assign::{
    assign, branch_center, decode_target, encode_target, gray_bounds, FaceBox, Label,
};
use lffd_core::augment::{augment_sample, AugmentConfig, Sample};
use lffd_core::conv::{conv2d_forward, ConvGeometry, ConvParams};
use lffd_core::detect::{nms, Detection};
use lffd_core::image::RgbImage;
use lffd_core::loss::{mine_hard_negatives, NEG_FLOOR, NEG_PER_POS};
use lffd_core::net::{ModelWeights, NetworkConfig};
use lffd_core::optim::{lr_at, sgd_step, xavier_bound, xavier_init, SgdState};
use lffd_core::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn geometry() -> impl Strategy<Value = ConvGeometry> {
    prop_oneof![
        Just(ConvGeometry::conv3x3(1)),
        Just(ConvGeometry::conv3x3(2)),
        Just(ConvGeometry::conv1x1()),
    ]
}

fn face_box() -> impl Strategy<Value = FaceBox> {
    (0.0f32..200.0, 0.0f32..200.0, 1.0f32..120.0, 0.7f32..1.3)
        .prop_map(|(x, y, w, r)| FaceBox::new(x, y, x + w, y + w * r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_linear_and_shaped(
        g in geometry(),
        c in 1usize..5,
        o in 1usize..5,
        h in 1usize..12,
        w in 1usize..12,
        seed in any::<u64>(),
        a in -2.0f64..2.0,
    ) {
        let p = ConvParams::new(g, tensor(&[o, c, g.kernel, g.kernel], seed), vec![0.0; o]).unwrap();
        let x = tensor(&[c, h, w], seed ^ 1);
        let y = tensor(&[c, h, w], seed ^ 2);
        let mut mix = x.clone();
        mix.scale(a);
        mix.add_assign(&y).unwrap();
        let lhs = conv2d_forward(&mix, &p).unwrap();
        let mut rhs = conv2d_forward(&x, &p).unwrap();
        rhs.scale(a);
        rhs.add_assign(&conv2d_forward(&y, &p).unwrap()).unwrap();
        let oh = (h + 2 * g.pad - g.kernel) / g.stride + 1;
        let ow = (w + 2 * g.pad - g.kernel) / g.stride + 1;
        prop_assert_eq!(lhs.shape(), &[o, oh, ow]);
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((l - r).abs() < 1e-10);
        }
    }

    #[test]
    fn decode_inverts_encode(
        cx in -50.0f32..300.0,
        cy in -50.0f32..300.0,
        rf in prop::sample::select(vec![55.0f32, 71.0, 111.0, 143.0, 223.0, 383.0, 511.0, 639.0]),
        f in face_box(),
    ) {
        let t = encode_target((cx, cy), rf, &f).unwrap();
        let d = decode_target((cx, cy), rf, &t);
        for (a, b) in [(d.x1, f.x1), (d.y1, f.y1), (d.x2, f.x2), (d.y2, f.y2)] {
            prop_assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0) * 4.0);
        }
    }

    #[test]
    fn gray_bounds_bracket_the_band(lo in 1usize..1000, span in 1usize..1000) {
        let hi = lo + span;
        let g = gray_bounds(lo, hi);
        prop_assert_eq!(g.lower.1, lo);
        prop_assert_eq!(g.upper.0, hi);
        // Compared in tenths so 0.9 and 1.1 stay exact.
        prop_assert!(10 * g.lower.0 <= 9 * lo && 9 * lo < 10 * (g.lower.0 + 1));
        prop_assert!(10 * g.upper.1 >= 11 * hi && 11 * hi > 10 * (g.upper.1 - 1));
    }

    /// Every cell gets one label, and each label is justified by the faces.
    #[test]
    fn labels_partition_the_map(
        faces in prop::collection::vec((0.0f32..150.0, 0.0f32..150.0, 8.0f32..80.0), 0..6),
        branch_idx in 0usize..4,
    ) {
        let faces: Vec<FaceBox> = faces.iter().map(|&(x, y, s)| FaceBox::new(x, y, x + s, y + s)).collect();
        let net = NetworkConfig::desk(4);
        let b = &net.branches[branch_idx];
        let (mh, mw) = net.map_dims(b.tap_layer, 160, 160);
        let map = assign(&faces, b, mh, mw);
        let gray = gray_bounds(b.scale_lo, b.scale_hi);
        let in_band = |f: &FaceBox| !gray.contains(f.size()) && (b.scale_lo as f32) < f.size() && f.size() <= b.scale_hi as f32;
        prop_assert_eq!(map.labels.len(), mh * mw);
        prop_assert_eq!(
            map.count(Label::Positive) + map.count(Label::Negative) + map.count(Label::Ignore),
            mh * mw
        );
        for r in 0..mh {
            for c in 0..mw {
                let (x, y) = branch_center(b, r, c);
                let owners: Vec<&FaceBox> = faces.iter().filter(|f| in_band(f) && f.contains(x, y)).collect();
                let grayed = faces.iter().any(|f| gray.contains(f.size()) && f.contains(x, y));
                let want = if grayed || owners.len() >= 2 {
                    Label::Ignore
                } else if owners.len() == 1 {
                    Label::Positive
                } else {
                    Label::Negative
                };
                prop_assert_eq!(map.label(r, c), want);
                if want == Label::Positive {
                    let d = decode_target((x, y), b.rf_size as f32, &map.target(r, c));
                    prop_assert!(d.iou(owners[0]) > 0.999);
                }
            }
        }
    }

    #[test]
    fn nms_output_is_an_ordered_separated_subset(
        raw in prop::collection::vec((face_box(), 0.0f32..1.0), 0..60),
        thresh in 0.05f32..0.95,
    ) {
        let dets: Vec<Detection> = raw.iter().map(|&(bbox, score)| Detection { bbox, score, branch_id: 1 }).collect();
        let kept = nms(dets.clone(), thresh);
        for k in &kept {
            prop_assert!(dets.contains(k));
        }
        for w in kept.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(a.bbox.iou(&b.bbox) < thresh);
            }
        }
        prop_assert_eq!(nms(kept.clone(), thresh), kept);
    }

    #[test]
    fn mining_keeps_the_hardest(
        losses in prop::collection::vec(0.0f32..5.0, 0..300),
        n_pos in 0usize..30,
    ) {
        let pairs: Vec<(usize, f32)> = losses.iter().copied().enumerate().collect();
        let picked = mine_hard_negatives(&pairs, n_pos);
        let quota = if n_pos == 0 { NEG_FLOOR } else { NEG_PER_POS * n_pos };
        prop_assert_eq!(picked.len(), quota.min(pairs.len()));
        let floor = picked.iter().map(|&i| losses[i]).fold(f32::INFINITY, f32::min);
        for (i, &l) in losses.iter().enumerate() {
            if picked.binary_search(&i).is_err() {
                prop_assert!(l <= floor);
            }
        }
    }

    #[test]
    fn lr_never_increases(a in 0u64..2_000_000, b in 0u64..2_000_000) {
        let drops = [600_000, 1_000_000, 1_200_000, 1_400_000];
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(lr_at(hi, 0.1, &drops, 0.1) <= lr_at(lo, 0.1, &drops, 0.1));
    }

    #[test]
    fn augmentation_invariants(seed in any::<u64>()) {
        let mut img = RgbImage::new(120, 90);
        img.put(5, 5, [200, 100, 50]);
        let dataset = [Sample {
            image: img,
            faces: vec![FaceBox::new(10.0, 10.0, 40.0, 44.0), FaceBox::new(60.0, 30.0, 75.0, 45.0)],
        }];
        let net = NetworkConfig::desk(4);
        let cfg = AugmentConfig::for_network(&net, 96);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = augment_sample(&dataset, &cfg, &mut rng).unwrap();
        prop_assert_eq!((a.image.width(), a.image.height()), (96, 96));
        let (lo, hi) = cfg.bands[a.band];
        let s = a.anchor.size();
        prop_assert!(s >= lo as f32 - 1e-3 && s <= hi as f32 + 1e-3);
        prop_assert!(a.anchor.x1 >= 0.0 && a.anchor.y1 >= 0.0 && a.anchor.x2 <= 96.0 && a.anchor.y2 <= 96.0);
        for f in a.faces.iter().chain(&a.ignored) {
            prop_assert!(f.x1 >= 0.0 && f.y1 >= 0.0 && f.x2 <= 96.0 && f.y2 <= 96.0);
        }
        for f in &a.faces {
            prop_assert!(f.size() >= cfg.min_face && f.size() <= cfg.max_face);
        }
    }
}

#[test]
fn sgd_matches_the_momentum_recurrence() {
    let net = NetworkConfig::desk(2);
    let mut w: ModelWeights<f64> = xavier_init(&net, 5).cast();
    let start = w.clone();
    let mut g = ModelWeights::<f64>::zeros(&net);
    for (i, c) in g.convs_mut().into_iter().enumerate() {
        for (j, v) in c.weights.data_mut().iter_mut().enumerate() {
            *v = ((i * 31 + j) % 7) as f64 - 3.0;
        }
    }
    let mut state = SgdState::new(&net);
    let (lr, mu) = (0.01, 0.9);
    let steps = 5;
    for _ in 0..steps {
        sgd_step(&mut w, &g, &mut state, lr, mu, 0.0).unwrap();
    }
    // v_n = g·(1 − μⁿ)/(1 − μ); w_n = w_0 − lr·g·Σ_k (1 − μᵏ)/(1 − μ)
    let vel: f64 = (1.0 - mu.powi(steps)) / (1.0 - mu);
    let disp: f64 = (1..=steps).map(|k| (1.0 - mu.powi(k)) / (1.0 - mu)).sum();
    for ((wc, sc), (gc, vc)) in w.convs().iter().zip(start.convs()).zip(g.convs().iter().zip(state.velocity.convs())) {
        for (((wv, sv), gv), vv) in wc.weights.data().iter().zip(sc.weights.data()).zip(gc.weights.data()).zip(vc.weights.data()) {
            assert!((vv - gv * vel).abs() < 1e-12);
            assert!((wv - (sv - lr * gv * disp)).abs() < 1e-12);
        }
    }
}

#[test]
fn xavier_statistics() {
    let net = NetworkConfig::reference();
    let w = xavier_init(&net, 21);
    for (spec, conv) in net.all_layers().iter().zip(w.convs()) {
        let a = xavier_bound(spec);
        let d = conv.weights.data();
        let n = d.len() as f64;
        let mean = d.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = d.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let sigma_mean = (a * a / 3.0 / n).sqrt();
        assert!(d.iter().all(|&v| (v as f64).abs() <= a));
        assert!(mean.abs() <= 3.0 * sigma_mean, "{}: mean {mean}", spec.name);
        // Variance of the sample variance of U(−a, a) is 4a⁴/(45n).
        let sigma_var = (4.0 * a.powi(4) / 45.0 / n).sqrt();
        assert!((var - a * a / 3.0).abs() <= 4.0 * sigma_var, "{}: var {var}", spec.name);
        assert!(conv.bias.iter().all(|&b| b == 0.0));
    }
}

/// Over 10,000 draws each band is picked with frequency `1/4` within 3σ.
#[test]
fn band_selection_is_uniform() {
    let dataset = [Sample {
        image: RgbImage::new(64, 64),
        faces: vec![FaceBox::new(20.0, 20.0, 40.0, 40.0)],
    }];
    let net = NetworkConfig::desk(4);
    let mut cfg = AugmentConfig::for_network(&net, 96);
    cfg.max_supersample = 1;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 10_000;
    let mut counts = vec![0usize; cfg.bands.len()];
    for _ in 0..n {
        counts[augment_sample(&dataset, &cfg, &mut rng).unwrap().band] += 1;
    }
    let p = 1.0 / counts.len() as f64;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{c}");
    }
}
