mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdnn_core::convert::{fold_bias_and_zero_point, Requantizer};
use sdnn_core::detect::{decode_grid, iou, BoundingBox, GridLayout};
use sdnn_core::engine::conv2d_int;
use sdnn_core::quant::{dequantize_tensor, quantize_tensor};
use sdnn_core::runtime::{scatter_conv, GradedSpike, NeuronBlockState, SpikeBatch};
use sdnn_core::{
    Activation, ConvGeometry, ConvLayerSpec, DType, Dims3, QuantParams, QuantTensor, TensorF32,
};

fn geometry() -> impl Strategy<Value = (ConvGeometry, Dims3)> {
    (
        1usize..=4,
        1usize..=4,
        prop_oneof![Just(1usize), Just(3)],
        1usize..=2,
        0usize..=1,
        3usize..=10,
        3usize..=10,
    )
        .prop_filter_map(
            "padding must be smaller than kernel",
            |(ic, oc, k, s, p, h, w)| {
                let g = ConvGeometry {
                    in_channels: ic,
                    out_channels: oc,
                    kernel_h: k,
                    kernel_w: k,
                    stride: s,
                    padding: p,
                };
                let d = Dims3::new(ic, h, w);
                (g.validate().is_ok() && g.output_dims(d).is_ok()).then_some((g, d))
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn quantize_round_trip_within_half_step(
        scale in 1e-4f64..1.0,
        zp in 0i32..=255,
        q in 0i32..=255,
    ) {
        let qp = QuantParams::new(scale, zp, DType::U8).unwrap();
        let x = qp.dequantize_value(q);
        prop_assert_eq!(qp.quantize_value(x), q);
        let t = TensorF32::new(vec![1], vec![x as f32]).unwrap();
        let back = dequantize_tensor(&quantize_tensor(&t, qp).unwrap());
        prop_assert!((back.data()[0] as f64 - x).abs() <= scale / 2.0 + 1e-6);
    }

    #[test]
    fn requantizer_relative_error(log2r in -12.0f64..4.0) {
        let r = log2r.exp2();
        let q = Requantizer::derive(r).unwrap();
        prop_assert!(q.relative_error() <= (-23f64).exp2());
        prop_assert!(q.scale < 1 << 24);
    }

    #[test]
    fn requantizer_tracks_floor(acc in -(1i64 << 23)..(1i64 << 23), log2r in -12.0f64..0.0) {
        let r = log2r.exp2();
        let q = Requantizer::derive(r).unwrap();
        let got = q.apply(acc, 64).unwrap();
        let want = (acc as f64 * r).floor() as i64;
        prop_assert!((got - want).abs() <= 1);
    }

    #[test]
    fn zero_bias_zero_point_folds_to_zero(sums in prop::collection::vec(-2000i64..2000, 1..8)) {
        let b = vec![0.0f32; sums.len()];
        let folded = fold_bias_and_zero_point(&b, 0.01, 0, &sums, 24).unwrap();
        prop_assert!(folded.iter().all(|&v| v == 0));
    }

    #[test]
    fn dense_conv_matches_naive((g, d) in geometry(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = |m: i64| rng.random_range(0..m);
        let zp = next(256) as i32;
        let x: Vec<i32> = (0..d.len()).map(|_| next(256) as i32).collect();
        let w: Vec<i32> = (0..g.weight_len()).map(|_| next(255) as i32 - 127).collect();
        let layer = ConvLayerSpec {
            geometry: g,
            weights: QuantTensor::new(g.weight_shape(), w.clone(), QuantParams::new(0.01, 0, DType::I8).unwrap()).unwrap(),
            bias_f32: vec![0.0; g.out_channels],
            in_qparams: QuantParams::new(0.01, zp, DType::U8).unwrap(),
            out_qparams: QuantParams::new(0.1, 0, DType::U8).unwrap(),
            activation: Activation::Relu,
        };
        let xt = QuantTensor::new(d.to_vec(), x.clone(), layer.in_qparams).unwrap();
        let acc = conv2d_int(&xt, &layer, 32).unwrap();
        let centered: Vec<i64> = x.iter().map(|&v| (v - zp) as i64).collect();
        let w64: Vec<i64> = w.iter().map(|&v| v as i64).collect();
        let want = common::naive_conv(&centered, d, &g, &w64);
        let got: Vec<i64> = acc.data.iter().map(|&v| v as i64).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn scatter_matches_dense((g, d) in geometry(), seed in any::<u64>(), density in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = |m: i64| rng.random_range(0..m);
        let w: Vec<i8> = (0..g.weight_len()).map(|_| (next(255) - 127) as i8).collect();
        let layer = common::bare_layer(g, d, w.clone());
        let mut batch = SpikeBatch::new(0, -1);
        for n in 0..d.len() {
            if (next(1000) as f64) < density * 1000.0 {
                batch.spikes.push(GradedSpike { neuron: n as u32, payload: next(511) as i32 - 255 });
            }
        }
        let mut state = NeuronBlockState::new(&layer);
        scatter_conv(&batch, &layer, &mut state).unwrap();
        let dense: Vec<i64> = batch.densify(d.len()).iter().map(|&v| v as i64).collect();
        let w64: Vec<i64> = w.iter().map(|&v| v as i64).collect();
        let want = common::naive_conv(&dense, d, &g, &w64);
        let got: Vec<i64> = state.acc.iter().map(|&v| v as i64).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn iou_symmetric_and_bounded(
        a in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..0.5, 0.0f64..0.5),
        b in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..0.5, 0.0f64..0.5),
    ) {
        let mk = |(cx, cy, w, h): (f64, f64, f64, f64)| BoundingBox { cx, cy, w, h, objectness: 1.0, class_id: 0 };
        let (a, b) = (mk(a), mk(b));
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
    }

    #[test]
    fn raising_confidence_never_adds_boxes(
        logits in prop::collection::vec(-6.0f32..6.0, 2 * 2 * 9),
        lo in 0.0f64..1.0,
        hi in 0.0f64..1.0,
    ) {
        let layout = GridLayout::new(2, 2, 1, 4);
        let t = TensorF32::new(layout.dims().to_vec(), logits).unwrap();
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        let a = decode_grid(&t, &layout, lo).unwrap();
        let b = decode_grid(&t, &layout, hi).unwrap();
        prop_assert!(b.iter().all(|x| a.contains(x)));
    }
}
