use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use squeezeformer::model::{tiny, EncoderModel, ModelConfig};
use squeezeformer::nn::{Forward, ParamStore, TemporalResampler};
use squeezeformer::tensor::{conv_out_len, Padding};
use squeezeformer::{Graph, Tensor};

fn matrix(rows: usize, cols: usize, vals: &[f64]) -> Tensor {
    Tensor::new(&[rows, cols], vals[..rows * cols].to_vec()).unwrap()
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, cols in 1usize..7, vals in prop::collection::vec(-50.0f64..50.0, 35), shift in -100.0f64..100.0) {
        let x = matrix(rows, cols, &vals);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = g.softmax(xv);
        let shifted = g.constant(Tensor::new(x.shape(), x.data().iter().map(|v| v + shift).collect()).unwrap());
        let z = g.softmax(shifted);
        for row in g.value(y).data().chunks(cols) {
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        prop_assert!(g.value(y).max_abs_diff(g.value(z)) < 1e-12);
    }

    #[test]
    fn layer_norm_rows_are_standardized(rows in 1usize..5, cols in 2usize..9, vals in prop::collection::vec(-10.0f64..10.0, 40)) {
        let x = matrix(rows, cols, &vals);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (gm, bt) = (g.constant(Tensor::ones(&[cols])), g.constant(Tensor::zeros(&[cols])));
        let y = g.layer_norm(xv, gm, bt, 1e-5).unwrap();
        for (xr, yr) in x.data().chunks(cols).zip(g.value(y).data().chunks(cols)) {
            let mean = xr.iter().sum::<f64>() / cols as f64;
            let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let ym = yr.iter().sum::<f64>() / cols as f64;
            let yv = yr.iter().map(|v| v * v).sum::<f64>() / cols as f64;
            prop_assert!(ym.abs() < 1e-10);
            prop_assert!((yv - var / (var + 1e-5)).abs() < 1e-9);
        }
    }

    #[test]
    fn same_padding_length(len in 1usize..500, k in 1usize..12, stride in 1usize..4) {
        let (out, left) = conv_out_len(len, k, stride, Padding::Same).unwrap();
        prop_assert_eq!(out, len.div_ceil(stride));
        prop_assert!(left <= k / 2);
    }
}

#[test]
fn logits_length_law_for_every_short_input() {
    let unet3 = ModelConfig {
        num_blocks: 3,
        downsample_after: Some(1),
        ..tiny(true)
    };
    let unet_off = ModelConfig { unet: false, ..tiny(true) };
    for cfg in [tiny(true), unet_off, unet3, tiny(false)] {
        let m = EncoderModel::build(&cfg, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 1..=200 {
            let x = Tensor::randn(&[t, cfg.input_feature_dim], 1.0, &mut rng);
            let y = m.logits(&x).unwrap();
            assert_eq!(y.shape(), [t.div_ceil(2).div_ceil(2), cfg.vocab_size + 1], "t={t} {cfg:?}");
        }
    }
}

#[test]
fn unet_round_trip_preserves_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let r = TemporalResampler::new(&mut store, "unet", 4, &mut rng);
    for t in 1..=200 {
        let mut f = Forward::inference(&store);
        let x = f.input(Tensor::randn(&[t, 4], 1.0, &mut rng));
        let (y, skip) = r.downsample(&mut f, x).unwrap();
        assert_eq!(f.graph.shape(y), [t.div_ceil(2), 4]);
        let z = r.upsample(&mut f, y, skip).unwrap();
        assert_eq!(f.graph.shape(z), [t, 4]);
    }
}
