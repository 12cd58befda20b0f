mod common;

use common::*;
use jiif::data::{generate_synthetic, DatasetName, RgbdPair, SyntheticSpec};
use jiif::evaluation::*;
use jiif::jiif_decoder::{DecoderMode, WeightStrategy};
use jiif::model::{zero_decoder, ModelConfig};
use jiif::raster::RasterImage;
use jiif::run::{run_eval, EvalSource, RunConfig};
use jiif::training::{Checkpoint, TrainConfig};
use proptest::prelude::*;

fn synth(count: usize, seed: u64, size: usize) -> Vec<RgbdPair<f64>> {
    generate_synthetic(&SyntheticSpec {
        count,
        seed,
        height: size,
        width: size,
    })
    .unwrap()
}

fn opts(scales: Vec<usize>) -> BenchmarkOptions {
    BenchmarkOptions {
        dataset: DatasetName::Synthetic,
        scales,
        noise_sigma: 0.0,
        seed: 0,
        crop: 0,
        save_maps: None,
    }
}

#[test]
fn rmse_examples_and_oracle() {
    let mut r = rng(1);
    let a = random_image(&mut r, 4, 4, 1);
    assert_eq!(rmse(&a, &a, 0).unwrap(), 0.0);
    let shifted = a.map(|v| v + 3.0);
    assert!((rmse(&shifted, &a, 0).unwrap() - 3.0).abs() < 1e-12);
    for _ in 0..10 {
        let p = random_image(&mut r, 4, 4, 1);
        let g = random_image(&mut r, 4, 4, 1);
        let sq: f64 = p.as_slice().iter().zip(g.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum();
        let oracle = (sq / 16.0).sqrt();
        assert!((rmse(&p, &g, 0).unwrap() - oracle).abs() < 1e-9);
    }
    assert!(rmse(&a, &random_image(&mut r, 4, 5, 1), 0).is_err());
}

#[test]
fn crop_excludes_borders() {
    let gt = RasterImage::<f64>::zeros(6, 6, 1);
    let mut pred = gt.clone();
    for i in 0..6 {
        pred.set(0, i, 0, 100.0);
        pred.set(i, 5, 0, 100.0);
    }
    assert!(rmse(&pred, &gt, 0).unwrap() > 0.0);
    assert_eq!(rmse(&pred, &gt, 1).unwrap(), 0.0);
    assert!(rmse(&pred, &gt, 3).is_err());
}

proptest! {
    #[test]
    fn rmse_is_symmetric_and_scales_with_affine_maps(
        p in prop::collection::vec(-10.0f64..10.0, 12),
        g in prop::collection::vec(-10.0f64..10.0, 12),
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let p = RasterImage::from_vec(3, 4, 1, p).unwrap();
        let g = RasterImage::from_vec(3, 4, 1, g).unwrap();
        let base = rmse(&p, &g, 0).unwrap();
        prop_assert_eq!(base, rmse(&g, &p, 0).unwrap());
        let scaled = rmse(&p.map(|v| a * v + b), &g.map(|v| a * v + b), 0).unwrap();
        prop_assert!((scaled - a.abs() * base).abs() <= 1e-9 * (1.0 + base));
    }
}

#[test]
fn report_average_is_the_mean_of_images() {
    let pairs = synth(5, 3, 32);
    let report = run_benchmark(&Predictor::Bicubic, &pairs, &opts(vec![4, 8])).unwrap();
    assert_eq!(report.method, "Bicubic");
    assert_eq!(report.unit, "cm");
    for s in &report.scales {
        assert_eq!(s.images.len(), 5);
        let mut sum = 0.0;
        for r in &s.images {
            sum += r.rmse;
        }
        assert_eq!(report.average(s.scale).unwrap(), sum / 5.0);
        assert!(s.images.iter().all(|r| r.rmse.is_finite() && r.rmse > 0.0));
    }
    // Coarser inputs are worse on average.
    assert!(report.average(8).unwrap() > report.average(4).unwrap());
    assert_eq!(report, run_benchmark(&Predictor::Bicubic, &pairs, &opts(vec![4, 8])).unwrap());
}

#[test]
fn unit_scale_passthrough_scores_zero() {
    let pairs = synth(3, 4, 16);
    let report = run_benchmark(&Predictor::Bicubic, &pairs, &opts(vec![1])).unwrap();
    for r in &report.scales[0].images {
        assert!(r.rmse < 1e-9, "{}", r.rmse);
    }
}

#[test]
fn report_records_are_line_oriented() {
    let pairs = synth(2, 5, 16);
    let report = run_benchmark(&Predictor::Bicubic, &pairs, &opts(vec![4])).unwrap();
    let records = report.to_records();
    assert!(records.lines().all(|l| l.split(' ').all(|kv| kv.contains('='))));
    assert!(records.contains("image=synth_0001"));
    assert!(records.contains("average_rmse="));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub/report.txt");
    report.write(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with(&records));
    assert!(report.render_table().contains("Bicubic"));
}

#[test]
fn error_map_of_identical_images_is_uniform_zero() {
    let mut r = rng(6);
    let img = random_unit_image(&mut r, 5, 7, 1);
    let colors = error_colors(&img, &img).unwrap();
    assert!(colors.iter().all(|&c| c == jet(0.0)));
}

#[test]
fn constant_offset_gives_uniform_nonzero_color() {
    let mut r = rng(7);
    let img = random_unit_image(&mut r, 5, 7, 1);
    let colors = error_colors(&img.map(|v| v + 2.0), &img).unwrap();
    assert!(colors.iter().all(|&c| c == colors[0]));
    assert_ne!(colors[0], jet(0.0));
}

#[test]
fn displaced_edge_error_lies_on_the_edge() {
    let step = |edge: usize| RasterImage::from_fn(10, 12, 1, move |_, x, _| if x < edge { 100.0 } else { 300.0 });
    let gt = step(6);
    let pred = step(7);
    let colors = error_colors(&pred, &gt).unwrap();
    for y in 0..10 {
        for x in 0..12 {
            let expected = if x == 6 { jet(1.0) } else { jet(0.0) };
            assert_eq!(colors[y * 12 + x], expected);
        }
    }
}

#[test]
fn error_maps_are_written_as_png() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(8);
    let gt = random_unit_image(&mut r, 6, 8, 1).map(|v| 100.0 * v);
    let pred = gt.map(|v| v + 1.0);
    let (err, pred_path) = save_error_map(&pred, &gt, &dir.path().join("maps"), "x", PRED_PNG_STEP).unwrap();
    assert!(err.is_file() && pred_path.is_file());
    let back = jiif::data::read_depth_png(&pred_path, PRED_PNG_STEP).unwrap();
    for (a, b) in back.as_slice().iter().zip(pred.as_slice()) {
        assert!((a - b).abs() <= 0.05 + 1e-9);
    }
    // A regular file where the directory should go.
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"").unwrap();
    let e = save_error_map(&pred, &gt, &blocker.join("maps"), "x", PRED_PNG_STEP).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    assert!(error_colors(&pred, &RasterImage::zeros(6, 7, 1)).is_err());
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        feature_dim: 4,
        num_residual_blocks: 1,
        kernel_size: 3,
        hidden_dims: vec![8],
        mode: DecoderMode::Joint,
        strategy: WeightStrategy::GraphAttention,
        use_residual: true,
    }
}

#[test]
fn zero_decoder_model_matches_the_bicubic_baseline() {
    let pairs = synth(3, 9, 32);
    let mut model = Checkpoint::<f64>::initial(tiny_model(), TrainConfig::default()).unwrap().model;
    zero_decoder(&mut model);
    let learned = run_benchmark(&Predictor::Model { model: &model, chunk: 100 }, &pairs, &opts(vec![4, 8])).unwrap();
    let bicubic = run_benchmark(&Predictor::Bicubic, &pairs, &opts(vec![4, 8])).unwrap();
    assert_eq!(learned.scales, bicubic.scales);
}

#[test]
fn zero_decoder_checkpoint_eval_equals_bicubic_eval() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig {
        name: "zero".into(),
        output_dir: dir.path().to_path_buf(),
        data_root: dir.path().join("none"),
        dataset: DatasetName::Synthetic,
        model: tiny_model(),
        ..RunConfig::default()
    };
    cfg.synthetic = SyntheticSpec {
        count: 3,
        seed: 1,
        height: 32,
        width: 32,
    };
    let mut ck = Checkpoint::<f32>::initial(cfg.model.clone(), cfg.train.clone()).unwrap();
    zero_decoder(&mut ck.model);
    let path = dir.path().join("ckpt_zero");
    ck.save(&path).unwrap();
    let (model, _) = run_eval(&cfg, &EvalSource::Checkpoint(path)).unwrap();
    let (bicubic, bicubic_path) = run_eval(&cfg, &EvalSource::Bicubic).unwrap();
    assert_eq!(model.scales, bicubic.scales);
    assert!(bicubic_path.is_file());
    let (zero, _) = run_eval(&cfg, &EvalSource::ZeroDecoder).unwrap();
    assert_eq!(zero.scales, bicubic.scales);
}

#[test]
fn missing_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        output_dir: dir.path().to_path_buf(),
        data_root: dir.path().join("none"),
        dataset: DatasetName::Synthetic,
        synthetic: SyntheticSpec {
            count: 1,
            seed: 0,
            height: 16,
            width: 16,
        },
        ..RunConfig::default()
    };
    let err = run_eval(&cfg, &EvalSource::Checkpoint(dir.path().join("nope"))).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("nope"));
}

#[test]
fn ablation_variants_follow_the_table_layout() {
    let v = ablation_variants(&ModelConfig::default());
    assert_eq!(v.len(), 7);
    let modules: Vec<_> = v.iter().filter(|r| r.table == AblationTable::Modules).collect();
    assert_eq!(modules.len(), 4);
    assert_eq!(
        modules.iter().map(|r| (r.config.mode, r.config.use_residual)).collect::<Vec<_>>(),
        vec![
            (DecoderMode::Separate, false),
            (DecoderMode::Joint, false),
            (DecoderMode::Separate, true),
            (DecoderMode::Joint, true),
        ]
    );
    assert!(modules[3].full_method && modules[..3].iter().all(|r| !r.full_method));
    let weights: Vec<_> = v.iter().filter(|r| r.table == AblationTable::Weights).map(|r| r.label.as_str()).collect();
    assert_eq!(weights, ["Bilinear", "Direct Regression", "Graph Attention"]);
    for r in &v {
        assert!(r.config.validate().is_ok(), "{}", r.label);
    }
}
