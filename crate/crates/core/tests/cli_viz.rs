//! Prior-map rendering and the command-line front end.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{random_tensor, randomize};
use loasp::blocks::{FusionKind, PriorKind};
use loasp::harness::config::desk_scale;
use loasp::harness::{ModelConfig, ToyNet};
use loasp::module::named_tensors;
use loasp::numerics::checkpoint;
use loasp::numerics::Tensor;
use loasp::viz::{
    channel_mean, encode_ppm, extract_prior_map, gaussian_filter, gaussian_kernel, normalize, reds_colormap, Map,
};
use loasp::Error;
use proptest::prelude::*;

fn map_strategy() -> impl Strategy<Value = Map> {
    (1usize..12, 1usize..12)
        .prop_flat_map(|(h, w)| (Just(h), Just(w), prop::collection::vec(-2.0f64..2.0, h * w)))
        .prop_map(|(h, w, data)| Map::new(h, w, data).unwrap())
}

proptest! {
    #[test]
    fn filtering_commutes_with_transposition(map in map_strategy(), sigma in 0.3f64..3.0) {
        let a = gaussian_filter(&map, sigma).unwrap().transpose();
        let b = gaussian_filter(&map.transpose(), sigma).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_maps_pass_unchanged(h in 1usize..10, w in 1usize..10, v in -5.0f64..5.0, sigma in 0.3f64..4.0) {
        let out = gaussian_filter(&Map::new(h, w, vec![v; h * w]).unwrap(), sigma).unwrap();
        prop_assert!(out.data.iter().all(|x| (x - v).abs() < 1e-12));
    }

    #[test]
    fn interior_mass_is_preserved(sigma in 0.3f64..2.0, seed in any::<u64>()) {
        let r = (3.0 * sigma).ceil() as usize;
        let n = 4 * r + 3;
        let mut data = vec![0.0; n * n];
        // support kept at least one radius from the border
        let patch = random_tensor(seed, &[9], 1.0).to_vec();
        for (i, v) in patch.into_iter().enumerate() {
            data[(r + 1 + i / 3) * n + r + 1 + i % 3] = v;
        }
        let map = Map::new(n, n, data).unwrap();
        let before: f64 = map.data.iter().sum();
        let after: f64 = gaussian_filter(&map, sigma).unwrap().data.iter().sum();
        prop_assert!((before - after).abs() < 1e-12);
    }
}

#[test]
fn impulse_response_is_the_kernel() {
    let k = gaussian_kernel(1.0);
    assert_eq!(k.len(), 7);
    assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    let mut data = vec![0.0; 81];
    data[40] = 1.0;
    let out = gaussian_filter(&Map::new(9, 9, data).unwrap(), 1.0).unwrap();
    assert!((out.data[40] - k[3] * k[3]).abs() < 1e-15);
    assert!((out.data[41] - k[3] * k[4]).abs() < 1e-15);
    assert!(matches!(gaussian_filter(&out, 0.0), Err(Error::Contract(_))));
}

#[test]
fn colormap_examples() {
    let img = reds_colormap(&Map::new(1, 3, vec![0.0, 1.0, 0.5]).unwrap()).unwrap();
    assert_eq!(img.pixels, vec![255, 255, 255, 179, 0, 0, 217, 128, 128]);
    assert_eq!(encode_ppm(&img)[..11], *b"P6\n3 1\n255\n");
    assert!(matches!(reds_colormap(&Map::new(1, 1, vec![1.5]).unwrap()), Err(Error::Contract(_))));
}

#[test]
fn channel_reduction_examples() {
    let v = [0.2, -1.0, 3.0, 0.5];
    let one = Tensor::new(&[1, 1, 2, 2], v.to_vec()).unwrap();
    let m = normalize(&channel_mean(&one, 0).unwrap());
    assert_eq!(m.data, vec![0.3, 0.0, 1.0, 0.375]);
    let pair: Vec<f64> = v.iter().chain(v.iter().map(|x| -x).collect::<Vec<_>>().iter()).copied().collect();
    let two = Tensor::new(&[1, 2, 2, 2], pair).unwrap();
    assert_eq!(normalize(&channel_mean(&two, 0).unwrap()).data, vec![0.0; 4]);
}

fn small_model(cell: Option<(PriorKind, FusionKind)>) -> ModelConfig {
    ModelConfig { cell, ..desk_scale().model }
}

#[test]
fn fresh_models_have_flat_prior_maps() {
    let model = ToyNet::new(&small_model(Some((PriorKind::Loasp, FusionKind::Loap))), 0).unwrap();
    let image = random_tensor(1, &[1, 3, 32, 32], 1.0);
    for block in 0..model.blocks.len() {
        let map = extract_prior_map(&model, &image, block).unwrap();
        assert!(map.data.iter().all(|&v| v == 0.0), "block {block}");
    }
    let plain = ToyNet::new(&small_model(None), 0).unwrap();
    assert!(matches!(extract_prior_map(&plain, &image, 0), Err(Error::Config(_))));
    let added = ToyNet::new(&small_model(Some((PriorKind::Loasp, FusionKind::Add))), 0).unwrap();
    assert!(matches!(extract_prior_map(&added, &image, 0), Err(Error::Config(_))));
    assert!(matches!(extract_prior_map(&model, &image, 99), Err(Error::Config(_))));
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let config = small_model(Some((PriorKind::Loasp, FusionKind::Loap)));
    let trained = ToyNet::new(&config, 4).unwrap();
    randomize(&trained, 9, 0.5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&path, &named_tensors(&trained, None)).unwrap();

    let fresh = ToyNet::new(&config, 5).unwrap();
    checkpoint::load_into(&path, &named_tensors(&fresh, None)).unwrap();
    let a = named_tensors(&trained, None);
    let b = named_tensors(&fresh, None);
    assert_eq!(a.len(), b.len());
    for ((na, ta), (nb, tb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        let bits = |t: &Tensor| t.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(ta), bits(tb), "{na}");
    }

    let other = ToyNet::new(&small_model(None), 0).unwrap();
    assert!(checkpoint::load_into(&path, &named_tensors(&other, None)).is_err());
}

fn loasp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loasp"))
        .args(args)
        .current_dir(dir)
        .env_remove("LOASP_OUT")
        .output()
        .expect("binary runs")
}

#[test]
fn every_verb_has_help() {
    let dir = tempfile::tempdir().unwrap();
    let top = loasp(&["--help"], dir.path());
    assert!(top.status.success());
    for verb in ["gen-data", "train", "eval", "ablate", "grid", "count", "viz"] {
        let out = loasp(&[verb, "--help"], dir.path());
        assert!(out.status.success(), "{verb}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{verb}");
    }
}

#[test]
fn bad_arguments_fail_loudly() {
    let dir = tempfile::tempdir().unwrap();
    let out = loasp(&["count", "--bogus-flag"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bogus-flag"));

    let out = loasp(&["count", "no_such_key=1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    let out = loasp(&["train", "ablation.prior=snake"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn count_prints_and_writes_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = loasp(&["count", "--csv", "cost.csv"], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("block_id,channels,component,params,flops\n"));
    assert!(stdout.contains("total,,all,6513336,"));
    assert_eq!(std::fs::read_to_string(dir.path().join("cost.csv")).unwrap(), stdout);
}

#[test]
fn fresh_viz_is_white_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["image_size=32", "widths=8,16,32,64"];
    for name in ["a.ppm", "b.ppm"] {
        let mut full = vec!["viz", "--output", name];
        full.extend(args);
        let out = loasp(&full, dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir.path().join("a.ppm")).unwrap();
    let b = std::fs::read(dir.path().join("b.ppm")).unwrap();
    assert_eq!(a, b);
    let header = b"P6\n32 32\n255\n";
    assert_eq!(&a[..header.len()], header);
    assert!(a[header.len()..].iter().all(|&v| v == 255));
    assert_eq!(a.len(), header.len() + 3 * 32 * 32);
}

#[test]
fn train_eval_and_viz_share_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let tiny = [
        "epochs=1", "n_train=8", "n_test=5", "image_size=16", "widths=8,16,32,64", "held_out=D", "seeds=0",
        "batch_size=4",
    ];
    let with = |verb: &[&'static str]| -> Vec<&'static str> { verb.iter().chain(&tiny).copied().collect() };
    for run in ["r1", "r2"] {
        let out = loasp(&with(&["train", "--out", run]), dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("r1/metrics.csv"), read("r2/metrics.csv"));
    assert_eq!(read("r1/loss.csv"), read("r2/loss.csv"));
    assert_eq!(read("r1/model-D-s0.ckpt"), read("r2/model-D-s0.ckpt"));

    let out = loasp(&with(&["eval", "--run", "r1", "--out", "r1"]), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let eval = String::from_utf8(read("r1/eval.csv")).unwrap();
    assert!(eval.lines().count() >= 2, "{eval}");

    let out = loasp(&with(&["viz", "--checkpoint", "r1/model-D-s0.ckpt", "--output", "trained.ppm"]), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(read("trained.ppm").starts_with(b"P6\n16 16\n255\n"));
}
