//! Synthetic data, protocols, metrics and the training loop.

use loasp::harness::config::desk_scale;
use loasp::harness::dataset::{decode, encode, generate_split, load, save, Split};
use loasp::harness::grade::sample_inventory;
use loasp::harness::metrics::binary_auc;
use loasp::harness::{
    accuracy, assign_grade, build_protocol, default_domains, generate_image, macro_auc, macro_f1, train, train_one,
    DataBank, LesionInventory, Protocol, RunConfig,
};
use loasp::rng::stream;
use loasp::Error;
use proptest::prelude::*;

fn inventory(m: u32, h: u32, he: u32, se: u32, nv: u32) -> LesionInventory {
    LesionInventory { microaneurysms: m, hemorrhages: h, hard_exudates: he, soft_exudates: se, neovascular_tangles: nv }
}

#[test]
fn grade_examples() {
    assert_eq!(assign_grade(&inventory(0, 0, 0, 0, 0)), 0);
    assert_eq!(assign_grade(&inventory(2, 0, 0, 0, 0)), 1);
    assert_eq!(assign_grade(&inventory(1, 1, 1, 0, 0)), 2);
    assert_eq!(assign_grade(&inventory(0, 3, 0, 0, 0)), 2);
    assert_eq!(assign_grade(&inventory(0, 4, 0, 0, 0)), 3);
    assert_eq!(assign_grade(&inventory(0, 0, 0, 1, 0)), 3);
    assert_eq!(assign_grade(&inventory(0, 0, 0, 0, 1)), 4);
}

fn lesions() -> impl Strategy<Value = LesionInventory> {
    (0u32..6, 0u32..8, 0u32..4, 0u32..3, 0u32..2).prop_map(|(m, h, he, se, nv)| inventory(m, h, he, se, nv))
}

proptest! {
    #[test]
    fn adding_lesions_never_lowers_the_grade(base in lesions(), extra in lesions()) {
        let more = inventory(
            base.microaneurysms + extra.microaneurysms,
            base.hemorrhages + extra.hemorrhages,
            base.hard_exudates + extra.hard_exudates,
            base.soft_exudates + extra.soft_exudates,
            base.neovascular_tangles + extra.neovascular_tangles,
        );
        prop_assert!(assign_grade(&more) >= assign_grade(&base));
        prop_assert!(assign_grade(&base) <= 4);
    }

    #[test]
    fn sampled_inventories_have_their_grade(seed in any::<u64>(), grade in 0u8..5) {
        let inv = sample_inventory(&mut stream(seed), grade).unwrap();
        prop_assert_eq!(assign_grade(&inv), grade);
    }

    #[test]
    fn protocols_never_share_domains(n in 2usize..7, pivot in 0usize..7, sdg in any::<bool>()) {
        let domains: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
        let pivot = &domains[pivot % n];
        let mode = if sdg { Protocol::Sdg } else { Protocol::Dg };
        let split = build_protocol(&domains, mode, pivot).unwrap();
        prop_assert!(split.train.iter().all(|d| !split.test.contains(d)));
        prop_assert_eq!(split.train.len() + split.test.len(), n);
    }

    #[test]
    fn metrics_stay_in_the_unit_interval(
        rows in prop::collection::vec((0usize..4, prop::collection::vec(0.0f64..1.0, 4)), 2..40),
    ) {
        let labels: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let scores: Vec<f64> = rows.iter().flat_map(|r| r.1.clone()).collect();
        let preds: Vec<usize> = rows
            .iter()
            .map(|r| (0..4).max_by(|&a, &b| r.1[a].total_cmp(&r.1[b])).unwrap())
            .collect();
        for v in [accuracy(&preds, &labels).unwrap(), macro_f1(&preds, &labels, 4).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if let Ok(auc) = macro_auc(&scores, &labels, 4) {
            prop_assert!((0.0..=1.0).contains(&auc.value));
        }
    }
}

#[test]
fn invalid_grades_are_contract_violations() {
    assert!(matches!(sample_inventory(&mut stream(1), 5), Err(Error::Contract(_))));
    assert!(matches!(generate_image(1, 1, 7, 32, &default_domains()[0]), Err(Error::Contract(_))));
}

#[test]
fn generation_is_reproducible_and_grade_consistent() {
    let domains = default_domains();
    for grade in 0..5 {
        let a = generate_image(7, 100 + grade as u64, grade, 32, &domains[1]).unwrap();
        let b = generate_image(7, 100 + grade as u64, grade, 32, &domains[1]).unwrap();
        assert_eq!(a, b);
        assert_eq!(assign_grade(&a.inventory), grade);
        assert_eq!(a.image.len(), 3 * 32 * 32);
        assert!(a.image.iter().all(|v| (0.0..=1.0).contains(v)));
        if grade == 0 {
            assert_eq!(a.inventory, LesionInventory::default());
        }
    }
}

#[test]
fn style_is_applied_on_top_of_shared_geometry() {
    let domains = default_domains();
    let base = generate_image(3, 42, 2, 64, &domains[0]).unwrap();
    for d in &domains[1..] {
        let other = generate_image(3, 42, 2, 64, d).unwrap();
        assert_eq!(other.inventory, base.inventory);
        assert_ne!(other.image, base.image);
    }
    // same id, so the same noise; only the tint differs
    let mut tinted = domains[0].clone();
    tinted.tint = [0.1, 0.05, 0.0];
    let t = generate_image(3, 42, 2, 64, &tinted).unwrap();
    let plane = 64 * 64;
    for c in 0..3 {
        let mean = |img: &[f64]| img[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64;
        let shift = mean(&t.image) - mean(&base.image);
        assert!(shift >= 0.0 && (shift - tinted.tint[c]).abs() < 0.01, "channel {c}: {shift}");
    }
}

#[test]
fn datasets_do_not_depend_on_thread_count() {
    let d = &default_domains()[2];
    let one = encode(&generate_split(11, d, 2, Split::Train, 13, 24, 1).unwrap()).unwrap();
    for threads in [2, 3, 8] {
        let many = encode(&generate_split(11, d, 2, Split::Train, 13, 24, threads).unwrap()).unwrap();
        assert_eq!(one, many, "threads = {threads}");
    }
}

#[test]
fn dataset_files_round_trip() {
    let d = &default_domains()[3];
    let samples = generate_split(5, d, 3, Split::Test, 6, 16, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("D-test.lodg");
    save(&path, &samples).unwrap();
    assert_eq!(load(&path).unwrap(), samples);

    let mut bytes = encode(&samples).unwrap();
    bytes[0] = b'X';
    assert!(matches!(decode(&bytes, &path), Err(Error::Format { .. })));
    let bytes = encode(&samples).unwrap();
    assert!(decode(&bytes[..bytes.len() - 3], &path).is_err());
}

#[test]
fn protocol_examples() {
    let ids: Vec<String> = ["A", "B", "C", "D"].iter().map(|s| s.to_string()).collect();
    let dg = build_protocol(&ids, Protocol::Dg, "D").unwrap();
    assert_eq!((dg.train, dg.test), (vec!["A".to_string(), "B".into(), "C".into()], vec!["D".to_string()]));
    let sdg = build_protocol(&ids, Protocol::Sdg, "A").unwrap();
    assert_eq!((sdg.train, sdg.test), (vec!["A".to_string()], vec!["B".to_string(), "C".into(), "D".into()]));
    assert!(matches!(build_protocol(&ids[..1], Protocol::Dg, "A"), Err(Error::Config(_))));
    assert!(matches!(build_protocol(&ids, Protocol::Dg, "E"), Err(Error::Config(_))));
}

#[test]
fn metric_fixtures() {
    assert_eq!(accuracy(&[0, 1, 1], &[0, 0, 1]).unwrap(), 2.0 / 3.0);
    assert_eq!(macro_f1(&[0, 1, 1], &[0, 0, 1], 2).unwrap(), 2.0 / 3.0);

    let labels = [0, 1, 2, 1, 0, 2];
    let mut perfect = vec![0.0; 18];
    labels.iter().enumerate().for_each(|(i, &l)| perfect[i * 3 + l] = 1.0);
    assert_eq!(macro_auc(&perfect, &labels, 3).unwrap().value, 1.0);
    let flipped: Vec<f64> = perfect.iter().map(|v| 1.0 - v).collect();
    assert_eq!(macro_auc(&flipped, &labels, 3).unwrap().value, 0.0);
    assert_eq!(macro_auc(&[0.3; 18], &labels, 3).unwrap().value, 0.5);

    // ranks 1, 2.5, 2.5, 4; positives hold 2.5 + 4, so U = 6.5 - 3 over 4 pairs
    assert_eq!(binary_auc(&[0.1, 0.4, 0.4, 0.8], &[false, true, false, true]), Some(0.875));

    let report = macro_auc(&perfect[..12], &[0, 1, 0, 1], 3).unwrap();
    assert_eq!(report.skipped, vec![2]);

    assert!(matches!(accuracy(&[], &[]), Err(Error::Contract(_))));
    assert!(matches!(macro_f1(&[], &[], 3), Err(Error::Contract(_))));
    assert!(matches!(macro_auc(&[], &[], 3), Err(Error::Contract(_))));
}

fn tiny() -> RunConfig {
    let mut config = desk_scale();
    config.pivots = vec!["D".into()];
    config.seeds = vec![3];
    config.epochs = 1;
    config.n_train = 12;
    config.n_test = 10;
    config.batch_size = 8;
    config.model.image_size = 16;
    config
}

#[test]
fn untrained_runs_report_metrics_only() {
    let mut config = tiny();
    config.epochs = 0;
    let bank = DataBank::generate(&config).unwrap();
    let report = train(&config, &bank).unwrap();
    assert!(report.losses.is_empty());
    assert_eq!(report.metrics.len(), 1);
    let row = &report.metrics[0];
    assert_eq!((row.epoch, row.split.as_str(), row.held_out.as_str()), (0, "test:D", "D"));
}

#[test]
fn identical_runs_write_identical_csv() {
    let config = tiny();
    let bank = DataBank::generate(&config).unwrap();
    let a = train(&config, &bank).unwrap();
    let b = train(&config, &DataBank::generate(&config).unwrap()).unwrap();
    assert_eq!(a.metrics_csv().unwrap(), b.metrics_csv().unwrap());
    assert_eq!(a.loss_csv().unwrap(), b.loss_csv().unwrap());
    let text = String::from_utf8(a.metrics_csv().unwrap()).unwrap();
    assert!(text.starts_with("run_id,seed,protocol,held_out,epoch,split,acc,macro_f1,macro_auc\n"));
}

#[test]
fn invalid_run_configs_are_rejected() {
    let mut config = tiny();
    config.batch_size = 1;
    assert!(matches!(config.validate(), Err(Error::Config(_))));
    let mut config = tiny();
    config.domains.truncate(2);
    config.pivots = vec!["A".into()];
    assert!(matches!(config.validate(), Err(Error::Config(_))));
    let mut config = tiny();
    config.domains[0].gamma = 3.0;
    assert!(matches!(config.validate(), Err(Error::Config(_))));
}

#[test]
fn training_loss_goes_down() {
    let mut config = desk_scale();
    config.n_train = 64;
    config.seeds = vec![0];
    let bank = DataBank::generate(&config).unwrap();
    let losses = train_one(&config, &bank, "A", 0).unwrap().report.losses;
    assert_eq!(losses.len(), config.epochs);
    let first = losses[0].loss;
    let last = losses[losses.len() - 1].loss;
    assert!(last < first, "loss went from {first} to {last}");
}
