mod common;

use chrono::{Duration, NaiveDate};
use hotcold::config::{RunConfig, ThresholdMode};
use hotcold::dataset::{generate_synthetic, rank_top_fraction, Catalog, ContentRecord, Popularity, ViewLog};
use hotcold::eval::{evaluate_rolling, TrainedModel};
use hotcold::hybrid::{train_hybrid, HybridModel, Routing};
use proptest::prelude::*;
use rand::Rng;

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.net.epochs = 4;
    cfg.net.hidden = vec![16, 8];
    cfg.gbdt.n_trees = 20;
    cfg
}

fn small_catalog(seed: u64) -> (Vec<ContentRecord>, Vec<ViewLog>) {
    generate_synthetic(500, 100, seed, 0.7).unwrap()
}

fn split_date(contents: &[ContentRecord]) -> NaiveDate {
    let mut dates: Vec<NaiveDate> = contents.iter().map(|c| c.release_date).collect();
    dates.sort();
    dates[dates.len() * 3 / 4]
}

#[test]
fn hot_count_is_exact_for_every_size() {
    let mut r = common::rng(3);
    for n in 1..=1000usize {
        let totals: Vec<(String, u64)> = (0..n).map(|i| (format!("c{i:04}"), r.random_range(0..50))).collect();
        let labels = rank_top_fraction(totals, 0.2).unwrap();
        let hot = labels.iter().filter(|l| l.label == Popularity::Hot).count();
        assert_eq!(hot, n.div_ceil(5), "n = {n}");
    }
}

proptest! {
    #[test]
    fn hot_contents_outrank_cold_ones(totals in prop::collection::vec(0u64..1000, 1..200)) {
        let named: Vec<(String, u64)> = totals.iter().enumerate().map(|(i, &t)| (format!("c{i:03}"), t)).collect();
        let labels = rank_top_fraction(named, 0.2).unwrap();
        let min_hot = labels.iter().filter(|l| l.label.is_hot()).map(|l| l.window_total_views).min().unwrap();
        let max_cold = labels.iter().filter(|l| !l.label.is_hot()).map(|l| l.window_total_views).max();
        prop_assert!(max_cold.is_none_or(|c| c <= min_hot));
    }
}

#[test]
fn post_release_logs_do_not_leak() {
    let (contents, logs) = small_catalog(17);
    let as_of = split_date(&contents);
    let clean = Catalog::new(contents.clone(), &logs).unwrap();
    let test_ids: Vec<&ContentRecord> = contents.iter().filter(|c| c.release_date >= as_of).collect();
    assert!(!test_ids.is_empty());
    let poisoned_logs: Vec<ViewLog> = logs
        .iter()
        .map(|l| {
            let c = clean.get(&l.content_id).unwrap();
            let mut l = l.clone();
            if c.release_date >= as_of && l.date >= c.release_date {
                l.view_count = l.view_count * 1000 + 7;
            }
            l
        })
        .collect();
    assert_ne!(poisoned_logs, logs);
    let poisoned = Catalog::new(contents.clone(), &poisoned_logs).unwrap();

    let cfg = small_config();
    let model = train_hybrid(&clean, as_of, &cfg).unwrap();
    let model_p = train_hybrid(&poisoned, as_of, &cfg).unwrap();
    assert_eq!(model.to_json(), model_p.to_json());

    // every test content is scored at the shared decision time
    let t = as_of;
    for c in test_ids {
        let (_, fv) = model.features(&clean, c, t).unwrap();
        let (_, fv_p) = model.features(&poisoned, c, t).unwrap();
        assert_eq!(serde_json::to_string(&fv).unwrap(), serde_json::to_string(&fv_p).unwrap());
        let p = model.predict(&clean, c, t).unwrap();
        let p_p = model.predict(&poisoned, c, t).unwrap();
        assert_eq!(p.probability.to_bits(), p_p.probability.to_bits());
        assert_eq!(p.label, p_p.label);
    }
}

#[test]
fn training_and_evaluation_are_deterministic() {
    let (contents, logs) = small_catalog(23);
    let catalog = Catalog::new(contents.clone(), &logs).unwrap();
    let mut cfg = small_config();
    cfg.threshold.mode = ThresholdMode::Calibrated;
    let as_of = split_date(&contents);
    let a = train_hybrid(&catalog, as_of, &cfg).unwrap();
    let b = train_hybrid(&catalog, as_of, &cfg).unwrap();
    assert_eq!(a.to_json(), b.to_json());

    let ra = evaluate_rolling(&catalog, &cfg, &TrainedModel(Routing::Hybrid), None).unwrap();
    let rb = evaluate_rolling(&catalog, &cfg, &TrainedModel(Routing::Hybrid), None).unwrap();
    assert_eq!(ra.to_json(), rb.to_json());
    assert!(!ra.periods.is_empty());
}

#[test]
fn saved_model_predicts_bit_identically() {
    let (contents, logs) = small_catalog(29);
    let catalog = Catalog::new(contents.clone(), &logs).unwrap();
    let as_of = split_date(&contents);
    let model = train_hybrid(&catalog, as_of, &small_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let loaded = HybridModel::load(&path).unwrap();
    assert_eq!(loaded.to_json(), model.to_json());
    let mut n = 0;
    for c in contents.iter().filter(|c| c.release_date >= as_of) {
        let t = model.decision_time(c.release_date);
        let a = model.predict(&catalog, c, t).unwrap();
        let b = loaded.predict(&catalog, c, t).unwrap();
        assert_eq!(a.probability.to_bits(), b.probability.to_bits());
        assert_eq!(a.label, b.label);
        n += 1;
    }
    assert!(n > 0);
}

#[test]
fn predicting_after_release_is_rejected() {
    let (contents, logs) = small_catalog(31);
    let catalog = Catalog::new(contents.clone(), &logs).unwrap();
    let as_of = split_date(&contents);
    let model = train_hybrid(&catalog, as_of, &small_config()).unwrap();
    let c = contents.iter().find(|c| c.release_date >= as_of).unwrap();
    assert!(model.predict(&catalog, c, c.release_date + Duration::days(1)).is_err());
    assert!(model.predict(&catalog, c, c.release_date).is_ok());
}

#[test]
fn single_route_models_refuse_the_other_route() {
    let (contents, logs) = small_catalog(37);
    let catalog = Catalog::new(contents.clone(), &logs).unwrap();
    let as_of = split_date(&contents);
    let (model, _) = hotcold::hybrid::train_model(&catalog, catalog.timeline().unwrap().start, as_of, Routing::TypeAOnly, &small_config()).unwrap();
    let outcomes: Vec<bool> = contents
        .iter()
        .filter(|c| c.release_date >= as_of)
        .map(|c| model.predict(&catalog, c, model.decision_time(c.release_date)).is_ok())
        .collect();
    assert!(outcomes.contains(&true));
    assert!(outcomes.contains(&false));
}
