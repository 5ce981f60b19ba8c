//! Property tests over the public API: lattice bookkeeping, data plumbing and
//! model persistence.

use std::collections::BTreeSet;

use proptest::prelude::*;

use mtfl_core::active_set::fit_state;
use mtfl_core::data::{load_dataset, split, standardize, write_dataset, DatasetBundle, TaskData};
use mtfl_core::hyper::Hyperparams;
use mtfl_core::kernel::per_feature_kernels;
use mtfl_core::lattice::{Lattice, Orientation, TaskGroup};
use mtfl_core::model::{fit_standardized, TrainedModel};
use mtfl_core::synthetic::{generate_synthetic, SyntheticSpec};

fn orientation() -> impl Strategy<Value = Orientation> {
    prop_oneof![Just(Orientation::Normal), Just(Orientation::Inverted)]
}

/// A lattice and a hull-closed set grown from the initial set by random extra nodes.
fn lattice_and_hull() -> impl Strategy<Value = (Lattice, BTreeSet<TaskGroup>)> {
    (2usize..=6, orientation()).prop_flat_map(|(t, o)| {
        let full = (1u64 << t) - 1;
        prop::collection::vec(1..=full, 0..6).prop_map(move |masks| {
            let lat = Lattice::new(t, o).unwrap();
            let mut seed = lat.initial_active_set();
            seed.extend(masks.into_iter().map(|m| TaskGroup::from_mask(m).unwrap()));
            let hull = lat.hull(seed.iter());
            (lat, hull)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hulls_are_closed_and_sources_are_minimal((lat, active) in lattice_and_hull()) {
        prop_assert!(lat.is_hull(&active));
        for w in &active {
            for a in lat.ancestors(*w) {
                prop_assert!(active.contains(&a));
            }
        }
        let sources: BTreeSet<TaskGroup> = lat.sources_of_complement(&active).unwrap().into_iter().collect();
        let all = (1..=lat.universe().mask()).map(|m| TaskGroup::from_mask(m).unwrap());
        for v in all.filter(|v| !active.contains(v)) {
            let is_source = lat.parents(v).iter().all(|p| active.contains(p));
            prop_assert_eq!(is_source, sources.contains(&v), "node {}", v);
        }
        // adding a source keeps the set hull-closed
        for s in &sources {
            let mut grown = active.clone();
            grown.insert(*s);
            prop_assert!(lat.is_hull(&grown));
        }
    }

    #[test]
    fn split_is_a_stratified_partition(seed in 0u64..1000, fraction in 0.2f64..0.8) {
        let spec = SyntheticSpec { num_tasks: 3, groups: vec![3], dim: 3, k_shared: 2, m: 25, seed, ..Default::default() };
        let (data, _, _) = generate_synthetic(&spec).unwrap();
        let (a, b, _) = split(&data, fraction, seed).unwrap();
        for ((t, ta), tb) in data.tasks.iter().zip(&a.tasks).zip(&b.tasks) {
            prop_assert_eq!(ta.len() + tb.len(), t.len());
            prop_assert_eq!(ta.positives() + tb.positives(), t.positives());
            let want = (fraction * t.len() as f64).round() as usize;
            prop_assert_eq!(ta.len(), want);
            let share = |k: usize| k as f64 / t.positives().max(1) as f64;
            prop_assert!((share(ta.positives()) - fraction).abs() <= 1.0 / t.positives().max(1) as f64 + 1e-12);
        }
        prop_assert_eq!(split(&data, fraction, seed).unwrap(), split(&data, fraction, seed).unwrap());
    }

    #[test]
    fn standardize_inverts(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..20)) {
        let y = (0..rows.len()).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let data = DatasetBundle::new(3, vec![TaskData { name: "t".into(), x: rows.clone(), y }]).unwrap();
        let (z, tf) = standardize(&data);
        for (x, zx) in rows.iter().zip(&z.tasks[0].x) {
            prop_assert_eq!(&tf.apply(x), zx);
            for (a, b) in tf.invert(zx).iter().zip(x) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
    }
}

#[test]
fn dataset_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { num_tasks: 4, groups: vec![2, 2], dim: 5, k_shared: 2, m: 12, ..Default::default() };
    let (data, _, _) = generate_synthetic(&spec).unwrap();
    let path = dir.path().join("d.csv");
    write_dataset(&data, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), data);
}

#[test]
fn model_files_round_trip_and_reject_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { num_tasks: 3, groups: vec![2, 1], dim: 4, k_shared: 2, m: 15, ..Default::default() };
    let (data, test, _) = generate_synthetic(&spec).unwrap();
    let model = fit_standardized(&data, &per_feature_kernels(4), &Hyperparams::default()).unwrap();
    let path = dir.path().join("m.model");
    model.save(&path).unwrap();
    let back = TrainedModel::load(&path).unwrap();
    // wall-clock times are not persisted
    assert_eq!(back.to_text().unwrap(), model.to_text().unwrap());
    assert_eq!(back.support_vectors, model.support_vectors);
    for (t, task) in test.tasks.iter().enumerate() {
        for x in &task.x {
            assert_eq!(back.predict(t, x).unwrap().to_bits(), model.predict(t, x).unwrap().to_bits());
        }
    }
    let text = std::fs::read_to_string(&path).unwrap();
    let tampered = text.replacen("\"c\": 1.0", "\"c\": 2.0", 1);
    assert_ne!(tampered, text);
    assert!(TrainedModel::from_text(&tampered).is_err());
}

#[test]
fn linear_weights_reproduce_kernel_scores() {
    let spec = SyntheticSpec { num_tasks: 3, groups: vec![3], dim: 4, k_shared: 2, m: 15, ..Default::default() };
    let (data, test, _) = generate_synthetic(&spec).unwrap();
    let model = fit_standardized(&data, &per_feature_kernels(4), &Hyperparams::default()).unwrap();
    let lin = model.extract_linear_weights().unwrap();
    for (t, task) in test.tasks.iter().enumerate() {
        for x in &task.x {
            let (a, b) = (model.predict(t, x).unwrap(), lin.score(t, x));
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn fits_are_deterministic() {
    let spec = SyntheticSpec { num_tasks: 4, groups: vec![2, 2], dim: 4, k_shared: 2, m: 12, ..Default::default() };
    let (data, _, _) = generate_synthetic(&spec).unwrap();
    let hp = Hyperparams { c: 10.0, mu: 0.01, ..Default::default() };
    let a = fit_state(&data, &per_feature_kernels(4), &hp).unwrap();
    let b = fit_state(&data, &per_feature_kernels(4), &hp).unwrap();
    assert_eq!(a.log.len(), b.log.len());
    for (x, y) in a.log.iter().zip(&b.log) {
        assert_eq!((x.objective.to_bits(), &x.active), (y.objective.to_bits(), &y.active));
    }
}
