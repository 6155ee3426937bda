mod common;

use std::collections::BTreeSet;

use common::{tiny_dataset, tiny_spec};
use halluc_core::data::{
    chw_to_hwc, hwc_to_chw, load_dataset, make_split, sample_episode, save_dataset, synth_dataset,
    Episode, ImageShape, SynthSpec,
};
use halluc_core::Error;
use proptest::prelude::*;

#[test]
fn synthetic_data_is_seeded_and_in_range() {
    let a = tiny_dataset(0.15, 3);
    assert_eq!(a, tiny_dataset(0.15, 3));
    assert_ne!(a, tiny_dataset(0.15, 4));
    assert_eq!(a.len(), 5 * 12);
    assert_eq!(a.classes, vec![0, 1, 2, 3, 4]);
    for c in &a.classes {
        assert_eq!(a.indices_of(*c).len(), 12);
    }
    a.validate().unwrap();
}

#[test]
fn noiseless_samples_of_a_class_coincide() {
    let ds = tiny_dataset(0.0, 2);
    for &c in &ds.classes {
        let ids = ds.indices_of(c);
        let first = &ds.samples[ids[0]];
        for &i in &ids[1..] {
            assert_eq!(ds.samples[i].image, first.image);
            assert_eq!(ds.samples[i].text_embedding, first.text_embedding);
        }
    }
    let (a, b) = (
        &ds.samples[ds.indices_of(0)[0]],
        &ds.samples[ds.indices_of(1)[0]],
    );
    assert_ne!(a.image, b.image);
    assert_ne!(a.text_embedding, b.text_embedding);
}

#[test]
fn invalid_synth_specs_are_rejected() {
    let bad = [
        SynthSpec {
            num_classes: 1,
            ..tiny_spec(0.1, 0)
        },
        SynthSpec {
            samples_per_class: 0,
            ..tiny_spec(0.1, 0)
        },
        SynthSpec {
            embed_dim: 0,
            ..tiny_spec(0.1, 0)
        },
        tiny_spec(-0.1, 0),
        tiny_spec(f64::NAN, 0),
    ];
    for spec in bad {
        assert!(
            matches!(synth_dataset(&spec), Err(Error::Config(_))),
            "{spec:?}"
        );
    }
}

#[test]
fn layout_conversions_invert_each_other() {
    let shape = ImageShape::new(3, 5, 2);
    let hwc: Vec<f32> = (0..shape.len()).map(|i| i as f32).collect();
    let mut chw = Vec::new();
    hwc_to_chw(&hwc, shape, &mut chw);
    // Channel 1 of pixel (y=2, x=4) sits at plane 1.
    assert_eq!(chw[15 + 2 * 5 + 4], hwc[(2 * 5 + 4) * 2 + 1]);
    assert_eq!(chw_to_hwc(&chw, shape), hwc);
}

#[test]
fn dataset_round_trips_through_disk() {
    let ds = tiny_dataset(0.2, 9);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), ds);
}

#[test]
fn corrupted_dataset_files_are_rejected() {
    let ds = tiny_dataset(0.2, 9);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let mut entries: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "f32"))
        .collect();
    entries.sort();
    let blob = &entries[0];
    let bytes = std::fs::read(blob).unwrap();
    std::fs::write(blob, &bytes[..bytes.len() - 1]).unwrap();
    assert!(load_dataset(dir.path()).is_err());
    assert!(load_dataset(&dir.path().join("missing")).is_err());
}

#[test]
fn episodes_are_seeded_and_resolve_from_their_index() {
    let ds = tiny_dataset(0.1, 1);
    let split = make_split(&ds, 0.6, 5).unwrap();
    let e = sample_episode(&ds, &split, 2, 3, 8).unwrap();
    assert_eq!(e, sample_episode(&ds, &split, 2, 3, 8).unwrap());
    assert_eq!(e.novel_classes(), split.novel_classes.as_slice());
    assert_eq!(e.support.len(), 2 * split.novel_classes.len());
    assert_eq!(e.query.len(), 3 * split.novel_classes.len());
    assert_eq!(Episode::resolve(&ds, e.index.clone()).unwrap(), e);

    let mut bogus = e.index.clone();
    bogus.support_ids[0] = ds.indices_of(split.base_classes[0])[0];
    assert!(matches!(
        Episode::resolve(&ds, bogus),
        Err(Error::ClassMismatch(_))
    ));
}

#[test]
fn episodes_need_enough_samples() {
    let ds = tiny_dataset(0.1, 1);
    let split = make_split(&ds, 0.6, 5).unwrap();
    assert!(matches!(
        sample_episode(&ds, &split, 10, 3, 0),
        Err(Error::InsufficientSamples {
            available: 12,
            required: 13,
            ..
        })
    ));
    assert!(matches!(
        sample_episode(&ds, &split, 0, 3, 0),
        Err(Error::Config(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_partition_the_classes(k in 2usize..30, frac in 0.01f64..0.99, seed in any::<u64>()) {
        let spec = SynthSpec { num_classes: k, samples_per_class: 1, image_shape: ImageShape::new(2, 2, 1), embed_dim: 2, noise_level: 0.1, seed: 0 };
        let ds = synth_dataset(&spec).unwrap();
        let s = make_split(&ds, frac, seed).unwrap();
        prop_assert!(!s.base_classes.is_empty() && !s.novel_classes.is_empty());
        let base: BTreeSet<u32> = s.base_classes.iter().copied().collect();
        let novel: BTreeSet<u32> = s.novel_classes.iter().copied().collect();
        prop_assert!(base.is_disjoint(&novel));
        let all: Vec<u32> = base.union(&novel).copied().collect();
        prop_assert_eq!(all, ds.classes.clone());
        prop_assert_eq!(s.clone(), make_split(&ds, frac, seed).unwrap());
    }

    #[test]
    fn support_and_query_are_disjoint(n_shot in 1usize..6, query in 1usize..6, seed in any::<u64>()) {
        let ds = tiny_dataset(0.1, 1);
        let split = make_split(&ds, 0.4, seed).unwrap();
        let e = sample_episode(&ds, &split, n_shot, query, seed).unwrap();
        let support: BTreeSet<usize> = e.index.support_ids.iter().copied().collect();
        let queries: BTreeSet<usize> = e.index.query_ids.iter().copied().collect();
        prop_assert_eq!(support.len(), e.index.support_ids.len());
        prop_assert_eq!(queries.len(), e.index.query_ids.len());
        prop_assert!(support.is_disjoint(&queries));
        for &c in e.novel_classes() {
            prop_assert_eq!(e.support.iter().filter(|s| s.label == c).count(), n_shot);
            prop_assert_eq!(e.query.iter().filter(|s| s.label == c).count(), query);
        }
    }
}
