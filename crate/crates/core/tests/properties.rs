//! Property tests over the pipeline's invariants.

#[path = "support/oracle.rs"]
mod oracle;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use cropknn::experiments::{cross_validate, run_experiment, ExperimentSpec, FoldAssignment};
use cropknn::synth::{season_dates, synth_bundle, synth_features, SynthParams};
use cropknn::{
    cloud_mask, cosine_distance, extract_field_series, field_median, percentile_mask, read_bundle,
    savgol_fill, write_bundle, BandId, CropClass, FeatureDataset, FeatureVector, FieldTable, Grid,
    KnnModel, PreprocessConfig, Scene,
};
use proptest::prelude::*;

fn scene_strategy() -> impl Strategy<Value = (Scene, f64)> {
    (1usize..6, 1usize..6).prop_flat_map(|(w, h)| {
        let n = w * h;
        (
            prop::collection::vec(prop_oneof![9 => 0f32..100.0, 1 => Just(f32::NAN)], n),
            prop::collection::vec(prop_oneof![9 => -1f32..1.0, 1 => Just(f32::NAN)], n),
            0.0..100.0f64,
        )
            .prop_map(move |(cld, b, t)| {
                let mut bands = BTreeMap::new();
                bands.insert(
                    BandId::new("B04").unwrap(),
                    Grid::from_vec(w, h, b).unwrap(),
                );
                let scene = Scene {
                    date: NaiveDate::from_ymd_opt(2019, 7, 1).unwrap(),
                    bands,
                    cloud_prob: Grid::from_vec(w, h, cld).unwrap(),
                };
                (scene, t)
            })
    })
}

fn one_field_scene(values: &[f32]) -> (Scene, FieldTable) {
    let n = values.len();
    let mut bands = BTreeMap::new();
    bands.insert(
        BandId::new("B04").unwrap(),
        Grid::from_vec(n, 1, values.to_vec()).unwrap(),
    );
    let scene = Scene {
        date: NaiveDate::from_ymd_opt(2019, 7, 1).unwrap(),
        bands,
        cloud_prob: Grid::filled(n, 1, 0.0),
    };
    let fields = FieldTable {
        field_mask: Grid::filled(n, 1, 1),
        labels: BTreeMap::from([(1, CropClass::Maize)]),
    };
    (scene, fields)
}

fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, d)
}

fn refs_strategy(max_n: usize, d: usize) -> impl Strategy<Value = Vec<(i32, u8, Vec<f64>)>> {
    prop::collection::vec((0u8..4, vec_strategy(d)), 1..=max_n).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (c, x))| (i as i32 * 3 + 1, c, x))
            .collect()
    })
}

fn features(refs: &[(i32, u8, Vec<f64>)]) -> Vec<FeatureVector> {
    refs.iter()
        .map(|(id, c, v)| FeatureVector {
            field_id: *id,
            values: v.clone(),
            label: CropClass::from_id(*c).unwrap(),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cloud_mask_is_idempotent((scene, t) in scene_strategy()) {
        let once = cloud_mask(&scene, t);
        prop_assert_eq!(cloud_mask(&once, t), once.clone());
        for (v, p) in once.bands.values().next().unwrap().as_slice().iter()
            .zip(scene.cloud_prob.as_slice())
        {
            if p.is_nan() || f64::from(*p) > t {
                prop_assert!(v.is_nan());
            }
        }
    }

    #[test]
    fn median_ignores_pixel_order(
        values in prop::collection::vec(prop_oneof![4 => -1f32..1.0, 1 => Just(f32::NAN)], 1..30),
        seed in any::<u64>(),
    ) {
        let (scene, fields) = one_field_scene(&values);
        let band = BandId::new("B04").unwrap();
        let base = field_median(&scene, &fields, 1, &band, 1).unwrap();
        let mut shuffled = values.clone();
        let mut rng = cropknn::rng::SplitMix64::new(seed);
        rng.shuffle(&mut shuffled);
        let (s2, f2) = one_field_scene(&shuffled);
        prop_assert_eq!(field_median(&s2, &f2, 1, &band, 1).unwrap(), base);
        let valid: Vec<f64> = values.iter().filter(|v| !v.is_nan()).map(|v| f64::from(*v)).collect();
        prop_assert_eq!(base, oracle::median(&valid));
    }

    #[test]
    fn median_is_monotone(
        pairs in prop::collection::vec((-1f32..1.0, 0f32..0.5), 1..30),
    ) {
        let lo: Vec<f32> = pairs.iter().map(|p| p.0).collect();
        let hi: Vec<f32> = pairs.iter().map(|p| p.0 + p.1).collect();
        let band = BandId::new("B04").unwrap();
        let (s1, f1) = one_field_scene(&lo);
        let (s2, f2) = one_field_scene(&hi);
        let a = field_median(&s1, &f1, 1, &band, 1).unwrap().unwrap();
        let b = field_median(&s2, &f2, 1, &band, 1).unwrap().unwrap();
        prop_assert!(b >= a);
    }

    #[test]
    fn percentile_mask_only_removes(
        s in prop::collection::vec(prop::option::weighted(0.8, -1.0f64..1.0), 0..25),
        lo in 0.0f64..50.0,
        hi in 50.0f64..=100.0,
    ) {
        prop_assume!(s.iter().any(Option::is_some));
        let out = percentile_mask(&s, lo, hi).unwrap();
        prop_assert_eq!(out.len(), s.len());
        for (o, v) in out.iter().zip(&s) {
            prop_assert!(o.is_none() || o == v);
        }
        prop_assert_eq!(percentile_mask(&s, 0.0, 100.0).unwrap(), s);
    }

    #[test]
    fn savgol_output_is_complete_and_finite(
        s in prop::collection::vec(prop::option::weighted(0.6, -1.0f64..1.0), 1..25),
        (window, order) in prop_oneof![Just((5usize, 2usize)), Just((3, 1)), Just((7, 3)), Just((9, 2))],
    ) {
        prop_assume!(s.iter().flatten().count() >= window);
        let out = savgol_fill(&s, window, order).unwrap();
        prop_assert_eq!(out.len(), s.len());
        prop_assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn savgol_reproduces_low_degree_polynomials(
        coef in prop::collection::vec(-1.0f64..1.0, 3),
        n in 9usize..20,
        (window, order) in prop_oneof![Just((5usize, 2usize)), Just((7, 2)), Just((9, 3)), Just((7, 4))],
    ) {
        // Exact whenever the truncated edge window still supports the degree.
        let degree = (window / 2).min(order).min(2);
        let s: Vec<Option<f64>> = (0..n)
            .map(|i| {
                let x = i as f64 / 4.0;
                Some((0..=degree).map(|p| coef[p] * x.powi(p as i32)).sum())
            })
            .collect();
        let out = savgol_fill(&s, window, order).unwrap();
        for (o, v) in out.iter().zip(&s) {
            prop_assert!((o - v.unwrap()).abs() < 1e-9, "{} vs {:?}", o, v);
        }
    }

    #[test]
    fn cosine_distance_metric_properties(a in vec_strategy(13), b in vec_strategy(13), j in -8i32..8) {
        let dab = cosine_distance(&a, &b).unwrap();
        prop_assert_eq!(dab, cosine_distance(&b, &a).unwrap());
        prop_assert!((0.0..=2.0).contains(&dab));
        prop_assert_eq!(cosine_distance(&a, &a).unwrap(), 0.0);
        let scaled: Vec<f64> = a.iter().map(|x| x * 2f64.powi(j)).collect();
        prop_assert_eq!(cosine_distance(&scaled, &b).unwrap(), dab);
    }

    #[test]
    fn prediction_invariant_to_scaling_and_reference_order(
        refs in refs_strategy(60, 6),
        q in vec_strategy(6),
        j in -6i32..6,
        seed in any::<u64>(),
        k in 1usize..10,
    ) {
        let k = k.min(refs.len());
        let base = KnnModel::from_vectors(&features(&refs), k).unwrap().predict(&q).unwrap();
        let scaled: Vec<f64> = q.iter().map(|x| x * 2f64.powi(j)).collect();
        let mut permuted = features(&refs);
        cropknn::rng::SplitMix64::new(seed).shuffle(&mut permuted);
        let other = KnnModel::from_vectors(&permuted, k).unwrap().predict(&scaled).unwrap();
        prop_assert_eq!(other, base);
    }

    #[test]
    fn degenerate_k_uses_every_reference(refs in refs_strategy(30, 4), q in vec_strategy(4)) {
        let k = refs.len();
        let got = KnnModel::from_vectors(&features(&refs), k).unwrap().predict(&q).unwrap();
        prop_assert_eq!(got.neighbor_ids.len(), k);
        let mut counts: BTreeMap<CropClass, usize> = BTreeMap::new();
        for r in &refs {
            *counts.entry(CropClass::from_id(r.1).unwrap()).or_default() += 1;
        }
        prop_assert_eq!(got.votes, counts);
        prop_assert!(KnnModel::from_vectors(&features(&refs), k + 1).is_err());
    }

    #[test]
    fn confusion_total_matches_dataset(refs in refs_strategy(80, 5), folds in 2usize..6) {
        prop_assume!(refs.len() >= folds * 2);
        let ds = FeatureDataset::new(features(&refs), season_dates(5)).unwrap();
        let fold_of: BTreeMap<i32, usize> =
            refs.iter().enumerate().map(|(i, r)| (r.0, i % folds)).collect();
        let fa = FoldAssignment { folds, fold_of };
        let cv = cross_validate(&ds, &fa, 1).unwrap();
        prop_assert_eq!(cv.confusion.total(), refs.len() as u64);
        prop_assert_eq!(cv.predictions.len(), refs.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn matches_brute_force_up_to_500_references(
        refs in refs_strategy(500, 13),
        queries in prop::collection::vec(vec_strategy(13), 1..20),
        k in (0usize..10).prop_map(|i| 2 * i + 1),
    ) {
        let k = k.min(refs.len());
        let model = KnnModel::from_vectors(&features(&refs), k).unwrap();
        let brute = oracle::BruteKnn { refs: &refs };
        for q in &queries {
            let got = model.predict(q).unwrap();
            let want = brute.predict(q, k);
            prop_assert_eq!(&got.neighbor_ids, &want.neighbor_ids);
            prop_assert_eq!(&got.distances, &want.distances);
            prop_assert_eq!(got.predicted.id(), want.predicted);
        }
    }

    #[test]
    fn balanced_overall_accuracy_is_macro_average(seed in any::<u64>(), noise in 0.02f64..0.2) {
        let params = SynthParams {
            class_counts: vec![
                (CropClass::Maize, 30),
                (CropClass::Cassava, 24),
                (CropClass::CommonBean, 40),
            ],
            noise,
            seed,
            ..Default::default()
        };
        let ds = synth_features(&params).unwrap();
        let spec = ExperimentSpec {
            k_candidates: vec![1, 3, 5],
            ..ExperimentSpec::new(vec![CropClass::Maize, CropClass::Cassava, CropClass::CommonBean], seed)
        };
        let r = run_experiment(&ds, &spec).unwrap();
        let macro_avg = r.per_class_accuracy.values().sum::<f64>() / 3.0;
        prop_assert!((r.overall_accuracy - macro_avg).abs() <= 1e-12);
        prop_assert_eq!(r.confusion.total(), 3 * r.m as u64);
    }

    #[test]
    fn report_ignores_record_order(seed in any::<u64>(), perm in any::<u64>()) {
        let params = SynthParams {
            class_counts: vec![(CropClass::Maize, 20), (CropClass::Cassava, 15)],
            noise: 0.1,
            seed,
            ..Default::default()
        };
        let ds = synth_features(&params).unwrap();
        let mut shuffled = ds.features().to_vec();
        cropknn::rng::SplitMix64::new(perm).shuffle(&mut shuffled);
        let ds2 = FeatureDataset::new(shuffled, ds.dates().to_vec()).unwrap();
        let spec = ExperimentSpec::new(vec![CropClass::Maize, CropClass::Cassava], seed);
        let a = run_experiment(&ds, &spec).unwrap();
        let b = run_experiment(&ds2, &spec).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn bundle_round_trips(
        seed in any::<u64>(),
        counts in prop::collection::vec(1usize..4, 1..3),
        size in 1usize..3,
        dates in 2usize..4,
        holes in prop::collection::vec(any::<prop::sample::Index>(), 0..5),
    ) {
        let params = SynthParams {
            class_counts: counts.iter().enumerate()
                .map(|(i, n)| (CropClass::ALL[i], *n)).collect(),
            field_size: size,
            dates,
            seed,
            ..Default::default()
        };
        let (mut stack, fields) = synth_bundle(&params).unwrap();
        for h in &holes {
            let grid = stack.scenes[0].bands.values_mut().next().unwrap();
            let i = h.index(grid.len());
            grid.as_mut_slice()[i] = f32::NAN;
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b");
        write_bundle(&stack, &fields, &path).unwrap();
        let (s2, f2) = read_bundle(&path).unwrap();
        prop_assert_eq!(s2, stack);
        prop_assert_eq!(f2, fields);
    }
}

#[test]
fn extraction_is_identical_across_thread_counts() {
    let params = SynthParams {
        class_counts: vec![(CropClass::Maize, 40), (CropClass::Cassava, 40)],
        cloud_fraction: 0.3,
        seed: 99,
        ..Default::default()
    };
    let (stack, fields) = synth_bundle(&params).unwrap();
    let cfg = PreprocessConfig::default();
    let run = |n: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(|| extract_field_series(&stack, &fields, &cfg).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one, four);
    let ids: Vec<i32> = one.series.iter().map(|s| s.field_id).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}
