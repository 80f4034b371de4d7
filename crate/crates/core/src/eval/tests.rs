use chrono::NaiveDate;
use proptest::prelude::*;

use super::*;
use crate::dataset::{SplitTag, TileShape};
use crate::domain::LandCoverClass;
use crate::ingest::Modality;
use crate::model::TrainingConfig;
use crate::synthetic::{scene_dataset, SceneConfig};

fn dense_moran(values: &[f64], w: &SpatialWeights) -> f64 {
    let n = values.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for (&j, &wij) in w.neighbors[i].iter().zip(&w.weights[i]) {
            m[i][j] += wij;
        }
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let (mut num, mut den, mut s0) = (0.0, 0.0, 0.0);
    for i in 0..n {
        den += (values[i] - mean).powi(2);
        for j in 0..n {
            num += m[i][j] * (values[i] - mean) * (values[j] - mean);
            s0 += m[i][j];
        }
    }
    n as f64 / s0 * num / den
}

fn grid_points(side: usize) -> Vec<(f64, f64)> {
    (0..side * side)
        .map(|p| (0.001 * (p / side) as f64, 0.001 * (p % side) as f64))
        .collect()
}

fn meta(month: u32, land_cover: Option<LandCoverClass>, elevation: Option<f64>) -> InstanceMeta {
    InstanceMeta {
        site_id: "s".into(),
        date: NaiveDate::from_ymd_opt(2021, month, 1).unwrap(),
        latitude: 34.0,
        longitude: -118.0,
        lfmc_percent: None,
        n_merged: 1,
        land_cover,
        elevation_m: elevation,
        cube_id: "c".into(),
        row: 0,
        col: 0,
    }
}

#[test]
fn metric_examples() {
    let t = [80.0, 95.0, 120.0, 140.0];
    assert_eq!(
        (
            rmse(&t, &t).unwrap(),
            mae(&t, &t).unwrap(),
            r2(&t, &t).unwrap()
        ),
        (0.0, 0.0, 1.0)
    );
    assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
    assert_eq!(mae(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 3.5);
    let mean = t.iter().sum::<f64>() / 4.0;
    assert_eq!(r2(&[mean; 4], &t).unwrap(), 0.0);
    assert!(matches!(r2(&[1.0, 2.0], &[5.0, 5.0]), Err(Error::Data(_))));
    assert!(matches!(
        rmse(&[1.0], &[1.0, 2.0]),
        Err(Error::ShapeMismatch { .. })
    ));
    assert!(rmse(&[], &[]).is_err());
    let pe = percent_error(&[110.0, 7.0, 51.0, 3.0], &[100.0, 7.0, 102.0, 0.0]).unwrap();
    assert_eq!(pe, vec![Some(10.0), Some(0.0), Some(-50.0), None]);
}

proptest! {
    #[test]
    fn metrics_match_direct_formulas(pairs in prop::collection::vec((0.0f64..302.0, 0.0f64..302.0), 2..100)) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let n = p.len() as f64;
        let sse: f64 = p.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum();
        let e_rmse = (sse / n).sqrt();
        let e_mae = p.iter().zip(&t).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
        prop_assert!((rmse(&p, &t).unwrap() - e_rmse).abs() <= 1e-9 * e_rmse.max(1e-300));
        prop_assert!((mae(&p, &t).unwrap() - e_mae).abs() <= 1e-9 * e_mae.max(1e-300));
        prop_assert!(rmse(&p, &t).unwrap() >= mae(&p, &t).unwrap() - 1e-12);
        if let Ok(v) = r2(&p, &t) {
            prop_assert!(v <= 1.0);
        }
    }

    #[test]
    fn stratified_mae_recombines(
        rows in prop::collection::vec((1u32..=12, 0usize..3, 0.0f64..302.0, 0.0f64..302.0), 1..80)
    ) {
        let classes = [Some(LandCoverClass::Shrub), Some(LandCoverClass::Grass), None];
        let metas: Vec<InstanceMeta> = rows.iter().map(|r| meta(r.0, classes[r.1], Some(r.2 * 10.0))).collect();
        let p: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let t: Vec<f64> = rows.iter().map(|r| r.3).collect();
        for s in Stratifier::ALL {
            let report = stratified_report(&p, &t, &metas, s).unwrap();
            prop_assert_eq!(report[0].n, p.len());
            let known: Vec<usize> = (0..p.len())
                .filter(|&i| s != Stratifier::LandCover || metas[i].land_cover.is_some())
                .collect();
            let n: usize = report[1..].iter().map(|r| r.n).sum();
            prop_assert_eq!(n, known.len());
            if n > 0 {
                let kp: Vec<f64> = known.iter().map(|&i| p[i]).collect();
                let kt: Vec<f64> = known.iter().map(|&i| t[i]).collect();
                let recombined: f64 = report[1..].iter().map(|r| r.mae * r.n as f64).sum::<f64>() / n as f64;
                let direct = mae(&kp, &kt).unwrap();
                prop_assert!((recombined - direct).abs() <= 1e-9 * direct.max(1.0));
            }
            prop_assert!(report.iter().all(|r| r.n >= 1 && r.rmse >= r.mae - 1e-12));
        }
    }

    #[test]
    fn moran_matches_oracle_and_is_affine_invariant(
        n in 10usize..80,
        k in prop::sample::select(vec![1usize, 4, 8]),
        seed in 0u64..1000,
        a in prop::sample::select(vec![-3.0f64, 0.5, 7.0]),
        b in -50.0f64..50.0,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen_range(30.0..45.0), rng.gen_range(-120.0..-80.0))).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let w = knn_weights(&pts, k).unwrap();
        for (nb, ws) in w.neighbors.iter().zip(&w.weights) {
            prop_assert_eq!(nb.len(), k);
            prop_assert!((ws.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        prop_assert!(w.neighbors.iter().enumerate().all(|(i, nb)| !nb.contains(&i)));
        let i = morans_i(&v, &w).unwrap();
        prop_assert!((i - dense_moran(&v, &w)).abs() < 1e-9);
        let scaled: Vec<f64> = v.iter().map(|x| a * x + b).collect();
        prop_assert!((morans_i(&scaled, &w).unwrap() - i).abs() < 1e-9);
    }
}

#[test]
fn stratified_examples() {
    let metas = vec![
        meta(1, None, None),
        meta(2, None, None),
        meta(7, None, None),
        meta(8, None, None),
    ];
    let p = [100.0, 110.0, 80.0, 60.0];
    let t = [90.0, 130.0, 80.0, 70.0];
    let rows = stratified_report(&p, &t, &metas, Stratifier::Season).unwrap();
    let labels: Vec<&str> = rows.iter().map(|r| r.stratum.as_str()).collect();
    assert_eq!(labels, ["Overall", "Winter", "Summer"]);
    assert_eq!(rows[1].n, 2);
    assert!((rows[1].rmse - 250.0f64.sqrt()).abs() < 1e-12);
    assert_eq!(rows[1].mae, 15.0);
    assert_eq!(rows[2].mae, 5.0);
    let one = stratified_report(&p[..1], &t[..1], &metas[..1], Stratifier::Season).unwrap();
    assert_eq!(one.len(), 2);
    assert_eq!(
        (one[0].rmse, one[0].mae, one[0].r2),
        (one[1].rmse, one[1].mae, None)
    );
    let unknown = stratified_report(&p, &t, &metas, Stratifier::LandCover).unwrap();
    assert_eq!(unknown.len(), 1);
    assert_eq!(
        "land_cover".parse::<Stratifier>().unwrap(),
        Stratifier::LandCover
    );
}

#[test]
fn knn_examples() {
    let w = knn_weights(&[(0.0, 0.0), (0.0, 1.0)], 1).unwrap();
    assert_eq!(w.neighbors, vec![vec![1], vec![0]]);
    assert_eq!(w.weights, vec![vec![1.0], vec![1.0]]);
    let w = knn_weights(&[(0.0, 0.0), (0.0, 1.0), (0.0, 2.0)], 1).unwrap();
    assert_eq!(w.neighbors[1], vec![0]);
    let dup = knn_weights(&[(1.0, 1.0), (1.0, 1.0), (1.0, 1.0), (2.0, 2.0)], 2).unwrap();
    assert_eq!(dup.neighbors[0], vec![1, 2]);
    assert!(matches!(
        knn_weights(&[(0.0, 0.0), (1.0, 1.0)], 2),
        Err(Error::Data(_))
    ));
}

#[test]
fn moran_examples() {
    let w = knn_weights(&[(0.0, 0.0), (0.0, 1.0)], 1).unwrap();
    assert_eq!(morans_i(&[1.0, -1.0], &w).unwrap(), -1.0);
    assert!(matches!(morans_i(&[3.0, 3.0], &w), Err(Error::Data(_))));
    let pts = grid_points(16);
    let w = knn_weights(&pts, 4).unwrap();
    let checker: Vec<f64> = (0..256).map(|p| ((p / 16 + p % 16) % 2) as f64).collect();
    assert!(morans_i(&checker, &w).unwrap() < -0.5);
    let gradient: Vec<f64> = (0..256).map(|p| (p / 16 + p % 16) as f64).collect();
    assert!(morans_i(&gradient, &w).unwrap() > 0.5);
}

#[test]
fn permutation_inference() {
    let pts = grid_points(12);
    let w = knn_weights(&pts, 4).unwrap();
    let gradient: Vec<f64> = (0..144).map(|p| (p / 12 + p % 12) as f64).collect();
    let r = morans_i_pvalue(&gradient, &w, 999, 42, Alternative::Greater).unwrap();
    assert_eq!(r.p_value, 0.001);
    assert_eq!((r.k, r.n_permutations, r.seed), (4, 999, 42));
    let again = crate::mapper::with_threads(Some(3), || {
        morans_i_pvalue(&gradient, &w, 999, 42, Alternative::Greater)
    })
    .unwrap()
    .unwrap();
    assert_eq!(again, r);
    let two = morans_i_pvalue(&gradient, &w, 999, 42, Alternative::TwoSided).unwrap();
    assert_eq!(two.p_value, 0.001);
    assert!(matches!(
        morans_i_pvalue(&gradient, &w, 98, 0, Alternative::Greater),
        Err(Error::Config(_))
    ));
    use rand::{seq::SliceRandom, SeedableRng};
    let mut null = gradient.clone();
    null.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
    let a = morans_i_pvalue(&null, &w, 999, 1, Alternative::Greater).unwrap();
    let b = morans_i_pvalue(&null, &w, 1998, 1, Alternative::Greater).unwrap();
    assert!(a.p_value >= 0.001);
    assert!((a.p_value - b.p_value).abs() < 2.0 / 999f64.sqrt());
}

fn small_config() -> TrainingConfig {
    TrainingConfig {
        max_epochs: 4,
        batch_size: 16,
        hidden: vec![8],
        learning_rate: 0.01,
        ..Default::default()
    }
}

fn small_dataset() -> crate::dataset::DatasetContainer {
    scene_dataset(
        SceneConfig {
            size: 24,
            months: 8,
            ..Default::default()
        },
        30,
        3,
        TileShape::new(4, 4, 3).unwrap(),
        1,
    )
    .unwrap()
}

#[test]
fn ablation_harnesses() {
    let ds = small_dataset();
    let cfg = small_config();
    let shapes = [
        TileShape::new(4, 4, 3).unwrap(),
        TileShape::new(2, 2, 3).unwrap(),
        TileShape::new(1, 1, 1).unwrap(),
    ];
    let rows = run_shape_ablation(&ds, &shapes, &cfg).unwrap();
    assert_eq!(
        rows.iter().map(|r| r.label.as_str()).collect::<Vec<_>>(),
        ["4x4x3", "2x2x3", "1x1x1"]
    );
    let (_, _, plain) = fit_and_score(&ds, &cfg).unwrap();
    assert_eq!(
        (
            rows[0].metrics.rmse,
            rows[0].metrics.mae,
            rows[0].metrics.r2
        ),
        (plain.rmse, plain.mae, plain.r2)
    );
    assert!(matches!(
        run_shape_ablation(&ds, &[TileShape::new(8, 8, 3).unwrap()], &cfg),
        Err(Error::Config(_))
    ));

    let rows = run_modality_ablation(&ds, &DEFAULT_REMOVALS, &cfg).unwrap();
    let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["None", "S2", "S1", "ERA5", "TC", "SRTM", "loc."]);
    assert_eq!(rows[0].metrics.rmse, plain.rmse);
    let removed = ds.without_modality(Modality::Era5);
    let i = ds.layout.block_index(Modality::Era5).unwrap();
    for (a, b) in ds.instances.iter().zip(&removed.instances) {
        for (j, (x, y)) in a.blocks.iter().zip(&b.blocks).enumerate() {
            if j == i {
                assert!(y.iter().all(|&v| v == 0.0));
                assert_eq!(x.len(), y.len());
            } else {
                assert_eq!(x, y);
            }
        }
    }
}

#[test]
fn evaluation_report() {
    let ds = small_dataset();
    let (reg, _, plain) = fit_and_score(&ds, &small_config()).unwrap();
    let cfg = EvalConfig {
        k: 4,
        permutations: 99,
        ..Default::default()
    };
    let test = ds.subset(SplitTag::Test);
    let (report, preds) = evaluate(&reg, &test, &cfg).unwrap();
    assert_eq!(report.overall, plain);
    assert_eq!(report.strata.len(), 3);
    assert_eq!(report.n, test.len());
    assert!(report.moran.is_some());
    let dir = tempfile::tempdir().unwrap();
    write_predictions_csv(&dir.path().join("p.csv"), &preds).unwrap();
    let text = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert_eq!(text.lines().count(), test.len() + 1);
    let bad = EvalConfig {
        k: 40,
        ..Default::default()
    };
    assert!(matches!(evaluate(&reg, &test, &bad), Err(Error::Config(_))));
}
