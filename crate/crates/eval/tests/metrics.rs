use rand::Rng;
use sigseg_core::{Shape, Tensor};
use sigseg_eval::report::Metric;
use sigseg_eval::ssim::C1;
use sigseg_eval::{
    detect_keypoints, evaluate_model, extraction, hard_dice, keypoint_match_rate, ssim, MetricReport, Plane, Predictor,
};
use sigseg_synthdoc::dataset::pool_background;
use sigseg_synthdoc::seed::rng;
use sigseg_synthdoc::{build_dataset_with_threads, generate_sample, Corpus, GenConfig, Split};

fn mask(w: usize, h: usize, on: &[usize]) -> Tensor {
    let mut d = vec![0.0; w * h];
    for &i in on {
        d[i] = 1.0;
    }
    Tensor::from_vec(Shape::new(1, 1, h, w), d).unwrap()
}

#[test]
fn dice_identities() {
    let a = mask(4, 4, &[0, 1, 2, 3]);
    let b = mask(4, 4, &[8, 9, 10, 11]);
    let half = mask(4, 4, &[2, 3, 4, 5]);
    assert_eq!(hard_dice(&a, &a).unwrap(), 1.0);
    assert_eq!(hard_dice(&a, &b).unwrap(), 0.0);
    assert_eq!(hard_dice(&a, &half).unwrap(), 0.5);
    assert_eq!(hard_dice(&half, &a).unwrap(), 0.5);
    let empty = mask(4, 4, &[]);
    assert_eq!(hard_dice(&empty, &empty).unwrap(), 1.0);
    // Fixed |A| + |B| = 8: more overlap never lowers the score.
    let mut last = -1.0;
    for k in 0..=4 {
        let on: Vec<usize> = (4 - k..8 - k).collect();
        let d = hard_dice(&a, &mask(4, 4, &on)).unwrap();
        assert!(d >= last);
        last = d;
    }
}

fn noise(seed: u64, w: usize, h: usize) -> Plane {
    let mut r = rng(seed);
    Plane::new(w, h, (0..w * h).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap()
}

#[test]
fn ssim_of_a_raster_with_itself_is_one() {
    for seed in 0..20 {
        let x = noise(seed, 40, 33);
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
    }
    let c = Plane::filled(20, 20, 0.3);
    assert_eq!(ssim(&c, &c).unwrap(), 1.0);
}

#[test]
fn ssim_of_inverted_noise_is_low() {
    for seed in 0..10 {
        let x = noise(seed, 48, 48);
        let inv = x.map(|v| 1.0 - v);
        let s = ssim(&x, &inv).unwrap();
        assert!(s < 0.2, "seed {seed}: {s}");
    }
}

#[test]
fn ssim_of_constants_matches_closed_form() {
    for (m1, m2) in [(0.4, 0.5), (0.0, 0.1), (0.85, 0.95)] {
        let a = Plane::filled(32, 32, m1);
        let b = Plane::filled(32, 32, m2);
        let want = (2.0 * m1 * m2 + C1) / (m1 * m1 + m2 * m2 + C1);
        let got = ssim(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn ssim_is_symmetric() {
    for seed in 0..10 {
        let a = noise(seed, 36, 36);
        let b = noise(seed + 100, 36, 36).map(|v| 0.5 * v + 0.25);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-9);
    }
}

/// Grayscale extractions of generated samples, as the evaluator sees them.
fn extractions(n: usize) -> Vec<Plane> {
    let cfg = GenConfig {
        distort_probability: 0.0,
        background_pool: 4,
        ..GenConfig::new(31, n, 64)
    };
    let pool: Vec<_> = (0..4).map(|id| pool_background(31, id, 64)).collect();
    (0..n)
        .map(|i| {
            let rec = generate_sample(&cfg, i, &pool).unwrap();
            extraction(&rec.image.to_tensor(), &rec.mask.to_tensor()).unwrap()
        })
        .collect()
}

#[test]
fn keypoint_rate_of_an_image_with_itself_is_one() {
    for (i, x) in extractions(20).iter().enumerate() {
        assert!(!detect_keypoints(x).unwrap().is_empty(), "sample {i}");
        assert_eq!(keypoint_match_rate(x, x).unwrap(), 1.0, "sample {i}");
    }
}

#[test]
fn blank_prediction_scores_zero() {
    for x in extractions(5) {
        let blank = Plane::filled(64, 64, 1.0);
        assert_eq!(keypoint_match_rate(&blank, &x).unwrap(), 0.0);
    }
}

#[test]
fn keypoint_rate_tolerates_a_two_pixel_shift() {
    let rates: Vec<f64> = extractions(20)
        .iter()
        .map(|x| keypoint_match_rate(&x.shifted(2, 0, 1.0), x).unwrap())
        .collect();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let min = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    println!("shifted rate: mean {mean:.3}, min {min:.3}");
    assert!(mean >= 0.7, "{rates:?}");
}

#[test]
fn small_rasters_are_a_metric_error() {
    let p = Plane::filled(31, 64, 1.0);
    assert!(keypoint_match_rate(&p, &p).is_err());
}

fn corpus() -> (tempfile::TempDir, Corpus) {
    let dir = tempfile::tempdir().unwrap();
    build_dataset_with_threads(&GenConfig::new(8, 20, 64), dir.path(), 1).unwrap();
    let c = Corpus::open(dir.path()).unwrap();
    (dir, c)
}

#[test]
fn truth_oracle_scores_one_everywhere() {
    let (_dir, c) = corpus();
    let r = evaluate_model(&mut Predictor::Truth, &c, Split::Train).unwrap();
    assert_eq!(r.samples.len(), 16);
    for m in [Metric::Dsc, Metric::Ssim, Metric::SiftRate] {
        assert_eq!(r.aggregate(m).rate, 1.0, "{m:?}");
    }
}

#[test]
fn background_predictor_has_zero_dice() {
    let (_dir, c) = corpus();
    let r = evaluate_model(&mut Predictor::Background, &c, Split::Train).unwrap();
    assert_eq!(r.aggregate(Metric::Dsc).rate, 0.0);
    assert_eq!(r.aggregate(Metric::SiftRate).rate, 0.0);
    assert!(r.aggregate(Metric::Ssim).rate < 1.0);
}

/// Mean and sample std recomputed independently from the CSV text.
fn recompute(csv: &str, column: usize) -> (f64, f64) {
    let vals: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(column).unwrap().parse().unwrap()).collect();
    let n = vals.len() as f64;
    let mut mean = 0.0;
    for v in &vals {
        mean += v;
    }
    mean /= n;
    let mut ss = 0.0;
    for v in &vals {
        ss += (v - mean) * (v - mean);
    }
    (mean, (ss / (n - 1.0)).sqrt())
}

#[test]
fn report_aggregates_are_reproducible_from_csv() {
    let (_dir, c) = corpus();
    let r = evaluate_model(&mut Predictor::Background, &c, Split::Train).unwrap();
    let out = tempfile::tempdir().unwrap();
    r.write(out.path(), "background").unwrap();
    let csv = std::fs::read_to_string(out.path().join("background.csv")).unwrap();
    assert!(csv.starts_with("sample_id,dsc,ssim,sift_rate\n"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("background.json")).unwrap()).unwrap();
    for (col, key) in [(1, "dsc"), (2, "ssim"), (3, "sift_rate")] {
        let (mean, std) = recompute(&csv, col);
        assert!((summary[key]["rate"].as_f64().unwrap() - mean).abs() < 1e-9);
        assert!((summary[key]["std"].as_f64().unwrap() - std).abs() < 1e-9);
    }
    assert_eq!(summary["count"], 16);
    let back = MetricReport::read_csv(&out.path().join("background.csv")).unwrap();
    assert_eq!(back, r);
}
