use std::collections::HashSet;

use sigseg_synthdoc::dataset::{plan, pool_background, sample_seed};
use sigseg_synthdoc::signature::MAX_MASK_FRACTION;
use sigseg_synthdoc::{
    build_dataset_with_threads, compose, corpus_hash, distort, gen_background, gen_signature, generate_sample,
    Corpus, DistortParams, GenConfig, Gray, Rgb, Split, SplitCounts, Style,
};

#[test]
fn every_seed_below_1000_gives_a_nonempty_bounded_mask() {
    for seed in 0..1000 {
        let s = gen_signature(seed, 64, 64).unwrap();
        let set = s.mask.count_set();
        assert!(set >= 1, "seed {seed}");
        assert!(set as f64 <= MAX_MASK_FRACTION * 4096.0, "seed {seed}: {set}");
        for (m, c) in s.mask.data.iter().zip(&s.coverage.data) {
            assert_eq!(*m == 1.0, *c > 0.1);
        }
    }
}

#[test]
fn clean_backgrounds_vary_less_than_textured() {
    for seed in 0..100 {
        let clean = gen_background(seed, 64, 64, Style::Clean).image.variance();
        let textured = gen_background(seed, 64, 64, Style::Textured).image.variance();
        assert!(clean < textured, "seed {seed}: {clean} vs {textured}");
    }
}

/// Counts maximal horizontal runs of at least four dark pixels.
fn dark_runs(img: &Rgb) -> usize {
    let mut runs = 0;
    for y in 0..img.height {
        let mut len = 0;
        for x in 0..=img.width {
            let dark = x < img.width && img.get(x, y).iter().sum::<f32>() / 3.0 < 0.5;
            if dark {
                len += 1;
            } else {
                if len >= 4 {
                    runs += 1;
                }
                len = 0;
            }
        }
    }
    runs
}

#[test]
fn printed_text_has_three_dark_segments() {
    for seed in 0..50 {
        let bg = gen_background(seed, 64, 64, Style::PrintedText);
        assert!(dark_runs(&bg.image) >= 3, "seed {seed}");
        assert_eq!(dark_runs(&gen_background(seed, 64, 64, Style::Clean).image), 0);
    }
}

#[test]
fn compose_matches_per_pixel_blend() {
    let sig = gen_signature(3, 48, 48).unwrap();
    let bg = gen_background(4, 48, 48, Style::PhotoNoise).image;
    let pen = [0.1, 0.2, 0.65];
    let out = compose(&sig.coverage, &bg, pen).unwrap();
    for i in 0..48 * 48 {
        let a = sig.coverage.data[i];
        for c in 0..3 {
            let want = (1.0 - a) * bg.data[i][c] + a * pen[c];
            assert!((out.data[i][c] - want).abs() < 1e-7);
        }
    }
    assert!(compose(&sig.coverage, &Rgb::filled(40, 48, [1.0; 3]), pen).is_err());
}

#[test]
fn identity_distortion_leaves_sample_unchanged() {
    let sig = gen_signature(8, 64, 64).unwrap();
    let img = compose(&sig.coverage, &gen_background(1, 64, 64, Style::Textured).image, [0.0; 3]).unwrap();
    let (a, b) = distort(&img, &sig.mask, &DistortParams::identity()).unwrap();
    assert_eq!(a, img);
    assert_eq!(b, sig.mask);
}

#[test]
fn distorted_masks_stay_binary() {
    let sig = gen_signature(2, 64, 64).unwrap();
    let img = Rgb::filled(64, 64, [0.5; 3]);
    let mut rng = sigseg_synthdoc::seed::rng(12);
    for _ in 0..20 {
        let p = DistortParams::sample(&mut rng, &Default::default(), 64, 64);
        let (_, m) = distort(&img, &sig.mask, &p).unwrap();
        assert!(m.data.iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

#[test]
fn quarter_turn_preserves_square_area() {
    let mut mask = Gray::new(64, 64);
    for y in 22..42 {
        for x in 22..42 {
            mask.set(x, y, 1.0);
        }
    }
    let img = Rgb::filled(64, 64, [1.0; 3]);
    let p = DistortParams {
        rotation_deg: 90.0,
        ..DistortParams::identity()
    };
    let (_, out) = distort(&img, &mask, &p).unwrap();
    let (before, after) = (mask.count_set() as f64, out.count_set() as f64);
    assert!((after - before).abs() / before <= 0.02, "{before} -> {after}");
}

#[test]
fn undistorted_ink_differs_from_background() {
    let cfg = GenConfig {
        distort_probability: 0.0,
        background_pool: 8,
        ..GenConfig::new(5, 30, 64)
    };
    let pool: Vec<_> = (0..8).map(|id| pool_background(5, id, 64)).collect();
    for i in 0..30 {
        let rec = generate_sample(&cfg, i, &pool).unwrap();
        assert!(rec.meta.distortion.is_none());
        let bg = &pool[rec.meta.background_id].image;
        let sig = gen_signature(rec.meta.signature_seed, 64, 64).unwrap();
        assert_eq!(sig.mask, rec.mask);
        for (k, &m) in rec.mask.data.iter().enumerate() {
            if m == 1.0 {
                let a = rec.image.to_image().as_raw()[3 * k..3 * k + 3].to_vec();
                let b = bg.to_image().as_raw()[3 * k..3 * k + 3].to_vec();
                assert_ne!(a, b, "sample {i} pixel {k}");
            }
        }
    }
}

#[test]
fn split_ratios() {
    assert_eq!(
        SplitCounts::for_total(20_000),
        SplitCounts {
            train: 16_000,
            val: 3_000,
            test: 1_000
        }
    );
    assert_eq!(
        SplitCounts::for_total(20),
        SplitCounts {
            train: 16,
            val: 3,
            test: 1
        }
    );
    let p = plan(1, 20_000);
    for split in Split::ALL {
        let n = p.iter().filter(|(_, s, _)| *s == split).count();
        assert_eq!(n, SplitCounts::for_total(20_000).get(split));
    }
    let seeds: HashSet<u64> = p.iter().map(|(_, _, s)| *s).collect();
    assert_eq!(seeds.len(), 20_000);
    assert_eq!(sample_seed(1, 7), p[7].2);
}

#[test]
fn corpus_is_reproducible_and_split_disjoint() {
    let cfg = GenConfig::new(2024, 20, 64);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out_a = build_dataset_with_threads(&cfg, a.path(), 1).unwrap();
    let out_b = build_dataset_with_threads(&cfg, b.path(), 3).unwrap();
    assert_eq!(out_a.corpus_hash, out_b.corpus_hash);
    assert_eq!(out_a.corpus_hash, corpus_hash(a.path()).unwrap());
    assert_eq!(out_a.manifest.counts, SplitCounts::for_total(20));

    let other = tempfile::tempdir().unwrap();
    let out_c = build_dataset_with_threads(&GenConfig::new(2025, 20, 64), other.path(), 1).unwrap();
    assert_ne!(out_a.corpus_hash, out_c.corpus_hash);

    let m = &out_a.manifest;
    let by_split = |s: Split| -> HashSet<u64> { m.entries(s).map(|e| e.meta.signature_seed).collect() };
    let (tr, va, te) = (by_split(Split::Train), by_split(Split::Val), by_split(Split::Test));
    assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
    let seeds: HashSet<u64> = m.samples.iter().map(|e| e.meta.seed).collect();
    assert_eq!(seeds.len(), 20);

    let corpus = Corpus::open(a.path()).unwrap();
    assert_eq!(&corpus.manifest, m);
    let test = corpus.load_split(Split::Test).unwrap();
    assert_eq!(test.len(), 1);
    assert_eq!(test[0].image.shape().c(), 3);
    assert!(test[0].mask.data().iter().all(|&v| v == 0.0 || v == 1.0));

    let raw = image::open(a.path().join(&m.samples[0].mask)).unwrap().to_luma8();
    assert!(raw.as_raw().iter().all(|&v| v == 0 || v == 255));
    let frac = raw.as_raw().iter().filter(|&&v| v == 255).count() as f64 / (64.0 * 64.0);
    assert!(frac > 0.0 && frac <= MAX_MASK_FRACTION);
}

#[test]
fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(build_dataset_with_threads(&GenConfig::new(0, 0, 64), dir.path(), 1).is_err());
    assert!(build_dataset_with_threads(&GenConfig::new(0, 4, 16), dir.path(), 1).is_err());
    assert!(Corpus::open(dir.path()).is_err());
}
