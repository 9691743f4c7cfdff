mod common;

use common::*;
use proptest::prelude::*;
use puir::metrics::*;
use puir::{Mask, Volume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn image_metrics_match_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = SsimConfig::default();
    for _ in 0..50 {
        let (p, g) = (random_volume(&mut rng), random_volume(&mut rng));
        let (pf, gf) = (f(&p), f(&g));
        assert!((psnr(&p, &g).unwrap() - naive_psnr(&pf, &gf)).abs() <= 1e-9);
        assert!((nmse(&p, &g).unwrap() - naive_nmse(&pf, &gf)).abs() <= 1e-9);
        assert!((ssim3d(&p, &g, &cfg).unwrap() - naive_ssim(&pf, &gf, 7)).abs() <= 1e-9);
        let small = SsimConfig { window: 3, ..cfg };
        assert!((ssim3d(&p, &g, &small).unwrap() - naive_ssim(&pf, &gf, 3)).abs() <= 1e-9);
    }
}

#[test]
fn ssim_offset_and_negation_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = random_volume(&mut rng);
    let mean = g.data().iter().map(|&x| f64::from(x)).sum::<f64>() / g.len() as f64;
    let g = g.map(|x| x - mean as f32);
    let cfg = SsimConfig::default();
    let shifted = g.map(|x| x + 0.5);
    let s = ssim3d(&shifted, &g, &cfg).unwrap();
    assert!(s < 1.0);
    assert!((s - naive_ssim(&f(&shifted), &f(&g), 7)).abs() <= 1e-9);
    let neg = g.map(|x| -x);
    let s = ssim3d(&neg, &g, &cfg).unwrap();
    assert!(s < 0.0);
    assert!((s - naive_ssim(&f(&neg), &f(&g), 7)).abs() <= 1e-9);
}

#[test]
fn mask_metrics_match_naive_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..50 {
        let density = [0.0, 0.01, 0.2, 0.5][i % 4];
        let (p, g) = (random_mask(&mut rng, density), random_mask(&mut rng, 0.3));
        assert!((dice(&p, &g).unwrap() - naive_dice(&p, &g)).abs() <= 1e-12);
        let (cd, class) = challenge_dice(&p, &g).unwrap();
        let expected = if p.count() > 0 && g.count() > 0 { naive_dice(&p, &g) } else { 0.0 };
        assert!((cd - expected).abs() <= 1e-12);
        assert_eq!(class == CaseClass::TruePositive, p.count() > 0 && g.count() > 0);
    }
}

#[test]
fn confusion_rates_match_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let masks: Vec<(Mask, Mask)> = (0..50)
        .map(|_| {
            let dp = if rng.random_bool(0.5) { 0.0 } else { 0.05 };
            let p = random_mask(&mut rng, dp);
            let dg = if rng.random_bool(0.5) { 0.0 } else { 0.05 };
            let g = random_mask(&mut rng, dg);
            (p, g)
        })
        .collect();
    let cases: Vec<(&Mask, &Mask)> = masks.iter().map(|(p, g)| (p, g)).collect();
    let r = confusion_rates(&cases).unwrap();
    let pos: Vec<_> = masks.iter().filter(|(_, g)| g.count() > 0).collect();
    let neg: Vec<_> = masks.iter().filter(|(_, g)| g.count() == 0).collect();
    let tp = pos.iter().filter(|(p, _)| p.count() > 0).count() as f64;
    let tn = neg.iter().filter(|(p, _)| p.count() == 0).count() as f64;
    assert!((r.tpr.unwrap() - tp / pos.len() as f64).abs() <= 1e-12);
    assert!((r.tnr.unwrap() - tn / neg.len() as f64).abs() <= 1e-12);
    assert!((r.tpr.unwrap() + r.fnr.unwrap() - 1.0).abs() <= 1e-12);
    assert!((r.tnr.unwrap() + r.fpr.unwrap() - 1.0).abs() <= 1e-12);
}

#[test]
fn four_modalities_give_fifteen_grouped_settings() {
    let s = enumerate_missingness(4).unwrap();
    assert_eq!(s.len(), 15);
    let count = |mn: usize| s.iter().filter(|x| x.mn() == mn).count();
    assert_eq!([count(0), count(1), count(2), count(3)], [1, 4, 6, 4]);
    assert_eq!(s[0].group(), "FM");
}

#[test]
fn psnr_decreases_with_noise_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let g = random_volume(&mut rng);
    let mean_psnr = |sigma: f32, rng: &mut ChaCha8Rng| {
        (0..20)
            .map(|_| {
                let noise: Vec<f32> = (0..g.len()).map(|_| sigma * rng.random_range(-1.0f32..1.0)).collect();
                let noisy = Volume::new([N; 3], g.data().iter().zip(&noise).map(|(x, e)| x + e).collect()).unwrap();
                psnr(&noisy, &g).unwrap()
            })
            .sum::<f64>()
            / 20.0
    };
    let low = mean_psnr(0.05, &mut rng);
    let high = mean_psnr(0.2, &mut rng);
    assert!(high < low);
}

#[test]
fn report_csv_columns_and_json_round_trip() {
    let report = MetricsReport {
        transfer: vec![TransferPair {
            source: "t1".into(),
            target: "t2".into(),
            mn: 2,
            psnr: 20.0,
            nmse: 0.1,
            ssim: 0.8,
        }],
        segmentation: vec![SegSetting {
            setting_id: "MN1:t1+t2".into(),
            present: vec!["t1".into(), "t2".into()],
            mn: 1,
            dice: 0.5,
            both_empty: 0,
            challenge_dice: Some(0.6),
            dice_minus: 0.4,
            rates: ConfusionRates { tpr: Some(1.0), tnr: None, fnr: Some(0.0), fpr: None },
        }],
    };
    let csv = report.to_csv().unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_COLUMNS.join(","));
    assert_eq!(csv.lines().count(), 1 + 3 + 7);
    assert_eq!(csv, report.to_csv().unwrap());
    let back = MetricsReport::from_json(&report.to_json().unwrap()).unwrap();
    assert_eq!(back.transfer, report.transfer);
    assert_eq!(back.segmentation[0].rates, report.segmentation[0].rates);
    let agg = report.aggregates();
    assert!(agg.iter().any(|a| a.mn == 2 && a.metric == "ssim" && a.mean == 0.8));
}

proptest! {
    #[test]
    fn dice_is_symmetric(bits in proptest::collection::vec(0u8..2, 2 * N * N * N)) {
        let p = Mask::new([N; 3], bits[..N * N * N].to_vec()).unwrap();
        let g = Mask::new([N; 3], bits[N * N * N..].to_vec()).unwrap();
        prop_assert_eq!(dice(&p, &g).unwrap(), dice(&g, &p).unwrap());
    }

    #[test]
    fn enumeration_sizes_are_binomial(m in 1usize..8) {
        let s = enumerate_missingness(m).unwrap();
        prop_assert_eq!(s.len(), (1usize << m) - 1);
        for k in 0..m {
            let binom = (0..k).fold(1usize, |acc, i| acc * (m - i) / (i + 1));
            prop_assert_eq!(s.iter().filter(|x| x.mn() == k).count(), binom);
        }
        prop_assert!(s.windows(2).all(|w| w[0].mn() <= w[1].mn()));
    }

    #[test]
    fn kl_invariant_under_shared_diagonal_affine(
        a in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 2), 4..10),
        b in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 2), 4..10),
        s0 in 0.2f64..5.0, s1 in 0.2f64..5.0, t0 in -2.0f64..2.0, t1 in -2.0f64..2.0,
    ) {
        let base = gaussian_kl_divergence(&a, &b).unwrap();
        prop_assume!(base.degenerate_dims.is_empty());
        let map = |v: &Vec<Vec<f64>>| v.iter().map(|x| vec![s0 * x[0] + t0, s1 * x[1] + t1]).collect::<Vec<_>>();
        let moved = gaussian_kl_divergence(&map(&a), &map(&b)).unwrap();
        prop_assert!((base.value - moved.value).abs() <= 1e-8 * (1.0 + base.value));
        prop_assert!(base.value >= 0.0);
    }

    #[test]
    fn ssim_never_exceeds_one(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, g) = (random_volume(&mut rng), random_volume(&mut rng));
        prop_assert!(ssim3d(&p, &g, &SsimConfig::default()).unwrap() <= 1.0 + 1e-12);
    }
}
