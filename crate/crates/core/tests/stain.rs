mod common;

use common::{mixed, render};
use histograph::stain::{
    cosine, deconvolve, estimate_stain_matrix, od_transform, NmfConfig, OdImage, StainMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn nmf_recovers_known_stains() {
    let truths = [
        StainMatrix::new([0.55, 0.78, 0.30], [0.10, 0.95, 0.28]).unwrap(),
        StainMatrix::new([0.45, 0.80, 0.40], [0.20, 0.90, 0.20]).unwrap(),
        StainMatrix::reference(),
    ];
    for (i, truth) in truths.iter().enumerate() {
        let od = mixed(truth, 4000, 11 + i as u64);
        let est = estimate_stain_matrix(&od, &NmfConfig::default()).unwrap();
        assert!(cosine(&est.hematoxylin, &truth.hematoxylin) >= 0.99);
        assert!(cosine(&est.eosin, &truth.eosin) >= 0.99);
        assert!(est.hematoxylin.iter().chain(&est.eosin).all(|&v| v >= 0.0));
    }
}

#[test]
fn estimate_is_invariant_to_od_scaling() {
    let truth = StainMatrix::new([0.55, 0.78, 0.30], [0.10, 0.95, 0.28]).unwrap();
    let od = mixed(&truth, 3000, 5);
    let base = estimate_stain_matrix(&od, &NmfConfig::default()).unwrap();
    for factor in [0.5, 1.7, 3.0] {
        let scaled = OdImage {
            values: od.values.iter().map(|p| p.map(|c| c * factor)).collect(),
            ..od.clone()
        };
        // Keep the foreground set identical.
        let cfg = NmfConfig {
            od_cutoff: 0.0,
            ..Default::default()
        };
        let a = estimate_stain_matrix(&od, &cfg).unwrap();
        let b = estimate_stain_matrix(&scaled, &cfg).unwrap();
        for i in 0..3 {
            assert!((a.hematoxylin[i] - b.hematoxylin[i]).abs() < 1e-3);
            assert!((a.eosin[i] - b.eosin[i]).abs() < 1e-3);
        }
    }
    assert!(cosine(&base.hematoxylin, &truth.hematoxylin) > 0.99);
}

#[test]
fn rgb_pipeline_recovers_stains_and_hematoxylin_map() {
    let truth = StainMatrix::new([0.55, 0.78, 0.30], [0.10, 0.95, 0.28]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let conc: Vec<(f64, f64)> = (0..64 * 64)
        .map(|i| match i % 4 {
            0 => (rng.random_range(0.3..1.2), 0.0),
            1 => (0.0, rng.random_range(0.3..0.9)),
            2 => (rng.random_range(0.0..0.6), rng.random_range(0.0..0.6)),
            _ => (0.0, 0.0),
        })
        .collect();
    let img = render(&truth, &conc, 64, 240.0);
    let od = od_transform(&img, [240, 240, 240]).unwrap();
    let est = estimate_stain_matrix(&od, &NmfConfig::default()).unwrap();
    assert!(cosine(&est.hematoxylin, &truth.hematoxylin) >= 0.99);
    assert!(cosine(&est.eosin, &truth.eosin) >= 0.99);

    let (h, _) = deconvolve(&od, &truth).unwrap();
    for (i, &(want, _)) in conc.iter().enumerate().step_by(4) {
        // 8-bit quantization limits precision.
        assert!((h.values[i] - want).abs() < 0.05, "{} vs {}", h.values[i], want);
    }
}

#[test]
fn concentration_png_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let od = mixed(&StainMatrix::reference(), 100, 1);
    let od = OdImage {
        width: 10,
        height: 10,
        ..od
    };
    let (h, _) = deconvolve(&od, &StainMatrix::reference()).unwrap();
    let path = dir.path().join("h.png");
    h.save_png(&path).unwrap();
    let back = histograph::imaging::load_image(&path).unwrap();
    assert_eq!((back.width(), back.height()), (10, 10));
}
