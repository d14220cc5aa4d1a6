use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stainreg::color::{DEFAULT_I0, DEFAULT_OD_THRESHOLD};
use stainreg::eval::synthetic::{
    default_source_spec, render_image, sparse_recovery_spec, SOURCE_STAINS, TARGET_STAINS,
};
use stainreg::stain::{macenko_from_od, tissue_od_vectors, vahadane_from_od};
use stainreg::{
    estimate_macenko, estimate_vahadane, od_to_rgb, render_synthetic, Error, OdImage, RgbImage,
    SnmfConfig, StainMatrix,
};

#[test]
fn recovers_known_stains() {
    for (stains, seed) in [(SOURCE_STAINS, 11), (TARGET_STAINS, 12)] {
        let spec = sparse_recovery_spec(stains, 10, seed);
        let truth = spec.matrix().unwrap();
        for img in render_synthetic(&spec).unwrap().images {
            let m = estimate_macenko(&img, DEFAULT_OD_THRESHOLD, 1.0).unwrap();
            assert!(m.max_angle_deg(&truth) <= 2.0, "macenko off by {}", m.max_angle_deg(&truth));
            let v = estimate_vahadane(&img, &SnmfConfig::default(), DEFAULT_OD_THRESHOLD).unwrap();
            let err = v.matrix.max_angle_deg(&truth);
            assert!(err <= 3.0, "vahadane off by {err}");
        }
    }
}

#[test]
fn macenko_on_dense_textures() {
    let spec = default_source_spec();
    let truth = spec.matrix().unwrap();
    for class in 0..spec.prototypes.len() {
        let img = render_image(&spec, &truth, class, 0);
        let m = estimate_macenko(&img, DEFAULT_OD_THRESHOLD, 1.0).unwrap();
        assert!(m.max_angle_deg(&truth) <= 3.0);
    }
}

#[test]
fn outputs_are_valid_matrices() {
    let spec = sparse_recovery_spec(SOURCE_STAINS, 1, 3);
    let img = &render_synthetic(&spec).unwrap().images[0];
    let v = estimate_vahadane(img, &SnmfConfig::default(), DEFAULT_OD_THRESHOLD).unwrap();
    let m = estimate_macenko(img, DEFAULT_OD_THRESHOLD, 1.0).unwrap();
    for w in [v.matrix, m] {
        for col in w.stains() {
            assert!(col.iter().all(|&x| x >= 0.0));
            assert!((col.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
        }
        assert!(w.hematoxylin()[0] > w.eosin()[0]);
    }
    assert!(v.iterations >= 1 && v.iterations <= SnmfConfig::default().max_iters);
}

#[test]
fn white_image_has_no_tissue() {
    let img = RgbImage::filled(20, 20, [255, 255, 255]);
    let err = estimate_macenko(&img, DEFAULT_OD_THRESHOLD, 1.0).unwrap_err();
    assert!(matches!(err, Error::InsufficientTissue { found: 0, .. }));
    assert!(err.to_string().contains("insufficient tissue"));
    let err = estimate_vahadane(&img, &SnmfConfig::default(), DEFAULT_OD_THRESHOLD).unwrap_err();
    assert!(matches!(err, Error::InsufficientTissue { .. }));
}

#[test]
fn single_direction_is_degenerate() {
    let dir = StainMatrix::reference().hematoxylin();
    let od: Vec<f64> = (0..400).flat_map(|_| dir.map(|d| d * 1.2)).collect();
    let img = od_to_rgb(&OdImage::new(20, 20, od).unwrap(), DEFAULT_I0);
    // A constant colour is rank 0, hence also single-direction.
    let err = estimate_macenko(&img, DEFAULT_OD_THRESHOLD, 1.0).unwrap_err();
    assert!(matches!(err, Error::DegenerateColor { .. }), "{err:?}");

    let od: Vec<f64> =
        (0..400).flat_map(|i| dir.map(|d| d * (0.3 + 1.5 * i as f64 / 400.0))).collect();
    let err = macenko_from_od(&od.chunks(3).map(|c| [c[0], c[1], c[2]]).collect::<Vec<_>>(), 1.0)
        .unwrap_err();
    assert!(matches!(err, Error::DegenerateColor { .. }), "{err:?}");
}

fn sample_pixels() -> Vec<[f64; 3]> {
    let spec = sparse_recovery_spec(TARGET_STAINS, 1, 21);
    tissue_od_vectors(&render_synthetic(&spec).unwrap().images[0], DEFAULT_OD_THRESHOLD).unwrap()
}

#[test]
fn macenko_is_scale_invariant() {
    let pixels = sample_pixels();
    let base = macenko_from_od(&pixels, 1.0).unwrap();
    for s in [0.5, 2.0, 7.3] {
        let scaled: Vec<[f64; 3]> = pixels.iter().map(|p| p.map(|v| v * s)).collect();
        let m = macenko_from_od(&scaled, 1.0).unwrap();
        assert!(m.max_angle_deg(&base) < 1e-6, "scale {s}");
    }
}

#[test]
fn estimates_ignore_pixel_order() {
    let spec = sparse_recovery_spec(SOURCE_STAINS, 1, 8);
    let img = &render_synthetic(&spec).unwrap().images[0];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut pixels: Vec<[u8; 3]> = img.pixels().collect();
    pixels.shuffle(&mut rng);
    let shuffled = RgbImage::new(32, 32, pixels.concat()).unwrap();
    assert_eq!(
        estimate_macenko(img, DEFAULT_OD_THRESHOLD, 1.0).unwrap(),
        estimate_macenko(&shuffled, DEFAULT_OD_THRESHOLD, 1.0).unwrap()
    );
    let cfg = SnmfConfig::default();
    assert_eq!(
        estimate_vahadane(img, &cfg, DEFAULT_OD_THRESHOLD).unwrap().matrix,
        estimate_vahadane(&shuffled, &cfg, DEFAULT_OD_THRESHOLD).unwrap().matrix
    );
}

#[test]
fn vahadane_is_deterministic() {
    let pixels = sample_pixels();
    let cfg = SnmfConfig::default();
    let a = vahadane_from_od(&pixels, &cfg).unwrap();
    let b = vahadane_from_od(&pixels, &cfg).unwrap();
    assert_eq!(a.matrix, b.matrix);
    assert_eq!(a.objective.to_bits(), b.objective.to_bits());
}

#[test]
fn fewer_than_100_tissue_pixels_rejected() {
    let spec = sparse_recovery_spec(SOURCE_STAINS, 1, 2);
    let img = render_synthetic(&spec).unwrap().images[0].clone();
    let mut data = vec![255u8; 32 * 32 * 3];
    let tissue: Vec<usize> = img
        .pixels()
        .enumerate()
        .filter(|(_, p)| p.iter().any(|&v| v < 180))
        .map(|(i, _)| i)
        .take(99)
        .collect();
    for &i in &tissue {
        data[i * 3..i * 3 + 3].copy_from_slice(&img.data()[i * 3..i * 3 + 3]);
    }
    let sparse = RgbImage::new(32, 32, data).unwrap();
    let err = estimate_macenko(&sparse, DEFAULT_OD_THRESHOLD, 1.0).unwrap_err();
    assert!(matches!(err, Error::InsufficientTissue { required: 100, .. }), "{err:?}");
}
