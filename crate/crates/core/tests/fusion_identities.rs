use csff_core::annc::{extract_field, AnncConfig, AnncModel};
use csff_core::discriminant::{pair_tensor, predict_same, DiscConfig, DiscModel};
use csff_core::fusion::{build_neighborhood, fuse_image, spatial_matrices, spatial_matrix, Exclusions, FusionConfig};
use csff_core::ingest::{gen_synthetic, stratified_split, zscore_normalize, SyntheticSceneConfig};

struct Fixture {
    cube: csff_core::ingest::SpectralCube,
    split: csff_core::ingest::DataSplit,
    field: csff_core::field::FeatureField,
    disc: DiscModel,
}

fn fixture() -> Fixture {
    let scene = SyntheticSceneConfig {
        height: 20,
        width: 18,
        bands: 32,
        classes: 3,
        regions: 5,
        noise_std: 0.4,
        smoothness: 2.0,
        seed: 3,
    };
    let (raw, labels) = gen_synthetic(&scene).unwrap();
    let cube = zscore_normalize(&raw);
    let split = stratified_split(&labels, 6, 2).unwrap();
    let annc_cfg = AnncConfig {
        widths: [16, 8, 5],
        ..AnncConfig::default()
    };
    let field = extract_field(&AnncModel::new(32, 3, &annc_cfg, 1).unwrap(), &cube).unwrap();
    let disc_cfg = DiscConfig {
        architecture: "compact".into(),
        ..DiscConfig::default()
    };
    let disc = DiscModel::new(32, &disc_cfg, 1).unwrap();
    Fixture {
        cube,
        split,
        field,
        disc,
    }
}

#[test]
fn zero_threshold_is_neighborhood_average() {
    let fx = fixture();
    let train = fx.split.train_set();
    let (h, w) = (fx.cube.height() as isize, fx.cube.width() as isize);
    for side in [3, 5, 9] {
        let cfg = FusionConfig { side, threshold: 0.0 };
        let fused = fuse_image(&fx.field, &fx.disc, &fx.cube, &fx.split, &cfg).unwrap();
        let r = (side / 2) as isize;
        for &c in &fx.split.test {
            let mut sum = vec![0.0; fx.field.dim()];
            let mut n = 0.0;
            for dr in -r..=r {
                for dc in -r..=r {
                    let (y, x) = (c.row as isize + dr, c.col as isize + dc);
                    if y < 0 || x < 0 || y >= h || x >= w {
                        continue;
                    }
                    let at = csff_core::ingest::Coord::new(y as usize, x as usize);
                    if train.contains(&at) {
                        continue;
                    }
                    for (s, v) in sum.iter_mut().zip(fx.field.get(at).unwrap()) {
                        *s += v;
                    }
                    n += 1.0;
                }
            }
            for (a, s) in fused.get(c).unwrap().iter().zip(&sum) {
                assert!((a - s / n).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn full_threshold_and_unit_window_keep_plain_features() {
    let fx = fixture();
    for cfg in [
        FusionConfig {
            side: 7,
            threshold: 1.0,
        },
        FusionConfig {
            side: 1,
            threshold: 0.0,
        },
        FusionConfig {
            side: 1,
            threshold: 0.3,
        },
    ] {
        let fused = fuse_image(&fx.field, &fx.disc, &fx.cube, &fx.split, &cfg).unwrap();
        for &c in &fx.split.test {
            assert_eq!(fused.get(c), fx.field.get(c));
        }
        for (_, c) in fx.split.train_coords() {
            assert!(!fused.is_valid(c));
        }
    }
}

#[test]
fn batched_matrices_match_cell_by_cell() {
    let fx = fixture();
    let set = spatial_matrices(&fx.disc, &fx.cube, &fx.split, 5).unwrap();
    let ex = Exclusions::from_split(&fx.split, fx.cube.height(), fx.cube.width());
    for (&c, m) in set.centers.iter().zip(&set.matrices).step_by(11) {
        let nb = build_neighborhood(c, 5, fx.cube.height(), fx.cube.width(), &ex).unwrap();
        assert_eq!(&spatial_matrix(&fx.disc, &fx.cube, &nb).unwrap(), m);
        for (i, cell) in nb.cells.iter().enumerate() {
            match cell {
                Some(at) => {
                    let p =
                        predict_same(&fx.disc, &pair_tensor(fx.cube.pixel(c), fx.cube.pixel(*at)).unwrap()).unwrap();
                    assert_eq!(m.values[i], p);
                    assert!((0.0..=1.0).contains(&p));
                }
                None => assert!(!m.valid[i]),
            }
        }
    }
}

#[test]
fn cropped_matrices_equal_direct_computation() {
    let fx = fixture();
    let big = spatial_matrices(&fx.disc, &fx.cube, &fx.split, 9).unwrap();
    let small = spatial_matrices(&fx.disc, &fx.cube, &fx.split, 3).unwrap();
    for (b, s) in big.matrices.iter().zip(&small.matrices) {
        assert_eq!(&b.crop(3).unwrap(), s);
    }
}

#[test]
fn fused_features_are_convex_combinations() {
    let fx = fixture();
    let cfg = FusionConfig {
        side: 5,
        threshold: 0.5,
    };
    let fused = fuse_image(&fx.field, &fx.disc, &fx.cube, &fx.split, &cfg).unwrap();
    let ex = Exclusions::from_split(&fx.split, fx.cube.height(), fx.cube.width());
    for &c in &fx.split.test {
        let nb = build_neighborhood(c, 5, fx.cube.height(), fx.cube.width(), &ex).unwrap();
        for (d, &v) in fused.get(c).unwrap().iter().enumerate() {
            let vals: Vec<f64> = nb.included().map(|at| fx.field.get(at).unwrap()[d]).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
