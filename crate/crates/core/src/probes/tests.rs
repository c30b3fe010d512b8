use super::*;
use crate::network::{ModelConfig, PoolSpec, UnitType};
use proptest::prelude::*;

fn vec_t(v: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(v)
}

fn ramp(shape: [usize; 3]) -> Tensor<f64> {
    let n = shape.iter().product::<usize>();
    Tensor::new(shape.to_vec(), (0..n).map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0).collect()).unwrap()
}

#[test]
fn distance_examples() {
    let a = vec_t(vec![1.0, 0.0]);
    let b = vec_t(vec![0.0, 1.0]);
    assert!((feature_distance(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    let f = vec_t(vec![0.3, -2.0, 5.0]);
    assert_eq!(feature_distance(&f, &f).unwrap(), 0.0);
    let neg = f.map(|v| -v);
    assert!((feature_distance(&f, &neg).unwrap() - 2.0).abs() < 1e-15);
    let zero = vec_t(vec![0.0; 3]);
    assert_eq!(feature_distance(&zero, &zero).unwrap(), 0.0);
    assert!((feature_distance(&f, &zero).unwrap() - 1.0).abs() < 1e-15);
    assert!(feature_distance(&a, &f).is_err());
}

proptest! {
    #[test]
    fn distance_properties(
        v in prop::collection::vec(-5.0f64..5.0, 1..12),
        w_seed in any::<u64>(),
        s1 in 0.01f64..100.0,
        s2 in 0.01f64..100.0,
    ) {
        let mut rng = RngStream::new(w_seed, 0);
        let w: Vec<f64> = v.iter().map(|_| rng.uniform() * 10.0 - 5.0).collect();
        let (a, b) = (vec_t(v), vec_t(w));
        let d = feature_distance(&a, &b).unwrap();
        prop_assert!((0.0..=2.0 + 1e-12).contains(&d));
        prop_assert!((d - feature_distance(&b, &a).unwrap()).abs() < 1e-15);
        let scaled = feature_distance(&a.map(|x| x * s1), &b.map(|x| x * s2)).unwrap();
        prop_assert!((d - scaled).abs() < 1e-12);
    }

    #[test]
    fn translation_keeps_in_frame_rows(dy in -7isize..=7) {
        let img = ramp([2, 8, 5]);
        let out = translate_image(&img, dy).unwrap();
        for c in 0..2 {
            for y in 0..8isize {
                let src = y - dy;
                for x in 0..5 {
                    let got = out.data()[((c * 8) + y as usize) * 5 + x];
                    if (0..8).contains(&src) {
                        prop_assert_eq!(got.to_bits(), img.data()[((c * 8) + src as usize) * 5 + x].to_bits());
                    } else {
                        prop_assert_eq!(got, 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn translation_examples() {
    let img = ramp([1, 16, 16]);
    assert_eq!(translate_image(&img, 0).unwrap(), img);
    let back = translate_image(&translate_image(&img, 2).unwrap(), -2).unwrap();
    for y in 0..16 {
        for x in 0..16 {
            let expect = if y >= 14 { 0.0 } else { img.data()[y * 16 + x] };
            assert_eq!(back.data()[y * 16 + x], expect);
        }
    }
    for dy in -15..=15 {
        assert!(translate_image(&img, dy).is_ok());
    }
    assert!(translate_image(&img, 16).is_err());
}

#[test]
fn rotation_examples() {
    let img = ramp([3, 9, 9]);
    assert_eq!(rotate_image(&img, 0.0).unwrap(), img);
    assert_eq!(rotate_image(&img, 360.0).unwrap(), img);
    let twice = rotate_image(&rotate_image(&img, 180.0).unwrap(), 180.0).unwrap();
    let rms = (img.data().iter().zip(twice.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / img.len() as f64).sqrt();
    assert!(rms < 1e-3, "rms {rms}");
}

#[test]
fn sweeps() {
    let t = Sweep::translations(15);
    assert_eq!(t.steps.len(), 31);
    assert_eq!(t.steps[0], (Transform::Translate, -15.0));
    let r = Sweep::rotations(45.0).unwrap();
    assert_eq!(r.steps.len(), 9);
    assert_eq!(r.steps.last(), Some(&(Transform::Rotate, 360.0)));
    assert_eq!(Sweep::rotations(50.0).unwrap().steps.last(), Some(&(Transform::Rotate, 360.0)));
    assert!(Sweep::rotations(0.0).is_err());
}

fn probe_model(unit: UnitType) -> Model<f64> {
    let cfg = ModelConfig {
        input: [3, 16, 16],
        layers: vec![
            LayerSpec::ConvSubspace { units: 4, k: 2, receptive_field: 5, pool: Some(PoolSpec { size: 2, stride: 2 }), unit },
            LayerSpec::ConvSubspace { units: 4, k: 2, receptive_field: 3, pool: None, unit },
            LayerSpec::FcSubspace { units: 6, k: 3, unit },
            LayerSpec::Softmax { classes: 3 },
        ],
    };
    Model::init(cfg, 7).unwrap()
}

#[test]
fn invariance_rows() {
    let model = probe_model(UnitType::Probout { lambda: 1.0 });
    let images: Vec<Tensor<f64>> = (0..3).map(|i| ramp([3, 16, 16]).map(|v| v * (i + 1) as f64 - 0.1)).collect();
    let sweep = Sweep::translations(3).then(Sweep::rotations(90.0).unwrap());
    let rows = invariance_curve(&model, &images, &sweep, &[], Execution::default()).unwrap();
    assert_eq!(rows.len(), 4 * 3 * 12);
    for r in &rows {
        assert!((0.0..=2.0).contains(&r.distance));
        let identity = r.magnitude == 0.0 || r.magnitude == 360.0;
        if identity {
            assert_eq!(r.distance, 0.0, "{r:?}");
        }
    }
    assert_eq!(rows[0].image, ImageId::Index(0));
    assert_eq!(rows.last().unwrap().image, ImageId::Mean);
    let again = invariance_curve(&model, &images, &sweep, &[], Execution::Sequential).unwrap();
    assert_eq!(rows, again);
    let only = invariance_curve(&model, &images, &sweep, &["fc1".into()], Execution::default()).unwrap();
    assert!(only.iter().all(|r| r.layer == "fc1"));
    assert!(invariance_curve(&model, &images, &sweep, &["conv9".into()], Execution::default()).is_err());
    assert!(invariance_curve(&model, &[], &sweep, &[], Execution::default()).is_err());
    assert!(invariance_curve(&model, &images, &Sweep::default(), &[], Execution::default()).is_err());
}

#[test]
fn mean_rows_average_the_images() {
    let model = probe_model(UnitType::Maxout);
    let images: Vec<Tensor<f64>> = (0..4).map(|i| ramp([3, 16, 16]).map(|v| (v + i as f64 * 0.3).sin())).collect();
    let sweep = Sweep::translations(2);
    let rows = invariance_curve(&model, &images, &sweep, &["conv2".into()], Execution::default()).unwrap();
    let per_image = &rows[..4 * 5];
    for (s, mean) in rows[4 * 5..].iter().enumerate() {
        let expect = (0..4).map(|i| per_image[i * 5 + s].distance).sum::<f64>() / 4.0;
        assert!((mean.distance - expect).abs() < 1e-15);
    }
}

#[test]
fn probe_csv_columns() {
    let rec = ProbeRecord { transform: Transform::Rotate, magnitude: 90.0, layer: "conv1".into(), image: ImageId::Mean, distance: 0.25 };
    assert_eq!(probe_csv(&[rec.clone()]).unwrap(), "transform,magnitude,layer,image_id,distance\nrotate,90,conv1,mean,0.25\n");
    let paired = paired_probe_csv(&[("maxout", &[rec.clone()]), ("probout", &[rec])]).unwrap();
    assert_eq!(paired.lines().count(), 3);
    assert!(paired.starts_with("model,transform"));
}

#[test]
fn filter_grid_geometry_and_round_trip() {
    let model = Model::<f32>::init(ModelConfig::cifar_two_stage(|_| UnitType::Maxout), 3).unwrap();
    let grid = export_filters(&model, 0).unwrap();
    assert_eq!(grid.image.channels, 3);
    assert_eq!((grid.tile_h, grid.tile_w, grid.k), (8, 8, 2));
    let decoded = PnmImage::decode(&grid.image.encode().unwrap()).unwrap();
    assert_eq!(decoded, grid.image);
    let w = &model.params.layers[0].weight;
    assert_eq!(w.shape()[0], 96);
    let mut tiles = std::collections::HashSet::new();
    for f in 0..96 {
        let vals: Vec<f64> = w.data()[f * 192..(f + 1) * 192].iter().map(|&v| v as f64).collect();
        let (lo, hi) = vals.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let (oy, ox) = grid.tile_origin(f / 2, f % 2);
        assert!(tiles.insert((oy, ox)));
        for c in 0..3 {
            for y in 0..8 {
                for x in 0..8 {
                    let px = decoded.data[((oy + y) * decoded.width + ox + x) * 3 + c] as f64 / 255.0;
                    let want = (vals[(c * 8 + y) * 8 + x] - lo) / (hi - lo);
                    assert!((px - want).abs() <= 0.5 / 255.0 + 1e-9);
                }
            }
        }
    }
    // Sibling filters of a unit sit next to each other.
    let (a, b) = (grid.tile_origin(5, 0), grid.tile_origin(5, 1));
    assert_eq!((a.0, b.1 - a.1), (b.0, grid.tile_w + grid.gap));
    assert!(grid.image.comments[0].contains("conv1"));
}

#[test]
fn flat_filters_are_mid_gray() {
    assert_eq!(normalize_filter(&[0.4; 5]), vec![FLAT_FILTER_LEVEL; 5]);
    assert_eq!(normalize_filter(&[-1.0, 0.0, 1.0]), vec![0, 128, 255]);
    let mut model = probe_model(UnitType::Maxout);
    model.params.layers[1].weight.data_mut().iter_mut().for_each(|v| *v = 0.7);
    let grid = export_filters(&model, 1).unwrap();
    assert_eq!(grid.image.channels, 1);
    let (oy, ox) = grid.tile_origin(0, 0);
    assert_eq!(grid.image.data[oy * grid.image.width + ox], FLAT_FILTER_LEVEL);
    assert!(export_filters(&model, 2).is_err());
    assert!(export_filters(&model, 3).is_err());
    assert_eq!(export_filters(&model, 0).unwrap(), export_filters(&model, 0).unwrap());
}

#[test]
fn sampling_examples() {
    let mut rng = RngStream::new(42, 0);
    let r = sampling_frequency_check(&[0.0, 0.0], 1.0, 100_000, false, &mut rng).unwrap();
    assert!(r.passed);
    assert!(r.observed.iter().all(|f| (f - 0.5).abs() <= 0.0063));
    let r = sampling_frequency_check(&[1.0, 2.0], 1.0, 100_000, false, &mut rng).unwrap();
    let e = 1.0 / (1.0 + (-1.0f64).exp());
    assert!((r.expected[1] - e).abs() < 1e-15);
    assert!((r.observed[1] - 0.731).abs() < 0.006 && r.passed);
    let r = sampling_frequency_check(&[0.0, 1.0], 100.0, 10_000, false, &mut rng).unwrap();
    assert!(r.observed[1] >= 0.9999);
    let r = sampling_frequency_check(&[0.3, -0.2, 1.0], 2.0, 100_000, true, &mut rng).unwrap();
    assert_eq!(r.expected[0], 0.5);
    assert!(r.passed && (r.observed[0] - 0.5).abs() <= 0.0063);
    assert!(sampling_frequency_check(&[0.0], 1.0, 999, false, &mut rng).is_err());
}
