use difd_core::bands::{self, BandSelection};
use difd_core::early_stop::{simulate, StopReason};
use difd_core::kernels::{pixel_shuffle, pixel_unshuffle, resize_bilinear, resize_nearest};
use difd_core::metrics::ConfusionMatrix;
use difd_core::raster::{crop_satellite, normalize_pair, select_bands, tile_aerial, WorldBox};
use difd_core::synth::{synth_generate, SynthSpec};
use difd_core::{GeoTransform, Raster, RasterData, Tensor};
use proptest::prelude::*;

fn tensor(shape: [usize; 4], values: &[f64]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, values.iter().cycle().take(n).copied().collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pixel_shuffle_round_trips(r in 1usize..4, c in 1usize..4, h in 1usize..5, w in 1usize..5,
                                 v in prop::collection::vec(-10.0f64..10.0, 1..64)) {
        let x = tensor([2, c * r * r, h, w], &v);
        let y = pixel_shuffle(&x, r).unwrap();
        prop_assert_eq!(y.shape(), [2, c, h * r, w * r]);
        prop_assert_eq!(pixel_unshuffle(&y, r).unwrap(), x);
    }

    #[test]
    fn nearest_keeps_values_bilinear_stays_in_range(h in 1usize..8, w in 1usize..8, oh in 1usize..20, ow in 1usize..20,
                                                     v in prop::collection::vec(-5.0f64..5.0, 1..64)) {
        let x = tensor([1, 2, h, w], &v);
        let n = resize_nearest(&x, oh, ow).unwrap();
        prop_assert!(n.data().iter().all(|a| x.data().contains(a)));
        let (lo, hi) = x.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &a| (l.min(a), h.max(a)));
        let b = resize_bilinear(&x, oh, ow).unwrap();
        prop_assert!(b.data().iter().all(|&a| a >= lo - 1e-12 && a <= hi + 1e-12));
    }

    #[test]
    fn iou_f1_identity(pred in prop::collection::vec(0u8..5, 64), truth in prop::collection::vec(0u8..5, 64)) {
        let mut cm = ConfusionMatrix::new(5);
        cm.accumulate(&pred, &truth).unwrap();
        for (iou, f1) in cm.iou_per_class().into_iter().zip(cm.f1_per_class()) {
            match (iou, f1) {
                (Some(i), Some(f)) => prop_assert!((f - 2.0 * i / (1.0 + i)).abs() < 1e-12),
                (None, None) => {}
                other => prop_assert!(false, "{:?}", other),
            }
        }
    }

    #[test]
    fn confusion_merge_is_order_free(a in prop::collection::vec((0u8..5, 0u8..5), 1..40),
                                     b in prop::collection::vec((0u8..5, 0u8..5), 1..40)) {
        let cm = |v: &[(u8, u8)]| {
            let mut m = ConfusionMatrix::new(5);
            let (p, t): (Vec<u8>, Vec<u8>) = v.iter().copied().unzip();
            m.accumulate(&p, &t).unwrap();
            m
        };
        let mut ab = cm(&a);
        ab.merge(&cm(&b)).unwrap();
        let mut ba = cm(&b);
        ba.merge(&cm(&a)).unwrap();
        prop_assert_eq!(&ab, &ba);
        let joined: Vec<_> = a.iter().chain(&b).copied().collect();
        prop_assert_eq!(ab, cm(&joined));
    }

    #[test]
    fn early_stop_waits_exactly_patience(patience in 1usize..20, steps in prop::collection::vec(0.001f64..0.1, 1..10),
                                         tail in prop::collection::vec(0.0f64..1.0, 0..30)) {
        let head: Vec<f64> = steps.iter().scan(0.0, |acc, s| { *acc += s; Some(*acc) }).collect();
        let best = *head.last().unwrap();
        let mut seq = head.clone();
        seq.extend(tail.iter().map(|t| best * t));
        seq.extend(std::iter::repeat(best).take(patience));
        let (epoch, reason) = simulate(patience, &seq).unwrap();
        prop_assert_eq!(reason, StopReason::EarlyStop);
        prop_assert_eq!(epoch, head.len() + patience);
    }

    #[test]
    fn tiles_partition_the_parent(rows in 1usize..4, cols in 1usize..4, extra_r in 0usize..7, extra_c in 0usize..7) {
        let t = 8;
        let (h, w) = (rows * t + extra_r, cols * t + extra_c);
        let gt = GeoTransform::new(100.0, 200.0, 0.5, -0.5);
        let img = Raster::new(1, w, h, RasterData::F32((0..h * w).map(|i| i as f32).collect()), gt, 2180, None).unwrap();
        let lab = Raster::new(1, w, h, RasterData::U8(vec![0; h * w]), gt, 2180, None).unwrap();
        let tiles = tile_aerial(&img, &lab, t).unwrap();
        prop_assert_eq!(tiles.len(), rows * cols);
        for tile in &tiles {
            for y in 0..t {
                for x in 0..t {
                    let src = img.get(0, tile.row * t + y, tile.col * t + x);
                    prop_assert_eq!(tile.image.get(0, y, x), src);
                }
            }
            let (wx, wy) = tile.image.transform.pixel_to_world(3.0, 5.0);
            let (px, py) = img.transform.world_to_pixel(wx, wy);
            prop_assert!((px - (tile.col * t + 3) as f64).abs() < 1e-9);
            prop_assert!((py - (tile.row * t + 5) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn crop_draws_only_source_values(r0 in 0usize..10, c0 in 0usize..10, size in 1usize..10, out in 1usize..30) {
        let gt = GeoTransform::new(0.0, 0.0, 10.0, -10.0);
        let sat = Raster::new(1, 20, 20, RasterData::F32((0..400).map(|i| i as f32).collect()), gt, 2180, None).unwrap();
        let bounds = WorldBox {
            min_x: c0 as f64 * 10.0,
            max_x: (c0 + size) as f64 * 10.0,
            min_y: -((r0 + size) as f64) * 10.0,
            max_y: -(r0 as f64) * 10.0,
        };
        let crop = crop_satellite(&sat, &bounds, out).unwrap();
        let window: Vec<f32> = (r0..r0 + size).flat_map(|r| (c0..c0 + size).map(move |c| (r * 20 + c) as f32)).collect();
        prop_assert!(crop.band_f32(0).unwrap().iter().all(|v| window.contains(v)));
    }
}

#[test]
fn band_selections_compose_as_index_maps() {
    let gt = GeoTransform::new(0.0, 0.0, 10.0, -10.0);
    let sat = Raster::new(17, 1, 1, RasterData::F32((0..17).map(|b| b as f32).collect()), gt, 2180, None).unwrap();
    for sel in BandSelection::ALL {
        let picked = select_bands(&sat, sel).unwrap();
        let got: Vec<usize> = (0..picked.bands).map(|b| picked.get(b, 0, 0) as usize).collect();
        assert_eq!(got, sel.indices());
        let sub = [picked.bands - 1, 0];
        let twice = picked.select_indices(&sub).unwrap();
        let direct = sat.select_indices(&sub.map(|i| sel.indices()[i])).unwrap();
        assert_eq!(twice, direct);
    }
    assert_eq!(bands::CATALOG.len(), 17);
}

#[test]
fn generated_pairs_satisfy_invariants_and_normalize_idempotently() {
    for sel in BandSelection::ALL {
        for p in synth_generate(11, 8, &SynthSpec::toy(), sel).unwrap() {
            p.validate(5).unwrap();
            let once = normalize_pair(&p).unwrap();
            assert_eq!(normalize_pair(&once).unwrap(), once);
            assert!(once.aerial.band_f32(0).unwrap().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
