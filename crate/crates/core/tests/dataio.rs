mod common;

use proptest::prelude::*;
use strata::dataio::{
    augment, cap_indices, class_weights, denormalize, discretize, normalize_target, normalize_tile, rotate_raster,
    rotate_tile, split_tiles, validate_target, NormStats, PointCloudTile, ThawRaster, WeightScheme, NUM_CLASSES,
};
use strata::rng::SplitMix64;

/// (low, low inclusive, high, high inclusive) per class, C1 first.
const INTERVALS: [(f64, bool, f64, bool); NUM_CLASSES] = [
    (1.6, false, f64::INFINITY, false),
    (1.0, false, 1.6, true),
    (0.5, false, 1.0, true),
    (0.2, false, 0.5, true),
    (-0.2, true, 0.2, true),
    (-1.0, true, -0.2, false),
    (f64::NEG_INFINITY, false, -1.0, false),
];

fn containing(v: f64) -> Vec<u8> {
    INTERVALS
        .iter()
        .enumerate()
        .filter(|(_, &(lo, li, hi, hi_inc))| (v > lo || (li && v == lo)) && (v < hi || (hi_inc && v == hi)))
        .map(|(c, _)| c as u8)
        .collect()
}

#[test]
fn boundary_sweep_assigns_exactly_one_class() {
    let mut probes: Vec<f64> = (-4000..=4000).map(|i| i as f64 * 1e-3).collect();
    for b in [1.6f64, 1.0, 0.5, 0.2, -0.2, -1.0] {
        probes.extend([b, b.next_up(), b.next_down()]);
    }
    probes.extend([f64::MAX, f64::MIN, 1e-300, -1e-300, 0.0, -0.0]);
    for v in probes {
        let c = containing(v);
        assert_eq!(c.len(), 1, "{v} in {c:?}");
        assert_eq!(discretize(v).unwrap(), c[0], "{v}");
    }
    assert_eq!(discretize(2.0).unwrap(), 0);
    assert_eq!(discretize(0.0).unwrap(), 4);
    assert_eq!(discretize(-1.0).unwrap(), 5);
    assert!(discretize(f64::NAN).is_err());
    assert!(discretize(f64::INFINITY).is_err());
}

/// Per-class pixel counts of the reference dataset.
const REFERENCE_COUNTS: [u64; 7] = [868_553, 566_837, 556_133, 298_654, 396_961, 561_384, 247_346];

#[test]
fn inverse_frequency_weights_match_published_column() {
    let w = class_weights(&REFERENCE_COUNTS, WeightScheme::InverseFrequency);
    let published = [1.00, 1.53, 1.56, 2.91, 2.19, 1.55, 3.51];
    for (a, b) in w.iter().zip(published) {
        assert_eq!(format!("{a:.2}"), format!("{b:.2}"));
    }
    let sq = class_weights(&REFERENCE_COUNTS, WeightScheme::InverseSquare);
    assert!((sq[6] - 12.3).abs() < 0.05);
    assert_eq!(class_weights(&[10; 7], WeightScheme::InverseFrequency), [1.0; 7]);
    let absent = class_weights(&[10, 5, 0, 10, 10, 10, 10], WeightScheme::InverseFrequency);
    assert_eq!(absent[2], 2.0);
}

#[test]
fn split_arithmetic() {
    let s = split_tiles(781);
    assert_eq!((s.train.len(), s.eval.len()), (624, 157));
    let mut all: Vec<usize> = s.train.iter().chain(&s.eval).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..781).collect::<Vec<_>>());
    let s = split_tiles(10);
    assert_eq!((s.train.len(), s.eval.len()), (8, 2));
}

#[test]
fn normalisation_examples() {
    let ds = common::random_dataset(50, 10, 300, 4);
    let mut raw = PointCloudTile::new(vec![[3.2, 3.2, ds.stats.z_max], [0.0, 6.4, ds.stats.z_min]], vec![[0.5; 4]; 2], vec![0, 1]).unwrap();
    raw.extent = [6.4, 6.4];
    let n = normalize_tile(&raw, &ds.stats).unwrap();
    assert_eq!(n.xyz[0], [0.0, 0.0, 1.0]);
    assert_eq!(n.xyz[1], [-1.0, 1.0, 0.0]);
    assert!(normalize_tile(&n, &ds.stats).is_err());
    raw.extent = [0.0, 6.4];
    assert!(normalize_tile(&raw, &ds.stats).is_err());
}

#[test]
fn attributes_standardise_on_their_own_batch() {
    let ds = common::random_dataset(51, 8, 500, 4);
    let tiles: Vec<&PointCloudTile> = ds.tiles.iter().collect();
    let rasters: Vec<&ThawRaster> = ds.rasters.iter().collect();
    let stats = NormStats::compute(&tiles, &rasters, WeightScheme::InverseFrequency).unwrap();
    let all: Vec<[f64; 4]> = tiles.iter().flat_map(|t| normalize_tile(t, &stats).unwrap().attrs).collect();
    let n = all.len() as f64;
    for j in 0..4 {
        let m = all.iter().map(|a| a[j]).sum::<f64>() / n;
        let s = (all.iter().map(|a| (a[j] - m).powi(2)).sum::<f64>() / n).sqrt();
        assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9, "attr {j}: {m} {s}");
    }
}

#[test]
fn target_normalisation() {
    let st = common::test_stats();
    let vals = [st.target_mean, 3.5, -7.25, 99.0, f64::NAN];
    let z = normalize_target(&vals, &st).unwrap();
    assert_eq!(z[0], 0.0);
    assert!((z[3] - (st.clip_high - st.target_mean) / st.target_std).abs() < 1e-15);
    assert!(z[4].is_nan());
    let back = denormalize(&z, &st);
    for i in 0..3 {
        assert!((back[i] - vals[i]).abs() < 1e-9);
    }
    let mut zero = st.clone();
    zero.target_std = 0.0;
    assert!(normalize_target(&vals, &zero).is_err());
}

#[test]
fn targets_beyond_one_metre_are_rejected() {
    assert!(validate_target(&ThawRaster::new(1, 3, vec![-100.0, f64::NAN, 100.0]).unwrap()).is_ok());
    assert!(validate_target(&ThawRaster::new(1, 2, vec![0.0, -100.5]).unwrap()).is_err());
}

/// Every ordered selection of `k` distinct points that starts at the
/// centroid-nearest point and is greedily maximin at each step (ties to the
/// lower id), found by exhaustive enumeration.
fn exhaustive_cap(xyz: &[[f64; 3]], k: usize) -> Vec<usize> {
    let n = xyz.len();
    let d2 = |a: usize, b: &[f64; 3]| (0..3).map(|j| (xyz[a][j] - b[j]).powi(2)).sum::<f64>();
    let c: [f64; 3] = std::array::from_fn(|j| xyz.iter().map(|p| p[j]).sum::<f64>() / n as f64);
    let mut seqs = vec![vec![]];
    for _ in 0..k {
        seqs = seqs
            .into_iter()
            .flat_map(|s: Vec<usize>| (0..n).filter(|i| !s.contains(i)).map(|i| [s.clone(), vec![i]].concat()).collect::<Vec<_>>())
            .collect();
    }
    let mind = |pre: &[usize], i: usize| pre.iter().map(|&p| d2(i, &xyz[p])).fold(f64::INFINITY, f64::min);
    let ok: Vec<Vec<usize>> = seqs
        .into_iter()
        .filter(|s| (0..n).all(|j| d2(s[0], &c) < d2(j, &c) || (d2(s[0], &c) == d2(j, &c) && s[0] <= j)))
        .filter(|s| {
            (1..k).all(|t| {
                let pre = &s[..t];
                (0..n).filter(|j| !pre.contains(j)).all(|j| mind(pre, s[t]) > mind(pre, j) || (mind(pre, s[t]) == mind(pre, j) && s[t] <= j))
            })
        })
        .collect();
    assert_eq!(ok.len(), 1);
    let mut v = ok.into_iter().next().unwrap();
    v.sort_unstable();
    v
}

#[test]
fn cap_points_examples_and_oracle() {
    let line = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
    // Centroid 4/3 is nearest point 1; the farthest from it is point 2.
    assert_eq!(cap_indices(&line, 2).unwrap(), vec![1, 2]);
    assert_eq!(cap_indices(&line, 3).unwrap(), vec![0, 1, 2]);
    assert!(cap_indices(&line, 0).is_err());
    let mut rng = SplitMix64::new(52);
    for _ in 0..60 {
        let n = 2 + rng.below(9);
        let xyz: Vec<[f64; 3]> = (0..n).map(|_| [rng.below(4) as f64, rng.below(3) as f64, rng.below(2) as f64]).collect();
        for k in 1..=n.min(5) {
            assert_eq!(cap_indices(&xyz, k).unwrap(), exhaustive_cap(&xyz, k), "{xyz:?} k={k}");
        }
    }
}

fn aligned_tile(n: usize) -> (PointCloudTile, ThawRaster) {
    // One point at the centre of every cell, labelled by its cell index.
    let mut xyz = Vec::new();
    for r in 0..n {
        for c in 0..n {
            xyz.push([(c as f64 + 0.5) / n as f64 * 2.0 - 1.0, (r as f64 + 0.5) / n as f64 * 2.0 - 1.0, 0.5]);
        }
    }
    let mut t = PointCloudTile::new(xyz, vec![[0.0; 4]; n * n], vec![0; n * n]).unwrap();
    t.coords_normalized = true;
    t.attrs_standardized = true;
    (t, ThawRaster::new(n, n, (0..n * n).map(|i| i as f64).collect()).unwrap())
}

fn cell_of(p: [f64; 3], n: usize) -> usize {
    let f = |v: f64| (((v + 1.0) / 2.0 * n as f64).floor() as usize).min(n - 1);
    f(p[1]) * n + f(p[0])
}

#[test]
fn rotation_preserves_point_cell_correspondence() {
    let n = 5;
    let (t, r) = aligned_tile(n);
    for turns in 0..4u8 {
        let (tr, rr) = (rotate_tile(&t, turns), rotate_raster(&r, turns).unwrap());
        for (i, p) in tr.xyz.iter().enumerate() {
            assert_eq!(rr.values[cell_of(*p, n)], i as f64, "turns {turns}");
        }
    }
    let twice = rotate_tile(&rotate_tile(&t, 1), 1);
    let half = rotate_tile(&t, 2);
    for (a, b) in twice.xyz.iter().zip(&half.xyz) {
        assert!((0..3).all(|j| (a[j] - b[j]).abs() < 1e-15));
    }
    assert_eq!(rotate_raster(&rotate_raster(&r, 1).unwrap(), 1).unwrap(), rotate_raster(&r, 2).unwrap());
    assert!(rotate_raster(&ThawRaster::new(2, 3, vec![0.0; 6]).unwrap(), 1).is_err());
}

#[test]
fn augment_without_jitter_only_rotates() {
    let (t, r) = aligned_tile(4);
    let mut rng = SplitMix64::new(53);
    let mut seen = [false; 4];
    for _ in 0..40 {
        let (ta, ra, turns) = augment(&t, &r, &mut rng, 0.0).unwrap();
        seen[turns as usize] = true;
        assert_eq!(ta, rotate_tile(&t, turns));
        assert_eq!(ra, rotate_raster(&r, turns).unwrap());
        if turns == 0 {
            assert_eq!((ta.clone(), ra.clone()), (t.clone(), r.clone()));
        }
    }
    assert!(seen.iter().all(|&s| s));
}

proptest! {
    #[test]
    fn jitter_is_bounded_and_leaves_targets(seed in any::<u64>(), sigma in 0.0f64..0.02) {
        let (t, r) = aligned_tile(3);
        let mut rng = SplitMix64::new(seed);
        let (ta, ra, turns) = augment(&t, &r, &mut rng, sigma).unwrap();
        let base = rotate_tile(&t, turns);
        for (a, b) in ta.xyz.iter().zip(&base.xyz) {
            prop_assert!((0..3).all(|j| (a[j] - b[j]).abs() <= 3.0 * sigma + 1e-15));
        }
        prop_assert_eq!(ra, rotate_raster(&r, turns).unwrap());
    }

    #[test]
    fn discretize_is_monotone(a in -5.0f64..5.0, b in -5.0f64..5.0) {
        // Higher change never maps to a higher (more thaw) class index.
        if a <= b {
            prop_assert!(discretize(a).unwrap() >= discretize(b).unwrap());
        }
    }
}
