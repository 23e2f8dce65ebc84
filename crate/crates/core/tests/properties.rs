use proptest::prelude::*;

use uncseg::labelspace::{builtin_schema, ModelKind};
use uncseg::losses::kernels;
use uncseg::metrics::dsc;
use uncseg::render::{blend, OVERLAY_RED};
use uncseg::unctarget::{box_smooth_3, error_map, ErrorMap};
use uncseg::voxvol::{Dims, LabelVolume, MaskVolume, Volume, VoxelGrid};

fn dims_strategy(max: usize) -> impl Strategy<Value = Dims> {
    (1..=max, 1..=max, 1..=max).prop_map(|(x, y, z)| Dims::new(x, y, z).unwrap())
}

fn mask_pair(max: usize) -> impl Strategy<Value = (Dims, Vec<u8>, Vec<u8>)> {
    dims_strategy(max).prop_flat_map(|d| {
        let n = d.voxels();
        (
            Just(d),
            prop::collection::vec(0u8..2, n),
            prop::collection::vec(0u8..2, n),
        )
    })
}

fn brute_smooth(d: Dims, x: &[u8]) -> Vec<f64> {
    let [nx, ny, nz] = d.as_array().map(|v| v as i64);
    let mut out = vec![0.0; d.voxels()];
    for z in 0..nz {
        for y in 0..ny {
            for xx in 0..nx {
                let mut s = 0.0;
                for dz in -1..=1 {
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            let (a, b, c) = (xx + dx, y + dy, z + dz);
                            if a >= 0 && b >= 0 && c >= 0 && a < nx && b < ny && c < nz {
                                s += x[(a + nx * (b + ny * c)) as usize] as f64;
                            }
                        }
                    }
                }
                out[(xx + nx * (y + ny * z)) as usize] = s / 27.0;
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scalar_volume_round_trips(d in dims_strategy(5), ch in 1usize..3, seed in any::<u32>()) {
        let n = d.voxels() * ch;
        let data: Vec<f32> = (0..n).map(|i| ((i as u32).wrapping_mul(2654435761).wrapping_add(seed)) as f32 / 7.0).collect();
        let v = Volume::Scalar(VoxelGrid::new(d, ch, data).unwrap());
        let bytes = v.encode();
        prop_assert_eq!(bytes.len(), 24 + 4 * n);
        prop_assert_eq!(Volume::decode(&bytes).unwrap(), v);
    }

    #[test]
    fn label_volume_round_trips(d in dims_strategy(5), seed in any::<u64>()) {
        let schema = builtin_schema(ModelKind::Um);
        let labels: Vec<u16> = (0..d.voxels()).map(|i| ((seed as usize + 31 * i) % 55) as u16).collect();
        let v = Volume::Labels(LabelVolume::new(d, labels, &schema).unwrap());
        let back = Volume::decode(&v.encode()).unwrap().into_labels().unwrap().bind(&schema).unwrap();
        prop_assert_eq!(Volume::Labels(back), v);
    }

    #[test]
    fn truncated_payload_is_rejected((d, a, _) in mask_pair(4), cut in 1usize..4) {
        let v = Volume::Scalar(VoxelGrid::from_f64(d, &a.iter().map(|&x| x as f64).collect::<Vec<_>>()).unwrap());
        let bytes = v.encode();
        prop_assert!(Volume::decode(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn box_smooth_matches_triple_loop((d, a, _) in mask_pair(6)) {
        let got = box_smooth_3(&ErrorMap::new(d, a.clone()).unwrap());
        for (g, w) in got.values().iter().zip(brute_smooth(d, &a)) {
            prop_assert!((g - w).abs() <= 1e-12);
        }
        prop_assert!(got.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn dsc_matches_counting((d, a, b) in mask_pair(6)) {
        let (ma, mb) = (MaskVolume::new(d, a.clone()).unwrap(), MaskVolume::new(d, b.clone()).unwrap());
        let inter = a.iter().zip(&b).filter(|(x, y)| **x == 1 && **y == 1).count();
        let sa = a.iter().filter(|&&x| x == 1).count();
        let sb = b.iter().filter(|&&x| x == 1).count();
        let want = if sa + sb == 0 { 1.0 } else { 2.0 * inter as f64 / (sa + sb) as f64 };
        prop_assert_eq!(dsc(&ma, &mb).unwrap(), want);
        prop_assert_eq!(dsc(&ma, &mb).unwrap(), dsc(&mb, &ma).unwrap());
        prop_assert_eq!(dsc(&ma, &ma).unwrap(), 1.0);
    }

    #[test]
    fn mask_algebra((d, a, b) in mask_pair(5), r in 0usize..3) {
        let (ma, mb) = (MaskVolume::new(d, a).unwrap(), MaskVolume::new(d, b).unwrap());
        let dil = ma.dilate(r);
        let ero = ma.erode(r);
        for i in 0..d.voxels() {
            prop_assert!(dil.values()[i] >= ma.values()[i]);
            prop_assert!(ero.values()[i] <= ma.values()[i]);
        }
        prop_assert_eq!(ma.xor(&mb).unwrap(), mb.xor(&ma).unwrap());
        prop_assert_eq!(ma.xor(&mb).unwrap(), ma.or(&mb).unwrap().and_not(&ma.and(&mb).unwrap()).unwrap());
        prop_assert_eq!(ma.not().not(), ma);
    }

    #[test]
    fn error_map_is_symmetric_and_binary(d in dims_strategy(5), seed in any::<u64>()) {
        let schema = builtin_schema(ModelKind::Cm);
        let n = d.voxels();
        let mk = |s: u64| (0..n).map(|i| ((s.wrapping_mul(6364136223846793005).wrapping_add((i as u64).wrapping_mul(1442695040888963407))) >> 61) as u16 % 4).collect::<Vec<_>>();
        let p = LabelVolume::new(d, mk(seed), &schema).unwrap();
        let g = LabelVolume::new(d, mk(seed ^ 0x9e37), &schema).unwrap();
        let tumor = schema.tumor_labels().unwrap();
        let e1 = error_map(&p, &g, tumor).unwrap();
        let e2 = error_map(&g, &p, tumor).unwrap();
        prop_assert_eq!(e1.values(), e2.values());
        for i in 0..n {
            let want = (p.labels()[i] != 0) != (g.labels()[i] != 0);
            prop_assert_eq!(e1.values()[i] == 1, want);
        }
    }

    #[test]
    fn softmax_is_a_distribution(v in prop::collection::vec(-30.0f64..30.0, 3 * 7)) {
        let p = kernels::softmax(&v, 3);
        for i in 0..7 {
            let s: f64 = (0..3).map(|c| p[c * 7 + i]).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn blend_endpoints_and_monotone(base in any::<[u8; 3]>(), u in 0.0f64..1.0) {
        prop_assert_eq!(blend(base, 0.0), base);
        prop_assert_eq!(blend(base, 1.0), OVERLAY_RED);
        let b = blend(base, u);
        for c in 0..3 {
            let lo = base[c].min(OVERLAY_RED[c]);
            let hi = base[c].max(OVERLAY_RED[c]);
            prop_assert!(lo <= b[c] && b[c] <= hi);
        }
    }
}

fn uem() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (40usize..200).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..1.0, n),
            prop::collection::vec(0.0f64..1.0, n),
            prop::collection::vec(prop::bool::weighted(0.7), n),
        )
            .prop_map(|(u, e, m)| (u, e, m.into_iter().map(|b| b as u8 as f64).collect()))
    })
}

fn masked_spread(u: &[f64], m: &[f64]) -> f64 {
    let n: f64 = m.iter().sum();
    let mean = u.iter().zip(m).map(|(a, b)| a * b).sum::<f64>() / n;
    u.iter().zip(m).map(|(a, b)| b * (a - mean).powi(2)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn rmsd_and_corr_properties((u, e, m) in uem(), scale in 0.01f64..100.0, shift in -10.0f64..10.0) {
        let eps = 1e-6;
        prop_assert!(kernels::rmsd(&u, &e, &m, eps).value >= 0.0);
        let c = kernels::corr(&u, &e, &m, eps).value;
        prop_assert!(c.abs() <= 1.0 + 1e-6);
        // Self-correlation is A/(A+eps), within 1e-6 of 1 once A >= 1.
        prop_assume!(masked_spread(&u, &m) >= 1.0);
        let self_c = kernels::corr(&u, &u, &m, eps).value;
        prop_assert!((self_c - 1.0).abs() <= 1e-6);
        let mapped: Vec<f64> = u.iter().map(|x| scale * x + shift).collect();
        let c2 = kernels::corr(&mapped, &e, &m, eps).value;
        prop_assert!((c - c2).abs() <= 1e-6, "{c} vs {c2}");
    }
}
