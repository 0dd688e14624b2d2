use proptest::prelude::*;

use clc::conditioning::{
    alpha_from_code, build_conditioning, fuse, pack_records, synthesize_conditioning, unpack_records, MatchRecord,
};
use clc::dictionary::{ball_tree_build, ball_tree_knn, kv_attend, kv_evict, KvCache};
use clc::entropy::{quantize_residual, Bitstream, FreqTable, RangeDecoder, RangeEncoder, StreamHeader};
use clc::metrics::{bd_rate, RdCurve, RdPoint};
use clc::numerics::{softmax_rows, sin_theta_dist, squared_distance, Matrix, Subspace};
use clc::transforms::{analysis, synthesis, Latent};
use clc::Image;

fn image_strategy(max: usize) -> impl Strategy<Value = Image> {
    (1..=max, 1..=max, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(w, h, c)| {
        proptest::collection::vec(any::<u8>(), w * h * c).prop_map(move |d| Image::new(w, h, c, d).unwrap())
    })
}

fn matrix(rows: usize, cols: usize, v: Vec<f64>) -> Matrix {
    Matrix::new(rows, cols, v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn range_coder_round_trips(scale in 0.3f64..40.0, symbols in proptest::collection::vec(-400i64..400, 0..300)) {
        let table = FreqTable::laplace(scale);
        let mut enc = RangeEncoder::new();
        for &s in &symbols {
            table.encode(&mut enc, s).unwrap();
        }
        enc.encode_bits(0b1011, 4).unwrap();
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes);
        for &s in &symbols {
            prop_assert_eq!(table.decode(&mut dec).unwrap(), s);
        }
        prop_assert_eq!(dec.decode_bits(4).unwrap(), 0b1011);
        dec.finish().unwrap();
    }

    #[test]
    fn quantizer_error_is_within_half_a_step(y in -3000.0f64..3000.0, mu in -500.0f64..500.0, step in 0.05f64..16.0) {
        let (q, recon) = quantize_residual(y, mu, step);
        prop_assert!((y - recon).abs() <= step / 2.0 + 1e-9);
        prop_assert_eq!(recon, q as f64 * step + mu);
    }

    #[test]
    fn transform_is_lossless(img in image_strategy(40), p in prop_oneof![Just(4usize), Just(8), Just(16)]) {
        let y = analysis(&img, p).unwrap();
        prop_assert_eq!(synthesis(&y).unwrap(), img);
    }

    #[test]
    fn transform_preserves_energy(bw in 1usize..4, bh in 1usize..4, seed in any::<u64>()) {
        let p = 8;
        let img = clc::synth::random_image(bw * p, bh * p, 1, seed);
        let y = analysis(&img, p).unwrap();
        let energy: f64 = img.data().iter().map(|&v| (v as f64 - 128.0).powi(2)).sum();
        prop_assert!((y.norm() - energy.sqrt()).abs() <= 1e-6 * energy.sqrt().max(1.0));
    }

    #[test]
    fn records_pack_round_trip(
        bw in 1usize..7,
        bh in 1usize..5,
        m in 1usize..=8,
        window in 0usize..=3,
        seed in proptest::collection::vec(any::<u32>(), 35),
    ) {
        let w = window as i32;
        let records: Vec<MatchRecord> = (0..bw * bh)
            .map(|i| {
                let r = seed[i % seed.len()].wrapping_mul(2654435761).wrapping_add(i as u32);
                MatchRecord {
                    bx: i % bw,
                    by: i / bw,
                    ref_index: (r as usize) % m,
                    dx: ((r >> 4) % (2 * window as u32 + 1)) as i32 - w,
                    dy: ((r >> 8) % (2 * window as u32 + 1)) as i32 - w,
                    score: 0.0,
                    gain_code: ((r >> 12) % 64) as u8,
                    alpha_code: ((r >> 20) % 16) as u8,
                }
            })
            .collect();
        let bytes = pack_records(&records, bw, m, window);
        prop_assert_eq!(unpack_records(&bytes, bw, bh, m, window).unwrap(), records);
    }

    #[test]
    fn softmax_ignores_row_shifts(v in proptest::collection::vec(-20.0f64..20.0, 12), shift in -50.0f64..50.0, t in 0.05f64..4.0) {
        let a = softmax_rows(&matrix(3, 4, v.clone()), t).unwrap();
        let b = softmax_rows(&matrix(3, 4, v.iter().map(|x| x + shift).collect()), t).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        for r in 0..3 {
            prop_assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sin_theta_symmetric_and_rotation_invariant(
        a in proptest::collection::vec(-1.0f64..1.0, 16),
        b in proptest::collection::vec(-1.0f64..1.0, 16),
        angle in 0.0f64..6.3,
    ) {
        let (Ok(u), Ok(v)) = (Subspace::from_span(&matrix(8, 2, a.clone())), Subspace::from_span(&matrix(8, 2, b))) else {
            return Ok(());
        };
        let d = sin_theta_dist(&u, &v).unwrap();
        prop_assert!((d - sin_theta_dist(&v, &u).unwrap()).abs() < 1e-9);
        let rot = matrix(2, 2, vec![angle.cos(), -angle.sin(), angle.sin(), angle.cos()]);
        let ur = Subspace::new(u.basis().matmul(&rot).unwrap()).unwrap();
        prop_assert!((d - sin_theta_dist(&ur, &v).unwrap()).abs() < 1e-9);
        prop_assert!(d <= 2f64.sqrt() + 1e-9);
    }

    #[test]
    fn ball_tree_matches_brute_force(
        points in proptest::collection::vec(proptest::collection::vec(-5i32..5, 3), 1..80),
        q in proptest::collection::vec(-6.0f64..6.0, 3),
        m in 1usize..8,
    ) {
        // small integer grid: plenty of exact distance ties
        let n = points.len();
        let flat: Vec<f64> = points.iter().flatten().map(|&x| x as f64).collect();
        let keys = matrix(n, 3, flat);
        let tree = ball_tree_build(&keys).unwrap();
        let m = m.min(n);
        let got = ball_tree_knn(&tree, &q, m).unwrap();
        let mut brute: Vec<(f64, usize)> = (0..n).map(|i| (squared_distance(keys.row(i), &q), i)).collect();
        brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let ids: Vec<usize> = got.iter().map(|nb| nb.id).collect();
        let expected: Vec<usize> = brute[..m].iter().map(|b| b.1).collect();
        prop_assert_eq!(ids, expected);
    }

    #[test]
    fn eviction_keeps_the_most_relevant(n in 1usize..30, keep_frac in 0.0f64..1.0, hits in proptest::collection::vec(0usize..30, 0..40)) {
        let mut cache = KvCache::new(64, 2, 1).unwrap();
        for i in 0..n {
            cache.insert(vec![i as f64, 0.0], vec![i as f64]).unwrap();
        }
        for h in hits {
            let i = h % n;
            let key = vec![i as f64, 0.0];
            if let Some(e) = cache.lookup(&key) {
                cache.bump(e);
            }
        }
        let keep = 1 + ((n - 1) as f64 * keep_frac) as usize;
        let rho = cache.relevance();
        let evicted = kv_evict(&cache, keep).unwrap();
        prop_assert_eq!(evicted.len(), keep);
        let kept: Vec<usize> = evicted.keys().data().chunks(2).map(|k| k[0] as usize).collect();
        let min_kept = kept.iter().map(|&i| rho[i]).fold(f64::INFINITY, f64::min);
        for (i, &r) in rho.iter().enumerate() {
            if !kept.contains(&i) {
                prop_assert!(r <= min_kept);
            }
        }
    }

    #[test]
    fn attention_weights_are_a_distribution(keys in proptest::collection::vec(-3.0f64..3.0, 4..40), q in proptest::collection::vec(-3.0f64..3.0, 4)) {
        let mut cache = KvCache::new(16, 4, 1).unwrap();
        for (i, k) in keys.chunks_exact(4).enumerate() {
            cache.insert(k.to_vec(), vec![i as f64]).unwrap();
        }
        let a = kv_attend(&q, &cache).unwrap();
        prop_assert!(a.weights.iter().all(|&w| w >= 0.0));
        prop_assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fusion_is_convex(code in 0u8..16, c in -300.0f64..300.0, r in -300.0f64..300.0) {
        let a = alpha_from_code(code);
        prop_assert!(a > 0.0 && a < 1.0);
        let m = fuse(a, c, r);
        prop_assert!(m >= c.min(r) - 1e-9 && m <= c.max(r) + 1e-9);
    }

    #[test]
    fn decoder_rebuilds_the_encoders_conditioning(seed in any::<u64>(), m in 1usize..4, window in 0usize..3, w1 in -12.0f64..4.0) {
        let y = analysis(&clc::synth::random_image(40, 24, 1, seed), 8).unwrap();
        let refs: Vec<Latent> = (0..m)
            .map(|i| analysis(&clc::synth::random_image(32, 32, 1, seed ^ (i as u64 + 1)), 8).unwrap())
            .collect();
        let enc = build_conditioning(&y, &refs, window, 0.1, true, 0.0, w1).unwrap();
        let bytes = pack_records(&enc.records, y.blocks_w(), m, window);
        let records = unpack_records(&bytes, y.blocks_w(), y.blocks_h(), m, window).unwrap();
        let dec = synthesize_conditioning(&y, &refs, &records, window).unwrap();
        prop_assert_eq!(dec.latent.data(), enc.latent.data());
        prop_assert_eq!(dec.alpha, enc.alpha);
    }

    #[test]
    fn bitstream_container_round_trips(
        m in 0usize..5,
        k in 1usize..5,
        body in proptest::collection::vec(any::<u8>(), 0..64),
        step in 0.01f32..20.0,
    ) {
        let bs = Bitstream {
            header: StreamHeader {
                width: 48,
                height: 17,
                channels: 3,
                patch: 16,
                slices: k as u8,
                step,
                window: 2,
                w0: 0.5,
                w1: -3.0,
                dict_hash: [7; 32],
                ref_ids: (0..m as u32).collect(),
            },
            records: if m == 0 { Vec::new() } else { body.clone() },
            hyper: body.iter().rev().copied().collect(),
            slices: (0..k).map(|i| body[..body.len().min(i * 3)].to_vec()).collect(),
        };
        let bytes = bs.to_bytes();
        prop_assert_eq!(Bitstream::from_bytes(&bytes).unwrap(), bs);
        if !bytes.is_empty() {
            prop_assert!(Bitstream::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        }
    }

    #[test]
    fn bd_rate_is_antisymmetric(base in 0.2f64..1.0, slope in 4.0f64..9.0, bend in -1.0f64..1.0, factor in 0.7f64..1.3) {
        let rates = [base, base * 2.0, base * 4.0, base * 8.0];
        let curve = |scale: f64, tilt: f64| {
            RdCurve::new(
                rates
                    .iter()
                    .map(|&r| {
                        let l = (r * scale).log2();
                        RdPoint::new(r * scale, 30.0 + slope * l + tilt * l * l * 0.1, "")
                    })
                    .collect(),
            )
            .unwrap()
        };
        let a = curve(1.0, bend);
        let b = curve(factor, bend * 0.5);
        prop_assert!(bd_rate(&a, &a).unwrap().abs() < 1e-9);
        if let (Ok(ab), Ok(ba)) = (bd_rate(&a, &b), bd_rate(&b, &a)) {
            prop_assert!((ab + ba).abs() < 0.5 + 0.01 * ab.abs().max(ba.abs()), "{} {}", ab, ba);
        }
    }
}
