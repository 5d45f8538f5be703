//! Randomized invariants checked against naive reference implementations.

mod common;

use capalign::align::{fit_ols, fit_procrustes, mapfile, objective_values, Preprocessor};
use capalign::metrics::{harmonic_mean, kendall_tau_b, kendall_tau_c, pair_counts};
use capalign::vecstore::{self, CaptionRecord, Datastore};
use capalign::{embx, AlignmentMap, EmbeddingMatrix, Error, MapKind, Modality};
use proptest::prelude::*;

/// O(n^2) pair classification: (C, D, ties in x only, ties in y only, ties in both).
fn naive_counts(x: &[f64], y: &[f64]) -> (u64, u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0, 0);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            match (dx == 0.0, dy == 0.0) {
                (true, true) => c.4 += 1,
                (true, false) => c.2 += 1,
                (false, true) => c.3 += 1,
                _ if (dx > 0.0) == (dy > 0.0) => c.0 += 1,
                _ => c.1 += 1,
            }
        }
    }
    c
}

fn naive_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let (c, d, tx, ty, _) = naive_counts(x, y);
    let (l, r) = (c + d + tx, c + d + ty);
    (l > 0 && r > 0).then(|| (c as f64 - d as f64) / ((l as f64) * (r as f64)).sqrt())
}

fn naive_tau_c(x: &[f64], y: &[f64]) -> Option<f64> {
    let distinct = |v: &[f64]| {
        let mut s: Vec<f64> = v.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s.dedup();
        s.len() as u64
    };
    let m = distinct(x).min(distinct(y));
    let (c, d, ..) = naive_counts(x, y);
    let n = x.len() as u64;
    (m >= 2).then(|| (2 * m) as f64 * (c as f64 - d as f64) / ((n * n * (m - 1)) as f64))
}

/// Paired columns drawn from a small value range so ties are common.
fn tied_pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..80, 1i32..12).prop_flat_map(|(n, range)| {
        (
            prop::collection::vec((-range..=range).prop_map(f64::from), n),
            prop::collection::vec((-range..=range).prop_map(f64::from), n),
        )
    })
}

fn unit_rows(n: usize, d: usize, modality: Modality, seed: u64) -> EmbeddingMatrix {
    let mut r = common::rng(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| common::normalize(common::gaussian(d, &mut r))).collect();
    EmbeddingMatrix::from_rows(&rows, modality).unwrap()
}

fn orthogonal_map(w: Vec<f64>) -> AlignmentMap {
    let d = (w.len() as f64).sqrt() as usize;
    AlignmentMap::from_parts(MapKind::Procrustes, w, Preprocessor::none(d)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    #[test]
    fn pair_counts_match_naive((x, y) in tied_pairs()) {
        let c = pair_counts(&x, &y).unwrap();
        let (cc, dd, tx, ty, txy) = naive_counts(&x, &y);
        prop_assert_eq!(
            (c.concordant, c.discordant, c.ties_x_only, c.ties_y_only, c.ties_both),
            (cc, dd, tx, ty, txy)
        );
        let n = x.len() as u64;
        prop_assert_eq!(cc + dd + tx + ty + txy, n * (n - 1) / 2);
    }

    #[test]
    fn tau_matches_naive_exactly((x, y) in tied_pairs()) {
        prop_assert_eq!(kendall_tau_b(&x, &y).ok(), naive_tau_b(&x, &y));
        prop_assert_eq!(kendall_tau_c(&x, &y).ok(), naive_tau_c(&x, &y));
    }

    #[test]
    fn tau_is_rank_based_and_symmetric((x, y) in tied_pairs()) {
        let warped: Vec<f64> = x.iter().map(|v| v * v * v + 2.0 * v - 7.0).collect();
        let shifted: Vec<f64> = y.iter().map(|v| (v / 4.0).exp()).collect();
        prop_assert_eq!(kendall_tau_b(&x, &y).ok(), kendall_tau_b(&warped, &shifted).ok());
        prop_assert_eq!(kendall_tau_c(&x, &y).ok(), kendall_tau_c(&warped, &shifted).ok());
        prop_assert_eq!(kendall_tau_b(&x, &y).ok(), kendall_tau_b(&y, &x).ok());
        prop_assert_eq!(kendall_tau_c(&x, &y).ok(), kendall_tau_c(&y, &x).ok());
        if let Ok(t) = kendall_tau_b(&x, &y) {
            prop_assert!((-1.0..=1.0).contains(&t));
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            prop_assert_eq!(kendall_tau_b(&x, &neg).unwrap(), -t);
        }
    }

    #[test]
    fn topk_matches_brute_force(
        rows in prop::collection::vec(prop::collection::vec(-2i8..=2, 3), 1..60),
        ids in prop::collection::vec(0u32..1000, 60),
        query in prop::collection::vec(-3i8..=3, 3),
        k in 1usize..70,
    ) {
        let mut seen = std::collections::HashSet::new();
        let records: Vec<CaptionRecord> = rows
            .iter()
            .zip(&ids)
            .enumerate()
            .filter(|(_, (r, id))| r.iter().any(|&v| v != 0) && seen.insert(**id))
            .map(|(i, (r, id))| {
                CaptionRecord::human(format!("c{id}"), format!("t{i}"), common::normalize(r.iter().map(|&v| v as f64).collect()))
            })
            .collect();
        prop_assume!(!records.is_empty() && query.iter().any(|&v| v != 0));
        let store = Datastore::build(records).unwrap();
        let q: Vec<f64> = query.iter().map(|&v| v as f64).collect();

        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut brute: Vec<(f64, String, usize)> = (0..store.len())
            .map(|i| {
                let row: Vec<f64> = store.embedding(i).iter().map(|&v| v as f64).collect();
                let rn = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                let dot: f64 = q.iter().zip(&row).map(|(a, b)| a * b).sum();
                let s = if qn * rn == 0.0 { 0.0 } else { (dot / (qn * rn)).clamp(-1.0, 1.0) };
                (s, store.record(i).caption_id.clone(), i)
            })
            .collect();
        brute.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        brute.truncate(k);

        let hits = store.topk(&q, k).unwrap();
        let got: Vec<(u64, usize)> = hits.iter().map(|h| (h.score.to_bits(), h.index)).collect();
        let want: Vec<(u64, usize)> = brute.iter().map(|b| (b.0.to_bits(), b.2)).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn procrustes_is_orthogonal_and_optimal(d in 2usize..9, n in 1usize..40, seed in any::<u64>()) {
        let f = unit_rows(n, d, Modality::Image, seed);
        let e = unit_rows(n, d, Modality::Text, seed ^ 0x5eed);
        let w = fit_procrustes(&e, &f).unwrap();
        prop_assert!(w.orthogonality_error() <= 1e-9, "{}", w.orthogonality_error());
        let best = objective_values(&w, &e, &f).unwrap();

        let mut r = common::rng(seed.wrapping_add(1));
        for _ in 0..5 {
            let other = objective_values(&orthogonal_map(common::random_orthogonal(d, &mut r)), &e, &f).unwrap();
            prop_assert!(best.cosine_sum >= other.cosine_sum - 1e-9);
            prop_assert!(best.residual_sum <= other.residual_sum + 1e-9);
            // for unit rows and orthogonal maps the two objectives are tied
            prop_assert!((other.residual_sum - (2.0 * n as f64 - 2.0 * other.cosine_sum)).abs() < 1e-9);
        }
    }

    #[test]
    fn ols_residual_never_exceeds_procrustes(d in 2usize..9, n in 1usize..40, seed in any::<u64>()) {
        let f = unit_rows(n, d, Modality::Image, seed);
        let e = unit_rows(n, d, Modality::Text, seed ^ 0xa11);
        let p = objective_values(&fit_procrustes(&e, &f).unwrap(), &e, &f).unwrap();
        let o = objective_values(&fit_ols(&e, &f).unwrap(), &e, &f).unwrap();
        prop_assert!(o.residual_sum <= p.residual_sum + 1e-9, "{} > {}", o.residual_sum, p.residual_sum);
    }

    #[test]
    fn harmonic_mean_identities(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let h = harmonic_mean(a, b);
        prop_assert_eq!(h, harmonic_mean(b, a));
        if a == 0.0 || b == 0.0 {
            prop_assert_eq!(h, 0.0);
        } else {
            prop_assert!(h >= a.min(b) - 1e-15 && h <= a.max(b) + 1e-15);
            prop_assert!(h <= (a + b) / 2.0 + 1e-15);
        }
        prop_assert!((harmonic_mean(a, a) - a).abs() <= 1e-15);
        prop_assert_eq!(harmonic_mean(-a, b), 0.0);
    }

    #[test]
    fn embx_round_trips_and_payload_flips_fail(
        n in 1usize..12,
        d in 1usize..6,
        seed in any::<u64>(),
        text in any::<bool>(),
        flip in any::<prop::sample::Index>(),
        bit in 0u8..8,
    ) {
        let modality = if text { Modality::Text } else { Modality::Image };
        let mut r = common::rng(seed);
        // values representable in f32 survive the trip unchanged
        let data: Vec<f64> = common::gaussian(n * d, &mut r).iter().map(|&v| v as f32 as f64).collect();
        let ids = (0..n).map(|i| format!("id-{i}-{}", "é".repeat(i % 3))).collect();
        let m = EmbeddingMatrix::new(ids, data, d, modality).unwrap();
        let bytes = embx::encode(&m).unwrap();
        let back = embx::decode(&bytes).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(embx::encode(&back).unwrap(), bytes.clone());

        let payload_start = bytes.len() - 4 - n * d * 4;
        let at = payload_start + flip.index(bytes.len() - payload_start);
        let mut bad = bytes.clone();
        bad[at] ^= 1 << bit;
        let is_checksum = matches!(embx::decode(&bad), Err(Error::Checksum { .. }));
        prop_assert!(is_checksum);
    }

    #[test]
    fn alnw_round_trips_and_flips_fail(
        d in 1usize..6,
        seed in any::<u64>(),
        flip in any::<prop::sample::Index>(),
        bit in 0u8..8,
    ) {
        let mut r = common::rng(seed);
        let pre = Preprocessor::from_parts(
            common::normalize(common::gaussian(d, &mut r)).iter().map(|v| v * 0.3).collect(),
            common::normalize(common::gaussian(d, &mut r)).iter().map(|v| v * 0.2).collect(),
            capalign::Scheme::NormalizeCenterRenormalize,
        )
        .unwrap();
        let map = orthogonal_map(common::random_orthogonal(d, &mut r)).with_preprocessor(pre).unwrap();
        let bytes = mapfile::encode(&map);
        let back = mapfile::decode(&bytes).unwrap();
        prop_assert_eq!(mapfile::encode(&back), bytes.clone());
        prop_assert_eq!(back.fingerprint(), map.fingerprint());

        let mut bad = bytes.clone();
        let at = flip.index(bytes.len());
        bad[at] ^= 1 << bit;
        prop_assert!(mapfile::decode(&bad).is_err());
    }
}

#[test]
fn store_directory_round_trips_bit_exactly() {
    let w = common::world(9, 8, 12, 1, 2);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    vecstore::save(&w.store, a.path()).unwrap();
    let back = vecstore::load(a.path()).unwrap();
    assert_eq!(back, w.store);
    vecstore::save(&back, b.path()).unwrap();
    for f in ["manifest.json", "records.jsonl", "embeddings.embx", "audit.jsonl"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn oracle_matches_hand_counts() {
    // pairs: (1,2) C, (1,3) C, (2,3) D
    assert_eq!(naive_counts(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]), (2, 1, 0, 0, 0));
    assert_eq!(naive_counts(&[1.0, 1.0, 2.0], &[5.0, 6.0, 6.0]), (1, 0, 1, 1, 0));
    assert_eq!(naive_tau_c(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]), Some(1.0 / 3.0));
}
