//! Acceptance checks, one PASS/FAIL line each. Exits non-zero if any fails.
//!
//! Run with `cargo test --test acceptance`.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use capalign::align::{fit, fit_ols, fit_procrustes, mapfile, objective_values, Preprocessor};
use capalign::captioner::{GenerationRequest, Generator, MockGenerator, PromptTemplate, SamplingParams};
use capalign::dal::{resume_dal, run_dal, Components, DalConfig};
use capalign::metrics::{
    aclip_s_aligned, harmonic_mean, kendall_tau_b, kendall_tau_c, recall_at_k, ref_aclip_s_aligned,
    reference_similarity, AClipS, ReferenceSet,
};
use capalign::vecstore::{self, human_records, CaptionInput, CaptionRecord, Datastore, Provenance};
use capalign::{embx, AlignmentMap, EmbeddingMatrix, Error, MapKind, Modality, Result, Scheme};
use rand::seq::SliceRandom;
use rand::Rng;

type Check = std::result::Result<String, String>;
type CheckFn = fn() -> Check;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> std::result::Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:.2?}, limit {limit:?}"))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn unit_rows(rows: &[Vec<f64>], modality: Modality) -> EmbeddingMatrix {
    let rows: Vec<Vec<f64>> = rows.iter().map(|r| common::normalize(r.clone())).collect();
    EmbeddingMatrix::from_rows(&rows, modality).unwrap()
}

fn orthogonal_map(w: Vec<f64>, d: usize) -> AlignmentMap {
    AlignmentMap::from_parts(MapKind::Procrustes, w, Preprocessor::none(d)).unwrap()
}

fn transpose(w: &[f64], d: usize) -> Vec<f64> {
    (0..d * d).map(|k| w[(k % d) * d + k / d]).collect()
}

/// The 50 alignment instances: d cycles through 2, 8, 64 and n alternates
/// between d/2 and 4d.
fn shapes() -> Vec<(usize, usize)> {
    (0..50)
        .map(|i| {
            let d = [2, 8, 64][i % 3];
            let n = if (i / 3) % 2 == 0 { (d / 2).max(1) } else { 4 * d };
            (d, n)
        })
        .collect()
}

/// Unit image rows, and text rows `normalize(R f + noise * eps)`.
fn rotated_instance(seed: u64, d: usize, n: usize, noise: f64) -> (EmbeddingMatrix, EmbeddingMatrix, Vec<f64>) {
    let mut r = common::rng(seed);
    let rot = common::random_orthogonal(d, &mut r);
    let f: Vec<Vec<f64>> = (0..n).map(|_| common::normalize(common::gaussian(d, &mut r))).collect();
    let e: Vec<Vec<f64>> = f
        .iter()
        .map(|fi| {
            let mut v = common::matvec(&rot, fi);
            if noise > 0.0 {
                v.iter_mut().zip(common::gaussian(d, &mut r)).for_each(|(x, g)| *x += noise * g);
            }
            v
        })
        .collect();
    (unit_rows(&e, Modality::Text), unit_rows(&f, Modality::Image), rot)
}

fn orthogonality_and_recovery() -> Check {
    let start = Instant::now();
    let mut worst_orth = 0.0f64;
    let mut worst_rec = 0.0f64;
    let mut worst_fit = 0.0f64;
    for (i, (d, n)) in shapes().into_iter().enumerate() {
        let (e, f, rot) = rotated_instance(1000 + i as u64, d, n, 0.0);
        let w = fit_procrustes(&e, &f).map_err(|err| err.to_string())?;
        worst_orth = worst_orth.max(w.orthogonality_error());
        if n >= d {
            worst_rec = worst_rec.max(max_abs_diff(w.matrix(), &rot));
        } else {
            // R is only determined on the span of the rows; check W agrees there
            for (fi, ei) in f.rows().zip(e.rows()) {
                worst_fit = worst_fit.max(max_abs_diff(&w.transform(fi).unwrap(), ei));
            }
        }
    }
    ensure(worst_orth <= 1e-6, || format!("max |W^T W - I| = {worst_orth:e}"))?;
    ensure(worst_rec <= 1e-6, || format!("max |W - R| = {worst_rec:e}"))?;
    ensure(worst_fit <= 1e-6, || format!("max |W f - e| (n < d) = {worst_fit:e}"))?;
    within(Duration::from_secs(10), start)?;
    Ok(format!(
        "50 instances, |W^T W - I| <= {worst_orth:.1e}, |W - R| <= {worst_rec:.1e}, rank-deficient |Wf - e| <= {worst_fit:.1e}, {:.2?}",
        start.elapsed()
    ))
}

fn objective_equivalence() -> Check {
    let start = Instant::now();
    let mut strict_transpose = 0;
    let mut identical_orders = 0;
    let mut rounding_ties = 0;
    for (i, (d, n)) in shapes().into_iter().enumerate() {
        let (e, f, _) = rotated_instance(2000 + i as u64, d, n, 0.3);
        let w = fit_procrustes(&e, &f).map_err(|err| err.to_string())?;
        let mut r = common::rng(3000 + i as u64);
        let mut candidates = vec![w.clone(), orthogonal_map(transpose(w.matrix(), d), d)];
        candidates.extend((0..100).map(|_| orthogonal_map(common::random_orthogonal(d, &mut r), d)));
        let objs: Vec<_> = candidates.iter().map(|c| objective_values(c, &e, &f).unwrap()).collect();

        let mut by_cos: Vec<usize> = (0..objs.len()).collect();
        by_cos.sort_by(|&a, &b| objs[b].cosine_sum.total_cmp(&objs[a].cosine_sum).then(a.cmp(&b)));
        let mut by_res: Vec<usize> = (0..objs.len()).collect();
        by_res.sort_by(|&a, &b| objs[a].residual_sum.total_cmp(&objs[b].residual_sum).then(a.cmp(&b)));
        if by_cos == by_res {
            identical_orders += 1;
        }
        // Pairs whose sums agree to rounding may swap; every other pair must agree.
        let tol = 1e-12 * n as f64;
        for x in 0..objs.len() {
            for y in x + 1..objs.len() {
                let dc = objs[x].cosine_sum - objs[y].cosine_sum;
                let dr = objs[x].residual_sum - objs[y].residual_sum;
                if dc.abs() <= tol {
                    rounding_ties += 1;
                    ensure(dr.abs() <= 4.0 * tol, || format!("instance {i}: cosine tie without residual tie"))?;
                    continue;
                }
                ensure(dc.signum() == -dr.signum(), || {
                    format!("instance {i} (d={d}, n={n}): candidates {x} and {y} ordered differently")
                })?;
            }
        }
        // a symmetric W equals W^T up to an ulp
        let top = objs[by_cos[0]].cosine_sum;
        ensure(top - objs[0].cosine_sum <= tol, || {
            format!("instance {i}: candidate {} beats fitted W by {:e}", by_cos[0], top - objs[0].cosine_sum)
        })?;
        ensure(objs[0].cosine_sum >= objs[1].cosine_sum - tol, || {
            format!("instance {i}: W^T scores higher than W")
        })?;
        if objs[0].cosine_sum > objs[1].cosine_sum {
            strict_transpose += 1;
        }
    }
    within(Duration::from_secs(30), start)?;
    Ok(format!(
        "50 instances x 102 candidates, full orderings identical in {identical_orders}/50, every pair agrees except {rounding_ties} pairs equal to rounding, W first, W beats W^T strictly in {strict_transpose}/50 (ties where W is symmetric), {:.2?}",
        start.elapsed()
    ))
}

fn ols_dominance() -> Check {
    let mut worst = f64::NEG_INFINITY;
    for (i, (d, n)) in shapes().into_iter().enumerate() {
        let (e, f, _) = rotated_instance(4000 + i as u64, d, n, 0.3);
        let p = objective_values(&fit_procrustes(&e, &f).unwrap(), &e, &f).unwrap();
        let o = objective_values(&fit_ols(&e, &f).map_err(|err| err.to_string())?, &e, &f).unwrap();
        worst = worst.max(o.residual_sum - p.residual_sum);
        ensure(o.residual_sum <= p.residual_sum + 1e-9, || {
            format!("instance {i}: OLS {} > Procrustes {}", o.residual_sum, p.residual_sum)
        })?;
    }
    Ok(format!("50 instances, max(OLS - Procrustes) = {worst:.3e}"))
}

fn retrieval_exactness() -> Check {
    let start = Instant::now();
    let (n, d) = (10_000, 64);
    let mut r = common::rng(5);
    let mut rows: Vec<Vec<f64>> = (0..n).map(|_| common::normalize(common::gaussian(d, &mut r))).collect();
    // exact duplicates force score ties that must break by caption id
    for i in 0..200 {
        rows[n - 1 - i] = rows[i * 7].clone();
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut r);
    let records = rows
        .iter()
        .zip(&ids)
        .map(|(v, id)| CaptionRecord::human(format!("cap{id:05}"), format!("text {id}"), v.clone()))
        .collect();
    let store = Datastore::build(records).unwrap();
    let mut queries: Vec<Vec<f64>> = (0..90).map(|_| common::gaussian(d, &mut r)).collect();
    queries.extend((0..10).map(|i| rows[i * 7].clone()));

    let mut compared = 0;
    for q in &queries {
        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut brute: Vec<(f64, &str, usize)> = (0..store.len())
            .map(|i| {
                let row = store.embedding(i);
                let rn = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
                let dot: f64 = q.iter().zip(row).map(|(a, &b)| a * b as f64).sum();
                ((dot / (qn * rn)).clamp(-1.0, 1.0), store.record(i).caption_id.as_str(), i)
            })
            .collect();
        brute.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        for k in [1, 5, 13, 50] {
            let got: Vec<(usize, u64)> = store.topk(q, k).unwrap().iter().map(|h| (h.index, h.score.to_bits())).collect();
            let want: Vec<(usize, u64)> = brute[..k].iter().map(|b| (b.2, b.0.to_bits())).collect();
            ensure(got == want, || format!("k={k}: top-k differs from brute force"))?;
            compared += 1;
        }
    }
    within(Duration::from_secs(60), start)?;
    Ok(format!("10000 records, {compared} query/k pairs identical, {:.2?}", start.elapsed()))
}

fn gaussian_matrix(d: usize, r: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
    let s = 1.0 / (d as f64).sqrt();
    common::gaussian(d * d, r).into_iter().map(|x| x * s).collect()
}

/// `(images, texts)` with `f = A z + sigma eps`, `e = B z + sigma eps`.
fn bimodal(a: &[f64], b: &[f64], n: usize, d: usize, sigma: f64, prefix: &str, r: &mut rand_chacha::ChaCha8Rng) -> (EmbeddingMatrix, EmbeddingMatrix) {
    let mut f = Vec::with_capacity(n * d);
    let mut e = Vec::with_capacity(n * d);
    for _ in 0..n {
        let z = common::gaussian(d, r);
        let noise = |v: Vec<f64>, r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            v.into_iter().zip(common::gaussian(d, r)).map(|(x, g)| x + sigma * g).collect()
        };
        f.extend(noise(common::matvec(a, &z), r));
        e.extend(noise(common::matvec(b, &z), r));
    }
    let ids: Vec<String> = (0..n).map(|i| format!("{prefix}{i}")).collect();
    (
        EmbeddingMatrix::new(ids.clone(), f, d, Modality::Image).unwrap(),
        EmbeddingMatrix::new(ids, e, d, Modality::Text).unwrap(),
    )
}

fn recall_at_1(map: &AlignmentMap, images: &EmbeddingMatrix, texts: &EmbeddingMatrix) -> Result<f64> {
    let captions: Vec<CaptionInput> = texts
        .ids()
        .iter()
        .map(|id| CaptionInput {
            caption_id: id.clone(),
            text: format!("caption {id}"),
            image_id: Some(id.clone()),
        })
        .collect();
    let store = Datastore::build(human_records(map, texts, &captions)?)?;
    let gold: HashMap<String, Vec<String>> = images.ids().iter().map(|id| (id.clone(), vec![id.clone()])).collect();
    Ok(recall_at_k(images, &store, &gold, &[1], map)?[0].1.mean)
}

fn alignment_improves_retrieval() -> Check {
    let start = Instant::now();
    let d = 64;
    let mut wins = 0;
    let (mut fitted_sum, mut identity_sum) = (0.0, 0.0);
    for trial in 0..100u64 {
        let mut r = common::rng(6000 + trial);
        let a = gaussian_matrix(d, &mut r);
        let b = gaussian_matrix(d, &mut r);
        let (train_f, train_e) = bimodal(&a, &b, 2000, d, 0.05, "tr", &mut r);
        let (test_f, test_e) = bimodal(&a, &b, 500, d, 0.05, "te", &mut r);
        let (map, _, _) = fit(MapKind::Procrustes, Scheme::NormalizeCenterRenormalize, train_e, train_f)
            .map_err(|e| e.to_string())?;
        let fitted = recall_at_1(&map, &test_f, &test_e).map_err(|e| e.to_string())?;
        let identity = recall_at_1(&AlignmentMap::identity(d), &test_f, &test_e).map_err(|e| e.to_string())?;
        fitted_sum += fitted;
        identity_sum += identity;
        if fitted > identity {
            wins += 1;
        }
    }
    ensure(wins >= 95, || format!("fitted map won only {wins}/100 trials"))?;
    Ok(format!(
        "fitted map wins {wins}/100, mean R@1 {:.3} vs identity {:.3}, {:.2?}",
        fitted_sum / 100.0,
        identity_sum / 100.0,
        start.elapsed()
    ))
}

fn naive_tau(x: &[f64], y: &[f64]) -> (Option<f64>, Option<f64>) {
    let (mut c, mut dis, mut tx, mut ty) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let (dx, dy) = (x[i] - x[j], y[i] - y[j]);
            if dx == 0.0 && dy == 0.0 {
            } else if dx == 0.0 {
                tx += 1;
            } else if dy == 0.0 {
                ty += 1;
            } else if (dx > 0.0) == (dy > 0.0) {
                c += 1;
            } else {
                dis += 1;
            }
        }
    }
    let (l, r) = (c + dis + tx, c + dis + ty);
    let b = (l > 0 && r > 0).then(|| (c as f64 - dis as f64) / ((l as f64) * (r as f64)).sqrt());
    let distinct = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s.dedup();
        s.len() as u64
    };
    let m = distinct(x).min(distinct(y));
    let n = x.len() as u64;
    let tc = (m >= 2).then(|| (2 * m) as f64 * (c as f64 - dis as f64) / ((n * n * (m - 1)) as f64));
    (b, tc)
}

fn metric_oracles() -> Check {
    let mut r = common::rng(7);
    let mut defined = 0;
    for i in 0..200 {
        let n = r.random_range(2..=200);
        // alternate between heavily tied, lightly tied and continuous values
        let draw = |r: &mut rand_chacha::ChaCha8Rng| -> f64 {
            match i % 3 {
                0 => r.random_range(0..4) as f64,
                1 => r.random_range(0..50) as f64,
                _ => r.random::<f64>(),
            }
        };
        let x: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        let y: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        let (b, c) = naive_tau(&x, &y);
        let got = (kendall_tau_b(&x, &y).ok(), kendall_tau_c(&x, &y).ok());
        ensure(got == (b, c), || format!("instance {i} (n={n}): {got:?} != oracle {:?}", (b, c)))?;
        defined += b.is_some() as usize;
    }

    let e1 = vec![1.0, 0.0, 0.0];
    let e2 = vec![0.0, 1.0, 0.0];
    let neg = vec![-1.0, 0.0, 0.0];
    let refs = ReferenceSet::new("img", vec!["a".into(), "b".into()], vec![e2.clone(), neg.clone()]).unwrap();
    let cases: Vec<(&str, f64, f64)> = vec![
        ("aCLIP-S identical", aclip_s_aligned(&e1, &e1).unwrap(), 1.0),
        ("aCLIP-S orthogonal", aclip_s_aligned(&e1, &e2).unwrap(), 0.0),
        ("aCLIP-S opposite clamps", aclip_s_aligned(&e1, &neg).unwrap(), 0.0),
        ("aCLIP-S zero vector", aclip_s_aligned(&[0.0; 3], &e1).unwrap(), 0.0),
        ("best reference", reference_similarity(&neg, &refs).unwrap(), 1.0),
        ("no positive reference", reference_similarity(&e1, &refs).unwrap(), 0.0),
        ("RefaCLIP-S zero side", ref_aclip_s_aligned(&e1, &refs, &e1).unwrap(), 0.0),
        ("RefaCLIP-S both one", ref_aclip_s_aligned(&e2, &refs, &e2).unwrap(), 1.0),
        ("H(1, 1)", harmonic_mean(1.0, 1.0), 1.0),
        ("H(0, 1)", harmonic_mean(0.0, 1.0), 0.0),
        ("H(0.5, 0.5)", harmonic_mean(0.5, 0.5), 0.5),
        ("H(0.25, 0.75)", harmonic_mean(0.25, 0.75), 0.375),
        ("H symmetric", harmonic_mean(0.75, 0.25), 0.375),
    ];
    for (name, got, want) in &cases {
        ensure((got - want).abs() <= 1e-12, || format!("{name}: {got} != {want}"))?;
    }
    Ok(format!(
        "200 tau instances match the pair-count oracle ({defined} with tau-b defined), {} boundary cases",
        cases.len()
    ))
}

struct Flaky<G> {
    inner: G,
    calls: AtomicUsize,
    fail_after: usize,
}

impl<G: Generator> Generator for Flaky<G> {
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.fail_after {
            return Err(Error::Service("connection refused".into()));
        }
        self.inner.generate(req)
    }
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap().flatten() {
        if e.file_type().unwrap().is_file() {
            out.insert(e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap());
        }
    }
    out
}

fn dal_soundness() -> Check {
    let start = Instant::now();
    let w = common::world(21, 16, 40, 10, 3);
    let cfg = DalConfig {
        iterations: 3,
        k_grid: vec![2, 4, 8],
        initial_k: 4,
        generation: SamplingParams {
            num_samples: 5,
            ..Default::default()
        },
        seed: 5,
        batch_size: 8,
        ..Default::default()
    };
    let template = PromptTemplate::default();
    let gen = MockGenerator::Resample(template.clone());
    fn comps<'a>(w: &'a common::World, template: &'a PromptTemplate, g: &'a dyn Generator) -> Components<'a> {
        Components {
            map: &w.map,
            template,
            generator: g,
            embedder: &w.embedder,
            metric: &AClipS,
        }
    }
    let straight = tempfile::tempdir().unwrap();
    let full = run_dal(&cfg, w.store.clone(), &w.train, &w.val, &comps(&w, &template, &gen), Some(straight.path()))
        .map_err(|e| e.to_string())?;

    let humans = w.store.len();
    let thresholds: HashMap<u32, f64> = full.state.history.iter().map(|h| (h.iteration, h.validation_mean)).collect();
    let audit: HashMap<&str, _> = full.store.audit().iter().map(|a| (a.caption_id.as_str(), a)).collect();
    let mut per_iter: HashMap<u32, usize> = HashMap::new();
    let mut per_image: HashMap<(String, u32), usize> = HashMap::new();
    ensure(&full.store.records()[..humans] == w.store.records(), || "human records changed".into())?;
    for rec in &full.store.records()[humans..] {
        ensure(rec.provenance == Provenance::Synthetic, || format!("{} is not synthetic", rec.caption_id))?;
        let a = audit[rec.caption_id.as_str()];
        let mu = thresholds[&rec.dal_iteration];
        ensure(a.threshold == mu && a.score > mu, || {
            format!("{} scored {} against threshold {} (mu {mu})", rec.caption_id, a.score, a.threshold)
        })?;
        *per_iter.entry(rec.dal_iteration).or_default() += 1;
        *per_image.entry((rec.source_image_id.clone().unwrap_or_default(), rec.dal_iteration)).or_default() += 1;
    }
    ensure(per_image.values().all(|&c| c == 1), || "more than one addition per image and iteration".into())?;
    let mut size = humans;
    for h in &full.state.history {
        let added = per_iter.get(&h.iteration).copied().unwrap_or(0);
        ensure(h.candidates_added == added, || format!("iteration {} reports {} additions, store has {added}", h.iteration, h.candidates_added))?;
        ensure(h.candidates_added <= h.candidates_generated, || "more added than generated".into())?;
        ensure(h.images_processed == w.train.len(), || "not every image processed".into())?;
        size += added;
        ensure(h.datastore_size == size, || format!("iteration {} size {} != {size}", h.iteration, h.datastore_size))?;
    }
    let total_added = full.store.len() - humans;
    ensure(total_added > 0, || "nothing was added".into())?;

    let broken = tempfile::tempdir().unwrap();
    let flaky = Flaky {
        inner: MockGenerator::Resample(template.clone()),
        calls: AtomicUsize::new(0),
        fail_after: 10 + 40 + 3 * 10 + 10 + 17,
    };
    let err = run_dal(&cfg, w.store.clone(), &w.train, &w.val, &comps(&w, &template, &flaky), Some(broken.path()));
    ensure(matches!(err, Err(Error::Interrupted { .. })), || format!("expected an interruption, got {:?}", err.map(|_| ())))?;
    let resumed = resume_dal(broken.path(), None, &w.train, &w.val, &comps(&w, &template, &gen)).map_err(|e| e.to_string())?;
    ensure(resumed.store == full.store && resumed.state.history == full.state.history, || {
        "resumed run differs from uninterrupted run".into()
    })?;
    for i in 1..=3 {
        let store = format!("store_{i}");
        ensure(dir_bytes(&broken.path().join(&store)) == dir_bytes(&straight.path().join(&store)), || {
            format!("{store} differs after resume")
        })?;
        let report = format!("report_{i}.json");
        ensure(std::fs::read(broken.path().join(&report)).ok() == std::fs::read(straight.path().join(&report)).ok(), || {
            format!("{report} differs after resume")
        })?;
    }
    within(Duration::from_secs(120), start)?;
    Ok(format!(
        "3 iterations, {total_added} synthetic captions all above threshold, resume bit-identical, {:.2?}",
        start.elapsed()
    ))
}

fn efficiency() -> Check {
    let (n, d) = (100_000, 1024);
    let mut r = common::rng(8);
    let images = common::gaussian(n * d, &mut r);
    let mut texts = common::gaussian(n * d, &mut r);
    texts.iter_mut().zip(&images).for_each(|(t, f)| *t = 0.1 * *t + f);
    let ids: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let images = EmbeddingMatrix::new(ids.clone(), images, d, Modality::Image).unwrap();
    let texts = EmbeddingMatrix::new(ids, texts, d, Modality::Text).unwrap();
    let start = Instant::now();
    let (map, _, _) = fit(MapKind::Procrustes, Scheme::NormalizeCenterRenormalize, texts, images).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    ensure(map.orthogonality_error() <= 1e-6, || format!("orthogonality error {:e}", map.orthogonality_error()))?;
    ensure(took < Duration::from_secs(60), || format!("fit took {took:.2?}"))?;
    Ok(format!("100000 pairs at d=1024 fitted in {took:.2?}"))
}

fn format_round_trips() -> Check {
    let w = common::world(31, 8, 10, 1, 2);
    let dir = tempfile::tempdir().unwrap();

    // EMBX: values already at f32 precision survive exactly
    let m = &w.train_images;
    let exact: Vec<f64> = m.data().iter().map(|&v| v as f32 as f64).collect();
    let m = EmbeddingMatrix::new(m.ids().to_vec(), exact, m.dim(), Modality::Image).unwrap();
    let path = dir.path().join("x.embx");
    embx::write(&path, &m).unwrap();
    let back = embx::read(&path).map_err(|e| e.to_string())?;
    ensure(back == m, || "EMBX matrix changed".into())?;
    ensure(embx::encode(&back).unwrap() == std::fs::read(&path).unwrap(), || "EMBX bytes changed".into())?;
    let mut bytes = std::fs::read(&path).unwrap();
    let at = bytes.len() - 4 - 3;
    bytes[at] ^= 0x10;
    ensure(matches!(embx::decode(&bytes), Err(Error::Checksum { .. })), || "corrupted EMBX payload accepted".into())?;

    // ALNW
    let path = dir.path().join("m.alnw");
    mapfile::write(&path, &w.map).unwrap();
    let back = mapfile::read(&path).map_err(|e| e.to_string())?;
    ensure(back.matrix() == w.map.matrix() && back.preprocessor() == w.map.preprocessor(), || "ALNW map changed".into())?;
    ensure(mapfile::encode(&back) == std::fs::read(&path).unwrap(), || "ALNW bytes changed".into())?;
    let mut bytes = std::fs::read(&path).unwrap();
    let at = bytes.len() / 2;
    bytes[at] ^= 0x01;
    ensure(matches!(mapfile::decode(&bytes), Err(Error::Checksum { .. })), || "corrupted ALNW accepted".into())?;

    // store directory, with synthetic records and audit entries
    let mut store = w.store.clone();
    let v = store.embedding(0).iter().map(|&x| x as f64).collect();
    store = store
        .add_synthetic_audited(CaptionRecord::synthetic("syn-1-train0-0", "a synthetic caption", v, 1, Some("train0".into())), 0.7, 0.5)
        .unwrap();
    let a = dir.path().join("store_a");
    let b = dir.path().join("store_b");
    vecstore::save(&store, &a).unwrap();
    let back = vecstore::load(&a).map_err(|e| e.to_string())?;
    ensure(back == store, || "store changed".into())?;
    vecstore::save(&back, &b).unwrap();
    ensure(dir_bytes(&a) == dir_bytes(&b), || "store files changed".into())?;
    for file in ["records.jsonl", "embeddings.embx", "audit.jsonl"] {
        let bad = dir.path().join(format!("bad_{file}"));
        std::fs::create_dir(&bad).unwrap();
        for (name, bytes) in dir_bytes(&a) {
            std::fs::write(bad.join(name), bytes).unwrap();
        }
        let mut bytes = std::fs::read(bad.join(file)).unwrap();
        let at = bytes.len() / 2;
        bytes[at] ^= 0x02;
        std::fs::write(bad.join(file), bytes).unwrap();
        ensure(matches!(vecstore::load(&bad), Err(Error::Checksum { .. })), || format!("corrupted {file} accepted"))?;
    }
    Ok("EMBX, ALNW and store directory round-trip byte-identically; corrupted bytes fail CRC".into())
}

fn main() {
    let checks: [(&str, CheckFn); 9] = [
        ("orthogonality and recovery", orthogonality_and_recovery),
        ("cosine/residual equivalence", objective_equivalence),
        ("OLS dominance", ols_dominance),
        ("retrieval exactness", retrieval_exactness),
        ("alignment improves retrieval", alignment_improves_retrieval),
        ("metric oracles", metric_oracles),
        ("DAL soundness", dal_soundness),
        ("efficiency", efficiency),
        ("format round-trips", format_round_trips),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} acceptance checks passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
