//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line to
//! stderr (uncaptured) and then asserts on the same condition.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Display;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use lingolab::corpus::{dedup_sequences, sample_lines, Corpus, LanguageId};
use lingolab::lab::{
    execute, plan_runs, report, BaselineSpec, Condition, ExecuteOptions, OmissionRule, ResultStore, RunRecord, RunStatus,
    TokenizerSettings, TrainingSettings,
};
use lingolab::model::{evaluate, gradient_check, EvalResult, LanguageModel, ModelConfig, Transformer};
use lingolab::scaling::{
    compute_priors, estimate_tokens, evaluate_estimator, fit_power_law, CurvePoint, HoldoutPolicy, PowerLawFit,
    PriorSet, ScalingError, Tier,
};
use lingolab::stats::{bonferroni, paired_t_test, relative_ll, variance_partition};
use lingolab::synthlang::{generate_corpus, generate_family, genome_distance, FamilySpec};
use lingolab::tokenize::{
    encode_routed, merge_tokenizers, train_multilingual_tokenizer, train_tokenizer, vocab_overlap,
};
use lingolab::typology::write_feature_vectors;

// Pinned tolerances.
const C1_MAX_REL_ERROR: f64 = 1e-3;
const C1_MAX_SECONDS: f64 = 5.0;
const C2_CLOSED_FORM_TOL: f64 = 1e-9;
const C3_ROUND_TRIP_TOL: f64 = 1e-9;
const C4_NOISE_SD: f64 = 0.05;
const C4_REPLICATIONS: usize = 1000;
const C4_MAX_REL_GAP: f64 = 0.20;
const C5_MAX_CORPUS_BYTES: usize = 64 * 1024;
const C5_BENCH_BYTES: usize = 100 << 20;
const C5_MIN_MIB_PER_S: f64 = 10.0;
const C6_RANDOM_STRINGS: usize = 10_000;
const C7_MAX_REL_ERROR: f64 = 1e-4;
const C8_DOUBLING_TOL: f64 = 1e-9;
const C9_PARTITION_TOL: f64 = 1e-9;
const C9_P_VALUE_TOL: f64 = 1e-8;
const C10_MIN_SEEDS: usize = 4;
const C10_MAX_SECONDS: f64 = 30.0 * 60.0;

fn verdict(criterion: usize, pass: bool, detail: impl Display) {
    let line = format!("criterion {criterion:>2}: {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    // straight to the handle so the line shows even when output is captured
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(pass, "{}", line.trim_end());
}

fn free_fit(a: f64, b: f64, c: f64) -> PowerLawFit {
    PowerLawFit {
        a,
        b,
        c,
        tier: Tier::Free,
        anchored_at: None,
        sse: 0.0,
    }
}

fn curve(a: f64, b: f64, c: f64, xs: &[f64]) -> Vec<CurvePoint> {
    xs.iter().map(|&x| CurvePoint::new(x, -a * x.powf(-b) + c)).collect()
}

fn sse(points: &[CurvePoint], a: f64, b: f64, c: f64) -> f64 {
    points.iter().map(|p| (p.y - (-a * p.x.powf(-b) + c)).powi(2)).sum()
}

#[test]
fn criterion_01_power_law_recovery() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xs = [6.0, 7.0, 8.0, 9.0];
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut fits = Vec::new();
    let mut all_free = true;
    for _ in 0..50 {
        let (a, b, c) = (rng.gen_range(1.0..10.0), rng.gen_range(0.1..1.0), rng.gen_range(0.0..5.0));
        let pts = curve(a, b, c, &xs);
        let fit = fit_power_law(&pts, None).unwrap();
        all_free &= fit.tier == Tier::Free;
        for (got, want) in [(fit.a, a), (fit.b, b), (fit.c, c)] {
            worst = worst.max((got - want).abs() / want.abs());
        }
        fits.push((pts, fit));
    }
    let seconds = start.elapsed().as_secs_f64();

    // grid oracle: no (a, b) on a dense grid, with c at its least-squares
    // value, fits better than the solver
    let mut beaten = 0;
    for (pts, fit) in &fits {
        let mut best = f64::INFINITY;
        for i in 0..=300 {
            for j in 0..=300 {
                let (a, b) = (0.5 + 10.0 * i as f64 / 300.0, 0.05 + 1.0 * j as f64 / 300.0);
                let c = pts.iter().map(|p| p.y + a * p.x.powf(-b)).sum::<f64>() / pts.len() as f64;
                best = best.min(sse(pts, a, b, c));
            }
        }
        if fit.sse > best + 1e-12 {
            beaten += 1;
        }
    }
    let pass = worst < C1_MAX_REL_ERROR && all_free && seconds < C1_MAX_SECONDS && beaten == 0;
    verdict(
        1,
        pass,
        format!("max rel error {worst:.2e}, all free {all_free}, {seconds:.2}s, grid beat solver {beaten}/50"),
    );
}

fn priors() -> PriorSet {
    PriorSet {
        median_a: 5.0,
        median_b: 0.4,
        median_c: 2.0,
        sd_a: 1.0,
        sd_b: 0.1,
        sd_c: 0.5,
        n_source_languages: 10,
    }
}

#[test]
fn criterion_02_cascade_conformance() {
    let p = priors();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut two_point_ok = true;
    let mut tiers = BTreeSet::new();
    for _ in 0..20 {
        let (a, b, c) = (rng.gen_range(3.0..8.0), rng.gen_range(0.2..0.7), rng.gen_range(1.0..3.0));
        let x0 = rng.gen_range(5.0..8.0);
        let fit = fit_power_law(&curve(a, b, c, &[x0, x0 + 1.5]), Some(&p)).unwrap();
        two_point_ok &= matches!(fit.tier, Tier::Sd2_5 | Tier::Sd5 | Tier::Sd7_5 | Tier::Sd10 | Tier::FixA);
        tiers.insert(fit.tier.as_str());
    }
    let mut worst: f64 = 0.0;
    let mut one_point_ok = true;
    for _ in 0..20 {
        let (x, y) = (rng.gen_range(5.0..10.0), rng.gen_range(-2.0..2.0));
        let fit = fit_power_law(&[CurvePoint::new(x, y)], Some(&p)).unwrap();
        one_point_ok &= fit.tier == Tier::FixAb && fit.a == p.median_a && fit.b == p.median_b;
        worst = worst.max((fit.c - (y + p.median_a * x.powf(-p.median_b))).abs());
    }
    let pass = two_point_ok && one_point_ok && worst < C2_CLOSED_FORM_TOL;
    verdict(
        2,
        pass,
        format!("2-point tiers {tiers:?}, 1-point fix_ab {one_point_ok}, closed-form c error {worst:.1e}"),
    );
}

#[test]
fn criterion_03_inversion() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let (mut iff_ok, mut monotone) = (true, true);
    for _ in 0..1000 {
        let fit = free_fit(rng.gen_range(1.0..10.0), rng.gen_range(0.1..1.0), rng.gen_range(0.0..5.0));
        let x = rng.gen_range(5.0..10.0);
        worst = worst.max((estimate_tokens(&fit, fit.predict(x)).unwrap() - x).abs());

        for y in [fit.c, fit.c + 1e-12, fit.c + rng.gen_range(0.0..3.0), fit.c - 1e-6, fit.c - 5.0] {
            let above = matches!(estimate_tokens(&fit, y), Err(ScalingError::AboveAsymptote { .. }));
            iff_ok &= above == (y >= fit.c);
        }

        let mut ys: Vec<f64> = (0..20).map(|_| fit.c - rng.gen_range(1e-3..5.0)).collect();
        ys.sort_by(f64::total_cmp);
        ys.dedup();
        let est: Vec<f64> = ys.iter().map(|&y| estimate_tokens(&fit, y).unwrap()).collect();
        monotone &= est.windows(2).all(|w| w[0] < w[1]);
    }
    let pass = worst < C3_ROUND_TRIP_TOL && iff_ok && monotone;
    verdict(
        3,
        pass,
        format!("round-trip error {worst:.1e}, AboveAsymptote iff y >= c {iff_ok}, strictly monotone {monotone}"),
    );
}

/// Per-language (a, b, c) for the estimator family: curves with similar
/// shapes, as if from related languages.
fn estimator_family() -> Vec<(LanguageId, (f64, f64, f64))> {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    (0..20)
        .map(|i| {
            let lang = LanguageId::new(&format!("q{}{}", (b'a' + i / 10) as char, (b'a' + i % 10) as char), "Latn")
                .unwrap();
            (lang, (rng.gen_range(4.0..6.0), rng.gen_range(0.3..0.5), rng.gen_range(1.5..2.5)))
        })
        .collect()
}

fn noisy_family(
    family: &[(LanguageId, (f64, f64, f64))],
    rng: &mut ChaCha8Rng,
) -> BTreeMap<LanguageId, Vec<CurvePoint>> {
    let noise = Normal::new(0.0, C4_NOISE_SD).unwrap();
    family
        .iter()
        .map(|(lang, (a, b, c))| {
            let pts = curve(*a, *b, *c, &[6.0, 7.0, 8.0, 9.0])
                .into_iter()
                .map(|p| CurvePoint::new(p.x, p.y + noise.sample(rng)))
                .collect();
            (lang.clone(), pts)
        })
        .collect()
}

/// Leave-one-out squared errors, written out step by step: priors from the
/// other languages' 4-point free fits, a cascade fit on the remaining
/// points, then inversion of the held-out score.
fn loo_squared_errors(points: &BTreeMap<LanguageId, Vec<CurvePoint>>) -> Vec<f64> {
    let mut full = BTreeMap::new();
    for (lang, pts) in points {
        if let Ok(f) = fit_power_law(pts, None) {
            if f.tier == Tier::Free {
                full.insert(lang.clone(), f);
            }
        }
    }
    let mut out = Vec::new();
    for (lang, pts) in points {
        let others: Vec<PowerLawFit> = full.iter().filter(|(l, _)| *l != lang).map(|(_, f)| f.clone()).collect();
        let priors = compute_priors(&others).ok();
        for h in 0..pts.len() {
            let rest: Vec<CurvePoint> = (0..pts.len()).filter(|&i| i != h).map(|i| pts[i]).collect();
            let fit = fit_power_law(&rest, priors.as_ref()).unwrap();
            if let Ok(x) = estimate_tokens(&fit, pts[h].y) {
                out.push((x - pts[h].x).powi(2));
            }
        }
    }
    out
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    (v[(n - 1) / 2] + v[n / 2]) / 2.0
}

#[test]
fn criterion_04_estimator_harness() {
    let family = estimator_family();
    let start = Instant::now();

    // Held-out errors are heavy-tailed: scores near a fitted asymptote
    // invert to huge token counts, and a handful of them dominates any
    // pooled mean. Both sides therefore use the median per-draw RMSE.
    let mut harness_rng = ChaCha8Rng::seed_from_u64(4);
    let harness: Vec<f64> = (0..C4_REPLICATIONS)
        .map(|_| {
            evaluate_estimator(&noisy_family(&family, &mut harness_rng), HoldoutPolicy::LeaveOneOut)
                .unwrap()
                .rmse
        })
        .collect();

    // oracle: the held-out loop written out in the test, on its own draws
    let mut oracle_rng = ChaCha8Rng::seed_from_u64(44);
    let (mut per_draw, mut total, mut n) = (Vec::new(), 0.0, 0usize);
    for _ in 0..C4_REPLICATIONS {
        let errs = loo_squared_errors(&noisy_family(&family, &mut oracle_rng));
        per_draw.push((errs.iter().sum::<f64>() / errs.len() as f64).sqrt());
        total += errs.iter().sum::<f64>();
        n += errs.len();
    }
    let single = harness[0];
    let (harness, oracle) = (median(harness), median(per_draw));
    let gap = (harness - oracle).abs() / oracle;
    verdict(
        4,
        gap < C4_MAX_REL_GAP,
        format!(
            "median RMSE harness {harness:.4} vs oracle {oracle:.4} over {C4_REPLICATIONS} draws each, gap {:.1}%; \
             first draw {single:.4}, pooled oracle {:.4} ({:.0}s); full-scale reference values 0.340/0.317/0.335 \
             are not reproducible here",
            100.0 * gap,
            (total / n as f64).sqrt(),
            start.elapsed().as_secs_f64()
        ),
    );
}

/// Every `t`-byte window inside a line, checked for a second occurrence.
fn has_repeat(lines: &[String], t: usize) -> bool {
    let mut seen = HashSet::new();
    for line in lines {
        let b = line.as_bytes();
        for w in b.windows(t) {
            if !seen.insert(w) {
                return true;
            }
        }
    }
    false
}

fn random_text(rng: &mut ChaCha8Rng, len: std::ops::Range<usize>) -> String {
    let len = rng.gen_range(len);
    const PIECES: [&str; 12] = ["a", "b", "c", "d", "e", " ", "é", "ж", "中", "😀", "ab", "the "];
    let mut s = String::new();
    while s.len() < len {
        s.push_str(PIECES[rng.gen_range(0..PIECES.len())]);
    }
    s
}

fn planted_corpus(rng: &mut ChaCha8Rng, t: usize) -> Corpus {
    let mut lines: Vec<String> = Vec::new();
    let mut bytes = 0;
    let budget = rng.gen_range(C5_MAX_CORPUS_BYTES / 4..C5_MAX_CORPUS_BYTES - 2048);
    while bytes < budget {
        let mut line = random_text(rng, 10..600);
        if !lines.is_empty() && rng.gen_bool(0.3) {
            // plant a copy of a long stretch of an earlier line
            let src = &lines[rng.gen_range(0..lines.len())];
            let chars: Vec<char> = src.chars().collect();
            let from = rng.gen_range(0..chars.len());
            let take = rng.gen_range(t..3 * t).min(chars.len() - from);
            let piece: String = chars[from..from + take].iter().collect();
            let at = line.char_indices().map(|(i, _)| i).nth(rng.gen_range(0..line.chars().count())).unwrap_or(0);
            line.insert_str(at, &piece);
        }
        bytes += line.len() + 1;
        lines.push(line);
    }
    Corpus::new(LanguageId::new("qaa", "Latn").unwrap(), lines, "planted").unwrap()
}

#[test]
fn criterion_05_dedup() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut sound, mut idempotent, mut planted_seen) = (true, true, 0);
    for i in 0..16 {
        let t = [16, 32, 100][i % 3];
        let corpus = planted_corpus(&mut rng, t);
        planted_seen += has_repeat(corpus.lines(), t) as usize;
        let once = dedup_sequences(&corpus, t).unwrap();
        sound &= !has_repeat(once.lines(), t);
        idempotent &= dedup_sequences(&once, t).unwrap().lines() == once.lines();
    }

    // throughput on a large word-salad corpus with duplicated documents
    let words: Vec<String> = (0..20_000).map(|_| random_text(&mut rng, 2..9).replace(' ', "")).collect();
    let mut lines: Vec<String> = Vec::new();
    let mut bytes = 0;
    while bytes < C5_BENCH_BYTES {
        let line = if lines.len() > 100 && rng.gen_bool(0.05) {
            lines[rng.gen_range(0..lines.len())].clone()
        } else {
            let n = rng.gen_range(10..60);
            (0..n).map(|_| words[rng.gen_range(0..words.len())].as_str()).collect::<Vec<_>>().join(" ")
        };
        bytes += line.len() + 1;
        lines.push(line);
    }
    let big = Corpus::new(LanguageId::new("qaa", "Latn").unwrap(), lines, "bench").unwrap();
    let start = Instant::now();
    let out = dedup_sequences(&big, lingolab::corpus::DEFAULT_MIN_BYTES).unwrap();
    let mib_s = big.byte_len() as f64 / (1 << 20) as f64 / start.elapsed().as_secs_f64();
    drop(out);

    let pass = sound && idempotent && planted_seen == 16 && mib_s >= C5_MIN_MIB_PER_S;
    verdict(
        5,
        pass,
        format!(
            "no repeats after dedup {sound}, idempotent {idempotent}, {planted_seen}/16 inputs had repeats, \
             {mib_s:.1} MiB/s on {} MiB",
            big.byte_len() >> 20
        ),
    );
}

fn random_unicode(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(0..40);
    (0..n)
        .map(|_| match rng.gen_range(0..10) {
            0..=4 => rng.gen_range(' '..='~'),
            5 => ['\n', '\t', ' ', '\r'][rng.gen_range(0..4)],
            6 => rng.gen_range('\u{00c0}'..='\u{04ff}'),
            7 => rng.gen_range('\u{4e00}'..='\u{9fff}'),
            8 => rng.gen_range('\u{1f300}'..='\u{1faff}'),
            _ => rng.gen::<char>(),
        })
        .collect()
}

#[test]
fn criterion_06_tokenizer_contracts() {
    let family = generate_family(&common::small_family(), 6).unwrap();
    let corpora: Vec<Corpus> = family
        .iter()
        .enumerate()
        .map(|(i, r)| generate_corpus(r.language.clone(), &r.genome, 20_000, i as u64).unwrap())
        .collect();
    let target = train_tokenizer(&sample_lines(&corpora[0], 3_000, 0), 600).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut round_trip = 0;
    for _ in 0..C6_RANDOM_STRINGS {
        let s = random_unicode(&mut rng);
        round_trip += (target.decode(&target.encode(&s)) == s) as usize;
    }

    let samples: BTreeMap<LanguageId, Vec<String>> =
        corpora[1..].iter().map(|c| (c.language().clone(), sample_lines(c, 2_000, 0))).collect();
    let added = train_multilingual_tokenizer(&samples, 800).unwrap();
    let merged = merge_tokenizers(&target, &added);
    let identical = corpora[0].lines().iter().all(|l| encode_routed(&merged, l, true) == target.encode(l));
    let ids_kept = (0..target.num_ids() as u32).all(|id| merged.token_bytes(id) == target.token_bytes(id));
    let expected = target.vocab_size() + added.vocab_size() - vocab_overlap(&target, &added);
    let size_ok = merged.merged_vocab_size() == expected;

    let pass = round_trip == C6_RANDOM_STRINGS && identical && ids_kept && size_ok;
    verdict(
        6,
        pass,
        format!(
            "round trips {round_trip}/{C6_RANDOM_STRINGS}, target encoding identical {identical}, \
             target ids kept {ids_kept}, merged size {} vs {expected}",
            merged.merged_vocab_size()
        ),
    );
}

#[test]
fn criterion_07_gradient_check() {
    let config = ModelConfig::preset("micro", 40, 12).unwrap();
    let report = gradient_check(&config, 7, C7_MAX_REL_ERROR);

    let m = Transformer::<f64>::new(ModelConfig { dropout: 0.0, ..config }, 8).unwrap();
    let v = 40;
    let ids: Vec<u32> = (0..12).map(|i| (i * 7 % v) as u32).collect();
    let base = m.logits(&ids).unwrap();
    let mut causal = true;
    for pos in 0..ids.len() {
        let mut perturbed = ids.clone();
        perturbed[pos] = (perturbed[pos] + 13) % v as u32;
        let out = m.logits(&perturbed).unwrap();
        causal &= base[..pos * v] == out[..pos * v] && base[pos * v..] != out[pos * v..];
    }
    let pass = report.passed && report.max_rel_error < C7_MAX_REL_ERROR && causal;
    verdict(
        7,
        pass,
        format!(
            "max rel error {:.2e} over {} entries (worst {}), causal {causal}",
            report.max_rel_error, report.checked, report.worst_tensor
        ),
    );
}

/// Uniform over the first `support` ids.
struct Flat {
    support: usize,
}

impl LanguageModel for Flat {
    fn context_len(&self) -> usize {
        64
    }

    fn score_window(&self, window: &[u32]) -> Vec<f64> {
        window
            .iter()
            .map(|&t| if (t as usize) < self.support { -(self.support as f64).log2() } else { f64::NEG_INFINITY })
            .collect()
    }
}

#[test]
fn criterion_08_relative_ll() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let tokens: Vec<u32> = (0..5_000).map(|_| rng.gen_range(0..8)).collect();
    let uniform = evaluate(&Flat { support: 16 }, &tokens, "v16").unwrap();
    // the same tokens with every probability doubled
    let doubled = evaluate(&Flat { support: 8 }, &tokens, "v16").unwrap();
    let self_cmp = relative_ll(&uniform, &uniform).unwrap().value;
    let gain = relative_ll(&doubled, &uniform).unwrap().value;

    let mut antisymmetric = true;
    for i in 0..200 {
        let e = |bits: f64| EvalResult {
            mean_log2_prob: bits,
            token_count: 1000,
            tokenizer_id: "t".into(),
        };
        let (x, y) = (e(-rng.gen_range(0.0..20.0)), e(-rng.gen_range(0.0..20.0) - i as f64 * 1e-3));
        antisymmetric &= relative_ll(&x, &y).unwrap().value == -relative_ll(&y, &x).unwrap().value;
    }
    let pass = self_cmp == 0.0 && (gain - 1.0).abs() < C8_DOUBLING_TOL && antisymmetric;
    verdict(
        8,
        pass,
        format!("self {self_cmp}, doubled {gain:.12}, antisymmetric {antisymmetric}"),
    );
}

/// Full-rank least squares with an intercept by Gauss-Jordan elimination on
/// the normal equations; returns R^2.
fn ols_r2(y: &[f64], cols: &[&[f64]]) -> f64 {
    let n = y.len();
    let k = cols.len() + 1;
    let row = |i: usize| -> Vec<f64> { std::iter::once(1.0).chain(cols.iter().map(|c| c[i])).collect() };
    let mut m = vec![vec![0.0; k + 1]; k];
    for i in 0..n {
        let r = row(i);
        for p in 0..k {
            for q in 0..k {
                m[p][q] += r[p] * r[q];
            }
            m[p][k] += r[p] * y[i];
        }
    }
    for p in 0..k {
        let pivot = (p..k).max_by(|&a, &b| m[a][p].abs().total_cmp(&m[b][p].abs())).unwrap();
        m.swap(p, pivot);
        let d = m[p][p];
        for v in m[p].iter_mut() {
            *v /= d;
        }
        for q in 0..k {
            if q != p {
                let f = m[q][p];
                let pr = m[p].clone();
                for (v, pv) in m[q].iter_mut().zip(pr) {
                    *v -= f * pv;
                }
            }
        }
    }
    let beta: Vec<f64> = m.iter().map(|r| r[k]).collect();
    let mean = y.iter().sum::<f64>() / n as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for i in 0..n {
        let fit: f64 = row(i).iter().zip(&beta).map(|(a, b)| a * b).sum();
        ss_res += (y[i] - fit).powi(2);
        ss_tot += (y[i] - mean).powi(2);
    }
    1.0 - ss_res / ss_tot
}

/// Two-sided p by Simpson integration of the t density with integer `df`;
/// the normalizing constant uses exact half-integer gamma values.
fn simpson_p(t: f64, df: usize) -> f64 {
    fn gamma_half(n: usize) -> f64 {
        // Gamma(n / 2)
        if n % 2 == 0 {
            (1..n / 2).map(|k| k as f64).product()
        } else {
            let mut g = std::f64::consts::PI.sqrt();
            let mut x = 0.5;
            while x < n as f64 / 2.0 - 0.25 {
                g *= x;
                x += 1.0;
            }
            g
        }
    }
    let nu = df as f64;
    let norm = gamma_half(df + 1) / ((nu * std::f64::consts::PI).sqrt() * gamma_half(df));
    let f = |x: f64| norm * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0);
    let (a, b, n) = (0.0, t.abs(), 200_000);
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    1.0 - 2.0 * s * h / 3.0
}

#[test]
fn criterion_09_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut worst_sum, mut worst_fixture): (f64, f64) = (0.0, 0.0);
    for _ in 0..10 {
        let n = 30;
        let x: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        // correlated predictors so shared components are non-trivial
        let x2: Vec<f64> = x[0].iter().zip(&x[2]).map(|(a, b)| 0.6 * a + 0.4 * b).collect();
        let y: Vec<f64> =
            (0..n).map(|i| x[0][i] + 0.5 * x2[i] - 0.3 * x[1][i] + rng.gen_range(-0.5..0.5)).collect();
        let cols = [&x[0][..], &x[1][..], &x2[..]];
        let vp = variance_partition(&y, cols, ["a", "b", "c"]).unwrap();
        let total: f64 = vp.unique.iter().sum::<f64>() + vp.common.iter().map(|c| c.value).sum::<f64>();
        worst_sum = worst_sum.max((total - vp.r2_full).abs());

        let r = |idx: &[usize]| ols_r2(&y, &idx.iter().map(|&i| cols[i]).collect::<Vec<_>>());
        let (r1, r2, r3) = (r(&[0]), r(&[1]), r(&[2]));
        let (r12, r13, r23, r123) = (r(&[0, 1]), r(&[0, 2]), r(&[1, 2]), r(&[0, 1, 2]));
        let expected_unique = [r123 - r23, r123 - r13, r123 - r12];
        let expected_common = [
            r13 + r23 - r3 - r123,
            r12 + r23 - r2 - r123,
            r12 + r13 - r1 - r123,
            r1 + r2 + r3 - r12 - r13 - r23 + r123,
        ];
        let got_common: BTreeMap<&str, f64> = vp.common.iter().map(|c| (c.name.as_str(), c.value)).collect();
        for (got, want) in vp.unique.iter().zip(expected_unique) {
            worst_fixture = worst_fixture.max((got - want).abs());
        }
        for (name, want) in ["common:a+b", "common:a+c", "common:b+c", "common:a+b+c"].iter().zip(expected_common) {
            worst_fixture = worst_fixture.max((got_common[name] - want).abs());
        }
        worst_fixture = worst_fixture.max((vp.r2_full - r123).abs());
    }

    let mut worst_p: f64 = 0.0;
    for n in [3usize, 5, 10, 25] {
        let diffs: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..1.5)).collect();
        let t = paired_t_test(&diffs).unwrap();
        worst_p = worst_p.max((t.p - simpson_p(t.t, n - 1)).abs());
    }

    let clamps = bonferroni(0.3, 5) == 1.0 && bonferroni(0.01, 3) == 0.03 && bonferroni(0.0, 10) == 0.0;
    let pass = worst_sum < C9_PARTITION_TOL && worst_fixture < C9_PARTITION_TOL && worst_p < C9_P_VALUE_TOL && clamps;
    verdict(
        9,
        pass,
        format!(
            "partition sum error {worst_sum:.1e}, OLS fixture error {worst_fixture:.1e}, \
             p-value error {worst_p:.1e}, Bonferroni clamps {clamps}"
        ),
    );
}

#[test]
fn criterion_10_directional_curse() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let family = generate_family(&FamilySpec::default(), 2024).unwrap();
    let corpus_dir = dir.path().join("corpora");
    std::fs::create_dir_all(&corpus_dir).unwrap();
    for (i, r) in family.iter().enumerate() {
        // the target needs room for the high budget plus the eval split
        let words = if i == 0 { 2_400_000 } else { 60_000 };
        let c = generate_corpus(r.language.clone(), &r.genome, words, 500 + i as u64).unwrap();
        c.write(&corpus_dir.join(format!("{}.txt", r.language))).unwrap();
    }
    write_feature_vectors(
        &dir.path().join("features.csv"),
        &lingolab::synthlang::family_feature_vectors(&family),
    )
    .unwrap();

    let mut spec = common::base_spec(dir.path(), &family);
    spec.multi_budgets = vec![0, 200_000];
    spec.k_added = 10;
    spec.model_presets = vec!["micro".into()];
    spec.seeds = (0..5).collect();
    spec.eval_size = 50_000;
    spec.omission = OmissionRule {
        enabled: false,
        ratio: 10,
    };
    // the output layer dominates micro's cost, so a 1000-token vocabulary
    spec.tokenizer = TokenizerSettings {
        max_vocab: 1000,
        sample_lines: 10_000,
    };
    spec.training = TrainingSettings {
        // small batches give the 20K runs enough updates to fit their data;
        // one pass over the high budget keeps the run inside the time limit
        batch_sequences: 4,
        epoch_policy: vec![(200_000, 20), (usize::MAX, 1)],
        ..TrainingSettings::default()
    };
    spec.baseline = Some(BaselineSpec {
        preset: "micro".into(),
        mono_tokens: 20_000,
        seeds: spec.seeds.clone(),
    });
    // the high budget is only compared against similar data
    let mut high = spec.clone();
    spec.mono_budgets = vec![20_000];
    high.mono_budgets = vec![2_000_000];
    high.conditions = vec![Condition::Similar];

    let store = ResultStore::open(&dir.path().join("results.jsonl")).unwrap();
    for s in [&spec, &high] {
        execute(s, &store, &ExecuteOptions::default()).unwrap();
    }
    let records = store.load().unwrap();
    let failures: Vec<&RunRecord> = records.iter().filter(|r| r.status != RunStatus::Ok).collect();
    assert!(failures.is_empty(), "{failures:?}");

    let rel = |mono: usize, multi: usize, cond: Condition, seed: u64| {
        records
            .iter()
            .find(|r| r.mono_tokens == mono && r.multi_tokens == multi && r.condition == cond && r.seed == seed)
            .and_then(|r| r.relative_ll)
            .unwrap()
    };
    let overlap = |cond: Condition| {
        let r = records.iter().find(|r| r.condition == cond).unwrap();
        let g = |l: &LanguageId| &family.iter().find(|f| &f.language == l).unwrap().genome;
        r.added_languages.iter().map(|l| genome_distance(&family[0].genome, g(l)).lexical_overlap).sum::<f64>()
            / r.added_languages.len() as f64
    };
    let (lo, hi, add) = (20_000, 2_000_000, 200_000);
    let (mut a, mut b, mut c) = (0, 0, 0);
    let mut rows = Vec::new();
    for seed in spec.seeds.clone() {
        let lo_mono = rel(lo, 0, Condition::Monolingual, seed);
        let lo_sim = rel(lo, add, Condition::Similar, seed);
        let lo_dis = rel(lo, add, Condition::Dissimilar, seed);
        let hi_mono = rel(hi, 0, Condition::Monolingual, seed);
        let hi_sim = rel(hi, add, Condition::Similar, seed);
        a += (lo_sim > lo_mono) as usize;
        b += (hi_sim < hi_mono) as usize;
        c += (lo_sim > lo_dis) as usize;
        rows.push(format!(
            "seed {seed}: low {lo_mono:+.3}/{lo_sim:+.3}/{lo_dis:+.3} high {hi_mono:+.3}/{hi_sim:+.3}"
        ));
    }
    let seconds = start.elapsed().as_secs_f64();
    for r in &rows {
        std::io::stderr().write_all(format!("  criterion 10 {r}\n").as_bytes()).unwrap();
    }
    let pass = a >= C10_MIN_SEEDS && b >= C10_MIN_SEEDS && c >= C10_MIN_SEEDS && seconds < C10_MAX_SECONDS;
    verdict(
        10,
        pass,
        format!(
            "(a) low+similar beats low mono in {a}/5 seeds, (b) high+similar below high mono in {b}/5, \
             (c) similar beats dissimilar at low budget in {c}/5; added overlap similar {:.2} dissimilar {:.2}; {:.0}s",
            overlap(Condition::Similar),
            overlap(Condition::Dissimilar),
            seconds
        ),
    );
}

#[test]
fn criterion_11_orchestration() {
    let dir = tempfile::tempdir().unwrap();
    let family = common::synth_workspace(dir.path(), &common::small_family(), 30_000, 11);
    let spec = common::base_spec(dir.path(), &family);
    let store = ResultStore::open(&dir.path().join("results.jsonl")).unwrap();
    let plan = plan_runs(&spec).unwrap();

    // interrupt mid-grid, leaving a half-written record behind
    execute(&spec, &store, &ExecuteOptions { jobs: 2, stop_after: Some(10) }).unwrap();
    let mut f = std::fs::OpenOptions::new().append(true).open(store.path()).unwrap();
    f.write_all(b"{\"schema_version\":1,\"run_id\":\"3a9").unwrap();
    drop(f);
    let partial = store.load().unwrap().len();
    let resumed = execute(&spec, &store, &ExecuteOptions::default()).unwrap();

    let records = store.load().unwrap();
    let ids: Vec<&str> = records.iter().map(|r| r.run_id.as_str()).collect();
    let unique: BTreeSet<&str> = ids.iter().copied().collect();
    let complete = unique == plan.iter().map(|r| r.run_id.as_str()).collect::<BTreeSet<_>>();
    let duplicates = ids.len() - unique.len();

    let rep = report(&spec, &records, None, None).unwrap();
    let worst = rep
        .references
        .iter()
        .map(|r| r.est_log10_tokens.map_or(f64::INFINITY, |e| (e - (r.mono_tokens as f64).log10()).abs()))
        .fold(0.0, f64::max);
    let pass = partial < plan.len() && resumed.completed == plan.len() - partial && complete && duplicates == 0
        && worst < 1e-9;
    verdict(
        11,
        pass,
        format!(
            "killed at {partial}/{} runs, resumed {}, duplicate ids {duplicates}, complete {complete}, \
             reference rows off their budgets by at most {worst:.1e}",
            plan.len(),
            resumed.completed
        ),
    );
}
