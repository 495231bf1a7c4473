//! Property suites behind the `verify` subcommand.
//!
//! Each suite draws its random instances from a fixed seed and checks the
//! implementation against an independent evaluation: finite differences,
//! brute-force replay, exhaustive ranking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hardness::{effective_number, nu, sigma, HardnessHyper};
use crate::linalg::{cosine_backward, dot, l2_normalize, EmbeddingBatch, Matrix, ProxySet};
use crate::losses::{
    normalized_softmax, proxy_anchor, proxy_isa, verify_proposition1, LossHyper, LossOutput, PairSide, PairWeights,
};
use crate::memory::MemoryQueue;
use crate::metrics::evaluate;

pub type SuiteResult = std::result::Result<String, String>;

pub struct Suite {
    pub name: &'static str,
    pub run: fn() -> SuiteResult,
}

pub const SUITES: &[Suite] = &[
    Suite { name: "proposition1", run: proposition1 },
    Suite { name: "gradients", run: gradients },
    Suite { name: "sigma-bounds", run: sigma_bounds },
    Suite { name: "queue-fifo", run: queue_fifo },
    Suite { name: "metrics-oracle", run: metrics_oracle },
];

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    l2_normalize(&v).unwrap_or_else(|_| {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        e
    })
}

fn proposition1() -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(0..30);
        let col: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hyper = LossHyper { alpha: rng.random_range(1.0..64.0), delta: rng.random_range(0.0..0.5) };
        for side in [PairSide::Positive, PairSide::Negative] {
            let (lhs, rhs) = verify_proposition1(&col, &hyper, side);
            worst = worst.max((lhs - rhs).abs());
        }
    }
    ensure(worst < 1e-9, || format!("max |lhs - rhs| = {worst:e}"))?;
    Ok(format!("2000 instances, max |lhs - rhs| = {worst:.2e}"))
}

fn random_instance(rng: &mut ChaCha8Rng, m: usize, c: usize) -> (Matrix, Vec<usize>) {
    let data = (0..m * c).map(|_| rng.random_range(-0.9..0.9)).collect();
    let labels = (0..m).map(|_| rng.random_range(0..c)).collect();
    (Matrix::from_vec(m, c, data).expect("sized"), labels)
}

/// Normwise relative error `max|g - fd| / max(max|g|, max|fd|)` of `∂L/∂S`
/// against central differences. Elementwise ratios are dominated by roundoff
/// on entries near zero, where the difference quotient carries ~1e-9 noise.
fn check_grad_s(f: impl Fn(&Matrix) -> LossOutput, s: &Matrix) -> f64 {
    let h = 1e-6;
    let out = f(s);
    let (mut diff, mut scale): (f64, f64) = (0.0, 0.0);
    for i in 0..s.rows() {
        for c in 0..s.cols() {
            let mut plus = s.clone();
            plus.add_at(i, c, h);
            let mut minus = s.clone();
            minus.add_at(i, c, -h);
            let fd = (f(&plus).value - f(&minus).value) / (2.0 * h);
            let g = out.grad_s.get(i, c);
            diff = diff.max((g - fd).abs());
            scale = scale.max(g.abs()).max(fd.abs());
        }
    }
    diff / scale.max(1e-12)
}

fn gradients() -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let hyper = LossHyper { alpha: 16.0, delta: 0.1 };
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (s, y) = random_instance(&mut rng, 6, 4);
        let mut w = PairWeights::ones(6, 4);
        for v in w.omega_pos.as_mut_slice().iter_mut().chain(w.omega_neg.as_mut_slice()) {
            *v = rng.random_range(0.1..2.0);
        }
        worst = worst.max(check_grad_s(|s| proxy_anchor(s, &y, &hyper).expect("valid"), &s));
        worst = worst.max(check_grad_s(|s| normalized_softmax(s, &y, 0.5).expect("valid"), &s));
        worst = worst.max(check_grad_s(|s| proxy_isa(s, &y, &w, &hyper).expect("valid"), &s));
    }
    ensure(worst < 1e-5, || format!("dL/dS max relative error {worst:e}"))?;

    let mut cos_worst: f64 = 0.0;
    for _ in 0..100 {
        let u: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (gu, _) = cosine_backward(&u, &v, 1.0).map_err(|e| e.to_string())?;
        let cos = |u: &[f64]| dot(u, &v) / (dot(u, u).sqrt() * dot(&v, &v).sqrt());
        for j in 0..8 {
            let mut p = u.clone();
            p[j] += 1e-6;
            let mut m = u.clone();
            m[j] -= 1e-6;
            cos_worst = cos_worst.max(rel_err(gu[j], (cos(&p) - cos(&m)) / 2e-6));
        }
        let tangent = dot(&gu, &u).abs();
        ensure(tangent < 1e-10, || format!("cosine gradient not tangent: {tangent:e}"))?;
    }
    ensure(cos_worst < 1e-5, || format!("cosine gradient max relative error {cos_worst:e}"))?;
    Ok(format!("dL/dS {worst:.2e}, cosine {cos_worst:.2e}"))
}

fn sigma_bounds() -> SuiteResult {
    for tau in [0.5, 1.5, 5.0] {
        let hyper = HardnessHyper { tau, ..HardnessHyper::default() };
        let v = hyper.volume_bound;
        let mut prev = f64::INFINITY;
        for k in 0..=10_000 {
            let e = v * k as f64 / 10_000.0;
            let s = sigma(e, &hyper);
            ensure(nu(e) <= s && s <= 1.0, || format!("sigma({e}) = {s} outside [nu, 1] at tau={tau}"))?;
            ensure(s <= prev, || format!("sigma increases at E={e}, tau={tau}"))?;
            prev = s;
        }
        ensure(sigma(v, &hyper) == nu(v), || format!("sigma(V) != nu(V) at tau={tau}"))?;
    }
    let hyper = HardnessHyper::default();
    ensure(effective_number(459, &hyper) >= 0.99 * hyper.volume_bound, || "E_459 below 0.99 V".into())?;
    Ok("sigma in [nu, 1], non-increasing, sigma(V) = nu(V) for tau in {0.5, 1.5, 5}".into())
}

fn queue_fifo() -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (classes, dim, capacity) = (5, 4, 17);
    let proxies = ProxySet::new(
        Matrix::from_rows(&(0..classes).map(|_| random_unit(&mut rng, dim)).collect::<Vec<_>>()).expect("rows"),
    )
    .map_err(|e| e.to_string())?;
    let mut queue = MemoryQueue::new(capacity);
    let mut replay: Vec<(Vec<f64>, usize)> = Vec::new();
    for op in 0..1000 {
        let m = rng.random_range(1..6);
        let rows: Vec<Vec<f64>> = (0..m).map(|_| random_unit(&mut rng, dim)).collect();
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..classes)).collect();
        let mask: Vec<bool> = (0..m).map(|_| rng.random_bool(0.3)).collect();
        let batch = EmbeddingBatch::new(Matrix::from_rows(&rows).expect("rows"), labels.clone(), classes)
            .map_err(|e| e.to_string())?;
        queue.enqueue_clean(&batch, &mask).map_err(|e| e.to_string())?;
        for k in 0..m {
            if !mask[k] {
                replay.push((rows[k].clone(), labels[k]));
            }
        }
        let start = replay.len().saturating_sub(capacity);
        let expected = &replay[start..];
        let stored: Vec<(&[f64], usize)> = queue.entries().map(|e| (e.embedding.as_slice(), e.label)).collect();
        ensure(stored.len() == expected.len(), || format!("op {op}: length {} vs {}", stored.len(), expected.len()))?;
        for (a, b) in stored.iter().zip(expected) {
            ensure(a.0 == b.0.as_slice() && a.1 == b.1, || format!("op {op}: order differs from replay"))?;
        }
        for c in 0..classes {
            let members: Vec<&Vec<f64>> = expected.iter().filter(|e| e.1 == c).map(|e| &e.0).collect();
            ensure(queue.class_count(c) == members.len(), || format!("op {op}: count of class {c}"))?;
            let mean = queue.class_mean_similarity(&proxies, c).map_err(|e| e.to_string())?;
            let p = proxies.unit(c).map_err(|e| e.to_string())?;
            let oracle =
                (!members.is_empty()).then(|| members.iter().map(|v| dot(v, &p)).sum::<f64>() / members.len() as f64);
            let ok = match (mean, oracle) {
                (None, None) => true,
                (Some(a), Some(b)) => (a - b).abs() < 1e-12,
                _ => false,
            };
            ensure(ok, || format!("op {op}: mean of class {c} {mean:?} vs {oracle:?}"))?;
        }
    }
    Ok("1000 random enqueue/evict operations match replay".into())
}

fn brute_force_metrics(emb: &Matrix, labels: &[usize], k: usize) -> (f64, f64) {
    let n = labels.len();
    let (mut hits, mut map) = (0usize, 0.0);
    for q in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != q).collect();
        // insertion sort: higher similarity first, lower index on ties
        for a in 1..others.len() {
            let mut b = a;
            while b > 0 {
                let (x, y) = (others[b - 1], others[b]);
                let (sx, sy) = (dot(emb.row(q), emb.row(x)), dot(emb.row(q), emb.row(y)));
                if sy > sx || (sy == sx && y < x) {
                    others.swap(b - 1, b);
                    b -= 1;
                } else {
                    break;
                }
            }
        }
        if others.iter().take(k).any(|&j| labels[j] == labels[q]) {
            hits += 1;
        }
        let r = labels.iter().filter(|&&y| y == labels[q]).count() - 1;
        let mut ap = 0.0;
        for i in 1..=r {
            if labels[others[i - 1]] == labels[q] {
                let precision = others[..i].iter().filter(|&&j| labels[j] == labels[q]).count() as f64 / i as f64;
                ap += precision;
            }
        }
        map += ap / r as f64;
    }
    (hits as f64 / n as f64, map / n as f64)
}

fn metrics_oracle() -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for inst in 0..50 {
        let n = 30;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| random_unit(&mut rng, 3)).collect();
        let emb = Matrix::from_rows(&rows).expect("rows");
        // every class gets at least two members
        let labels: Vec<usize> = (0..n).map(|i| if i < 10 { i / 2 } else { rng.random_range(0..5) }).collect();
        for k in [1, 2, 4] {
            let m = evaluate(&emb, &labels, &[k], true).map_err(|e| e.to_string())?;
            let (recall, map) = brute_force_metrics(&emb, &labels, k);
            let got = m.recall_at(k).unwrap_or(f64::NAN);
            ensure((got - recall).abs() < 1e-12, || format!("instance {inst}: Recall@{k} {got} vs {recall}"))?;
            let got_map = m.map_at_r.unwrap_or(f64::NAN);
            ensure((got_map - map).abs() < 1e-12, || format!("instance {inst}: MAP@R {got_map} vs {map}"))?;
        }
    }
    Ok("50 random 30-point instances match exhaustive ranking".into())
}

/// Runs the named suites (all when `filter` is `None`); returns
/// `(name, outcome)` per suite.
pub fn run_suites(filter: Option<&str>) -> Vec<(&'static str, SuiteResult)> {
    SUITES.iter().filter(|s| filter.is_none_or(|f| f == s.name)).map(|s| (s.name, (s.run)())).collect()
}
