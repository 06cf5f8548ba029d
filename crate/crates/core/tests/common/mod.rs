//! Independent reference computations shared by the integration tests and
//! the acceptance runner.

#![allow(dead_code)]

use edge_rrm::channel::{draw_fade, transmit_once, MrcState, NoiseModel};
use edge_rrm::federated::{
    global_loss, local_gradient, local_loss, run_federated, Aggregation, FederatedConfig,
    ImportanceMetric, LogisticShard,
};
use edge_rrm::rng::RngStreams;
use edge_rrm::scheduling::expected_distance_oracle;
use edge_rrm::svm::{hamming_decode, train_binary, CodingMatrix, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}

pub fn describe(checks: &[Check]) -> String {
    checks
        .iter()
        .map(|c| format!("{}{}: {}", if c.pass { "" } else { "FAIL " }, c.name, c.detail))
        .collect::<Vec<_>>()
        .join("; ")
}

// ---------------------------------------------------------------------------
// SVM instances and the subgradient reference solver

pub struct SvmInstance {
    pub name: String,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<i32>,
    pub c: f64,
}

fn gaussian_blobs(rng: &mut ChaCha8Rng, n: usize, d: usize, sep: f64, spread: f64) -> (Vec<Vec<f64>>, Vec<i32>) {
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let y = if i % 2 == 0 { 1 } else { -1 };
        let x = (0..d)
            .map(|k| {
                let z: f64 = StandardNormal.sample(rng);
                let centre = if k == 0 { sep * y as f64 } else { 0.0 };
                centre + 0.3 * k as f64 + spread * z
            })
            .collect();
        xs.push(x);
        ys.push(y);
    }
    (xs, ys)
}

/// Small binary problems: the 20-point planar set plus seeded random
/// instances with up to 50 samples, separable and overlapping.
pub fn svm_corpus() -> Vec<SvmInstance> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (xs, ys) = gaussian_blobs(&mut rng, 20, 2, 1.5, 0.8);
    out.push(SvmInstance {
        name: "planar20".into(),
        xs,
        ys,
        c: 1.0,
    });
    let shapes = [
        (6, 2, 2.0, 0.3, 10.0),
        (12, 3, 1.0, 1.0, 0.5),
        (20, 4, 0.5, 1.0, 1.0),
        (30, 2, 0.8, 0.6, 2.0),
        (40, 5, 1.0, 1.2, 0.1),
        (50, 3, 0.3, 1.0, 1.0),
        (50, 8, 1.2, 0.7, 5.0),
    ];
    for (k, &(n, d, sep, spread, c)) in shapes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + k as u64);
        let (xs, ys) = gaussian_blobs(&mut rng, n, d, sep, spread);
        out.push(SvmInstance {
            name: format!("blobs{n}x{d}_c{c}"),
            xs,
            ys,
            c,
        });
    }
    out
}

/// `0.5 |w|^2 + c * sum max(0, 1 - y (w . x + b))`, bias unregularized.
pub fn primal_objective(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[i32], c: f64) -> f64 {
    let reg: f64 = w.iter().map(|v| v * v).sum::<f64>() * 0.5;
    let hinge: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let f: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
            (1.0 - y as f64 * f).max(0.0)
        })
        .sum();
    reg + c * hinge
}

/// Best objective reached by plain subgradient descent with diminishing
/// steps, restarted from the best iterate with a smaller step a few times.
pub fn subgradient_reference(xs: &[Vec<f64>], ys: &[i32], c: f64) -> f64 {
    let d = xs[0].len();
    let n = xs.len() as f64;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut best = primal_objective(&w, b, xs, ys, c);
    let mut best_w = w.clone();
    let mut best_b = b;
    let mut eta0 = 1.0 / (1.0 + c * n);
    for _stage in 0..10 {
        w.clone_from(&best_w);
        b = best_b;
        for t in 1..=100_000 {
            let mut gw = w.clone();
            let mut gb = 0.0;
            for (x, &y) in xs.iter().zip(ys) {
                let f: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
                if y as f64 * f < 1.0 {
                    for (g, xi) in gw.iter_mut().zip(x) {
                        *g -= c * y as f64 * xi;
                    }
                    gb -= c * y as f64;
                }
            }
            let eta = eta0 / (t as f64).sqrt();
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= eta * g;
            }
            b -= eta * gb;
            let obj = primal_objective(&w, b, xs, ys, c);
            if obj < best {
                best = obj;
                best_w.clone_from(&w);
                best_b = b;
            }
        }
        eta0 *= 0.5;
    }
    best
}

/// Relative gap between the trainer's objective and the reference on each instance.
pub fn svm_objective_checks() -> Vec<Check> {
    svm_corpus()
        .into_iter()
        .map(|inst| {
            let cfg = TrainConfig {
                c: inst.c,
                tol: 1e-8,
                max_passes: 100_000,
                ..TrainConfig::default()
            };
            let model = train_binary(
                inst.xs.iter().map(|x| x.as_slice()).zip(inst.ys.iter().copied()),
                &cfg,
                7,
            )
            .expect("trainable instance");
            let ours = primal_objective(model.weights(), model.bias(), &inst.xs, &inst.ys, inst.c);
            let reference = subgradient_reference(&inst.xs, &inst.ys, inst.c);
            let gap = (ours - reference).abs() / reference;
            Check::new(
                format!("svm objective {}", inst.name),
                gap <= 0.01,
                format!("trainer {ours:.6}, reference {reference:.6}, rel gap {gap:.2e}"),
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Multiclass decoding

/// Decodes by building every one-vs-one codeword from scratch and taking the
/// nearest one; the lowest class wins ties.
pub fn exhaustive_decode(classes: usize, scores: &[f64]) -> usize {
    let mut columns = Vec::new();
    for i in 0..classes {
        for j in i + 1..classes {
            columns.push((i, j));
        }
    }
    let mut best = (f64::INFINITY, 0);
    for r in 0..classes {
        let mut dist = 0.0;
        for (l, &(i, j)) in columns.iter().enumerate() {
            let m = if r == i { 1.0 } else if r == j { -1.0 } else { 0.0 };
            dist += if m == 0.0 || scores[l] == 0.0 {
                0.5
            } else if m * scores[l] > 0.0 {
                0.0
            } else {
                1.0
            };
        }
        if dist < best.0 {
            best = (dist, r);
        }
    }
    best.1
}

/// Every pattern in `{-1, 0, +1}^L` for `C = 2, 3, 4`.
pub fn decode_checks() -> Vec<Check> {
    (2..=4)
        .map(|classes| {
            let coding = CodingMatrix::one_vs_one(classes);
            let l = coding.components();
            let total = 3usize.pow(l as u32);
            let mut mismatches = 0;
            for code in 0..total {
                let mut rest = code;
                let scores: Vec<f64> = (0..l)
                    .map(|_| {
                        let v = (rest % 3) as f64 - 1.0;
                        rest /= 3;
                        v
                    })
                    .collect();
                if hamming_decode(&coding, &scores) != exhaustive_decode(classes, &scores) {
                    mismatches += 1;
                }
            }
            Check::new(
                format!("decode C={classes}"),
                mismatches == 0,
                format!("{mismatches} mismatches over {total} patterns"),
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Channel

/// Folded-Gaussian mean against a 10^6-draw Monte-Carlo average.
pub fn folded_gaussian_checks() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    [(0.0, 1.0), (0.5, 1.0), (2.0, 0.5), (-1.0, 2.0)]
        .into_iter()
        .map(|(d, sigma)| {
            let draws = 1_000_000;
            let mut acc = 0.0;
            for _ in 0..draws {
                let z: f64 = StandardNormal.sample(&mut rng);
                acc += (d + sigma * z).abs();
            }
            let mc = acc / draws as f64;
            let exact = expected_distance_oracle(d, sigma);
            let rel = (exact - mc).abs() / mc;
            Check::new(
                format!("folded mean d={d} sigma={sigma}"),
                rel <= 0.01,
                format!("closed form {exact:.5}, monte carlo {mc:.5}, rel {rel:.2e}"),
            )
        })
        .collect()
}

/// Per-dimension variance of the MRC output around the clean vector against
/// `P / effective_snr`, over 10^5 trials of three faded copies each.
pub fn mrc_variance_checks() -> Vec<Check> {
    let power = 0.1;
    let noise = NoiseModel::new(power).unwrap();
    let x = [0.3f64, -0.2, 0.1, 0.4];
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    [1.0, 10.0]
        .into_iter()
        .map(|transmit_snr| {
            let trials = 100_000;
            // Normalizing each error by its own predicted variance gives
            // unit variance when the prediction holds.
            let mut acc = 0.0;
            let mut count = 0usize;
            for _ in 0..trials {
                let mut state = MrcState::new(x.len());
                for _ in 0..3 {
                    let draw = draw_fade(transmit_snr, &mut rng);
                    let obs = transmit_once(&x, &draw, &noise, &mut rng);
                    state.combine(&obs, draw.receive_snr).unwrap();
                }
                let predicted = power / state.effective_snr();
                let combined = state.combined().unwrap();
                for (c, clean) in combined.iter().zip(&x) {
                    acc += (c - clean).powi(2) / predicted;
                    count += 1;
                }
            }
            let ratio = acc / count as f64;
            Check::new(
                format!("mrc variance snr={transmit_snr}"),
                (ratio - 1.0).abs() <= 0.02,
                format!("measured/predicted {ratio:.4}"),
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Federated

pub fn logistic_shards(devices: usize, per_device: usize, dim: usize, seed: u64) -> Vec<LogisticShard<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..devices)
        .map(|k| {
            let mut s = LogisticShard::new(dim);
            for i in 0..per_device {
                let y = if (i + k) % 2 == 0 { 1 } else { -1 };
                let x: Vec<f64> = (0..dim)
                    .map(|j| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        let shift = if j == 0 { 0.8 * y as f64 } else { 0.1 * k as f64 };
                        shift + z
                    })
                    .collect();
                s.push(&x, y).unwrap();
            }
            s
        })
        .collect()
}

/// Central-difference gradient check at random points, relative error.
pub fn finite_difference_checks() -> Vec<Check> {
    let shards = logistic_shards(3, 15, 4, 51);
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    shards
        .iter()
        .enumerate()
        .map(|(k, shard)| {
            let w: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let l2 = 0.05;
            let g = local_gradient(&w, shard, l2).unwrap();
            let h = 1e-6;
            let mut worst: f64 = 0.0;
            for i in 0..w.len() {
                let mut up = w.clone();
                let mut down = w.clone();
                up[i] += h;
                down[i] -= h;
                let fd = (local_loss(&up, shard, l2).unwrap() - local_loss(&down, shard, l2).unwrap())
                    / (2.0 * h);
                let rel = (fd - g[i]).abs() / g[i].abs().max(1e-8);
                worst = worst.max(rel);
            }
            Check::new(
                format!("gradient shard {k}"),
                worst <= 1e-5,
                format!("worst relative error {worst:.2e}"),
            )
        })
        .collect()
}

pub fn oracle_checks() -> Vec<Check> {
    let mut out = svm_objective_checks();
    out.extend(decode_checks());
    out.extend(folded_gaussian_checks());
    out.extend(mrc_variance_checks());
    out.extend(finite_difference_checks());
    out
}

fn fed_cfg(metric: ImportanceMetric, scheduled: usize, rounds: usize, lr: f64) -> FederatedConfig<f64> {
    FederatedConfig {
        scheduled,
        rounds,
        learning_rate: lr,
        l2: 0.01,
        metric,
        aggregation: None,
        upload_snr: None,
    }
}

/// Full participation against plain gradient descent on the pooled data.
///
/// The step is rebuilt here from per-device gradients (equal shard sizes, so
/// their mean is the pooled full-batch gradient) and must match bit for bit.
/// A second reference takes the gradient on one merged shard; grouping the
/// sums differently moves the last bits, so that one is held to 1e-9.
pub fn federated_equivalence_checks() -> Vec<Check> {
    let shards = logistic_shards(6, 20, 4, 61);
    let cfg = fed_cfg(ImportanceMetric::GradientNorm, shards.len(), 30, 0.5);
    let (_, trace) = run_federated(&cfg, &shards, None, &RngStreams::new(1)).unwrap();

    let merged = shards.iter().fold(LogisticShard::new(4), merge);

    let mut w = vec![0.0; 5];
    let mut w_flat = vec![0.0; 5];
    let mut bitwise = true;
    let mut worst_flat: f64 = 0.0;
    for step in 0..cfg.rounds {
        let mut sum = vec![0.0; 5];
        for s in &shards {
            let g = local_gradient(&w, s, cfg.l2).unwrap();
            for (a, b) in sum.iter_mut().zip(&g) {
                *a += 1.0 * b;
            }
        }
        let inv = 1.0 / shards.len() as f64;
        for (wi, si) in w.iter_mut().zip(&sum) {
            *wi -= cfg.learning_rate * (si * inv);
        }
        let g_flat = local_gradient(&w_flat, &merged, cfg.l2).unwrap();
        for (wi, gi) in w_flat.iter_mut().zip(&g_flat) {
            *wi -= cfg.learning_rate * gi;
        }
        let fed = &trace.history[step + 1];
        if fed.iter().zip(&w).any(|(a, b)| a.to_bits() != b.to_bits()) {
            bitwise = false;
        }
        for (a, b) in fed.iter().zip(&w_flat) {
            worst_flat = worst_flat.max((a - b).abs() / b.abs().max(1e-12));
        }
    }
    vec![
        Check::new(
            "full participation equals per-device gradient descent",
            bitwise,
            format!("{} steps compared bitwise", cfg.rounds),
        ),
        Check::new(
            "full participation equals merged-data gradient descent",
            worst_flat <= 1e-9,
            format!("worst relative deviation {worst_flat:.2e}"),
        ),
    ]
}

fn merge(mut into: LogisticShard<f64>, from: &LogisticShard<f64>) -> LogisticShard<f64> {
    for (x, y) in from.rows() {
        into.push(x, y as i32).unwrap();
    }
    into
}

pub fn federated_cost_checks() -> Vec<Check> {
    let shards = logistic_shards(8, 10, 3, 71);
    let mut out = Vec::new();
    for (metric, m, expected) in [
        (ImportanceMetric::Mai, 3, 3),
        (ImportanceMetric::GradientNorm, 3, 8),
    ] {
        let cfg = fed_cfg(metric, m, 20, 0.2);
        let (_, trace) = run_federated(&cfg, &shards, None, &RngStreams::new(2)).unwrap();
        let counts: Vec<usize> = trace.rounds.iter().map(|r| r.gradient_computations).collect();
        out.push(Check::new(
            format!("{} gradient computations", metric.name()),
            counts.iter().all(|&c| c == expected),
            format!("expected {expected} per round, saw {:?}", dedup(&counts)),
        ));
    }
    out
}

fn dedup(v: &[usize]) -> Vec<usize> {
    let mut d = v.to_vec();
    d.sort_unstable();
    d.dedup();
    d
}

pub fn federated_monotone_checks() -> Vec<Check> {
    let shards = logistic_shards(5, 20, 4, 81);
    [Aggregation::Gradient, Aggregation::Model]
        .into_iter()
        .map(|agg| {
            let mut cfg = fed_cfg(ImportanceMetric::GradientNorm, shards.len(), 60, 0.05);
            cfg.aggregation = Some(agg);
            let (_, trace) = run_federated(&cfg, &shards, None, &RngStreams::new(3)).unwrap();
            let mut losses = vec![trace.initial_loss];
            losses.extend(trace.rounds.iter().map(|r| r.global_loss));
            let increases = losses.windows(2).filter(|w| w[1] > w[0]).count();
            Check::new(
                format!("loss monotone ({agg:?})"),
                increases == 0,
                format!(
                    "{increases} increases; loss {:.5} -> {:.5}",
                    losses[0],
                    losses[losses.len() - 1]
                ),
            )
        })
        .collect()
}

/// Random configurations run for up to 100 rounds; the reported staleness
/// must equal the rounds since each device last appeared in a selection.
pub fn staleness_fuzz_checks(cases: usize) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut failures = Vec::new();
    for case in 0..cases {
        let k = rng.random_range(2..=9);
        let m = rng.random_range(1..=k);
        let rounds = rng.random_range(1..=100);
        let metric = if rng.random_bool(0.5) {
            ImportanceMetric::Mai
        } else {
            ImportanceMetric::GradientNorm
        };
        let shards = logistic_shards(k, 6, 3, 1000 + case as u64);
        let cfg = fed_cfg(metric, m, rounds, 0.1);
        let (state, trace) =
            run_federated(&cfg, &shards, None, &RngStreams::new(case as u64)).unwrap();
        let mut expected = vec![0usize; k];
        let mut ok = state.round == rounds && trace.rounds.len() == rounds;
        for r in &trace.rounds {
            ok &= r.selected.len() == m;
            for (dev, tau) in expected.iter_mut().enumerate() {
                if r.selected.contains(&dev) {
                    *tau = 0;
                } else {
                    *tau += 1;
                }
            }
        }
        ok &= state.staleness == expected;
        ok &= state.staleness.iter().filter(|&&t| t == 0).count() == m;
        if !ok {
            failures.push(case);
        }
    }
    vec![Check::new(
        "staleness bookkeeping",
        failures.is_empty(),
        format!("{cases} random runs, failing cases {failures:?}"),
    )]
}

pub fn federated_checks() -> Vec<Check> {
    let mut out = federated_equivalence_checks();
    out.extend(federated_cost_checks());
    out.extend(federated_monotone_checks());
    out.extend(staleness_fuzz_checks(40));
    out
}

pub fn pooled_loss(shards: &[LogisticShard<f64>], w: &[f64], l2: f64) -> f64 {
    global_loss(w, shards, l2).unwrap()
}
