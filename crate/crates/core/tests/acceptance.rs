//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints its own PASS/FAIL line; exits non-zero if any fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shapetext::diffcore::{gradcheck, ParamStore, Tape, Tensor, Var};
use shapetext::encoders::{
    encode_shape_on_tape, encode_text_on_tape, encode_views_on_tape, fuse_on_tape, Model, ModelDims, ShapeGeometry,
    TokenSequence, ViewInput, ViewLayout,
};
use shapetext::evaluation::{ndcg_at_k, recall_at_k, RankingResult, RelevanceMap};
use shapetext::geometry::{propagate_features, render_views, Point, PointCloud};
use shapetext::matching::{sinkhorn_plan, uniform, CostMatrix, CostRule, MatchConfig};
use shapetext::mining::{batch_mining_loss, triplet_loss, MiningConfig, MiningStrategy, ScoreMatrix};
use shapetext::pipeline::{
    batch_loss_on_tape, build_vocabulary, gen_synthetic, train_model, Dataset, ExperimentConfig, LoadedModel, Split,
    TrainOptions,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

// 1

fn sinkhorn_feasibility() -> Outcome {
    let cfg = MatchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst_violation: f64 = 0.0;
    let mut worst_iters = 0;
    for case in 0..100 {
        let (n, m) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let cost = CostMatrix::new(random_matrix(&mut rng, n, m, 0.0, 2.0), CostRule::OneMinusCosine).map_err(err)?;
        let plan = sinkhorn_plan(&cost, &uniform(n), &uniform(m), &cfg).map_err(err)?;
        let p = &plan.plan;
        let mut violation: f64 = 0.0;
        for i in 0..n {
            let s: f64 = (0..m).map(|j| p.at(i, j)).sum();
            violation = violation.max((s - 1.0 / n as f64).abs());
        }
        for j in 0..m {
            let s: f64 = (0..n).map(|i| p.at(i, j)).sum();
            violation = violation.max((s - 1.0 / m as f64).abs());
        }
        ensure(
            p.data().iter().all(|&v| v >= 0.0 && v.is_finite()),
            format!("case {case}: negative or non-finite plan entry"),
        )?;
        ensure(violation < 1e-6, format!("case {case} ({n}x{m}): violation {violation:e}"))?;
        ensure(plan.iterations < 200, format!("case {case} ({n}x{m}): {} iterations", plan.iterations))?;
        worst_violation = worst_violation.max(violation);
        worst_iters = worst_iters.max(plan.iterations);
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), format!("took {elapsed:?}"))?;
    Ok(format!(
        "100 cases, max violation {worst_violation:.2e}, max iterations {worst_iters}, {:.1} ms",
        elapsed.as_secs_f64() * 1e3
    ))
}

// 2

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn sinkhorn_vs_exact() -> Outcome {
    let cfg = MatchConfig {
        epsilon: 0.01,
        max_iters: 100_000,
        tolerance: 1e-9,
        ..MatchConfig::default()
    };
    let mut worst: f64 = 0.0;
    for n in 2..=6 {
        let perms = permutations(n);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 * n as u64 + seed);
            let c = random_matrix(&mut rng, n, n, 0.0, 1.0);
            // With uniform marginals the optimum is a permutation scaled by 1/n.
            let exact = perms
                .iter()
                .map(|p| p.iter().enumerate().map(|(i, &j)| c.at(i, j)).sum::<f64>() / n as f64)
                .fold(f64::INFINITY, f64::min);
            let cost = CostMatrix::new(c.clone(), CostRule::OneMinusCosine).map_err(err)?;
            let plan = sinkhorn_plan(&cost, &uniform(n), &uniform(n), &cfg).map_err(err)?;
            let approx = plan.inner(&c);
            let rel = (approx - exact).abs() / exact;
            ensure(rel <= 0.02, format!("n={n} seed={seed}: {approx:.6} vs {exact:.6} ({:.3}%)", 100.0 * rel))?;
            worst = worst.max(rel);
        }
    }
    Ok(format!("100 cases, worst relative gap {:.4}%", 100.0 * worst))
}

// 3

fn labelled_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    let pts: Vec<Point> = (0..n)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect();
    let labels = pts.iter().map(|p| if p[1] > 0.3 { 0 } else if p[0] > 0.0 { 1 } else { 2 }).collect();
    PointCloud::new(pts).unwrap().with_labels(labels).unwrap()
}

fn random_tokens(rng: &mut ChaCha8Rng, dims: &ModelDims) -> TokenSequence {
    let len = rng.gen_range(2..=dims.max_len);
    let ids = (0..len).map(|_| rng.gen_range(1..dims.vocab_size)).collect();
    TokenSequence::new(ids, dims.vocab_size, dims.max_len).unwrap()
}

/// `sum(out * weights)` with fixed random weights.
fn readout(tape: &mut Tape, out: Var, weights: &Tensor) -> Var {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod)
}

struct GradCase<'a> {
    label: &'a str,
    build: Box<dyn Fn(&mut Tape, &ParamStore) -> shapetext::Result<Var> + 'a>,
}

fn run_grad_case(case: &GradCase, params: &ParamStore) -> Result<gradcheck::GradCheckReport, String> {
    let mut tape = Tape::new();
    let out = (case.build)(&mut tape, params).map_err(err)?;
    let grads = tape.gradients(out).map_err(err)?.params(&tape);
    let report = gradcheck::check_piecewise(params, &grads, 1, |p| {
        let mut t = Tape::new();
        let v = (case.build)(&mut t, p)?;
        Ok((t.value(v).item(), t.branch_signature()))
    })
    .map_err(err)?;
    ensure(report.compared > 0, format!("{}: nothing compared", case.label))?;
    ensure(
        report.passes(1e-4),
        format!("{}: rel err {:.2e} at {:?}", case.label, report.max_rel_err, report.worst),
    )?;
    Ok(report)
}

fn gradient_checks() -> Outcome {
    let dims = ModelDims::toy();
    let layout = ViewLayout::new(&dims).map_err(err)?;
    let matching = MatchConfig::default();
    let mining = MiningConfig::default();
    let mut worst: f64 = 0.0;
    let (mut compared, mut one_sided, mut skipped) = (0, 0, 0);
    for seed in 0..10u64 {
        let model = Model::init(&dims, seed).map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let batch = 3;
        let clouds: Vec<PointCloud> = (0..batch).map(|_| labelled_cloud(&mut rng, 60)).collect();
        let geoms: Vec<ShapeGeometry> = clouds.iter().map(|c| ShapeGeometry::new(c).unwrap()).collect();
        let views: Vec<ViewInput> = clouds
            .iter()
            .map(|c| {
                let mv = render_views(c, dims.views, dims.height, dims.width).unwrap();
                ViewInput::new(&mv, &layout, &dims).unwrap()
            })
            .collect();
        let tokens: Vec<TokenSequence> = (0..batch).map(|_| random_tokens(&mut rng, &dims)).collect();

        let parts = geoms[0].part_ids.len();
        let w_shape = random_matrix(&mut rng, parts, dims.embed_dim, -1.0, 1.0);
        let w_text = random_matrix(&mut rng, tokens[0].len(), dims.embed_dim, -1.0, 1.0);
        let w_views = random_matrix(&mut rng, layout.num_tokens(), dims.embed_dim, -1.0, 1.0);

        // Plans and triplets from the unperturbed parameters, reused by every
        // finite-difference evaluation.
        let fused_batch = |tape: &mut Tape, p: &ParamStore| -> shapetext::Result<(Vec<Var>, Vec<Var>)> {
            let mut fused = Vec::new();
            let mut texts = Vec::new();
            for b in 0..batch {
                let sh = encode_shape_on_tape(tape, p, &geoms[b])?;
                let sc = encode_views_on_tape(tape, p, &dims, &layout, &views[b])?;
                fused.push(fuse_on_tape(tape, p, sh, sc)?);
                texts.push(encode_text_on_tape(tape, p, &tokens[b])?);
            }
            Ok((fused, texts))
        };
        let frozen = {
            let mut tape = Tape::new();
            let (f, t) = fused_batch(&mut tape, &model.params).map_err(err)?;
            batch_loss_on_tape(&mut tape, &f, &t, &matching, &mining, None).map_err(err)?.selection
        };

        let cases = [
            GradCase {
                label: "shape encoder",
                build: Box::new(|tape, p| {
                    let v = encode_shape_on_tape(tape, p, &geoms[0])?;
                    Ok(readout(tape, v, &w_shape))
                }),
            },
            GradCase {
                label: "text encoder",
                build: Box::new(|tape, p| {
                    let v = encode_text_on_tape(tape, p, &tokens[0])?;
                    Ok(readout(tape, v, &w_text))
                }),
            },
            GradCase {
                label: "view encoder",
                build: Box::new(|tape, p| {
                    let v = encode_views_on_tape(tape, p, &dims, &layout, &views[0])?;
                    Ok(readout(tape, v, &w_views))
                }),
            },
            GradCase {
                label: "views + fuse",
                build: Box::new(|tape, p| {
                    let sh = tape.constant(Tensor::full(&[parts, dims.embed_dim], 0.3));
                    let sc = encode_views_on_tape(tape, p, &dims, &layout, &views[0])?;
                    let v = fuse_on_tape(tape, p, sh, sc)?;
                    Ok(readout(tape, v, &w_shape))
                }),
            },
            GradCase {
                label: "transport loss",
                build: Box::new(|tape, p| {
                    let (f, t) = fused_batch(tape, p)?;
                    Ok(batch_loss_on_tape(tape, &f, &t, &matching, &mining, Some(&frozen))?.emd)
                }),
            },
            GradCase {
                label: "pooled cosine loss",
                build: Box::new(|tape, p| {
                    let (f, t) = fused_batch(tape, p)?;
                    Ok(batch_loss_on_tape(tape, &f, &t, &matching, &mining, Some(&frozen))?.cos)
                }),
            },
            GradCase {
                label: "combined loss",
                build: Box::new(|tape, p| {
                    let (f, t) = fused_batch(tape, p)?;
                    Ok(batch_loss_on_tape(tape, &f, &t, &matching, &mining, Some(&frozen))?.total)
                }),
            },
        ];
        for case in &cases {
            let r = run_grad_case(case, &model.params).map_err(|e| format!("seed {seed}, {e}"))?;
            worst = worst.max(r.max_rel_err);
            compared += r.compared;
            one_sided += r.one_sided;
            skipped += r.skipped;
        }
    }
    Ok(format!(
        "7 paths x 10 seeds, {compared} entries ({one_sided} one-sided at kinks, {skipped} skipped), worst rel err {worst:.2e}"
    ))
}

// 4

fn propagation_oracle() -> Outcome {
    let src = PointCloud::new(vec![[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
        .unwrap()
        .with_features(Tensor::matrix(2, 1, vec![0.0, 3.0]).unwrap())
        .unwrap();
    let out = propagate_features(&src, &[[0.0; 3]], 2, 2.0).map_err(err)?;
    ensure((out.at(0, 0) - 0.6).abs() < 1e-12, format!("hand case gave {}", out.at(0, 0)))?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..50 {
        let n = rng.gen_range(3..40);
        let feat_dim = rng.gen_range(1..6);
        let k = rng.gen_range(1..=n.min(5));
        let power = [1.0, 2.0, 3.0][rng.gen_range(0..3)];
        let pts: Vec<Point> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let feats = random_matrix(&mut rng, n, feat_dim, -1.0, 1.0);
        let cloud = PointCloud::new(pts.clone()).unwrap().with_features(feats.clone()).unwrap();
        let queries: Vec<Point> = (0..10).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let got = propagate_features(&cloud, &queries, k, power).map_err(err)?;
        for (qi, q) in queries.iter().enumerate() {
            let mut by_dist: Vec<(f64, usize)> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt(), i))
                .collect();
            by_dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let near = &by_dist[..k];
            let raw: Vec<f64> = near.iter().map(|(d, _)| d.powf(-power)).collect();
            let z: f64 = raw.iter().sum();
            for c in 0..feat_dim {
                let expect: f64 = near.iter().zip(&raw).map(|((_, i), w)| w / z * feats.at(*i, c)).sum();
                let diff = (got.at(qi, c) - expect).abs();
                ensure(diff < 1e-12, format!("case {case} query {qi} channel {c}: diff {diff:e}"))?;
            }
        }
    }

    let snap = propagate_features(&src, &[[0.0, 2.0, 0.0]], 2, 2.0).map_err(err)?;
    ensure(snap.at(0, 0) == 3.0, format!("coincident query gave {}", snap.at(0, 0)))?;
    Ok("hand case, 50 randomised cases and the coincident query agree".into())
}

// 5

fn oracle_negative(scores: &[f64], pos: usize, margin: f64) -> usize {
    let sp = scores[pos];
    let others: Vec<usize> = (0..scores.len()).filter(|&j| j != pos).collect();
    let best_of = |cands: Vec<usize>, higher: bool| -> Option<usize> {
        let mut best: Option<usize> = None;
        for j in cands {
            best = match best {
                None => Some(j),
                Some(b) if (higher && scores[j] > scores[b]) || (!higher && scores[j] < scores[b]) => Some(j),
                keep => keep,
            };
        }
        best
    };
    let band = others.iter().copied().filter(|&j| scores[j] < sp && scores[j] > sp - margin).collect();
    let below = others.iter().copied().filter(|&j| scores[j] < sp).collect();
    best_of(band, true)
        .or_else(|| best_of(below, true))
        .or_else(|| best_of(others.clone(), false))
        .unwrap()
}

fn mining_oracle() -> Outcome {
    ensure(triplet_loss(1.0, 0.5, 0.25) == 0.0, "satisfied triplet should cost 0")?;
    ensure(triplet_loss(0.5, 0.5, 0.25) == 0.25, "equal scores should cost the margin")?;
    ensure(triplet_loss(0.25, 0.75, 0.25) == 0.75, "violated triplet")?;

    let cfg = MiningConfig {
        margin: 0.2,
        strategy: MiningStrategy::SemiHard,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..100 {
        let b = rng.gen_range(2..=32);
        // Coarse grid so ties and band edges actually occur.
        let s = Tensor::matrix(b, b, (0..b * b).map(|_| rng.gen_range(0..20) as f64 * 0.05 - 0.5).collect()).unwrap();
        let (mean, triplets) = batch_mining_loss(&ScoreMatrix::new(s.clone()).unwrap(), &cfg).map_err(err)?;
        let mut total = 0.0;
        for i in 0..b {
            let row: Vec<f64> = (0..b).map(|j| s.at(i, j)).collect();
            let neg = oracle_negative(&row, i, cfg.margin);
            ensure(triplets[i].negative == neg, format!("case {case} row {i}: {} vs {neg}", triplets[i].negative))?;
            total += (cfg.margin + row[neg] - row[i]).max(0.0);
        }
        for j in 0..b {
            let col: Vec<f64> = (0..b).map(|i| s.at(i, j)).collect();
            let neg = oracle_negative(&col, j, cfg.margin);
            let t = &triplets[b + j];
            ensure(t.negative == neg, format!("case {case} column {j}: {} vs {neg}", t.negative))?;
            total += (cfg.margin + col[neg] - col[j]).max(0.0);
        }
        let expect = total / (2 * b) as f64;
        ensure(mean == expect, format!("case {case}: loss {mean} vs {expect}"))?;
    }
    Ok("hinge cases and 100 random batches match exactly".into())
}

// 6

fn oracle_rank(scores: &[f64]) -> Vec<usize> {
    let n = scores.len();
    let mut out = vec![0; n];
    for g in 0..n {
        let pos = (0..n)
            .filter(|&h| scores[h] > scores[g] || (scores[h] == scores[g] && h < g))
            .count();
        out[pos] = g;
    }
    out
}

fn metrics_oracle() -> Outcome {
    let r = RankingResult::new(vec![vec![1, 0, 2]]);
    let rel = RelevanceMap::single(&[0]).map_err(err)?;
    let nd = ndcg_at_k(&r, &rel, 5).map_err(err)?;
    ensure((nd - 1.0 / 3f64.log2()).abs() < 1e-15, format!("NDCG of rank 2 is {nd}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..50 {
        let (q, g) = (rng.gen_range(1..20), rng.gen_range(1..25));
        let scores: Vec<Vec<f64>> = (0..q).map(|_| (0..g).map(|_| rng.gen_range(0..8) as f64).collect()).collect();
        let relevant: Vec<BTreeSet<usize>> = (0..q)
            .map(|_| {
                let mut s: BTreeSet<usize> = (0..g).filter(|_| rng.gen_bool(0.2)).collect();
                s.insert(rng.gen_range(0..g));
                s
            })
            .collect();
        let rows = Tensor::from_rows(&scores).unwrap();
        let rankings = RankingResult::from_scores(&rows);
        let relmap = RelevanceMap::new(relevant.clone()).map_err(err)?;
        let oracle: Vec<Vec<usize>> = scores.iter().map(|s| oracle_rank(s)).collect();
        for (qi, o) in oracle.iter().enumerate() {
            ensure(rankings.ranking(qi) == &o[..], format!("case {case}: ranking of query {qi} differs"))?;
        }
        for k in [1, 5] {
            let hits = oracle.iter().zip(&relevant).filter(|(o, rel)| o.iter().take(k).any(|x| rel.contains(x))).count();
            let expect = 100.0 * hits as f64 / q as f64;
            let got = recall_at_k(&rankings, &relmap, k).map_err(err)?;
            ensure(got == expect, format!("case {case}: RR@{k} {got} vs {expect}"))?;
        }
        let mut total = 0.0;
        for (o, rel) in oracle.iter().zip(&relevant) {
            let mut dcg = 0.0;
            for pos in 0..o.len().min(5) {
                if rel.contains(&o[pos]) {
                    dcg += 1.0 / ((pos + 2) as f64).log2();
                }
            }
            let mut ideal = 0.0;
            for pos in 0..rel.len().min(5) {
                ideal += 1.0 / ((pos + 2) as f64).log2();
            }
            total += dcg / ideal;
        }
        let expect = total / q as f64;
        let got = ndcg_at_k(&rankings, &relmap, 5).map_err(err)?;
        ensure(got == expect, format!("case {case}: NDCG@5 {got} vs {expect}"))?;
    }
    Ok("rank-2 NDCG and 50 random instances match exactly".into())
}

// 7-9

struct Run {
    loaded: LoadedModel,
    losses: Vec<f64>,
    elapsed: Duration,
    ckpt: Vec<u8>,
    json: String,
    t2s_rr1: f64,
    t2s_rr5: f64,
}

fn train_run(cfg: &ExperimentConfig, data_dir: &Path, data: &Dataset, ckpt_path: &Path) -> Result<Run, String> {
    let start = Instant::now();
    let (loaded, outcome) = train_model(cfg, data_dir, &TrainOptions::default()).map_err(err)?;
    let elapsed = start.elapsed();
    loaded.save(ckpt_path).map_err(err)?;
    let ckpt = std::fs::read(ckpt_path).map_err(err)?;
    let report = loaded.evaluate(data, Split::Test).map_err(err)?;
    let t2s = report.get("T2S").ok_or("no T2S metrics")?.clone();
    Ok(Run {
        loaded,
        losses: outcome.epoch_losses,
        elapsed,
        ckpt,
        json: report.to_json(),
        t2s_rr1: t2s.rr1,
        t2s_rr5: t2s.rr5,
    })
}

struct Synthetic {
    _dir: tempfile::TempDir,
    semi: Result<Run, String>,
    semi_again: Result<Run, String>,
    hardest: Result<Run, String>,
    gallery: usize,
    random_rr5: Result<f64, String>,
}

fn synthetic_runs() -> Result<Synthetic, String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let data_dir = dir.path().join("data");
    let cfg = ExperimentConfig::desk();
    let data = gen_synthetic(&data_dir, cfg.seed, 200, 5, cfg.points).map_err(err)?;
    let gallery = data.shapes_in(Split::Test).len();

    let vocab = build_vocabulary(&data);
    let random = LoadedModel {
        config: cfg.clone(),
        model: Model::init(&cfg.model_dims(vocab.len()), cfg.seed).map_err(err)?,
        vocab,
        data_dir: Some(data_dir.clone()),
    };
    let random_rr5 = random
        .evaluate(&data, Split::Test)
        .map_err(err)
        .and_then(|r| r.get("T2S").map(|m| m.rr5).ok_or_else(|| "no T2S metrics".to_string()));

    let semi = train_run(&cfg, &data_dir, &data, &dir.path().join("a.ckpt"));
    let semi_again = train_run(&cfg, &data_dir, &data, &dir.path().join("b.ckpt"));
    let hard_cfg = ExperimentConfig {
        mining: MiningStrategy::Hardest,
        ..cfg.clone()
    };
    let hardest = train_run(&hard_cfg, &data_dir, &data, &dir.path().join("h.ckpt"));
    Ok(Synthetic {
        _dir: dir,
        semi,
        semi_again,
        hardest,
        gallery,
        random_rr5,
    })
}

fn end_to_end(s: &Synthetic) -> Outcome {
    let run = s.semi.as_ref().map_err(Clone::clone)?;
    let random_rr5 = *s.random_rr5.as_ref().map_err(Clone::clone)?;
    let chance = 100.0 / s.gallery as f64;
    let (first, last) = (run.losses[0], *run.losses.last().unwrap());
    let summary = format!(
        "gallery {}, T2S RR@1 {:.2} (need {:.2}), RR@5 {:.2} (random init {:.2}), loss {first:.4} -> {last:.4}, {:.0} s",
        s.gallery,
        run.t2s_rr1,
        5.0 * chance,
        run.t2s_rr5,
        random_rr5,
        run.elapsed.as_secs_f64()
    );
    ensure(run.elapsed <= Duration::from_secs(15 * 60), format!("too slow: {summary}"))?;
    ensure(run.t2s_rr1 >= 5.0 * chance, format!("RR@1 too low: {summary}"))?;
    ensure(run.t2s_rr5 >= 3.0 * random_rr5, format!("RR@5 too low: {summary}"))?;
    ensure(last < first, format!("loss did not fall: {summary}"))?;
    Ok(summary)
}

fn hardest_ablation(s: &Synthetic) -> Outcome {
    let semi = s.semi.as_ref().map_err(Clone::clone)?;
    let hard = s.hardest.as_ref().map_err(Clone::clone)?;
    let summary = format!("hardest RR@1 {:.2}, semi-hard RR@1 {:.2}", hard.t2s_rr1, semi.t2s_rr1);
    ensure(hard.t2s_rr1 <= semi.t2s_rr1, summary.clone())?;
    Ok(summary)
}

fn determinism(s: &Synthetic) -> Outcome {
    let a = s.semi.as_ref().map_err(Clone::clone)?;
    let b = s.semi_again.as_ref().map_err(Clone::clone)?;
    ensure(a.ckpt == b.ckpt, "checkpoints differ")?;
    ensure(a.json == b.json, "metric JSON differs")?;
    ensure(a.loaded.config.hash() == b.loaded.config.hash(), "config hashes differ")?;
    Ok(format!("{} checkpoint bytes and metric JSON identical", a.ckpt.len()))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, r: Outcome| {
        match &r {
            Ok(msg) => println!("[PASS] {n} {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("[FAIL] {n} {name}: {msg}");
            }
        }
    };
    report(1, "sinkhorn feasibility", guarded(sinkhorn_feasibility));
    report(2, "sinkhorn vs exact transport", guarded(sinkhorn_vs_exact));
    report(3, "gradient checks", guarded(gradient_checks));
    report(4, "feature propagation", guarded(propagation_oracle));
    report(5, "semi-hard mining", guarded(mining_oracle));
    report(6, "retrieval metrics", guarded(metrics_oracle));
    if std::env::var_os("SHAPETEXT_QUICK").is_some() {
        std::process::exit(i32::from(failed > 0));
    }
    match catch_unwind(AssertUnwindSafe(synthetic_runs)) {
        Ok(Ok(s)) => {
            report(7, "synthetic end-to-end", guarded(|| end_to_end(&s)));
            report(8, "hardest-negative ablation", guarded(|| hardest_ablation(&s)));
            report(9, "determinism", guarded(|| determinism(&s)));
        }
        other => {
            let msg = match other {
                Ok(Err(e)) => e,
                _ => "synthetic runs panicked".into(),
            };
            for (n, name) in [(7, "synthetic end-to-end"), (8, "hardest-negative ablation"), (9, "determinism")] {
                report(n, name, Err(msg.clone()));
            }
        }
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
