//! Acceptance suite: one PASS/FAIL line per criterion, run sequentially so the
//! runtime limits measure each criterion alone.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::Arc;
use std::time::{Duration, Instant};

use extractbench::corpus::{generate_corpus, preprocess, Clip, Corpus, LengthLimits, SAMPLE_RATE};
use extractbench::evaluation::{evaluate, split_corpus, EvalReport, EvalSetup, RunLabel};
use extractbench::extraction::{
    layer_loss, loss_gradient, lr_at, total_loss, train, SurrogateHeads, TrainConfig,
};
use extractbench::features::{jaccard_distance, Backbone, BackboneConfig, TrigramSet};
use extractbench::rng::SplitMix64;
use extractbench::selection::{
    fps_first_index, select_by_loss, select_by_transcription, select_fps_content,
    select_most_speakers, select_random, ClipScore, SelectionPlan, WithinClusterOrder,
};
use extractbench::victim::protocol::RepresentationResponse;
use extractbench::victim::{
    LayerRepresentations, QueryLedger, RepresentationCache, ServiceConfig, VictimClient,
    VictimConfig, VictimModel, VictimService,
};
use extractbench::{Error, Matrix};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn random_set(rng: &mut SplitMix64, max_len: usize, vocab: u32) -> TrigramSet {
    let n = rng.below(max_len + 1);
    (0..n)
        .map(|_| {
            [
                rng.below(vocab as usize) as u32,
                rng.below(vocab as usize) as u32,
                rng.below(vocab as usize) as u32,
            ]
        })
        .collect()
}

/// Jaccard distance from sorted vectors, sharing no code with the library.
fn jaccard_oracle(x: &TrigramSet, y: &TrigramSet) -> f64 {
    let a: Vec<[u32; 3]> = x.iter().copied().collect();
    let b: Vec<[u32; 3]> = y.iter().copied().collect();
    let mut all = a.clone();
    all.extend_from_slice(&b);
    all.sort_unstable();
    all.dedup();
    if all.is_empty() {
        return 0.0;
    }
    let inter = all.iter().filter(|t| a.contains(t) && b.contains(t)).count();
    1.0 - inter as f64 / all.len() as f64
}

fn jaccard_criterion() -> Outcome {
    let mut rng = SplitMix64::new(2024);
    let sets: Vec<TrigramSet> = (0..2000).map(|i| random_set(&mut rng, 1 + i % 40, 4)).collect();
    for pair in sets.chunks(2) {
        let (got, want) = (jaccard_distance(&pair[0], &pair[1]), jaccard_oracle(&pair[0], &pair[1]));
        check(got.to_bits() == want.to_bits(), || format!("{got} != oracle {want}"))?;
    }
    let mut triples = 0;
    for t in sets.chunks(3).filter(|t| t.len() == 3) {
        let (x, y, z) = (&t[0], &t[1], &t[2]);
        let d = jaccard_distance;
        check(d(x, y) == d(y, x), || "asymmetric pair".into())?;
        check(d(x, x) == 0.0, || "d(x, x) != 0".into())?;
        check(x == y || d(x, y) > 0.0, || "distinct sets at distance 0".into())?;
        check(d(x, z) <= d(x, y) + d(y, z) + 1e-12, || "triangle inequality violated".into())?;
        triples += 1;
    }
    Ok(format!("1000 pairs exact, {triples} triples metric"))
}

fn uniform_clip(id: &str, seconds: u32, rate: u32) -> Clip {
    Clip::new(id, vec![0.0; (seconds * rate) as usize], rate).unwrap()
}

/// Exhaustive max-min selection starting at `first`.
fn fps_oracle(clips: &[Clip], sets: &[TrigramSet], first: usize, budget: f64) -> Vec<String> {
    let mut picked = vec![first];
    let mut total = clips[first].duration_s();
    while total < budget && picked.len() < clips.len() {
        let mut best: Option<(usize, f64)> = None;
        for cand in (0..clips.len()).filter(|c| !picked.contains(c)) {
            let d = picked
                .iter()
                .map(|&p| jaccard_oracle(&sets[p], &sets[cand]))
                .fold(f64::INFINITY, f64::min);
            let better = match best {
                None => true,
                Some((b, bd)) => d > bd || (d == bd && clips[cand].id < clips[b].id),
            };
            if better {
                best = Some((cand, d));
            }
        }
        let (next, _) = best.unwrap();
        total += clips[next].duration_s();
        picked.push(next);
    }
    picked.iter().map(|&i| clips[i].id.clone()).collect()
}

fn fps_criterion() -> Outcome {
    let mut rng = SplitMix64::new(77);
    let mut checked = 0;
    for case in 0..200 {
        let n = 1 + rng.below(12);
        let mut names: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut names);
        let clips: Vec<Clip> = names
            .iter()
            .map(|i| uniform_clip(&format!("c{i:02}"), 1 + rng.below(8) as u32, 100))
            .collect();
        let sets: Vec<TrigramSet> = (0..n).map(|_| random_set(&mut rng, 6, 3)).collect();
        let budget = 1.0 + rng.below(40) as f64;
        let corpus = Corpus::new("fps", clips.clone()).map_err(|e| e.to_string())?;
        let by_id: HashMap<String, TrigramSet> =
            clips.iter().zip(&sets).map(|(c, s)| (c.id.clone(), s.clone())).collect();
        for seed in 0..5 {
            let plan = select_fps_content(&corpus, &by_id, budget, seed).map_err(|e| e.to_string())?;
            let want = fps_oracle(&clips, &sets, fps_first_index(n, seed), budget);
            check(plan.clip_ids() == want, || format!("case {case} seed {seed}: {:?} vs {want:?}", plan.clip_ids()))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} plans equal the exhaustive oracle"))
}

fn reps(layers: &[(usize, Matrix)]) -> LayerRepresentations {
    LayerRepresentations::new(layers.iter().cloned().collect()).unwrap()
}

fn loss_spot_criterion() -> Outcome {
    let expected_same = (1.0 + (-1.0f64).exp()).ln();
    let v = Matrix::from_rows(&[[0.3, -0.2, 0.9], [1.0, 2.0, -1.0]]).unwrap();
    let same = layer_loss(&v, &v, 1e-8).map_err(|e| e.to_string())?;
    check((same - 2.0 * expected_same).abs() < 1e-9, || format!("identical rows: {same}"))?;

    let a = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
    let b = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
    let ortho = layer_loss(&a, &b, 1e-8).map_err(|e| e.to_string())?;
    let want = 2f64.ln() + 1.0;
    check((ortho - want).abs() < 1e-9, || format!("orthogonal: {ortho} vs {want}"))?;

    let mut rng = SplitMix64::new(5);
    let mut mat = || Matrix::from_fn(4, 6, |_, _| rng.uniform(-1.0, 1.0));
    let layers: Vec<usize> = vec![2, 5, 7, 11];
    let h: Vec<(usize, Matrix)> = layers.iter().map(|&n| (n, mat())).collect();
    let hh: Vec<(usize, Matrix)> = layers.iter().map(|&n| (n, mat())).collect();
    let set: BTreeSet<usize> = layers.iter().copied().collect();
    let total = total_loss(&reps(&h), &reps(&hh), &set, 1e-8).map_err(|e| e.to_string())?;
    let mut sum = 0.0;
    for ((_, x), (_, y)) in h.iter().zip(&hh) {
        sum += layer_loss(x, y, 1e-8).map_err(|e| e.to_string())?;
    }
    check(total == sum, || format!("total {total} != layer sum {sum}"))?;
    Ok(format!("identical {same:.12}, orthogonal {ortho:.12}, additivity exact over N=4"))
}

fn gradient_criterion() -> Outcome {
    let mut rng = SplitMix64::new(11);
    let step = 1e-5;
    let mut worst = 0.0f64;
    let mut points = 0;
    while points < 100 {
        let (t, d) = (1 + rng.below(4), 2 + rng.below(7));
        let h = Matrix::from_fn(t, d, |_, _| rng.uniform(-1.0, 1.0));
        let hhat = Matrix::from_fn(t, d, |_, _| rng.uniform(-1.0, 1.0));
        // Keep every coordinate clear of the L1 kink.
        if h.as_slice().iter().zip(hhat.as_slice()).any(|(a, b)| (a - b).abs() < 1e-3) {
            continue;
        }
        let g = loss_gradient(&h, &hhat, 1e-8).map_err(|e| e.to_string())?;
        let mut num = Vec::with_capacity(t * d);
        for k in 0..t * d {
            let mut plus = hhat.clone();
            let mut minus = hhat.clone();
            plus.as_mut_slice()[k] += step;
            minus.as_mut_slice()[k] -= step;
            let lp = layer_loss(&h, &plus, 1e-8).map_err(|e| e.to_string())?;
            let lm = layer_loss(&h, &minus, 1e-8).map_err(|e| e.to_string())?;
            num.push((lp - lm) / (2.0 * step));
        }
        let diff: f64 = g.as_slice().iter().zip(&num).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale: f64 = num.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rel = diff / scale;
        worst = worst.max(rel);
        check(rel <= 1e-4, || format!("point {points}: relative error {rel:e}"))?;
        points += 1;
    }
    Ok(format!("100 points, worst relative error {worst:.2e}"))
}

fn schedule_criterion() -> Outcome {
    let config = TrainConfig {
        steps: 1000,
        ..TrainConfig::default()
    };
    let lr = |s| lr_at(s, &config).map_err(|e| e.to_string());
    let (a, b, c) = (lr(70)?, lr(1000)?, lr(35)?);
    check(a == 0.0002, || format!("lr(70) = {a:e}"))?;
    check(b == 0.0, || format!("lr(1000) = {b:e}"))?;
    check((c - 0.0001).abs() < 1e-12, || format!("lr(35) = {c:e}"))?;
    Ok(format!("lr(70) = {a:e}, lr(1000) = {b:e}, lr(35) = {c:e}"))
}

fn stop_rule(plan: &SelectionPlan) -> Result<(), String> {
    if plan.exhausted {
        return Ok(());
    }
    let last = plan.steps.last().ok_or("empty plan without exhaustion")?;
    let prev = plan.steps.len().checked_sub(2).map_or(0.0, |i| plan.steps[i].running_total_s);
    check(plan.total_duration_s >= plan.budget_s, || {
        format!("{}: total {} < H {}", plan.method, plan.total_duration_s, plan.budget_s)
    })?;
    check(prev < plan.budget_s, || {
        format!("{}: total minus last clip {} >= H ({})", plan.method, prev, last.clip_id)
    })
}

fn budget_criterion() -> Outcome {
    let mut rng = SplitMix64::new(404);
    let mut plans = 0;
    for case in 0..200 {
        let n = 1 + rng.below(15);
        let clips: Vec<Clip> = (0..n)
            .map(|i| {
                let text: String = (0..3 + rng.below(10)).map(|_| (b'a' + rng.below(5) as u8) as char).collect();
                uniform_clip(&format!("k{i:02}"), 1 + rng.below(9) as u32, 100)
                    .with_speaker(format!("s{}", rng.below(4)))
                    .with_transcription(text)
            })
            .collect();
        let corpus = Corpus::new(format!("b{case}"), clips).map_err(|e| e.to_string())?;
        let budget = 0.5 + rng.below(60) as f64;
        let seed = rng.below(5) as u64;
        let scores: Vec<ClipScore> = corpus
            .clips()
            .iter()
            .map(|c| ClipScore {
                clip_id: c.id.clone(),
                score: rng.uniform(0.0, 3.0),
            })
            .collect();
        let sets: HashMap<String, TrigramSet> =
            corpus.clips().iter().map(|c| (c.id.clone(), random_set(&mut rng, 6, 3))).collect();
        let embeddings: HashMap<String, Vec<f64>> = corpus
            .clips()
            .iter()
            .map(|c| (c.id.clone(), vec![rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)]))
            .collect();
        let all = [
            select_random(&corpus, budget, seed),
            select_by_loss(&corpus, &scores, budget, seed),
            select_fps_content(&corpus, &sets, budget, seed),
            select_by_transcription(&corpus, &embeddings, 3, budget, seed, WithinClusterOrder::Shuffled),
            select_most_speakers(&corpus, budget, seed),
        ];
        for plan in all {
            stop_rule(&plan.map_err(|e| e.to_string())?)?;
            plans += 1;
        }
    }

    let corpus = generate_corpus(3, 4, (2.0, 6.0), 8).map_err(|e| e.to_string())?;
    let budget = 20.0;
    let plan = select_random(&corpus, budget, 1).map_err(|e| e.to_string())?;
    stop_rule(&plan)?;
    let model = Arc::new(VictimModel::new(VictimConfig::default()).map_err(|e| e.to_string())?);
    let ledger = QueryLedger::new(budget).map_err(|e| e.to_string())?;
    let service = VictimService::spawn(model, ledger, ServiceConfig::default(), "127.0.0.1:0")
        .map_err(|e| e.to_string())?;
    let mut client = VictimClient::new(service.url(), RepresentationCache::in_memory());
    let layers: BTreeSet<usize> = [4, 8, 12].into_iter().collect();
    let mut wire_total = 0.0;
    for clip in corpus.subset(&plan.clip_ids()).map_err(|e| e.to_string())? {
        client.query(clip, &layers).map_err(|e| e.to_string())?;
        wire_total += clip.num_samples() as f64 / f64::from(SAMPLE_RATE);
    }
    let extra = corpus.clips().iter().find(|c| !plan.clip_ids().contains(&c.id.as_str())).unwrap();
    let refused = client.query(extra, &layers);
    check(matches!(refused, Err(Error::BudgetExhausted)), || format!("over-budget query gave {refused:?}"))?;
    let spent = service.shutdown().map_err(|e| e.to_string())?.spent_s();
    check(spent == wire_total, || format!("ledger {spent} != wire total {wire_total}"))?;
    check(spent == plan.total_duration_s, || format!("ledger {spent} != plan total {}", plan.total_duration_s))?;
    Ok(format!("{plans} plans obey the stop rule; ledger {spent} s == wire total exactly"))
}

fn preprocessing_criterion() -> Outcome {
    let long = Corpus::new("p", vec![uniform_clip("a", 32, SAMPLE_RATE)]).map_err(|e| e.to_string())?;
    let out = preprocess(&long, LengthLimits::default()).map_err(|e| e.to_string())?;
    let shape: Vec<(String, f64)> = out.clips().iter().map(|c| (c.id.clone(), c.duration_s())).collect();
    check(
        shape == [("a#0".to_string(), 15.6), ("a#1".to_string(), 15.6)],
        || format!("32 s clip became {shape:?}"),
    )?;

    let mut rng = SplitMix64::new(32);
    for case in 0..500 {
        let rate = if case % 2 == 0 { 1000 } else { 16_000 };
        let clips: Vec<Clip> = (0..1 + rng.below(5))
            .map(|i| {
                let n = 1 + rng.below(50 * rate as usize);
                Clip::new(format!("x{i}"), vec![0.0; n], rate).unwrap()
            })
            .collect();
        let corpus = Corpus::new("r", clips).map_err(|e| e.to_string())?;
        let once = preprocess(&corpus, LengthLimits::default()).map_err(|e| e.to_string())?;
        let twice = preprocess(&once, LengthLimits::default()).map_err(|e| e.to_string())?;
        check(once == twice, || format!("case {case}: preprocess is not idempotent"))?;
        for c in once.clips() {
            let d = c.duration_s();
            check((2.0..=15.6 + 1e-12).contains(&d), || format!("case {case}: {} is {d} s", c.id))?;
        }
    }
    Ok("32 s -> 2 x 15.6 s; 500 random corpora idempotent".into())
}

struct RunResult {
    init: EvalReport,
    trained: EvalReport,
}

/// One attack on a fresh synthetic corpus: random selection at `budget_s`,
/// default training, evaluation on the held-out half.
fn extraction_run(budget_s: f64, seed: u64) -> Result<RunResult, String> {
    let err = |e: Error| e.to_string();
    let corpus = generate_corpus(4, 32, (2.0, 15.6), 100 + seed).map_err(err)?;
    let corpus = preprocess(&corpus, LengthLimits::default()).map_err(err)?;
    let (attack, eval) = split_corpus(&corpus, 0.5).map_err(err)?;
    let victim = VictimModel::new(VictimConfig::default()).map_err(err)?;
    let backbone = Backbone::new(BackboneConfig::default());
    let layers: BTreeSet<usize> = [4, 8, 12].into_iter().collect();
    let plan = select_random(&attack, budget_s, seed).map_err(err)?;
    let pairs = attack
        .subset(&plan.clip_ids())
        .map_err(err)?
        .into_iter()
        .map(|c| {
            let x = c.samples_f64();
            let targets = victim.forward(&x, &layers)?;
            extractbench::extraction::TrainingPair::from_samples(&c.id, &x, &backbone, targets)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let heads = SurrogateHeads::new(&layers, victim.dim(), backbone.dim(), seed).map_err(err)?;
    let config = TrainConfig {
        parallel: true,
        ..TrainConfig::for_budget(budget_s, seed)
    };
    let outcome = train(heads.clone(), &pairs, &config).map_err(err)?;
    let ids = plan.clip_ids();
    let label = |m: &str| RunLabel {
        method: m.into(),
        budget_s,
        seed,
    };
    let setup = EvalSetup::default();
    let init = evaluate(&victim, &heads, &backbone, &eval, &ids, &setup, label("init")).map_err(err)?;
    let trained = evaluate(&victim, &outcome.heads, &backbone, &eval, &ids, &setup, label("random")).map_err(err)?;
    Ok(RunResult { init, trained })
}

fn extraction_criterion() -> Outcome {
    let mut reductions = Vec::new();
    let (mut before, mut after) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        let r = extraction_run(120.0, seed)?;
        reductions.push(1.0 - r.trained.heldout_loss / r.init.heldout_loss);
        before.push(r.init.agreement);
        after.push(r.trained.agreement);
    }
    let (red, a0, a1) = (median(reductions.clone()), median(before), median(after));
    let detail = format!(
        "loss reduction per seed {reductions:.3?} median {red:.3} (need >= 0.5); agreement median {a1:.3} trained vs {a0:.3} init"
    );
    check(red >= 0.5 && a1 > a0, || detail.clone())?;
    Ok(detail)
}

fn trend_criterion() -> Outcome {
    let mut medians = BTreeMap::new();
    for budget in [30.0, 120.0, 480.0] {
        let losses = (0..3)
            .map(|seed| extraction_run(budget, seed).map(|r| r.trained.heldout_loss))
            .collect::<Result<Vec<_>, _>>()?;
        medians.insert(budget as u64, median(losses));
    }
    let m: Vec<f64> = medians.values().copied().collect();
    let detail = format!("median held-out loss by H (s): {medians:.2?}");
    check(m.windows(2).all(|w| w[1] <= w[0]), || detail.clone())?;
    Ok(detail)
}

fn http_post(addr: std::net::SocketAddr, path: &str, body: &str) -> (u16, String) {
    let mut stream = TcpStream::connect(addr).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
    write!(
        stream,
        "POST {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    stream.read_to_string(&mut raw).unwrap();
    let status = raw[9..12].parse().unwrap();
    let body = raw.split_once("\r\n\r\n").map(|(_, b)| b.to_owned()).unwrap_or_default();
    (status, body)
}

fn request_body(id: &str, samples: usize) -> String {
    let zeros = vec!["0"; samples].join(",");
    format!(r#"{{"clip_id":"{id}","sample_rate":16000,"samples":[{zeros}],"layers":[4]}}"#)
}

fn protocol_criterion() -> Outcome {
    let victim = VictimModel::new(VictimConfig::default()).map_err(|e| e.to_string())?;
    let corpus = generate_corpus(2, 2, (2.0, 5.0), 3).map_err(|e| e.to_string())?;
    let layers: BTreeSet<usize> = (1..=12).collect();
    let mut worst = 0.0f64;
    for clip in corpus.clips() {
        let reps = victim.forward(&clip.samples_f64(), &layers).map_err(|e| e.to_string())?;
        let wire = serde_json::to_string(&RepresentationResponse::encode(&clip.id, &reps, 1.5)).unwrap();
        let back: RepresentationResponse = serde_json::from_str(&wire).map_err(|e| e.to_string())?;
        let decoded = back.decode(&layers).map_err(|e| e.to_string())?;
        for (n, m) in reps.iter() {
            let d = decoded.get(n).ok_or("layer lost")?;
            check(d.shape() == m.shape(), || format!("layer {n} shape changed"))?;
            for (a, b) in m.as_slice().iter().zip(d.as_slice()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    check(worst <= 1e-6, || format!("round-trip error {worst:e}"))?;

    let model = Arc::new(victim);
    let service = VictimService::spawn(model, QueryLedger::new(3.0).unwrap(), ServiceConfig::default(), "127.0.0.1:0")
        .map_err(|e| e.to_string())?;
    let addr = service.local_addr();
    let (s413, b413) = http_post(addr, "/v1/representations", &request_body("long", 249_601));
    check(
        s413 == 413 && b413 == r#"{"error":"clip_too_long","max_seconds":15.6}"#,
        || format!("over-length clip: {s413} {b413}"),
    )?;
    let (s200, _) = http_post(addr, "/v1/representations", &request_body("first", 64_000));
    check(s200 == 200, || format!("first clip got {s200}"))?;
    let (s403, b403) = http_post(addr, "/v1/representations", &request_body("second", 16_000));
    check(
        s403 == 403 && b403 == r#"{"error":"budget_exhausted"}"#,
        || format!("exhausted budget: {s403} {b403}"),
    )?;
    service.shutdown().map_err(|e| e.to_string())?;
    Ok(format!("worst round-trip error {worst:.1e}; 413 and 403 bodies exact"))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome, Option<u64>); 10] = [
        ("jaccard oracle and metric", jaccard_criterion, Some(5)),
        ("fps oracle equivalence", fps_criterion, Some(30)),
        ("loss spot values", loss_spot_criterion, None),
        ("gradient check", gradient_criterion, None),
        ("schedule values", schedule_criterion, None),
        ("budget semantics", budget_criterion, None),
        ("preprocessing", preprocessing_criterion, None),
        ("extraction works", extraction_criterion, Some(120)),
        ("budget trend", trend_criterion, Some(600)),
        ("protocol round-trip", protocol_criterion, None),
    ];
    let mut failed = Vec::new();
    for (name, run, limit_s) in criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        let outcome = outcome.and_then(|d| match limit_s {
            Some(limit) if secs >= limit as f64 => Err(format!("{d}; runtime {secs:.1} s over the {limit} s limit")),
            _ => Ok(d),
        });
        let timing = match limit_s {
            Some(limit) => format!("{secs:.1} s, limit {limit} s"),
            None => format!("{secs:.1} s"),
        };
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} ({timing})"),
            Err(detail) => {
                println!("FAIL {name}: {detail} ({timing})");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
