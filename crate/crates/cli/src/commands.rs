use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use extractbench::corpus::{
    generate_corpus, load_manifest, preprocess, save_manifest_with, AudioStorage, Corpus, LengthLimits,
};
use extractbench::evaluation::{self, render_table, split_corpus, EvalReport, EvalSetup, Metric, RunLabel};
use extractbench::extraction::{
    train, write_loss_trace, Checkpoint, SurrogateHeads, TrainingPair,
};
use extractbench::features::{
    kmeans_fit, sample_fraction, seed_warning, stack_rows, tokenize, trigram_set, Backbone,
    BackboneConfig, HashedTrigramEmbedder, KMeansConfig, KMeansModel, TokenCache,
};
use extractbench::rng::derive_seed;
use extractbench::selection::{
    embed_transcriptions, pretraining_loss_score, select_by_loss, select_by_transcription,
    select_fps_content, select_most_speakers, select_random, SelectionMethod, SelectionPlan,
    WithinClusterOrder,
};
use extractbench::victim::{
    serve_until_signal, QueryLedger, RepresentationCache, ServiceConfig, VictimClient, VictimConfig,
    VictimModel, VictimService,
};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Storage};

const METRICS: [Metric; 4] = [
    Metric::Agreement,
    Metric::HeldoutLoss,
    Metric::SurrogateAccuracy,
    Metric::MeanSimilarity,
];

/// Fixed file names inside a run directory.
pub struct RunLayout {
    pub root: PathBuf,
    pub corpus: PathBuf,
}

impl RunLayout {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            root: cfg.run_dir.clone(),
            corpus: cfg.corpus_dir(),
        }
    }

    pub fn attack_manifest(&self) -> PathBuf {
        self.corpus.join("attack.jsonl")
    }

    pub fn eval_manifest(&self) -> PathBuf {
        self.corpus.join("eval.jsonl")
    }

    pub fn cache(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn plan(&self) -> PathBuf {
        self.root.join("plan.json")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint.json")
    }

    pub fn loss_trace(&self) -> PathBuf {
        self.root.join("loss_trace.csv")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_text(&self) -> PathBuf {
        self.root.join("report.txt")
    }
}

fn prepare(cfg: &RunConfig, command: &str) -> Result<RunLayout> {
    let layout = RunLayout::new(cfg);
    fs::create_dir_all(&layout.root).with_context(|| format!("creating {}", layout.root.display()))?;
    let text = serde_json::to_string_pretty(cfg)? + "\n";
    let path = layout.root.join("config.json");
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    run_log(cfg, &format!("{command} started"))?;
    Ok(layout)
}

/// Appends a timestamped line to `run.log`; timestamps live nowhere else.
fn run_log(cfg: &RunConfig, message: &str) -> Result<()> {
    let path = cfg.run_dir.join("run.log");
    let ts = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .with_context(|| format!("opening {}", path.display()))?;
    writeln!(f, "{}.{:03} {message}", ts.as_secs(), ts.subsec_millis())?;
    info!("{message}");
    Ok(())
}

fn backbone(cfg: &RunConfig) -> Backbone {
    if let Some(msg) = seed_warning(cfg.seeds.attack, cfg.seeds.victim) {
        warn!("{msg}");
    }
    Backbone::new(BackboneConfig {
        dim: cfg.extraction.feature_dim,
        seed: cfg.seeds.attack,
        ..BackboneConfig::default()
    })
}

fn victim_model(cfg: &RunConfig) -> Result<VictimModel> {
    Ok(VictimModel::new(VictimConfig {
        num_layers: cfg.victim.num_layers,
        dim: cfg.victim.dim,
        seed: cfg.seeds.victim,
        ..VictimConfig::default()
    })?)
}

fn service_config(cfg: &RunConfig, ledger_log: Option<&Path>) -> ServiceConfig {
    ServiceConfig {
        allowed_layers: cfg.victim.allowed_layers.iter().copied().collect(),
        ledger_log: ledger_log.map(Path::to_path_buf),
        ..ServiceConfig::default()
    }
}

pub fn gen_corpus(cfg: &RunConfig) -> Result<()> {
    let layout = prepare(cfg, "gen-corpus")?;
    let c = &cfg.corpus;
    let raw = generate_corpus(
        c.speakers,
        c.clips_per_speaker,
        (c.min_duration_s, c.max_duration_s),
        cfg.seeds.corpus,
    )?;
    let corpus = preprocess(&raw, LengthLimits::default())?;
    let (attack, eval) = split_corpus(&corpus, c.eval_fraction)?;
    let storage = match c.storage {
        Storage::Wav => AudioStorage::Wav,
        Storage::Inline => AudioStorage::Inline,
    };
    if layout.corpus.join("audio").exists() {
        fs::remove_dir_all(layout.corpus.join("audio"))?;
    }
    fs::create_dir_all(&layout.corpus)?;
    save_manifest_with(&attack, &layout.attack_manifest(), storage)?;
    save_manifest_with(&eval, &layout.eval_manifest(), storage)?;
    let total = corpus.total_duration_s();
    let stats = format!(
        "corpus: {} clips from {} raw, {} speakers, total {:.4} h ({total:.1} s); attack {} clips {:.1} s, eval {} clips {:.1} s",
        corpus.len(),
        raw.len(),
        c.speakers,
        total / 3600.0,
        attack.len(),
        attack.total_duration_s(),
        eval.len(),
        eval.total_duration_s(),
    );
    println!("{stats}");
    run_log(cfg, &stats)
}

pub fn serve_victim(cfg: &RunConfig, ledger_log: Option<&Path>) -> Result<()> {
    let model = Arc::new(victim_model(cfg)?);
    let ledger = QueryLedger::new(cfg.victim.budget_s)?;
    let ledger = serve_until_signal(
        model,
        ledger,
        service_config(cfg, ledger_log),
        &cfg.victim.bind,
        |addr| {
            println!("listening on http://{addr}");
            let _ = std::io::stdout().flush();
        },
    )?;
    println!(
        "stopped: {} requests, {:.3} s of {:.3} s spent",
        ledger.request_count(),
        ledger.spent_s(),
        ledger.limit_s
    );
    Ok(())
}

fn load_attack(layout: &RunLayout) -> Result<Corpus> {
    let path = layout.attack_manifest();
    load_manifest(&path).with_context(|| format!("loading attack corpus {} (run gen-corpus first)", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct KMeansParams {
    k: usize,
    frame_fraction: f64,
    attack_seed: u64,
    backbone: BackboneConfig,
    corpus_clips: usize,
}

#[derive(Serialize, Deserialize)]
struct KMeansCacheFile {
    params: KMeansParams,
    model: KMeansModel,
}

/// Token model over a frame sample of the attack corpus, reused from
/// `cache/kmeans.json` when the parameters match.
fn token_model(cfg: &RunConfig, layout: &RunLayout, corpus: &Corpus, backbone: &Backbone) -> Result<KMeansModel> {
    let path = layout.cache().join("kmeans.json");
    let params = KMeansParams {
        k: cfg.selection.k,
        frame_fraction: cfg.selection.frame_fraction,
        attack_seed: cfg.seeds.attack,
        backbone: *backbone.config(),
        corpus_clips: corpus.len(),
    };
    if let Ok(text) = fs::read_to_string(&path) {
        match serde_json::from_str::<KMeansCacheFile>(&text) {
            Ok(cached) if cached.params == params => {
                info!("reusing k-means model from {}", path.display());
                return Ok(cached.model);
            }
            Ok(_) => info!("k-means parameters changed, rebuilding"),
            Err(e) => warn!("ignoring unreadable {}: {e}", path.display()),
        }
    }
    let features = corpus
        .clips()
        .iter()
        .map(|c| backbone.features(&c.samples_f64()))
        .collect::<extractbench::Result<Vec<_>>>()?;
    let pool = stack_rows(&features)?;
    let sample = sample_fraction(&pool, params.frame_fraction, derive_seed(params.attack_seed, "kmeans-sample"))?;
    let model = kmeans_fit(&sample, KMeansConfig::new(params.k, derive_seed(params.attack_seed, "kmeans")))?;
    info!(
        "fitted k-means: k={} on {} of {} frames, {} iterations",
        model.k(),
        sample.rows(),
        pool.rows(),
        model.iterations
    );
    fs::create_dir_all(layout.cache())?;
    let file = KMeansCacheFile { params, model };
    fs::write(&path, serde_json::to_string(&file)? + "\n")?;
    Ok(file.model)
}

fn build_plan(cfg: &RunConfig, layout: &RunLayout, corpus: &Corpus) -> Result<SelectionPlan> {
    let h = cfg.selection.budget_s;
    let seed = cfg.seeds.attack;
    let plan = match cfg.selection.method {
        SelectionMethod::Random => select_random(corpus, h, seed)?,
        SelectionMethod::MostSpeakers => select_most_speakers(corpus, h, seed)?,
        SelectionMethod::Transcription => {
            let embeddings = embed_transcriptions(corpus, &HashedTrigramEmbedder::default())?;
            select_by_transcription(
                corpus,
                &embeddings,
                cfg.selection.transcription_k,
                h,
                seed,
                WithinClusterOrder::Shuffled,
            )?
        }
        SelectionMethod::Loss => {
            let backbone = backbone(cfg);
            let model = token_model(cfg, layout, corpus, &backbone)?;
            let scores = corpus
                .clips()
                .iter()
                .map(|c| pretraining_loss_score(c, &backbone, &model))
                .collect::<extractbench::Result<Vec<_>>>()?;
            select_by_loss(corpus, &scores, h, seed)?
        }
        SelectionMethod::Content => {
            let backbone = backbone(cfg);
            let model = token_model(cfg, layout, corpus, &backbone)?;
            let hash = model.model_hash();
            let mut cache = TokenCache::open(&layout.cache().join("tokens.jsonl"))?;
            let mut sets = HashMap::with_capacity(corpus.len());
            for clip in corpus.clips() {
                let tokens = match cache.get(&clip.id, &hash) {
                    Some(t) => t.clone(),
                    None => {
                        let t = tokenize(&backbone.features(&clip.samples_f64())?, &model)?;
                        cache.insert(&clip.id, &hash, t.clone())?;
                        t
                    }
                };
                sets.insert(clip.id.clone(), trigram_set(&tokens));
            }
            select_fps_content(corpus, &sets, h, seed)?
        }
    };
    Ok(plan)
}

pub fn select(cfg: &RunConfig) -> Result<()> {
    let layout = prepare(cfg, "select")?;
    let corpus = load_attack(&layout)?;
    let plan = build_plan(cfg, &layout, &corpus)?;
    plan.save(&layout.plan())?;
    let msg = format!(
        "selected {} clips by {}: total {:.3} s vs H = {} s{}",
        plan.len(),
        plan.method,
        plan.total_duration_s,
        plan.budget_s,
        if plan.exhausted { " (corpus exhausted)" } else { "" }
    );
    println!("{msg}");
    run_log(cfg, &msg)
}

fn load_plan(layout: &RunLayout) -> Result<SelectionPlan> {
    let path = layout.plan();
    SelectionPlan::load(&path).with_context(|| format!("loading plan {} (run select first)", path.display()))
}

pub fn extract(cfg: &RunConfig) -> Result<()> {
    let layout = prepare(cfg, "extract")?;
    let plan = load_plan(&layout)?;
    let corpus = load_attack(&layout)?;
    let clips = corpus.subset(&plan.clip_ids())?;
    let layers = cfg.target_layers();
    fs::create_dir_all(layout.cache())?;
    let cache = RepresentationCache::open(&layout.cache().join("representations.jsonl"))?;
    let mut client = VictimClient::new(cfg.victim.url.clone(), cache);
    let backbone = backbone(cfg);
    let mut pairs = Vec::with_capacity(clips.len());
    for clip in &clips {
        let targets = client
            .query(clip, &layers)
            .with_context(|| format!("querying victim for {}", clip.id))?;
        pairs.push(TrainingPair::from_samples(&clip.id, &clip.samples_f64(), &backbone, targets)?);
    }
    let msg = format!(
        "queried {} clips: {} network requests, {:.3} s charged (plan total {:.3} s)",
        clips.len(),
        client.network_requests(),
        client.charged_seconds(),
        plan.total_duration_s
    );
    println!("{msg}");
    run_log(cfg, &msg)?;

    let config = cfg.train_config(plan.budget_s, cfg.seeds.attack);
    let heads = SurrogateHeads::new(&layers, cfg.victim.dim, backbone.dim(), cfg.seeds.attack)?;
    let outcome = train(heads, &pairs, &config)?;
    Checkpoint::new(&outcome.heads, config, outcome.final_loss()).save(&layout.checkpoint())?;
    write_loss_trace(&layout.loss_trace(), &outcome.trace)?;
    let first = outcome.trace.first().map_or(f64::NAN, |r| r.batch_loss);
    let last = outcome.final_loss().unwrap_or(f64::NAN);
    let msg = format!(
        "trained {} steps on {} clips: batch loss {first:.4} -> {last:.4}",
        config.steps,
        pairs.len()
    );
    println!("{msg}");
    run_log(cfg, &msg)
}

fn report_text(report: &EvalReport) -> String {
    let mut out = format!(
        "method {} H={} s seed {}\nagreement {:.4}\nvictim probe accuracy {:.4}\nsurrogate probe accuracy {:.4}\nheld-out loss {:.4}\n",
        report.method,
        report.budget_s,
        report.seed,
        report.agreement,
        report.victim_probe_accuracy,
        report.surrogate_probe_accuracy,
        report.heldout_loss
    );
    for (layer, cos) in &report.layer_similarity {
        out.push_str(&format!("layer {layer} cosine {cos:.4}\n"));
    }
    out.push_str(&format!(
        "probe layer {}, {} eval clips, {} probe test clips\n",
        report.probe_layer, report.eval_clips, report.probe_test_clips
    ));
    out
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let layout = prepare(cfg, "evaluate")?;
    let path = layout.checkpoint();
    let checkpoint = Checkpoint::load(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let heads = checkpoint.heads()?;
    let plan = load_plan(&layout)?;
    let eval_path = layout.eval_manifest();
    let eval_corpus =
        load_manifest(&eval_path).with_context(|| format!("loading eval corpus {}", eval_path.display()))?;
    let setup = EvalSetup {
        probe_train_fraction: cfg.evaluation.probe_train_fraction,
        probe_layer: cfg.evaluation.probe_layer,
        eps_norm: cfg.extraction.eps_norm,
    };
    let label = RunLabel {
        method: plan.method.to_string(),
        budget_s: plan.budget_s,
        seed: cfg.seeds.attack,
    };
    let victim = victim_model(cfg)?;
    let report = evaluation::evaluate(
        &victim,
        &heads,
        &backbone(cfg),
        &eval_corpus,
        &plan.clip_ids(),
        &setup,
        label,
    )?;
    report.save(&layout.report())?;
    let text = report_text(&report);
    fs::write(layout.report_text(), &text)?;
    print!("{text}");
    run_log(cfg, &format!("evaluated: agreement {:.4}, held-out loss {:.4}", report.agreement, report.heldout_loss))
}

pub fn sweep(cfg: &RunConfig) -> Result<()> {
    cfg.validate_sweep()?;
    let layout = prepare(cfg, "sweep")?;
    if !layout.attack_manifest().exists() || !layout.eval_manifest().exists() {
        info!("no corpus under {}, generating it", layout.corpus.display());
        gen_corpus(cfg)?;
    }
    let model = Arc::new(victim_model(cfg)?);
    let sweep_dir = layout.root.join("sweep");
    let mut reports = Vec::new();
    for &method in &cfg.sweep.methods {
        for &budget in &cfg.sweep.budgets_s {
            for &offset in &cfg.sweep.seed_offsets {
                let mut run = cfg.clone();
                run.run_dir = sweep_dir.join(format!("{method}_H{budget}_s{offset}"));
                run.corpus.dir = Some(layout.corpus.clone());
                run.selection.method = method;
                run.selection.budget_s = budget;
                run.seeds.attack = cfg.seeds.attack.wrapping_add(offset);
                let service = VictimService::spawn(
                    Arc::clone(&model),
                    QueryLedger::new(cfg.victim.budget_s)?,
                    service_config(cfg, None),
                    "127.0.0.1:0",
                )?;
                run.victim.url = service.url();
                select(&run)?;
                extract(&run)?;
                evaluate(&run)?;
                let ledger = service.shutdown()?;
                run_log(
                    &run,
                    &format!("victim ledger: {} requests, {:.3} s spent", ledger.request_count(), ledger.spent_s()),
                )?;
                reports.push(EvalReport::load(&RunLayout::new(&run).report())?);
            }
        }
    }
    let mut table = String::new();
    for metric in METRICS {
        table.push_str(&render_table(&reports, metric));
        table.push('\n');
    }
    fs::write(sweep_dir.join("table.txt"), &table)?;
    let mut lines = String::new();
    for r in &reports {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    fs::write(sweep_dir.join("reports.jsonl"), lines)?;
    print!("{table}");
    run_log(cfg, &format!("sweep finished: {} runs", reports.len()))
}
