//! Stage implementations. Every stage reads and writes only declared
//! artifacts under the output directory, skips itself when its outputs
//! already exist (unless forced), and is a deterministic function of
//! (corpus, config, seed).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Result};
use serde::Serialize;

use ssr_core::corpus::{
    build_vocab, detokenize, load_windows, read_lines, synth_corpus, TokenSeq, Vocab,
};
use ssr_core::curriculum::{self, CurriculumSchedule, Strategy};
use ssr_core::dataset::{
    self, read_dataset, write_dataset, Mode, SsrExample,
};
use ssr_core::generators::{
    train_ngram, ExternalGenerator, IdentityGenerator, NgramGenerator, NgramLM,
    RuleNoiseGenerator, SpanGenerator,
};
use ssr_core::masking::sample_spans;
use ssr_core::model::{load_checkpoint, save_checkpoint};
use ssr_core::rng::stream_rng;
use ssr_core::tasks::{evaluate, make_synth_gec};
use ssr_core::training::{as_self_generator, finetune, pretrain, MetricsRecord};

use crate::config::{GeneratorKind, PipelineConfig};

/// Artifact paths under the output directory.
pub struct Artifacts {
    out: PathBuf,
}

impl Artifacts {
    pub fn new(out: &Path) -> Self {
        Self { out: out.to_path_buf() }
    }

    pub fn vocab(&self) -> PathBuf {
        self.out.join("vocab.tsv")
    }
    pub fn generator(&self) -> PathBuf {
        self.out.join("generator.json")
    }
    pub fn dataset(&self, mode: Mode) -> PathBuf {
        self.out.join(format!("dataset.{mode}.jsonl"))
    }
    pub fn scored_dataset(&self) -> PathBuf {
        self.out.join("dataset.ssr.scored.jsonl")
    }
    pub fn bucket_stats(&self) -> PathBuf {
        self.out.join("bucket_stats.json")
    }
    pub fn task_split(&self, split: &str) -> PathBuf {
        self.out.join(format!("task.{split}.jsonl"))
    }
    pub fn checkpoint(&self, stage: &str) -> PathBuf {
        self.out.join(format!("ckpt.{stage}.bin"))
    }
    pub fn metrics(&self, stage: &str) -> PathBuf {
        self.out.join(format!("metrics.{stage}.jsonl"))
    }
    pub fn report(&self) -> PathBuf {
        self.out.join("report.json")
    }
    pub fn ablation(&self) -> PathBuf {
        self.out.join("ablation.json")
    }
    pub fn lock(&self) -> PathBuf {
        self.out.join(".lock")
    }
}

/// Exclusive per-output-directory lock; removed on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(arts: &Artifacts) -> Result<Self> {
        std::fs::create_dir_all(&arts.out)?;
        let path = arts.lock();
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!(
                    "output directory {} is locked by another command (remove {} if stale)",
                    arts.out.display(),
                    path.display()
                )
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn missing_input(path: &Path, producer: &str) -> anyhow::Error {
    anyhow!("missing input: {} (run {} first)", path.display(), producer)
}

fn require(path: PathBuf, producer: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(missing_input(&path, producer))
    }
}

fn stage_done(outputs: &[PathBuf], force: bool, stage: &str) -> bool {
    if force {
        return false;
    }
    if outputs.iter().all(|p| p.exists()) {
        log::info!("skip {stage}: outputs exist (use --force to rebuild)");
        return true;
    }
    false
}

/// Write a synthetic demo corpus, one document per line.
pub fn cmd_gen_corpus(n_docs: usize, seed: u64, to: &Path) -> Result<()> {
    if let Some(parent) = to.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let docs = synth_corpus(n_docs, seed);
    let mut w = BufWriter::new(File::create(to)?);
    for d in &docs {
        writeln!(w, "{d}")?;
    }
    w.flush()?;
    log::info!("wrote {} documents to {}", docs.len(), to.display());
    Ok(())
}

pub fn cmd_build_vocab(cfg: &PipelineConfig, force: bool) -> Result<()> {
    let arts = Artifacts::new(&cfg.out_dir);
    if stage_done(&[arts.vocab()], force, "build-vocab") {
        return Ok(());
    }
    let lines = read_lines(&cfg.corpus.paths)?;
    let vocab = build_vocab(&lines, &cfg.corpus.to_corpus_config())?;
    vocab.save(&arts.vocab())?;
    log::info!(
        "vocab: {} entries ({} specials) -> {}",
        vocab.len(),
        vocab.n_special(),
        arts.vocab().display()
    );
    Ok(())
}

fn load_vocab(cfg: &PipelineConfig) -> Result<Vocab> {
    let arts = Artifacts::new(&cfg.out_dir);
    let path = require(arts.vocab(), "build-vocab")?;
    Ok(Vocab::load(&path)?)
}

fn corpus_windows(cfg: &PipelineConfig, vocab: &Vocab) -> Result<Vec<TokenSeq>> {
    let lines = read_lines(&cfg.corpus.paths)?;
    Ok(load_windows(&lines, vocab, &cfg.corpus.to_corpus_config()))
}


pub fn cmd_train_generator(cfg: &PipelineConfig, force: bool) -> Result<()> {
    let arts = Artifacts::new(&cfg.out_dir);
    if stage_done(&[arts.generator()], force, "train-generator") {
        return Ok(());
    }
    let vocab = load_vocab(cfg)?;
    let windows = corpus_windows(cfg, &vocab)?;
    let lm = train_ngram(&windows, cfg.generator.order, cfg.generator.alpha, &vocab)?;
    let json = serde_json::to_string(&lm.to_snapshot())?;
    std::fs::write(arts.generator(), json)?;
    log::info!("n-gram generator (order {}) -> {}", cfg.generator.order, arts.generator().display());
    Ok(())
}

/// Instantiate the configured generator, loading whatever artifact it needs.
pub fn make_generator(cfg: &PipelineConfig, vocab: &Vocab) -> Result<Box<dyn SpanGenerator>> {
    let arts = Artifacts::new(&cfg.out_dir);
    Ok(match cfg.generator.kind {
        GeneratorKind::Identity => Box::new(IdentityGenerator),
        GeneratorKind::Rule => Box::new(RuleNoiseGenerator::new(cfg.generator.noise.to_noise_config())),
        GeneratorKind::Ngram => {
            let path = require(arts.generator(), "train-generator")?;
            let snap = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            let lm = NgramLM::from_snapshot(snap)?;
            Box::new(NgramGenerator::new(lm))
        }
        GeneratorKind::SelfGen => {
            let path = require(arts.checkpoint("infill"), "pretrain --objective infill")?;
            let ckpt = load_checkpoint(&path)?;
            if ckpt.params.config.vocab_size != vocab.len() {
                bail!(
                    "checkpoint vocab {} does not match vocab file {}",
                    ckpt.params.config.vocab_size,
                    vocab.len()
                );
            }
            Box::new(as_self_generator(&ckpt)?)
        }
        GeneratorKind::External => Box::new(ExternalGenerator::spawn(
            &cfg.generator.external_cmd,
            Duration::from_secs(cfg.generator.timeout_secs),
        )?),
    })
}

pub fn cmd_build_dataset(cfg: &PipelineConfig, mode: Mode, force: bool) -> Result<()> {
    let arts = Artifacts::new(&cfg.out_dir);
    let out_path = arts.dataset(mode);
    if stage_done(&[out_path.clone()], force, "build-dataset") {
        return Ok(());
    }
    let vocab = load_vocab(cfg)?;
    let windows = dataset::sample_windows(
        corpus_windows(cfg, &vocab)?,
        cfg.dataset.max_examples,
        cfg.seed,
        "dataset-sample",
    );
    let mask_cfg = cfg.masking.to_mask_config();
    let gen_cfg = cfg.generator.to_gen_config();
    let noise_cfg = cfg.generator.noise.to_noise_config();

    let generator = match mode {
        Mode::Ssr | Mode::Distill => Some(make_generator(cfg, &vocab)?),
        _ => None,
    };

    let mut examples: Vec<SsrExample> = Vec::with_capacity(windows.len());
    for w in &windows {
        match mode {
            Mode::Infill => {
                let mask = sample_spans(w, &mut stream_rng(cfg.seed, "mask", &w.doc_id), &mask_cfg)?;
                examples.push(dataset::build_infill_example(&mask, &vocab)?);
            }
            Mode::Denoise => {
                let mut rng = stream_rng(cfg.seed, "denoise", &w.doc_id);
                examples.push(dataset::build_denoise_example(w, &noise_cfg, &vocab, &mut rng)?);
            }
            Mode::Ssr | Mode::Distill => {
                let generator = generator.as_ref().expect("generator for rewrite modes");
                let mask = sample_spans(w, &mut stream_rng(cfg.seed, "mask", &w.doc_id), &mask_cfg)?;
                let out = generator.generate(
                    &mask,
                    &vocab,
                    &gen_cfg,
                    &mut stream_rng(cfg.seed, "gen", &w.doc_id),
                )?;
                let (mask, out) = if cfg.dataset.keep_exact_copies {
                    (mask, out)
                } else {
                    match dataset::filter_exact_copies(&mask, &out)? {
                        Some(filtered) => filtered,
                        None => continue,
                    }
                };
                examples.push(match mode {
                    Mode::Ssr => dataset::build_ssr_example(&mask, &out, &vocab)?,
                    _ => dataset::build_distill_example(&mask, &out, &vocab)?,
                });
            }
            Mode::Finetune => bail!("finetune pairs are produced by make-task, not build-dataset"),
        }
    }
    examples.sort_by(|a, b| a.id.cmp(&b.id));
    let n = write_dataset(&examples, &out_path)?;
    log::info!("{n} {mode} examples -> {}", out_path.display());
    Ok(())
}

pub fn cmd_score_curriculum(cfg: &PipelineConfig, force: bool) -> Result<()> {
    let arts = Artifacts::new(&cfg.out_dir);
    if stage_done(&[arts.scored_dataset(), arts.bucket_stats()], force, "score-curriculum") {
        return Ok(());
    }
    let path = require(arts.dataset(Mode::Ssr), "build-dataset --mode ssr")?;
    let mut examples = read_dataset(&path)?;
    let strategy = cfg.curriculum.strategy;
    // `none` needs no buckets but the scored file is still written so later
    // stages have a single input path
    let bucket_strategy = if strategy == Strategy::None {
        Strategy::Curriculum
    } else {
        strategy
    };
    curriculum::bucketize(&mut examples, cfg.curriculum.k, bucket_strategy)?;
    let stats = curriculum::bucket_stats(&examples, bucket_strategy)?;
    write_dataset(&examples, &arts.scored_dataset())?;
    std::fs::write(arts.bucket_stats(), serde_json::to_string_pretty(&stats)?)?;
    for s in &stats {
        log::info!(
            "bucket {}: {} examples, score {:.4}..{:.4} (mean {:.4})",
            s.bucket,
            s.count,
            s.min_score,
            s.max_score,
            s.mean_score
        );
    }
    Ok(())
}

fn metrics_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn append_metrics(w: &mut BufWriter<File>, record: &MetricsRecord) -> Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn stage_name(objective: Mode) -> &'static str {
    match objective {
        Mode::Infill => "infill",
        Mode::Ssr => "ssr",
        Mode::Distill => "distill",
        Mode::Denoise => "denoise",
        Mode::Finetune => "finetune",
    }
}

pub fn cmd_pretrain(cfg: &PipelineConfig, objective: Mode, force: bool) -> Result<()> {
    let arts = Artifacts::new(&cfg.out_dir);
    let stage = stage_name(objective);
    let ckpt_path = arts.checkpoint(stage);
    let metrics_path = arts.metrics(stage);
    if stage_done(&[ckpt_path.clone(), metrics_path.clone()], force, stage) {
        return Ok(());
    }
    let vocab = load_vocab(cfg)?;

    let (examples, section, strategy) = match objective {
        Mode::Infill => {
            let path = require(arts.dataset(Mode::Infill), "build-dataset --mode infill")?;
            (read_dataset(&path)?, &cfg.pretrain, Strategy::None)
        }
        Mode::Ssr => {
            let path = require(arts.scored_dataset(), "score-curriculum")?;
            (read_dataset(&path)?, &cfg.ssr, cfg.curriculum.strategy)
        }
        Mode::Distill => {
            let path = require(arts.dataset(Mode::Distill), "build-dataset --mode distill")?;
            (read_dataset(&path)?, &cfg.ssr, Strategy::None)
        }
        Mode::Denoise => {
            let path = require(arts.dataset(Mode::Denoise), "build-dataset --mode denoise")?;
            (read_dataset(&path)?, &cfg.ssr, Strategy::None)
        }
        Mode::Finetune => bail!("use the finetune command for task training"),
    };

    // continual stages start from the infilling checkpoint unless configured
    // to train from scratch
    let init = if objective == Mode::Infill || section.from_scratch {
        None
    } else {
        let path = require(arts.checkpoint("infill"), "pretrain --objective infill")?;
        Some(load_checkpoint(&path)?)
    };

    let schedule = CurriculumSchedule::new(
        strategy,
        cfg.curriculum.k,
        cfg.curriculum.mix_current,
        section.steps,
    )?;
    let model_cfg = cfg.model.to_model_config(vocab.len());
    let train_cfg = section.to_train_config(cfg.seed);
    let mut metrics = metrics_writer(&metrics_path)?;
    let (ckpt, _) = pretrain(
        init.as_ref(),
        &examples,
        objective,
        &schedule,
        &model_cfg,
        &train_cfg,
        |snapshot, record| {
            append_metrics(&mut metrics, record).map_err(to_core_error)?;
            save_checkpoint(snapshot, &ckpt_path)?;
            log::info!(
                "{stage} step {}/{} loss {:.4} (phase {})",
                record.step,
                train_cfg.steps,
                record.train_loss,
                record.phase
            );
            Ok(())
        },
    )?;
    save_checkpoint(&ckpt, &ckpt_path)?;
    log::info!("{stage} checkpoint -> {}", ckpt_path.display());
    Ok(())
}

fn to_core_error(e: anyhow::Error) -> ssr_core::Error {
    ssr_core::Error::InvalidConfig(e.to_string())
}

pub fn cmd_make_task(cfg: &PipelineConfig, force: bool) -> Result<()> {
    let arts = Artifacts::new(&cfg.out_dir);
    let outputs = [
        arts.task_split("train"),
        arts.task_split("dev"),
        arts.task_split("test"),
    ];
    if stage_done(&outputs, force, "make-task") {
        return Ok(());
    }
    let vocab = load_vocab(cfg)?;
    let windows = corpus_windows(cfg, &vocab)?;
    let mut splits = make_synth_gec(
        &windows,
        &cfg.task.noise.to_noise_config(),
        &vocab,
        cfg.seed,
        cfg.task.train_frac,
        cfg.task.dev_frac,
    )?;
    if let Some(cap) = cfg.task.max_train {
        splits.train.truncate(cap);
    }
    if let Some(cap) = cfg.task.max_dev {
        splits.dev.truncate(cap);
    }
    if let Some(cap) = cfg.task.max_test {
        splits.test.truncate(cap);
    }
    for (name, data) in [
        ("train", &splits.train),
        ("dev", &splits.dev),
        ("test", &splits.test),
    ] {
        let n = write_dataset(data.iter(), &arts.task_split(name))?;
        log::info!("task {name}: {n} pairs");
    }
    Ok(())
}

/// Pick the strongest available pre-trained checkpoint for fine-tuning.
fn default_finetune_init(arts: &Artifacts) -> Result<PathBuf> {
    for stage in ["ssr", "distill", "denoise", "infill"] {
        let p = arts.checkpoint(stage);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(missing_input(&arts.checkpoint("ssr"), "pretrain"))
}

pub fn cmd_finetune(cfg: &PipelineConfig, init_override: Option<&Path>, force: bool) -> Result<()> {
    let arts = Artifacts::new(&cfg.out_dir);
    let ckpt_path = arts.checkpoint("finetune");
    let metrics_path = arts.metrics("finetune");
    if stage_done(&[ckpt_path.clone(), metrics_path.clone()], force, "finetune") {
        return Ok(());
    }
    let vocab = load_vocab(cfg)?;
    let train = read_dataset(&require(arts.task_split("train"), "make-task")?)?;
    let dev = read_dataset(&require(arts.task_split("dev"), "make-task")?)?;
    let init_path = match init_override {
        Some(p) => require(p.to_path_buf(), "pretrain")?,
        None => default_finetune_init(&arts)?,
    };
    log::info!("fine-tuning from {}", init_path.display());
    let init = load_checkpoint(&init_path)?;
    let train_cfg = cfg.finetune.to_train_config(cfg.seed);
    let mut metrics = metrics_writer(&metrics_path)?;
    let (best, _) = finetune(&init, &train, &dev, &vocab, &train_cfg, |snapshot, record| {
        append_metrics(&mut metrics, record).map_err(to_core_error)?;
        save_checkpoint(snapshot, &ckpt_path)?;
        log::info!(
            "finetune step {} loss {:.4} dev {:.4}",
            record.step,
            record.train_loss,
            record.dev_metric.unwrap_or(0.0)
        );
        Ok(())
    })?;
    save_checkpoint(&best, &ckpt_path)?;
    log::info!(
        "best fine-tuned checkpoint (step {}) -> {}",
        best.step,
        ckpt_path.display()
    );
    Ok(())
}

pub fn cmd_evaluate(cfg: &PipelineConfig, ckpt_override: Option<&Path>, force: bool) -> Result<()> {
    let arts = Artifacts::new(&cfg.out_dir);
    if stage_done(&[arts.report()], force, "evaluate") {
        return Ok(());
    }
    let vocab = load_vocab(cfg)?;
    let test = read_dataset(&require(arts.task_split("test"), "make-task")?)?;
    let ckpt_path = match ckpt_override {
        Some(p) => require(p.to_path_buf(), "finetune")?,
        None => require(arts.checkpoint("finetune"), "finetune")?,
    };
    let ckpt = load_checkpoint(&ckpt_path)?;
    // record only the file name so reports compare equal across output dirs
    let ckpt_name = ckpt_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| ckpt_path.display().to_string());
    let report = evaluate(&ckpt.params, &test, &vocab, &ckpt_name, "synthetic-rewrite")?;
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(arts.report(), &json)?;
    println!("{json}");
    Ok(())
}

pub fn cmd_run_all(cfg: &PipelineConfig, force: bool) -> Result<()> {
    cmd_build_vocab(cfg, force)?;
    cmd_build_dataset(cfg, Mode::Infill, force)?;
    if cfg.generator.kind == GeneratorKind::Ngram {
        cmd_train_generator(cfg, force)?;
    }
    cmd_pretrain(cfg, Mode::Infill, force)?;
    cmd_build_dataset(cfg, Mode::Ssr, force)?;
    cmd_score_curriculum(cfg, force)?;
    cmd_pretrain(cfg, Mode::Ssr, force)?;
    cmd_make_task(cfg, force)?;
    cmd_finetune(cfg, None, force)?;
    cmd_evaluate(cfg, None, force)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblationRow {
    strategy: String,
    test_f05: f64,
    test_exact_match: f64,
    test_rouge_l: f64,
    copy_f05: f64,
}

/// Run the rewrite stage plus fine-tuning under every curriculum strategy,
/// sharing the corpus, datasets, infilling checkpoint, task splits, and
/// seeds; emit one comparative table.
pub fn cmd_ablate_curriculum(cfg: &PipelineConfig, force: bool) -> Result<()> {
    let arts = Artifacts::new(&cfg.out_dir);
    if stage_done(&[arts.ablation()], force, "ablate-curriculum") {
        return Ok(());
    }
    // shared inputs
    cmd_build_vocab(cfg, false)?;
    cmd_build_dataset(cfg, Mode::Infill, false)?;
    if cfg.generator.kind == GeneratorKind::Ngram {
        cmd_train_generator(cfg, false)?;
    }
    cmd_pretrain(cfg, Mode::Infill, false)?;
    cmd_build_dataset(cfg, Mode::Ssr, false)?;
    cmd_make_task(cfg, false)?;

    let vocab = load_vocab(cfg)?;
    let raw = read_dataset(&arts.dataset(Mode::Ssr))?;
    let infill_ckpt = load_checkpoint(&arts.checkpoint("infill"))?;
    let train = read_dataset(&arts.task_split("train"))?;
    let dev = read_dataset(&arts.task_split("dev"))?;
    let test = read_dataset(&arts.task_split("test"))?;

    let mut rows = Vec::new();
    for strategy in curriculum::ALL_STRATEGIES {
        let mut examples = raw.clone();
        let bucket_strategy = if strategy == Strategy::None {
            Strategy::Curriculum
        } else {
            strategy
        };
        curriculum::bucketize(&mut examples, cfg.curriculum.k, bucket_strategy)?;
        let schedule = CurriculumSchedule::new(
            strategy,
            cfg.curriculum.k,
            cfg.curriculum.mix_current,
            cfg.ssr.steps,
        )?;
        let train_cfg = cfg.ssr.to_train_config(cfg.seed);
        let model_cfg = cfg.model.to_model_config(vocab.len());
        let (ssr_ckpt, _) = pretrain(
            Some(&infill_ckpt),
            &examples,
            Mode::Ssr,
            &schedule,
            &model_cfg,
            &train_cfg,
            |_, _| Ok(()),
        )?;
        let ft_cfg = cfg.finetune.to_train_config(cfg.seed);
        let (best, _) = finetune(&ssr_ckpt, &train, &dev, &vocab, &ft_cfg, |_, _| Ok(()))?;
        let report = evaluate(&best.params, &test, &vocab, "(ablation)", "synthetic-rewrite")?;
        log::info!(
            "strategy {strategy}: F0.5 {:.4}, exact match {:.4}",
            report.metrics.f05,
            report.metrics.exact_match
        );
        rows.push(AblationRow {
            strategy: strategy.to_string(),
            test_f05: report.metrics.f05,
            test_exact_match: report.metrics.exact_match,
            test_rouge_l: report.metrics.rouge_l,
            copy_f05: report.copy_baseline.f05,
        });
    }
    let json = serde_json::to_string_pretty(&rows)?;
    std::fs::write(arts.ablation(), &json)?;
    println!("{json}");
    Ok(())
}

/// Pretty-print one example with aligned spans and the difficulty breakdown.
pub fn cmd_inspect(cfg: &PipelineConfig, id: &str, dataset_override: Option<&Path>) -> Result<()> {
    let arts = Artifacts::new(&cfg.out_dir);
    let candidates: Vec<PathBuf> = match dataset_override {
        Some(p) => vec![p.to_path_buf()],
        None => vec![
            arts.scored_dataset(),
            arts.dataset(Mode::Ssr),
            arts.dataset(Mode::Infill),
            arts.dataset(Mode::Distill),
            arts.dataset(Mode::Denoise),
        ],
    };
    let vocab = load_vocab(cfg)?;
    for path in candidates.iter().filter(|p| p.exists()) {
        for ex in ssr_core::dataset::read_dataset_iter(path)? {
            let ex = ex?;
            if ex.id == id {
                print_example(&ex, &vocab, path)?;
                return Ok(());
            }
        }
    }
    bail!("example {id:?} not found in {} candidate file(s)", candidates.len());
}

fn print_example(ex: &SsrExample, vocab: &Vocab, path: &Path) -> Result<()> {
    println!("id:         {}", ex.id);
    println!("file:       {}", path.display());
    println!("mode:       {}", ex.mode);
    println!(
        "bucket:     {}",
        ex.bucket.map_or("unset".to_string(), |b| b.to_string())
    );
    println!("difficulty: {:.6}", ex.difficulty);
    println!("source:     {}", ex.source_text);
    println!("target:     {}", ex.target_text);
    for s in &ex.spans {
        let gt = detokenize(&s.gt, vocab)?;
        let imp = detokenize(&s.imp, vocab)?;
        let total: f64 = s.nll.iter().sum();
        let nll: Vec<String> = s.nll.iter().map(|v| format!("{v:.4}")).collect();
        println!(
            "span {:>2}: gt {:?} | imperfect {:?} | loss [{}] (sum {:.4})",
            s.index,
            gt,
            imp,
            nll.join(", "),
            total
        );
    }
    Ok(())
}
