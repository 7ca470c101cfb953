//! Declarative pipeline configuration (TOML). Unknown keys are rejected,
//! the seed is mandatory, and referenced paths are checked at validation
//! time. Command-line flags override the file.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ssr_core::corpus::CorpusConfig;
use ssr_core::curriculum::Strategy;
use ssr_core::generators::{GenConfig, RuleNoiseConfig};
use ssr_core::masking::MaskConfig;
use ssr_core::model::ModelConfig;
use ssr_core::training::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub corpus: CorpusSection,
    #[serde(default)]
    pub masking: MaskSection,
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub curriculum: CurriculumSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub pretrain: TrainSection,
    #[serde(default = "default_ssr_section")]
    pub ssr: TrainSection,
    #[serde(default = "default_finetune_section")]
    pub finetune: TrainSection,
    #[serde(default)]
    pub task: TaskSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub paths: Vec<PathBuf>,
    #[serde(default = "d_max_vocab")]
    pub max_vocab: usize,
    #[serde(default = "d_one")]
    pub min_freq: u64,
    #[serde(default)]
    pub lowercase: bool,
    #[serde(default = "d_max_seq_len")]
    pub max_seq_len: usize,
    #[serde(default = "d_max_sentinels")]
    pub max_sentinels: usize,
}

fn d_max_vocab() -> usize {
    2000
}
fn d_one() -> u64 {
    1
}
fn d_max_seq_len() -> usize {
    64
}
fn d_max_sentinels() -> usize {
    40
}

impl CorpusSection {
    pub fn to_corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            max_vocab: self.max_vocab,
            min_freq: self.min_freq,
            lowercase: self.lowercase,
            max_seq_len: self.max_seq_len,
            max_sentinels: self.max_sentinels,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSection {
    pub lambda: f64,
    pub budget: f64,
    pub max_span_len: usize,
    pub max_spans: usize,
}

impl Default for MaskSection {
    fn default() -> Self {
        let m = MaskConfig::default();
        Self {
            lambda: m.lambda,
            budget: m.budget,
            max_span_len: m.max_span_len,
            max_spans: m.max_spans,
        }
    }
}

impl MaskSection {
    pub fn to_mask_config(&self) -> MaskConfig {
        MaskConfig {
            lambda: self.lambda,
            budget: self.budget,
            max_span_len: self.max_span_len,
            max_spans: self.max_spans,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Ngram,
    Rule,
    Identity,
    #[serde(rename = "self")]
    SelfGen,
    External,
}

impl std::fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            GeneratorKind::Ngram => "ngram",
            GeneratorKind::Rule => "rule",
            GeneratorKind::Identity => "identity",
            GeneratorKind::SelfGen => "self",
            GeneratorKind::External => "external",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    pub kind: GeneratorKind,
    /// N-gram order and backoff factor.
    pub order: usize,
    pub alpha: f64,
    /// Nucleus threshold and length cap for sampled spans.
    pub top_p: f64,
    pub max_gen_len: usize,
    pub lambda: f64,
    /// Child-process command line for `kind = "external"`.
    pub external_cmd: Vec<String>,
    pub timeout_secs: u64,
    /// Rule-noise probabilities (rule generator and denoise datasets).
    pub noise: NoiseSection,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let g = GenConfig::default();
        Self {
            kind: GeneratorKind::SelfGen,
            order: 3,
            alpha: 0.4,
            top_p: g.top_p,
            max_gen_len: g.max_gen_len,
            lambda: g.lambda,
            external_cmd: Vec::new(),
            timeout_secs: 30,
            noise: NoiseSection::default(),
        }
    }
}

impl GeneratorSection {
    pub fn to_gen_config(&self) -> GenConfig {
        GenConfig {
            top_p: self.top_p,
            max_gen_len: self.max_gen_len,
            lambda: self.lambda,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub p_delete: f64,
    pub p_replace: f64,
    pub p_shuffle: f64,
    pub p_duplicate: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let n = RuleNoiseConfig::default();
        Self {
            p_delete: n.p_delete,
            p_replace: n.p_replace,
            p_shuffle: n.p_shuffle,
            p_duplicate: n.p_duplicate,
        }
    }
}

impl NoiseSection {
    pub fn to_noise_config(&self) -> RuleNoiseConfig {
        RuleNoiseConfig {
            p_delete: self.p_delete,
            p_replace: self.p_replace,
            p_shuffle: self.p_shuffle,
            p_duplicate: self.p_duplicate,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Cap on examples per dataset; windows are sampled deterministically.
    pub max_examples: usize,
    /// Keep spans the generator reproduced exactly (copying is a valid
    /// rewrite pattern); set false to filter them.
    pub keep_exact_copies: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            max_examples: 2000,
            keep_exact_copies: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumSection {
    pub strategy: Strategy,
    pub k: usize,
    pub mix_current: f64,
}

impl Default for CurriculumSection {
    fn default() -> Self {
        Self {
            strategy: Strategy::Curriculum,
            k: 5,
            mix_current: 0.8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_rel_distance: usize,
    pub dropout: f64,
    pub max_decode_len: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(5);
        Self {
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            d_model: m.d_model,
            d_ff: m.d_ff,
            max_rel_distance: m.max_rel_distance,
            dropout: m.dropout,
            max_decode_len: m.max_decode_len,
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            vocab_size,
            max_rel_distance: self.max_rel_distance,
            dropout: self.dropout,
            max_decode_len: self.max_decode_len,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: f64,
    pub eval_every: usize,
    pub patience: usize,
    /// Rewrite stage only: skip the infilling checkpoint and train from a
    /// fresh initialization.
    pub from_scratch: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: t.steps,
            batch_size: t.batch_size,
            lr: t.lr,
            warmup_steps: t.warmup_steps,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            grad_clip: t.grad_clip,
            eval_every: t.eval_every,
            patience: t.patience,
            from_scratch: false,
        }
    }
}

fn default_ssr_section() -> TrainSection {
    TrainSection::default()
}

fn default_finetune_section() -> TrainSection {
    TrainSection {
        steps: 200,
        ..TrainSection::default()
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            lr: self.lr,
            warmup_steps: self.warmup_steps,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            grad_clip: self.grad_clip,
            eval_every: self.eval_every,
            patience: self.patience,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub train_frac: f64,
    pub dev_frac: f64,
    /// Optional per-split caps (deterministic truncation after splitting).
    pub max_train: Option<usize>,
    pub max_dev: Option<usize>,
    pub max_test: Option<usize>,
    pub noise: NoiseSection,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            train_frac: 0.8,
            dev_frac: 0.1,
            max_train: None,
            max_dev: None,
            max_test: None,
            noise: NoiseSection::default(),
        }
    }
}

/// Flag overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub generator: Option<String>,
    pub strategy: Option<Strategy>,
}

pub fn load_config(path: &std::path::Path, overrides: &Overrides) -> Result<PipelineConfig> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg: PipelineConfig =
        toml::from_str(&raw).with_context(|| format!("parsing config {}", path.display()))?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.out_dir {
        cfg.out_dir = out.clone();
    }
    if let Some(strategy) = overrides.strategy {
        cfg.curriculum.strategy = strategy;
    }
    if let Some(generator) = &overrides.generator {
        apply_generator_flag(&mut cfg, generator)?;
    }
    validate(&cfg)?;
    Ok(cfg)
}

/// `--generator ngram|rule|identity|self|external:<cmdline>`
pub fn apply_generator_flag(cfg: &mut PipelineConfig, flag: &str) -> Result<()> {
    if let Some(cmdline) = flag.strip_prefix("external:") {
        cfg.generator.kind = GeneratorKind::External;
        cfg.generator.external_cmd = cmdline.split_whitespace().map(str::to_string).collect();
        if cfg.generator.external_cmd.is_empty() {
            bail!("empty external generator command line");
        }
        return Ok(());
    }
    cfg.generator.kind = match flag {
        "ngram" => GeneratorKind::Ngram,
        "rule" => GeneratorKind::Rule,
        "identity" => GeneratorKind::Identity,
        "self" => GeneratorKind::SelfGen,
        other => bail!("unknown generator {other:?}"),
    };
    Ok(())
}

fn validate(cfg: &PipelineConfig) -> Result<()> {
    if cfg.corpus.paths.is_empty() {
        bail!("config error: corpus.paths is empty");
    }
    for p in &cfg.corpus.paths {
        if !p.exists() {
            bail!("config error: corpus path {} does not exist", p.display());
        }
    }
    let n_special = 4 + 3 * cfg.corpus.max_sentinels;
    if cfg.corpus.max_vocab <= n_special {
        bail!(
            "config error: corpus.max_vocab {} must exceed the {} specials",
            cfg.corpus.max_vocab,
            n_special
        );
    }
    if cfg.corpus.max_sentinels < cfg.masking.max_spans {
        bail!(
            "config error: masking.max_spans {} exceeds corpus.max_sentinels {}",
            cfg.masking.max_spans,
            cfg.corpus.max_sentinels
        );
    }
    if !(cfg.masking.budget >= 0.0 && cfg.masking.budget <= 1.0) {
        bail!("config error: masking.budget must lie in [0,1]");
    }
    if cfg.curriculum.k < 1 {
        bail!("config error: curriculum.k must be at least 1");
    }
    if !(cfg.curriculum.mix_current > 0.0 && cfg.curriculum.mix_current <= 1.0) {
        bail!("config error: curriculum.mix_current must lie in (0,1]");
    }
    if cfg.model.d_model % cfg.model.n_heads != 0 {
        bail!("config error: model.d_model must be divisible by model.n_heads");
    }
    if cfg.generator.kind == GeneratorKind::External && cfg.generator.external_cmd.is_empty() {
        bail!("config error: generator.external_cmd is required for kind external");
    }
    for (name, section) in [
        ("pretrain", &cfg.pretrain),
        ("ssr", &cfg.ssr),
        ("finetune", &cfg.finetune),
    ] {
        if section.steps > 0 && section.warmup_steps > section.steps {
            bail!(
                "config error: {name}.warmup_steps {} exceeds {name}.steps {}",
                section.warmup_steps,
                section.steps
            );
        }
    }
    if !(cfg.task.train_frac > 0.0
        && cfg.task.dev_frac > 0.0
        && cfg.task.train_frac + cfg.task.dev_frac < 1.0)
    {
        bail!("config error: task.train_frac/dev_frac must leave room for a test split");
    }
    Ok(())
}
