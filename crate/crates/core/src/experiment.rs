//! End-to-end experiment on the synthetic task: full-data control,
//! fixed templates versus the grammar on held-out commands, zero-shot and
//! compositional splits. Also hosts the pipeline pieces the CLI reuses.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::command::{BatchError, CommandGenerator, FillPolicy};
use crate::corpus::{
    build_split, examples_hash, make_command_dataset, make_pair_dataset, CorpusError, Example,
    PrefixPolicy, SplitBundle, SplitKind,
};
use crate::decode::{
    nl_prompt, sample_batch, AttrTarget, Control, DecodeConfig, DecodeError, HeadTarget, Job,
    LmScorer, Method,
};
use crate::grammar::{Grammar, Symbol};
use crate::metrics::{
    evaluate, EvalInputs, GenerationRecord, LabelOracle, MetricsError, MetricsReport,
};
use crate::models::align::encode_command;
use crate::models::{
    train_alignment, train_binary_heads, train_conditional_on, train_nb, train_ngram, AlignConfig,
    AlignExample, AlignmentModel, BinaryHeads, ConditionalConfig, ConditionalLm, ModelError,
    NGramLm, NaiveBayes, TokenId, Vocab,
};
use crate::rng::{derive_seed, seeded, shuffle, substream, RNG_ALGORITHM};
use crate::schema::{AttrSpec, AttributeSchema};
use crate::synthetic::{self, MajorityOracle, SyntheticConfig};
use crate::tokenize::command_words;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("command generation failed: {0:?}")]
    Commands(BatchError),
    #[error("{0}")]
    Invalid(String),
}

impl From<BatchError> for ExperimentError {
    fn from(e: BatchError) -> Self {
        ExperimentError::Commands(e)
    }
}

/// Lowercased words a grammar can emit, from terminals and slot fillers.
pub fn grammar_words(grammar: &Grammar, schema: &AttributeSchema) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let alternatives = grammar
        .templates
        .iter()
        .chain(grammar.rules.values().flat_map(|r| r.alternatives.iter()));
    for alt in alternatives {
        for s in &alt.rhs {
            if let Symbol::Terminal(t) = s {
                out.extend(command_words(t));
            }
        }
    }
    let phrases = schema
        .labels
        .iter()
        .flat_map(|l| l.verbalizers.iter())
        .chain(schema.lengths.iter().flat_map(|l| l.verbalizers.iter()))
        .chain(&schema.label_attr_names)
        .chain(&schema.length_attr_names)
        .chain(&schema.domains);
    for p in phrases {
        out.extend(command_words(p));
    }
    out
}

/// One vocabulary for texts and commands.
pub fn build_vocab<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    command_words: &BTreeSet<String>,
) -> Vocab {
    let mut words: BTreeSet<&str> = BTreeSet::new();
    for t in texts {
        words.extend(t.split_whitespace());
    }
    words.extend(command_words.iter().map(String::as_str));
    Vocab::build(words)
}

pub fn encode_text(vocab: &Vocab, text: &str) -> Vec<TokenId> {
    vocab.encode(&text.split_whitespace().collect::<Vec<_>>())
}

/// Prefixes drawn like the pair dataset: each length kept at `policy.rate`,
/// EOS appended to a full-length prefix. Yields `(prefix, label, length)`.
pub fn prefix_samples(
    examples: &[Example],
    vocab: &Vocab,
    policy: &PrefixPolicy,
    seed: u64,
) -> Vec<(Vec<TokenId>, usize, usize)> {
    let seed = derive_seed(seed, "prefixes");
    let mut out = Vec::new();
    for (i, e) in examples.iter().enumerate() {
        let mut rng = substream(seed, i as u64);
        let tokens = encode_text(vocab, &e.text);
        for n in 1..=tokens.len().min(policy.cap) {
            if rng.gen::<f64>() >= policy.rate {
                continue;
            }
            let mut p = tokens[..n].to_vec();
            if n == tokens.len() {
                p.push(crate::models::vocab::EOS);
            }
            out.push((p, e.label_id, e.length_id));
        }
    }
    out
}

/// Label and length naive-Bayes discriminators.
pub struct Categorical {
    pub label: NaiveBayes,
    pub length: NaiveBayes,
}

pub fn train_categorical(
    samples: &[(Vec<TokenId>, usize, usize)],
    schema: &AttributeSchema,
    alpha: f64,
) -> Result<Categorical, ModelError> {
    let by_label: Vec<(Vec<TokenId>, usize)> =
        samples.iter().map(|(p, l, _)| (p.clone(), *l)).collect();
    let by_length: Vec<(Vec<TokenId>, usize)> =
        samples.iter().map(|(p, _, m)| (p.clone(), *m)).collect();
    Ok(Categorical {
        label: train_nb(&by_label, schema.num_labels(), alpha)?,
        length: train_nb(&by_length, schema.num_lengths(), alpha)?,
    })
}

pub struct Heads {
    pub label: BinaryHeads,
    pub length: BinaryHeads,
}

pub fn train_heads(
    samples: &[(Vec<TokenId>, usize, usize)],
    schema: &AttributeSchema,
    alpha: f64,
) -> Result<Heads, ModelError> {
    let by_label: Vec<(Vec<TokenId>, usize)> =
        samples.iter().map(|(p, l, _)| (p.clone(), *l)).collect();
    let by_length: Vec<(Vec<TokenId>, usize)> =
        samples.iter().map(|(p, _, m)| (p.clone(), *m)).collect();
    Ok(Heads {
        label: train_binary_heads(&by_label, schema.num_labels(), alpha)?,
        length: train_binary_heads(&by_length, schema.num_lengths(), alpha)?,
    })
}

/// How a row of generations is steered.
#[derive(Clone, Copy)]
pub enum Steering<'a> {
    /// Base LM alone, no prompt.
    Unconditioned,
    Categorical(&'a Categorical),
    Binary(&'a Heads),
    Alignment(&'a AlignmentModel),
    /// Base LM is prompted with the command.
    PrefixNl,
}

impl Steering<'_> {
    pub fn method(&self) -> Method {
        match self {
            Steering::Unconditioned | Steering::PrefixNl => Method::PrefixOnly,
            Steering::Categorical(_) => Method::Fudge,
            Steering::Binary(_) => Method::FudgeBinary,
            Steering::Alignment(_) => Method::FudgeNl,
        }
    }
}

/// What one generation should satisfy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalTarget {
    pub attrs: AttrSpec,
    pub command: String,
}

pub fn eval_targets(
    examples: &[Example],
    generator: &CommandGenerator,
    count: usize,
    seed: u64,
) -> Result<Vec<EvalTarget>, ExperimentError> {
    if examples.is_empty() {
        return Ok(Vec::new());
    }
    let attrs: Vec<AttrSpec> = (0..count)
        .map(|i| examples[i % examples.len()].attrs())
        .collect();
    let commands = generator.generate_batch(&attrs, seed)?;
    Ok(attrs
        .into_iter()
        .zip(commands)
        .map(|(attrs, c)| EvalTarget {
            attrs,
            command: c.text,
        })
        .collect())
}

/// Decode one text per target; job `i` uses sub-stream `i` of the seed.
pub fn generate(
    steering: Steering,
    base: &dyn LmScorer,
    vocab: &Vocab,
    targets: &[EvalTarget],
    config: &DecodeConfig,
) -> Result<Vec<GenerationRecord>, ExperimentError> {
    let config = DecodeConfig {
        method: steering.method(),
        ..*config
    };
    let jobs: Vec<Job> = targets
        .iter()
        .map(|t| {
            let command = encode_command(&t.command, vocab);
            let (control, prompt) = match steering {
                Steering::Unconditioned => (Control::None, Vec::new()),
                Steering::PrefixNl => (Control::None, nl_prompt(&command)),
                Steering::Categorical(c) => {
                    let mut v = Vec::new();
                    if let Some(l) = t.attrs.label_id {
                        v.push(AttrTarget {
                            discriminator: &c.label,
                            option: l,
                        });
                    }
                    if let Some(m) = t.attrs.length_id {
                        v.push(AttrTarget {
                            discriminator: &c.length,
                            option: m,
                        });
                    }
                    (Control::Attributes(v), Vec::new())
                }
                Steering::Binary(h) => {
                    let mut v = Vec::new();
                    if let Some(l) = t.attrs.label_id {
                        v.push(HeadTarget {
                            heads: &h.label,
                            option: l,
                        });
                    }
                    if let Some(m) = t.attrs.length_id {
                        v.push(HeadTarget {
                            heads: &h.length,
                            option: m,
                        });
                    }
                    (Control::BinaryHeads(v), Vec::new())
                }
                Steering::Alignment(a) => (
                    Control::Command {
                        discriminator: a,
                        command,
                    },
                    Vec::new(),
                ),
            };
            Job { control, prompt }
        })
        .collect();
    let out = sample_batch(&config, base, &jobs)?;
    Ok(targets
        .iter()
        .zip(out)
        .map(|(t, s)| {
            let text = vocab.decode(s.text_tokens());
            GenerationRecord {
                target: t.attrs,
                command: Some(t.command.clone()),
                token_count: text.split_whitespace().count(),
                text,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eConfig {
    pub seed: u64,
    pub corpus: SyntheticConfig,
    /// Generations per report row.
    pub generations: usize,
    /// Test texts sampled as BLEU references.
    pub references: usize,
    pub k: usize,
    pub candidate_cap: usize,
    pub max_new_tokens: usize,
    /// Strengths swept for categorical control on the full data.
    pub fudge_lambdas: Vec<f64>,
    pub lambda_full: f64,
    pub lambda_zero_shot: f64,
    pub lambda_compositional: f64,
    pub ngram_order: usize,
    pub ngram_alpha: f64,
    pub nb_alpha: f64,
    pub prefixes: PrefixPolicy,
    pub align: AlignConfig,
    pub conditional: ConditionalConfig,
    pub blocked: usize,
    pub noncomp: usize,
}

impl Default for E2eConfig {
    fn default() -> Self {
        E2eConfig {
            seed: 0,
            corpus: SyntheticConfig::default(),
            generations: 200,
            references: 100,
            k: 20,
            candidate_cap: 200,
            max_new_tokens: 64,
            fudge_lambdas: vec![0.0, 1.0, 6.0, 14.0],
            lambda_full: 14.0,
            lambda_zero_shot: 6.0,
            lambda_compositional: 4.0,
            ngram_order: 3,
            ngram_alpha: 0.1,
            nb_alpha: 1.0,
            prefixes: PrefixPolicy::default(),
            align: AlignConfig::default(),
            conditional: ConditionalConfig::default(),
            blocked: 0,
            noncomp: 1,
        }
    }
}

impl E2eConfig {
    /// Smaller corpus and fewer generations for quick runs.
    pub fn small(seed: u64) -> Self {
        E2eConfig {
            seed,
            corpus: SyntheticConfig {
                n_train: 600,
                n_val: 60,
                n_test: 120,
                ..SyntheticConfig::default()
            },
            generations: 40,
            references: 30,
            ..E2eConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateRow {
    pub train_set: String,
    pub pairs: usize,
    pub align_train_acc: f64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlTriple {
    pub label_acc: f64,
    pub length_acc: f64,
    pub comp_acc: f64,
}

impl ControlTriple {
    fn of(r: &MetricsReport) -> Self {
        ControlTriple {
            label_acc: r.control.label_acc.unwrap_or(0.0),
            length_acc: r.control.length_acc.unwrap_or(0.0),
            comp_acc: r.control.comp_acc.unwrap_or(0.0),
        }
    }

    fn minus(&self, o: &ControlTriple) -> Self {
        ControlTriple {
            label_acc: self.label_acc - o.label_acc,
            length_acc: self.length_acc - o.length_acc,
            comp_acc: self.comp_acc - o.comp_acc,
        }
    }
}

/// Control accuracy on the held-out combinations for a model trained on
/// the compositional split (`test`) and on the full split (`orig`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompRow {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub test: ControlTriple,
    pub orig: ControlTriple,
    pub diff: ControlTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub hash: String,
    pub size: usize,
    pub train: usize,
    pub test: usize,
    pub cutoffs: Vec<usize>,
    pub vocab_size: usize,
    pub reference_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateBlock {
    pub eval_set: String,
    pub lambda: f64,
    pub rows: Vec<TemplateRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotBlock {
    pub blocked: usize,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionalBlock {
    pub noncomp: usize,
    pub rows: Vec<CompRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eReport {
    pub version: u32,
    pub rng: String,
    pub label_oracle: String,
    pub entropy_base: u32,
    pub bleu: String,
    pub config: E2eConfig,
    pub corpus: CorpusInfo,
    pub full_data: Vec<Row>,
    pub template_sets: TemplateBlock,
    pub zero_shot: ZeroShotBlock,
    pub compositional: CompositionalBlock,
}

impl E2eReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn full_row(&self, method: &str, lambda: Option<f64>) -> Option<&Row> {
        self.full_data
            .iter()
            .find(|r| r.method == method && r.lambda == lambda)
    }

    /// Every metrics report in the document, with its path.
    pub fn all_metrics(&self) -> Vec<(String, &MetricsReport)> {
        fn walk<'a>(
            path: String,
            r: &'a MetricsReport,
            out: &mut Vec<(String, &'a MetricsReport)>,
        ) {
            for (k, s) in &r.strata {
                walk(format!("{path}/{k}"), s, out);
            }
            out.push((path, r));
        }
        let mut out = Vec::new();
        for r in &self.full_data {
            walk(
                format!("full_data/{}/{:?}", r.method, r.lambda),
                &r.metrics,
                &mut out,
            );
        }
        for r in &self.template_sets.rows {
            walk(
                format!("template_sets/{}", r.train_set),
                &r.metrics,
                &mut out,
            );
        }
        for r in &self.zero_shot.rows {
            walk(format!("zero_shot/{}", r.method), &r.metrics, &mut out);
        }
        out
    }
}

/// Shared state for one run.
struct Run<'a> {
    config: &'a E2eConfig,
    schema: AttributeSchema,
    vocab: Vocab,
    judge: NGramLm,
    references: Vec<Vec<String>>,
    decode: DecodeConfig,
}

impl Run<'_> {
    fn encode_all(&self, examples: &[Example]) -> Vec<Vec<TokenId>> {
        examples
            .iter()
            .map(|e| encode_text(&self.vocab, &e.text))
            .collect()
    }

    fn base_lm(&self, examples: &[Example]) -> Result<NGramLm, ModelError> {
        train_ngram(
            &self.encode_all(examples),
            &self.vocab,
            self.config.ngram_order,
            self.config.ngram_alpha,
        )
    }

    fn evaluate(&self, records: &[GenerationRecord]) -> Result<MetricsReport, ExperimentError> {
        let encode = |s: &str| encode_text(&self.vocab, s);
        let inputs = EvalInputs {
            schema: &self.schema,
            oracle: &MajorityOracle,
            references: &self.references,
            scorer: Some((&self.judge, &encode)),
            smoothing: false,
        };
        Ok(evaluate(records, &inputs)?)
    }

    fn row(
        &self,
        name: &str,
        lambda: Option<f64>,
        steering: Steering,
        base: &dyn LmScorer,
        targets: &[EvalTarget],
    ) -> Result<Row, ExperimentError> {
        let decode = DecodeConfig {
            lambda: lambda.unwrap_or(1.0),
            ..self.decode
        };
        let records = generate(steering, base, &self.vocab, targets, &decode)?;
        Ok(Row {
            method: name.to_string(),
            lambda,
            metrics: self.evaluate(&records)?,
        })
    }

    fn alignment(
        &self,
        split: &SplitBundle,
        generator: &CommandGenerator,
    ) -> Result<(AlignmentModel, usize), ExperimentError> {
        let pairs = make_pair_dataset(split, generator, &self.config.prefixes, self.config.seed)?;
        let data: Vec<AlignExample> = pairs
            .iter()
            .map(|p| AlignExample::encode(p, &self.vocab))
            .collect();
        let model = train_alignment(&data, &self.vocab, self.config.align)?;
        Ok((model, data.len()))
    }

    fn conditional(
        &self,
        split: &SplitBundle,
        generator: &CommandGenerator,
        lm: NGramLm,
    ) -> Result<ConditionalLm, ExperimentError> {
        let commands = make_command_dataset(split, generator, self.config.seed)?;
        let data: Vec<(Vec<TokenId>, Vec<TokenId>)> = commands
            .iter()
            .map(|c| {
                (
                    encode_command(&c.command.text, &self.vocab),
                    encode_text(&self.vocab, &c.text),
                )
            })
            .collect();
        Ok(train_conditional_on(&data, lm, self.config.conditional)?)
    }

    /// Report over all targets with one stratum per named target group.
    fn stratified_row(
        &self,
        name: &str,
        lambda: Option<f64>,
        steering: Steering,
        base: &dyn LmScorer,
        groups: &[(&str, &[EvalTarget])],
    ) -> Result<Row, ExperimentError> {
        let decode = DecodeConfig {
            lambda: lambda.unwrap_or(1.0),
            ..self.decode
        };
        let all: Vec<EvalTarget> = groups.iter().flat_map(|(_, t)| t.iter().cloned()).collect();
        let records = generate(steering, base, &self.vocab, &all, &decode)?;
        let mut metrics = self.evaluate(&records)?;
        let mut start = 0;
        for (stratum, t) in groups {
            if !t.is_empty() {
                metrics.strata.insert(
                    stratum.to_string(),
                    self.evaluate(&records[start..start + t.len()])?,
                );
            }
            start += t.len();
        }
        Ok(Row {
            method: name.to_string(),
            lambda,
            metrics,
        })
    }
}

fn validate_config(config: &E2eConfig) -> Result<(), ExperimentError> {
    if config.blocked >= 4 || config.noncomp >= 4 {
        return Err(ExperimentError::Invalid(
            "blocked and noncomp must be label ids 0..3".into(),
        ));
    }
    if config.generations == 0 {
        return Err(ExperimentError::Invalid(
            "generations must be positive".into(),
        ));
    }
    Ok(())
}

/// Run every experiment block. Deterministic in `config`.
pub fn run_synthetic_e2e(config: &E2eConfig) -> Result<E2eReport, ExperimentError> {
    validate_config(config)?;
    let seed = config.seed;
    let (examples, schema) = synthetic::generate_corpus(&config.corpus, seed);
    let (pcfg, _) = synthetic::grammar_and_schema();
    let t20 = synthetic::template_set(synthetic::T20).expect("bundled");
    let t40 = synthetic::template_set(synthetic::T40).expect("bundled");
    let heldout = synthetic::template_set(synthetic::HELDOUT20).expect("bundled");

    let mut words = BTreeSet::new();
    for g in [&pcfg, &t20, &t40, &heldout] {
        words.extend(grammar_words(g, &schema));
    }
    let vocab = build_vocab(examples.iter().map(|e| e.text.as_str()), &words);

    let ratios = config.corpus.ratios();
    let full = build_split(&examples, &schema, SplitKind::Full, ratios, seed)?;
    let judge = train_ngram(
        &full
            .train_supervised
            .iter()
            .map(|e| encode_text(&vocab, &e.text))
            .collect::<Vec<_>>(),
        &vocab,
        2,
        config.ngram_alpha,
    )?;
    let mut ref_order: Vec<usize> = (0..full.test.len()).collect();
    shuffle(&mut ref_order, &mut seeded(derive_seed(seed, "references")));
    ref_order.truncate(config.references);
    let references: Vec<Vec<String>> = ref_order
        .iter()
        .map(|&i| {
            full.test[i]
                .text
                .split_whitespace()
                .map(str::to_string)
                .collect()
        })
        .collect();
    let reference_ids = ref_order.iter().map(|&i| full.test[i].id.clone()).collect();

    let run = Run {
        config,
        decode: DecodeConfig {
            method: Method::PrefixOnly,
            k: config.k,
            lambda: 1.0,
            candidate_cap: config.candidate_cap,
            max_new_tokens: config.max_new_tokens,
            seed: derive_seed(seed, "decode"),
        },
        schema: schema.clone(),
        vocab,
        judge,
        references,
    };
    run.decode.validate()?;

    let pcfg_gen = CommandGenerator::new(&pcfg, &schema);
    let heldout_gen = CommandGenerator::new(&heldout, &schema);

    // full data
    let base = run.base_lm(&full.train_lm)?;
    let samples = prefix_samples(&full.train_supervised, &run.vocab, &config.prefixes, seed);
    let categorical = train_categorical(&samples, &schema, config.nb_alpha)?;
    let heads = train_heads(&samples, &schema, config.nb_alpha)?;
    let (align_full, pcfg_pairs) = run.alignment(&full, &pcfg_gen)?;
    let cond_full = run.conditional(&full, &pcfg_gen, base.clone())?;
    let targets = eval_targets(
        &full.test,
        &pcfg_gen,
        config.generations,
        derive_seed(seed, "eval-full"),
    )?;

    let mut full_rows =
        vec![run.row("no-control", None, Steering::Unconditioned, &base, &targets)?];
    for &l in &config.fudge_lambdas {
        full_rows.push(run.row(
            "fudge",
            Some(l),
            Steering::Categorical(&categorical),
            &base,
            &targets,
        )?);
    }
    full_rows.push(run.row(
        "fudge-binary",
        Some(config.lambda_full),
        Steering::Binary(&heads),
        &base,
        &targets,
    )?);
    full_rows.push(run.row(
        "fudge-nl",
        Some(config.lambda_full),
        Steering::Alignment(&align_full),
        &base,
        &targets,
    )?);
    full_rows.push(run.row(
        "prefixlm-nl",
        None,
        Steering::PrefixNl,
        &cond_full,
        &targets,
    )?);

    // fixed templates versus grammar, judged on held-out commands
    let heldout_targets = eval_targets(
        &full.test,
        &heldout_gen,
        config.generations,
        derive_seed(seed, "eval-heldout"),
    )?;
    let mut template_rows = Vec::new();
    for (name, grammar) in [("T20", &t20), ("T40", &t40)] {
        let gen = CommandGenerator::new(grammar, &schema).with_policy(FillPolicy::Canonical);
        let (model, pairs) = run.alignment(&full, &gen)?;
        let row = run.row(
            "fudge-nl",
            Some(config.lambda_full),
            Steering::Alignment(&model),
            &base,
            &heldout_targets,
        )?;
        template_rows.push(TemplateRow {
            train_set: name.to_string(),
            pairs,
            align_train_acc: model.train_accuracy,
            metrics: row.metrics,
        });
    }
    let row = run.row(
        "fudge-nl",
        Some(config.lambda_full),
        Steering::Alignment(&align_full),
        &base,
        &heldout_targets,
    )?;
    template_rows.push(TemplateRow {
        train_set: "PCFG".to_string(),
        pairs: pcfg_pairs,
        align_train_acc: align_full.train_accuracy,
        metrics: row.metrics,
    });

    // zero-shot
    let zs = build_split(
        &examples,
        &schema,
        SplitKind::ZeroShot {
            blocked: config.blocked,
            unblock_lm: false,
        },
        ratios,
        seed,
    )?;
    let zs_unb = build_split(
        &examples,
        &schema,
        SplitKind::ZeroShot {
            blocked: config.blocked,
            unblock_lm: true,
        },
        ratios,
        seed,
    )?;
    let zs_base = run.base_lm(&zs.train_lm)?;
    let unb_base = run.base_lm(&zs_unb.train_lm)?;
    let (zs_align, _) = run.alignment(&zs, &pcfg_gen)?;
    let zs_cond = run.conditional(&zs, &pcfg_gen, zs_base.clone())?;
    let unb_cond = run.conditional(&zs, &pcfg_gen, unb_base.clone())?;
    let zs_examples: Vec<Example> = zs.stratum("zero_shot").into_iter().cloned().collect();
    let seen_examples: Vec<Example> = zs.stratum("seen").into_iter().cloned().collect();
    let zs_targets = eval_targets(
        &zs_examples,
        &pcfg_gen,
        config.generations,
        derive_seed(seed, "eval-zs"),
    )?;
    let seen_targets = eval_targets(
        &seen_examples,
        &pcfg_gen,
        config.generations,
        derive_seed(seed, "eval-seen"),
    )?;
    let groups: [(&str, &[EvalTarget]); 2] = [("zero_shot", &zs_targets), ("seen", &seen_targets)];
    let lz = Some(config.lambda_zero_shot);
    let zero_rows = vec![
        run.stratified_row(
            "fudge-nl",
            lz,
            Steering::Alignment(&zs_align),
            &zs_base,
            &groups,
        )?,
        run.stratified_row(
            "fudge-nl-unb",
            lz,
            Steering::Alignment(&zs_align),
            &unb_base,
            &groups,
        )?,
        run.stratified_row("prefixlm-nl", None, Steering::PrefixNl, &zs_cond, &groups)?,
        run.stratified_row(
            "prefixlm-nl-unb",
            None,
            Steering::PrefixNl,
            &unb_cond,
            &groups,
        )?,
    ];

    // compositional
    let comp = build_split(
        &examples,
        &schema,
        SplitKind::Compositional {
            noncomp: config.noncomp,
        },
        ratios,
        seed,
    )?;
    let comp_base = run.base_lm(&comp.train_lm)?;
    let (comp_align, _) = run.alignment(&comp, &pcfg_gen)?;
    let comp_cond = run.conditional(&comp, &pcfg_gen, comp_base.clone())?;
    let noncomp_examples: Vec<Example> = comp.stratum("noncomp").into_iter().cloned().collect();
    let comp_targets = eval_targets(
        &noncomp_examples,
        &pcfg_gen,
        config.generations,
        derive_seed(seed, "eval-comp"),
    )?;
    let lc = Some(config.lambda_compositional);
    let mut comp_rows = Vec::new();
    for (name, lambda, test_s, test_base, orig_s, orig_base) in [
        (
            "fudge-nl",
            lc,
            Steering::Alignment(&comp_align),
            &comp_base as &dyn LmScorer,
            Steering::Alignment(&align_full),
            &base as &dyn LmScorer,
        ),
        (
            "prefixlm-nl",
            None,
            Steering::PrefixNl,
            &comp_cond,
            Steering::PrefixNl,
            &cond_full,
        ),
    ] {
        let test = ControlTriple::of(
            &run.row(name, lambda, test_s, test_base, &comp_targets)?
                .metrics,
        );
        let orig = ControlTriple::of(
            &run.row(name, lambda, orig_s, orig_base, &comp_targets)?
                .metrics,
        );
        comp_rows.push(CompRow {
            method: name.to_string(),
            lambda,
            diff: test.minus(&orig),
            test,
            orig,
        });
    }

    Ok(E2eReport {
        version: REPORT_VERSION,
        rng: RNG_ALGORITHM.to_string(),
        label_oracle: "majority topic group".to_string(),
        entropy_base: 2,
        bleu: "corpus".to_string(),
        config: config.clone(),
        corpus: CorpusInfo {
            hash: examples_hash(&examples),
            size: examples.len(),
            train: full.train_supervised.len(),
            test: full.test.len(),
            cutoffs: schema.cutoffs(),
            vocab_size: run.vocab.len(),
            reference_ids,
        },
        full_data: full_rows,
        template_sets: TemplateBlock {
            eval_set: "HELDOUT20".to_string(),
            lambda: config.lambda_full,
            rows: template_rows,
        },
        zero_shot: ZeroShotBlock {
            blocked: config.blocked,
            rows: zero_rows,
        },
        compositional: CompositionalBlock {
            noncomp: config.noncomp,
            rows: comp_rows,
        },
    })
}

/// Label oracle by name, for reports and the CLI.
pub fn oracle_by_name(name: &str) -> Option<Box<dyn LabelOracle>> {
    match name {
        "majority" | "synthetic" => Some(Box::new(MajorityOracle)),
        _ => None,
    }
}

/// Rows per block keyed by a stable name, for quick lookups in tests.
pub fn template_comp_acc(report: &E2eReport) -> BTreeMap<String, f64> {
    report
        .template_sets
        .rows
        .iter()
        .map(|r| {
            (
                r.train_set.clone(),
                r.metrics.control.comp_acc.unwrap_or(0.0),
            )
        })
        .collect()
}
