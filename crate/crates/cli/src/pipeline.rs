//! Subcommand bodies. Each returns the effective options for the manifest.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use nlctrl::bundled;
use nlctrl::command::{CommandGenerator, FillPolicy};
use nlctrl::corpus::{
    assign_lengths, build_split, examples_hash, ingest_str, make_command_dataset,
    make_pair_dataset, CommandExample, CorpusFormat, Example, PairExample, PrefixPolicy, Ratios,
    SplitBundle, SplitKind, TemplateSetId,
};
use nlctrl::decode::{DecodeConfig, LmScorer, Method};
use nlctrl::experiment::{
    build_vocab, encode_text, eval_targets, generate as decode_targets, grammar_words,
    prefix_samples, run_synthetic_e2e, train_categorical, train_heads, Categorical, E2eConfig,
    EvalTarget, Heads, Steering,
};
use nlctrl::grammar::{lint_grammar, parse_grammar, ParsedGrammar};
use nlctrl::metrics::{evaluate, EvalInputs, GenerationRecord, LabelOracle};
use nlctrl::models::align::encode_command;
use nlctrl::models::vocab::EOS;
use nlctrl::models::{
    train_alignment, train_conditional_on, train_ngram, AlignConfig, AlignExample, AlignmentModel,
    BinaryHeads, ConditionalConfig, ConditionalLm, ModelFile, NGramLm, NaiveBayes, TokenId, Vocab,
};
use nlctrl::rng::{derive_seed, pick_uniform, seeded, shuffle, substream};
use nlctrl::schema::{
    derive_balanced_cutoffs, parse_schema, AttrSpec, AttributeSchema, SchemaMeta,
};
use nlctrl::synthetic::MajorityOracle;
use nlctrl::tokenize::command_words;

use crate::run::{domain, CliResult, OrDomain, Run};
use crate::{
    DecodeArgs, E2eArgs, EvalArgs, GenerateArgs, GrammarCheckArgs, PairsArgs, SplitArgs, TrainArgs,
};

/// A grammar plus the schema sidecar that ships with it, if bundled.
struct LoadedGrammar {
    parsed: ParsedGrammar,
    bundled_meta: Option<&'static str>,
    path: Option<PathBuf>,
}

fn load_grammar(run: &mut Run, spec: &str) -> CliResult<LoadedGrammar> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        let (source, meta) = bundled::grammar(name).ok_or_else(|| {
            domain(format!(
                "unknown bundled grammar {name:?}; known: {}",
                bundled::NAMES.join(", ")
            ))
        })?;
        run.bundled(name, source);
        let parsed = parse_grammar(source).map_err(|e| domain(format!("{spec}: {e}")))?;
        return Ok(LoadedGrammar {
            parsed,
            bundled_meta: Some(meta),
            path: None,
        });
    }
    let path = PathBuf::from(spec);
    let source = run.read(&path)?;
    let parsed = parse_grammar(&source).map_err(|e| domain(format!("{spec}: {e}")))?;
    Ok(LoadedGrammar {
        parsed,
        bundled_meta: None,
        path: Some(path),
    })
}

/// Schema from the grammar's attribute sections and its sidecar: `--meta`,
/// else `<grammar stem>.meta.json`, else the bundled one.
fn grammar_schema(
    run: &mut Run,
    g: &LoadedGrammar,
    meta: Option<&Path>,
) -> CliResult<AttributeSchema> {
    let meta_src = match (meta, &g.path, g.bundled_meta) {
        (Some(p), _, _) => run.read(p)?,
        (None, Some(p), _) if p.with_extension("meta.json").exists() => {
            run.read(&p.with_extension("meta.json"))?
        }
        (None, _, Some(m)) => m.to_string(),
        _ => return Err(domain("no schema sidecar found; pass --meta")),
    };
    let meta: SchemaMeta =
        serde_json::from_str(&meta_src).map_err(|e| domain(format!("schema sidecar: {e}")))?;
    let (Some(labels), Some(lengths)) = (&g.parsed.label_section, &g.parsed.length_section) else {
        return Err(domain(
            "grammar has no <label> and <length> sections; pass --schema",
        ));
    };
    parse_schema(labels, lengths, &meta).or_domain()
}

fn read_json<T: DeserializeOwned>(run: &mut Run, dir: &Path, name: &str) -> CliResult<T> {
    let s = run.read_checked(dir, name)?;
    serde_json::from_str(&s).map_err(|e| domain(format!("{}: {e}", dir.join(name).display())))
}

fn parse_jsonl<T: DeserializeOwned>(content: &str, origin: &str) -> CliResult<Vec<T>> {
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| domain(format!("{origin}:{}: {e}", i + 1)))
        })
        .collect()
}

fn read_jsonl<T: DeserializeOwned>(run: &mut Run, dir: &Path, name: &str) -> CliResult<Vec<T>> {
    let s = run.read_checked(dir, name)?;
    parse_jsonl(&s, &dir.join(name).display().to_string())
}

fn load_model<M: Serialize + DeserializeOwned>(
    run: &mut Run,
    dir: &Path,
    name: &str,
    kind: &str,
) -> CliResult<M> {
    let s = run.read_checked(dir, name)?;
    ModelFile::<M>::from_json(&s, kind)
        .map(|f| f.model)
        .map_err(|e| domain(format!("{}: {e}", dir.join(name).display())))
}

fn label_id(schema: &AttributeSchema, raw: &str) -> CliResult<usize> {
    match raw.parse::<usize>() {
        Ok(id) if id < schema.num_labels() => Ok(id),
        Ok(id) => Err(domain(format!("label id {id} out of range"))),
        Err(_) => schema
            .label_by_name(raw)
            .ok_or_else(|| domain(format!("unknown label {raw:?}"))),
    }
}

fn fill_policy(raw: &str) -> CliResult<FillPolicy> {
    match raw {
        "uniform" => Ok(FillPolicy::Uniform),
        "canonical" => Ok(FillPolicy::Canonical),
        other => Err(domain(format!("unknown fill policy {other:?}"))),
    }
}

fn effective<T: Serialize>(args: &T) -> CliResult<Value> {
    serde_json::to_value(args).or_domain()
}

pub fn grammar_check(run: &mut Run, args: &GrammarCheckArgs) -> CliResult<Value> {
    let g = load_grammar(run, &args.grammar)?;
    let diagnostics = lint_grammar(&g.parsed.grammar);
    for d in &diagnostics {
        eprintln!("{d}");
    }
    println!(
        "{}: {} templates, {} rules, {} warnings",
        args.grammar,
        g.parsed.grammar.templates.len(),
        g.parsed.grammar.rules.len(),
        diagnostics.len()
    );
    if args.strict && !diagnostics.is_empty() {
        return Err(domain(format!(
            "{} warning(s) under --strict",
            diagnostics.len()
        )));
    }
    effective(args)
}

pub fn generate(run: &mut Run, args: &GenerateArgs) -> CliResult<Value> {
    let g = load_grammar(run, &args.grammar)?;
    let schema = match &args.schema {
        Some(p) => {
            let s = run.read(p)?;
            serde_json::from_str(&s).map_err(|e| domain(format!("{}: {e}", p.display())))?
        }
        None => grammar_schema(run, &g, args.meta.as_deref())?,
    };
    let label = args
        .label
        .as_deref()
        .map(|l| label_id(&schema, l))
        .transpose()?;
    if args.length.is_some_and(|m| m >= schema.num_lengths()) {
        return Err(domain(format!(
            "length level {:?} out of range",
            args.length
        )));
    }
    let attrs: Vec<AttrSpec> = if label.is_some() || args.length.is_some() {
        vec![AttrSpec::new(label, args.length).or_domain()?; args.count]
    } else {
        let seed = derive_seed(run.seed(), "attrs");
        (0..args.count)
            .map(|i| {
                let mut rng = substream(seed, i as u64);
                let l = pick_uniform(schema.num_labels(), &mut rng);
                let m = pick_uniform(schema.num_lengths(), &mut rng);
                match pick_uniform(3, &mut rng) {
                    0 => AttrSpec::both(l, m),
                    1 => AttrSpec::label(l),
                    _ => AttrSpec::length(m),
                }
            })
            .collect()
    };
    let gen =
        CommandGenerator::new(&g.parsed.grammar, &schema).with_policy(fill_policy(&args.fill)?);
    let seed = derive_seed(run.seed(), "commands");
    let commands = gen.generate_batch(&attrs, seed).or_domain()?;
    let records: Vec<_> = commands.iter().map(|c| c.to_record(seed)).collect();
    run.write_jsonl("commands.jsonl", &records)?;
    effective(args)
}

fn parse_ratios(raw: &str) -> CliResult<Ratios> {
    let parts: Vec<f64> = raw
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| domain(format!("ratios {raw:?}: {e}")))?;
    let [train, val, test] = parts[..] else {
        return Err(domain(format!("ratios {raw:?}: need three values")));
    };
    Ratios::new(train, val, test).or_domain()
}

fn split_kind(args: &SplitArgs, schema: &AttributeSchema) -> CliResult<SplitKind> {
    let class = |v: &Option<String>, flag: &str| -> CliResult<usize> {
        let raw = v
            .as_deref()
            .ok_or_else(|| domain(format!("--kind {} needs --{flag}", args.kind)))?;
        label_id(schema, raw)
    };
    Ok(match args.kind.as_str() {
        "full" => SplitKind::Full,
        "zero-shot" => SplitKind::ZeroShot {
            blocked: class(&args.blocked, "blocked")?,
            unblock_lm: args.unblock_lm,
        },
        "compositional" => SplitKind::Compositional {
            noncomp: class(&args.noncomp, "noncomp")?,
        },
        "template-set" => {
            let set = match args.set.as_deref().map(str::to_ascii_uppercase).as_deref() {
                Some("T20") => TemplateSetId::T20,
                Some("T40") => TemplateSetId::T40,
                Some("HELDOUT20") => TemplateSetId::Heldout20,
                other => {
                    return Err(domain(format!(
                        "--kind template-set needs --set T20|T40|HELDOUT20, got {other:?}"
                    )))
                }
            };
            SplitKind::TemplateSet { set }
        }
        other => return Err(domain(format!("unknown split kind {other:?}"))),
    })
}

pub fn split(run: &mut Run, args: &SplitArgs) -> CliResult<Value> {
    let g = load_grammar(run, &args.grammar)?;
    let mut schema = grammar_schema(run, &g, args.meta.as_deref())?;
    let kind = split_kind(args, &schema)?;
    let ratios = parse_ratios(&args.ratios)?;
    let content = run.read(&args.corpus)?;
    let source = args
        .corpus
        .file_stem()
        .map_or("corpus".to_string(), |s| s.to_string_lossy().into_owned());
    let report = ingest_str(
        &content,
        CorpusFormat::from_path(&args.corpus),
        &schema,
        &source,
        args.max_tokens,
    )
    .map_err(|e| domain(format!("{}: {e}", args.corpus.display())))?;
    let mut examples = report.examples;
    if args.balance_lengths {
        let counts: Vec<usize> = examples.iter().map(|e| e.token_count).collect();
        let cutoffs = derive_balanced_cutoffs(&counts, schema.num_lengths()).or_domain()?;
        schema = schema.with_cutoffs(&cutoffs).or_domain()?;
        assign_lengths(&mut examples, &schema);
    }
    let bundle = build_split(&examples, &schema, kind, ratios, run.seed()).or_domain()?;
    eprintln!(
        "{} examples ({} dropped): {} supervised, {} lm, {} val, {} test",
        examples.len(),
        report.dropped,
        bundle.train_supervised.len(),
        bundle.train_lm.len(),
        bundle.val.len(),
        bundle.test.len()
    );
    run.write_json("schema.json", &schema)?;
    run.write_json("split.json", &bundle)?;
    run.write_json(
        "split_manifest.json",
        &bundle.manifest(&examples_hash(&examples)),
    )?;
    run.write_jsonl("train_supervised.jsonl", &bundle.train_supervised)?;
    run.write_jsonl("train_lm.jsonl", &bundle.train_lm)?;
    run.write_jsonl("val.jsonl", &bundle.val)?;
    run.write_jsonl("test.jsonl", &bundle.test)?;
    let mut v = effective(args)?;
    v["resolved_kind"] = serde_json::to_value(kind).or_domain()?;
    v["cutoffs"] = json!(schema.cutoffs());
    Ok(v)
}

fn prefix_policy(rate: f64, cap: usize) -> CliResult<PrefixPolicy> {
    if !(rate > 0.0 && rate <= 1.0) || cap == 0 {
        return Err(domain(format!(
            "prefix rate must be in (0, 1] and cap positive, got {rate} and {cap}"
        )));
    }
    Ok(PrefixPolicy { rate, cap })
}

struct SplitInput {
    schema: AttributeSchema,
    bundle: SplitBundle,
}

fn load_split(run: &mut Run, dir: &Path) -> CliResult<SplitInput> {
    Ok(SplitInput {
        schema: read_json(run, dir, "schema.json")?,
        bundle: read_json(run, dir, "split.json")?,
    })
}

pub fn pairs(run: &mut Run, args: &PairsArgs) -> CliResult<Value> {
    let SplitInput { schema, bundle } = load_split(run, &args.split)?;
    let g = load_grammar(run, &args.grammar)?;
    let gen =
        CommandGenerator::new(&g.parsed.grammar, &schema).with_policy(fill_policy(&args.fill)?);
    let policy = prefix_policy(args.rate, args.prefix_cap)?;
    let commands = make_command_dataset(&bundle, &gen, run.seed()).or_domain()?;
    let pairs = make_pair_dataset(&bundle, &gen, &policy, run.seed()).or_domain()?;
    let positives = pairs.iter().filter(|p| p.y == 1).count();
    eprintln!(
        "{} commands, {} pairs ({positives} positive)",
        commands.len(),
        pairs.len()
    );
    run.write_jsonl("commands.jsonl", &commands)?;
    run.write_jsonl("pairs.jsonl", &pairs)?;
    effective(args)
}

#[derive(Debug, Serialize)]
struct TrainLog {
    model: &'static str,
    file: &'static str,
    examples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    train_accuracy: Option<f64>,
}

const MODEL_NAMES: [&str; 5] = ["ngram", "nb", "binary", "align", "conditional"];

fn model_set(raw: &str) -> CliResult<BTreeSet<&'static str>> {
    if raw == "all" {
        return Ok(MODEL_NAMES.into_iter().collect());
    }
    raw.split(',')
        .map(|m| {
            let m = m.trim();
            MODEL_NAMES.into_iter().find(|n| *n == m).ok_or_else(|| {
                domain(format!(
                    "unknown model {m:?}; known: {}",
                    MODEL_NAMES.join(", ")
                ))
            })
        })
        .collect()
}

fn save_model<M: Serialize + DeserializeOwned>(
    run: &mut Run,
    file: &str,
    kind: &str,
    data_hash: &str,
    model: M,
) -> CliResult<()> {
    let json = ModelFile::new(kind, data_hash, model)
        .to_json()
        .or_domain()?;
    run.write(file, &json)
}

pub fn train(run: &mut Run, args: &TrainArgs) -> CliResult<Value> {
    let mut which = model_set(&args.models)?;
    let SplitInput { schema, bundle } = load_split(run, &args.split)?;
    let needs_pairs = which.contains("align") || which.contains("conditional");
    let (pairs, commands): (Vec<PairExample>, Vec<CommandExample>) =
        match (&args.pairs, needs_pairs) {
            (Some(dir), true) => (
                read_jsonl(run, dir, "pairs.jsonl")?,
                read_jsonl(run, dir, "commands.jsonl")?,
            ),
            (None, true) if args.models == "all" => {
                which.remove("align");
                which.remove("conditional");
                (Vec::new(), Vec::new())
            }
            (None, true) => return Err(domain("align and conditional need --pairs")),
            _ => (Vec::new(), Vec::new()),
        };

    let mut words = BTreeSet::new();
    for spec in args.grammar.iter().flat_map(|g| g.split(',')) {
        let g = load_grammar(run, spec.trim())?;
        words.extend(grammar_words(&g.parsed.grammar, &schema));
    }
    for c in &commands {
        words.extend(command_words(&c.command.text));
    }
    for p in &pairs {
        words.extend(command_words(&p.command_text));
    }
    let texts = bundle
        .train_lm
        .iter()
        .chain(&bundle.train_supervised)
        .map(|e| e.text.as_str());
    let vocab = build_vocab(texts, &words);
    run.write_json("vocab.json", &vocab)?;

    let encode_all = |es: &[Example]| -> Vec<Vec<TokenId>> {
        es.iter().map(|e| encode_text(&vocab, &e.text)).collect()
    };
    let lm_hash = examples_hash(&bundle.train_lm);
    let sup_hash = examples_hash(&bundle.train_supervised);
    let mut log = Vec::new();

    let base = train_ngram(
        &encode_all(&bundle.train_lm),
        &vocab,
        args.order,
        args.alpha,
    )
    .or_domain()?;
    if which.contains("ngram") {
        save_model(run, "ngram.json", "ngram", &lm_hash, base.clone())?;
        log.push(TrainLog {
            model: "ngram",
            file: "ngram.json",
            examples: bundle.train_lm.len(),
            train_accuracy: None,
        });
    }
    if which.contains("nb") || which.contains("binary") {
        let policy = prefix_policy(args.rate, args.prefix_cap)?;
        let samples = prefix_samples(&bundle.train_supervised, &vocab, &policy, run.seed());
        // a zero-shot split has no supervised examples of the blocked class
        let missing = (0..schema.num_labels()).find(|&c| !samples.iter().any(|(_, l, _)| *l == c));
        if let (Some(c), "all") = (missing, args.models.as_str()) {
            eprintln!("skipping nb and binary: label {c} has no supervised examples");
            which.remove("nb");
            which.remove("binary");
        }
        if which.contains("nb") {
            let Categorical { label, length } =
                train_categorical(&samples, &schema, args.nb_alpha).or_domain()?;
            save_model(run, "nb_label.json", "nb", &sup_hash, label)?;
            save_model(run, "nb_length.json", "nb", &sup_hash, length)?;
            log.push(TrainLog {
                model: "nb",
                file: "nb_label.json",
                examples: samples.len(),
                train_accuracy: None,
            });
        }
        if which.contains("binary") {
            let Heads { label, length } =
                train_heads(&samples, &schema, args.nb_alpha).or_domain()?;
            save_model(run, "heads_label.json", "binary-heads", &sup_hash, label)?;
            save_model(run, "heads_length.json", "binary-heads", &sup_hash, length)?;
            log.push(TrainLog {
                model: "binary",
                file: "heads_label.json",
                examples: samples.len(),
                train_accuracy: None,
            });
        }
    }
    if which.contains("align") {
        let data: Vec<AlignExample> = pairs
            .iter()
            .map(|p| AlignExample::encode(p, &vocab))
            .collect();
        let config = AlignConfig {
            dim_log2: args.dim_log2,
            learning_rate: args.learning_rate,
            epochs: args.epochs,
            seed: run.seed(),
            ..AlignConfig::default()
        };
        let model = train_alignment(&data, &vocab, config).or_domain()?;
        let acc = model.train_accuracy;
        let hash = crate::run::sha256_hex(serde_json::to_string(&pairs).or_domain()?.as_bytes());
        save_model(run, "align.json", "align", &hash, model)?;
        log.push(TrainLog {
            model: "align",
            file: "align.json",
            examples: data.len(),
            train_accuracy: Some(acc),
        });
    }
    if which.contains("conditional") {
        let data: Vec<(Vec<TokenId>, Vec<TokenId>)> = commands
            .iter()
            .map(|c| {
                (
                    encode_command(&c.command.text, &vocab),
                    encode_text(&vocab, &c.text),
                )
            })
            .collect();
        let model = train_conditional_on(&data, base, ConditionalConfig::default()).or_domain()?;
        save_model(run, "conditional.json", "conditional", &sup_hash, model)?;
        log.push(TrainLog {
            model: "conditional",
            file: "conditional.json",
            examples: data.len(),
            train_accuracy: None,
        });
    }
    run.write_jsonl("train_log.jsonl", &log)?;
    let mut v = effective(args)?;
    v["trained"] = json!(which);
    v["vocab_size"] = json!(vocab.len());
    Ok(v)
}

/// Lambda preset per scenario name.
pub fn lambda_preset(scenario: &str) -> CliResult<f64> {
    match scenario {
        "full" => Ok(14.0),
        "zero-shot" => Ok(6.0),
        "compositional" => Ok(4.0),
        other => Err(domain(format!(
            "unknown scenario {other:?}; known: full, zero-shot, compositional"
        ))),
    }
}

/// One decoded text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub method: String,
    pub lambda: f64,
    pub prompted: bool,
    pub target: AttrSpec,
    pub command: String,
    pub text: String,
    pub token_count: usize,
}

pub fn decode(run: &mut Run, args: &DecodeArgs) -> CliResult<Value> {
    let method: Method = args.method.parse().map_err(domain)?;
    if args.prompted && method != Method::PrefixOnly {
        return Err(domain("--prompted only applies to --method prefix"));
    }
    let lambda = match args.lambda {
        Some(l) => l,
        None => lambda_preset(&args.scenario)?,
    };
    let config = DecodeConfig {
        method,
        k: args.k,
        lambda,
        candidate_cap: args.cap,
        max_new_tokens: args.max_tokens,
        seed: derive_seed(run.seed(), "decode"),
    };
    config.validate().or_domain()?;

    let targets: Vec<EvalTarget> = match (&args.targets, &args.split, &args.grammar) {
        (Some(path), _, _) => {
            let s = run.read(path)?;
            parse_jsonl(&s, &path.display().to_string())?
        }
        (None, Some(dir), Some(spec)) => {
            let SplitInput { schema, bundle } = load_split(run, dir)?;
            let g = load_grammar(run, spec)?;
            let gen = CommandGenerator::new(&g.parsed.grammar, &schema)
                .with_policy(fill_policy(&args.fill)?);
            eval_targets(
                &bundle.test,
                &gen,
                args.count,
                derive_seed(run.seed(), "targets"),
            )
            .or_domain()?
        }
        _ => return Err(domain("pass --targets, or --split with --grammar")),
    };
    if targets.is_empty() {
        return Err(domain("no decode targets"));
    }

    let models = &args.models;
    let vocab: Vocab = read_json(run, models, "vocab.json")?;
    let base: NGramLm = load_model(run, models, "ngram.json", "ngram")?;
    let (categorical, heads, align, conditional);
    let (steering, lm): (Steering, &dyn LmScorer) = match method {
        Method::PrefixOnly if args.prompted => {
            conditional =
                load_model::<ConditionalLm>(run, models, "conditional.json", "conditional")?;
            (Steering::PrefixNl, &conditional)
        }
        Method::PrefixOnly => (Steering::Unconditioned, &base),
        Method::Fudge => {
            categorical = Categorical {
                label: load_model::<NaiveBayes>(run, models, "nb_label.json", "nb")?,
                length: load_model::<NaiveBayes>(run, models, "nb_length.json", "nb")?,
            };
            (Steering::Categorical(&categorical), &base)
        }
        Method::FudgeBinary => {
            heads = Heads {
                label: load_model::<BinaryHeads>(run, models, "heads_label.json", "binary-heads")?,
                length: load_model::<BinaryHeads>(
                    run,
                    models,
                    "heads_length.json",
                    "binary-heads",
                )?,
            };
            (Steering::Binary(&heads), &base)
        }
        Method::FudgeNl => {
            align = load_model::<AlignmentModel>(run, models, "align.json", "align")?;
            (Steering::Alignment(&align), &base)
        }
    };
    if lm.vocab_size() != vocab.len() {
        return Err(domain("model and vocabulary sizes differ"));
    }
    let records = decode_targets(steering, lm, &vocab, &targets, &config).or_domain()?;
    let samples: Vec<SampleRecord> = records
        .into_iter()
        .enumerate()
        .map(|(index, r)| SampleRecord {
            index,
            method: method.name().to_string(),
            lambda,
            prompted: args.prompted,
            target: r.target,
            command: r.command.unwrap_or_default(),
            text: r.text,
            token_count: r.token_count,
        })
        .collect();
    run.write_jsonl("samples.jsonl", &samples)?;
    let mut v = effective(args)?;
    v["lambda"] = json!(lambda);
    Ok(v)
}

/// Label oracle from a naive-Bayes model applied to whole texts.
struct NbOracle {
    nb: NaiveBayes,
    vocab: Vocab,
}

impl LabelOracle for NbOracle {
    fn predict(&self, text: &str) -> usize {
        let mut tokens = encode_text(&self.vocab, text);
        tokens.push(EOS);
        let post = self.nb.log_posterior(&tokens);
        (0..post.len()).fold(0, |best, i| if post[i] > post[best] { i } else { best })
    }
}

#[derive(Debug, Serialize)]
struct Judgement {
    index: usize,
    predicted_label: usize,
    length_level: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    label_ok: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    length_ok: Option<bool>,
}

pub fn eval(run: &mut Run, args: &EvalArgs) -> CliResult<Value> {
    let content = run.read(&args.samples)?;
    let samples: Vec<SampleRecord> = parse_jsonl(&content, &args.samples.display().to_string())?;
    let SplitInput { schema, bundle } = load_split(run, &args.split)?;

    let mut order: Vec<usize> = (0..bundle.test.len()).collect();
    shuffle(
        &mut order,
        &mut seeded(derive_seed(run.seed(), "references")),
    );
    order.truncate(args.references);
    let references: Vec<Vec<String>> = order
        .iter()
        .map(|&i| {
            bundle.test[i]
                .text
                .split_whitespace()
                .map(str::to_string)
                .collect()
        })
        .collect();

    let vocab: Option<Vocab> = args
        .models
        .as_ref()
        .map(|d| read_json(run, d, "vocab.json"))
        .transpose()?;
    let judge: Option<NGramLm> = args
        .models
        .as_ref()
        .map(|d| load_model(run, d, "ngram.json", "ngram"))
        .transpose()?;
    let oracle: Box<dyn LabelOracle> = match args.oracle.as_str() {
        "majority" => Box::new(MajorityOracle),
        "nb" => {
            let dir = args
                .models
                .as_ref()
                .ok_or_else(|| domain("--oracle nb needs --models"))?;
            Box::new(NbOracle {
                nb: load_model(run, dir, "nb_label.json", "nb")?,
                vocab: vocab.clone().expect("loaded with the models"),
            })
        }
        other => {
            return Err(domain(format!(
                "unknown oracle {other:?}; known: majority, nb"
            )))
        }
    };

    let records: Vec<GenerationRecord> = samples
        .iter()
        .map(|s| GenerationRecord {
            target: s.target,
            command: Some(s.command.clone()),
            text: s.text.clone(),
            token_count: s.token_count,
        })
        .collect();
    let encode = |s: &str| encode_text(vocab.as_ref().expect("judge implies vocab"), s);
    let inputs = EvalInputs {
        schema: &schema,
        oracle: oracle.as_ref(),
        references: &references,
        scorer: judge
            .as_ref()
            .map(|j| (j as &dyn LmScorer, &encode as &dyn Fn(&str) -> Vec<TokenId>)),
        smoothing: args.smoothing,
    };
    let report = evaluate(&records, &inputs).or_domain()?;
    let judgements: Vec<Judgement> = samples
        .iter()
        .map(|s| {
            let predicted_label = oracle.predict(&s.text);
            let length_level = schema.length_level_of(s.token_count);
            Judgement {
                index: s.index,
                predicted_label,
                length_level,
                label_ok: s.target.label_id.map(|l| l == predicted_label),
                length_ok: s.target.length_id.map(|m| m == length_level),
            }
        })
        .collect();
    run.write_json("metrics.json", &report)?;
    run.write_jsonl("judgements.jsonl", &judgements)?;
    effective(args)
}

#[derive(Debug, Serialize)]
struct MetricsRow<'a> {
    path: String,
    metrics: &'a nlctrl::metrics::MetricsReport,
}

pub fn synthetic_e2e(run: &mut Run, args: &E2eArgs) -> CliResult<Value> {
    let mut config = match args.size.as_str() {
        "full" => E2eConfig {
            seed: run.seed(),
            ..E2eConfig::default()
        },
        "small" => E2eConfig::small(run.seed()),
        other => {
            return Err(domain(format!(
                "unknown size {other:?}; known: full, small"
            )))
        }
    };
    if let Some(n) = args.generations {
        config.generations = n;
    }
    let report = run_synthetic_e2e(&config).or_domain()?;
    run.write("report.json", &(report.to_json() + "\n"))?;
    let rows: Vec<MetricsRow> = report
        .all_metrics()
        .into_iter()
        .map(|(path, metrics)| MetricsRow { path, metrics })
        .collect();
    run.write_jsonl("rows.jsonl", &rows)?;
    let mut v = effective(args)?;
    v["experiment"] = serde_json::to_value(&config).or_domain()?;
    Ok(v)
}
