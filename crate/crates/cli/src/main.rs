//! `nlctrl`: command generation, splits, training, controlled decoding and
//! evaluation as a file-based pipeline.
//!
//! Every subcommand writes its outputs plus `manifest.json` to `--out-dir`.
//! Options can also come from `--config <json>`: either a flat object of
//! option names or one object per subcommand name. Flags given on the
//! command line win over the file.

mod pipeline;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use run::{domain, io, CliResult, OrDomain, Run};

#[derive(Parser, Debug)]
#[command(
    name = "nlctrl",
    version,
    about = "Natural-language commands for controlled text generation"
)]
struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON file with option values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where outputs and the manifest are written.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Parse and lint a grammar.
    GrammarCheck(GrammarCheckArgs),
    /// Generate commands from a grammar.
    Generate(GenerateArgs),
    /// Build a train/val/test split of a labeled corpus.
    Split(SplitArgs),
    /// Build command and (command, prefix) pair datasets for a split.
    Pairs(PairsArgs),
    /// Train the reference models on a split.
    Train(TrainArgs),
    /// Decode texts under a control method.
    Decode(DecodeArgs),
    /// Score decoded texts.
    Eval(EvalArgs),
    /// Run the whole experiment on the synthetic letter language.
    SyntheticE2e(E2eArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrammarCheckArgs {
    /// Grammar file, or `builtin:<name>`.
    pub grammar: String,
    /// Treat lint warnings as errors.
    #[arg(long)]
    #[serde(default)]
    pub strict: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateArgs {
    /// Grammar file, or `builtin:<name>`.
    #[arg(long)]
    pub grammar: String,
    /// Schema sidecar; defaults to `<grammar stem>.meta.json`.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Full schema JSON, e.g. `schema.json` from a split; overrides the
    /// grammar's attribute sections.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Label name or id for every command; random when neither attribute is given.
    #[arg(long)]
    pub label: Option<String>,
    /// Length level id for every command.
    #[arg(long)]
    pub length: Option<usize>,
    /// `uniform` or `canonical` verbalizer choice.
    #[arg(long, default_value = "uniform")]
    pub fill: String,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitArgs {
    /// JSONL or CSV corpus with `text` and `label` fields.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub grammar: String,
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// `full`, `zero-shot`, `compositional` or `template-set`.
    #[arg(long, default_value = "full")]
    pub kind: String,
    /// Label name or id held out of supervised training (zero-shot).
    #[arg(long)]
    pub blocked: Option<String>,
    /// Keep the blocked class in the LM training stream (zero-shot).
    #[arg(long)]
    #[serde(default)]
    pub unblock_lm: bool,
    /// Label name or id never paired with a length in training (compositional).
    #[arg(long)]
    pub noncomp: Option<String>,
    /// `T20`, `T40` or `HELDOUT20` (template-set).
    #[arg(long)]
    pub set: Option<String>,
    /// Train, val and test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub ratios: String,
    /// Drop texts with more tokens than this.
    #[arg(long)]
    pub max_tokens: Option<usize>,
    /// Replace the grammar's length cutoffs by ones that balance the corpus.
    #[arg(long)]
    #[serde(default)]
    pub balance_lengths: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsArgs {
    /// Output directory of `split`.
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub grammar: String,
    #[arg(long, default_value = "uniform")]
    pub fill: String,
    /// Chance that a prefix length of a text becomes a pair.
    #[arg(long, default_value_t = 0.25)]
    pub rate: f64,
    /// Longest prefix used.
    #[arg(long, default_value_t = 64)]
    pub prefix_cap: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    /// Output directory of `split`.
    #[arg(long)]
    pub split: PathBuf,
    /// Output directory of `pairs`; needed for `align` and `conditional`.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Grammars whose words join the vocabulary (comma separated).
    #[arg(long)]
    pub grammar: Option<String>,
    /// Comma-separated subset of ngram,nb,binary,align,conditional, or `all`.
    #[arg(long, default_value = "all")]
    pub models: String,
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub nb_alpha: f64,
    #[arg(long, default_value_t = 0.25)]
    pub rate: f64,
    #[arg(long, default_value_t = 64)]
    pub prefix_cap: usize,
    #[arg(long, default_value_t = 18)]
    pub dim_log2: u32,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeArgs {
    /// Output directory of `train`.
    #[arg(long)]
    pub models: PathBuf,
    /// `prefix`, `fudge`, `fudge-binary` or `fudge-nl`.
    #[arg(long, default_value = "prefix")]
    pub method: String,
    /// With `prefix`: prompt the command-conditioned LM with the command.
    #[arg(long)]
    #[serde(default)]
    pub prompted: bool,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    /// Control strength; defaults to the scenario preset.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Lambda preset: `full` (14), `zero-shot` (6) or `compositional` (4).
    #[arg(long, default_value = "full")]
    pub scenario: String,
    /// Base-LM candidates considered per step.
    #[arg(long, default_value_t = 200)]
    pub cap: usize,
    #[arg(long, default_value_t = 64)]
    pub max_tokens: usize,
    /// JSONL of `{attrs, command}` targets.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Without `--targets`: draw targets from this split's test set.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Without `--targets`: grammar for the target commands.
    #[arg(long)]
    pub grammar: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value = "uniform")]
    pub fill: String,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    /// `samples.jsonl` from `decode`.
    #[arg(long)]
    pub samples: PathBuf,
    /// Output directory of `split`, for the schema and BLEU references.
    #[arg(long)]
    pub split: PathBuf,
    /// `majority` (synthetic task) or `nb` (label model from `--models`).
    #[arg(long, default_value = "majority")]
    pub oracle: String,
    /// Output directory of `train`; its n-gram LM scores perplexity.
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub references: usize,
    /// Add-1 smoothing of BLEU precisions.
    #[arg(long)]
    #[serde(default)]
    pub smoothing: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct E2eArgs {
    /// `full` or `small`.
    #[arg(long, default_value = "full")]
    pub size: String,
    /// Generations per report row.
    #[arg(long)]
    pub generations: Option<usize>,
}

/// Overlay config-file values on options not given on the command line.
fn merge<T: Serialize + DeserializeOwned>(
    parsed: T,
    matches: &ArgMatches,
    config: Option<&serde_json::Value>,
    name: &str,
) -> CliResult<T> {
    let Some(config) = config else {
        return Ok(parsed);
    };
    let section = config.get(name).unwrap_or(config);
    let Some(section) = section.as_object() else {
        return Err(domain(format!("config for {name} must be a JSON object")));
    };
    let mut merged = serde_json::to_value(&parsed).or_domain()?;
    let fields = merged
        .as_object_mut()
        .expect("options serialize to an object");
    for (key, value) in section {
        if !fields.contains_key(key) {
            return Err(domain(format!("unknown option {key:?} for {name}")));
        }
        if matches.value_source(key) != Some(ValueSource::CommandLine) {
            fields.insert(key.clone(), value.clone());
        }
    }
    serde_json::from_value(merged).map_err(|e| domain(format!("config for {name}: {e}")))
}

fn load_config(path: Option<&Path>) -> CliResult<Option<serde_json::Value>> {
    let Some(path) = path else { return Ok(None) };
    let s = std::fs::read_to_string(path).map_err(|e| io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&s)
        .map(Some)
        .map_err(|e| domain(format!("{}: {e}", path.display())))
}

fn dispatch(cli: &Cli, sub: &ArgMatches) -> CliResult<()> {
    let config = load_config(cli.config.as_deref())?;
    let config = config.as_ref();
    let name = sub_name(&cli.command);
    let mut run = Run::new(name, cli.seed, &cli.out_dir);
    let result =
        match &cli.command {
            Cmd::GrammarCheck(a) => merge(a.clone(), sub, config, name)
                .and_then(|a| pipeline::grammar_check(&mut run, &a)),
            Cmd::Generate(a) => {
                merge(a.clone(), sub, config, name).and_then(|a| pipeline::generate(&mut run, &a))
            }
            Cmd::Split(a) => {
                merge(a.clone(), sub, config, name).and_then(|a| pipeline::split(&mut run, &a))
            }
            Cmd::Pairs(a) => {
                merge(a.clone(), sub, config, name).and_then(|a| pipeline::pairs(&mut run, &a))
            }
            Cmd::Train(a) => {
                merge(a.clone(), sub, config, name).and_then(|a| pipeline::train(&mut run, &a))
            }
            Cmd::Decode(a) => {
                merge(a.clone(), sub, config, name).and_then(|a| pipeline::decode(&mut run, &a))
            }
            Cmd::Eval(a) => {
                merge(a.clone(), sub, config, name).and_then(|a| pipeline::eval(&mut run, &a))
            }
            Cmd::SyntheticE2e(a) => merge(a.clone(), sub, config, name)
                .and_then(|a| pipeline::synthetic_e2e(&mut run, &a)),
        };
    match result {
        Ok(effective) => run.finish(effective),
        Err(e) => {
            run.abort();
            Err(e)
        }
    }
}

fn sub_name(cmd: &Cmd) -> &'static str {
    match cmd {
        Cmd::GrammarCheck(_) => "grammar-check",
        Cmd::Generate(_) => "generate",
        Cmd::Split(_) => "split",
        Cmd::Pairs(_) => "pairs",
        Cmd::Train(_) => "train",
        Cmd::Decode(_) => "decode",
        Cmd::Eval(_) => "eval",
        Cmd::SyntheticE2e(_) => "synthetic-e2e",
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let (_, sub) = matches.subcommand().expect("a subcommand is required");
    match dispatch(&cli, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
