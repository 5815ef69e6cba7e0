//! Three-step command generation: expand a seed template, fill slots with
//! verbalizers, fix simple grammar.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{Choice, Expansion, Grammar, GrammarError, Sampler, SlotKind, Symbol};
use crate::rng::{pick_uniform, substream};
use crate::schema::{AttrSpec, AttributeSchema, SchemaError};

pub const DEFAULT_MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CommandError {
    #[error("no seed template realizes the requested slots after {0} attempts")]
    NoFeasibleTemplate(usize),
    #[error("slot {0} has no matching attribute")]
    UnsatisfiedSlot(SlotKind),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{} of the batch failed; first at index {}: {}", .0.len(), .0[0].0, .0[0].1)]
pub struct BatchError(pub Vec<(usize, CommandError)>);

/// How slot verbalizers are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FillPolicy {
    /// Uniform over the entity's verbalizer list.
    #[default]
    Uniform,
    /// Always the first listed verbalizer.
    Canonical,
}

/// One slot occurrence and the verbalizer chosen for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotFill {
    pub slot: SlotKind,
    /// Index into the entity's verbalizer list.
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    pub text: String,
    pub attrs: AttrSpec,
    pub template_index: usize,
    pub derivation: Vec<Choice>,
    pub slot_fills: Vec<SlotFill>,
    pub grammar_hash: String,
}

/// JSONL line for a generated command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_id: Option<usize>,
    pub template_index: usize,
    pub derivation: Vec<Choice>,
    pub slot_fills: Vec<SlotFill>,
    pub grammar_hash: String,
    pub seed: u64,
}

impl Command {
    pub fn to_record(&self, seed: u64) -> CommandRecord {
        CommandRecord {
            text: self.text.clone(),
            label_id: self.attrs.label_id,
            length_id: self.attrs.length_id,
            template_index: self.template_index,
            derivation: self.derivation.clone(),
            slot_fills: self.slot_fills.clone(),
            grammar_hash: self.grammar_hash.clone(),
            seed,
        }
    }
}

/// Whether an expanded skeleton carries exactly the slots `attrs` needs:
/// one value slot per present attribute, none for absent ones, and name
/// slots only for present attributes.
pub fn slots_match(skeleton: &[Symbol], attrs: &AttrSpec) -> bool {
    let count = |kind: SlotKind| {
        skeleton
            .iter()
            .filter(|s| matches!(s, Symbol::Slot(k) if *k == kind))
            .count()
    };
    let label = attrs.label_id.is_some();
    let length = attrs.length_id.is_some();
    count(SlotKind::LabelValue) == usize::from(label)
        && count(SlotKind::LengthValue) == usize::from(length)
        && (label || count(SlotKind::LabelName) == 0)
        && (length || count(SlotKind::LengthName) == 0)
}

fn verbalizers<'s>(
    schema: &'s AttributeSchema,
    attrs: &AttrSpec,
    slot: SlotKind,
) -> Result<&'s [String], CommandError> {
    let missing = CommandError::UnsatisfiedSlot(slot);
    Ok(match slot {
        SlotKind::LabelValue => &schema.labels[attrs.label_id.ok_or(missing)?].verbalizers,
        SlotKind::LengthValue => &schema.lengths[attrs.length_id.ok_or(missing)?].verbalizers,
        SlotKind::LabelName => {
            attrs.label_id.ok_or(missing)?;
            &schema.label_attr_names
        }
        SlotKind::LengthName => {
            attrs.length_id.ok_or(missing)?;
            &schema.length_attr_names
        }
        SlotKind::Domain => &schema.domains,
    })
}

/// Command generator over one grammar and schema.
#[derive(Debug, Clone)]
pub struct CommandGenerator<'a> {
    sampler: Sampler<'a>,
    schema: &'a AttributeSchema,
    pub policy: FillPolicy,
    pub max_rejections: usize,
}

impl<'a> CommandGenerator<'a> {
    pub fn new(grammar: &'a Grammar, schema: &'a AttributeSchema) -> Self {
        CommandGenerator {
            sampler: grammar.sampler(),
            schema,
            policy: FillPolicy::Uniform,
            max_rejections: DEFAULT_MAX_REJECTIONS,
        }
    }

    pub fn with_policy(mut self, policy: FillPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn grammar(&self) -> &'a Grammar {
        self.sampler.grammar()
    }

    pub fn schema(&self) -> &'a AttributeSchema {
        self.schema
    }

    /// Step 1: sample template expansions until one carries the required slots.
    pub fn sample_feasible<R: Rng + ?Sized>(
        &self,
        attrs: &AttrSpec,
        rng: &mut R,
    ) -> Result<Expansion, CommandError> {
        for _ in 0..self.max_rejections {
            let expansion = self.sampler.sample_expansion(rng)?;
            if slots_match(&expansion.skeleton, attrs) {
                return Ok(expansion);
            }
        }
        Err(CommandError::NoFeasibleTemplate(self.max_rejections))
    }

    pub fn generate<R: Rng + ?Sized>(
        &self,
        attrs: &AttrSpec,
        rng: &mut R,
    ) -> Result<Command, CommandError> {
        self.schema.check(attrs)?;
        let expansion = self.sample_feasible(attrs, rng)?;
        // step 2
        let mut fills = Vec::new();
        for symbol in &expansion.skeleton {
            if let Symbol::Slot(kind) = symbol {
                let options = verbalizers(self.schema, attrs, *kind)?;
                let index = match self.policy {
                    FillPolicy::Uniform => pick_uniform(options.len(), rng),
                    FillPolicy::Canonical => 0,
                };
                fills.push(SlotFill {
                    slot: *kind,
                    index,
                    text: options[index].clone(),
                });
            }
        }
        // step 3
        let text = render(&expansion.skeleton, &fills);
        Ok(Command {
            text,
            attrs: *attrs,
            template_index: expansion.template_index,
            derivation: expansion.choices,
            slot_fills: fills,
            grammar_hash: self.grammar().source_hash.clone(),
        })
    }

    /// Element `i` uses sub-stream `i` of `seed`, so the output for an
    /// AttrSpec does not depend on its neighbours or on evaluation order.
    pub fn generate_batch(
        &self,
        attrs: &[AttrSpec],
        seed: u64,
    ) -> Result<Vec<Command>, BatchError> {
        let mut out = Vec::with_capacity(attrs.len());
        let mut errors = Vec::new();
        for (i, a) in attrs.iter().enumerate() {
            match self.generate(a, &mut substream(seed, i as u64)) {
                Ok(c) => out.push(c),
                Err(e) => errors.push((i, e)),
            }
        }
        if errors.is_empty() {
            Ok(out)
        } else {
            Err(BatchError(errors))
        }
    }
}

pub fn generate_command<R: Rng + ?Sized>(
    g: &Grammar,
    schema: &AttributeSchema,
    attrs: &AttrSpec,
    rng: &mut R,
) -> Result<Command, CommandError> {
    CommandGenerator::new(g, schema).generate(attrs, rng)
}

pub fn generate_batch(
    g: &Grammar,
    schema: &AttributeSchema,
    attrs: &[AttrSpec],
    seed: u64,
) -> Result<Vec<Command>, BatchError> {
    CommandGenerator::new(g, schema).generate_batch(attrs, seed)
}

fn render(skeleton: &[Symbol], fills: &[SlotFill]) -> String {
    let mut raw = String::new();
    let mut fills = fills.iter();
    for s in skeleton {
        match s {
            Symbol::Terminal(t) => raw.push_str(t),
            Symbol::Slot(_) => raw.push_str(&fills.next().expect("one fill per slot").text),
            Symbol::Nonterminal(_) => unreachable!("skeletons are fully expanded"),
        }
    }
    postprocess(&raw)
}

/// Rebuild a command's text from its recorded derivation and slot fills.
pub fn replay(
    g: &Grammar,
    schema: &AttributeSchema,
    attrs: &AttrSpec,
    template_index: usize,
    derivation: &[Choice],
    fills: &[SlotFill],
) -> Result<String, CommandError> {
    let skeleton = g.replay(template_index, derivation)?;
    let slots: Vec<SlotKind> = skeleton
        .iter()
        .filter_map(|s| match s {
            Symbol::Slot(k) => Some(*k),
            _ => None,
        })
        .collect();
    if slots.len() != fills.len() {
        return Err(CommandError::Grammar(GrammarError::InvalidReplay(format!(
            "{} slots but {} fills",
            slots.len(),
            fills.len()
        ))));
    }
    for (kind, fill) in slots.iter().zip(fills) {
        let options = verbalizers(schema, attrs, *kind)?;
        if fill.slot != *kind || options.get(fill.index) != Some(&fill.text) {
            return Err(CommandError::UnsatisfiedSlot(*kind));
        }
    }
    Ok(render(&skeleton, fills))
}

const CONSONANT_SOUND: [&str; 5] = ["university", "user", "one", "unique", "european"];
const VOWEL_SOUND: [&str; 2] = ["hour", "honest"];

fn wants_an(next: &str) -> Option<bool> {
    let word: String = next
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    let first = word.chars().next().filter(|c| c.is_alphabetic())?;
    if CONSONANT_SOUND.contains(&word.as_str()) {
        return Some(false);
    }
    if VOWEL_SOUND.contains(&word.as_str()) {
        return Some(true);
    }
    Some(matches!(first, 'a' | 'e' | 'i' | 'o' | 'u'))
}

/// Article agreement, whitespace collapse, initial capital, final period.
pub fn postprocess(raw: &str) -> String {
    let mut words: Vec<String> = raw.split_whitespace().map(str::to_string).collect();
    for i in 0..words.len().saturating_sub(1) {
        let Some(an) = wants_an(&words[i + 1]) else {
            continue;
        };
        let fixed = match (words[i].as_str(), an) {
            ("a", true) => "an",
            ("A", true) => "An",
            ("an", false) => "a",
            ("An", false) => "A",
            _ => continue,
        };
        words[i] = fixed.to_string();
    }
    let mut text = words.join(" ");
    if let Some((pos, c)) = text.char_indices().find(|(_, c)| c.is_alphabetic()) {
        let upper: String = c.to_uppercase().collect();
        text.replace_range(pos..pos + c.len_utf8(), &upper);
    }
    if !text.ends_with(['.', '!', '?']) {
        text.push('.');
    }
    text
}
