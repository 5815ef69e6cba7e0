//! Prefix-conditioned and discriminator-reweighted decoding.
//!
//! Every method shares one step: restrict the base LM's next-token
//! distribution to its `candidate_cap` most likely tokens, multiply each
//! candidate's probability by `w(t)^lambda`, renormalize, then sample from
//! the top `k`. The weight `w` depends on the method:
//!
//! | method         | w(t)                                   |
//! |----------------|----------------------------------------|
//! | `prefix`       | 1                                      |
//! | `fudge`        | product over attributes of P(a_k ∣ x·t) |
//! | `fudge-binary` | product over attributes of P(y_a_k = 1 ∣ x·t) |
//! | `fudge-nl`     | P(y_c = 1 ∣ x·t)                        |
//!
//! Discriminators see only generated tokens, never the prompt.

mod enumerate;

pub use enumerate::enumerate_conditional;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::thread;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::vocab::{TokenId, SEP};
use crate::rng::{pick_weighted, seeded, substream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("every candidate token has zero weight")]
    NumericalUnderflow,
    #[error("control does not fit method {0}")]
    ControlMismatch(Method),
    #[error("invalid decode config: {0}")]
    InvalidConfig(String),
    #[error("enumeration would visit {0} sequences (limit 1e6)")]
    TooLarge(f64),
}

/// Next-token distributions of an autoregressive model.
pub trait LmScorer: Sync {
    fn vocab_size(&self) -> usize;
    fn eos(&self) -> TokenId;
    /// Distribution over the whole vocabulary after `context`.
    fn next_distribution(&self, context: &[TokenId]) -> Vec<f64>;

    fn prob(&self, context: &[TokenId], token: TokenId) -> f64 {
        self.next_distribution(context)[token as usize]
    }
}

/// Multiclass P(a ∣ x_{1:i}) for one attribute.
pub trait AttrDiscriminator: Sync {
    fn num_options(&self) -> usize;
    fn posterior(&self, prefix: &[TokenId]) -> Vec<f64>;

    /// ln P(option ∣ prefix·t) for each candidate t.
    fn log_prob_extensions(
        &self,
        prefix: &[TokenId],
        candidates: &[TokenId],
        option: usize,
    ) -> Vec<f64> {
        extend_each(prefix, candidates, |p| self.posterior(p)[option].ln())
    }
}

/// Independent per-option heads P(y_a = 1 ∣ x_{1:i}).
pub trait BinaryHeadDiscriminator: Sync {
    fn num_options(&self) -> usize;
    fn head_prob(&self, prefix: &[TokenId], option: usize) -> f64;

    fn log_prob_extensions(
        &self,
        prefix: &[TokenId],
        candidates: &[TokenId],
        option: usize,
    ) -> Vec<f64> {
        extend_each(prefix, candidates, |p| self.head_prob(p, option).ln())
    }
}

/// P(y_c = 1 ∣ x_{1:i}): does the prefix agree with command c?
pub trait AlignmentDiscriminator: Sync {
    fn align_prob(&self, command: &[TokenId], prefix: &[TokenId]) -> f64;

    fn log_prob_extensions(
        &self,
        command: &[TokenId],
        prefix: &[TokenId],
        candidates: &[TokenId],
    ) -> Vec<f64> {
        extend_each(prefix, candidates, |p| self.align_prob(command, p).ln())
    }
}

fn extend_each(
    prefix: &[TokenId],
    candidates: &[TokenId],
    mut f: impl FnMut(&[TokenId]) -> f64,
) -> Vec<f64> {
    let mut buf = prefix.to_vec();
    buf.push(0);
    candidates
        .iter()
        .map(|&t| {
            *buf.last_mut().unwrap() = t;
            f(&buf)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "prefix")]
    PrefixOnly,
    #[serde(rename = "fudge")]
    Fudge,
    #[serde(rename = "fudge-binary")]
    FudgeBinary,
    #[serde(rename = "fudge-nl")]
    FudgeNl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::PrefixOnly => "prefix",
            Method::Fudge => "fudge",
            Method::FudgeBinary => "fudge-binary",
            Method::FudgeNl => "fudge-nl",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "prefix" | "prefix_only" => Ok(Method::PrefixOnly),
            "fudge" => Ok(Method::Fudge),
            "fudge-binary" | "fudge_binary" => Ok(Method::FudgeBinary),
            "fudge-nl" | "fudge_nl" => Ok(Method::FudgeNl),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub method: Method,
    pub k: usize,
    pub lambda: f64,
    /// Clamped to the vocabulary size.
    pub candidate_cap: usize,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            method: Method::PrefixOnly,
            k: 20,
            lambda: 1.0,
            candidate_cap: 200,
            max_new_tokens: 64,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.k == 0 || self.k > self.candidate_cap {
            return Err(DecodeError::InvalidConfig(format!(
                "need 1 <= k <= candidate_cap, got k={} cap={}",
                self.k, self.candidate_cap
            )));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(DecodeError::InvalidConfig(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Discriminator and target for one attribute.
#[derive(Clone, Copy)]
pub struct AttrTarget<'a> {
    pub discriminator: &'a dyn AttrDiscriminator,
    pub option: usize,
}

#[derive(Clone, Copy)]
pub struct HeadTarget<'a> {
    pub heads: &'a dyn BinaryHeadDiscriminator,
    pub option: usize,
}

/// What steers decoding; must agree with the configured method.
#[derive(Clone)]
pub enum Control<'a> {
    None,
    Attributes(Vec<AttrTarget<'a>>),
    BinaryHeads(Vec<HeadTarget<'a>>),
    Command {
        discriminator: &'a dyn AlignmentDiscriminator,
        command: Vec<TokenId>,
    },
}

impl Control<'_> {
    fn fits(&self, method: Method) -> bool {
        matches!(
            (method, self),
            (Method::PrefixOnly, Control::None)
                | (Method::Fudge, Control::Attributes(_))
                | (Method::FudgeBinary, Control::BinaryHeads(_))
                | (Method::FudgeNl, Control::Command { .. })
        )
    }

    /// Sum of ln w(t) over the candidates.
    fn log_weights(&self, generated: &[TokenId], candidates: &[TokenId]) -> Vec<f64> {
        let mut total = vec![0.0; candidates.len()];
        let mut add = |v: Vec<f64>| {
            for (t, x) in total.iter_mut().zip(v) {
                *t += x;
            }
        };
        match self {
            Control::None => {}
            Control::Attributes(targets) => {
                for a in targets {
                    add(a
                        .discriminator
                        .log_prob_extensions(generated, candidates, a.option));
                }
            }
            Control::BinaryHeads(targets) => {
                for h in targets {
                    add(h.heads.log_prob_extensions(generated, candidates, h.option));
                }
            }
            Control::Command {
                discriminator,
                command,
            } => {
                add(discriminator.log_prob_extensions(command, generated, candidates));
            }
        }
        total
    }
}

/// Prompt for natural-language prefix conditioning: command tokens then SEP.
pub fn nl_prompt(command: &[TokenId]) -> Vec<TokenId> {
    let mut p = command.to_vec();
    p.push(SEP);
    p
}

fn by_prob_then_id(a: &(TokenId, f64), b: &(TokenId, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then(a.0.cmp(&b.0))
}

/// Reweighted next-token distribution over the base model's top candidates,
/// sorted by probability (ties by lower token id).
///
/// The base LM sees `prompt·generated`; discriminators see `generated`.
pub fn next_token_distribution(
    config: &DecodeConfig,
    base: &dyn LmScorer,
    control: &Control,
    prompt: &[TokenId],
    generated: &[TokenId],
) -> Result<Vec<(TokenId, f64)>, DecodeError> {
    config.validate()?;
    if !control.fits(config.method) {
        return Err(DecodeError::ControlMismatch(config.method));
    }
    let mut context = Vec::with_capacity(prompt.len() + generated.len());
    context.extend_from_slice(prompt);
    context.extend_from_slice(generated);
    let p = base.next_distribution(&context);

    let cap = config.candidate_cap.min(p.len());
    let mut ranked: Vec<(TokenId, f64)> = p
        .iter()
        .enumerate()
        .map(|(i, &x)| (i as TokenId, x))
        .collect();
    if cap < ranked.len() {
        ranked.select_nth_unstable_by(cap - 1, by_prob_then_id);
        ranked.truncate(cap);
    }
    ranked.sort_by(by_prob_then_id);
    let candidates: Vec<TokenId> = ranked.iter().map(|(t, _)| *t).collect();

    let mut scores: Vec<f64> = ranked.iter().map(|(_, x)| x.ln()).collect();
    // w^0 = 1 even where w = 0, so lambda = 0 never consults the control
    if config.lambda != 0.0 {
        for (s, lw) in scores
            .iter_mut()
            .zip(control.log_weights(generated, &candidates))
        {
            *s += config.lambda * lw;
        }
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(DecodeError::NumericalUnderflow);
    }
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut dist: Vec<(TokenId, f64)> = candidates
        .into_iter()
        .zip(exps.into_iter().map(|e| e / z))
        .collect();
    dist.sort_by(by_prob_then_id);
    Ok(dist)
}

/// The `k` most likely entries of a sorted distribution, renormalized.
pub fn top_k(dist: &[(TokenId, f64)], k: usize) -> Vec<(TokenId, f64)> {
    let head = &dist[..k.min(dist.len())];
    let z: f64 = head.iter().map(|(_, p)| p).sum();
    head.iter().map(|&(t, p)| (t, p / z)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedSequence {
    /// Generated tokens, including a final EOS when one was sampled.
    pub tokens: Vec<TokenId>,
    pub ended_with_eos: bool,
}

impl GeneratedSequence {
    /// Tokens without the final EOS.
    pub fn text_tokens(&self) -> &[TokenId] {
        if self.ended_with_eos {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }
}

pub fn sample_sequence_with<R: Rng + ?Sized>(
    config: &DecodeConfig,
    base: &dyn LmScorer,
    control: &Control,
    prompt: &[TokenId],
    rng: &mut R,
) -> Result<GeneratedSequence, DecodeError> {
    let eos = base.eos();
    let mut tokens = Vec::new();
    while tokens.len() < config.max_new_tokens {
        let dist = top_k(
            &next_token_distribution(config, base, control, prompt, &tokens)?,
            config.k,
        );
        let probs: Vec<f64> = dist.iter().map(|(_, p)| *p).collect();
        let t = dist[pick_weighted(&probs, rng)].0;
        tokens.push(t);
        if t == eos {
            return Ok(GeneratedSequence {
                tokens,
                ended_with_eos: true,
            });
        }
    }
    Ok(GeneratedSequence {
        tokens,
        ended_with_eos: false,
    })
}

/// Sample one sequence with a generator seeded from `config.seed`.
pub fn sample_sequence(
    config: &DecodeConfig,
    base: &dyn LmScorer,
    control: &Control,
    prompt: &[TokenId],
) -> Result<GeneratedSequence, DecodeError> {
    sample_sequence_with(config, base, control, prompt, &mut seeded(config.seed))
}

/// One generation request in a batch.
#[derive(Clone)]
pub struct Job<'a> {
    pub control: Control<'a>,
    pub prompt: Vec<TokenId>,
}

/// Sample every job, job `i` on sub-stream `i` of `config.seed`. Work is
/// spread over threads; results do not depend on the thread count.
pub fn sample_batch(
    config: &DecodeConfig,
    base: &dyn LmScorer,
    jobs: &[Job],
) -> Result<Vec<GeneratedSequence>, DecodeError> {
    let threads = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len().max(1));
    let chunk = jobs.len().div_ceil(threads).max(1);
    let results: Vec<Result<Vec<GeneratedSequence>, DecodeError>> = thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                scope.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(j, job)| {
                            let index = (c * chunk + j) as u64;
                            let mut rng = substream(config.seed, index);
                            sample_sequence_with(config, base, &job.control, &job.prompt, &mut rng)
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("decode worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(jobs.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}
