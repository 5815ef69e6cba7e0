use super::{next_token_distribution, top_k, Control, DecodeConfig, DecodeError, LmScorer};
use crate::models::vocab::TokenId;

const MAX_SEQUENCES: f64 = 1e6;

/// Exact distribution of [`super::sample_sequence`] with `max_new_tokens =
/// horizon`: every reachable sequence (ending at EOS or at the horizon) with
/// its chain-rule probability under the same top-k truncation.
pub fn enumerate_conditional(
    config: &DecodeConfig,
    base: &dyn LmScorer,
    control: &Control,
    prompt: &[TokenId],
    horizon: usize,
) -> Result<Vec<(Vec<TokenId>, f64)>, DecodeError> {
    let size = (base.vocab_size() as f64).powi(horizon as i32);
    if size > MAX_SEQUENCES {
        return Err(DecodeError::TooLarge(size));
    }
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(horizon);
    walk(
        config,
        base,
        control,
        prompt,
        horizon,
        &mut prefix,
        1.0,
        &mut out,
    )?;
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn walk(
    config: &DecodeConfig,
    base: &dyn LmScorer,
    control: &Control,
    prompt: &[TokenId],
    horizon: usize,
    prefix: &mut Vec<TokenId>,
    mass: f64,
    out: &mut Vec<(Vec<TokenId>, f64)>,
) -> Result<(), DecodeError> {
    if prefix.len() == horizon || prefix.last() == Some(&base.eos()) {
        out.push((prefix.clone(), mass));
        return Ok(());
    }
    let dist = top_k(
        &next_token_distribution(config, base, control, prompt, prefix)?,
        config.k,
    );
    for (t, p) in dist {
        if p == 0.0 {
            continue;
        }
        prefix.push(t);
        walk(
            config,
            base,
            control,
            prompt,
            horizon,
            prefix,
            mass * p,
            out,
        )?;
        prefix.pop();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::tests::TableLm;
    use crate::decode::Method;

    #[test]
    fn horizon_one_is_truncated_distribution() {
        let base = TableLm(vec![0.1, 0.2, 0.3, 0.4]);
        let cfg = DecodeConfig {
            method: Method::PrefixOnly,
            k: 2,
            lambda: 1.0,
            candidate_cap: 4,
            max_new_tokens: 1,
            seed: 0,
        };
        let e = enumerate_conditional(&cfg, &base, &Control::None, &[], 1).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].0, vec![2]);
        assert!((e[0].1 - 3.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn nine_sequences_sum_to_one() {
        let base = TableLm(vec![0.2, 0.3, 0.5]);
        let cfg = DecodeConfig {
            method: Method::PrefixOnly,
            k: 3,
            lambda: 1.0,
            candidate_cap: 3,
            max_new_tokens: 2,
            seed: 0,
        };
        let e = enumerate_conditional(&cfg, &base, &Control::None, &[], 2).unwrap();
        assert_eq!(e.len(), 9);
        assert!((e.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
        let big = TableLm(vec![0.01; 100]);
        assert!(matches!(
            enumerate_conditional(&cfg, &big, &Control::None, &[], 4),
            Err(DecodeError::TooLarge(_))
        ));
    }
}
