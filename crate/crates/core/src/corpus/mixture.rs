use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::rng::{derive_seed, pick_weighted, seeded};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub name: String,
    pub count: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePlan {
    pub components: Vec<MixtureComponent>,
    pub artificial_limit: usize,
}

/// Examples-proportional rates: `min(size, limit)` normalized to sum 1.
pub fn plan_mixture(
    datasets: &[(String, usize)],
    artificial_limit: usize,
) -> Result<MixturePlan, CorpusError> {
    if datasets.is_empty() || artificial_limit == 0 || datasets.iter().any(|(_, n)| *n == 0) {
        return Err(CorpusError::EmptyCorpus);
    }
    let capped: Vec<usize> = datasets
        .iter()
        .map(|(_, n)| (*n).min(artificial_limit))
        .collect();
    let total: usize = capped.iter().sum();
    Ok(MixturePlan {
        components: datasets
            .iter()
            .zip(&capped)
            .map(|((name, count), c)| MixtureComponent {
                name: name.clone(),
                count: *count,
                rate: *c as f64 / total as f64,
            })
            .collect(),
        artificial_limit,
    })
}

/// Draw `total` records, each from a source chosen by the plan's rates.
/// Each source is read in order and wraps around when exhausted. Returns
/// (component index, record) pairs.
pub fn sample_mixture<T: Clone>(
    plan: &MixturePlan,
    streams: &[Vec<T>],
    total: usize,
    seed: u64,
) -> Result<Vec<(usize, T)>, CorpusError> {
    if streams.len() != plan.components.len() || streams.iter().any(Vec::is_empty) {
        return Err(CorpusError::EmptyCorpus);
    }
    let rates: Vec<f64> = plan.components.iter().map(|c| c.rate).collect();
    let mut rng = seeded(derive_seed(seed, "mixture"));
    let mut cursor = vec![0usize; streams.len()];
    let mut out = Vec::with_capacity(total);
    for _ in 0..total {
        let s = pick_weighted(&rates, &mut rng);
        out.push((s, streams[s][cursor[s] % streams[s].len()].clone()));
        cursor[s] += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn named(v: &[(&str, usize)]) -> Vec<(String, usize)> {
        v.iter().map(|(n, c)| (n.to_string(), *c)).collect()
    }

    #[test]
    fn rates() {
        let p = plan_mixture(&named(&[("A", 100), ("B", 100)]), 1000).unwrap();
        assert_eq!(p.components[0].rate, 0.5);
        let p = plan_mixture(&named(&[("A", 120_000), ("B", 5000)]), 120_000).unwrap();
        assert!((p.components[0].rate - 0.96).abs() < 1e-12);
        assert!((p.components[1].rate - 0.04).abs() < 1e-12);
        let p = plan_mixture(&named(&[("A", 500), ("B", 50)]), 100).unwrap();
        assert!((p.components[0].rate - 100.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_follows_plan() {
        let p = plan_mixture(&named(&[("A", 300), ("B", 100)]), 1000).unwrap();
        let draws = sample_mixture(&p, &[vec!['a'], vec!['b', 'c']], 100_000, 4).unwrap();
        let a = draws.iter().filter(|(s, _)| *s == 0).count() as f64;
        let sigma = (100_000.0f64 * 0.75 * 0.25).sqrt();
        assert!((a - 75_000.0).abs() < 3.0 * sigma, "{a}");
        let bs: Vec<char> = draws
            .iter()
            .filter(|(s, _)| *s == 1)
            .map(|(_, c)| *c)
            .take(4)
            .collect();
        assert_eq!(bs, ['b', 'c', 'b', 'c']);
    }
}
