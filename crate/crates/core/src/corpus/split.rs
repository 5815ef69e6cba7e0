use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{CorpusError, Example};
use crate::rng::{derive_seed, seeded, shuffle, RNG_ALGORITHM};
use crate::schema::{AttrSpec, AttributeSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemplateSetId {
    T20,
    T40,
    #[serde(rename = "HELDOUT20")]
    Heldout20,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitKind {
    Full,
    TemplateSet { set: TemplateSetId },
    ZeroShot { blocked: usize, unblock_lm: bool },
    Compositional { noncomp: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Ratios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, CorpusError> {
        let r = Ratios { train, val, test };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p <= 0.0)
            || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(CorpusError::InvalidRatios);
        }
        Ok(())
    }
}

impl Default for Ratios {
    fn default() -> Self {
        Ratios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitBundle {
    pub kind: SplitKind,
    pub seed: u64,
    pub ratios: Ratios,
    pub train_supervised: Vec<Example>,
    pub train_lm: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    /// Ids whose commands and prefixes must omit the length attribute.
    pub length_suppressed: BTreeSet<String>,
    /// Named test strata as indices into `test`.
    pub test_strata: BTreeMap<String, Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub kind: SplitKind,
    pub seed: u64,
    pub ratios: Ratios,
    pub rng: String,
    pub corpus_hash: String,
    pub train_supervised: Vec<String>,
    pub train_lm: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub length_suppressed: Vec<String>,
    pub test_strata: BTreeMap<String, Vec<String>>,
}

impl SplitBundle {
    /// Attributes a training command for `e` should express.
    pub fn command_attrs(&self, e: &Example) -> AttrSpec {
        if self.length_suppressed.contains(&e.id) {
            AttrSpec::label(e.label_id)
        } else {
            e.attrs()
        }
    }

    /// Whether a training command may express `attrs` under this split.
    /// Negative commands must not leak the blocked class or a
    /// non-compositional combination.
    pub fn allows(&self, attrs: &AttrSpec) -> bool {
        match self.kind {
            SplitKind::ZeroShot { blocked, .. } => attrs.label_id != Some(blocked),
            SplitKind::Compositional { noncomp } => {
                !(attrs.label_id == Some(noncomp) && attrs.length_id.is_some())
            }
            _ => true,
        }
    }

    pub fn stratum(&self, name: &str) -> Vec<&Example> {
        self.test_strata
            .get(name)
            .map(|ix| ix.iter().map(|&i| &self.test[i]).collect())
            .unwrap_or_default()
    }

    pub fn manifest(&self, corpus_hash: &str) -> SplitManifest {
        let ids = |v: &[Example]| v.iter().map(|e| e.id.clone()).collect();
        SplitManifest {
            kind: self.kind,
            seed: self.seed,
            ratios: self.ratios,
            rng: RNG_ALGORITHM.to_string(),
            corpus_hash: corpus_hash.to_string(),
            train_supervised: ids(&self.train_supervised),
            train_lm: ids(&self.train_lm),
            val: ids(&self.val),
            test: ids(&self.test),
            length_suppressed: self.length_suppressed.iter().cloned().collect(),
            test_strata: self
                .test_strata
                .iter()
                .map(|(k, ix)| {
                    (
                        k.clone(),
                        ix.iter().map(|&i| self.test[i].id.clone()).collect(),
                    )
                })
                .collect(),
        }
    }
}

pub fn build_split(
    examples: &[Example],
    schema: &AttributeSchema,
    kind: SplitKind,
    ratios: Ratios,
    seed: u64,
) -> Result<SplitBundle, CorpusError> {
    ratios.validate()?;
    if examples.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    match kind {
        SplitKind::ZeroShot { blocked: c, .. } | SplitKind::Compositional { noncomp: c }
            if c >= schema.num_labels() =>
        {
            return Err(CorpusError::UnknownClass(c));
        }
        _ => {}
    }

    let n = examples.len();
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, &mut seeded(derive_seed(seed, "split")));
    let n_train = ((ratios.train * n as f64).round() as usize).min(n);
    let n_val = ((ratios.val * n as f64).round() as usize).min(n - n_train);
    let mut part = vec![0u8; n];
    for &i in &order[n_train..n_train + n_val] {
        part[i] = 1;
    }
    for &i in &order[n_train + n_val..] {
        part[i] = 2;
    }
    let pick = |p: u8| -> Vec<Example> {
        examples
            .iter()
            .zip(&part)
            .filter(|(_, q)| **q == p)
            .map(|(e, _)| e.clone())
            .collect()
    };
    let train = pick(0);
    let mut val = pick(1);
    let test = pick(2);

    let mut length_suppressed = BTreeSet::new();
    let mut test_strata = BTreeMap::new();
    let (train_supervised, train_lm) = match kind {
        SplitKind::Full | SplitKind::TemplateSet { .. } => {
            test_strata.insert("all".to_string(), (0..test.len()).collect());
            (train.clone(), train)
        }
        SplitKind::ZeroShot {
            blocked,
            unblock_lm,
        } => {
            let seen: Vec<Example> = train
                .iter()
                .filter(|e| e.label_id != blocked)
                .cloned()
                .collect();
            val.retain(|e| e.label_id != blocked);
            let (zs, rest): (Vec<usize>, Vec<usize>) =
                (0..test.len()).partition(|&i| test[i].label_id == blocked);
            test_strata.insert("zero_shot".to_string(), zs);
            test_strata.insert("seen".to_string(), rest);
            let lm = if unblock_lm { train } else { seen.clone() };
            (seen, lm)
        }
        SplitKind::Compositional { noncomp } => {
            for e in &train {
                if e.label_id == noncomp {
                    length_suppressed.insert(e.id.clone());
                }
            }
            for e in &val {
                if e.label_id == noncomp {
                    length_suppressed.insert(e.id.clone());
                }
            }
            let (nc, rest): (Vec<usize>, Vec<usize>) =
                (0..test.len()).partition(|&i| test[i].label_id == noncomp);
            test_strata.insert("noncomp".to_string(), nc);
            test_strata.insert("comp".to_string(), rest);
            (train.clone(), train)
        }
    };

    if train_supervised.is_empty() {
        return Err(CorpusError::EmptyStratum("train_supervised".into()));
    }
    if let Some((name, _)) = test_strata.iter().find(|(_, v)| v.is_empty()) {
        return Err(CorpusError::EmptyStratum(format!("test/{name}")));
    }
    Ok(SplitBundle {
        kind,
        seed,
        ratios,
        train_supervised,
        train_lm,
        val,
        test,
        length_suppressed,
        test_strata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::ag_schema;
    use crate::tokenize::WhitespaceTokenizer;

    fn corpus(n: usize) -> Vec<Example> {
        let s = ag_schema();
        (0..n)
            .map(|i| {
                let len = 5 + (i * 7) % 70;
                Example::new(
                    format!("e{i}"),
                    vec!["w"; len].join(" "),
                    i % 4,
                    "t",
                    &s,
                    &WhitespaceTokenizer,
                )
            })
            .collect()
    }

    #[test]
    fn full_split_partitions_by_ratio() {
        let s = ag_schema();
        let ex = corpus(100);
        let b = build_split(&ex, &s, SplitKind::Full, Ratios::default(), 3).unwrap();
        assert_eq!(
            (b.train_supervised.len(), b.val.len(), b.test.len()),
            (80, 10, 10)
        );
        let mut ids: Vec<&str> = b
            .train_supervised
            .iter()
            .chain(&b.val)
            .chain(&b.test)
            .map(|e| e.id.as_str())
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 100);
        assert_eq!(
            b,
            build_split(&ex, &s, SplitKind::Full, Ratios::default(), 3).unwrap()
        );
        assert_ne!(
            b,
            build_split(&ex, &s, SplitKind::Full, Ratios::default(), 4).unwrap()
        );
    }

    #[test]
    fn zero_shot_blocks_class() {
        let s = ag_schema();
        let ex = corpus(200);
        let kind = SplitKind::ZeroShot {
            blocked: 0,
            unblock_lm: false,
        };
        let b = build_split(&ex, &s, kind, Ratios::default(), 1).unwrap();
        assert!(b
            .train_supervised
            .iter()
            .chain(&b.train_lm)
            .all(|e| e.label_id != 0));
        assert!(b.stratum("zero_shot").iter().all(|e| e.label_id == 0));
        assert!(b.stratum("seen").iter().all(|e| e.label_id != 0));

        let kind = SplitKind::ZeroShot {
            blocked: 0,
            unblock_lm: true,
        };
        let u = build_split(&ex, &s, kind, Ratios::default(), 1).unwrap();
        assert!(u.train_lm.iter().any(|e| e.label_id == 0));
        assert!(u.train_supervised.iter().all(|e| e.label_id != 0));
        assert!(!u.allows(&AttrSpec::label(0)));
    }

    #[test]
    fn compositional_suppresses_length() {
        let s = ag_schema();
        let ex = corpus(200);
        let b = build_split(
            &ex,
            &s,
            SplitKind::Compositional { noncomp: 1 },
            Ratios::default(),
            1,
        )
        .unwrap();
        for e in &b.train_supervised {
            let a = b.command_attrs(e);
            if e.label_id == 1 {
                assert_eq!(a, AttrSpec::label(1));
            } else {
                assert_eq!(a, e.attrs());
            }
        }
        assert!(!b.allows(&AttrSpec::both(1, 0)));
        assert!(b.allows(&AttrSpec::both(2, 0)));
        assert!(b.allows(&AttrSpec::label(1)));
        let m = b.manifest("h");
        assert_eq!(m.test_strata["noncomp"].len(), b.stratum("noncomp").len());
    }

    #[test]
    fn split_errors() {
        let s = ag_schema();
        let ex = corpus(20);
        assert_eq!(
            build_split(
                &ex,
                &s,
                SplitKind::Full,
                Ratios {
                    train: 0.5,
                    val: 0.2,
                    test: 0.2
                },
                0
            )
            .unwrap_err(),
            CorpusError::InvalidRatios
        );
        assert_eq!(
            build_split(
                &ex,
                &s,
                SplitKind::Compositional { noncomp: 7 },
                Ratios::default(),
                0
            )
            .unwrap_err(),
            CorpusError::UnknownClass(7)
        );
        let only_zero: Vec<Example> = ex.iter().filter(|e| e.label_id != 3).cloned().collect();
        assert!(matches!(
            build_split(
                &only_zero,
                &s,
                SplitKind::ZeroShot {
                    blocked: 3,
                    unblock_lm: false
                },
                Ratios::default(),
                0
            )
            .unwrap_err(),
            CorpusError::EmptyStratum(_)
        ));
    }
}
