use serde::Serialize;

use crate::error::{ensure, Result};
use crate::saccade::Cell;
use crate::saliency::SourceTag;

/// `1 - H(p) / ln n` (natural log, `0 ln 0 = 0`): 1 for a one-hot
/// distribution, 0 for a uniform one.
pub fn certainty(probs: &[f64]) -> f64 {
    let n = probs.len();
    if n < 2 {
        return 1.0;
    }
    let h: f64 = probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    (1.0 - h / (n as f64).ln()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub predicted: usize,
    pub certainty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaccadeStep {
    pub predicted: usize,
    pub certainty: f64,
    pub center: Cell,
    pub revealed_cells: usize,
    pub revealed_fraction: f64,
}

/// Everything measured for one image under one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaccadeRecord {
    pub image_id: String,
    pub true_class: usize,
    pub full: Prediction,
    pub saccades: Vec<SaccadeStep>,
    pub source: SourceTag,
    /// Entropy of the fused full-image attention map at the capture layer.
    pub attention_entropy: f64,
    /// SHA-256 of the preprocessed input tensor.
    pub input_digest: String,
    pub config_fingerprint: String,
}

impl SaccadeRecord {
    pub fn full_correct(&self) -> bool {
        self.full.predicted == self.true_class
    }

    pub fn correct(&self) -> Vec<bool> {
        self.saccades.iter().map(|s| s.predicted == self.true_class).collect()
    }

    /// 1-based index of the first correctly classified saccade.
    pub fn first_correct(&self) -> Option<usize> {
        self.saccades
            .iter()
            .position(|s| s.predicted == self.true_class)
            .map(|i| i + 1)
    }

    pub fn outcome(&self) -> Outcome {
        Outcome {
            full_correct: self.full_correct(),
            saccades: self.correct(),
        }
    }
}

/// Correctness pattern of one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub full_correct: bool,
    pub saccades: Vec<bool>,
}

/// Classification dynamics across saccades. Vectors are indexed by saccade
/// (index 0 is the first saccade).
///
/// An image "lapses" when it flips from correct to wrong. Once lapsed, its
/// state at every later saccade falls in exactly one of `correct_to_wrong`,
/// `wrong_to_correct`, `stayed_wrong` or `stayed_right`. Images becoming
/// correct for the first time are counted in `first_correct` and drive the
/// cumulative accuracy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicsReport {
    pub num_images: usize,
    pub saccades: usize,
    pub full_image_correct: usize,
    pub full_image_accuracy: f64,
    pub correct: Vec<usize>,
    pub accuracy: Vec<f64>,
    pub first_correct: Vec<usize>,
    pub correct_to_wrong: Vec<usize>,
    pub wrong_to_correct: Vec<usize>,
    pub stayed_wrong: Vec<usize>,
    pub stayed_right: Vec<usize>,
    pub cumulative_correct: Vec<usize>,
    pub cumulative_accuracy: Vec<f64>,
    /// Images by number of correct saccades (`0..=k`), all images.
    pub occurrence_all: Vec<usize>,
    /// Same, restricted to images correct on the full input.
    pub occurrence_full_correct: Vec<usize>,
    /// Same, restricted to images correct during saccades but not on the full input.
    pub occurrence_saccade_only: Vec<usize>,
}

pub fn dynamics_report(records: &[SaccadeRecord]) -> Result<DynamicsReport> {
    let outcomes: Vec<Outcome> = records.iter().map(SaccadeRecord::outcome).collect();
    dynamics_from_outcomes(&outcomes)
}

pub fn dynamics_from_outcomes(outcomes: &[Outcome]) -> Result<DynamicsReport> {
    let k = outcomes.first().map_or(0, |o| o.saccades.len());
    ensure(outcomes.iter().all(|o| o.saccades.len() == k), || {
        "records have differing saccade counts".into()
    })?;
    let n = outcomes.len();
    let zeros = || vec![0usize; k];
    let mut r = DynamicsReport {
        num_images: n,
        saccades: k,
        full_image_correct: 0,
        full_image_accuracy: 0.0,
        correct: zeros(),
        accuracy: vec![],
        first_correct: zeros(),
        correct_to_wrong: zeros(),
        wrong_to_correct: zeros(),
        stayed_wrong: zeros(),
        stayed_right: zeros(),
        cumulative_correct: zeros(),
        cumulative_accuracy: vec![],
        occurrence_all: vec![0; k + 1],
        occurrence_full_correct: vec![0; k + 1],
        occurrence_saccade_only: vec![0; k + 1],
    };
    for o in outcomes {
        if o.full_correct {
            r.full_image_correct += 1;
        }
        let mut ever_correct = false;
        let mut lapsed = false;
        let mut prev: Option<bool> = None;
        for (s, &cur) in o.saccades.iter().enumerate() {
            if cur {
                r.correct[s] += 1;
                if !ever_correct {
                    r.first_correct[s] += 1;
                    ever_correct = true;
                }
            }
            if let Some(p) = prev {
                match (p, cur) {
                    (true, false) => r.correct_to_wrong[s] += 1,
                    (false, true) if lapsed => r.wrong_to_correct[s] += 1,
                    (false, false) if lapsed => r.stayed_wrong[s] += 1,
                    (true, true) if lapsed => r.stayed_right[s] += 1,
                    _ => {}
                }
                if p && !cur {
                    lapsed = true;
                }
            }
            prev = Some(cur);
        }
        let hits = o.saccades.iter().filter(|&&c| c).count();
        r.occurrence_all[hits] += 1;
        if o.full_correct {
            r.occurrence_full_correct[hits] += 1;
        } else if hits > 0 {
            r.occurrence_saccade_only[hits] += 1;
        }
    }
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    let mut running = 0;
    for s in 0..k {
        running += r.first_correct[s];
        r.cumulative_correct[s] = running;
    }
    r.full_image_accuracy = frac(r.full_image_correct);
    r.accuracy = r.correct.iter().map(|&c| frac(c)).collect();
    r.cumulative_accuracy = r.cumulative_correct.iter().map(|&c| frac(c)).collect();
    Ok(r)
}

/// Mean certainty trajectory of the images first classified correctly at a
/// given saccade.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertaintyGroup {
    /// 1-based saccade of the first correct classification.
    pub first_correct: usize,
    pub count: usize,
    /// Mean certainty at every saccade.
    pub mean_certainty: Vec<f64>,
    pub mean_full_certainty: f64,
}

/// Groups full-image-correct records by their first correct saccade; records
/// never correct during saccades are dropped, empty groups are omitted.
pub fn certainty_groups(records: &[SaccadeRecord]) -> Vec<CertaintyGroup> {
    let k = records.iter().map(|r| r.saccades.len()).max().unwrap_or(0);
    let mut groups = Vec::new();
    for s in 1..=k {
        let members: Vec<&SaccadeRecord> = records
            .iter()
            .filter(|r| r.full_correct() && r.first_correct() == Some(s))
            .collect();
        if members.is_empty() {
            continue;
        }
        let count = members.len();
        let mean_certainty = (0..k)
            .map(|i| members.iter().map(|r| r.saccades[i].certainty).sum::<f64>() / count as f64)
            .collect();
        let mean_full_certainty = members.iter().map(|r| r.full.certainty).sum::<f64>() / count as f64;
        groups.push(CertaintyGroup {
            first_correct: s,
            count,
            mean_certainty,
            mean_full_certainty,
        });
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyGroup {
    /// First correct saccade (1-based); 0 = correct only on the full input.
    pub saccade: usize,
    pub entropies: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyGroups {
    pub groups: Vec<EntropyGroup>,
    /// Images correct neither on the full input nor during saccades.
    pub never_correct: usize,
}

/// Attention entropies grouped by the saccade leading to a correct
/// classification. `entropies[i]` belongs to `records[i]`.
pub fn entropy_groups(records: &[SaccadeRecord], entropies: &[f64]) -> Result<EntropyGroups> {
    ensure(records.len() == entropies.len(), || {
        format!("{} records but {} entropies", records.len(), entropies.len())
    })?;
    let k = records.iter().map(|r| r.saccades.len()).max().unwrap_or(0);
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); k + 1];
    let mut never_correct = 0;
    for (r, &h) in records.iter().zip(entropies) {
        match (r.first_correct(), r.full_correct()) {
            (Some(s), _) => buckets[s].push(h),
            (None, true) => buckets[0].push(h),
            (None, false) => never_correct += 1,
        }
    }
    let groups = buckets
        .into_iter()
        .enumerate()
        .filter(|(_, b)| !b.is_empty())
        .map(|(saccade, entropies)| {
            let mean = entropies.iter().sum::<f64>() / entropies.len() as f64;
            EntropyGroup {
                saccade,
                entropies,
                mean,
            }
        })
        .collect();
    Ok(EntropyGroups {
        groups,
        never_correct,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn record(id: &str, full: usize, preds: &[usize], certs: &[f64], full_cert: f64) -> SaccadeRecord {
        SaccadeRecord {
            image_id: id.to_string(),
            true_class: 1,
            full: Prediction {
                predicted: full,
                certainty: full_cert,
            },
            saccades: preds
                .iter()
                .zip(certs)
                .map(|(&p, &c)| SaccadeStep {
                    predicted: p,
                    certainty: c,
                    center: (0, 0),
                    revealed_cells: 9,
                    revealed_fraction: 0.05,
                })
                .collect(),
            source: SourceTag::Attention,
            attention_entropy: 0.0,
            input_digest: String::new(),
            config_fingerprint: String::new(),
        }
    }

    fn outcome(full: bool, s: &str) -> Outcome {
        Outcome {
            full_correct: full,
            saccades: s.chars().map(|c| c == 'T').collect(),
        }
    }

    #[test]
    fn certainty_cases() {
        assert!(certainty(&vec![1e-3; 1000]).abs() < 1e-12);
        let mut one_hot = vec![0.0; 1000];
        one_hot[3] = 1.0;
        assert!((certainty(&one_hot) - 1.0).abs() < 1e-12);
        assert!((certainty(&[0.5, 0.5, 0.0, 0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hand_enumerated_dynamics() {
        // A: F T F T T   first correct at 2, lapses at 3, recovers at 4, stays right at 5
        // B: T T F F T   lapses at 3, stays wrong at 4, recovers at 5
        // C: F F F F F   never correct
        let r = dynamics_from_outcomes(&[
            outcome(true, "FTFTT"),
            outcome(false, "TTFFT"),
            outcome(false, "FFFFF"),
        ])
        .unwrap();
        assert_eq!(r.correct, vec![1, 2, 0, 1, 2]);
        assert_eq!(r.first_correct, vec![1, 1, 0, 0, 0]);
        assert_eq!(r.correct_to_wrong, vec![0, 0, 2, 0, 0]);
        assert_eq!(r.wrong_to_correct, vec![0, 0, 0, 1, 1]);
        assert_eq!(r.stayed_wrong, vec![0, 0, 0, 1, 0]);
        assert_eq!(r.stayed_right, vec![0, 0, 0, 0, 1]);
        assert_eq!(r.cumulative_correct, vec![1, 2, 2, 2, 2]);
        assert_eq!(r.occurrence_all, vec![1, 0, 0, 2, 0, 0]);
        assert_eq!(r.occurrence_full_correct, vec![0, 0, 0, 1, 0, 0]);
        assert_eq!(r.occurrence_saccade_only, vec![0, 0, 0, 1, 0, 0]);
        assert!((r.full_image_accuracy - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn always_correct_is_flat() {
        let r = dynamics_from_outcomes(&vec![outcome(true, "TTTT"); 5]).unwrap();
        assert!(r.correct_to_wrong.iter().chain(&r.wrong_to_correct).all(|&c| c == 0));
        assert!(r.stayed_wrong.iter().chain(&r.stayed_right).all(|&c| c == 0));
        assert_eq!(r.cumulative_accuracy, vec![1.0; 4]);
    }

    #[test]
    fn late_first_correct_steps_once() {
        let r = dynamics_from_outcomes(&[outcome(false, "FFFFFFFFFT"), outcome(false, "FFFFFFFFFF")]).unwrap();
        let mut expect = vec![0.0; 10];
        expect[9] = 0.5;
        assert_eq!(r.cumulative_accuracy, expect);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(dynamics_from_outcomes(&[outcome(true, "TT"), outcome(true, "T")]).is_err());
    }

    #[test]
    fn certainty_group_means() {
        let records = vec![
            record("a", 1, &[1, 1], &[0.2, 0.4], 0.9),
            record("b", 1, &[1, 0], &[0.6, 0.8], 0.7),
            record("c", 1, &[0, 1], &[0.1, 0.3], 0.5),
            record("d", 0, &[1, 1], &[0.9, 0.9], 0.1), // full input wrong: excluded
            record("e", 1, &[0, 0], &[0.5, 0.5], 0.5), // never correct: dropped
        ];
        let g = certainty_groups(&records);
        assert_eq!(g.len(), 2);
        assert_eq!((g[0].first_correct, g[0].count), (1, 2));
        assert!((g[0].mean_certainty[0] - 0.4).abs() < 1e-15);
        assert!((g[0].mean_certainty[1] - 0.6).abs() < 1e-15);
        assert!((g[0].mean_full_certainty - 0.8).abs() < 1e-15);
        assert_eq!((g[1].first_correct, g[1].count), (2, 1));
        assert_eq!(g[1].mean_certainty, vec![0.1, 0.3]);
    }

    #[test]
    fn certainty_single_group() {
        let records = vec![
            record("a", 1, &[1, 0], &[0.2, 0.4], 0.9),
            record("b", 1, &[1, 1], &[0.6, 0.8], 0.7),
        ];
        let g = certainty_groups(&records);
        assert_eq!(g.len(), 1);
        assert!((g[0].mean_full_certainty - 0.8).abs() < 1e-15);
    }

    #[test]
    fn entropy_grouping() {
        let records = vec![
            record("a", 1, &[0, 0, 1], &[0.0; 3], 0.0),
            record("b", 1, &[0, 0, 0], &[0.0; 3], 0.0),
            record("c", 0, &[0, 0, 0], &[0.0; 3], 0.0),
            record("d", 0, &[1, 0, 0], &[0.0; 3], 0.0),
        ];
        let g = entropy_groups(&records, &[3.0, 4.0, 5.0, 2.0]).unwrap();
        assert_eq!(g.never_correct, 1);
        let got: Vec<(usize, Vec<f64>)> = g.groups.iter().map(|e| (e.saccade, e.entropies.clone())).collect();
        assert_eq!(got, vec![(0, vec![4.0]), (1, vec![2.0]), (3, vec![3.0])]);
        assert!(entropy_groups(&records, &[1.0]).is_err());
    }

    #[test]
    fn entropy_grouping_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let records: Vec<SaccadeRecord> = (0..200)
            .map(|i| {
                let preds: Vec<usize> = (0..5).map(|_| rng.random_range(0..3)).collect();
                record(&i.to_string(), rng.random_range(0..3), &preds, &[0.0; 5], 0.0)
            })
            .collect();
        let ent: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let g = entropy_groups(&records, &ent).unwrap();
        for s in 0..=5 {
            let mut expect = Vec::new();
            for (r, &h) in records.iter().zip(&ent) {
                let hits: Vec<usize> = (0..5).filter(|&i| r.saccades[i].predicted == 1).collect();
                let member = if s == 0 {
                    hits.is_empty() && r.full.predicted == 1
                } else {
                    hits.first() == Some(&(s - 1))
                };
                if member {
                    expect.push(h);
                }
            }
            let got = g.groups.iter().find(|e| e.saccade == s).map(|e| e.entropies.clone()).unwrap_or_default();
            assert_eq!(got, expect);
        }
        let never = records.iter().filter(|r| r.full.predicted != 1 && r.first_correct().is_none()).count();
        assert_eq!(g.never_correct, never);
    }
}
