//! Spearman-correlation similarity evaluation and shortcut bias probes.
//!
//! Evaluation follows the no-regressor convention: the predicted
//! similarity of a pair is the cosine of the two embeddings from the
//! main network with dropout off, and the score is the Spearman rank
//! correlation against the gold labels over the whole pair list.

use crate::augment;
use crate::encoder::{encode_on_tape, DropoutMode, EncoderParams, EncoderVars};
use crate::error::{Error, Result};
use crate::seeds;
use crate::tape::Tape;
use crate::text::{Sentence, SimilarityPair};
use rand::seq::SliceRandom;
use serde::Serialize;

/// Ranks with ties replaced by the mean rank of their run (1-based).
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // Positions i..=j share the same value; average their ranks.
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Degenerate(
            "correlation undefined for a constant list".into(),
        ));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Spearman rank correlation with averaged tied ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Contract(format!(
            "spearman: length mismatch {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Degenerate("spearman needs at least 2 points".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Domain("spearman: non-finite input".into()));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Result of scoring an encoder on a pair list. The correlation is
/// recomputable from the stored lists; a degenerate input (constant gold
/// or constant predictions) is surfaced in the report instead of
/// aborting the evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub spearman: Option<f64>,
    pub degenerate: Option<String>,
    pub n_pairs: usize,
    pub predicted: Vec<f64>,
    pub gold: Vec<f64>,
}

impl EvalReport {
    /// The correlation, or an error if the input was degenerate.
    pub fn score(&self) -> Result<f64> {
        match self.spearman {
            Some(s) => Ok(s),
            None => Err(Error::Degenerate(
                self.degenerate.clone().unwrap_or_default(),
            )),
        }
    }
}

/// Cosine-similarity evaluation of the main network on gold pairs,
/// dropout off.
pub fn evaluate_sts(theta: &EncoderParams, pairs: &[SimilarityPair]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Contract("evaluate_sts on an empty pair list".into()));
    }
    let mut tape = Tape::new();
    let vars = EncoderVars::register(&mut tape, theta, false);
    let mut predicted = Vec::with_capacity(pairs.len());
    let mut gold = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let a = encode_on_tape(&mut tape, &vars, &pair.sentence_a, DropoutMode::Off)?;
        let b = encode_on_tape(&mut tape, &vars, &pair.sentence_b, DropoutMode::Off)?;
        let c = tape.cosine(a, b)?;
        predicted.push(tape.item(c));
        gold.push(pair.gold);
    }
    let (spearman_score, degenerate) = match spearman(&predicted, &gold) {
        Ok(s) => (Some(s), None),
        Err(Error::Degenerate(msg)) => (None, Some(msg)),
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        spearman: spearman_score,
        degenerate,
        n_pairs: pairs.len(),
        predicted,
        gold,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProbeStat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

fn probe_stat(values: &[f64]) -> ProbeStat {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    ProbeStat {
        mean,
        std: var.sqrt(),
        n,
    }
}

/// Invariance probes that operationalize the shortcut-property table:
/// how similar an embedding stays under token shuffling, inversion, and
/// length growth by word repetition. A value of exactly 1.0 for the
/// first two is the signature of an order-blind (bag-of-words) encoder.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    /// Mean cosine between a sentence and a random shuffle of it.
    pub order_invariance: ProbeStat,
    /// Mean cosine between a sentence and its inversion.
    pub bow_invariance: ProbeStat,
    /// Mean |cos(x, x) - cos(x, x with duplicated tokens appended)|.
    pub length_sensitivity: ProbeStat,
}

/// Run the three probes over a corpus sample with dropout off and
/// seeded augmentation draws. Meaningful from roughly 50 sentences up.
pub fn run_probes(theta: &EncoderParams, sample: &[Sentence], seed: u64) -> Result<ProbeReport> {
    if sample.is_empty() {
        return Err(Error::Contract("probe sample is empty".into()));
    }
    let mut tape = Tape::new();
    let vars = EncoderVars::register(&mut tape, theta, false);
    let mut rng = seeds::rng(seeds::chain(&[seed, 0x9806]));

    let mut order = Vec::with_capacity(sample.len());
    let mut bow = Vec::with_capacity(sample.len());
    let mut length = Vec::with_capacity(sample.len());
    for sentence in sample {
        let base = encode_on_tape(&mut tape, &vars, sentence, DropoutMode::Off)?;

        let shuffled = augment::shuffle_sentence(sentence, &mut rng);
        let enc = encode_on_tape(&mut tape, &vars, &shuffled, DropoutMode::Off)?;
        let c = tape.cosine(base, enc)?;
        order.push(tape.item(c));

        let inverted = augment::invert_sentence(sentence);
        let enc = encode_on_tape(&mut tape, &vars, &inverted, DropoutMode::Off)?;
        let c = tape.cosine(base, enc)?;
        bow.push(tape.item(c));

        // Appended duplicates: the repetition strategy's token choice,
        // but at the end of the sentence so only length and counts move.
        let n_rep = ((augment::DEFAULT_EDIT_RATIO * sentence.len() as f64).round() as usize).max(1);
        let mut picks: Vec<u32> = sentence.tokens().to_vec();
        picks.shuffle(&mut rng);
        let mut grown = sentence.tokens().to_vec();
        grown.extend_from_slice(&picks[..n_rep.min(picks.len())]);
        let grown = Sentence::new(grown).expect("non-empty");
        let enc = encode_on_tape(&mut tape, &vars, &grown, DropoutMode::Off)?;
        let c_self = tape.cosine(base, base)?;
        let c_grown = tape.cosine(base, enc)?;
        length.push((tape.item(c_self) - tape.item(c_grown)).abs());
    }
    Ok(ProbeReport {
        order_invariance: probe_stat(&order),
        bow_invariance: probe_stat(&bow),
        length_sensitivity: probe_stat(&length),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identical_lists_give_one() {
        let xs = [1.0, 2.0, 5.0, 3.0];
        assert_abs_diff_eq!(spearman(&xs, &xs).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn reversed_order_gives_minus_one() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [9.0, 7.0, 5.0, 1.0].map(|v| -v);
        assert_abs_diff_eq!(spearman(&xs, &ys).unwrap(), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn tied_ranks_are_averaged() {
        // ranks(xs) = [1, 2, 3.5, 3.5]; Pearson against ranks(ys) =
        // [1, 2, 4, 3] is 4.5 / sqrt(4.5 * 5).
        let xs = [1.0, 2.0, 3.0, 3.0];
        let ys = [1.0, 2.0, 4.0, 3.0];
        let expected = 4.5 / (4.5f64 * 5.0).sqrt();
        assert_abs_diff_eq!(spearman(&xs, &ys).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(spearman(&xs, &ys).unwrap(), 0.9487, epsilon = 5e-5);
    }

    #[test]
    fn invariant_under_monotone_transform() {
        let xs = [0.3f64, 1.7, 0.9, 2.5, 1.1];
        let ys = [5.0, 2.0, 4.0, 1.0, 3.0];
        let cubed: Vec<f64> = xs.iter().map(|v| v.powi(3)).collect();
        assert_abs_diff_eq!(
            spearman(&xs, &ys).unwrap(),
            spearman(&cubed, &ys).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn symmetric_in_arguments() {
        let xs = [0.3, 1.7, 0.9, 2.5, 1.1];
        let ys = [5.0, 2.0, 4.0, 1.0, 3.0];
        assert_abs_diff_eq!(
            spearman(&xs, &ys).unwrap(),
            spearman(&ys, &xs).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn constant_input_is_degenerate() {
        let xs = [2.0, 2.0, 2.0];
        let ys = [1.0, 2.0, 3.0];
        assert!(matches!(spearman(&xs, &ys), Err(Error::Degenerate(_))));
        assert!(matches!(spearman(&ys, &xs), Err(Error::Degenerate(_))));
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        assert!(matches!(
            spearman(&[1.0], &[1.0, 2.0]),
            Err(Error::Contract(_))
        ));
    }
}
