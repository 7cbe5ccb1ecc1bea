//! Word-level augmentation strategies and multi-augmentation plans.
//!
//! Four discrete strategies operate on the token sequence — shuffling,
//! inversion, word repetition and word deletion — and one continuous
//! strategy (dropout) is realized at encode time by re-encoding the
//! anchor under a fresh dropout mask. A plan lists K strategy slots;
//! applying it to an anchor yields the group of K positives whose order
//! is also the candidate order inside the contrast distribution.

use crate::error::{Error, Result};
use crate::seeds;
use crate::text::Sentence;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_EDIT_RATIO: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AugmentationKind {
    /// Shuffled sentence: uniform random permutation of the tokens.
    Ss,
    /// Inverted sentence: token order exactly reversed.
    Is,
    /// Word repetition: duplicate a fraction of tokens at random spots.
    Wr { ratio: f64 },
    /// Word deletion: remove a fraction of tokens (never all of them).
    Wd { ratio: f64 },
    /// Dropout: re-encode the anchor under a fresh dropout mask.
    Dp,
}

impl AugmentationKind {
    pub fn label(&self) -> &'static str {
        match self {
            AugmentationKind::Ss => "SS",
            AugmentationKind::Is => "IS",
            AugmentationKind::Wr { .. } => "WR",
            AugmentationKind::Wd { .. } => "WD",
            AugmentationKind::Dp => "DP",
        }
    }

    /// Parse a strategy name; `wr`/`wd` pick up the supplied ratios.
    pub fn parse(name: &str, wr_ratio: f64, wd_ratio: f64) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "ss" => Ok(AugmentationKind::Ss),
            "is" => Ok(AugmentationKind::Is),
            "wr" => Ok(AugmentationKind::Wr { ratio: wr_ratio }),
            "wd" => Ok(AugmentationKind::Wd { ratio: wd_ratio }),
            "dp" => Ok(AugmentationKind::Dp),
            other => Err(Error::Config(format!("unknown augmentation kind {other:?}"))),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            AugmentationKind::Wr { ratio } | AugmentationKind::Wd { ratio } => {
                if !(ratio > 0.0 && ratio < 1.0) {
                    return Err(Error::Config(format!(
                        "edit ratio must be in (0,1), got {ratio}"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// An ordered list of K augmentation slots (repetition allowed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan(Vec<AugmentationKind>);

impl AugmentationPlan {
    pub fn new(kinds: Vec<AugmentationKind>) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::Config("augmentation plan must have K >= 1".into()));
        }
        for k in &kinds {
            k.validate()?;
        }
        Ok(AugmentationPlan(kinds))
    }

    /// Diversity-first default: one DP slot, then the discrete strategies
    /// in rotation. `k = 9` yields `[DP SS IS WR WD SS IS WR WD]` and
    /// `k = 1` yields `[DP]`.
    pub fn default_for_k(k: usize, wr_ratio: f64, wd_ratio: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        let cycle = [
            AugmentationKind::Ss,
            AugmentationKind::Is,
            AugmentationKind::Wr { ratio: wr_ratio },
            AugmentationKind::Wd { ratio: wd_ratio },
        ];
        let mut kinds = vec![AugmentationKind::Dp];
        for i in 0..k - 1 {
            kinds.push(cycle[i % cycle.len()]);
        }
        AugmentationPlan::new(kinds)
    }

    /// Mono-augmentation plan: DP in the first slot, then `kind` repeated.
    pub fn mono(kind: AugmentationKind, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        let mut kinds = vec![AugmentationKind::Dp];
        kinds.extend(std::iter::repeat(kind).take(k - 1));
        AugmentationPlan::new(kinds)
    }

    /// Parse a comma-separated plan such as `dp,ss,is,wr,wd`.
    pub fn parse(spec: &str, wr_ratio: f64, wd_ratio: f64) -> Result<Self> {
        let kinds: Result<Vec<_>> = spec
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| AugmentationKind::parse(s, wr_ratio, wd_ratio))
            .collect();
        AugmentationPlan::new(kinds?)
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn kinds(&self) -> &[AugmentationKind] {
        &self.0
    }
}

/// One positive slot of a group: discrete strategies carry the augmented
/// sentence, DP carries only the mask seed it will be encoded under.
#[derive(Debug, Clone, PartialEq)]
pub struct Positive {
    pub kind: AugmentationKind,
    /// `None` for DP (the anchor is re-encoded instead).
    pub text: Option<Sentence>,
    /// Dropout-mask seed used when this candidate is encoded.
    pub mask_seed: u64,
}

/// An anchor plus its K positives in plan order.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedGroup {
    pub anchor: Sentence,
    pub positives: Vec<Positive>,
}

// ── Token-level transforms (generic so the CLI can augment raw words) ──

pub fn shuffle_tokens<T: Clone>(tokens: &[T], rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut out = tokens.to_vec();
    out.shuffle(rng);
    out
}

pub fn invert_tokens<T: Clone>(tokens: &[T]) -> Vec<T> {
    tokens.iter().rev().cloned().collect()
}

/// Count of edits for a ratio-based strategy: at least one token so the
/// positive always differs textually from the anchor.
fn edit_count(len: usize, ratio: f64) -> usize {
    ((ratio * len as f64).round() as usize).max(1)
}

pub fn repeat_tokens<T: Clone>(tokens: &[T], ratio: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    let n_rep = edit_count(tokens.len(), ratio);
    let mut chosen: Vec<usize> = (0..tokens.len()).collect();
    chosen.shuffle(rng);
    chosen.truncate(n_rep);
    let mut out = tokens.to_vec();
    for &src in &chosen {
        let pos = rng.random_range(0..=out.len());
        out.insert(pos, tokens[src].clone());
    }
    out
}

pub fn delete_tokens<T: Clone>(tokens: &[T], ratio: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    let n_del = edit_count(tokens.len(), ratio).min(tokens.len() - 1);
    let mut doomed: Vec<usize> = (0..tokens.len()).collect();
    doomed.shuffle(rng);
    doomed.truncate(n_del);
    doomed.sort_unstable();
    let mut out = Vec::with_capacity(tokens.len() - n_del);
    let mut next = doomed.iter().peekable();
    for (i, t) in tokens.iter().enumerate() {
        if next.peek() == Some(&&i) {
            next.next();
        } else {
            out.push(t.clone());
        }
    }
    out
}

// ── Sentence-level wrappers ─────────────────────────────────────────────

pub fn shuffle_sentence(s: &Sentence, rng: &mut ChaCha8Rng) -> Sentence {
    Sentence::new(shuffle_tokens(s.tokens(), rng)).expect("shuffle preserves length")
}

pub fn invert_sentence(s: &Sentence) -> Sentence {
    Sentence::new(invert_tokens(s.tokens())).expect("invert preserves length")
}

pub fn word_repetition(s: &Sentence, ratio: f64, rng: &mut ChaCha8Rng) -> Sentence {
    Sentence::new(repeat_tokens(s.tokens(), ratio, rng)).expect("repetition grows length")
}

pub fn word_deletion(s: &Sentence, ratio: f64, rng: &mut ChaCha8Rng) -> Sentence {
    Sentence::new(delete_tokens(s.tokens(), ratio, rng)).expect("deletion is capped at len-1")
}

/// Apply a plan to an anchor. Every slot draws from its own substream of
/// `group_seed`, so repeated kinds yield distinct instances and the whole
/// group is reproducible from `(anchor, plan, group_seed)`.
pub fn apply_plan(anchor: &Sentence, plan: &AugmentationPlan, group_seed: u64) -> AugmentedGroup {
    let positives = plan
        .kinds()
        .iter()
        .enumerate()
        .map(|(slot, &kind)| {
            let mut rng = seeds::rng(seeds::chain(&[group_seed, 0xA, slot as u64]));
            let mask_seed = seeds::chain(&[group_seed, 0xB, slot as u64]);
            let text = match kind {
                AugmentationKind::Ss => Some(shuffle_sentence(anchor, &mut rng)),
                AugmentationKind::Is => Some(invert_sentence(anchor)),
                AugmentationKind::Wr { ratio } => Some(word_repetition(anchor, ratio, &mut rng)),
                AugmentationKind::Wd { ratio } => Some(word_deletion(anchor, ratio, &mut rng)),
                AugmentationKind::Dp => None,
            };
            Positive {
                kind,
                text,
                mask_seed,
            }
        })
        .collect();
    AugmentedGroup {
        anchor: anchor.clone(),
        positives,
    }
}

/// Which surface properties a discrete strategy leaves intact: token
/// order, contiguous n-gram statistics, and the bag of words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ShortcutProfile {
    pub order_preserved: bool,
    pub ngram_preserved: bool,
    pub bow_preserved: bool,
}

/// The invariance fingerprint of each discrete strategy. A property a
/// strategy preserves is a shortcut a model trained only on that
/// strategy can exploit instead of learning semantics.
pub fn shortcut_matrix(kind: AugmentationKind) -> Result<ShortcutProfile> {
    match kind {
        AugmentationKind::Ss => Ok(ShortcutProfile {
            order_preserved: false,
            ngram_preserved: false,
            bow_preserved: true,
        }),
        AugmentationKind::Is => Ok(ShortcutProfile {
            order_preserved: false,
            ngram_preserved: true,
            bow_preserved: true,
        }),
        AugmentationKind::Wr { .. } => Ok(ShortcutProfile {
            order_preserved: true,
            ngram_preserved: false,
            bow_preserved: true,
        }),
        AugmentationKind::Wd { .. } => Ok(ShortcutProfile {
            order_preserved: true,
            ngram_preserved: false,
            bow_preserved: false,
        }),
        AugmentationKind::Dp => Err(Error::Domain(
            "DP is not a text-level transform; it has no shortcut row".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(tokens: &[u32]) -> Sentence {
        Sentence::new(tokens.to_vec()).unwrap()
    }

    fn sorted(v: &[u32]) -> Vec<u32> {
        let mut s = v.to_vec();
        s.sort_unstable();
        s
    }

    fn is_subsequence(needle: &[u32], haystack: &[u32]) -> bool {
        let mut it = haystack.iter();
        needle.iter().all(|n| it.any(|h| h == n))
    }

    #[test]
    fn shuffle_preserves_multiset() {
        let mut rng = seeds::rng(1);
        for trial in 0..1000 {
            let len = 1 + (trial % 12);
            let s: Vec<u32> = (0..len as u32).map(|i| i % 5 + 2).collect();
            let out = shuffle_tokens(&s, &mut rng);
            assert_eq!(sorted(&s), sorted(&out));
        }
    }

    #[test]
    fn shuffle_single_token_unchanged() {
        let mut rng = seeds::rng(2);
        let s = sent(&[7]);
        assert_eq!(shuffle_sentence(&s, &mut rng), s);
    }

    #[test]
    fn invert_reverses_and_is_involution() {
        let s = sent(&[2, 3, 4]);
        assert_eq!(invert_sentence(&s).tokens(), &[4, 3, 2]);
        assert_eq!(invert_sentence(&invert_sentence(&s)), s);
        let palindrome = sent(&[2, 3, 2]);
        assert_eq!(invert_sentence(&palindrome), palindrome);
    }

    #[test]
    fn repetition_lengths() {
        let mut rng = seeds::rng(3);
        // length 5, ratio 0.2 -> one duplicate.
        let s = sent(&[2, 3, 4, 5, 6]);
        assert_eq!(word_repetition(&s, 0.2, &mut rng).len(), 6);
        // length 1 -> forced single duplicate, both tokens equal.
        let one = sent(&[9]);
        let out = word_repetition(&one, 0.2, &mut rng);
        assert_eq!(out.tokens(), &[9, 9]);
    }

    #[test]
    fn repetition_keeps_input_as_subsequence() {
        let mut rng = seeds::rng(4);
        for trial in 0..1000 {
            let len = 1 + (trial % 10);
            let s: Vec<u32> = (0..len as u32).map(|i| i + 2).collect();
            let out = repeat_tokens(&s, 0.2, &mut rng);
            assert_eq!(out.len(), s.len() + ((0.2 * s.len() as f64).round() as usize).max(1));
            assert!(is_subsequence(&s, &out));
        }
    }

    #[test]
    fn deletion_lengths_and_subsequence() {
        let mut rng = seeds::rng(5);
        let s = sent(&[2, 3, 4, 5, 6]);
        assert_eq!(word_deletion(&s, 0.2, &mut rng).len(), 4);
        let one = sent(&[4]);
        assert_eq!(word_deletion(&one, 0.2, &mut rng), one);
        for trial in 0..1000 {
            let len = 2 + (trial % 10);
            let s: Vec<u32> = (0..len as u32).map(|i| i + 2).collect();
            let out = delete_tokens(&s, 0.2, &mut rng);
            assert!(out.len() < s.len());
            assert!(!out.is_empty());
            assert!(is_subsequence(&out, &s));
        }
    }

    #[test]
    fn apply_plan_invert_slot() {
        let plan = AugmentationPlan::new(vec![AugmentationKind::Is]).unwrap();
        let g = apply_plan(&sent(&[2, 3]), &plan, 11);
        assert_eq!(g.positives.len(), 1);
        assert_eq!(g.positives[0].text.as_ref().unwrap().tokens(), &[3, 2]);
    }

    #[test]
    fn apply_plan_dp_slots_get_distinct_seeds() {
        let plan = AugmentationPlan::new(vec![AugmentationKind::Dp, AugmentationKind::Dp]).unwrap();
        let g = apply_plan(&sent(&[2, 3]), &plan, 11);
        assert!(g.positives.iter().all(|p| p.text.is_none()));
        assert_ne!(g.positives[0].mask_seed, g.positives[1].mask_seed);
    }

    #[test]
    fn apply_plan_is_reproducible() {
        let plan = AugmentationPlan::default_for_k(9, 0.2, 0.2).unwrap();
        let anchor = sent(&[2, 3, 4, 5, 6, 7]);
        assert_eq!(apply_plan(&anchor, &plan, 5), apply_plan(&anchor, &plan, 5));
        assert_ne!(
            apply_plan(&anchor, &plan, 5),
            apply_plan(&anchor, &plan, 6)
        );
    }

    #[test]
    fn default_plan_shapes() {
        let p9 = AugmentationPlan::default_for_k(9, 0.2, 0.2).unwrap();
        let labels: Vec<&str> = p9.kinds().iter().map(|k| k.label()).collect();
        assert_eq!(
            labels,
            ["DP", "SS", "IS", "WR", "WD", "SS", "IS", "WR", "WD"]
        );
        let p1 = AugmentationPlan::default_for_k(1, 0.2, 0.2).unwrap();
        assert_eq!(p1.kinds(), &[AugmentationKind::Dp]);
        let mono = AugmentationPlan::mono(AugmentationKind::Ss, 9).unwrap();
        assert_eq!(mono.kinds()[0], AugmentationKind::Dp);
        assert!(mono.kinds()[1..]
            .iter()
            .all(|k| *k == AugmentationKind::Ss));
    }

    #[test]
    fn shortcut_matrix_rows() {
        let row = |k| shortcut_matrix(k).unwrap();
        let ss = row(AugmentationKind::Ss);
        assert_eq!((ss.order_preserved, ss.ngram_preserved, ss.bow_preserved), (false, false, true));
        let is = row(AugmentationKind::Is);
        assert_eq!((is.order_preserved, is.ngram_preserved, is.bow_preserved), (false, true, true));
        let wr = row(AugmentationKind::Wr { ratio: 0.2 });
        assert_eq!((wr.order_preserved, wr.ngram_preserved, wr.bow_preserved), (true, false, true));
        let wd = row(AugmentationKind::Wd { ratio: 0.2 });
        assert_eq!((wd.order_preserved, wd.ngram_preserved, wd.bow_preserved), (true, false, false));
        assert!(shortcut_matrix(AugmentationKind::Dp).is_err());
    }

    #[test]
    fn inversion_preserves_unordered_bigram_multiset() {
        // The n-gram flag for IS holds for bigrams viewed as unordered
        // pairs: reversing the sentence reverses each bigram in place.
        let mut rng = seeds::rng(8);
        for _ in 0..200 {
            let len = 2 + rng.random_range(0..10);
            let s: Vec<u32> = (0..len).map(|_| rng.random_range(2..12)).collect();
            let bigrams = |v: &[u32]| {
                let mut b: Vec<(u32, u32)> = v
                    .windows(2)
                    .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
                    .collect();
                b.sort_unstable();
                b
            };
            assert_eq!(bigrams(&s), bigrams(&invert_tokens(&s)));
        }
    }

    #[test]
    fn plan_parsing() {
        let p = AugmentationPlan::parse("dp,ss,is,wr,wd", 0.2, 0.3).unwrap();
        assert_eq!(p.k(), 5);
        assert_eq!(p.kinds()[3], AugmentationKind::Wr { ratio: 0.2 });
        assert_eq!(p.kinds()[4], AugmentationKind::Wd { ratio: 0.3 });
        assert!(AugmentationPlan::parse("dp,zz", 0.2, 0.2).is_err());
        assert!(AugmentationPlan::parse("", 0.2, 0.2).is_err());
        assert!(AugmentationPlan::parse("wr", 1.5, 0.2).is_err());
    }
}
