//! Seeded synthetic corpus with ground-truth sentence similarity.
//!
//! Sentences draw content tokens from per-topic vocabulary blocks plus a
//! pool of shared function words. The gold similarity of a pair is five
//! times the overlap coefficient of the two sentences' content-token
//! multisets, so paraphrase-like same-topic pairs score high and
//! cross-topic pairs score near zero. Some sentences are generated as
//! paraphrase clusters (partial content reuse) so the gold distribution
//! actually spans the whole 0–5 range.
//!
//! Sentences are split 80/10/10 into train/dev/test groups and each pair
//! set is built strictly within its own group, so dev and test never
//! share a sentence.

use crate::error::{Error, Result};
use crate::seeds;
use crate::text::{build_vocab, tokenize, Sentence, SimilarityPair, Vocab, DEFAULT_MAX_LENGTH};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SynthConfig {
    pub num_topics: usize,
    pub vocab_per_topic: usize,
    pub shared_function_words: usize,
    pub sentences: usize,
    /// Inclusive token-length bounds for generated sentences.
    pub length_range: (usize, usize),
    /// Pairs generated per split (train, dev and test each).
    pub pair_count: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_topics: 8,
            vocab_per_topic: 50,
            shared_function_words: 20,
            sentences: 1600,
            length_range: (4, 12),
            pair_count: 240,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_topics", self.num_topics),
            ("vocab_per_topic", self.vocab_per_topic),
            ("shared_function_words", self.shared_function_words),
            ("sentences", self.sentences),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let (lo, hi) = self.length_range;
        if lo < 2 || hi < lo || hi > DEFAULT_MAX_LENGTH {
            return Err(Error::Config(format!(
                "length_range ({lo}, {hi}) must satisfy 2 <= min <= max <= {DEFAULT_MAX_LENGTH}"
            )));
        }
        if self.vocab_per_topic < hi {
            return Err(Error::Config(format!(
                "vocab_per_topic ({}) must be at least length_range max ({hi}) so \
                 content tokens can be drawn without replacement",
                self.vocab_per_topic
            )));
        }
        Ok(())
    }
}

/// Everything the generator produces, already tokenized.
#[derive(Debug, Clone)]
pub struct SynthData {
    /// Raw corpus lines in train ++ dev ++ test order.
    pub lines: Vec<String>,
    pub vocab: Vocab,
    pub corpus: Vec<Sentence>,
    pub train_pairs: Vec<SimilarityPair>,
    pub dev_pairs: Vec<SimilarityPair>,
    pub test_pairs: Vec<SimilarityPair>,
    /// Ids of topic (content) tokens; function words are excluded.
    pub content_ids: HashSet<u32>,
}

/// Gold similarity: five times the overlap coefficient of the two
/// sentences' content-token multisets.
pub fn gold_overlap(a: &Sentence, b: &Sentence, content_ids: &HashSet<u32>) -> f64 {
    let count = |s: &Sentence| {
        let mut m: Vec<u32> = s
            .tokens()
            .iter()
            .copied()
            .filter(|t| content_ids.contains(t))
            .collect();
        m.sort_unstable();
        m
    };
    let (ma, mb) = (count(a), count(b));
    if ma.is_empty() || mb.is_empty() {
        return 0.0;
    }
    // Multiset intersection of two sorted lists.
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < ma.len() && j < mb.len() {
        match ma[i].cmp(&mb[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    5.0 * inter as f64 / ma.len().min(mb.len()) as f64
}

struct GeneratedSentence {
    words: Vec<String>,
    topic: usize,
    cluster: usize,
}

fn topic_word(topic: usize, idx: usize) -> String {
    format!("t{topic:02}w{idx:03}")
}

fn function_word(idx: usize) -> String {
    format!("f{idx:02}")
}

/// Sample `n` distinct indices from `0..pool`, excluding `taken`.
fn sample_distinct(
    rng: &mut ChaCha8Rng,
    pool: usize,
    n: usize,
    taken: &HashSet<usize>,
) -> Vec<usize> {
    let mut available: Vec<usize> = (0..pool).filter(|i| !taken.contains(i)).collect();
    debug_assert!(available.len() >= n);
    available.shuffle(rng);
    available.truncate(n);
    available
}

fn assemble(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    topic: usize,
    content: &[usize],
    n_fw: usize,
) -> Vec<String> {
    let mut words: Vec<String> = content.iter().map(|&i| topic_word(topic, i)).collect();
    for _ in 0..n_fw {
        words.push(function_word(rng.random_range(0..cfg.shared_function_words)));
    }
    words.shuffle(rng);
    words
}

fn generate_split(
    cfg: &SynthConfig,
    target: usize,
    split_tag: u64,
) -> Vec<GeneratedSentence> {
    let mut rng = seeds::rng(seeds::chain(&[cfg.seed, 0x5e17, split_tag]));
    let mut out: Vec<GeneratedSentence> = Vec::with_capacity(target);
    let mut cluster = 0usize;
    let (lo, hi) = cfg.length_range;
    while out.len() < target {
        let topic = rng.random_range(0..cfg.num_topics);
        let size = match rng.random_range(0..10) {
            0..=2 => 1,
            3..=6 => 2,
            _ => 3,
        }
        .min(target - out.len());

        let base_len = rng.random_range(lo..=hi);
        let base_content_n = (base_len - base_len / 3).max(1);
        let base_content =
            sample_distinct(&mut rng, cfg.vocab_per_topic, base_content_n, &HashSet::new());
        out.push(GeneratedSentence {
            words: assemble(&mut rng, cfg, topic, &base_content, base_len - base_content_n),
            topic,
            cluster,
        });

        for _ in 1..size {
            let len = rng.random_range(lo..=hi);
            let content_n = (len - len / 3).max(1);
            let max_reuse = content_n.min(base_content.len());
            let min_reuse = (content_n / 2).max(1).min(max_reuse);
            let reuse = rng.random_range(min_reuse..=max_reuse);
            let mut content: Vec<usize> = {
                let mut pool = base_content.clone();
                pool.shuffle(&mut rng);
                pool.truncate(reuse);
                pool
            };
            let taken: HashSet<usize> = content.iter().copied().collect();
            content.extend(sample_distinct(
                &mut rng,
                cfg.vocab_per_topic,
                content_n - reuse,
                &taken,
            ));
            out.push(GeneratedSentence {
                words: assemble(&mut rng, cfg, topic, &content, len - content_n),
                topic,
                cluster,
            });
        }
        cluster += 1;
    }
    out
}

fn build_pairs(
    cfg: &SynthConfig,
    split: &[GeneratedSentence],
    sentences: &[Sentence],
    content_ids: &HashSet<u32>,
    split_tag: u64,
) -> Vec<SimilarityPair> {
    if split.len() < 2 || cfg.pair_count == 0 {
        return Vec::new();
    }
    let mut rng = seeds::rng(seeds::chain(&[cfg.seed, 0x9a13, split_tag]));
    let mut chosen: HashSet<(usize, usize)> = HashSet::new();
    let mut pairs = Vec::with_capacity(cfg.pair_count);
    let n = split.len();

    // 40% same-cluster, 30% same-topic cross-cluster, 30% cross-topic;
    // falls back to a uniform pair when a category runs dry.
    let emit = |rng: &mut ChaCha8Rng,
                    chosen: &mut HashSet<(usize, usize)>,
                    pairs: &mut Vec<SimilarityPair>,
                    kind: u8| {
        for _attempt in 0..200 {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j {
                continue;
            }
            let key = (i.min(j), i.max(j));
            if chosen.contains(&key) {
                continue;
            }
            let ok = match kind {
                0 => split[i].cluster == split[j].cluster,
                1 => split[i].topic == split[j].topic && split[i].cluster != split[j].cluster,
                2 => split[i].topic != split[j].topic,
                _ => true,
            };
            if !ok {
                continue;
            }
            chosen.insert(key);
            let gold = gold_overlap(&sentences[i], &sentences[j], content_ids);
            pairs.push(
                SimilarityPair::new(sentences[i].clone(), sentences[j].clone(), gold)
                    .expect("overlap gold is in range"),
            );
            return true;
        }
        false
    };

    for p in 0..cfg.pair_count {
        let kind = match p % 10 {
            0..=3 => 0,
            4..=6 => 1,
            _ => 2,
        };
        if !emit(&mut rng, &mut chosen, &mut pairs, kind) {
            emit(&mut rng, &mut chosen, &mut pairs, 255);
        }
    }
    pairs
}

/// Generate the full corpus and pair sets. Byte-identical output for
/// identical configs.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;

    let n_train = cfg.sentences * 8 / 10;
    let n_dev = (cfg.sentences - n_train) / 2;
    let n_test = cfg.sentences - n_train - n_dev;

    let splits = [
        generate_split(cfg, n_train, 0),
        generate_split(cfg, n_dev, 1),
        generate_split(cfg, n_test, 2),
    ];

    let lines: Vec<String> = splits
        .iter()
        .flat_map(|s| s.iter().map(|g| g.words.join(" ")))
        .collect();
    let vocab = build_vocab(&lines, 1)?;

    let content_ids: HashSet<u32> = (0..cfg.num_topics)
        .flat_map(|t| (0..cfg.vocab_per_topic).map(move |i| topic_word(t, i)))
        .filter_map(|w| vocab.id(&w))
        .collect();

    let tokenized: Vec<Vec<Sentence>> = splits
        .iter()
        .map(|s| {
            s.iter()
                .map(|g| {
                    tokenize(&g.words.join(" "), &vocab, DEFAULT_MAX_LENGTH)
                        .expect("generated sentences are non-empty")
                })
                .collect()
        })
        .collect();

    let pair_sets: Vec<Vec<SimilarityPair>> = splits
        .iter()
        .zip(&tokenized)
        .zip(0u64..)
        .map(|((split, sents), tag)| build_pairs(cfg, split, sents, &content_ids, tag))
        .collect();

    let corpus: Vec<Sentence> = tokenized.iter().flatten().cloned().collect();
    debug_assert_eq!(corpus.len(), n_train + n_dev + n_test);

    let mut sets = pair_sets.into_iter();
    Ok(SynthData {
        lines,
        vocab,
        corpus,
        train_pairs: sets.next().unwrap(),
        dev_pairs: sets.next().unwrap(),
        test_pairs: sets.next().unwrap(),
        content_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_content_multiset_scores_five() {
        let content: HashSet<u32> = [5, 6, 7].into();
        let a = Sentence::new(vec![5, 6, 2, 7]).unwrap();
        let b = Sentence::new(vec![7, 5, 6, 3, 3]).unwrap();
        assert_eq!(gold_overlap(&a, &b, &content), 5.0);
    }

    #[test]
    fn disjoint_topics_score_zero() {
        let content: HashSet<u32> = [5, 6, 7, 8].into();
        let a = Sentence::new(vec![5, 6]).unwrap();
        let b = Sentence::new(vec![7, 8]).unwrap();
        assert_eq!(gold_overlap(&a, &b, &content), 0.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            sentences: 120,
            pair_count: 40,
            seed: 7,
            ..SynthConfig::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.lines, b.lines);
        assert_eq!(a.dev_pairs, b.dev_pairs);
        assert_eq!(a.test_pairs, b.test_pairs);
    }

    #[test]
    fn default_config_spans_the_gold_range() {
        let data = generate_synthetic(&SynthConfig::default()).unwrap();
        for pairs in [&data.train_pairs, &data.dev_pairs, &data.test_pairs] {
            assert_eq!(pairs.len(), SynthConfig::default().pair_count);
            let min = pairs.iter().map(|p| p.gold).fold(f64::INFINITY, f64::min);
            let max = pairs.iter().map(|p| p.gold).fold(0.0f64, f64::max);
            assert!(min < 1.0, "gold min {min} not < 1");
            assert!(max > 4.0, "gold max {max} not > 4");
        }
    }

    #[test]
    fn gold_is_symmetric_by_recomputation() {
        let data = generate_synthetic(&SynthConfig {
            sentences: 200,
            pair_count: 60,
            ..SynthConfig::default()
        })
        .unwrap();
        for p in data.dev_pairs.iter().chain(&data.test_pairs) {
            let ab = gold_overlap(&p.sentence_a, &p.sentence_b, &data.content_ids);
            let ba = gold_overlap(&p.sentence_b, &p.sentence_a, &data.content_ids);
            assert_eq!(ab, ba);
            assert_eq!(ab, p.gold);
        }
    }

    #[test]
    fn sentences_respect_invariants() {
        let cfg = SynthConfig::default();
        let data = generate_synthetic(&cfg).unwrap();
        assert_eq!(data.corpus.len(), cfg.sentences);
        for s in &data.corpus {
            assert!(s.len() >= 2 && s.len() <= cfg.length_range.1);
            assert!(s.tokens().iter().all(|&t| (t as usize) < data.vocab.len()));
            // At least one content token per sentence.
            assert!(s.tokens().iter().any(|t| data.content_ids.contains(t)));
        }
    }

    #[test]
    fn dev_and_test_sentences_are_disjoint() {
        let data = generate_synthetic(&SynthConfig::default()).unwrap();
        let dev: HashSet<&Sentence> = data
            .dev_pairs
            .iter()
            .flat_map(|p| [&p.sentence_a, &p.sentence_b])
            .collect();
        for p in &data.test_pairs {
            assert!(!dev.contains(&p.sentence_a));
            assert!(!dev.contains(&p.sentence_b));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = SynthConfig::default();
        cfg.vocab_per_topic = 8; // below length_range max
        assert!(matches!(
            generate_synthetic(&cfg),
            Err(Error::Config(_))
        ));
        let mut cfg = SynthConfig::default();
        cfg.num_topics = 0;
        assert!(generate_synthetic(&cfg).is_err());
    }
}
