//! Tokenization, vocabulary construction and corpus / pair-file I/O.
//!
//! Tokenization is whitespace-based: every augmentation in this crate is
//! word-level, so subword machinery would add nothing at this scale.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Default maximum sentence length, in tokens.
pub const DEFAULT_MAX_LENGTH: usize = 32;

/// A tokenized sentence: a non-empty sequence of vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sentence {
    tokens: Vec<u32>,
}

impl Sentence {
    pub fn new(tokens: Vec<u32>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Domain("empty sentence".into()));
        }
        Ok(Sentence { tokens })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // length >= 1 by construction
    }

    /// Render back to text through a vocabulary.
    pub fn to_text(&self, vocab: &Vocab) -> String {
        let mut out = String::new();
        for (i, &id) in self.tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}", vocab.token(id).unwrap_or(UNK_TOKEN));
        }
        out
    }
}

/// Token-string to id map with reserved PAD and UNK entries. Id order is
/// a pure function of the corpus (frequency descending, then
/// lexicographic), so the same corpus always yields the same ids.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    fn from_ordered(tokens: Vec<String>) -> Self {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            index.insert(t.clone(), i as u32);
        }
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Vocabulary containing only the reserved entries.
    pub fn reserved_only() -> Self {
        Vocab::from_ordered(vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()])
    }
}

/// Lowercase and whitespace-split a raw line.
pub fn split_words(raw: &str) -> Vec<String> {
    raw.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect()
}

/// Tokenize one line against a vocabulary. Unknown tokens map to UNK and
/// the result is truncated to `max_length`. Returns `None` for lines that
/// are empty after trimming — a skip signal, not an error.
pub fn tokenize(raw: &str, vocab: &Vocab, max_length: usize) -> Option<Sentence> {
    let words = split_words(raw);
    if words.is_empty() {
        return None;
    }
    let tokens: Vec<u32> = words
        .iter()
        .take(max_length)
        .map(|w| vocab.id(w).unwrap_or(UNK_ID))
        .collect();
    Some(Sentence { tokens })
}

/// Build a vocabulary from corpus lines, keeping tokens with frequency
/// at least `min_count`.
pub fn build_vocab(lines: &[String], min_count: usize) -> Result<Vocab> {
    if lines.is_empty() {
        return Err(Error::Ingestion("empty corpus".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for line in lines {
        for w in split_words(line) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    let mut entries: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    tokens.extend(entries.into_iter().map(|(t, _)| t));
    Ok(Vocab::from_ordered(tokens))
}

/// Read a line-per-sentence UTF-8 corpus, skipping blank lines. CRLF and
/// LF files load identically.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(raw
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// A sentence pair with a gold similarity on the 0–5 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityPair {
    pub sentence_a: Sentence,
    pub sentence_b: Sentence,
    pub gold: f64,
}

impl SimilarityPair {
    pub fn new(sentence_a: Sentence, sentence_b: Sentence, gold: f64) -> Result<Self> {
        if !(0.0..=5.0).contains(&gold) {
            return Err(Error::Domain(format!("gold score {gold} outside [0, 5]")));
        }
        Ok(SimilarityPair {
            sentence_a,
            sentence_b,
            gold,
        })
    }
}

pub const PAIR_FILE_HEADER: &str = "sentence_a\tsentence_b\tgold";

/// Render pairs as a tab-separated file body (header + one pair per line).
pub fn pairs_to_tsv(pairs: &[SimilarityPair], vocab: &Vocab) -> String {
    let mut out = String::from(PAIR_FILE_HEADER);
    out.push('\n');
    for p in pairs {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}",
            p.sentence_a.to_text(vocab),
            p.sentence_b.to_text(vocab),
            p.gold
        );
    }
    out
}

/// Parse a pair file written by [`pairs_to_tsv`], tokenizing sentences
/// against `vocab`.
pub fn load_pairs(
    path: impl AsRef<Path>,
    vocab: &Vocab,
    max_length: usize,
) -> Result<Vec<SimilarityPair>> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = raw.lines();
    match lines.next() {
        Some(h) if h.trim_end() == PAIR_FILE_HEADER => {}
        other => {
            return Err(Error::Ingestion(format!(
                "{}: expected pair-file header, got {:?}",
                path.display(),
                other
            )))
        }
    }
    let mut pairs = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::Ingestion(format!(
                "{}:{}: expected 3 tab-separated columns, got {}",
                path.display(),
                lineno + 2,
                cols.len()
            )));
        }
        let a = tokenize(cols[0], vocab, max_length).ok_or_else(|| {
            Error::Ingestion(format!("{}:{}: empty sentence_a", path.display(), lineno + 2))
        })?;
        let b = tokenize(cols[1], vocab, max_length).ok_or_else(|| {
            Error::Ingestion(format!("{}:{}: empty sentence_b", path.display(), lineno + 2))
        })?;
        let gold: f64 = cols[2].trim().parse().map_err(|_| {
            Error::Ingestion(format!(
                "{}:{}: bad gold value {:?}",
                path.display(),
                lineno + 2,
                cols[2]
            ))
        })?;
        pairs.push(SimilarityPair::new(a, b, gold)?);
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab_of(lines: &[&str]) -> Vocab {
        let owned: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        build_vocab(&owned, 1).unwrap()
    }

    #[test]
    fn tokenize_known_sentence() {
        let vocab = vocab_of(&["a dog is chasing a cat"]);
        let s = tokenize("A dog is chasing a cat.", &vocab, 32).unwrap();
        assert_eq!(s.len(), 6);
        // "cat." is not in the vocab ("cat" is), so the last token is UNK.
        assert_eq!(*s.tokens().last().unwrap(), UNK_ID);
        let known = s.tokens().iter().filter(|&&t| t != UNK_ID).count();
        assert_eq!(known, 5);
    }

    #[test]
    fn tokenize_all_unknown() {
        let s = tokenize("xyzzy", &Vocab::reserved_only(), 32).unwrap();
        assert_eq!(s.tokens(), &[UNK_ID]);
    }

    #[test]
    fn tokenize_truncates_to_max_length() {
        let line = vec!["w"; 40].join(" ");
        let s = tokenize(&line, &Vocab::reserved_only(), 32).unwrap();
        assert_eq!(s.len(), 32);
    }

    #[test]
    fn tokenize_blank_is_skip_signal() {
        assert!(tokenize("   \t ", &Vocab::reserved_only(), 32).is_none());
    }

    #[test]
    fn vocab_frequency_then_lexicographic() {
        let vocab = vocab_of(&["a b", "a"]);
        assert_eq!(vocab.id("a"), Some(2));
        assert_eq!(vocab.id("b"), Some(3));
        assert_eq!(vocab.len(), 4);
    }

    #[test]
    fn vocab_min_count_filters() {
        let lines: Vec<String> = vec!["a b".into(), "a".into()];
        let vocab = build_vocab(&lines, 2).unwrap();
        assert_eq!(vocab.id("a"), Some(2));
        assert_eq!(vocab.id("b"), None);
    }

    #[test]
    fn vocab_is_deterministic() {
        let lines: Vec<String> = vec!["c a b".into(), "b a".into(), "a".into()];
        let v1 = build_vocab(&lines, 1).unwrap();
        let v2 = build_vocab(&lines, 1).unwrap();
        for t in ["a", "b", "c"] {
            assert_eq!(v1.id(t), v2.id(t));
        }
        // a(3) before b(2) before c(1).
        assert_eq!(v1.id("a"), Some(2));
        assert_eq!(v1.id("b"), Some(3));
        assert_eq!(v1.id("c"), Some(4));
    }

    #[test]
    fn empty_corpus_is_ingestion_error() {
        assert!(matches!(
            build_vocab(&[], 1),
            Err(Error::Ingestion(_))
        ));
    }

    #[test]
    fn load_corpus_skips_blanks_and_handles_crlf() {
        let dir = tempfile::tempdir().unwrap();
        let lf = dir.path().join("lf.txt");
        let crlf = dir.path().join("crlf.txt");
        std::fs::write(&lf, "one two\n\nthree\n").unwrap();
        std::fs::write(&crlf, "one two\r\n\r\nthree\r\n").unwrap();
        let a = load_corpus(&lf).unwrap();
        let b = load_corpus(&crlf).unwrap();
        assert_eq!(a, vec!["one two".to_string(), "three".to_string()]);
        assert_eq!(a, b);
    }

    #[test]
    fn load_corpus_missing_file_names_path() {
        let err = load_corpus("/nonexistent/corpus.txt").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/corpus.txt"));
    }

    #[test]
    fn pair_tsv_round_trip() {
        let vocab = vocab_of(&["a b c d"]);
        let s = |t: &str| tokenize(t, &vocab, 32).unwrap();
        let pairs = vec![
            SimilarityPair::new(s("a b"), s("c d"), 1.25).unwrap(),
            SimilarityPair::new(s("a"), s("a"), 5.0).unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.tsv");
        std::fs::write(&path, pairs_to_tsv(&pairs, &vocab)).unwrap();
        let loaded = load_pairs(&path, &vocab, 32).unwrap();
        assert_eq!(loaded, pairs);
    }

    #[test]
    fn gold_outside_range_rejected() {
        let vocab = vocab_of(&["a"]);
        let s = tokenize("a", &vocab, 32).unwrap();
        assert!(SimilarityPair::new(s.clone(), s, 5.5).is_err());
    }
}
