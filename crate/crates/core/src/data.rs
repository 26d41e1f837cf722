//! Corpus loading: one review sentence per line with its gold triplets.
//!
//! File format: `<sentence>####<triplet list>` where the triplet list is a
//! bracketed list of `([aspect indices], [opinion indices], '<POS|NEU|NEG>')`
//! entries. Token indices are 0-based; spans are stored as the full run of
//! indices and must be contiguous.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentiment polarity of a triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sentiment {
    #[serde(rename = "POS")]
    Positive,
    #[serde(rename = "NEU")]
    Neutral,
    #[serde(rename = "NEG")]
    Negative,
}

impl Sentiment {
    pub fn as_tag(self) -> &'static str {
        match self {
            Sentiment::Positive => "POS",
            Sentiment::Neutral => "NEU",
            Sentiment::Negative => "NEG",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "POS" => Some(Sentiment::Positive),
            "NEU" => Some(Sentiment::Neutral),
            "NEG" => Some(Sentiment::Negative),
            _ => None,
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_tag())
    }
}

/// A gold (aspect term, opinion term, sentiment) annotation.
///
/// Index lists are non-empty, strictly increasing, contiguous runs of 0-based
/// token indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GoldTriplet {
    pub aspect: Vec<usize>,
    pub opinion: Vec<usize>,
    pub sentiment: Sentiment,
}

impl GoldTriplet {
    pub fn single_word(&self) -> bool {
        self.aspect.len() == 1 && self.opinion.len() == 1
    }
}

/// A tokenized sentence with its gold triplets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub gold: Vec<GoldTriplet>,
}

/// Which portion of a dataset to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Corpus-level counts: sentences, triplets by sentiment, and the
/// single-word / multi-word triplet breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_sentences: usize,
    pub pos: usize,
    pub neu: usize,
    pub neg: usize,
    pub single_word: usize,
    pub multi_word: usize,
}

impl CorpusStats {
    pub fn total_triplets(&self) -> usize {
        self.pos + self.neu + self.neg
    }
}

/// Parse one dataset file. Sentence ids are `L<lineno>` with the 1-based
/// physical line number, so gold and prediction files derived from the same
/// input always agree on ids.
pub fn parse_file(path: &Path) -> Result<Vec<Sentence>> {
    let text = fs::read_to_string(path)?;
    let mut sentences = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let id = format!("L{lineno:05}");
        let sentence = parse_line(line, id).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        })?;
        sentences.push(sentence);
    }
    Ok(sentences)
}

/// Parse a split of a dataset. `path` may be the split file itself or a
/// directory containing `<split>_triplets.txt` or `<split>.txt`. Sentence ids
/// are prefixed with the split name for corpus uniqueness.
pub fn parse_dataset(path: &Path, split: Split) -> Result<Vec<Sentence>> {
    let file = resolve_split_file(path, split)?;
    let mut sentences = parse_file(&file)?;
    for s in &mut sentences {
        s.id = format!("{split}-{}", s.id);
    }
    Ok(sentences)
}

fn resolve_split_file(path: &Path, split: Split) -> Result<PathBuf> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    for name in [
        format!("{}_triplets.txt", split.name()),
        format!("{}.txt", split.name()),
    ] {
        let candidate = path.join(&name);
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("no {split} file under {}", path.display()),
    )))
}

/// Parse a single `<sentence>####<triplets>` line.
pub fn parse_line(line: &str, id: String) -> std::result::Result<Sentence, String> {
    // rsplit: a pathological sentence could itself contain the separator.
    let (text, annot) = line
        .rsplit_once("####")
        .ok_or_else(|| "missing '####' separator".to_string())?;

    let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    if tokens.is_empty() {
        return Err("empty sentence".to_string());
    }

    let gold = parse_triplet_list(annot)?;

    let mut seen = HashSet::new();
    for t in &gold {
        validate_indices(&t.aspect, tokens.len(), "aspect")?;
        validate_indices(&t.opinion, tokens.len(), "opinion")?;
        if !seen.insert(t.clone()) {
            return Err(format!(
                "duplicate triplet ({:?}, {:?}, {})",
                t.aspect, t.opinion, t.sentiment
            ));
        }
    }

    Ok(Sentence { id, tokens, gold })
}

fn validate_indices(
    indices: &[usize],
    n_tokens: usize,
    which: &str,
) -> std::result::Result<(), String> {
    if indices.is_empty() {
        return Err(format!("empty {which} index list"));
    }
    for pair in indices.windows(2) {
        if pair[1] != pair[0] + 1 {
            return Err(format!(
                "{which} indices {indices:?} are not a contiguous increasing run"
            ));
        }
    }
    let last = *indices.last().unwrap();
    if last >= n_tokens {
        return Err(format!(
            "{which} index {last} out of range for {n_tokens} tokens"
        ));
    }
    Ok(())
}

/// Serialize a sentence back to the line format. `parse_line` on the result
/// yields an equal `Sentence` (modulo id).
pub fn serialize_line(sentence: &Sentence) -> String {
    let triplets: Vec<String> = sentence
        .gold
        .iter()
        .map(|t| {
            format!(
                "({}, {}, '{}')",
                format_indices(&t.aspect),
                format_indices(&t.opinion),
                t.sentiment
            )
        })
        .collect();
    format!("{}####[{}]", sentence.tokens.join(" "), triplets.join(", "))
}

fn format_indices(indices: &[usize]) -> String {
    let inner: Vec<String> = indices.iter().map(usize::to_string).collect();
    format!("[{}]", inner.join(", "))
}

/// Count sentences, triplet sentiments, and single/multi-word triplets.
pub fn compute_stats(sentences: &[Sentence]) -> CorpusStats {
    let mut stats = CorpusStats {
        num_sentences: sentences.len(),
        pos: 0,
        neu: 0,
        neg: 0,
        single_word: 0,
        multi_word: 0,
    };
    for s in sentences {
        for t in &s.gold {
            match t.sentiment {
                Sentiment::Positive => stats.pos += 1,
                Sentiment::Neutral => stats.neu += 1,
                Sentiment::Negative => stats.neg += 1,
            }
            if t.single_word() {
                stats.single_word += 1;
            } else {
                stats.multi_word += 1;
            }
        }
    }
    stats
}

// --- triplet list parser -----------------------------------------------

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(s: &'a str) -> Self {
        Cursor {
            bytes: s.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> std::result::Result<(), String> {
        match self.peek() {
            Some(found) if found == c => {
                self.pos += 1;
                Ok(())
            }
            Some(found) => Err(format!(
                "expected '{}' at column {}, found '{}'",
                c as char,
                self.pos + 1,
                found as char
            )),
            None => Err(format!("expected '{}', found end of line", c as char)),
        }
    }

    fn parse_usize(&mut self) -> std::result::Result<usize, String> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(format!("expected an integer at column {}", start + 1));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse::<usize>()
            .map_err(|e| e.to_string())
    }

    fn parse_index_list(&mut self) -> std::result::Result<Vec<usize>, String> {
        self.expect(b'[')?;
        let mut out = Vec::new();
        if self.peek() == Some(b']') {
            self.pos += 1;
            return Ok(out);
        }
        loop {
            out.push(self.parse_usize()?);
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b']') => {
                    self.pos += 1;
                    return Ok(out);
                }
                _ => return Err(format!("expected ',' or ']' at column {}", self.pos + 1)),
            }
        }
    }

    fn parse_sentiment(&mut self) -> std::result::Result<Sentiment, String> {
        self.expect(b'\'')?;
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\'' {
            self.pos += 1;
        }
        let tag = std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|e| e.to_string())?;
        self.expect(b'\'')?;
        Sentiment::from_tag(tag).ok_or_else(|| format!("unknown sentiment tag '{tag}'"))
    }

    fn at_end(&mut self) -> bool {
        self.peek().is_none()
    }
}

fn parse_triplet_list(s: &str) -> std::result::Result<Vec<GoldTriplet>, String> {
    let mut cur = Cursor::new(s);
    cur.expect(b'[')?;
    let mut out = Vec::new();
    if cur.peek() == Some(b']') {
        cur.pos += 1;
    } else {
        loop {
            cur.expect(b'(')?;
            let aspect = cur.parse_index_list()?;
            cur.expect(b',')?;
            let opinion = cur.parse_index_list()?;
            cur.expect(b',')?;
            let sentiment = cur.parse_sentiment()?;
            cur.expect(b')')?;
            out.push(GoldTriplet {
                aspect,
                opinion,
                sentiment,
            });
            match cur.peek() {
                Some(b',') => cur.pos += 1,
                Some(b']') => {
                    cur.pos += 1;
                    break;
                }
                _ => return Err(format!("expected ',' or ']' at column {}", cur.pos + 1)),
            }
        }
    }
    if !cur.at_end() {
        return Err(format!("trailing content at column {}", cur.pos + 1));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(line: &str) -> std::result::Result<Sentence, String> {
        parse_line(line, "t".to_string())
    }

    #[test]
    fn parses_the_hot_dogs_line() {
        let s = parse("the hot dogs are top notch .####[([1, 2], [4, 5], 'POS')]").unwrap();
        assert_eq!(s.tokens.len(), 7);
        assert_eq!(
            s.gold,
            vec![GoldTriplet {
                aspect: vec![1, 2],
                opinion: vec![4, 5],
                sentiment: Sentiment::Positive,
            }]
        );
    }

    #[test]
    fn parses_empty_triplet_list() {
        let s = parse("no opinions here####[]").unwrap();
        assert_eq!(s.tokens.len(), 3);
        assert!(s.gold.is_empty());
    }

    #[test]
    fn parses_multiple_triplets() {
        let s = parse(
            "the keyboard is great but the screen is dim####[([1], [3], 'POS'), ([6], [8], 'NEG')]",
        )
        .unwrap();
        assert_eq!(s.gold.len(), 2);
        assert_eq!(s.gold[1].sentiment, Sentiment::Negative);
    }

    #[test]
    fn rejects_unknown_sentiment() {
        let err = parse("a b c####[([0], [1], 'GOOD')]").unwrap_err();
        assert!(err.contains("GOOD"), "{err}");
    }

    #[test]
    fn rejects_out_of_range_index() {
        let err = parse("a b c####[([0], [5], 'POS')]").unwrap_err();
        assert!(err.contains("out of range"), "{err}");
    }

    #[test]
    fn rejects_non_contiguous_indices() {
        let err = parse("a b c d####[([0, 2], [3], 'POS')]").unwrap_err();
        assert!(err.contains("contiguous"), "{err}");
    }

    #[test]
    fn rejects_duplicate_triplets() {
        let err = parse("a b c####[([0], [1], 'POS'), ([0], [1], 'POS')]").unwrap_err();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn rejects_missing_separator() {
        let err = parse("a b c [([0], [1], 'POS')]").unwrap_err();
        assert!(err.contains("####"), "{err}");
    }

    #[test]
    fn rejects_empty_index_list() {
        let err = parse("a b c####[([], [1], 'POS')]").unwrap_err();
        assert!(err.contains("empty aspect"), "{err}");
    }

    #[test]
    fn rejects_empty_sentence() {
        let err = parse("####[]").unwrap_err();
        assert!(err.contains("empty sentence"), "{err}");
    }

    #[test]
    fn rejects_trailing_garbage() {
        let err = parse("a b####[] extra").unwrap_err();
        assert!(err.contains("trailing"), "{err}");
    }

    #[test]
    fn parse_error_carries_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "good line####[]\nbad line####[(]\n").unwrap();
        match parse_file(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn blank_lines_are_skipped_but_numbering_is_physical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.txt");
        std::fs::write(&path, "a b####[]\n\nc d####[([0], [1], 'NEU')]\n").unwrap();
        let sentences = parse_file(&path).unwrap();
        assert_eq!(sentences.len(), 2);
        assert_eq!(sentences[0].id, "L00001");
        assert_eq!(sentences[1].id, "L00003");
    }

    #[test]
    fn stats_single_negative_triplet() {
        let s = parse("a b c d####[([1], [3], 'NEG')]").unwrap();
        let stats = compute_stats(&[s]);
        assert_eq!(
            stats,
            CorpusStats {
                num_sentences: 1,
                pos: 0,
                neu: 0,
                neg: 1,
                single_word: 1,
                multi_word: 0,
            }
        );
    }

    #[test]
    fn stats_counts_multi_word() {
        let s =
            parse("a b c d e f####[([1, 2], [4], 'POS'), ([0], [5], 'NEU')]").unwrap();
        let stats = compute_stats(&[s]);
        assert_eq!(stats.pos, 1);
        assert_eq!(stats.neu, 1);
        assert_eq!(stats.single_word, 1);
        assert_eq!(stats.multi_word, 1);
        assert_eq!(
            stats.total_triplets(),
            stats.single_word + stats.multi_word
        );
    }

    #[test]
    fn round_trip_fixed_examples() {
        for line in [
            "the hot dogs are top notch .####[([1, 2], [4, 5], 'POS')]",
            "no opinions here####[]",
            "a b c d e####[([0], [2], 'NEU'), ([3, 4], [1], 'NEG')]",
        ] {
            let parsed = parse(line).unwrap();
            let reparsed = parse(&serialize_line(&parsed)).unwrap();
            assert_eq!(parsed, reparsed);
        }
    }

    #[test]
    fn parse_dataset_prefixes_split() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("train_triplets.txt"), "a b####[]\n").unwrap();
        let sentences = parse_dataset(dir.path(), Split::Train).unwrap();
        assert_eq!(sentences[0].id, "train-L00001");
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_sentence() -> impl Strategy<Value = Sentence> {
            // Tokens from a tiny alphabet; spans are random contiguous runs.
            (2usize..12).prop_flat_map(|n| {
                let tokens = proptest::collection::vec(
                    proptest::sample::select(vec!["food", "great", "the", "bad", "screen"]),
                    n,
                );
                let triplets = proptest::collection::vec(
                    (0..n, 1usize..=3, 0..n, 1usize..=3, 0usize..3),
                    0..4,
                )
                .prop_map(move |specs| {
                    let mut seen = HashSet::new();
                    let mut out = Vec::new();
                    for (a0, alen, o0, olen, pol) in specs {
                        let a_end = (a0 + alen - 1).min(n - 1);
                        let o_end = (o0 + olen - 1).min(n - 1);
                        let t = GoldTriplet {
                            aspect: (a0..=a_end).collect(),
                            opinion: (o0..=o_end).collect(),
                            sentiment: match pol {
                                0 => Sentiment::Positive,
                                1 => Sentiment::Neutral,
                                _ => Sentiment::Negative,
                            },
                        };
                        if seen.insert(t.clone()) {
                            out.push(t);
                        }
                    }
                    out
                });
                (tokens, triplets).prop_map(|(tokens, gold)| Sentence {
                    id: "p".to_string(),
                    tokens: tokens.into_iter().map(str::to_string).collect(),
                    gold,
                })
            })
        }

        proptest! {
            #[test]
            fn serialize_parse_round_trip(sentence in arb_sentence()) {
                let line = serialize_line(&sentence);
                let reparsed = parse_line(&line, sentence.id.clone()).unwrap();
                prop_assert_eq!(sentence, reparsed);
            }

            #[test]
            fn stats_partition_invariant(sentences in proptest::collection::vec(arb_sentence(), 0..8)) {
                let stats = compute_stats(&sentences);
                prop_assert_eq!(stats.pos + stats.neu + stats.neg, stats.single_word + stats.multi_word);
            }
        }
    }
}
