//! Review corpora: loading, vocabulary, model inputs and shuffled negatives.

mod negatives;
pub mod synth;
mod vocab;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use negatives::{make_negatives, sample_permutations};
pub use vocab::{build_vocab, escape_token, Vocab, CLS, PAD, SEP, UNK};

/// Sentiment polarity; the discriminant is the column in every `m × 3`
/// sentiment matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Positive = 0,
    Neutral = 1,
    Negative = 2,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Neutral, Polarity::Negative];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Polarity {
        Polarity::ALL[i]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Neutral => "neutral",
            Polarity::Negative => "negative",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "positive" => Ok(Polarity::Positive),
            "neutral" => Ok(Polarity::Neutral),
            "negative" => Ok(Polarity::Negative),
            other => Err(format!("unknown polarity {other:?}")),
        }
    }
}

/// A gold or predicted (category id, polarity) pair.
pub type Label = (usize, Polarity);

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceRec {
    pub tokens: Vec<String>,
    /// (head, dependent) token positions.
    pub dep_edges: Vec<(usize, usize)>,
    pub labels: Vec<Label>,
}

impl SentenceRec {
    /// Per-category gold polarity, `None` where the category is absent.
    pub fn gold_by_category(&self, m: usize) -> Vec<Option<Polarity>> {
        let mut out = vec![None; m];
        for &(c, p) in &self.labels {
            out[c] = Some(p);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReviewDoc {
    pub review_id: String,
    pub sentences: Vec<SentenceRec>,
}

impl ReviewDoc {
    pub fn num_sentences(&self) -> usize {
        self.sentences.len()
    }

    /// The same review with sentences reordered: position `k` holds the
    /// original sentence `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> ReviewDoc {
        ReviewDoc {
            review_id: self.review_id.clone(),
            sentences: order.iter().map(|&i| self.sentences[i].clone()).collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLabel {
    category: String,
    polarity: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSentence {
    tokens: Vec<String>,
    dep_edges: Vec<[usize; 2]>,
    labels: Vec<RawLabel>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReview {
    review_id: String,
    sentences: Vec<RawSentence>,
}

/// Reads a category list: one name per non-blank line.
pub fn load_categories(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cats: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    let unique: BTreeSet<&String> = cats.iter().collect();
    if cats.is_empty() {
        return Err(Error::Config(format!("{}: no categories", path.display())));
    }
    if unique.len() != cats.len() {
        return Err(Error::Config(format!(
            "{}: duplicate category names",
            path.display()
        )));
    }
    Ok(cats)
}

pub fn write_categories(path: impl AsRef<Path>, categories: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut text = categories.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a JSONL corpus, validating every record. Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>, categories: &[String]) -> Result<Vec<ReviewDoc>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        docs.push(parse_review(&line, i + 1, categories)?);
    }
    Ok(docs)
}

/// Parses and validates one corpus line (`line_no` is 1-based, for errors).
pub fn parse_review(line: &str, line_no: usize, categories: &[String]) -> Result<ReviewDoc> {
    let raw: RawReview = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let invalid = |field: String, message: String| Error::Validation {
        line: line_no,
        field,
        message,
    };
    if raw.sentences.is_empty() {
        return Err(invalid("sentences".into(), "a review needs at least one sentence".into()));
    }
    let mut sentences = Vec::with_capacity(raw.sentences.len());
    for (si, s) in raw.sentences.into_iter().enumerate() {
        let n = s.tokens.len();
        if n == 0 {
            return Err(invalid(format!("sentences[{si}].tokens"), "empty sentence".into()));
        }
        let mut dep_edges = Vec::with_capacity(s.dep_edges.len());
        for (ei, [h, d]) in s.dep_edges.into_iter().enumerate() {
            if h >= n || d >= n {
                return Err(invalid(
                    format!("sentences[{si}].dep_edges[{ei}]"),
                    format!("edge ({h}, {d}) out of range for {n} tokens"),
                ));
            }
            dep_edges.push((h, d));
        }
        let mut labels = Vec::with_capacity(s.labels.len());
        for (li, l) in s.labels.into_iter().enumerate() {
            let c = categories.iter().position(|c| *c == l.category).ok_or_else(|| {
                invalid(
                    format!("sentences[{si}].labels[{li}].category"),
                    format!("unknown category {:?}", l.category),
                )
            })?;
            let p = l.polarity.parse::<Polarity>().map_err(|m| {
                invalid(format!("sentences[{si}].labels[{li}].polarity"), m)
            })?;
            if labels.iter().any(|&(seen, _)| seen == c) {
                return Err(invalid(
                    format!("sentences[{si}].labels[{li}].category"),
                    format!("category {:?} labelled twice", l.category),
                ));
            }
            labels.push((c, p));
        }
        sentences.push(SentenceRec {
            tokens: s.tokens,
            dep_edges,
            labels,
        });
    }
    Ok(ReviewDoc {
        review_id: raw.review_id,
        sentences,
    })
}

fn to_raw(doc: &ReviewDoc, categories: &[String]) -> RawReview {
    RawReview {
        review_id: doc.review_id.clone(),
        sentences: doc
            .sentences
            .iter()
            .map(|s| RawSentence {
                tokens: s.tokens.clone(),
                dep_edges: s.dep_edges.iter().map(|&(h, d)| [h, d]).collect(),
                labels: s
                    .labels
                    .iter()
                    .map(|&(c, p)| RawLabel {
                        category: categories[c].clone(),
                        polarity: p.as_str().to_string(),
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// Writes documents in the JSONL corpus format.
pub fn write_corpus(path: impl AsRef<Path>, docs: &[ReviewDoc], categories: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for doc in docs {
        serde_json::to_writer(&mut out, &to_raw(doc, categories)).expect("in-memory write");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Model input for a whole review: `s₁ [SEP] … s_I [SEP] [CLS]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedDoc {
    pub ids: Vec<usize>,
    /// Token positions of each sentence, separators excluded.
    pub spans: Vec<Range<usize>>,
    pub sep_positions: Vec<usize>,
}

impl EncodedDoc {
    pub fn cls_position(&self) -> usize {
        self.ids.len() - 1
    }
}

pub fn encode_input(doc: &ReviewDoc, vocab: &Vocab) -> EncodedDoc {
    let mut ids = Vec::new();
    let mut spans = Vec::with_capacity(doc.sentences.len());
    let mut sep_positions = Vec::with_capacity(doc.sentences.len());
    for s in &doc.sentences {
        let start = ids.len();
        ids.extend(s.tokens.iter().map(|t| vocab.id(t)));
        spans.push(start..ids.len());
        sep_positions.push(ids.len());
        ids.push(SEP);
    }
    ids.push(CLS);
    EncodedDoc {
        ids,
        spans,
        sep_positions,
    }
}

/// Per-sentence input `s_i [SEP] [CLS]`.
pub fn encode_sentence(sentence: &SentenceRec, vocab: &Vocab) -> Vec<usize> {
    let mut ids: Vec<usize> = sentence.tokens.iter().map(|t| vocab.id(t)).collect();
    ids.push(SEP);
    ids.push(CLS);
    ids
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cats() -> Vec<String> {
        ["food", "service"].iter().map(|s| s.to_string()).collect()
    }

    const GOOD: &str = r#"{"review_id":"r1","sentences":[{"tokens":["the","food","was","good"],"dep_edges":[[3,1],[1,0],[3,2]],"labels":[{"category":"food","polarity":"positive"}]},{"tokens":["slow","staff"],"dep_edges":[[1,0]],"labels":[]}]}"#;

    #[test]
    fn well_formed_record() {
        let doc = parse_review(GOOD, 1, &cats()).unwrap();
        assert_eq!(doc.num_sentences(), 2);
        assert_eq!(doc.sentences[0].labels, vec![(0, Polarity::Positive)]);
        assert_eq!(doc.sentences[0].dep_edges[0], (3, 1));
    }

    #[test]
    fn unknown_polarity_names_field() {
        let line = GOOD.replace("positive", "mixed");
        let err = parse_review(&line, 7, &cats()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 7"), "{msg}");
        assert!(msg.contains("polarity"), "{msg}");
    }

    #[test]
    fn unknown_category_is_rejected() {
        let line = GOOD.replace("\"food\",\"polarity\"", "\"price\",\"polarity\"");
        let err = parse_review(&line, 1, &cats()).unwrap_err();
        assert!(err.to_string().contains("unknown category"), "{err}");
    }

    #[test]
    fn edge_out_of_range() {
        let line = GOOD.replace("[[3,1],", "[[5,0],");
        let err = parse_review(&line, 1, &cats()).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }));
        assert!(err.to_string().contains("(5, 0)"), "{err}");
    }

    #[test]
    fn duplicate_category_is_rejected() {
        let line = GOOD.replace(
            r#"[{"category":"food","polarity":"positive"}]"#,
            r#"[{"category":"food","polarity":"positive"},{"category":"food","polarity":"negative"}]"#,
        );
        assert!(parse_review(&line, 1, &cats()).is_err());
    }

    #[test]
    fn malformed_json_reports_line() {
        let err = parse_review("{not json", 12, &cats()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 12, .. }));
    }

    #[test]
    fn encode_layout() {
        let doc = ReviewDoc {
            review_id: "x".into(),
            sentences: vec![
                SentenceRec {
                    tokens: vec!["a".into(), "b".into()],
                    dep_edges: vec![],
                    labels: vec![],
                },
                SentenceRec {
                    tokens: vec!["c".into()],
                    dep_edges: vec![],
                    labels: vec![],
                },
            ],
        };
        let vocab = build_vocab(std::slice::from_ref(&doc), 1, cats()).unwrap();
        let enc = encode_input(&doc, &vocab);
        let (a, b, c) = (vocab.id("a"), vocab.id("b"), vocab.id("c"));
        assert_eq!(enc.ids, vec![a, b, SEP, c, SEP, CLS]);
        assert_eq!(enc.spans, vec![0..2, 3..4]);
        assert_eq!(enc.sep_positions, vec![2, 4]);
        assert_eq!(encode_sentence(&doc.sentences[1], &vocab), vec![c, SEP, CLS]);

        let single = doc.permuted(&[1]);
        let enc = encode_input(&single, &vocab);
        assert_eq!(enc.ids.iter().filter(|&&i| i == SEP).count(), 1);
        assert_eq!(enc.ids, vec![c, SEP, CLS]);
    }
}
