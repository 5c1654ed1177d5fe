use std::collections::HashMap;

use super::ReviewDoc;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SEP: usize = 2;
pub const CLS: usize = 3;

const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[SEP]", "[CLS]"];

/// Surface tokens that collide with a reserved symbol get a leading
/// backslash, as do tokens that already start with one, so the escaping is
/// injective.
pub fn escape_token(token: &str) -> String {
    if RESERVED.contains(&token) || token.starts_with('\\') {
        format!("\\{token}")
    } else {
        token.to_string()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    categories: Vec<String>,
}

impl Vocab {
    /// Rebuilds a vocabulary from its id-ordered token list (as stored in a
    /// checkpoint). The first four entries must be the reserved symbols.
    pub fn from_parts(tokens: Vec<String>, categories: Vec<String>) -> Result<Vocab> {
        if tokens.len() < RESERVED.len() || tokens[..4] != RESERVED {
            return Err(Error::Checkpoint("vocabulary lacks reserved tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Checkpoint(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Vocab {
            tokens,
            index,
            categories,
        })
    }

    /// Id of a surface token; unknown tokens map to `[UNK]`.
    pub fn id(&self, surface: &str) -> usize {
        self.index.get(&escape_token(surface)).copied().unwrap_or(UNK)
    }

    /// The stored (escaped) form of an id.
    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn category_id(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }
}

/// Builds the vocabulary from training documents. Tokens seen fewer than
/// `min_count` times are left out (and so map to `[UNK]`); the rest receive
/// ids in order of first appearance.
pub fn build_vocab(docs: &[ReviewDoc], min_count: usize, categories: Vec<String>) -> Result<Vocab> {
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut order: Vec<String> = Vec::new();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in docs.iter().flat_map(|d| &d.sentences) {
        for t in &s.tokens {
            let key = escape_token(t);
            let c = counts.entry(key.clone()).or_insert(0);
            if *c == 0 {
                order.push(key);
            }
            *c += 1;
        }
    }
    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(order.into_iter().filter(|t| counts[t] >= min_count));
    Vocab::from_parts(tokens, categories)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SentenceRec;

    fn doc(tokens: &[&str]) -> ReviewDoc {
        ReviewDoc {
            review_id: "d".into(),
            sentences: vec![SentenceRec {
                tokens: tokens.iter().map(|s| s.to_string()).collect(),
                dep_edges: vec![],
                labels: vec![],
            }],
        }
    }

    #[test]
    fn reserved_plus_seen() {
        let v = build_vocab(&[doc(&["a", "b", "a"])], 1, vec![]).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
        assert_eq!(v.id("zzz"), UNK);
    }

    #[test]
    fn rare_tokens_become_unknown() {
        let v = build_vocab(&[doc(&["a", "b", "a"])], 2, vec![]).unwrap();
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), UNK);
    }

    #[test]
    fn reserved_surface_forms_are_escaped() {
        let v = build_vocab(&[doc(&["[SEP]", "\\x", "[CLS]"])], 1, vec![]).unwrap();
        assert_ne!(v.id("[SEP]"), SEP);
        assert_ne!(v.id("[CLS]"), CLS);
        assert_eq!(v.token(v.id("[SEP]")), "\\[SEP]");
        assert_eq!(v.token(v.id("\\x")), "\\\\x");
        assert_eq!(v.token(SEP), "[SEP]");
        assert_eq!(v.len(), 7);
    }

    #[test]
    fn empty_corpus_and_zero_min_count() {
        assert!(matches!(build_vocab(&[], 1, vec![]), Err(Error::EmptyCorpus)));
        assert!(build_vocab(&[doc(&["a"])], 0, vec![]).is_err());
    }
}
