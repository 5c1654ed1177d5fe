//! Seeded generator of small restaurant-style review corpora.
//!
//! Each sentence opens with a discourse marker fixed by its position in the
//! review (`first`, `then`, `also`, `next`, `finally`), so shuffling the
//! sentences leaves a detectable trace. Aspect clauses pair a category noun
//! with an adjective whose polarity can depend on the category (`cheap` is
//! good for prices, bad for decor) and is flipped by `not`. Dependency edges
//! follow the clause structure.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Polarity, ReviewDoc, SentenceRec};

const CATEGORIES: [(&str, &[&str]); 6] = [
    ("food", &["pasta", "pizza", "soup"]),
    ("service", &["waiter", "staff", "host"]),
    ("price", &["price", "bill", "menu"]),
    ("ambience", &["decor", "music", "room"]),
    ("drinks", &["wine", "coffee", "beer"]),
    ("location", &["street", "parking", "view"]),
];

const POSITIVE: [&str; 3] = ["great", "lovely", "excellent"];
const NEGATIVE: [&str; 3] = ["awful", "terrible", "poor"];
const NEUTRAL: [&str; 2] = ["okay", "average"];

/// Category-dependent adjective: (word, category whose reading is positive,
/// category whose reading is negative).
const CONTEXTUAL: [(&str, usize, usize); 2] = [("cheap", 2, 3), ("quick", 1, 0)];

const FILLERS: [[&str; 4]; 3] = [
    ["we", "came", "on", "friday"],
    ["we", "sat", "by", "window"],
    ["my", "friend", "ordered", "twice"],
];

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub reviews: usize,
    pub categories: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Probability that a labelled sentence carries a second aspect clause.
    pub two_clause_prob: f64,
    pub negation_prob: f64,
    /// Probability that a sentence has no aspect at all.
    pub filler_prob: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            reviews: 32,
            categories: 4,
            min_sentences: 1,
            max_sentences: 4,
            two_clause_prob: 0.3,
            negation_prob: 0.2,
            filler_prob: 0.1,
            seed: 7,
        }
    }
}

/// Marker for sentence `k` of an `n`-sentence review.
pub fn position_marker(k: usize, n: usize) -> &'static str {
    const MIDDLE: [&str; 3] = ["then", "also", "next"];
    if n == 1 {
        "overall"
    } else if k == 0 {
        "first"
    } else if k + 1 == n {
        "finally"
    } else {
        MIDDLE[(k - 1) % MIDDLE.len()]
    }
}

pub fn category_names(count: usize) -> Vec<String> {
    assert!(
        (1..=CATEGORIES.len()).contains(&count),
        "synthetic corpora support 1..={} categories",
        CATEGORIES.len()
    );
    CATEGORIES[..count].iter().map(|(n, _)| n.to_string()).collect()
}

struct Builder {
    tokens: Vec<String>,
    edges: Vec<(usize, usize)>,
}

impl Builder {
    fn push(&mut self, t: &str) -> usize {
        self.tokens.push(t.to_string());
        self.tokens.len() - 1
    }
}

fn pick_adjective(rng: &mut ChaCha8Rng, category: usize, categories: usize) -> (&'static str, Polarity) {
    let contextual: Vec<_> = CONTEXTUAL
        .iter()
        .filter(|(_, p, n)| (*p == category || *n == category) && *p < categories && *n < categories)
        .collect();
    if !contextual.is_empty() && rng.gen_bool(0.25) {
        let (w, pos, _) = contextual[rng.gen_range(0..contextual.len())];
        let pol = if *pos == category {
            Polarity::Positive
        } else {
            Polarity::Negative
        };
        return (w, pol);
    }
    match rng.gen_range(0..5) {
        0 | 1 => (*POSITIVE.choose(rng).unwrap(), Polarity::Positive),
        2 | 3 => (*NEGATIVE.choose(rng).unwrap(), Polarity::Negative),
        _ => (*NEUTRAL.choose(rng).unwrap(), Polarity::Neutral),
    }
}

/// Appends `the NOUN was [not] ADJ`; returns the adjective position (clause
/// head) and the resulting polarity.
fn clause(
    b: &mut Builder,
    rng: &mut ChaCha8Rng,
    category: usize,
    opts: &SynthOptions,
) -> (usize, Polarity) {
    let noun = *CATEGORIES[category].1.choose(rng).unwrap();
    let (adj, mut pol) = pick_adjective(rng, category, opts.categories);
    let det = b.push("the");
    let n = b.push(noun);
    let cop = b.push("was");
    let neg = if pol != Polarity::Neutral && rng.gen_bool(opts.negation_prob) {
        pol = if pol == Polarity::Positive {
            Polarity::Negative
        } else {
            Polarity::Positive
        };
        Some(b.push("not"))
    } else {
        None
    };
    let a = b.push(adj);
    b.edges.extend([(n, det), (a, n), (a, cop)]);
    if let Some(neg) = neg {
        b.edges.push((a, neg));
    }
    (a, pol)
}

fn sentence(rng: &mut ChaCha8Rng, k: usize, n: usize, opts: &SynthOptions) -> SentenceRec {
    let mut b = Builder {
        tokens: Vec::new(),
        edges: Vec::new(),
    };
    let marker = b.push(position_marker(k, n));
    if rng.gen_bool(opts.filler_prob) {
        let words = FILLERS.choose(rng).unwrap();
        let base = b.tokens.len();
        for w in words {
            b.push(w);
        }
        // subject ← verb → preposition → object, marker on the verb
        b.edges.extend([(base + 1, base), (base + 1, base + 2), (base + 2, base + 3), (base + 1, marker)]);
        return SentenceRec {
            tokens: b.tokens,
            dep_edges: b.edges,
            labels: Vec::new(),
        };
    }
    let mut cats: Vec<usize> = (0..opts.categories).collect();
    cats.shuffle(rng);
    let clauses = if opts.categories > 1 && rng.gen_bool(opts.two_clause_prob) { 2 } else { 1 };
    let mut labels = Vec::new();
    let (root, pol) = clause(&mut b, rng, cats[0], opts);
    b.edges.push((root, marker));
    labels.push((cats[0], pol));
    if clauses == 2 {
        let and = b.push("and");
        let (head, pol) = clause(&mut b, rng, cats[1], opts);
        b.edges.extend([(head, and), (root, head)]);
        labels.push((cats[1], pol));
    }
    SentenceRec {
        tokens: b.tokens,
        dep_edges: b.edges,
        labels,
    }
}

/// Generates `opts.reviews` reviews; the same options always give the same
/// corpus.
pub fn generate(opts: &SynthOptions) -> (Vec<String>, Vec<ReviewDoc>) {
    assert!(opts.min_sentences >= 1 && opts.min_sentences <= opts.max_sentences);
    let categories = category_names(opts.categories);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let docs = (0..opts.reviews)
        .map(|r| {
            let n = rng.gen_range(opts.min_sentences..=opts.max_sentences);
            ReviewDoc {
                review_id: format!("syn-{r:04}"),
                sentences: (0..n).map(|k| sentence(&mut rng, k, n, opts)).collect(),
            }
        })
        .collect();
    (categories, docs)
}
