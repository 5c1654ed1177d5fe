use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::ReviewDoc;

fn is_identity(order: &[usize]) -> bool {
    order.iter().enumerate().all(|(i, &o)| i == o)
}

/// Number of non-identity permutations of `n` items, saturating.
fn non_identity_count(n: usize) -> usize {
    (2..=n).try_fold(1usize, |acc, k| acc.checked_mul(k)).map_or(usize::MAX, |f| f - 1)
}

/// `count` sentence orders of `n` sentences, none of them the identity.
/// Orders are distinct unless fewer than `count` non-identity permutations
/// exist, in which case they are drawn with replacement. Empty when `n < 2`.
pub fn sample_permutations<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Vec<Vec<usize>> {
    if n < 2 {
        return Vec::new();
    }
    let with_replacement = non_identity_count(n) < count;
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    let mut order: Vec<usize> = (0..n).collect();
    while out.len() < count {
        order.shuffle(rng);
        if is_identity(&order) {
            continue;
        }
        if !with_replacement && !seen.insert(order.clone()) {
            continue;
        }
        out.push(order.clone());
    }
    out
}

/// Shuffled copies of `doc` for the sentence-ordering objective.
/// A single-sentence review has no negatives.
pub fn make_negatives<R: Rng + ?Sized>(doc: &ReviewDoc, count: usize, rng: &mut R) -> Vec<ReviewDoc> {
    assert!(count >= 1, "negative count must be at least 1");
    sample_permutations(doc.num_sentences(), count, rng)
        .iter()
        .map(|order| doc.permuted(order))
        .collect()
}
