//! Small deterministic graphs for tests, examples and smoke runs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::kg_data::{KnowledgeGraph, Triple, Vocab};

/// Relation ids of [`relational_ring`].
pub const RING: usize = 0;
pub const RING_INVERSE: usize = 1;
pub const GROUP: usize = 2;
pub const PAIR: usize = 3;

/// All facts over `n` entities (`n` a multiple of 4):
///
/// - `ring`: `i -> i+1 mod n`
/// - `ring_inverse`: `i+1 -> i`
/// - `group`: `i -> 4*(i/4)`, four members onto their leader (4-to-1)
/// - `pair`: `i <-> i^1` in both directions
pub fn relational_facts(n: usize) -> Vec<Triple> {
    assert!(n >= 4 && n % 4 == 0, "entity count must be a positive multiple of 4");
    let mut facts = Vec::new();
    for i in 0..n {
        facts.push(Triple::new(i, RING, (i + 1) % n));
        facts.push(Triple::new((i + 1) % n, RING_INVERSE, i));
        facts.push(Triple::new(i, GROUP, 4 * (i / 4)));
        facts.push(Triple::new(i, PAIR, i ^ 1));
    }
    facts
}

/// [`relational_facts`] shuffled with `seed` and split into train / valid /
/// test, holding out `holdout` of the facts for each evaluation split.
pub fn relational_ring(n: usize, holdout: f64, seed: u64) -> Result<KnowledgeGraph> {
    let mut facts = relational_facts(n);
    facts.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ((facts.len() as f64) * holdout).round() as usize;
    let test = facts.split_off(facts.len() - held);
    let valid = facts.split_off(facts.len() - held);
    let entities = Vocab::from_names((0..n).map(|i| format!("node{i}")));
    let relations = Vocab::from_names(["ring", "ring_inverse", "group", "pair"]);
    KnowledgeGraph::new(entities, relations, facts, valid, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg_data::{classify_relations, Category};

    #[test]
    fn structure_and_categories() {
        let facts = relational_facts(100);
        assert_eq!(facts.len(), 400);
        let cats = classify_relations(&facts, 1.5).unwrap();
        assert_eq!(cats[&RING].category, Category::OneToOne);
        assert_eq!(cats[&PAIR].category, Category::OneToOne);
        assert_eq!(cats[&GROUP].category, Category::NToOne);
        assert_eq!(cats[&GROUP].hco, 4.0);
    }

    #[test]
    fn split_is_deterministic() {
        let a = relational_ring(20, 0.1, 3).unwrap();
        let b = relational_ring(20, 0.1, 3).unwrap();
        assert_eq!(a.test, b.test);
        assert_eq!(a.train.len() + a.valid.len() + a.test.len(), relational_facts(20).len());
    }
}
