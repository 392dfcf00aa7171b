use std::collections::BTreeMap;

use crate::corpus::{Passage, Vocabulary};

/// Average conditional next-token entropy (nats) of the corpus viewed as an
/// empirical distribution over sequences, conditioning on the exact prefix.
/// This is the lowest mean loss any model can reach on it.
pub fn estimate_entropy_floor(corpus: &[Passage], vocab: &Vocabulary) -> f64 {
    let seqs: Vec<Vec<u32>> = corpus.iter().map(|p| vocab.encode_sequence(&p.text)).collect();
    entropy_floor_of(&seqs)
}

pub fn entropy_floor_of(seqs: &[Vec<u32>]) -> f64 {
    // Prefix trie; node 0 is the empty prefix.
    let mut children: Vec<BTreeMap<u32, (usize, u64)>> = vec![BTreeMap::new()];
    let mut predicted = 0u64;
    for seq in seqs {
        let mut node = 0;
        for &t in seq {
            let next = children.len();
            let entry = children[node].entry(t).or_insert((next, 0));
            entry.1 += 1;
            let child = entry.0;
            if child == next {
                children.push(BTreeMap::new());
            }
            node = child;
        }
        predicted += seq.len().saturating_sub(1) as u64;
    }
    if predicted == 0 {
        return 0.0;
    }
    // The first token of each sequence is not predicted, so the root's
    // branching is skipped.
    let mut total = 0.0;
    for kids in &children[1..] {
        let n: u64 = kids.values().map(|&(_, c)| c).sum();
        for &(_, c) in kids.values() {
            total -= c as f64 * (c as f64 / n as f64).ln();
        }
    }
    total / predicted as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_passage_is_zero() {
        assert_eq!(entropy_floor_of(&[vec![1, 5, 6, 7, 2]]), 0.0);
        assert_eq!(entropy_floor_of(&[vec![1, 5, 6, 2], vec![1, 5, 6, 2]]), 0.0);
    }

    #[test]
    fn two_way_branch() {
        // BOS A B EOS / BOS A C EOS: three predicted positions each, only
        // the third token branches.
        let h = entropy_floor_of(&[vec![1, 10, 11, 2], vec![1, 10, 12, 2]]);
        let expect = (2.0 * 2f64.ln()) / 6.0;
        assert!((h - expect).abs() < 1e-12);
    }

    #[test]
    fn empty_is_zero() {
        assert_eq!(entropy_floor_of(&[]), 0.0);
        assert_eq!(entropy_floor_of(&[vec![1]]), 0.0);
    }

    #[test]
    fn matches_brute_force_counts() {
        let seqs = vec![
            vec![1, 3, 4, 2],
            vec![1, 3, 5, 2],
            vec![1, 3, 4, 2],
            vec![1, 6, 2],
            vec![1, 3, 4, 7, 2],
        ];
        // Oracle: -mean log of the empirical conditional probability.
        let mut nll = 0.0;
        let mut n = 0.0;
        for s in &seqs {
            for t in 1..s.len() {
                let prefix = &s[..t];
                let with_prefix = seqs.iter().filter(|o| o.len() > t && &o[..t] == prefix);
                let total = with_prefix.clone().count() as f64;
                let hit = with_prefix.filter(|o| o[t] == s[t]).count() as f64;
                nll -= (hit / total).ln();
                n += 1.0;
            }
        }
        assert!((entropy_floor_of(&seqs) - nll / n).abs() < 1e-12);
    }
}
