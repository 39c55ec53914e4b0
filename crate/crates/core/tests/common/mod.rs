#![allow(dead_code)]

use blockspec::{Dist, ForwardInput, Model, Result, TokenId, Vocab};

/// Returns the same distribution for every query row, chosen by a callback
/// on the absolute query position and mode.
pub struct Scripted<G> {
    pub vocab: Vocab,
    pub dist: G,
}

impl<G> Model<f64> for Scripted<G>
where
    G: Fn(usize, blockspec::ForwardMode) -> Dist<f64>,
{
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn forward(&self, input: &ForwardInput<'_>) -> Result<Vec<Dist<f64>>> {
        Ok(input
            .queries
            .iter()
            .map(|&q| (self.dist)(input.key_positions[q] + usize::from(input.shifted), input.mode))
            .collect())
    }
}

/// Peaked distribution on `tok` with the rest spread over ordinary tokens.
pub fn peaked(vocab: &Vocab, tok: u32, mass: f64) -> Dist<f64> {
    let ordinary: Vec<usize> =
        (0..vocab.size()).filter(|&v| TokenId(v as u32) != vocab.mask() && TokenId(v as u32) != vocab.eos()).collect();
    let rest = (1.0 - mass) / (ordinary.len() - 1) as f64;
    let mut w = vec![0.0; vocab.size()];
    for &v in &ordinary {
        w[v] = if v == tok as usize { mass } else { rest };
    }
    blockspec::normalize_dist(&w).unwrap()
}

pub fn prompt(ids: &[u32]) -> Vec<TokenId> {
    ids.iter().map(|&i| TokenId(i)).collect()
}
