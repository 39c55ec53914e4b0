//! Attention masks for drafting, verification and cache passes.
//!
//! Entry `(r, c) = true` means query row `r` may attend to key column `c`.
//! Only in-block structure is represented: every in-block query also sees the
//! whole committed prefix, which is never materialized here.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Which attention layout the verifier uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VerifierView {
    /// Drafted span followed by a MASK copy, `2L` rows.
    #[default]
    PositionAligned,
    /// Logits at row `k` predict position `k + 1`; plain causal mask.
    RightShifted,
}

/// Square boolean attention mask, stored row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct AttnMask {
    n: usize,
    bits: Vec<bool>,
}

impl AttnMask {
    fn filled(n: usize, value: bool) -> Self {
        assert!(n >= 1, "mask dimension must be positive");
        Self { n, bits: vec![value; n * n] }
    }

    /// Builds a mask from explicit 0/1 rows. Panics on ragged input.
    pub fn from_rows(rows: &[&[u8]]) -> Self {
        let n = rows.len();
        let mut m = Self::filled(n, false);
        for (r, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "row {r} has wrong length");
            for (c, &v) in row.iter().enumerate() {
                m.set(r, c, v != 0);
            }
        }
        m
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.n + c]
    }

    #[inline]
    fn set(&mut self, r: usize, c: usize, v: bool) {
        self.bits[r * self.n + c] = v;
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.bits[r * self.n..(r + 1) * self.n]
    }

    /// Key columns visible to row `r`.
    pub fn visible(&self, r: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(r).iter().enumerate().filter(|(_, &b)| b).map(|(c, _)| c)
    }

    pub fn rows_nonempty(&self) -> bool {
        (0..self.n).all(|r| self.row(r).iter().any(|&b| b))
    }

    /// Row-major bit string with rows separated by `/`, e.g. `10/11`.
    pub fn to_bit_string(&self) -> String {
        let mut s = String::with_capacity(self.n * (self.n + 1));
        for r in 0..self.n {
            if r > 0 {
                s.push('/');
            }
            s.extend(self.row(r).iter().map(|&b| if b { '1' } else { '0' }));
        }
        s
    }
}

impl fmt::Debug for AttnMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AttnMask({})", self.to_bit_string())
    }
}

/// Lower-triangular mask including the diagonal.
pub fn causal_mask(n: usize) -> AttnMask {
    let mut m = AttnMask::filled(n, false);
    for r in 0..n {
        for c in 0..=r {
            m.set(r, c, true);
        }
    }
    m
}

/// Bidirectional within-block mask.
pub fn block_full_mask(b: usize) -> AttnMask {
    AttnMask::filled(b, true)
}

/// Verification mask for a drafted span of length `l`.
///
/// Rows `0..l` are the drafted tokens under a causal mask. Rows `l..2l` are
/// the MASK copies: row `l + i` sees drafted tokens `0..i` and itself, never
/// drafted position `i`.
pub fn verifier_mask(l: usize) -> AttnMask {
    let mut m = AttnMask::filled(2 * l, false);
    for r in 0..l {
        for c in 0..=r {
            m.set(r, c, true);
        }
        for c in 0..r {
            m.set(l + r, c, true);
        }
        m.set(l + r, l + r, true);
    }
    m
}

/// Partially causal drafting mask: causal over the committed positions
/// `0..j`, full attention for rows `j..b`.
pub fn draft_mask(b: usize, j: usize) -> AttnMask {
    assert!(j <= b, "first masked position {j} exceeds block size {b}");
    let mut m = AttnMask::filled(b, false);
    for r in 0..b {
        if r < j {
            for c in 0..=r {
                m.set(r, c, true);
            }
        } else {
            for c in 0..b {
                m.set(r, c, true);
            }
        }
    }
    m
}

/// Mask used for a verification forward over a span of length `l`.
pub fn verification_mask(view: VerifierView, l: usize) -> AttnMask {
    match view {
        VerifierView::PositionAligned => verifier_mask(l),
        VerifierView::RightShifted => causal_mask(l),
    }
}
