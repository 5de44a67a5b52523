//! The factorized state space `[S]^d`.
//!
//! States are token vectors of length `d` over a vocabulary of `S` tokens,
//! addressed by a mixed-radix index with position 0 as the least
//! significant digit. Tokens and positions are zero-based. In masked mode
//! one token is reserved as the mask, by default the last one (`S - 1`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default upper bound on `S^d`.
pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

/// Mixed-radix index of a state in `[0, S^d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateIndex(usize);

impl StateIndex {
    #[inline]
    pub fn get(self) -> usize {
        self.0
    }
}

impl From<StateIndex> for usize {
    fn from(x: StateIndex) -> usize {
        x.0
    }
}

/// A Hamming-1 neighbour: `state` equals the origin with `position` set to `token`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub position: usize,
    pub token: usize,
    pub state: StateIndex,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceSpace {
    vocab_size: usize,
    seq_len: usize,
    mask_token: Option<usize>,
    state_count: usize,
    strides: Vec<usize>,
}

impl SequenceSpace {
    /// Space without a mask token (uniform mode).
    pub fn new(vocab_size: usize, seq_len: usize) -> Result<Self> {
        Self::with_options(vocab_size, seq_len, None, DEFAULT_ENUMERATION_CAP)
    }

    /// Space whose last token `S - 1` is the mask.
    pub fn masked(vocab_size: usize, seq_len: usize) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::domain("masked mode needs at least one non-mask token"));
        }
        Self::with_options(vocab_size, seq_len, Some(vocab_size - 1), DEFAULT_ENUMERATION_CAP)
    }

    pub fn with_options(
        vocab_size: usize,
        seq_len: usize,
        mask_token: Option<usize>,
        cap: usize,
    ) -> Result<Self> {
        if vocab_size == 0 || seq_len == 0 {
            return Err(Error::domain("vocab_size and seq_len must be positive"));
        }
        if let Some(m) = mask_token {
            if m >= vocab_size {
                return Err(Error::domain(format!(
                    "mask token {m} outside vocabulary of size {vocab_size}"
                )));
            }
        }
        let mut strides = Vec::with_capacity(seq_len);
        let mut count: usize = 1;
        for _ in 0..seq_len {
            strides.push(count);
            count = count
                .checked_mul(vocab_size)
                .filter(|&c| c <= cap)
                .ok_or_else(|| {
                    Error::Capacity(format!(
                        "{vocab_size}^{seq_len} states exceed the enumeration cap {cap}"
                    ))
                })?;
        }
        Ok(Self {
            vocab_size,
            seq_len,
            mask_token,
            state_count: count,
            strides,
        })
    }

    #[inline]
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    #[inline]
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    #[inline]
    pub fn mask_token(&self) -> Option<usize> {
        self.mask_token
    }

    #[inline]
    pub fn state_count(&self) -> usize {
        self.state_count
    }

    #[inline]
    pub fn stride(&self, position: usize) -> usize {
        self.strides[position]
    }

    pub fn index(&self, raw: usize) -> Result<StateIndex> {
        if raw < self.state_count {
            Ok(StateIndex(raw))
        } else {
            Err(Error::domain(format!(
                "index {raw} outside [0, {})",
                self.state_count
            )))
        }
    }

    pub fn states(&self) -> impl Iterator<Item = StateIndex> {
        (0..self.state_count).map(StateIndex)
    }

    pub fn encode(&self, tokens: &[usize]) -> Result<StateIndex> {
        if tokens.len() != self.seq_len {
            return Err(Error::domain(format!(
                "state has length {}, expected {}",
                tokens.len(),
                self.seq_len
            )));
        }
        let mut idx = 0;
        for (pos, &tok) in tokens.iter().enumerate() {
            if tok >= self.vocab_size {
                return Err(Error::domain(format!(
                    "token {tok} at position {pos} outside vocabulary of size {}",
                    self.vocab_size
                )));
            }
            idx += tok * self.strides[pos];
        }
        Ok(StateIndex(idx))
    }

    pub fn decode(&self, x: StateIndex) -> Vec<usize> {
        (0..self.seq_len).map(|pos| self.token(x, pos)).collect()
    }

    #[inline]
    pub fn token(&self, x: StateIndex, position: usize) -> usize {
        (x.0 / self.strides[position]) % self.vocab_size
    }

    /// `x` with `position` replaced by `token`.
    #[inline]
    pub fn replace(&self, x: StateIndex, position: usize, token: usize) -> StateIndex {
        let stride = self.strides[position];
        let current = (x.0 / stride) % self.vocab_size;
        StateIndex(x.0 - current * stride + token * stride)
    }

    pub fn hamming(&self, x: StateIndex, y: StateIndex) -> usize {
        (0..self.seq_len)
            .filter(|&pos| self.token(x, pos) != self.token(y, pos))
            .count()
    }

    /// All `d (S - 1)` states at Hamming distance one, ordered by position then token.
    pub fn hamming_neighbors(&self, x: StateIndex) -> Vec<Neighbor> {
        let mut out = Vec::with_capacity(self.seq_len * (self.vocab_size - 1));
        for position in 0..self.seq_len {
            let current = self.token(x, position);
            for token in (0..self.vocab_size).filter(|&t| t != current) {
                out.push(Neighbor {
                    position,
                    token,
                    state: self.replace(x, position, token),
                });
            }
        }
        out
    }

    /// States `y` can move to under the masked forward dynamics: one
    /// non-mask position of `y` replaced by the mask.
    pub fn successor_set(&self, y: StateIndex) -> Result<Vec<StateIndex>> {
        let m = self
            .mask_token
            .ok_or_else(|| Error::mode("successor sets are defined in masked mode only"))?;
        Ok((0..self.seq_len)
            .filter(|&pos| self.token(y, pos) != m)
            .map(|pos| self.replace(y, pos, m))
            .collect())
    }

    /// The all-mask sequence, when a mask token exists.
    pub fn all_mask(&self) -> Option<StateIndex> {
        self.mask_token
            .map(|m| StateIndex(self.strides.iter().map(|s| s * m).sum()))
    }

    pub fn contains_mask(&self, x: StateIndex) -> bool {
        match self.mask_token {
            Some(m) => (0..self.seq_len).any(|pos| self.token(x, pos) == m),
            None => false,
        }
    }

    pub fn mask_count(&self, x: StateIndex) -> usize {
        match self.mask_token {
            Some(m) => (0..self.seq_len).filter(|&pos| self.token(x, pos) == m).count(),
            None => 0,
        }
    }
}
