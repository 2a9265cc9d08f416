//! Sparse regression code (SPARC) encoding of B-bit messages.
//!
//! A message is cut into `J` sections of `L` bits; each section selects one
//! column out of a `2^L`-wide block of the shared dictionary `A`, and the
//! codeword is the sum of the `J` selected columns.

use std::collections::HashSet;
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Dimensions of a SPARC: codeword length `n`, `j_blocks` sections of
/// `l_bits` bits each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SparcParams {
    pub n: usize,
    pub j_blocks: usize,
    pub l_bits: usize,
}

impl SparcParams {
    pub fn new(n: usize, j_blocks: usize, l_bits: usize) -> Result<Self> {
        if n == 0 || j_blocks == 0 || l_bits == 0 {
            return Err(Error::InvalidParam(format!(
                "SPARC dimensions must be positive (n={n}, J={j_blocks}, L={l_bits})"
            )));
        }
        if l_bits >= usize::BITS as usize - 1 {
            return Err(Error::InvalidParam(format!("L={l_bits} too large")));
        }
        Ok(Self {
            n,
            j_blocks,
            l_bits,
        })
    }

    /// Size of one section, `2^L`.
    #[inline]
    pub fn section(&self) -> usize {
        1 << self.l_bits
    }

    /// Total dictionary width `J·2^L`.
    #[inline]
    pub fn width(&self) -> usize {
        self.j_blocks * self.section()
    }

    /// Payload size `B = J·L`.
    #[inline]
    pub fn payload_bits(&self) -> usize {
        self.j_blocks * self.l_bits
    }
}

/// A B-bit message, one `bool` per bit, most significant first within each
/// section.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MessageBits(pub Vec<bool>);

impl MessageBits {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn random<R: Rng + ?Sized>(b: usize, rng: &mut R) -> Self {
        Self((0..b).map(|_| rng.random::<bool>()).collect())
    }

    /// Parses a string of `0`/`1` characters.
    pub fn parse(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::InvalidParam(format!("non-binary character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

impl fmt::Display for MessageBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Per-section column indices, each in `[0, 2^L)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockIndices(pub Vec<usize>);

impl BlockIndices {
    pub fn validate(&self, l_bits: usize) -> Result<()> {
        match self.0.iter().find(|&&i| i >> l_bits != 0) {
            Some(&index) => Err(Error::IndexRange { index, l_bits }),
            None => Ok(()),
        }
    }
}

/// Splits `bits` into `j_blocks` big-endian `l_bits`-bit section indices.
pub fn split_message(bits: &MessageBits, j_blocks: usize, l_bits: usize) -> Result<BlockIndices> {
    check_dim("split_message", j_blocks * l_bits, bits.len())?;
    let idx = bits
        .0
        .chunks(l_bits.max(1))
        .take(j_blocks)
        .map(|chunk| chunk.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize))
        .collect();
    Ok(BlockIndices(idx))
}

/// Inverse of [`split_message`].
pub fn assemble_message(idx: &BlockIndices, l_bits: usize) -> Result<MessageBits> {
    idx.validate(l_bits)?;
    let mut bits = Vec::with_capacity(idx.0.len() * l_bits);
    for &i in &idx.0 {
        for shift in (0..l_bits).rev() {
            bits.push((i >> shift) & 1 == 1);
        }
    }
    Ok(MessageBits(bits))
}

/// One-hot block vector of length `J·2^L` with a 1 at `j·2^L + idx[j]`.
pub fn sparse_embed<T: Real>(idx: &BlockIndices, l_bits: usize) -> Result<Array1<T>> {
    idx.validate(l_bits)?;
    let section = 1usize << l_bits;
    let mut x = Array1::zeros(idx.0.len() * section);
    for (j, &i) in idx.0.iter().enumerate() {
        x[j * section + i] = T::one();
    }
    Ok(x)
}

/// Stacks the embeddings of several users as the columns of a
/// `(J·2^L)×K` matrix.
pub fn embed_users<T: Real>(users: &[BlockIndices], params: &SparcParams) -> Result<Array2<T>> {
    let mut x = Array2::zeros((params.width(), users.len()));
    for (k, idx) in users.iter().enumerate() {
        check_dim("embed_users", params.j_blocks, idx.0.len())?;
        x.column_mut(k).assign(&sparse_embed::<T>(idx, params.l_bits)?);
    }
    Ok(x)
}

/// Shared SPARC dictionary `A = (A_1 | … | A_J)`, entries i.i.d.
/// `N(0, 1/(N·J))` so codewords have unit average power.
#[derive(Debug, Clone)]
pub struct Codebook<T: Real> {
    a: Array2<T>,
    seed: u64,
    params: SparcParams,
    fro2: T,
}

impl<T: Real> Codebook<T> {
    /// Draws the dictionary from a ChaCha stream seeded with `seed`.
    pub fn build(seed: u64, params: SparcParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = (1.0 / (params.n * params.j_blocks) as f64).sqrt();
        let a = Array2::from_shape_simple_fn((params.n, params.width()), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::lit(z * std)
        });
        Self::from_matrix(a, seed, params).expect("shape built from params")
    }

    /// Wraps an explicit matrix; `seed` is recorded but not used.
    pub fn from_matrix(a: Array2<T>, seed: u64, params: SparcParams) -> Result<Self> {
        check_dim("codebook rows", params.n, a.nrows())?;
        check_dim("codebook columns", params.width(), a.ncols())?;
        let fro2 = a.iter().map(|&v| v * v).sum();
        Ok(Self {
            a,
            seed,
            params,
            fro2,
        })
    }

    pub fn matrix(&self) -> ArrayView2<'_, T> {
        self.a.view()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &SparcParams {
        &self.params
    }

    /// ‖A‖²_F, cached at construction.
    pub fn frobenius_sq(&self) -> T {
        self.fro2
    }

    /// Codeword `Σ_j A_j e_{idx[j]}` as a column-selection sum.
    pub fn encode(&self, idx: &BlockIndices) -> Result<Array1<T>> {
        check_dim("encode", self.params.j_blocks, idx.0.len())?;
        idx.validate(self.params.l_bits)?;
        let section = self.params.section();
        let mut r = Array1::zeros(self.params.n);
        for (j, &i) in idx.0.iter().enumerate() {
            r += &self.a.column(j * section + i);
        }
        Ok(r)
    }

    /// Codeword matrix `R = A X` for stacked embeddings.
    pub fn encode_matrix(&self, x: &Array2<T>) -> Result<Array2<T>> {
        check_dim("encode_matrix", self.params.width(), x.nrows())?;
        Ok(self.a.dot(x))
    }
}

/// Per-section argmax of a posterior-mean vector; ties go to the lowest index.
pub fn hard_decision<T: Real>(x_hat: ArrayView1<'_, T>, l_bits: usize) -> Result<BlockIndices> {
    let section = 1usize << l_bits;
    if x_hat.is_empty() || !x_hat.len().is_multiple_of(section) {
        return Err(Error::Dimension {
            context: "hard_decision",
            expected: section,
            actual: x_hat.len(),
        });
    }
    let idx = x_hat
        .exact_chunks(section)
        .into_iter()
        .map(|block| {
            let mut best = 0;
            for (i, &v) in block.iter().enumerate().skip(1) {
                if v > block[best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    Ok(BlockIndices(idx))
}

/// Hard decisions for every user column of a `(J·2^L)×K` estimate.
pub fn hard_decision_columns<T: Real>(x_hat: ArrayView2<'_, T>, l_bits: usize) -> Result<Vec<BlockIndices>> {
    x_hat
        .axis_iter(Axis(1))
        .map(|col| hard_decision(col, l_bits))
        .collect()
}

/// Fraction of sent messages missing from the decoded list, with the list
/// treated as a set.
pub fn per_user_error(sent: &[MessageBits], decoded: &[MessageBits]) -> f64 {
    if sent.is_empty() {
        return 0.0;
    }
    let list: HashSet<&MessageBits> = decoded.iter().collect();
    let misses = sent.iter().filter(|m| !list.contains(m)).count();
    misses as f64 / sent.len() as f64
}
