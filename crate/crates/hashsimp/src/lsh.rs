//! Locality-sensitive hashing of prediction vectors.
//!
//! A fixed set of random hyperplanes turns a vector into a key of projection
//! signs: bit j is 1 exactly when the j-th projection is strictly positive.
//! Vectors at a small angle agree on most bits, and the expected per-bit
//! agreement of two vectors is `1 - angle/pi`. The key is scale-invariant
//! for positive scaling, and the zero vector maps to the all-zero key.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LshError {
    #[error("prediction vector contains non-finite values")]
    NonFinite,
    #[error("prediction vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Projection signs of one vector; used as a hash-table key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HashKey {
    blocks: Vec<u64>,
    bits: usize,
}

impl HashKey {
    fn zeroed(bits: usize) -> HashKey {
        HashKey {
            blocks: vec![0; bits.div_ceil(64)],
            bits,
        }
    }

    fn set(&mut self, j: usize) {
        self.blocks[j / 64] |= 1 << (j % 64);
    }

    pub fn bit(&self, j: usize) -> bool {
        assert!(j < self.bits, "bit index out of range");
        self.blocks[j / 64] >> (j % 64) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.bits
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.iter().all(|&b| b == 0)
    }

    pub fn matching_bits(&self, other: &HashKey) -> usize {
        assert_eq!(self.bits, other.bits, "keys of different widths");
        self.bits
            - self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| (a ^ b).count_ones() as usize)
                .sum::<usize>()
    }

    pub fn to_bit_string(&self) -> String {
        (0..self.bits)
            .map(|j| if self.bit(j) { '1' } else { '0' })
            .collect()
    }

    /// First `n` bits followed by `...`, or the full string when `n` covers
    /// the key.
    pub fn truncated_bit_string(&self, n: usize) -> String {
        if n >= self.bits {
            self.to_bit_string()
        } else {
            let mut s: String = (0..n)
                .map(|j| if self.bit(j) { '1' } else { '0' })
                .collect();
            s.push_str("...");
            s
        }
    }
}

impl fmt::Display for HashKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bit_string())
    }
}

/// `bits` hyperplanes in dimension `dim` with standard-normal coordinates,
/// reproducible from the seed.
#[derive(Debug, Clone)]
pub struct HyperplaneSet {
    rows: Vec<Vec<f64>>,
    seed: u64,
    bits: usize,
    dim: usize,
}

impl HyperplaneSet {
    pub fn new(seed: u64, bits: usize, dim: usize) -> HyperplaneSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..bits)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        HyperplaneSet {
            rows,
            seed,
            bits,
            dim,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The key every all-zero vector maps to: no projection is positive, so
    /// no bit is set.
    pub fn zero_key(&self) -> HashKey {
        HashKey::zeroed(self.bits)
    }

    /// Sign key of a finite vector: bit j set iff row j's dot product is
    /// strictly positive, so a zero projection contributes a 0 bit.
    pub fn hash(&self, pred: &[f64]) -> Result<HashKey, LshError> {
        if pred.len() != self.dim {
            return Err(LshError::DimensionMismatch {
                expected: self.dim,
                got: pred.len(),
            });
        }
        if !pred.iter().all(|v| v.is_finite()) {
            return Err(LshError::NonFinite);
        }
        let mut key = HashKey::zeroed(self.bits);
        for (j, row) in self.rows.iter().enumerate() {
            let q: f64 = row.iter().zip(pred).map(|(a, b)| a * b).sum();
            if q > 0.0 {
                key.set(j);
            }
        }
        Ok(key)
    }
}

/// Mean squared difference between two equal-length vectors; the bucket
/// distance metric.
pub fn mean_squared_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    sum / a.len() as f64
}

/// Hash index over prediction vectors. Each occupied key remembers the first
/// vector indexed under it; queries report the distance to that
/// representative.
#[derive(Debug, Clone)]
pub struct LshIndex {
    planes: HyperplaneSet,
    representatives: HashMap<HashKey, Vec<f64>>,
}

impl LshIndex {
    pub fn new(seed: u64, bits: usize, dim: usize) -> LshIndex {
        LshIndex::with_planes(HyperplaneSet::new(seed, bits, dim))
    }

    pub fn with_planes(planes: HyperplaneSet) -> LshIndex {
        LshIndex {
            planes,
            representatives: HashMap::new(),
        }
    }

    pub fn planes(&self) -> &HyperplaneSet {
        &self.planes
    }

    pub fn bits(&self) -> usize {
        self.planes.bits()
    }

    pub fn dim(&self) -> usize {
        self.planes.dim()
    }

    /// Number of occupied keys.
    pub fn len(&self) -> usize {
        self.representatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.representatives.is_empty()
    }

    pub fn hash(&self, pred: &[f64]) -> Result<HashKey, LshError> {
        self.planes.hash(pred)
    }

    /// Hashes the vector and stores it as its key's representative unless
    /// the key is already occupied.
    pub fn index(&mut self, pred: &[f64]) -> Result<HashKey, LshError> {
        let key = self.planes.hash(pred)?;
        self.representatives
            .entry(key.clone())
            .or_insert_with(|| pred.to_vec());
        Ok(key)
    }

    /// Key plus mean squared distance to the key's representative; infinity
    /// when the key is unoccupied.
    pub fn query(&self, pred: &[f64]) -> Result<(HashKey, f64), LshError> {
        let key = self.planes.hash(pred)?;
        let distance = self
            .representatives
            .get(&key)
            .map_or(f64::INFINITY, |rep| mean_squared_diff(pred, rep));
        Ok((key, distance))
    }

    pub fn representative(&self, key: &HashKey) -> Option<&[f64]> {
        self.representatives.get(key).map(Vec::as_slice)
    }
}

/// Fraction of matching bits between the keys of `x` and `y` over `trials`
/// independently seeded hyperplane sets. With enough bits this approaches
/// `1 - angle(x, y)/pi`. Both vectors must be finite.
pub fn collision_probability_estimate(
    x: &[f64],
    y: &[f64],
    bits: usize,
    trials: usize,
    seed: u64,
) -> f64 {
    assert_eq!(x.len(), y.len(), "length mismatch");
    assert!(bits > 0 && trials > 0);
    let mut matching = 0usize;
    for t in 0..trials {
        let planes = HyperplaneSet::new(seed.wrapping_add(t as u64), bits, x.len());
        let hx = planes.hash(x).expect("finite input");
        let hy = planes.hash(y).expect("finite input");
        matching += hx.matching_bits(&hy);
    }
    matching as f64 / (bits * trials) as f64
}
