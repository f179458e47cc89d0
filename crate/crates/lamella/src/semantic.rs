//! Semantic labels, label sets, and probability simplices over them.
//!
//! Labels are dense small integers. The canonical character decomposition is
//! 0 = body, 1 = cloth, 2 = hair; a scene declares its own count `K`.

use crate::error::{Error, Result};

/// Hard cap on the number of semantic categories a scene may declare.
pub const MAX_SEMANTICS: usize = 8;

/// Canonical label indices for generated characters.
pub const SEMANTIC_BODY: SemanticId = SemanticId(0);
pub const SEMANTIC_CLOTH: SemanticId = SemanticId(1);
pub const SEMANTIC_HAIR: SemanticId = SemanticId(2);

/// A dense semantic label index. Valid only below the owning scene's `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SemanticId(pub u8);

impl SemanticId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn check(self, k: usize) -> Result<()> {
        if self.index() < k {
            Ok(())
        } else {
            Err(Error::SemanticOutOfRange {
                index: self.index(),
                k,
            })
        }
    }

    /// Canonical label name, used by the CLI and file outputs.
    pub fn name(self) -> &'static str {
        match self.0 {
            0 => "body",
            1 => "cloth",
            2 => "hair",
            _ => "extra",
        }
    }
}

/// A subset of the semantic labels `0..K`, stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SemanticSet {
    bits: u8,
}

impl SemanticSet {
    pub const EMPTY: SemanticSet = SemanticSet { bits: 0 };

    pub fn single(s: SemanticId) -> Self {
        SemanticSet { bits: 1 << s.0 }
    }

    /// The full set over `k` labels.
    pub fn all(k: usize) -> Self {
        debug_assert!(k <= MAX_SEMANTICS);
        SemanticSet {
            bits: ((1u16 << k) - 1) as u8,
        }
    }

    pub fn from_ids(ids: &[SemanticId]) -> Self {
        let mut bits = 0;
        for id in ids {
            bits |= 1 << id.0;
        }
        SemanticSet { bits }
    }

    pub fn contains(self, s: SemanticId) -> bool {
        self.bits & (1 << s.0) != 0
    }

    pub fn contains_index(self, i: usize) -> bool {
        self.bits & (1 << i) != 0
    }

    pub fn insert(&mut self, s: SemanticId) {
        self.bits |= 1 << s.0;
    }

    pub fn is_empty(self) -> bool {
        self.bits == 0
    }

    pub fn is_subset_of(self, other: SemanticSet) -> bool {
        self.bits & !other.bits == 0
    }

    pub fn union(self, other: SemanticSet) -> SemanticSet {
        SemanticSet {
            bits: self.bits | other.bits,
        }
    }

    pub fn len(self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = SemanticId> {
        (0..MAX_SEMANTICS as u8)
            .filter(move |i| self.bits & (1 << i) != 0)
            .map(SemanticId)
    }

    pub fn bits(self) -> u8 {
        self.bits
    }

    pub fn from_bits(bits: u8) -> Self {
        SemanticSet { bits }
    }

    pub fn check(self, k: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptySemanticSet);
        }
        if !self.is_subset_of(SemanticSet::all(k)) {
            return Err(Error::SemanticOutOfRange {
                index: (7 - self.bits.leading_zeros()) as usize,
                k,
            });
        }
        Ok(())
    }

    /// Stable display name: single labels by name, otherwise joined by `+`.
    pub fn label(self) -> String {
        let names: Vec<&str> = self.iter().map(|s| s.name()).collect();
        if names.is_empty() {
            "none".to_string()
        } else {
            names.join("+")
        }
    }
}

/// A point on the probability simplex over at most [`MAX_SEMANTICS`] labels.
///
/// Fixed-capacity so field samplers stay allocation-free in inner loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probs {
    vals: [f64; MAX_SEMANTICS],
    k: u8,
}

impl Probs {
    pub const SIMPLEX_TOL: f64 = 1e-6;

    /// Validates non-negativity and unit sum within [`Self::SIMPLEX_TOL`].
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.is_empty() || values.len() > MAX_SEMANTICS {
            return Err(Error::domain(format!(
                "probability vector length {} not in 1..={}",
                values.len(),
                MAX_SEMANTICS
            )));
        }
        let mut sum = 0.0;
        for &v in values {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::domain(format!("probability {v} not in [0,1]")));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > Self::SIMPLEX_TOL {
            return Err(Error::domain(format!("probabilities sum to {sum}, not 1")));
        }
        let mut vals = [0.0; MAX_SEMANTICS];
        vals[..values.len()].copy_from_slice(values);
        Ok(Probs {
            vals,
            k: values.len() as u8,
        })
    }

    pub fn one_hot(s: SemanticId, k: usize) -> Self {
        debug_assert!(s.index() < k && k <= MAX_SEMANTICS);
        let mut vals = [0.0; MAX_SEMANTICS];
        vals[s.index()] = 1.0;
        Probs { vals, k: k as u8 }
    }

    pub fn uniform(k: usize) -> Self {
        debug_assert!(k >= 1 && k <= MAX_SEMANTICS);
        let mut vals = [0.0; MAX_SEMANTICS];
        for v in vals.iter_mut().take(k) {
            *v = 1.0 / k as f64;
        }
        Probs { vals, k: k as u8 }
    }

    /// Softmax of raw logits; lands on the simplex by construction.
    pub fn from_logits(logits: &[f64]) -> Self {
        debug_assert!(!logits.is_empty() && logits.len() <= MAX_SEMANTICS);
        let mut vals = [0.0; MAX_SEMANTICS];
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (i, &l) in logits.iter().enumerate() {
            let e = (l - max).exp();
            vals[i] = e;
            sum += e;
        }
        for v in vals.iter_mut().take(logits.len()) {
            *v /= sum;
        }
        Probs {
            vals,
            k: logits.len() as u8,
        }
    }

    pub fn k(&self) -> usize {
        self.k as usize
    }

    pub fn get(&self, s: SemanticId) -> f64 {
        self.vals[s.index()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vals[..self.k as usize]
    }

    /// Sum of probabilities over a label set.
    pub fn mass(&self, set: SemanticSet) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.k as usize {
            if set.contains_index(i) {
                acc += self.vals[i];
            }
        }
        acc
    }

    /// Largest probability over a label set; `None` when the set misses all labels.
    pub fn max_over(&self, set: SemanticSet) -> Option<f64> {
        let mut best: Option<f64> = None;
        for i in 0..self.k as usize {
            if set.contains_index(i) {
                best = Some(best.map_or(self.vals[i], |b| b.max(self.vals[i])));
            }
        }
        best
    }

    pub fn argmax(&self) -> SemanticId {
        let mut best = 0;
        for i in 1..self.k as usize {
            if self.vals[i] > self.vals[best] {
                best = i;
            }
        }
        SemanticId(best as u8)
    }
}

impl std::ops::Index<usize> for Probs {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        debug_assert!(i < self.k as usize);
        &self.vals[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn set_membership_and_union() {
        let p = SemanticSet::from_ids(&[SEMANTIC_BODY, SEMANTIC_CLOTH]);
        assert!(p.contains(SEMANTIC_BODY));
        assert!(p.contains(SEMANTIC_CLOTH));
        assert!(!p.contains(SEMANTIC_HAIR));
        assert_eq!(p.union(SemanticSet::single(SEMANTIC_HAIR)), SemanticSet::all(3));
        assert_eq!(p.len(), 2);
        assert_eq!(p.label(), "body+cloth");
    }

    #[test]
    fn set_check_rejects_empty_and_out_of_range() {
        assert!(SemanticSet::EMPTY.check(3).is_err());
        assert!(SemanticSet::single(SemanticId(3)).check(3).is_err());
        assert!(SemanticSet::single(SemanticId(2)).check(3).is_ok());
    }

    #[test]
    fn probs_validation() {
        assert!(Probs::new(&[0.5, 0.5]).is_ok());
        assert!(Probs::new(&[0.5, 0.6]).is_err());
        assert!(Probs::new(&[-0.1, 1.1]).is_err());
        assert!(Probs::new(&[]).is_err());
        let p = Probs::one_hot(SEMANTIC_HAIR, 3);
        assert_eq!(p.get(SEMANTIC_HAIR), 1.0);
        assert_eq!(p.mass(SemanticSet::all(3)), 1.0);
    }

    proptest! {
        // Softmax output always satisfies the simplex invariant.
        #[test]
        fn softmax_is_on_simplex(logits in proptest::collection::vec(-30.0f64..30.0, 1..=MAX_SEMANTICS)) {
            let p = Probs::from_logits(&logits);
            let sum: f64 = p.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() < Probs::SIMPLEX_TOL);
            prop_assert!(p.as_slice().iter().all(|&v| v >= 0.0));
            prop_assert!(Probs::new(p.as_slice()).is_ok());
        }

        #[test]
        fn one_hot_round_trips(k in 1usize..=MAX_SEMANTICS) {
            for i in 0..k {
                let p = Probs::one_hot(SemanticId(i as u8), k);
                prop_assert!(Probs::new(p.as_slice()).is_ok());
                prop_assert_eq!(p.argmax(), SemanticId(i as u8));
            }
        }
    }
}
