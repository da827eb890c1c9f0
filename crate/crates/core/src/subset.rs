//! Subsets of the coordinate set `I = {1, .., n}` as machine-word bitmasks.
//!
//! Coordinate `i` (1-based, as in model files) lives in bit `i - 1`. The
//! representation is canonical, so derived equality is set equality.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Hard cap on the number of coordinates.
pub const MAX_COORDS: usize = 20;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Subset(u32);

impl Subset {
    pub const EMPTY: Subset = Subset(0);

    /// `{1, .., n}`.
    pub fn full(n: usize) -> Self {
        debug_assert!(n <= MAX_COORDS);
        Subset(((1u64 << n) - 1) as u32)
    }

    pub fn from_mask(mask: u32) -> Self {
        Subset(mask)
    }

    pub fn mask(self) -> u32 {
        self.0
    }

    /// Builds a subset from 1-based coordinate labels. Returns `None` for a
    /// zero label or a label beyond [`MAX_COORDS`].
    pub fn from_labels<I: IntoIterator<Item = usize>>(labels: I) -> Option<Self> {
        let mut mask = 0u32;
        for l in labels {
            if l == 0 || l > MAX_COORDS {
                return None;
            }
            mask |= 1 << (l - 1);
        }
        Some(Subset(mask))
    }

    /// Single 0-based coordinate index.
    pub fn singleton(index: usize) -> Self {
        Subset(1 << index)
    }

    pub fn contains(self, index: usize) -> bool {
        index < 32 && self.0 & (1 << index) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_subset_of(self, other: Subset) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_strict_subset_of(self, other: Subset) -> bool {
        self.is_subset_of(other) && self != other
    }

    pub fn union(self, other: Subset) -> Subset {
        Subset(self.0 | other.0)
    }

    pub fn intersection(self, other: Subset) -> Subset {
        Subset(self.0 & other.0)
    }

    pub fn difference(self, other: Subset) -> Subset {
        Subset(self.0 & !other.0)
    }

    /// 0-based member indices in increasing order.
    pub fn indices(self) -> impl Iterator<Item = usize> {
        let mut rest = self.0;
        std::iter::from_fn(move || {
            if rest == 0 {
                None
            } else {
                let i = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(i)
            }
        })
    }

    /// 1-based labels in increasing order.
    pub fn labels(self) -> Vec<usize> {
        self.indices().map(|i| i + 1).collect()
    }

    /// All subsets of `self`, including `∅` and `self`, in increasing mask order.
    pub fn subsets(self) -> impl Iterator<Item = Subset> {
        // Standard submask enumeration, run upward from 0.
        let full = self.0;
        let mut next = Some(0u32);
        std::iter::from_fn(move || {
            let cur = next?;
            next = if cur == full { None } else { Some((cur.wrapping_sub(full)) & full) };
            Some(Subset(cur))
        })
    }

    /// Nonempty subsets of `self` that differ from `self`.
    pub fn proper_nonempty_subsets(self) -> impl Iterator<Item = Subset> {
        self.subsets().filter(move |s| !s.is_empty() && *s != self)
    }

    /// Applies a coordinate relabelling: member `i` maps to `perm[i]`.
    pub fn permuted(self, perm: &[usize]) -> Subset {
        Subset(self.indices().fold(0, |m, i| m | (1 << perm[i])))
    }
}

impl fmt::Debug for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (k, l) in self.labels().into_iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{l}")?;
        }
        f.write_str("}")
    }
}

// Serialized as the 1-based label list used by the model file format.
impl Serialize for Subset {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.labels().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Subset {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let labels = Vec::<usize>::deserialize(d)?;
        Subset::from_labels(labels.iter().copied())
            .ok_or_else(|| serde::de::Error::custom(format!("invalid coordinate labels {labels:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip_and_display() {
        let s = Subset::from_labels([3, 1]).unwrap();
        assert_eq!(s.mask(), 0b101);
        assert_eq!(s.labels(), vec![1, 3]);
        assert_eq!(s.to_string(), "{1,3}");
        assert_eq!(Subset::EMPTY.to_string(), "{}");
        assert!(Subset::from_labels([0]).is_none());
        assert!(Subset::from_labels([21]).is_none());
    }

    #[test]
    fn submask_enumeration_is_complete() {
        let s = Subset::from_mask(0b1011);
        let subs: Vec<u32> = s.subsets().map(Subset::mask).collect();
        assert_eq!(subs, vec![0, 1, 2, 3, 8, 9, 10, 11]);
        assert_eq!(s.proper_nonempty_subsets().count(), 6);
        assert_eq!(Subset::EMPTY.subsets().count(), 1);
    }

    #[test]
    fn set_algebra() {
        let a = Subset::from_labels([1, 2]).unwrap();
        let b = Subset::from_labels([2, 3]).unwrap();
        assert_eq!(a.union(b), Subset::full(3));
        assert_eq!(a.intersection(b), Subset::from_labels([2]).unwrap());
        assert_eq!(a.difference(b), Subset::from_labels([1]).unwrap());
        assert!(a.is_strict_subset_of(Subset::full(3)));
        assert!(!Subset::full(3).is_strict_subset_of(Subset::full(3)));
        assert_eq!(a.permuted(&[2, 0, 1]), Subset::from_labels([1, 3]).unwrap());
    }
}
