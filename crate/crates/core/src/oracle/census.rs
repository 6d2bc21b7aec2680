//! Integer tallies of configurations grouped by weight class.
//!
//! A configuration class contributes
//! `count · p^a (1−p)^(B−a) · z^clear · (1−z)^singles · Π_j (1 − z^{m_j})`,
//! where `a` is the number of occupied bonds among `B` free bonds, `clear`
//! counts sites required non-green, and the `m_j` are sizes of blocks required
//! to contain at least one green site.

use std::collections::HashMap;

use crate::scalar::Weight;

const FIELD: u32 = 7;
const MAX_BLOCKS: usize = 15;

/// Packed weight class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WeightClass(u128);

impl WeightClass {
    /// `green` lists sizes of green-required blocks (any order).
    pub fn new(occupied: u32, clear: u32, green: &[u32]) -> Self {
        let mut singles = 0u32;
        let mut big: Vec<u32> = Vec::with_capacity(green.len());
        for &m in green {
            if m == 1 {
                singles += 1;
            } else {
                big.push(m);
            }
        }
        assert!(big.len() <= MAX_BLOCKS, "too many green blocks");
        big.sort_unstable();
        let mut key: u128 = occupied as u128;
        key = (key << FIELD) | clear as u128;
        key = (key << FIELD) | singles as u128;
        let mut tail: u128 = 0;
        for &m in &big {
            debug_assert!(m < (1 << FIELD));
            tail = (tail << FIELD) | m as u128;
        }
        Self((key << (FIELD as usize * MAX_BLOCKS)) | tail)
    }

    /// Class with `singles` green-required single sites and no larger blocks.
    pub fn simple(occupied: u32, clear: u32, singles: u32) -> Self {
        let key = (((occupied as u128) << FIELD | clear as u128) << FIELD) | singles as u128;
        Self(key << (FIELD as usize * MAX_BLOCKS))
    }

    pub fn occupied(&self) -> u32 {
        ((self.0 >> (FIELD as usize * (MAX_BLOCKS + 2))) & 0x7f) as u32
    }

    pub fn clear(&self) -> u32 {
        ((self.0 >> (FIELD as usize * (MAX_BLOCKS + 1))) & 0x7f) as u32
    }

    pub fn singles(&self) -> u32 {
        ((self.0 >> (FIELD as usize * MAX_BLOCKS)) & 0x7f) as u32
    }

    pub fn blocks(&self) -> Vec<u32> {
        let mut out = Vec::new();
        let mut tail = self.0 & ((1u128 << (FIELD as usize * MAX_BLOCKS)) - 1);
        while tail != 0 {
            out.push((tail & 0x7f) as u32);
            tail >>= FIELD;
        }
        out
    }
}

/// Weight-class tally over a fixed number of free bonds.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Census {
    free_bonds: u32,
    terms: u64,
    classes: Vec<(WeightClass, u64)>,
}

/// Mutable accumulator; `finish` yields a deterministic [`Census`].
#[derive(Clone, Debug, Default)]
pub struct Tally {
    free_bonds: u32,
    terms: u64,
    map: HashMap<WeightClass, u64>,
}

impl Tally {
    pub fn new(free_bonds: u32) -> Self {
        Self {
            free_bonds,
            terms: 0,
            map: HashMap::new(),
        }
    }

    #[inline]
    pub fn add(&mut self, class: WeightClass, count: u64) {
        *self.map.entry(class).or_insert(0) += count;
    }

    #[inline]
    pub fn add_terms(&mut self, n: u64) {
        self.terms += n;
    }

    pub fn merge(&mut self, other: Tally) {
        assert_eq!(self.free_bonds, other.free_bonds);
        self.terms += other.terms;
        for (k, v) in other.map {
            self.add(k, v);
        }
    }

    pub fn finish(self) -> Census {
        let mut classes: Vec<_> = self.map.into_iter().filter(|&(_, c)| c != 0).collect();
        classes.sort_unstable();
        Census {
            free_bonds: self.free_bonds,
            terms: self.terms,
            classes,
        }
    }
}

/// Dense tally over (occupied, clear) for events needing no green block.
#[derive(Clone, Debug)]
pub struct DenseTally {
    free_bonds: u32,
    width: usize,
    counts: Vec<u64>,
}

impl DenseTally {
    pub fn new(free_bonds: u32, max_clear: usize) -> Self {
        let width = max_clear + 1;
        Self {
            free_bonds,
            width,
            counts: vec![0; (free_bonds as usize + 1) * width],
        }
    }

    #[inline]
    pub fn add(&mut self, occupied: u32, clear: u32) {
        self.counts[occupied as usize * self.width + clear as usize] += 1;
    }

    pub fn merge(&mut self, other: &DenseTally) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn finish(&self, terms: u64) -> Census {
        let mut classes = Vec::new();
        for (i, &c) in self.counts.iter().enumerate() {
            if c != 0 {
                classes.push((
                    WeightClass::new((i / self.width) as u32, (i % self.width) as u32, &[]),
                    c,
                ));
            }
        }
        classes.sort_unstable();
        Census {
            free_bonds: self.free_bonds,
            terms,
            classes,
        }
    }
}

/// Precomputed powers for one (p, z) point.
#[derive(Clone, Debug)]
pub struct WeightTable<W> {
    p: W,
    z: W,
    p_pow: Vec<W>,
    q_pow: Vec<W>,
    z_pow: Vec<W>,
}

impl<W: Weight> WeightTable<W> {
    pub fn new(p: W, z: W, max_bonds: usize, max_sites: usize) -> Self {
        let q = W::one() - p.clone();
        let pows = |b: &W, n: usize| {
            let mut v = Vec::with_capacity(n + 1);
            let mut acc = W::one();
            for _ in 0..=n {
                v.push(acc.clone());
                acc = acc * b.clone();
            }
            v
        };
        Self {
            p_pow: pows(&p, max_bonds),
            q_pow: pows(&q, max_bonds),
            z_pow: pows(&z, max_sites),
            p,
            z,
        }
    }

    pub fn p(&self) -> &W {
        &self.p
    }

    pub fn z(&self) -> &W {
        &self.z
    }

    /// p^a (1−p)^(b−a).
    #[inline]
    pub fn bonds(&self, a: u32, b: u32) -> W {
        self.p_pow[a as usize].clone() * self.q_pow[(b - a) as usize].clone()
    }

    #[inline]
    pub fn z_pow(&self, n: u32) -> W {
        self.z_pow[n as usize].clone()
    }

    /// 1 − z^m.
    #[inline]
    pub fn green(&self, m: u32) -> W {
        W::one() - self.z_pow[m as usize].clone()
    }

    pub fn class(&self, c: WeightClass, free_bonds: u32) -> W {
        let mut w = self.bonds(c.occupied(), free_bonds) * self.z_pow(c.clear());
        let s = c.singles();
        if s > 0 {
            w = w * self.green(1).pow(s);
        }
        let mut tail = c.0 & ((1u128 << (FIELD as usize * MAX_BLOCKS)) - 1);
        while tail != 0 {
            w = w * self.green((tail & 0x7f) as u32);
            tail >>= FIELD;
        }
        w
    }
}

impl Census {
    pub fn empty(free_bonds: u32) -> Self {
        Self {
            free_bonds,
            terms: 0,
            classes: Vec::new(),
        }
    }

    pub fn free_bonds(&self) -> u32 {
        self.free_bonds
    }

    /// Number of configurations enumerated to build this census.
    pub fn terms(&self) -> u64 {
        self.terms
    }

    pub fn classes(&self) -> &[(WeightClass, u64)] {
        &self.classes
    }

    pub fn evaluate<W: Weight>(&self, t: &WeightTable<W>) -> W {
        W::sum(
            self.classes
                .iter()
                .map(|&(c, n)| W::from_count(n) * t.class(c, self.free_bonds)),
        )
    }

    /// Σ count · weight · f(clear) for classes without green blocks; used for
    /// cluster-size moments.
    pub fn evaluate_with<W: Weight, F: Fn(&WeightClass) -> W>(
        &self,
        t: &WeightTable<W>,
        f: F,
    ) -> W {
        W::sum(
            self.classes
                .iter()
                .map(|(c, n)| W::from_count(*n) * t.class(*c, self.free_bonds) * f(c)),
        )
    }
}

/// Dense tally over (occupied, clear, size of one green-required block), where
/// block size 0 means no block.
#[derive(Clone, Debug)]
pub struct BlockTally {
    free_bonds: u32,
    width: usize,
    counts: Vec<u64>,
}

impl BlockTally {
    pub fn new(free_bonds: u32, max_sites: usize) -> Self {
        let width = max_sites + 1;
        Self {
            free_bonds,
            width,
            counts: vec![0; (free_bonds as usize + 1) * width * width],
        }
    }

    #[inline]
    pub fn add(&mut self, occupied: u32, clear: u32, block: u32) {
        let w = self.width;
        self.counts[(occupied as usize * w + clear as usize) * w + block as usize] += 1;
    }

    pub fn merge(&mut self, other: &BlockTally) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn finish(&self, terms: u64) -> Census {
        let w = self.width;
        let mut classes = Vec::new();
        for (i, &c) in self.counts.iter().enumerate() {
            if c != 0 {
                let m = (i % w) as u32;
                let clear = ((i / w) % w) as u32;
                let a = (i / (w * w)) as u32;
                let blocks: &[u32] = if m == 0 {
                    &[]
                } else {
                    std::slice::from_ref(&m)
                };
                classes.push((WeightClass::new(a, clear, blocks), c));
            }
        }
        classes.sort_unstable();
        Census {
            free_bonds: self.free_bonds,
            terms,
            classes,
        }
    }
}
