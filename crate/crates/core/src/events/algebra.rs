//! Events as evaluators over (graph, configuration), with combinators.
//!
//! Besides its indicator, an event may report a partition of sites into green
//! blocks: for the given bonds it depends on the green bitset only through
//! which blocks contain a green site. The exact enumerator uses this to sum
//! over green configurations in closed form.

use std::sync::Arc;

use super::{bit, restrict, BondSiteConfig, FiniteGraph, Occupied, Restriction};

pub trait Event: Send + Sync {
    fn holds(&self, g: &FiniteGraph, cfg: &BondSiteConfig) -> bool;

    /// Disjoint green blocks; sites outside every block must not matter.
    /// The default makes each site its own block.
    fn green_blocks(&self, g: &FiniteGraph, occupied: u64) -> Vec<u64> {
        let _ = occupied;
        (0..g.site_count()).map(bit).collect()
    }
}

impl<E: Event + ?Sized> Event for Arc<E> {
    fn holds(&self, g: &FiniteGraph, cfg: &BondSiteConfig) -> bool {
        (**self).holds(g, cfg)
    }
    fn green_blocks(&self, g: &FiniteGraph, occupied: u64) -> Vec<u64> {
        (**self).green_blocks(g, occupied)
    }
}

impl<E: Event + ?Sized> Event for Box<E> {
    fn holds(&self, g: &FiniteGraph, cfg: &BondSiteConfig) -> bool {
        (**self).holds(g, cfg)
    }
    fn green_blocks(&self, g: &FiniteGraph, occupied: u64) -> Vec<u64> {
        (**self).green_blocks(g, occupied)
    }
}

impl<E: Event + ?Sized> Event for &E {
    fn holds(&self, g: &FiniteGraph, cfg: &BondSiteConfig) -> bool {
        (**self).holds(g, cfg)
    }
    fn green_blocks(&self, g: &FiniteGraph, occupied: u64) -> Vec<u64> {
        (**self).green_blocks(g, occupied)
    }
}

/// A closure event with per-site green dependence.
pub struct FnEvent<F>(pub F);

impl<F> Event for FnEvent<F>
where
    F: Fn(&FiniteGraph, &BondSiteConfig) -> bool + Send + Sync,
{
    fn holds(&self, g: &FiniteGraph, cfg: &BondSiteConfig) -> bool {
        (self.0)(g, cfg)
    }
}

/// A closure event with a closure describing its green blocks.
pub struct Blocked<F, B> {
    pub holds: F,
    pub blocks: B,
}

impl<F, B> Event for Blocked<F, B>
where
    F: Fn(&FiniteGraph, &BondSiteConfig) -> bool + Send + Sync,
    B: Fn(&FiniteGraph, u64) -> Vec<u64> + Send + Sync,
{
    fn holds(&self, g: &FiniteGraph, cfg: &BondSiteConfig) -> bool {
        (self.holds)(g, cfg)
    }
    fn green_blocks(&self, g: &FiniteGraph, occupied: u64) -> Vec<u64> {
        (self.blocks)(g, occupied)
    }
}

/// An event that ignores green sites.
pub fn bond_event<F>(f: F) -> impl Event
where
    F: Fn(&FiniteGraph, u64) -> bool + Send + Sync,
{
    Blocked {
        holds: move |g: &FiniteGraph, c: &BondSiteConfig| f(g, c.occupied),
        blocks: |_: &FiniteGraph, _: u64| Vec::new(),
    }
}

/// Common refinement of two block families.
pub fn refine(a: &[u64], b: &[u64]) -> Vec<u64> {
    let cover_a = a.iter().fold(0, |m, x| m | x);
    let cover_b = b.iter().fold(0, |m, x| m | x);
    let mut out = Vec::new();
    for &x in a {
        for &y in b {
            if x & y != 0 {
                out.push(x & y);
            }
        }
        if x & !cover_b != 0 {
            out.push(x & !cover_b);
        }
    }
    for &y in b {
        if y & !cover_a != 0 {
            out.push(y & !cover_a);
        }
    }
    out
}

pub struct Not<E>(pub E);
pub struct And<E, F>(pub E, pub F);
pub struct Or<E, F>(pub E, pub F);

impl<E: Event> Event for Not<E> {
    fn holds(&self, g: &FiniteGraph, cfg: &BondSiteConfig) -> bool {
        !self.0.holds(g, cfg)
    }
    fn green_blocks(&self, g: &FiniteGraph, occupied: u64) -> Vec<u64> {
        self.0.green_blocks(g, occupied)
    }
}

impl<E: Event, F: Event> Event for And<E, F> {
    fn holds(&self, g: &FiniteGraph, cfg: &BondSiteConfig) -> bool {
        self.0.holds(g, cfg) && self.1.holds(g, cfg)
    }
    fn green_blocks(&self, g: &FiniteGraph, occupied: u64) -> Vec<u64> {
        refine(
            &self.0.green_blocks(g, occupied),
            &self.1.green_blocks(g, occupied),
        )
    }
}

impl<E: Event, F: Event> Event for Or<E, F> {
    fn holds(&self, g: &FiniteGraph, cfg: &BondSiteConfig) -> bool {
        self.0.holds(g, cfg) || self.1.holds(g, cfg)
    }
    fn green_blocks(&self, g: &FiniteGraph, occupied: u64) -> Vec<u64> {
        refine(
            &self.0.green_blocks(g, occupied),
            &self.1.green_blocks(g, occupied),
        )
    }
}

/// A site set that may depend on the bond configuration (never on greens).
pub trait SiteSetFn: Send + Sync {
    fn set(&self, g: &FiniteGraph, occupied: u64) -> u64;
}

/// A fixed set.
pub struct Fixed(pub u64);

impl SiteSetFn for Fixed {
    fn set(&self, _: &FiniteGraph, _: u64) -> u64 {
        self.0
    }
}

/// Complement of another set.
pub struct Complement<S>(pub S);

impl<S: SiteSetFn> SiteSetFn for Complement<S> {
    fn set(&self, g: &FiniteGraph, occupied: u64) -> u64 {
        !self.0.set(g, occupied) & g.all_sites()
    }
}

/// C̃^{b}(A): cluster of A with bond b vacant.
pub struct TildeCluster {
    pub bond: usize,
    pub a: u64,
}

impl SiteSetFn for TildeCluster {
    fn set(&self, g: &FiniteGraph, occupied: u64) -> u64 {
        Occupied::new(g, occupied & !bit(self.bond)).reach(self.a, u64::MAX)
    }
}

impl<F> SiteSetFn for F
where
    F: Fn(&FiniteGraph, u64) -> u64 + Send + Sync,
{
    fn set(&self, g: &FiniteGraph, occupied: u64) -> u64 {
        self(g, occupied)
    }
}

/// {E occurs on/in S}, S possibly random, with an optional bond forced vacant.
pub struct Restricted<E, S> {
    pub event: E,
    pub set: S,
    pub how: Restriction,
    pub exclude: Option<usize>,
}

impl<E: Event, S: SiteSetFn> Restricted<E, S> {
    fn restricted(&self, g: &FiniteGraph, occupied: u64) -> (u64, u64) {
        let s = self.set.set(g, occupied);
        let cfg = restrict(
            g,
            &BondSiteConfig::bonds(occupied),
            super::SiteSet(s),
            self.exclude,
            self.how,
        );
        (s, cfg.occupied)
    }
}

impl<E: Event, S: SiteSetFn> Event for Restricted<E, S> {
    fn holds(&self, g: &FiniteGraph, cfg: &BondSiteConfig) -> bool {
        let s = self.set.set(g, cfg.occupied);
        let r = restrict(g, cfg, super::SiteSet(s), self.exclude, self.how);
        self.event.holds(g, &r)
    }
    fn green_blocks(&self, g: &FiniteGraph, occupied: u64) -> Vec<u64> {
        let (s, rb) = self.restricted(g, occupied);
        self.event
            .green_blocks(g, rb)
            .into_iter()
            .map(|b| b & s)
            .filter(|&b| b != 0)
            .collect()
    }
}

/// Builder helpers.
pub trait EventExt: Event + Sized {
    fn and<F: Event>(self, f: F) -> And<Self, F> {
        And(self, f)
    }
    fn or<F: Event>(self, f: F) -> Or<Self, F> {
        Or(self, f)
    }
    fn not(self) -> Not<Self> {
        Not(self)
    }
    fn on<S: SiteSetFn>(self, set: S, exclude: Option<usize>) -> Restricted<Self, S> {
        Restricted {
            event: self,
            set,
            how: Restriction::On,
            exclude,
        }
    }
    fn within<S: SiteSetFn>(self, set: S, exclude: Option<usize>) -> Restricted<Self, S> {
        Restricted {
            event: self,
            set,
            how: Restriction::In,
            exclude,
        }
    }
}

impl<E: Event + Sized> EventExt for E {}

/// Always true.
pub struct Certain;

impl Event for Certain {
    fn holds(&self, _: &FiniteGraph, _: &BondSiteConfig) -> bool {
        true
    }
    fn green_blocks(&self, _: &FiniteGraph, _: u64) -> Vec<u64> {
        Vec::new()
    }
}

/// x ↔ y.
pub struct Connected(pub usize, pub usize);

impl Event for Connected {
    fn holds(&self, g: &FiniteGraph, cfg: &BondSiteConfig) -> bool {
        Occupied::new(g, cfg.occupied).cluster(self.0) & bit(self.1) != 0
    }
    fn green_blocks(&self, _: &FiniteGraph, _: u64) -> Vec<u64> {
        Vec::new()
    }
}

/// x ⇔ y.
pub struct DoublyConnected(pub usize, pub usize);

impl Event for DoublyConnected {
    fn holds(&self, g: &FiniteGraph, cfg: &BondSiteConfig) -> bool {
        super::doubly_connected(g, cfg, self.0, self.1)
    }
    fn green_blocks(&self, _: &FiniteGraph, _: u64) -> Vec<u64> {
        Vec::new()
    }
}

/// x ↔ G.
pub struct ConnectedToGreen(pub usize);

impl Event for ConnectedToGreen {
    fn holds(&self, g: &FiniteGraph, cfg: &BondSiteConfig) -> bool {
        Occupied::new(g, cfg.occupied).cluster(self.0) & cfg.green_or_empty() != 0
    }
    fn green_blocks(&self, g: &FiniteGraph, occupied: u64) -> Vec<u64> {
        vec![Occupied::new(g, occupied).cluster(self.0)]
    }
}

/// x ↔ y and x not connected to G.
pub struct GreenFreeConnection(pub usize, pub usize);

impl Event for GreenFreeConnection {
    fn holds(&self, g: &FiniteGraph, cfg: &BondSiteConfig) -> bool {
        let c = Occupied::new(g, cfg.occupied).cluster(self.0);
        c & bit(self.1) != 0 && c & cfg.green_or_empty() == 0
    }
    fn green_blocks(&self, g: &FiniteGraph, occupied: u64) -> Vec<u64> {
        vec![Occupied::new(g, occupied).cluster(self.0)]
    }
}

/// E₀′(x, y) = {x ⇔ y and x not connected to G}.
pub struct DoubleGreenFree(pub usize, pub usize);

impl Event for DoubleGreenFree {
    fn holds(&self, g: &FiniteGraph, cfg: &BondSiteConfig) -> bool {
        let c = Occupied::new(g, cfg.occupied).cluster(self.0);
        c & cfg.green_or_empty() == 0 && super::doubly_connected(g, cfg, self.0, self.1)
    }
    fn green_blocks(&self, g: &FiniteGraph, occupied: u64) -> Vec<u64> {
        vec![Occupied::new(g, occupied).cluster(self.0)]
    }
}

/// One of the F events for fixed (v, x, A).
pub struct FEvent {
    pub which: u8,
    pub v: usize,
    pub x: usize,
    pub a: u64,
}

impl Event for FEvent {
    fn holds(&self, g: &FiniteGraph, cfg: &BondSiteConfig) -> bool {
        super::f_event(
            g,
            &BondSiteConfig::with_green(cfg.occupied, cfg.green_or_empty()),
            self.v,
            self.x,
            super::SiteSet(self.a),
            self.which,
        )
        .expect("green present")
    }
    fn green_blocks(&self, g: &FiniteGraph, occupied: u64) -> Vec<u64> {
        let occ = Occupied::new(g, occupied);
        let geo = super::FGeometry::new(g, &occ, occupied, self.v, self.x);
        super::FEvaluator::new(g, &geo, &occ, self.v, self.x, self.a).green_blocks()
    }
}
