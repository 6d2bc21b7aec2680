//! Bond/site configurations on small finite graphs and the connectivity events
//! built on them: connections, double connections, through-A connections,
//! pivotal bonds, sausages, backbones and restriction to site sets.
//!
//! Site and bond sets are `u64` bitmasks, so graphs are limited to 64 sites and
//! 64 bonds. Exhaustive enumeration never gets near that limit.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_SITES: usize = 64;
pub const MAX_BONDS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EventError {
    #[error("graph has {0} sites; at most 64 supported")]
    TooManySites(usize),
    #[error("graph has {0} bonds; at most 64 supported")]
    TooManyBonds(usize),
    #[error("bond {0:?} is a self-pair")]
    SelfPair((usize, usize)),
    #[error("bond {0:?} appears twice")]
    MultiEdge((usize, usize)),
    #[error("site {0} out of range")]
    BadSite(usize),
    #[error("configuration has no green bitset")]
    NoGreen,
    #[error("{0} is not connected to the target")]
    NotConnected(usize),
    #[error("bad configuration string: {0}")]
    Parse(String),
}

#[inline]
pub(crate) fn bit(i: usize) -> u64 {
    1u64 << i
}

#[inline]
fn low_mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// Iterator over set bit positions.
#[derive(Clone, Copy)]
pub struct Bits(pub u64);

impl Iterator for Bits {
    type Item = usize;
    #[inline]
    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            None
        } else {
            let i = self.0.trailing_zeros() as usize;
            self.0 &= self.0 - 1;
            Some(i)
        }
    }
}

/// A simple undirected graph on at most 64 sites.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphJson", into = "GraphJson")]
pub struct FiniteGraph {
    sites: usize,
    bonds: Vec<(usize, usize)>,
    incident: Vec<u64>,
    neighbours: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    sites: usize,
    bonds: Vec<[usize; 2]>,
}

impl TryFrom<GraphJson> for FiniteGraph {
    type Error = EventError;
    fn try_from(j: GraphJson) -> Result<Self, EventError> {
        FiniteGraph::new(j.sites, j.bonds.into_iter().map(|[a, b]| (a, b)).collect())
    }
}

impl From<FiniteGraph> for GraphJson {
    fn from(g: FiniteGraph) -> Self {
        GraphJson {
            sites: g.sites,
            bonds: g.bonds.iter().map(|&(a, b)| [a, b]).collect(),
        }
    }
}

impl fmt::Debug for FiniteGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "FiniteGraph({} sites, bonds {:?})",
            self.sites, self.bonds
        )
    }
}

impl FiniteGraph {
    pub fn new(sites: usize, bonds: Vec<(usize, usize)>) -> Result<Self, EventError> {
        if sites > MAX_SITES {
            return Err(EventError::TooManySites(sites));
        }
        if bonds.len() > MAX_BONDS {
            return Err(EventError::TooManyBonds(bonds.len()));
        }
        let mut incident = vec![0u64; sites];
        let mut neighbours = vec![0u64; sites];
        for (i, &(a, b)) in bonds.iter().enumerate() {
            if a >= sites {
                return Err(EventError::BadSite(a));
            }
            if b >= sites {
                return Err(EventError::BadSite(b));
            }
            if a == b {
                return Err(EventError::SelfPair((a, b)));
            }
            if neighbours[a] & bit(b) != 0 {
                return Err(EventError::MultiEdge((a, b)));
            }
            incident[a] |= bit(i);
            incident[b] |= bit(i);
            neighbours[a] |= bit(b);
            neighbours[b] |= bit(a);
        }
        Ok(Self {
            sites,
            bonds,
            incident,
            neighbours,
        })
    }

    /// Path 0–1–…–(n−1).
    pub fn path(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (i - 1, i)).collect()).expect("path")
    }

    /// Cycle on n ≥ 3 sites.
    pub fn cycle(n: usize) -> Self {
        let mut b: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        b.push((0, n - 1));
        Self::new(n, b).expect("cycle")
    }

    /// Complete graph K4 with the bond {2,3} removed.
    pub fn k4_minus_edge() -> Self {
        Self::new(4, vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3)]).expect("k4-e")
    }

    pub fn site_count(&self) -> usize {
        self.sites
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn bonds(&self) -> &[(usize, usize)] {
        &self.bonds
    }

    pub fn bond(&self, i: usize) -> (usize, usize) {
        self.bonds[i]
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        if a >= self.sites || b >= self.sites || self.neighbours[a] & bit(b) == 0 {
            return None;
        }
        Bits(self.incident[a] & self.incident[b]).next()
    }

    pub fn all_sites(&self) -> u64 {
        low_mask(self.sites)
    }

    pub fn all_bonds(&self) -> u64 {
        low_mask(self.bonds.len())
    }

    /// Bonds incident to site x.
    pub fn incident(&self, x: usize) -> u64 {
        self.incident[x]
    }

    /// Bonds with at least one endpoint in S.
    pub fn bonds_touching(&self, s: u64) -> u64 {
        Bits(s & self.all_sites()).fold(0, |acc, x| acc | self.incident[x])
    }

    /// Bonds with both endpoints in S.
    pub fn bonds_inside(&self, s: u64) -> u64 {
        self.bonds_touching(s) & !self.bonds_touching(!s & self.all_sites())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph json")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// A set of sites.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SiteSet(pub u64);

impl SiteSet {
    pub const EMPTY: SiteSet = SiteSet(0);

    pub fn from_sites<I: IntoIterator<Item = usize>>(sites: I) -> Self {
        SiteSet(sites.into_iter().fold(0, |m, s| m | bit(s)))
    }

    pub fn single(x: usize) -> Self {
        SiteSet(bit(x))
    }

    pub fn all(g: &FiniteGraph) -> Self {
        SiteSet(g.all_sites())
    }

    pub fn contains(&self, x: usize) -> bool {
        self.0 & bit(x) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> Bits {
        Bits(self.0)
    }

    pub fn complement(&self, g: &FiniteGraph) -> Self {
        SiteSet(!self.0 & g.all_sites())
    }

    pub fn union(&self, o: SiteSet) -> Self {
        SiteSet(self.0 | o.0)
    }

    pub fn intersection(&self, o: SiteSet) -> Self {
        SiteSet(self.0 & o.0)
    }
}

impl fmt::Debug for SiteSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// Occupation status of every bond, and optionally which sites are green.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct BondSiteConfig {
    pub occupied: u64,
    pub green: Option<u64>,
}

impl BondSiteConfig {
    pub fn bonds(occupied: u64) -> Self {
        Self {
            occupied,
            green: None,
        }
    }

    pub fn with_green(occupied: u64, green: u64) -> Self {
        Self {
            occupied,
            green: Some(green),
        }
    }

    pub fn is_occupied(&self, b: usize) -> bool {
        self.occupied & bit(b) != 0
    }

    pub fn green_or_empty(&self) -> u64 {
        self.green.unwrap_or(0)
    }

    /// Hex form `occupied` or `occupied:green`.
    pub fn to_hex(&self) -> String {
        match self.green {
            None => format!("{:x}", self.occupied),
            Some(g) => format!("{:x}:{:x}", self.occupied, g),
        }
    }

    pub fn from_hex(s: &str) -> Result<Self, EventError> {
        let parse = |t: &str| {
            u64::from_str_radix(t.trim().trim_start_matches("0x"), 16)
                .map_err(|_| EventError::Parse(s.to_string()))
        };
        match s.split_once(':') {
            None => Ok(Self::bonds(parse(s)?)),
            Some((a, b)) => Ok(Self::with_green(parse(a)?, parse(b)?)),
        }
    }

    /// Checks that the bitsets fit the graph.
    pub fn fits(&self, g: &FiniteGraph) -> bool {
        self.occupied & !g.all_bonds() == 0
            && self.green.map_or(true, |gr| gr & !g.all_sites() == 0)
    }
}

/// Occupied-neighbour masks for one bond configuration.
#[derive(Clone)]
pub struct Occupied {
    n: usize,
    adj: [u64; MAX_SITES],
}

impl Occupied {
    pub fn new(g: &FiniteGraph, occupied: u64) -> Self {
        let mut adj = [0u64; MAX_SITES];
        for b in Bits(occupied & g.all_bonds()) {
            let (x, y) = g.bonds[b];
            adj[x] |= bit(y);
            adj[y] |= bit(x);
        }
        Self { n: g.sites, adj }
    }

    #[inline]
    pub fn neighbours(&self, x: usize) -> u64 {
        self.adj[x]
    }

    /// Sites reachable from `start ∩ allowed` along occupied bonds with both ends in `allowed`.
    #[inline]
    pub fn reach(&self, start: u64, allowed: u64) -> u64 {
        let mut seen = start & allowed;
        let mut frontier = seen;
        while frontier != 0 {
            let mut next = 0;
            for x in Bits(frontier) {
                next |= self.adj[x];
            }
            next &= allowed & !seen;
            seen |= next;
            frontier = next;
        }
        seen
    }

    #[inline]
    pub fn cluster(&self, x: usize) -> u64 {
        self.reach(bit(x), u64::MAX)
    }

    /// Same configuration with the bond {a, b} removed.
    #[inline]
    pub fn without(&self, a: usize, b: usize) -> Self {
        let mut o = self.clone();
        o.adj[a] &= !bit(b);
        o.adj[b] &= !bit(a);
        o
    }

    pub fn site_count(&self) -> usize {
        self.n
    }
}

/// Maximum number (capped at `limit`) of bond-disjoint occupied paths from `s` to a
/// super-sink joined to each target `t` with capacity `cap`.
pub(crate) fn disjoint_paths(
    g: &FiniteGraph,
    occupied: u64,
    s: usize,
    targets: &[(usize, u8)],
    limit: u8,
) -> u8 {
    let n = g.sites;
    let occupied = occupied & g.all_bonds();
    // Flow on each bond: +1 means first endpoint to second.
    let mut flow = [0i8; MAX_BONDS];
    let mut sink_flow = [0u8; MAX_SITES];
    let mut sink_cap = [0u8; MAX_SITES];
    for &(t, c) in targets {
        sink_cap[t] += c;
    }
    let mut total = 0u8;
    while total < limit {
        // BFS over the residual graph.
        let mut parent_bond = [usize::MAX; MAX_SITES];
        let mut seen = bit(s);
        let mut queue = [0usize; MAX_SITES];
        let (mut head, mut tail) = (0, 0);
        queue[tail] = s;
        tail += 1;
        let mut exit = usize::MAX;
        while head < tail {
            let x = queue[head];
            head += 1;
            if sink_flow[x] < sink_cap[x] {
                exit = x;
                break;
            }
            for b in Bits(g.incident[x] & occupied) {
                let (a, c) = g.bonds[b];
                let (y, dir) = if a == x { (c, 1i8) } else { (a, -1i8) };
                if seen & bit(y) != 0 {
                    continue;
                }
                if flow[b] * dir < 1 {
                    seen |= bit(y);
                    parent_bond[y] = b;
                    queue[tail] = y;
                    tail += 1;
                }
            }
        }
        if exit == usize::MAX {
            break;
        }
        sink_flow[exit] += 1;
        let mut y = exit;
        while y != s {
            let b = parent_bond[y];
            let (a, c) = g.bonds[b];
            if c == y {
                flow[b] += 1;
                y = a;
            } else {
                flow[b] -= 1;
                y = c;
            }
        }
        total += 1;
    }
    let _ = n;
    total
}

/// C(x).
pub fn cluster(g: &FiniteGraph, cfg: &BondSiteConfig, x: usize) -> SiteSet {
    SiteSet(Occupied::new(g, cfg.occupied).cluster(x))
}

/// C̃^b(A): the cluster of A with bond b forced vacant.
pub fn restricted_cluster(g: &FiniteGraph, cfg: &BondSiteConfig, b: usize, a: SiteSet) -> SiteSet {
    let occ = Occupied::new(g, cfg.occupied & !bit(b));
    SiteSet(occ.reach(a.0, u64::MAX))
}

/// x ⇔ y: x = y, or two bond-disjoint occupied paths.
pub fn doubly_connected(g: &FiniteGraph, cfg: &BondSiteConfig, x: usize, y: usize) -> bool {
    x == y || disjoint_paths(g, cfg.occupied, x, &[(y, 2)], 2) >= 2
}

/// x ↔ y along occupied bonds with all sites in A; x = y requires x ∈ A.
pub fn connected_in(g: &FiniteGraph, cfg: &BondSiteConfig, x: usize, y: usize, a: SiteSet) -> bool {
    Occupied::new(g, cfg.occupied).reach(bit(x), a.0) & bit(y) != 0
}

pub fn connected(g: &FiniteGraph, cfg: &BondSiteConfig, x: usize, y: usize) -> bool {
    Occupied::new(g, cfg.occupied).cluster(x) & bit(y) != 0
}

/// x ↔ y through A.
pub fn connected_through(
    g: &FiniteGraph,
    cfg: &BondSiteConfig,
    x: usize,
    y: usize,
    a: SiteSet,
) -> bool {
    through(&Occupied::new(g, cfg.occupied), g.all_sites(), x, y, a.0)
}

#[inline]
fn through(occ: &Occupied, all: u64, x: usize, y: usize, a: u64) -> bool {
    if x == y {
        return a & bit(x) != 0;
    }
    if occ.cluster(x) & bit(y) == 0 {
        return false;
    }
    occ.reach(bit(x), all & !a) & bit(y) == 0
}

/// A pivotal bond traversed from `from` to `to`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DirectedBond {
    pub bond: usize,
    pub from: usize,
    pub to: usize,
}

/// Occupied pivotal bonds for x → A in their natural order, by single-bond removal.
pub fn pivotal_bonds(
    g: &FiniteGraph,
    cfg: &BondSiteConfig,
    x: usize,
    a: SiteSet,
) -> Result<Vec<DirectedBond>, EventError> {
    let occ = Occupied::new(g, cfg.occupied);
    pivotal_chain(g, &occ, cfg.occupied, x, a.0, cfg.occupied).ok_or(EventError::NotConnected(x))
}

/// Same result as [`pivotal_bonds`], testing only bridges of the occupied subgraph.
pub fn pivotal_bonds_fast(
    g: &FiniteGraph,
    cfg: &BondSiteConfig,
    x: usize,
    a: SiteSet,
) -> Result<Vec<DirectedBond>, EventError> {
    let occ = Occupied::new(g, cfg.occupied);
    let br = bridges(g, cfg.occupied);
    pivotal_chain(g, &occ, cfg.occupied, x, a.0, br).ok_or(EventError::NotConnected(x))
}

/// `candidates` restricts which occupied bonds are tested.
pub(crate) fn pivotal_chain(
    g: &FiniteGraph,
    occ: &Occupied,
    occupied: u64,
    x: usize,
    target: u64,
    candidates: u64,
) -> Option<Vec<DirectedBond>> {
    let c = occ.cluster(x);
    if c & target == 0 {
        return None;
    }
    if target & bit(x) != 0 {
        return Some(Vec::new());
    }
    let mut found: Vec<(u32, DirectedBond)> = Vec::new();
    for b in Bits(occupied & candidates & g.bonds_touching(c)) {
        let (p, q) = g.bonds[b];
        let side = occ.without(p, q).cluster(x);
        if side & target == 0 {
            let (from, to) = if side & bit(p) != 0 { (p, q) } else { (q, p) };
            found.push((side.count_ones(), DirectedBond { bond: b, from, to }));
        }
    }
    // The x-sides of successive pivotal bonds are strictly nested.
    found.sort_by_key(|&(n, _)| n);
    Some(found.into_iter().map(|(_, d)| d).collect())
}

/// Bridges of the occupied subgraph (Tarjan low-link).
pub fn bridges(g: &FiniteGraph, occupied: u64) -> u64 {
    let n = g.sites;
    let occupied = occupied & g.all_bonds();
    let mut disc = [u32::MAX; MAX_SITES];
    let mut low = [0u32; MAX_SITES];
    let mut out = 0u64;
    let mut time = 0u32;
    for root in 0..n {
        if disc[root] != u32::MAX {
            continue;
        }
        // Iterative DFS: (site, bond used to enter, remaining incident bonds).
        let mut stack: Vec<(usize, usize, u64)> =
            vec![(root, usize::MAX, g.incident[root] & occupied)];
        disc[root] = time;
        low[root] = time;
        time += 1;
        while let Some(top) = stack.last_mut() {
            let (x, via, rest) = *top;
            if rest == 0 {
                stack.pop();
                if let Some(&(parent, _, _)) = stack.last() {
                    low[parent] = low[parent].min(low[x]);
                    if low[x] > disc[parent] {
                        out |= bit(via);
                    }
                }
                continue;
            }
            let b = rest.trailing_zeros() as usize;
            top.2 &= rest - 1;
            if b == via {
                continue;
            }
            let (p, q) = g.bonds[b];
            let y = if p == x { q } else { p };
            if disc[y] == u32::MAX {
                disc[y] = time;
                low[y] = time;
                time += 1;
                stack.push((y, b, g.incident[y] & occupied));
            } else {
                low[x] = low[x].min(disc[y]);
            }
        }
    }
    out
}

/// A sausage with its entry and exit sites.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sausage {
    pub sites: SiteSet,
    pub left: usize,
    pub right: usize,
}

/// The string of sausages of x → y.
pub fn sausages(
    g: &FiniteGraph,
    cfg: &BondSiteConfig,
    x: usize,
    y: usize,
) -> Result<Vec<Sausage>, EventError> {
    let occ = Occupied::new(g, cfg.occupied);
    sausage_string(g, &occ, cfg.occupied, x, y).ok_or(EventError::NotConnected(x))
}

pub(crate) fn sausage_string(
    g: &FiniteGraph,
    occ: &Occupied,
    occupied: u64,
    x: usize,
    y: usize,
) -> Option<Vec<Sausage>> {
    let chain = pivotal_chain(g, occ, occupied, x, bit(y), occupied)?;
    let mut cut = occ.clone();
    for d in &chain {
        cut = cut.without(d.from, d.to);
    }
    let mut out = Vec::with_capacity(chain.len() + 1);
    let mut left = x;
    for d in &chain {
        out.push(Sausage {
            sites: SiteSet(cut.cluster(left)),
            left,
            right: d.from,
        });
        left = d.to;
    }
    out.push(Sausage {
        sites: SiteSet(cut.cluster(left)),
        left,
        right: y,
    });
    Some(out)
}

/// Sites u with bond-disjoint occupied paths u → x and u → y.
pub fn backbone(g: &FiniteGraph, cfg: &BondSiteConfig, x: usize, y: usize) -> SiteSet {
    let occ = Occupied::new(g, cfg.occupied);
    let c = occ.cluster(x);
    if c & bit(y) == 0 {
        return SiteSet::EMPTY;
    }
    let targets: Vec<(usize, u8)> = if x == y {
        vec![(x, 2)]
    } else {
        vec![(x, 1), (y, 1)]
    };
    SiteSet(
        Bits(c)
            .filter(|&u| disjoint_paths(g, cfg.occupied, u, &targets, 2) == 2)
            .fold(0, |m, u| m | bit(u)),
    )
}

/// Which bonds a restriction keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Restriction {
    /// Bonds with at least one endpoint in S.
    On,
    /// Bonds with both endpoints in S.
    In,
}

impl Restriction {
    #[inline]
    pub fn kept_bonds(self, g: &FiniteGraph, s: u64) -> u64 {
        match self {
            Restriction::On => g.bonds_touching(s),
            Restriction::In => g.bonds_inside(s),
        }
    }
}

pub fn restrict(
    g: &FiniteGraph,
    cfg: &BondSiteConfig,
    s: SiteSet,
    exclude: Option<usize>,
    how: Restriction,
) -> BondSiteConfig {
    let mut keep = how.kept_bonds(g, s.0);
    if let Some(b) = exclude {
        keep &= !bit(b);
    }
    BondSiteConfig {
        occupied: cfg.occupied & keep,
        green: cfg.green.map(|gr| gr & s.0),
    }
}

/// ω restricted to bonds and sites touching S.
pub fn occurs_on(
    g: &FiniteGraph,
    cfg: &BondSiteConfig,
    s: SiteSet,
    exclude: Option<usize>,
) -> BondSiteConfig {
    restrict(g, cfg, s, exclude, Restriction::On)
}

/// ω restricted to bonds and sites inside S.
pub fn occurs_in(
    g: &FiniteGraph,
    cfg: &BondSiteConfig,
    s: SiteSet,
    exclude: Option<usize>,
) -> BondSiteConfig {
    restrict(g, cfg, s, exclude, Restriction::In)
}

/// Per-configuration geometry shared by the F events for fixed v and x.
pub struct FGeometry {
    cluster: u64,
    sausages: Option<Vec<Sausage>>,
}

impl FGeometry {
    pub fn new(g: &FiniteGraph, occ: &Occupied, occupied: u64, v: usize, x: usize) -> Self {
        let cluster = occ.cluster(v);
        let sausages = if cluster & bit(x) != 0 {
            sausage_string(g, occ, occupied, v, x)
        } else {
            None
        };
        Self { cluster, sausages }
    }

    pub fn cluster(&self) -> u64 {
        self.cluster
    }

    pub fn sausages(&self) -> Option<&[Sausage]> {
        self.sausages.as_deref()
    }
}

/// F-event evaluation for fixed (v, x, A) and a fixed bond configuration.
pub struct FEvaluator<'a> {
    geo: &'a FGeometry,
    occ: &'a Occupied,
    all: u64,
    v: usize,
    x: usize,
    a: u64,
    /// Sites connected to v in the complement of A.
    outside: u64,
}

impl<'a> FEvaluator<'a> {
    pub fn new(
        g: &FiniteGraph,
        geo: &'a FGeometry,
        occ: &'a Occupied,
        v: usize,
        x: usize,
        a: u64,
    ) -> Self {
        let all = g.all_sites();
        let outside = occ.reach(bit(v), all & !a);
        Self {
            geo,
            occ,
            all,
            v,
            x,
            a,
            outside,
        }
    }

    pub fn outside(&self) -> u64 {
        self.outside
    }

    /// v ↔ G through A: v ↔ G but no green in the cluster of v in the complement of A.
    #[inline]
    fn through_to_green(&self, green: u64) -> bool {
        self.geo.cluster & green != 0 && self.outside & green == 0
    }

    #[inline]
    fn through_to_x(&self) -> bool {
        through(self.occ, self.all, self.v, self.x, self.a)
    }

    pub fn f1(&self, green: u64) -> bool {
        self.through_to_x() && self.geo.cluster & green == 0
    }

    pub fn f2(&self, green: u64) -> bool {
        self.outside & bit(self.x) != 0 && self.through_to_green(green)
    }

    /// (number of sausages containing a green, whether all their right endpoints are outside-connected).
    #[inline]
    fn green_sausages(&self, green: u64) -> Option<(usize, bool)> {
        let s = self.geo.sausages.as_ref()?;
        let mut count = 0;
        let mut all_out = true;
        for sg in s {
            if sg.sites.0 & green != 0 {
                count += 1;
                all_out &= self.outside & bit(sg.right) != 0;
            }
        }
        Some((count, all_out))
    }

    pub fn f3(&self, green: u64) -> bool {
        if !self.through_to_green(green) {
            return false;
        }
        matches!(self.green_sausages(green), Some((1, true)))
    }

    pub fn f4(&self, green: u64) -> bool {
        if !self.through_to_green(green) {
            return false;
        }
        matches!(self.green_sausages(green), Some((n, true)) if n >= 2)
    }

    pub fn f5(&self, green: u64) -> bool {
        if !self.through_to_x() || !self.through_to_green(green) {
            return false;
        }
        matches!(self.green_sausages(green), Some((_, true)))
    }

    /// Partition of the cluster of v on which F1–F5 depend only via "contains a green".
    pub fn green_blocks(&self) -> Vec<u64> {
        let c = self.geo.cluster;
        let mut out = Vec::new();
        match &self.geo.sausages {
            Some(s) => {
                for sg in s {
                    for part in [sg.sites.0 & self.outside, sg.sites.0 & !self.outside] {
                        if part != 0 {
                            out.push(part);
                        }
                    }
                }
            }
            None => {
                for part in [c & self.outside, c & !self.outside] {
                    if part != 0 {
                        out.push(part);
                    }
                }
            }
        }
        out
    }
}

fn f_event(
    g: &FiniteGraph,
    cfg: &BondSiteConfig,
    v: usize,
    x: usize,
    a: SiteSet,
    which: u8,
) -> Result<bool, EventError> {
    let green = cfg.green.ok_or(EventError::NoGreen)?;
    let occ = Occupied::new(g, cfg.occupied);
    let geo = FGeometry::new(g, &occ, cfg.occupied, v, x);
    let ev = FEvaluator::new(g, &geo, &occ, v, x, a.0);
    Ok(match which {
        1 => ev.f1(green),
        2 => ev.f2(green),
        3 => ev.f3(green),
        4 => ev.f4(green),
        _ => ev.f5(green),
    })
}

/// F1: v ↔ x through A and v not connected to G.
pub fn event_f1(
    g: &FiniteGraph,
    cfg: &BondSiteConfig,
    v: usize,
    x: usize,
    a: SiteSet,
) -> Result<bool, EventError> {
    f_event(g, cfg, v, x, a, 1)
}

/// F2: v ↔ x in the complement of A and v ↔ G through A.
pub fn event_f2(
    g: &FiniteGraph,
    cfg: &BondSiteConfig,
    v: usize,
    x: usize,
    a: SiteSet,
) -> Result<bool, EventError> {
    f_event(g, cfg, v, x, a, 2)
}

/// F3: v ↔ G through A, exactly one sausage of v → x holds a green, and its right
/// endpoint is connected to v off A.
pub fn event_f3(
    g: &FiniteGraph,
    cfg: &BondSiteConfig,
    v: usize,
    x: usize,
    a: SiteSet,
) -> Result<bool, EventError> {
    f_event(g, cfg, v, x, a, 3)
}

/// F4: as F3 with two or more green sausages, all right endpoints connected to v off A.
pub fn event_f4(
    g: &FiniteGraph,
    cfg: &BondSiteConfig,
    v: usize,
    x: usize,
    a: SiteSet,
) -> Result<bool, EventError> {
    f_event(g, cfg, v, x, a, 4)
}

/// F5: v ↔ x through A, v ↔ G through A, and every green sausage has its right
/// endpoint connected to v off A.
pub fn event_f5(
    g: &FiniteGraph,
    cfg: &BondSiteConfig,
    v: usize,
    x: usize,
    a: SiteSet,
) -> Result<bool, EventError> {
    f_event(g, cfg, v, x, a, 5)
}

pub mod algebra;
pub use algebra::{Event, EventExt};
