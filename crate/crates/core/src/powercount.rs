//! Infrared and ultraviolet degrees of divergence of closed Feynman diagrams,
//! searched over every loop-momentum basis drawn from the line momenta.

use num_rational::Ratio;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PowerCountError {
    #[error("graph is not connected")]
    Disconnected,
    #[error("line endpoint {0} out of range")]
    BadEndpoint(usize),
    #[error("invalid placement: {0}")]
    BadPlacement(String),
    #[error("search too large: {0}")]
    TooLarge(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mass {
    Massless,
    Massive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Line {
    pub a: usize,
    pub b: usize,
    pub mass: Mass,
}

/// A closed diagram; multi-edges and self-loops are allowed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphJson", into = "GraphJson")]
pub struct FeynmanGraph {
    vertices: usize,
    lines: Vec<Line>,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    vertices: usize,
    lines: Vec<(usize, usize, Mass)>,
}

impl TryFrom<GraphJson> for FeynmanGraph {
    type Error = PowerCountError;
    fn try_from(j: GraphJson) -> Result<Self, Self::Error> {
        FeynmanGraph::new(j.vertices, j.lines.into_iter().map(|(a, b, mass)| Line { a, b, mass }).collect())
    }
}

impl From<FeynmanGraph> for GraphJson {
    fn from(g: FeynmanGraph) -> Self {
        GraphJson { vertices: g.vertices, lines: g.lines.iter().map(|l| (l.a, l.b, l.mass)).collect() }
    }
}

/// Maximum loop number searched.
pub const MAX_LOOPS: usize = 12;
/// Maximum number of spanning trees searched.
pub const MAX_TREES: usize = 1_000_000;

impl FeynmanGraph {
    pub fn new(vertices: usize, lines: Vec<Line>) -> Result<Self, PowerCountError> {
        for l in &lines {
            for e in [l.a, l.b] {
                if e >= vertices {
                    return Err(PowerCountError::BadEndpoint(e));
                }
            }
        }
        let g = Self { vertices, lines };
        if vertices == 0 || !g.connected() {
            return Err(PowerCountError::Disconnected);
        }
        Ok(g)
    }

    /// All-massless graph from endpoint pairs.
    pub fn massless(vertices: usize, pairs: &[(usize, usize)]) -> Result<Self, PowerCountError> {
        Self::new(vertices, pairs.iter().map(|&(a, b)| Line { a, b, mass: Mass::Massless }).collect())
    }

    /// Cycle on n vertices (n = 2 gives the bubble).
    pub fn cycle(n: usize) -> Self {
        Self::massless(n, &(0..n).map(|i| (i, (i + 1) % n)).collect::<Vec<_>>()).expect("cycle")
    }

    pub fn bubble() -> Self {
        Self::cycle(2)
    }

    pub fn with_mass(mut self, line: usize, mass: Mass) -> Self {
        self.lines[line].mass = mass;
        self
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    pub fn loops(&self) -> usize {
        self.lines.len() + 1 - self.vertices
    }

    fn connected(&self) -> bool {
        let mut uf = Dsu::new(self.vertices);
        for l in &self.lines {
            uf.union(l.a, l.b);
        }
        (1..self.vertices).all(|v| uf.find(v) == uf.find(0))
    }

    /// Whether every line lies on a cycle. A bridge carries zero momentum in a
    /// closed diagram, so its massless propagator is singular in any dimension.
    pub fn is_bridgeless(&self) -> bool {
        (0..self.lines.len()).all(|skip| {
            let mut uf = Dsu::new(self.vertices);
            for (i, l) in self.lines.iter().enumerate() {
                if i != skip {
                    uf.union(l.a, l.b);
                }
            }
            (1..self.vertices).all(|v| uf.find(v) == uf.find(0))
        })
    }

    /// The same diagram with vertices and lines permuted and line directions optionally flipped.
    pub fn relabelled(&self, vertex_perm: &[usize], line_perm: &[usize], flips: &[bool]) -> Self {
        let mut lines = vec![self.lines[0]; self.lines.len()];
        for (i, l) in self.lines.iter().enumerate() {
            let (a, b) = (vertex_perm[l.a], vertex_perm[l.b]);
            let (a, b) = if flips[i] { (b, a) } else { (a, b) };
            lines[line_perm[i]] = Line { a, b, mass: l.mass };
        }
        Self { vertices: self.vertices, lines }
    }

    /// Random connected graph with at least one loop.
    pub fn random<R: Rng>(rng: &mut R, max_vertices: usize, max_lines: usize, massive_prob: f64) -> Self {
        loop {
            let v = rng.gen_range(1..=max_vertices);
            let n = rng.gen_range(v.max(1)..=max_lines.max(v));
            let mut lines = Vec::with_capacity(n);
            // A random spanning tree first, then extra lines.
            for x in 1..v {
                lines.push((rng.gen_range(0..x), x));
            }
            while lines.len() < n {
                lines.push((rng.gen_range(0..v), rng.gen_range(0..v)));
            }
            let lines = lines
                .into_iter()
                .map(|(a, b)| Line { a, b, mass: if rng.gen_bool(massive_prob) { Mass::Massive } else { Mass::Massless } })
                .collect();
            if let Ok(g) = Self::new(v, lines) {
                if g.loops() >= 1 {
                    return g;
                }
            }
        }
    }
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

/// Loop momenta Γ (a cotree) with every line momentum expressed in them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopBasis {
    /// Line indices of the loop momenta, ascending.
    pub lines: Vec<usize>,
    /// coefficients[i][j]: coefficient of loop momentum j in line i.
    pub coefficients: Vec<Vec<i8>>,
}

impl LoopBasis {
    /// Bitmask over basis positions of the loop momenta each line depends on.
    pub fn supports(&self) -> Vec<u32> {
        self.coefficients.iter().map(|row| row.iter().enumerate().filter(|(_, &c)| c != 0).fold(0u32, |m, (j, _)| m | 1 << j)).collect()
    }
}

fn combinations(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    if k > n {
        return;
    }
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn basis_from_tree(g: &FeynmanGraph, tree: &[usize]) -> LoopBasis {
    let n = g.line_count();
    let in_tree: Vec<bool> = (0..n).map(|i| tree.contains(&i)).collect();
    let cotree: Vec<usize> = (0..n).filter(|&i| !in_tree[i]).collect();
    // Root the tree at 0: parent line and direction for each vertex.
    let mut adj = vec![Vec::new(); g.vertices];
    for &t in tree {
        let l = g.lines[t];
        adj[l.a].push((t, l.b));
        adj[l.b].push((t, l.a));
    }
    let mut parent: Vec<Option<usize>> = vec![None; g.vertices];
    let mut depth = vec![0usize; g.vertices];
    let mut seen = vec![false; g.vertices];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &(t, w) in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                parent[w] = Some(t);
                depth[w] = depth[v] + 1;
                stack.push(w);
            }
        }
    }
    let other = |t: usize, v: usize| if g.lines[t].a == v { g.lines[t].b } else { g.lines[t].a };
    let mut coefficients = vec![vec![0i8; cotree.len()]; n];
    for (j, &c) in cotree.iter().enumerate() {
        coefficients[c][j] = 1;
        // Momentum k_j flows a → b along line c, then returns b → a through the tree.
        let (mut x, mut y) = (g.lines[c].b, g.lines[c].a);
        let mut down: Vec<(usize, usize)> = Vec::new();
        while x != y {
            if depth[x] >= depth[y] {
                let t = parent[x].expect("tree path");
                // Traversal goes from x up to its parent.
                let sign = if g.lines[t].a == x { 1 } else { -1 };
                coefficients[t][j] += sign;
                x = other(t, x);
            } else {
                let t = parent[y].expect("tree path");
                down.push((t, y));
                y = other(t, y);
            }
        }
        for (t, v) in down {
            // Traversal goes from the parent down to v.
            let sign = if g.lines[t].b == v { 1 } else { -1 };
            coefficients[t][j] += sign;
        }
    }
    LoopBasis { lines: cotree, coefficients }
}

/// Every cotree of the graph with its fundamental-cycle matrix, in
/// lexicographic order of the spanning trees.
pub fn loop_bases(g: &FeynmanGraph) -> Result<Vec<LoopBasis>, PowerCountError> {
    if g.loops() > MAX_LOOPS {
        return Err(PowerCountError::TooLarge(format!("{} loops", g.loops())));
    }
    let mut trees = Vec::new();
    let mut overflow = false;
    combinations(g.line_count(), g.vertices - 1, |c| {
        if overflow {
            return;
        }
        let mut uf = Dsu::new(g.vertices);
        if c.iter().all(|&t| uf.union(g.lines[t].a, g.lines[t].b)) {
            trees.push(c.to_vec());
            overflow = trees.len() > MAX_TREES;
        }
    });
    if overflow {
        return Err(PowerCountError::TooLarge(format!("more than {MAX_TREES} spanning trees")));
    }
    Ok(trees.par_iter().map(|t| basis_from_tree(g, t)).collect())
}

/// A degree a·d + b.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Affine {
    pub per_dimension: i64,
    pub constant: i64,
}

impl Affine {
    pub fn at(&self, d: f64) -> f64 {
        self.per_dimension as f64 * d + self.constant as f64
    }

    pub fn at_exact(&self, d: Ratio<i64>) -> Ratio<i64> {
        d * self.per_dimension + self.constant
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MassMode {
    AllMassless,
    AsLabelled,
}

/// The minimising or maximising (Γ, H).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub basis: Vec<usize>,
    pub subset: Vec<usize>,
    pub degree: Affine,
}

/// A degree evaluated at one dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Degree {
    pub value: f64,
    pub witness: Witness,
}

fn subset_lines(basis: &LoopBasis, h: u32) -> Vec<usize> {
    basis.lines.iter().enumerate().filter(|(j, _)| h >> j & 1 == 1).map(|(_, &l)| l).collect()
}

/// Degrees of every nonempty H ⊆ Γ of one basis, as (H mask, IR degree, UV degree).
pub fn subset_degrees(g: &FeynmanGraph, basis: &LoopBasis, mode: MassMode) -> Vec<(u32, Affine, Affine)> {
    let supports = basis.supports();
    let l = basis.lines.len();
    let massless: Vec<bool> = g.lines.iter().map(|x| mode == MassMode::AllMassless || x.mass == Mass::Massless).collect();
    (1u32..1 << l)
        .map(|h| {
            let determined = supports.iter().zip(&massless).filter(|(&s, &m)| m && s & !h == 0).count() as i64;
            let depending = supports.iter().filter(|&&s| s & h != 0).count() as i64;
            let size = h.count_ones() as i64;
            (h, Affine { per_dimension: size, constant: -2 * determined }, Affine { per_dimension: size, constant: -2 * depending })
        })
        .collect()
}

fn extremum(g: &FeynmanGraph, d: f64, mode: MassMode, minimise: bool) -> Result<Option<Degree>, PowerCountError> {
    let bases = loop_bases(g)?;
    let best = bases
        .par_iter()
        .enumerate()
        .filter_map(|(bi, b)| {
            subset_degrees(g, b, mode)
                .into_iter()
                .map(|(h, ir, uv)| {
                    let deg = if minimise { ir } else { uv };
                    let v = deg.at(d);
                    (if minimise { v } else { -v }, bi, h, deg)
                })
                .min_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))))
        })
        .min_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    Ok(best.map(|(_, bi, h, deg)| Degree {
        value: deg.at(d),
        witness: Witness { basis: bases[bi].lines.clone(), subset: subset_lines(&bases[bi], h), degree: deg },
    }))
}

/// min over Γ and nonempty H ⊆ Γ of d|H| − 2·#{massless lines determined by H};
/// `None` for a diagram without loops.
pub fn degree_ir(g: &FeynmanGraph, d: f64, mode: MassMode) -> Result<Option<Degree>, PowerCountError> {
    extremum(g, d, mode, true)
}

/// max over Γ and nonempty H ⊆ Γ of d|H| − 2·#{lines depending on H}.
pub fn degree_uv(g: &FeynmanGraph, d: f64) -> Result<Option<Degree>, PowerCountError> {
    extremum(g, d, MassMode::AllMassless, false)
}

/// d_c = max over (Γ, H) of 2 m(H)/|H| with every line massless.
pub fn critical_dimension(g: &FeynmanGraph) -> Result<Option<Ratio<i64>>, PowerCountError> {
    let bases = loop_bases(g)?;
    Ok(bases
        .par_iter()
        .flat_map_iter(|b| subset_degrees(g, b, MassMode::AllMassless).into_iter().map(|(_, ir, _)| Ratio::new(-ir.constant, ir.per_dimension)))
        .max())
}

/// Minimum IR degree over every set of L line momenta that spans the loop
/// space, found by exact elimination rather than spanning trees.
pub fn degree_ir_all_line_bases(g: &FeynmanGraph, d: f64, mode: MassMode) -> Result<Option<f64>, PowerCountError> {
    let l = g.loops();
    if l == 0 {
        return Ok(None);
    }
    let reference = loop_bases(g)?.into_iter().next().expect("a spanning tree");
    let rows: Vec<Vec<Ratio<i64>>> = reference.coefficients.iter().map(|r| r.iter().map(|&c| Ratio::from(c as i64)).collect()).collect();
    let massless: Vec<bool> = g.lines.iter().map(|x| mode == MassMode::AllMassless || x.mass == Mass::Massless).collect();
    let mut best: Option<f64> = None;
    combinations(g.line_count(), l, |set| {
        let vecs: Vec<Vec<Ratio<i64>>> = set.iter().map(|&i| rows[i].clone()).collect();
        if rank(&vecs) < l {
            return;
        }
        for h in 1u32..1 << l {
            let sub: Vec<Vec<Ratio<i64>>> = (0..l).filter(|j| h >> j & 1 == 1).map(|j| vecs[j].clone()).collect();
            let r = sub.len();
            let determined = (0..g.line_count())
                .filter(|&i| massless[i])
                .filter(|&i| {
                    let mut ext = sub.clone();
                    ext.push(rows[i].clone());
                    rank(&ext) == r
                })
                .count();
            let v = d * r as f64 - 2.0 * determined as f64;
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    });
    Ok(best)
}

fn rank(vectors: &[Vec<Ratio<i64>>]) -> usize {
    let mut m: Vec<Vec<Ratio<i64>>> = vectors.to_vec();
    let cols = m.first().map_or(0, |r| r.len());
    let mut r = 0;
    for c in 0..cols {
        let Some(p) = (r..m.len()).find(|&i| m[i][c] != Ratio::from(0)) else { continue };
        m.swap(r, p);
        for i in 0..m.len() {
            if i != r && m[i][c] != Ratio::from(0) {
                let f = m[i][c] / m[r][c];
                for k in c..cols {
                    let sub = f * m[r][k];
                    m[i][k] -= sub;
                }
            }
        }
        r += 1;
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    ConvergentAllMu,
    /// I_G ≤ const. μ^{rate_exponent} |log μ|^{log_power}.
    ConvergentPositiveMuOnly { rate_exponent: f64, log_power: usize },
    DivergentEvenPositiveMu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeReport {
    pub d: f64,
    pub mu: f64,
    pub loops: usize,
    pub lines: usize,
    pub deg_0: Option<Degree>,
    pub deg_mu: Option<Degree>,
    pub uv_degree: Option<Degree>,
    /// As numerator and denominator.
    pub d_c: Option<(i64, i64)>,
    pub verdict: Verdict,
    /// μ^{deg_0} |log μ|^L at the given μ, for the second verdict with μ > 0.
    pub rate_bound: Option<f64>,
}

pub fn classify(g: &FeynmanGraph, d: f64, mu: f64) -> Result<DegreeReport, PowerCountError> {
    let deg_0 = degree_ir(g, d, MassMode::AllMassless)?;
    let deg_mu = degree_ir(g, d, MassMode::AsLabelled)?;
    let uv_degree = degree_uv(g, d)?;
    let d_c = critical_dimension(g)?.map(|r| (*r.numer(), *r.denom()));
    let v0 = deg_0.as_ref().map_or(f64::INFINITY, |x| x.value);
    let vm = deg_mu.as_ref().map_or(f64::INFINITY, |x| x.value);
    let loops = g.loops();
    let verdict = if v0 > 0.0 {
        Verdict::ConvergentAllMu
    } else if vm > 0.0 {
        Verdict::ConvergentPositiveMuOnly { rate_exponent: v0, log_power: loops }
    } else {
        Verdict::DivergentEvenPositiveMu
    };
    let rate_bound = match verdict {
        Verdict::ConvergentPositiveMuOnly { rate_exponent, log_power } if mu > 0.0 => Some(mu.powf(rate_exponent) * mu.ln().abs().powi(log_power as i32)),
        _ => None,
    };
    Ok(DegreeReport { d, mu, loops, lines: g.line_count(), deg_0, deg_mu, uv_degree, d_c, verdict, rate_bound })
}

/// Which construction to apply, and where.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Construction {
    /// Subdivide one line.
    C1 { line: usize },
    /// Subdivide two distinct lines and join the new vertices by a massless line.
    C2 { first: usize, second: usize },
    /// Two successive C2; the second pair indexes lines of the intermediate graph.
    C3 { first: (usize, usize), second: (usize, usize) },
}

fn subdivide(g: &mut FeynmanGraph, line: usize) -> usize {
    let v = g.vertices;
    g.vertices += 1;
    let l = g.lines[line];
    g.lines[line] = Line { a: l.a, b: v, mass: l.mass };
    g.lines.push(Line { a: v, b: l.b, mass: l.mass });
    v
}

pub fn construct(g: &FeynmanGraph, which: Construction) -> Result<FeynmanGraph, PowerCountError> {
    let check = |g: &FeynmanGraph, i: usize| {
        if i < g.line_count() {
            Ok(())
        } else {
            Err(PowerCountError::BadPlacement(format!("line {i} of {}", g.line_count())))
        }
    };
    let mut out = g.clone();
    match which {
        Construction::C1 { line } => {
            check(g, line)?;
            subdivide(&mut out, line);
        }
        Construction::C2 { first, second } => {
            check(g, first)?;
            check(g, second)?;
            if first == second {
                // Two vertices on one line make a bubble insertion, which the bound does not cover.
                return Err(PowerCountError::BadPlacement(format!("C2 needs two distinct lines, got {first} twice")));
            }
            let c = subdivide(&mut out, first);
            let d = subdivide(&mut out, second);
            out.lines.push(Line { a: c, b: d, mass: Mass::Massless });
        }
        Construction::C3 { first, second } => {
            let mid = construct(g, Construction::C2 { first: first.0, second: first.1 })?;
            out = construct(&mid, Construction::C2 { first: second.0, second: second.1 })?;
        }
    }
    Ok(out)
}

/// Lower bound on the IR degree after a construction, given the degree before.
pub fn construction_bound(which: Construction, before: f64, d: f64) -> f64 {
    match which {
        Construction::C1 { .. } => before - 2.0,
        Construction::C2 { .. } => before + (d - 6.0).min(0.0),
        Construction::C3 { .. } => before + 2.0 * (d - 6.0).min(0.0),
    }
}
