//! Bond sampling and cluster decomposition.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{histogram_bin, SampleStats};
use crate::lattice::{canonical_offsets, LatticeSpec, TorusIndexer, WaveVector};

/// The generator of sample `index`: the seed keys the stream family and the
/// index selects the stream, so samples never depend on scheduling.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Union-find with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    pub fn reset(&mut self) {
        for (i, p) in self.parent.iter_mut().enumerate() {
            *p = i as u32;
        }
        self.size.fill(1);
    }

    #[inline]
    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let gp = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = gp;
            x = gp;
        }
        x
    }

    /// Returns false if already joined.
    #[inline]
    pub fn union(&mut self, a: u32, b: u32) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
        true
    }

    pub fn size_of_root(&self, r: u32) -> u32 {
        self.size[r as usize]
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }
}

/// Clusters of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterDecomposition {
    /// Cluster index of each site.
    pub labels: Vec<u32>,
    pub sizes: Vec<u32>,
    /// Σ_{x∈C} e^{ik·x}, indexed [cluster][k].
    pub fourier: Vec<Vec<Complex64>>,
}

/// Reusable sampler for one lattice and one list of wave vectors.
pub struct Sampler {
    /// Far endpoint of each bond.
    ends: Vec<u32>,
    bonds: u64,
    nk: usize,
    /// e^{ik·x} per site, row-major [site][k].
    phases: Vec<Complex64>,
    uf: UnionFind,
    /// Row of `sums` for each root of a cluster with at least two sites.
    slot: Vec<u32>,
    sums: Vec<Complex64>,
}

impl Sampler {
    pub fn new(spec: &LatticeSpec, k_list: &[WaveVector]) -> Self {
        let idx = TorusIndexer::new(spec);
        let v = idx.site_count();
        let nk = k_list.len();
        let mut phases = vec![Complex64::new(0.0, 0.0); v * nk];
        for site in 0..v {
            let c = idx.coords(site);
            for (j, k) in k_list.iter().enumerate() {
                let arg: f64 = k
                    .components()
                    .iter()
                    .zip(&c)
                    .map(|(&kc, &x)| kc * x as f64)
                    .sum();
                phases[site * nk + j] = Complex64::from_polar(1.0, arg);
            }
        }
        let offsets = canonical_offsets(spec);
        let ends: Vec<u32> = (0..v)
            .flat_map(|x| offsets.iter().map(move |o| (x, o)))
            .map(|(x, o)| idx.shift(x, o) as u32)
            .collect();
        let bonds = ends.len() as u64;
        Self {
            ends,
            bonds,
            nk,
            phases,
            uf: UnionFind::new(v),
            slot: vec![u32::MAX; v],
            sums: Vec::new(),
        }
    }

    pub fn volume(&self) -> usize {
        self.uf.len()
    }

    /// Occupies each bond with probability p, visiting only occupied bonds by
    /// geometric skips, and joins their endpoints.
    pub fn sample<R: Rng>(&mut self, p: f64, rng: &mut R) {
        self.uf.reset();
        if p <= 0.0 {
            return;
        }
        let no = (self.bonds / self.volume() as u64).max(1);
        let visit = |b: u64, this: &mut Self| {
            this.uf.union((b / no) as u32, this.ends[b as usize]);
        };
        if p >= 1.0 {
            for b in 0..self.bonds {
                visit(b, self);
            }
            return;
        }
        let log_q = (1.0 - p).ln();
        let mut b: u64 = 0;
        loop {
            let u: f64 = 1.0 - rng.gen::<f64>();
            let skip = (u.ln() / log_q).floor();
            if skip >= (self.bonds - b) as f64 {
                break;
            }
            b += skip as u64;
            visit(b, self);
            b += 1;
            if b >= self.bonds {
                break;
            }
        }
    }

    /// Fourier sums of non-singleton clusters, packed by first site.
    fn accumulate_fourier(&mut self) {
        let nk = self.nk;
        let v = self.volume();
        self.slot.fill(u32::MAX);
        self.sums.clear();
        if nk == 0 {
            return;
        }
        let mut rows = 0u32;
        for x in 0..v {
            let r = self.uf.find(x as u32);
            if self.uf.size_of_root(r) == 1 {
                continue;
            }
            let slot = &mut self.slot[r as usize];
            if *slot == u32::MAX {
                *slot = rows;
                rows += 1;
                self.sums
                    .resize(rows as usize * nk, Complex64::new(0.0, 0.0));
            }
            let row = *slot as usize * nk;
            for j in 0..nk {
                self.sums[row + j] += self.phases[x * nk + j];
            }
        }
    }

    fn fourier_of_root(&self, r: usize) -> &[Complex64] {
        let nk = self.nk;
        match self.slot[r] {
            u32::MAX => &self.phases[r * nk..(r + 1) * nk],
            row => &self.sums[row as usize * nk..(row as usize + 1) * nk],
        }
    }

    /// Clusters of the current sample, numbered by first site.
    pub fn decomposition(&mut self) -> ClusterDecomposition {
        self.accumulate_fourier();
        let v = self.volume();
        let mut index = vec![u32::MAX; v];
        let mut labels = vec![0u32; v];
        let mut sizes = Vec::new();
        let mut fourier = Vec::new();
        for x in 0..v {
            let r = self.uf.find(x as u32) as usize;
            if index[r] == u32::MAX {
                index[r] = sizes.len() as u32;
                sizes.push(self.uf.size_of_root(r as u32));
                fourier.push(self.fourier_of_root(r).to_vec());
            }
            labels[x] = index[r];
        }
        ClusterDecomposition {
            labels,
            sizes,
            fourier,
        }
    }

    /// Per-volume sums over clusters of |C| e^{−h|C|}, |C|² e^{−h|C|} and
    /// |Σ_{x∈C} e^{ik·x}|² e^{−h|C|}.
    pub(crate) fn stats(&mut self, h_grid: &[f64]) -> SampleStats {
        self.accumulate_fourier();
        let v = self.volume();
        let nk = self.nk;
        let nh = h_grid.len();
        let mut singles = 0u64;
        let mut big: Vec<(u32, u32)> = Vec::new();
        let mut histogram = vec![0u64; histogram_bin(v) + 1];
        for x in 0..v as u32 {
            if self.uf.find(x) == x {
                let s = self.uf.size_of_root(x);
                histogram[histogram_bin(s as usize)] += s as u64;
                if s == 1 {
                    singles += 1;
                } else {
                    big.push((s, x));
                }
            }
        }
        big.sort_unstable();
        let clusters = (singles as usize + big.len()) as f64;
        let vf = v as f64;
        let mut one_minus_m = vec![0.0; nh];
        let mut chi = vec![0.0; nh];
        let mut tau = vec![0.0; nh * nk];
        for (j, &h) in h_grid.iter().enumerate() {
            let w1 = (-h).exp() * singles as f64;
            one_minus_m[j] = w1;
            chi[j] = w1;
            for t in tau[j * nk..(j + 1) * nk].iter_mut() {
                *t = w1;
            }
        }
        let mut i = 0;
        let mut power = vec![0.0; nk];
        while i < big.len() {
            let s = big[i].0;
            let mut count = 0u64;
            power.fill(0.0);
            while i < big.len() && big[i].0 == s {
                let row = self.slot[big[i].1 as usize] as usize * nk;
                for (j, pw) in power.iter_mut().enumerate() {
                    *pw += self.sums[row + j].norm_sqr();
                }
                count += 1;
                i += 1;
            }
            let sf = s as f64;
            for (j, &h) in h_grid.iter().enumerate() {
                let w = (-h * sf).exp();
                one_minus_m[j] += count as f64 * sf * w;
                chi[j] += count as f64 * sf * sf * w;
                for (t, pw) in tau[j * nk..(j + 1) * nk].iter_mut().zip(&power) {
                    *t += pw * w;
                }
            }
        }
        for x in one_minus_m
            .iter_mut()
            .chain(chi.iter_mut())
            .chain(tau.iter_mut())
        {
            *x /= vf;
        }
        SampleStats {
            one_minus_m,
            chi,
            tau,
            clusters,
            histogram,
        }
    }
}

/// Clusters of one sample, with Fourier sums at `k_list`.
pub fn sample_clusters<R: Rng>(
    spec: &LatticeSpec,
    k_list: &[WaveVector],
    p: f64,
    rng: &mut R,
) -> ClusterDecomposition {
    let mut s = Sampler::new(spec, k_list);
    s.sample(p, rng);
    s.decomposition()
}
