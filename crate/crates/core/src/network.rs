//! Topologies, combination matrices and the matrix-power weight kernel.
//!
//! Everything downstream consumes the kernel rows b_{k,l}(i) (the rows of
//! A^i), the Perron vector p and the mixing rate lambda2, so this module is
//! the single place where the network enters the math.

use crate::error::{Error, Result};

/// Undirected agent graph. Self-loops are implied: every agent belongs to its
/// own neighborhood, so `degree` below counts the agent itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    s: usize,
    adj: Vec<bool>, // row-major S x S, diagonal always true
}

impl Topology {
    /// Builds from an undirected edge list (0-based). Self-loops in the input
    /// are ignored; they are implied. Fails on out-of-range endpoints or a
    /// disconnected graph.
    pub fn from_edges(s: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if s == 0 {
            return Err(Error::InvalidParam {
                name: "S",
                reason: "agent count must be positive".into(),
            });
        }
        let mut adj = vec![false; s * s];
        for k in 0..s {
            adj[k * s + k] = true;
        }
        for &(a, b) in edges {
            if a >= s || b >= s {
                return Err(Error::InvalidParam {
                    name: "edges",
                    reason: format!("edge ({a},{b}) out of range for S={s}"),
                });
            }
            adj[a * s + b] = true;
            adj[b * s + a] = true;
        }
        let t = Topology { s, adj };
        t.check_connected()?;
        Ok(t)
    }

    /// Cycle over S agents (S >= 3).
    pub fn ring(s: usize) -> Result<Self> {
        if s < 3 {
            return Err(Error::InvalidParam {
                name: "S",
                reason: "ring needs at least 3 agents".into(),
            });
        }
        let edges: Vec<_> = (0..s).map(|k| (k, (k + 1) % s)).collect();
        Self::from_edges(s, &edges)
    }

    /// Agent 0 is the hub; all others are leaves.
    pub fn star(s: usize) -> Result<Self> {
        let edges: Vec<_> = (1..s).map(|k| (0, k)).collect();
        Self::from_edges(s, &edges)
    }

    /// Chain 0-1-...-(S-1).
    pub fn path(s: usize) -> Result<Self> {
        let edges: Vec<_> = (1..s).map(|k| (k - 1, k)).collect();
        Self::from_edges(s, &edges)
    }

    /// Complete graph.
    pub fn full(s: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for a in 0..s {
            for b in (a + 1)..s {
                edges.push((a, b));
            }
        }
        Self::from_edges(s, &edges)
    }

    /// The documented 10-node reference topology used by the shipped example
    /// configs: a threshold graph whose vertices {1,3,5,7,8,9} each connect to
    /// every lower-numbered vertex. Simple degrees [6,6,5,7,4,8,3,9,9,9], so
    /// agents span the whole connectivity range while the graph keeps
    /// diameter 2 and a healthy spectral gap under both combination rules.
    pub fn reference() -> Self {
        let mut edges = Vec::new();
        for &j in &[1usize, 3, 5, 7, 8, 9] {
            for i in 0..j {
                edges.push((i, j));
            }
        }
        Self::from_edges(10, &edges).expect("reference topology is connected")
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn is_neighbor(&self, k: usize, l: usize) -> bool {
        self.adj[k * self.s + l]
    }

    /// Neighborhood size n_k, counting the agent itself.
    pub fn degree(&self, k: usize) -> usize {
        (0..self.s).filter(|&l| self.adj[k * self.s + l]).count()
    }

    fn check_connected(&self) -> Result<()> {
        let mut seen = vec![false; self.s];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(k) = stack.pop() {
            let row = &self.adj[k * self.s..(k + 1) * self.s];
            for (l, (&edge, flag)) in row.iter().zip(seen.iter_mut()).enumerate() {
                if edge && !*flag {
                    *flag = true;
                    stack.push(l);
                }
            }
        }
        match seen.iter().position(|&v| !v) {
            Some(agent) => Err(Error::Disconnected { agent }),
            None => Ok(()),
        }
    }
}

/// Right-stochastic cooperation weights A. Rows sum to one, support respects
/// the topology, and the second eigenvalue magnitude is strictly below one
/// (checked at construction, so a held value is always usable downstream).
#[derive(Debug, Clone)]
pub struct CombinationMatrix {
    s: usize,
    entries: Vec<f64>, // row-major
    lambda2: f64,
    perron: Vec<f64>,
}

const ROW_SUM_TOL: f64 = 1e-12;

impl CombinationMatrix {
    /// Validates an explicit matrix against its topology: row sums within
    /// 1e-12, no weight outside a neighborhood, no negative weight, and a
    /// strict spectral gap.
    pub fn explicit(topology: &Topology, entries: Vec<f64>) -> Result<Self> {
        let s = topology.s();
        if entries.len() != s * s {
            return Err(Error::InvalidParam {
                name: "entries",
                reason: format!("expected {} values, got {}", s * s, entries.len()),
            });
        }
        for k in 0..s {
            let mut sum = 0.0;
            for l in 0..s {
                let a = entries[k * s + l];
                if a < 0.0 || !a.is_finite() {
                    return Err(Error::InvalidParam {
                        name: "entries",
                        reason: format!("weight {a} at ({k},{l}) is not a finite nonnegative real"),
                    });
                }
                if a != 0.0 && !topology.is_neighbor(k, l) {
                    return Err(Error::SupportViolation { k, l, value: a });
                }
                sum += a;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NotStochastic { row: k, sum });
            }
        }
        Self::finish(s, entries)
    }

    fn finish(s: usize, entries: Vec<f64>) -> Result<Self> {
        let lambda2 = second_eigenvalue_magnitude(s, &entries);
        if !(lambda2 < 1.0 - 1e-12) {
            return Err(Error::SpectralGap { lambda2 });
        }
        let perron = perron_raw(s, &entries, PERRON_TOL, PERRON_CAP)?;
        if perron.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::InvalidParam {
                name: "perron",
                reason: "Perron vector has a nonpositive component".into(),
            });
        }
        Ok(CombinationMatrix {
            s,
            entries,
            lambda2,
            perron,
        })
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.entries[k * self.s + l]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.entries[k * self.s..(k + 1) * self.s]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Second largest eigenvalue magnitude, computed at construction.
    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    /// Left Perron vector (stationary weights), computed at construction.
    pub fn perron(&self) -> &[f64] {
        &self.perron
    }

    /// Column sums also equal one within 1e-12.
    pub fn is_doubly_stochastic(&self) -> bool {
        (0..self.s).all(|l| {
            let sum: f64 = (0..self.s).map(|k| self.entries[k * self.s + l]).sum();
            (sum - 1.0).abs() <= ROW_SUM_TOL
        })
    }
}

/// Metropolis weights: a_{k,l} = 1/max(n_k, n_l) for neighbors l != k, with
/// the diagonal absorbing the residual. Always doubly stochastic.
pub fn build_metropolis(topology: &Topology) -> Result<CombinationMatrix> {
    let s = topology.s();
    let deg: Vec<usize> = (0..s).map(|k| topology.degree(k)).collect();
    let mut entries = vec![0.0; s * s];
    for k in 0..s {
        let mut off = 0.0;
        for l in 0..s {
            if l != k && topology.is_neighbor(k, l) {
                let a = 1.0 / deg[k].max(deg[l]) as f64;
                entries[k * s + l] = a;
                off += a;
            }
        }
        entries[k * s + k] = 1.0 - off;
    }
    if s == 1 {
        // Degenerate one-agent network: A = [1] has no second eigenvalue.
        return Ok(CombinationMatrix {
            s,
            entries,
            lambda2: 0.0,
            perron: vec![1.0],
        });
    }
    CombinationMatrix::finish(s, entries)
}

/// Uniform averaging: a_{k,l} = 1/n_k over the closed neighborhood. Right-
/// but not doubly stochastic; Perron weights become n_l / sum_m n_m.
pub fn build_uniform_averaging(topology: &Topology) -> Result<CombinationMatrix> {
    let s = topology.s();
    let mut entries = vec![0.0; s * s];
    for k in 0..s {
        let w = 1.0 / topology.degree(k) as f64;
        for l in 0..s {
            if topology.is_neighbor(k, l) {
                entries[k * s + l] = w;
            }
        }
    }
    if s == 1 {
        return Ok(CombinationMatrix {
            s,
            entries,
            lambda2: 0.0,
            perron: vec![1.0],
        });
    }
    CombinationMatrix::finish(s, entries)
}

const EIGEN_DENSE_LIMIT: usize = 64;

/// |lambda_2|: dense eigendecomposition at desk scale, deflated power
/// iteration beyond it.
fn second_eigenvalue_magnitude(s: usize, entries: &[f64]) -> f64 {
    if s == 1 {
        return 0.0;
    }
    if s <= EIGEN_DENSE_LIMIT {
        // Capped Schur. The uncapped variant can cycle forever on spectra
        // with paired +/-lambda (a 4-ring under Metropolis weights trips
        // this), so give it a generous budget and fall through to the
        // deflated power iteration below if it gives up.
        let m = nalgebra::DMatrix::from_row_slice(s, s, entries);
        if let Some(schur) = nalgebra::linalg::Schur::try_new(m, f64::EPSILON, 100 * s) {
            let mut mags: Vec<f64> = schur.complex_eigenvalues().iter().map(|z| z.norm()).collect();
            mags.sort_by(|a, b| b.total_cmp(a));
            return mags[1];
        }
    }
    // Project out the Perron pair (right eigenvector 1, left p) and
    // power-iterate what is left. p itself comes from power iteration,
    // which converges for any stochastic matrix with a spectral gap; if there
    // is no gap the deflated iterate keeps norm ~1 and we report ~1.
    let p = match perron_raw(s, entries, 1e-13, 200_000) {
        Ok(p) => p,
        Err(_) => return 1.0,
    };
    let mut v: Vec<f64> = (0..s).map(|i| ((i * 2654435761) % 1000) as f64 / 1000.0 - 0.5).collect();
    let deflate = |v: &mut [f64]| {
        let c: f64 = v.iter().zip(&p).map(|(x, pi)| x * pi).sum();
        for x in v.iter_mut() {
            *x -= c; // subtract c * 1, removing the 1-eigenvector component against p
        }
    };
    deflate(&mut v);
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let mut w = vec![0.0; s];
        for k in 0..s {
            let row = &entries[k * s..(k + 1) * s];
            w[k] = row.iter().zip(v.iter()).map(|(a, x)| a * x).sum();
        }
        deflate(&mut w);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        for x in w.iter_mut() {
            *x /= norm;
        }
        if (norm - lambda).abs() <= 1e-12 * norm.max(1.0) {
            return norm;
        }
        lambda = norm;
        v = w;
    }
    lambda
}

fn perron_raw(s: usize, entries: &[f64], tol: f64, cap: usize) -> Result<Vec<f64>> {
    let mut p = vec![1.0 / s as f64; s];
    let mut residual = f64::INFINITY;
    for _ in 0..cap {
        let mut next = vec![0.0; s];
        for k in 0..s {
            let pk = p[k];
            let row = &entries[k * s..(k + 1) * s];
            for l in 0..s {
                next[l] += pk * row[l];
            }
        }
        let total: f64 = next.iter().sum();
        for x in next.iter_mut() {
            *x /= total;
        }
        residual = next
            .iter()
            .zip(&p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        p = next;
        if residual <= tol {
            return Ok(p);
        }
    }
    Err(Error::PowerIterationDiverged { tol, cap, residual })
}

const PERRON_TOL: f64 = 1e-13;
const PERRON_CAP: usize = 200_000;

/// Left Perron eigenvector: pA = p, entries positive, summing to one.
/// Computed once at matrix construction; this accessor clones it.
pub fn perron_vector(a: &CombinationMatrix) -> Result<Vec<f64>> {
    Ok(a.perron.to_vec())
}

/// Cached powers B_i = A^i with the Perron vector, mixing rate and series
/// truncation horizon. Immutable after construction; rows past the cache
/// cutoff are served from p (they agree with it to working precision).
#[derive(Debug, Clone)]
pub struct WeightKernel {
    s: usize,
    mu: f64,
    trunc_tol: f64,
    horizon: usize,
    powers: Vec<Vec<f64>>, // B_1..B_cutoff, row-major
    perron: Vec<f64>,
    lambda2: f64,
    decay_c: f64,
}

/// Rows beyond this distance from 1p are not stored: at 1e-14 the kernel row
/// and p are interchangeable at working precision.
const POWER_CACHE_CUTOFF: f64 = 1e-14;

pub const DEFAULT_TRUNC_TOL: f64 = 1e-12;

/// Builds the kernel for step-size mu: horizon N = ceil(ln trunc_tol / ln(1-mu))
/// so the neglected geometric tail weight (1-mu)^N is at most trunc_tol.
pub fn build_weight_kernel(a: &CombinationMatrix, mu: f64, trunc_tol: f64) -> Result<WeightKernel> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::InvalidParam {
            name: "mu",
            reason: format!("step size {mu} outside (0,1)"),
        });
    }
    if !(trunc_tol > 0.0 && trunc_tol < 1.0) {
        return Err(Error::InvalidParam {
            name: "trunc_tol",
            reason: format!("truncation tolerance {trunc_tol} outside (0,1)"),
        });
    }
    let s = a.s();
    let perron = a.perron().to_vec();
    let horizon = (trunc_tol.ln() / (1.0 - mu).ln()).ceil() as usize;
    let horizon = horizon.max(1);

    let mut powers: Vec<Vec<f64>> = Vec::new();
    let mut dists: Vec<f64> = Vec::new();
    let mut cur = a.entries().to_vec();
    for _ in 1..=horizon {
        let dist = max_perron_distance(s, &cur, &perron);
        powers.push(cur.clone());
        dists.push(dist);
        if dist < POWER_CACHE_CUTOFF {
            break;
        }
        cur = multiply(s, &cur, a.entries());
    }
    // Decay constant for the geometric bound |b_{k,l}(i) - p_l| <= C lambda2^i.
    // Fit as the max over cached powers: a single-point fit at i = 1 can be
    // beaten by transient growth when the matrix is far from normal.
    // lambda2 = 0 (rank-one) leaves the bound vacuous; use C = 0.
    let lambda2 = a.lambda2();
    let decay_c = if lambda2 > 0.0 {
        let mut c = 0.0f64;
        let mut pw = lambda2;
        for &d in &dists {
            c = c.max(d / pw);
            pw *= lambda2;
        }
        c
    } else {
        0.0
    };
    Ok(WeightKernel {
        s,
        mu,
        trunc_tol,
        horizon,
        powers,
        perron,
        lambda2,
        decay_c,
    })
}

fn multiply(s: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; s * s];
    for k in 0..s {
        for m in 0..s {
            let xkm = x[k * s + m];
            if xkm == 0.0 {
                continue;
            }
            let yrow = &y[m * s..(m + 1) * s];
            let orow = &mut out[k * s..(k + 1) * s];
            for l in 0..s {
                orow[l] += xkm * yrow[l];
            }
        }
    }
    out
}

fn max_perron_distance(s: usize, m: &[f64], p: &[f64]) -> f64 {
    let mut d = 0.0f64;
    for k in 0..s {
        for l in 0..s {
            d = d.max((m[k * s + l] - p[l]).abs());
        }
    }
    d
}

impl WeightKernel {
    pub fn s(&self) -> usize {
        self.s
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn trunc_tol(&self) -> f64 {
        self.trunc_tol
    }

    /// Series truncation horizon N: sums over i run 1..=N.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of matrix powers actually stored before the cache cutoff.
    pub fn cached_powers(&self) -> usize {
        self.powers.len()
    }

    pub fn perron(&self) -> &[f64] {
        &self.perron
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    /// Fitted constant of the geometric mixing bound max|b(i) - p| <= C lambda2^i.
    pub fn decay_constant(&self) -> f64 {
        self.decay_c
    }

    /// Row k of B_i = A^i for i in 1..=horizon. Beyond the stored powers the
    /// row has converged to the Perron vector and is served from it.
    pub fn row(&self, k: usize, i: usize) -> &[f64] {
        debug_assert!(i >= 1 && i <= self.horizon);
        match self.powers.get(i - 1) {
            Some(m) => &m[k * self.s..(k + 1) * self.s],
            None => &self.perron,
        }
    }
}
