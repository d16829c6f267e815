//! Checkable surrogates for the identifiability conditions: support cover,
//! connectivity of the overlap graph between strata, and strong connectivity
//! of the empirical stratum digraph (which decides whether the weight system
//! has a unique solution).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bias_model::{BiasingFunction, Observation, PooledData};
use crate::error::{Error, Result};

pub const DEFAULT_KAPPA: f64 = 1e-3;

/// Relative zero tolerance for Laplacian eigenvalues (scaled by `K`).
pub const LAPLACIAN_ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSource {
    UserDeclared,
    EmpiricalEstimate,
}

/// Undirected overlap graph: `k -- l` iff `E[omega_k omega_l] >= kappa`.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaGraph {
    kappa: f64,
    adjacency: Vec<Vec<bool>>,
    source: GraphSource,
}

impl KappaGraph {
    /// Symmetry is enforced and the diagonal cleared.
    pub fn from_adjacency(adjacency: Vec<Vec<bool>>, kappa: f64, source: GraphSource) -> Result<Self> {
        let k = adjacency.len();
        if adjacency.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidInput("adjacency matrix must be square".into()));
        }
        for a in 0..k {
            if adjacency[a][a] {
                return Err(Error::InvalidInput(format!("self-loop at vertex {a}")));
            }
            for b in 0..k {
                if adjacency[a][b] != adjacency[b][a] {
                    return Err(Error::InvalidInput(format!("asymmetric edge {a}-{b}")));
                }
            }
        }
        Ok(Self {
            kappa,
            adjacency,
            source,
        })
    }

    pub fn k(&self) -> usize {
        self.adjacency.len()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn source(&self) -> GraphSource {
        self.source
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a][b]
    }

    pub fn adjacency(&self) -> &[Vec<bool>] {
        &self.adjacency
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        let k = self.k();
        DMatrix::from_fn(k, k, |a, b| {
            if a == b {
                self.adjacency[a].iter().filter(|&&e| e).count() as f64
            } else if self.adjacency[a][b] {
                -1.0
            } else {
                0.0
            }
        })
    }
}

/// Directed stratum graph: `k -> l` iff some observation of sample `l` has
/// `omega_k > 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VardiDigraph {
    adjacency: Vec<Vec<bool>>,
}

impl VardiDigraph {
    pub fn from_adjacency(adjacency: Vec<Vec<bool>>) -> Self {
        Self { adjacency }
    }

    pub fn k(&self) -> usize {
        self.adjacency.len()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.adjacency[from][to]
    }

    pub fn adjacency(&self) -> &[Vec<bool>] {
        &self.adjacency
    }

    /// Strongly connected components (Tarjan), self-loops ignored.
    /// Components come out in reverse topological order.
    pub fn strongly_connected_components(&self) -> Vec<Vec<usize>> {
        Tarjan::new(self).run()
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.k() <= 1 || self.strongly_connected_components().len() == 1
    }
}

struct Tarjan<'g> {
    graph: &'g VardiDigraph,
    index: Vec<Option<usize>>,
    low: Vec<usize>,
    on_stack: Vec<bool>,
    stack: Vec<usize>,
    next: usize,
    out: Vec<Vec<usize>>,
}

impl<'g> Tarjan<'g> {
    fn new(graph: &'g VardiDigraph) -> Self {
        let k = graph.k();
        Self {
            graph,
            index: vec![None; k],
            low: vec![0; k],
            on_stack: vec![false; k],
            stack: Vec::new(),
            next: 0,
            out: Vec::new(),
        }
    }

    fn run(mut self) -> Vec<Vec<usize>> {
        for v in 0..self.graph.k() {
            if self.index[v].is_none() {
                self.visit(v);
            }
        }
        self.out
    }

    // K is the number of strata, so recursion depth is not a concern.
    fn visit(&mut self, v: usize) {
        self.index[v] = Some(self.next);
        self.low[v] = self.next;
        self.next += 1;
        self.stack.push(v);
        self.on_stack[v] = true;

        for w in 0..self.graph.k() {
            if w == v || !self.graph.has_edge(v, w) {
                continue;
            }
            match self.index[w] {
                None => {
                    self.visit(w);
                    self.low[v] = self.low[v].min(self.low[w]);
                }
                Some(iw) if self.on_stack[w] => self.low[v] = self.low[v].min(iw),
                Some(_) => {}
            }
        }

        if Some(self.low[v]) == self.index[v] {
            let mut comp = Vec::new();
            while let Some(w) = self.stack.pop() {
                self.on_stack[w] = false;
                comp.push(w);
                if w == v {
                    break;
                }
            }
            comp.sort_unstable();
            self.out.push(comp);
        }
    }
}

/// Every pooled observation is charged by at least one stratum.
pub fn check_support_cover(pooled: &PooledData) -> bool {
    (0..pooled.n()).all(|r| pooled.bias_row(r).iter().any(|&w| w > 0.0))
}

/// Support cover for arbitrary points (e.g. a held-out test set) against the
/// training-time biasing functions.
pub fn check_support_cover_points(functions: &[BiasingFunction], points: &[Observation]) -> bool {
    points
        .iter()
        .all(|z| functions.iter().any(|f| f.eval(z) > 0.0))
}

/// Empirical overlap graph `a_{k,l} = 1{ sum_z w(z) omega_k(z) omega_l(z) >= kappa }`.
///
/// Without `weights` the pooled empirical measure stands in for the unknown
/// target distribution; after solving, pass the debiasing weights instead.
pub fn build_empirical_kappa_graph(
    pooled: &PooledData,
    weights: Option<&[f64]>,
    kappa: f64,
) -> Result<KappaGraph> {
    if !(kappa > 0.0) {
        return Err(Error::BadKappa(kappa));
    }
    let n = pooled.n();
    let k = pooled.k();
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::InvalidInput(format!("{} weights for {n} pooled rows", w.len())));
        }
    }
    let uniform = 1.0 / n as f64;
    let mut moments = vec![0.0; k * k];
    for r in 0..n {
        let w = weights.map_or(uniform, |w| w[r]);
        let row = pooled.bias_row(r);
        for a in 0..k {
            for b in 0..k {
                moments[a * k + b] += w * row[a] * row[b];
            }
        }
    }
    let adjacency = (0..k)
        .map(|a| (0..k).map(|b| a != b && moments[a * k + b] >= kappa).collect())
        .collect();
    Ok(KappaGraph {
        kappa,
        adjacency,
        source: GraphSource::EmpiricalEstimate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Connectivity {
    pub connected: bool,
    pub zero_multiplicity: usize,
}

/// Connectivity from the Laplacian spectrum: the multiplicity of the zero
/// eigenvalue equals the number of connected components.
pub fn laplacian_connectivity(graph: &KappaGraph) -> Connectivity {
    let k = graph.k();
    if k == 0 {
        return Connectivity {
            connected: false,
            zero_multiplicity: 0,
        };
    }
    let eig = graph.laplacian().symmetric_eigenvalues();
    let tol = LAPLACIAN_ZERO_TOL * k as f64;
    let zero_multiplicity = eig.iter().filter(|l| l.abs() <= tol).count();
    Connectivity {
        connected: zero_multiplicity == 1,
        zero_multiplicity,
    }
}

/// Connected components by union-find; agrees with [`laplacian_connectivity`].
pub fn component_count(graph: &KappaGraph) -> usize {
    let k = graph.k();
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut components = k;
    for a in 0..k {
        for b in (a + 1)..k {
            if graph.has_edge(a, b) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra] = rb;
                    components -= 1;
                }
            }
        }
    }
    components
}

pub fn empirical_digraph(pooled: &PooledData) -> VardiDigraph {
    let k = pooled.k();
    let mut adjacency = vec![vec![false; k]; k];
    for (row, (l, _)) in pooled.row_origins().enumerate() {
        for (from, &w) in pooled.bias_row(row).iter().enumerate() {
            if w > 0.0 {
                adjacency[from][l] = true;
            }
        }
    }
    VardiDigraph { adjacency }
}

/// The empirical stratum digraph and whether it is strongly connected.
pub fn empirical_strong_connectivity(pooled: &PooledData) -> (VardiDigraph, bool) {
    let g = empirical_digraph(pooled);
    let sc = g.is_strongly_connected();
    (g, sc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub support_cover_ok: bool,
    pub laplacian_zero_multiplicity: usize,
    pub kappa_connected: bool,
    pub strongly_connected: bool,
    pub min_mean_omega: f64,
    pub messages: Vec<String>,
}

impl AssumptionReport {
    /// Support cover and strong connectivity, the conditions `validate` gates on.
    pub fn passes(&self) -> bool {
        self.support_cover_ok && self.strongly_connected
    }
}

/// Run every check. With `weights` (e.g. debiasing weights after a solve),
/// the overlap graph and `min_mean_omega` use them instead of `1/n`.
pub fn assess(pooled: &PooledData, kappa: f64, weights: Option<&[f64]>) -> Result<AssumptionReport> {
    let mut messages = Vec::new();
    let support_cover_ok = check_support_cover(pooled);
    if !support_cover_ok {
        messages.push("some pooled observation has zero weight under every biasing function".into());
    }

    let graph = build_empirical_kappa_graph(pooled, weights, kappa)?;
    let conn = laplacian_connectivity(&graph);
    if !conn.connected {
        messages.push(format!(
            "overlap graph at kappa={kappa} has {} components",
            conn.zero_multiplicity
        ));
    }

    let (digraph, strongly_connected) = empirical_strong_connectivity(pooled);
    if !strongly_connected {
        let comps = digraph.strongly_connected_components();
        messages.push(format!(
            "stratum digraph is not strongly connected; components {comps:?}: the weight system has no unique solution"
        ));
    }

    let n = pooled.n();
    let k = pooled.k();
    let uniform = 1.0 / n as f64;
    let mut means = vec![0.0; k];
    for r in 0..n {
        let w = weights.map_or(uniform, |w| w[r]);
        for (m, &o) in means.iter_mut().zip(pooled.bias_row(r)) {
            *m += w * o;
        }
    }
    let min_mean_omega = means.iter().copied().fold(f64::INFINITY, f64::min);

    Ok(AssumptionReport {
        support_cover_ok,
        laplacian_zero_multiplicity: conn.zero_multiplicity,
        kappa_connected: conn.connected,
        strongly_connected,
        min_mean_omega,
        messages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bias_model::{evaluate_bias_matrix, BiasingFunction};

    fn interval(a: f64, b: f64) -> BiasingFunction {
        BiasingFunction::indicator(format!("[{a},{b}]"), move |z| (a..=b).contains(&z.features[0]))
    }

    fn scalars(v: &[f64]) -> Vec<Observation> {
        v.iter().copied().map(Observation::scalar).collect()
    }

    fn graph(k: usize, edges: &[(usize, usize)]) -> KappaGraph {
        let mut adj = vec![vec![false; k]; k];
        for &(a, b) in edges {
            adj[a][b] = true;
            adj[b][a] = true;
        }
        KappaGraph::from_adjacency(adj, 1.0, GraphSource::UserDeclared).unwrap()
    }

    #[test]
    fn support_cover_cases() {
        let p = evaluate_bias_matrix(vec![scalars(&[1.0, -4.0])], vec![BiasingFunction::whole_space()]).unwrap();
        assert!(check_support_cover(&p));

        let fns = vec![interval(0.0, 1.0), interval(2.0, 3.0)];
        let p = evaluate_bias_matrix(vec![scalars(&[0.5]), scalars(&[2.5])], fns.clone()).unwrap();
        assert!(check_support_cover(&p));
        assert!(check_support_cover_points(&fns, &scalars(&[0.1, 2.9])));
        assert!(!check_support_cover_points(&fns, &scalars(&[0.1, 1.5])));
    }

    #[test]
    fn kappa_graph_unbiased_and_disjoint() {
        let p = evaluate_bias_matrix(
            vec![scalars(&[0.0, 1.0]), scalars(&[2.0])],
            vec![BiasingFunction::whole_space(), BiasingFunction::whole_space()],
        )
        .unwrap();
        let g = build_empirical_kappa_graph(&p, Some(&[0.2, 0.3, 0.5]), 0.5).unwrap();
        assert!(g.has_edge(0, 1));

        let p = evaluate_bias_matrix(
            vec![scalars(&[0.5]), scalars(&[2.5])],
            vec![interval(0.0, 1.0), interval(2.0, 3.0)],
        )
        .unwrap();
        for kappa in [1e-12, 1e-3, 0.5] {
            assert!(!build_empirical_kappa_graph(&p, None, kappa).unwrap().has_edge(0, 1));
        }
        assert_eq!(build_empirical_kappa_graph(&p, None, 0.0).unwrap_err(), Error::BadKappa(0.0));
    }

    #[test]
    fn laplacian_small_graphs() {
        assert_eq!(
            laplacian_connectivity(&graph(3, &[(0, 1), (1, 2), (0, 2)])),
            Connectivity { connected: true, zero_multiplicity: 1 }
        );
        assert_eq!(
            laplacian_connectivity(&graph(2, &[])),
            Connectivity { connected: false, zero_multiplicity: 2 }
        );
        let path = graph(4, &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(component_count(&path), 1);
        assert_eq!(laplacian_connectivity(&path).zero_multiplicity, 1);
    }

    #[test]
    fn tarjan_components() {
        // 0 -> 1 -> 2 -> 0, 3 -> 0
        let mut adj = vec![vec![false; 4]; 4];
        adj[0][1] = true;
        adj[1][2] = true;
        adj[2][0] = true;
        adj[3][0] = true;
        let g = VardiDigraph::from_adjacency(adj);
        let mut comps = g.strongly_connected_components();
        comps.sort();
        assert_eq!(comps, vec![vec![0, 1, 2], vec![3]]);
        assert!(!g.is_strongly_connected());
    }

    #[test]
    fn digraph_single_stratum() {
        let p = evaluate_bias_matrix(vec![scalars(&[0.0])], vec![BiasingFunction::whole_space()]).unwrap();
        assert!(empirical_strong_connectivity(&p).1);
    }

    #[test]
    fn report_flags_disconnection() {
        let p = evaluate_bias_matrix(
            vec![scalars(&[0.5]), scalars(&[2.5])],
            vec![interval(0.0, 1.0), interval(2.0, 3.0)],
        )
        .unwrap();
        let r = assess(&p, DEFAULT_KAPPA, None).unwrap();
        assert!(r.support_cover_ok);
        assert!(!r.strongly_connected);
        assert!(!r.kappa_connected);
        assert_eq!(r.laplacian_zero_multiplicity, 2);
        assert!(!r.passes());
        assert_eq!(r.min_mean_omega, 0.5);
        let json = serde_json::to_value(&r).unwrap();
        for key in [
            "support_cover_ok",
            "laplacian_zero_multiplicity",
            "kappa_connected",
            "strongly_connected",
            "min_mean_omega",
            "messages",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn rejects_asymmetric_adjacency() {
        let adj = vec![vec![false, true], vec![false, false]];
        assert!(KappaGraph::from_adjacency(adj, 1.0, GraphSource::UserDeclared).is_err());
    }
}
