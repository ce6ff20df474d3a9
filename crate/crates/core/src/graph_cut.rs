//! Binary Gibbs energy over grid vertices, minimized exactly by max-flow.
//!
//! The energy is `Σ_v cost_{α_v}(v) + Σ_{(u,v), α_u ≠ α_v} w(u,v)` with
//! non-negative terminal costs and edge weights, which is submodular, so a
//! single minimum s-t cut gives the global optimum.

use std::collections::VecDeque;
use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::grid::{SparseGrid, VertexKey, NDIM};

#[derive(Debug, Clone, PartialEq)]
pub struct GraphParams {
    /// Data weight of the first window.
    pub lambda: f64,
    /// Weight of the propagated-mask term.
    pub lambda_i: f64,
    /// Weight of the disparity term once a previous mask exists.
    pub lambda_d: f64,
    /// Gaussian bandwidth per axis, in grid cells.
    pub sigma: [f64; NDIM],
    /// Charge each label its own-class affinity instead of the
    /// opposite-class affinity.
    pub literal_sign_convention: bool,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams {
            lambda: 1.0,
            lambda_i: 0.5,
            lambda_d: 0.5,
            sigma: [1.0; NDIM],
            literal_sign_convention: false,
        }
    }
}

impl GraphParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("lambda_i", self.lambda_i),
            ("lambda_d", self.lambda_d),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::bad_value(name, &v.to_string(), "finite value >= 0"));
            }
        }
        if let Some(s) = self.sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::bad_value("sigma", &s.to_string(), "finite value > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyMode {
    /// Disparity term only.
    FirstWindow,
    /// Disparity term plus the previous window's mask.
    Propagated,
}

/// `exp(-Σ_i (u_i - v_i)² / (2 σ_i²))`.
pub fn gaussian_affinity(u: &VertexKey, v: &VertexKey, sigma: &[f64; NDIM]) -> f64 {
    let e: f64 = (0..NDIM)
        .map(|i| {
            let d = u.coord(i) as f64 - v.coord(i) as f64;
            d * d / (2.0 * sigma[i] * sigma[i])
        })
        .sum();
    (-e).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGraph {
    pub nodes: Vec<VertexKey>,
    /// Cost of labeling each node background.
    pub cost0: Vec<f64>,
    /// Cost of labeling each node foreground.
    pub cost1: Vec<f64>,
    /// `(a, b, weight)` with `a < b`, paid when the endpoints disagree.
    pub edges: Vec<(u32, u32, f64)>,
}

impl EnergyGraph {
    /// Graph over anonymous nodes `0..n`, validated.
    pub fn from_parts(cost0: Vec<f64>, cost1: Vec<f64>, edges: Vec<(u32, u32, f64)>) -> Result<Self> {
        let nodes = (0..cost0.len() as u64).map(VertexKey).collect();
        let g = EnergyGraph {
            nodes,
            cost0,
            cost1,
            edges,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if self.cost0.len() != n || self.cost1.len() != n {
            return Err(Error::InvalidGraph("terminal cost count differs from node count".into()));
        }
        let ok = |c: f64| c.is_finite() && c >= 0.0;
        if !self.cost0.iter().chain(&self.cost1).all(|&c| ok(c)) {
            return Err(Error::InvalidGraph("terminal costs must be finite and >= 0".into()));
        }
        for &(a, b, w) in &self.edges {
            if a == b || a as usize >= n || b as usize >= n {
                return Err(Error::InvalidGraph(format!("bad edge endpoints ({a}, {b})")));
            }
            if !ok(w) {
                return Err(Error::InvalidGraph(format!("bad edge weight {w}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// One line per node `key cost0 cost1`, then one per edge
    /// `keyA keyB weight`.
    pub fn write_dump(&self, mut out: impl Write) -> io::Result<()> {
        for (i, k) in self.nodes.iter().enumerate() {
            writeln!(out, "{k} {} {}", self.cost0[i], self.cost1[i])?;
        }
        for &(a, b, w) in &self.edges {
            writeln!(out, "{} {} {w}", self.nodes[a as usize], self.nodes[b as usize])?;
        }
        Ok(())
    }
}

/// Terminal costs charge each label the affinity to the opposite class;
/// edges join occupied vertices one grid step apart with weight
/// `g(u, v) S(u) S(v)`.
pub fn build_graph(grid: &SparseGrid, params: &GraphParams, mode: EnergyMode) -> Result<EnergyGraph> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    params.validate()?;
    let n = grid.len();
    let mut cost0 = Vec::with_capacity(n);
    let mut cost1 = Vec::with_capacity(n);
    for (_, v) in &grid.vertices {
        let (fg, bg, mfg, mbg) = if params.literal_sign_convention {
            (v.a_bg, v.a_fg, v.m_bg, v.m_fg)
        } else {
            (v.a_fg, v.a_bg, v.m_fg, v.m_bg)
        };
        match mode {
            EnergyMode::FirstWindow => {
                cost1.push(params.lambda * bg);
                cost0.push(params.lambda * fg);
            }
            EnergyMode::Propagated => {
                cost1.push(params.lambda_d * bg + params.lambda_i * mbg);
                cost0.push(params.lambda_d * fg + params.lambda_i * mfg);
            }
        }
    }

    // with unit steps g collapses to one constant per axis
    let step_g: [f64; NDIM] = std::array::from_fn(|i| (-1.0 / (2.0 * params.sigma[i] * params.sigma[i])).exp());
    let dims = grid.params.dims;
    let mut edges = Vec::new();
    for (a, (key, va)) in grid.vertices.iter().enumerate() {
        for axis in 0..NDIM {
            if key.coord(axis) >= dims[axis] {
                continue;
            }
            if let Some(b) = grid.index_of(key.step_up(axis)) {
                let vb = &grid.vertices[b].1;
                edges.push((a as u32, b as u32, step_g[axis] * va.s * vb.s));
            }
        }
    }
    Ok(EnergyGraph {
        nodes: grid.vertices.iter().map(|(k, _)| *k).collect(),
        cost0,
        cost1,
        edges,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    pub data: f64,
    pub pairwise: f64,
    pub total: f64,
}

pub fn energy(graph: &EnergyGraph, labels: &[u8]) -> EnergyBreakdown {
    assert_eq!(labels.len(), graph.len(), "labeling must cover every node");
    let data: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| if l != 0 { graph.cost1[i] } else { graph.cost0[i] })
        .sum();
    let pairwise: f64 = graph
        .edges
        .iter()
        .filter(|&&(a, b, _)| labels[a as usize] != labels[b as usize])
        .map(|&(_, _, w)| w)
        .sum();
    EnergyBreakdown {
        data,
        pairwise,
        total: data + pairwise,
    }
}

#[derive(Debug, Clone, Copy)]
struct Arc {
    to: u32,
    rev: u32,
    cap: f64,
}

/// Residual network solved with Dinic's algorithm.
struct FlowNetwork {
    adj: Vec<Vec<Arc>>,
    level: Vec<i32>,
    cursor: Vec<usize>,
}

impl FlowNetwork {
    fn new(n: usize) -> Self {
        FlowNetwork {
            adj: vec![Vec::new(); n],
            level: vec![0; n],
            cursor: vec![0; n],
        }
    }

    fn add_edge(&mut self, a: usize, b: usize, cap_ab: f64, cap_ba: f64) {
        let ra = self.adj[b].len() as u32;
        let rb = self.adj[a].len() as u32;
        self.adj[a].push(Arc {
            to: b as u32,
            rev: ra,
            cap: cap_ab,
        });
        self.adj[b].push(Arc {
            to: a as u32,
            rev: rb,
            cap: cap_ba,
        });
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.fill(-1);
        self.level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for arc in &self.adj[u] {
                let v = arc.to as usize;
                if arc.cap > 0.0 && self.level[v] < 0 {
                    self.level[v] = self.level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        self.level[t] >= 0
    }

    /// Saturate the level graph with an explicit-stack DFS.
    fn blocking_flow(&mut self, s: usize, t: usize) -> f64 {
        self.cursor.fill(0);
        let mut total = 0.0;
        // arcs on the current path as (node, arc index)
        let mut path: Vec<(usize, usize)> = Vec::new();
        let mut u = s;
        loop {
            if u == t {
                let push = path
                    .iter()
                    .map(|&(n, i)| self.adj[n][i].cap)
                    .fold(f64::INFINITY, f64::min);
                let mut retreat = None;
                for (depth, &(n, i)) in path.iter().enumerate() {
                    let arc = self.adj[n][i];
                    self.adj[n][i].cap -= push;
                    self.adj[arc.to as usize][arc.rev as usize].cap += push;
                    if retreat.is_none() && self.adj[n][i].cap <= 0.0 {
                        retreat = Some(depth);
                    }
                }
                total += push;
                // the bottleneck arc is saturated exactly; resume at its tail
                path.truncate(retreat.expect("bottleneck arc saturates"));
                u = match path.last() {
                    Some(&(n, i)) => self.adj[n][i].to as usize,
                    None => s,
                };
                continue;
            }
            let mut advanced = false;
            while self.cursor[u] < self.adj[u].len() {
                let i = self.cursor[u];
                let arc = self.adj[u][i];
                let v = arc.to as usize;
                if arc.cap > 0.0 && self.level[v] == self.level[u] + 1 {
                    path.push((u, i));
                    u = v;
                    advanced = true;
                    break;
                }
                self.cursor[u] += 1;
            }
            if !advanced {
                // dead end: prune u from the level graph and back up
                self.level[u] = -1;
                match path.pop() {
                    Some((p, _)) => {
                        self.cursor[p] += 1;
                        u = p;
                    }
                    None => return total,
                }
            }
        }
    }

    fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut flow = 0.0;
        while self.bfs(s, t) {
            flow += self.blocking_flow(s, t);
        }
        flow
    }

    /// Nodes that can still reach `t` through residual arcs.
    fn reaches_sink(&self, t: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[t] = true;
        let mut queue = VecDeque::from([t]);
        while let Some(w) = queue.pop_front() {
            for arc in &self.adj[w] {
                let u = arc.to as usize;
                if !seen[u] && self.adj[u][arc.rev as usize].cap > 0.0 {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        seen
    }
}

/// Globally optimal labeling (1 = foreground).
///
/// Background sits on the source side. Among optimal labelings the one with
/// the largest background set is returned: a node is foreground only if it
/// can reach the sink in the final residual network.
pub fn min_cut(graph: &EnergyGraph) -> Vec<u8> {
    let n = graph.len();
    let (s, t) = (n, n + 1);
    let mut net = FlowNetwork::new(n + 2);
    for i in 0..n {
        // a shared offset on both terminals does not move the optimum
        let base = graph.cost0[i].min(graph.cost1[i]);
        let to_fg = graph.cost1[i] - base;
        let to_bg = graph.cost0[i] - base;
        if to_fg > 0.0 {
            net.add_edge(s, i, to_fg, 0.0);
        }
        if to_bg > 0.0 {
            net.add_edge(i, t, to_bg, 0.0);
        }
    }
    for &(a, b, w) in &graph.edges {
        if w > 0.0 {
            net.add_edge(a as usize, b as usize, w, w);
        }
    }
    net.max_flow(s, t);
    let sink_side = net.reaches_sink(t);
    (0..n).map(|i| sink_side[i] as u8).collect()
}
