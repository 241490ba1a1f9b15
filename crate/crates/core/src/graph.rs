//! Cross-modal tweet graph: an undirected edge `{i, j}` exists when any enabled
//! similarity channel between the two tweets reaches the threshold.
//!
//! For the canonical orientation `i < j` the channels are
//! `II = cos(v_i, v_j)`, `TT = cos(t_i, t_j)`, `IT = cos(v_i, t_j)` and
//! `TI = cos(t_i, v_j)`, where `v` is the image and `t` the text embedding.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::datamodel::Dataset;
use crate::ndops::EdgeIndex;

#[derive(Error, Debug)]
pub enum GraphError {
    #[error("zero vector in {modality} embedding of record {index}")]
    ZeroVector { modality: &'static str, index: usize },
    #[error("vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("cross-modal channel {channel} requested but d_img={d_img} != d_txt={d_txt}")]
    DimMismatchCross {
        channel: Channel,
        d_img: usize,
        d_txt: usize,
    },
    #[error("node {index} out of range for graph with {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("{{{0}, {1}}} is not an edge")]
    NotAnEdge(usize, usize),
    #[error("invalid similarity config: {0}")]
    InvalidConfig(String),
    #[error("unknown channel {0:?} (expected II, TT, IT or TI)")]
    UnknownChannel(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    II,
    TT,
    IT,
    TI,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::II, Channel::TT, Channel::IT, Channel::TI];

    fn bit(self) -> u8 {
        1 << self as u8
    }

    pub fn is_cross(self) -> bool {
        matches!(self, Channel::IT | Channel::TI)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::II => "II",
            Channel::TT => "TT",
            Channel::IT => "IT",
            Channel::TI => "TI",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "II" => Ok(Channel::II),
            "TT" => Ok(Channel::TT),
            "IT" => Ok(Channel::IT),
            "TI" => Ok(Channel::TI),
            _ => Err(GraphError::UnknownChannel(s.to_string())),
        }
    }
}

/// Small bit set over [`Channel`].
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ChannelSet(u8);

impl ChannelSet {
    pub const EMPTY: ChannelSet = ChannelSet(0);
    pub const ALL: ChannelSet = ChannelSet(0b1111);

    pub fn insert(&mut self, c: Channel) {
        self.0 |= c.bit();
    }

    pub fn remove(&mut self, c: Channel) {
        self.0 &= !c.bit();
    }

    pub fn contains(self, c: Channel) -> bool {
        self.0 & c.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_superset(self, other: ChannelSet) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn iter(self) -> impl Iterator<Item = Channel> {
        Channel::ALL.into_iter().filter(move |c| self.contains(*c))
    }
}

impl FromIterator<Channel> for ChannelSet {
    fn from_iter<T: IntoIterator<Item = Channel>>(iter: T) -> Self {
        let mut s = ChannelSet::EMPTY;
        for c in iter {
            s.insert(c);
        }
        s
    }
}

impl fmt::Debug for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.iter().map(Channel::as_str).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for ChannelSet {
    type Err = GraphError;

    /// Comma-separated channel names, e.g. `II,TT,IT,TI`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(Channel::from_str)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityConfig {
    pub tau: f64,
    pub channels_enabled: ChannelSet,
    /// When set, cross channels with `d_img != d_txt` are an error instead of
    /// being skipped with a warning.
    pub strict_channels: bool,
}

impl SimilarityConfig {
    pub fn new(tau: f64) -> Self {
        SimilarityConfig {
            tau,
            channels_enabled: ChannelSet::ALL,
            strict_channels: false,
        }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if !self.tau.is_finite() || self.tau <= 0.0 || self.tau > 1.0 {
            return Err(GraphError::InvalidConfig(format!(
                "tau must lie in (0, 1], got {}",
                self.tau
            )));
        }
        if self.channels_enabled.is_empty() {
            return Err(GraphError::InvalidConfig("no channels enabled".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub channels: ChannelSet,
}

/// Undirected graph without self-loops. Edges are stored once with `i < j`,
/// sorted lexicographically; adjacency lists are sorted ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossModalGraph {
    n: usize,
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl CrossModalGraph {
    /// Builds a graph from arbitrary edges. Duplicate pairs merge their
    /// channel sets; self-loops and out-of-range endpoints are rejected.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self, GraphError> {
        let mut canon: Vec<Edge> = Vec::new();
        for e in edges {
            let (i, j) = (e.i.min(e.j), e.i.max(e.j));
            if j >= n {
                return Err(GraphError::IndexOutOfRange { index: j, n });
            }
            if i == j {
                return Err(GraphError::InvalidConfig(format!("self-loop on {i}")));
            }
            if e.channels.is_empty() {
                return Err(GraphError::InvalidConfig(format!(
                    "edge {{{i}, {j}}} has no channel"
                )));
            }
            canon.push(Edge {
                i,
                j,
                channels: e.channels,
            });
        }
        canon.sort_by_key(|e| (e.i, e.j));
        let mut merged: Vec<Edge> = Vec::with_capacity(canon.len());
        for e in canon {
            match merged.last_mut() {
                Some(last) if last.i == e.i && last.j == e.j => {
                    last.channels = ChannelSet(last.channels.0 | e.channels.0);
                }
                _ => merged.push(e),
            }
        }
        Ok(Self::from_sorted(n, merged))
    }

    /// Unlabelled edges (channel `II`), convenient for hand-built graphs.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self, GraphError> {
        Self::from_edges(
            n,
            pairs.iter().map(|&(i, j)| Edge {
                i,
                j,
                channels: [Channel::II].into_iter().collect(),
            }),
        )
    }

    pub fn edgeless(n: usize) -> Self {
        Self::from_sorted(n, Vec::new())
    }

    fn from_sorted(n: usize, edges: Vec<Edge>) -> Self {
        let mut adj = vec![Vec::new(); n];
        for e in &edges {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        CrossModalGraph { n, edges, adj }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adj.iter().map(Vec::len).collect()
    }

    pub fn neighbors(&self, i: usize) -> Result<&[usize], GraphError> {
        self.adj
            .get(i)
            .map(Vec::as_slice)
            .ok_or(GraphError::IndexOutOfRange { index: i, n: self.n })
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n && self.adj[i].binary_search(&j).is_ok()
    }

    pub fn channels(&self, i: usize, j: usize) -> Option<ChannelSet> {
        let key = (i.min(j), i.max(j));
        self.edges
            .binary_search_by_key(&key, |e| (e.i, e.j))
            .ok()
            .map(|k| self.edges[k].channels)
    }

    /// `1 / sqrt(|N_i| |N_j|)` for an existing edge.
    pub fn norm_coeff(&self, i: usize, j: usize) -> Result<f64, GraphError> {
        if i >= self.n || j >= self.n || !self.has_edge(i, j) {
            return Err(GraphError::NotAnEdge(i, j));
        }
        Ok(1.0 / ((self.degree(i) * self.degree(j)) as f64).sqrt())
    }

    /// `2|E| / n`, the mean number of connected tweets per node.
    pub fn avg_connections(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            2.0 * self.edges.len() as f64 / self.n as f64
        }
    }

    /// Subgraph induced by `nodes`; node `k` of the result is `nodes[k]`.
    pub fn induced(&self, nodes: &[usize]) -> CrossModalGraph {
        let mut remap = vec![usize::MAX; self.n];
        for (k, &v) in nodes.iter().enumerate() {
            remap[v] = k;
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| remap[e.i] != usize::MAX && remap[e.j] != usize::MAX)
            .map(|e| Edge {
                i: remap[e.i].min(remap[e.j]),
                j: remap[e.i].max(remap[e.j]),
                channels: e.channels,
            });
        Self::from_edges(nodes.len(), edges).expect("remapped edges stay valid")
    }

    /// Both orientations of every edge, grouped by receiving node.
    pub fn directed_edges(&self) -> DirectedEdges {
        let m = 2 * self.edges.len();
        let (mut recv, mut send, mut coeff) =
            (Vec::with_capacity(m), Vec::with_capacity(m), Vec::with_capacity(m));
        for (i, nbrs) in self.adj.iter().enumerate() {
            for &j in nbrs {
                recv.push(i);
                send.push(j);
                coeff.push(1.0 / ((nbrs.len() * self.adj[j].len()) as f64).sqrt());
            }
        }
        DirectedEdges {
            n: self.n,
            recv: recv.into(),
            send: send.into(),
            coeff: coeff.into(),
        }
    }
}

/// Message-passing index: for `k` in `0..len`, node `recv[k]` receives from
/// `send[k]` with GCN normalisation `coeff[k]`.
#[derive(Clone, Debug)]
pub struct DirectedEdges {
    pub n: usize,
    pub recv: Arc<[usize]>,
    pub send: Arc<[usize]>,
    pub coeff: Arc<[f64]>,
}

impl DirectedEdges {
    /// The normalised neighbour sum `Σ_j coeff_ij x_j` as a tape index.
    pub fn gcn_index(&self) -> Arc<EdgeIndex> {
        Arc::new(EdgeIndex {
            n: self.n,
            recv: self.recv.clone(),
            send: self.send.clone(),
            coeff: self.coeff.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.recv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recv.is_empty()
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, GraphError> {
    if a.len() != b.len() {
        return Err(GraphError::LengthMismatch(a.len(), b.len()));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 {
        return Err(GraphError::ZeroVector {
            modality: "left",
            index: 0,
        });
    }
    if nb == 0.0 {
        return Err(GraphError::ZeroVector {
            modality: "right",
            index: 0,
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn unit_rows(ds: &Dataset, text: bool) -> Result<Vec<Vec<f64>>, GraphError> {
    ds.records
        .iter()
        .enumerate()
        .map(|(index, r)| {
            let v = if text { &r.text_emb } else { &r.image_emb };
            let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(GraphError::ZeroVector {
                    modality: if text { "text" } else { "image" },
                    index,
                });
            }
            Ok(v.iter().map(|&x| x as f64 / norm).collect())
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Channels that will actually be evaluated for `ds` under `cfg`.
pub fn effective_channels(ds: &Dataset, cfg: &SimilarityConfig) -> Result<ChannelSet, GraphError> {
    cfg.validate()?;
    let mut chans = cfg.channels_enabled;
    if ds.d_img != ds.d_txt {
        for c in [Channel::IT, Channel::TI] {
            if chans.contains(c) {
                if cfg.strict_channels {
                    return Err(GraphError::DimMismatchCross {
                        channel: c,
                        d_img: ds.d_img,
                        d_txt: ds.d_txt,
                    });
                }
                log::warn!(
                    "skipping {c} channel: d_img={} differs from d_txt={}",
                    ds.d_img,
                    ds.d_txt
                );
                chans.remove(c);
            }
        }
    }
    if chans.is_empty() {
        return Err(GraphError::InvalidConfig(
            "no usable channels for these embedding dims".into(),
        ));
    }
    Ok(chans)
}

/// Exact all-pairs construction. Rows are processed in parallel but each
/// pair is evaluated independently and merged in row order, so the result
/// does not depend on scheduling.
pub fn build_graph(ds: &Dataset, cfg: &SimilarityConfig) -> Result<CrossModalGraph, GraphError> {
    let chans = effective_channels(ds, cfg)?;
    let need_img = chans.iter().any(|c| c != Channel::TT);
    let need_txt = chans.iter().any(|c| c != Channel::II);
    let img = if need_img { unit_rows(ds, false)? } else { Vec::new() };
    let txt = if need_txt { unit_rows(ds, true)? } else { Vec::new() };
    let n = ds.len();
    let tau = cfg.tau;

    let rows: Vec<Vec<Edge>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::new();
            for j in i + 1..n {
                let mut set = ChannelSet::EMPTY;
                for c in chans.iter() {
                    let s = match c {
                        Channel::II => dot(&img[i], &img[j]),
                        Channel::TT => dot(&txt[i], &txt[j]),
                        Channel::IT => dot(&img[i], &txt[j]),
                        Channel::TI => dot(&txt[i], &img[j]),
                    };
                    if s >= tau {
                        set.insert(c);
                    }
                }
                if !set.is_empty() {
                    out.push(Edge { i, j, channels: set });
                }
            }
            out
        })
        .collect();
    Ok(CrossModalGraph::from_sorted(n, rows.into_iter().flatten().collect()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Dot,
}

impl FromStr for ExportFormat {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ExportFormat::Json),
            "dot" => Ok(ExportFormat::Dot),
            other => Err(GraphError::InvalidConfig(format!("unknown format {other:?}"))),
        }
    }
}

#[derive(Serialize)]
struct JsonEdge {
    i: usize,
    j: usize,
    channels: Vec<&'static str>,
}

#[derive(Serialize)]
struct JsonGraph {
    n: usize,
    edges: Vec<JsonEdge>,
}

pub fn to_json(g: &CrossModalGraph) -> String {
    let doc = JsonGraph {
        n: g.n,
        edges: g
            .edges
            .iter()
            .map(|e| JsonEdge {
                i: e.i,
                j: e.j,
                channels: e.channels.iter().map(Channel::as_str).collect(),
            })
            .collect(),
    };
    serde_json::to_string(&doc).expect("plain structs serialize")
}

pub fn to_dot(g: &CrossModalGraph) -> String {
    let mut s = String::from("graph tweets {\n");
    for i in 0..g.n {
        s.push_str(&format!("  {i};\n"));
    }
    for e in &g.edges {
        s.push_str(&format!("  {} -- {} [label=\"{}\"];\n", e.i, e.j, e.channels));
    }
    s.push_str("}\n");
    s
}

pub fn export_graph(
    g: &CrossModalGraph,
    path: impl AsRef<Path>,
    format: ExportFormat,
) -> Result<(), GraphError> {
    let body = match format {
        ExportFormat::Json => to_json(g),
        ExportFormat::Dot => to_dot(g),
    };
    fs::write(path, body)?;
    Ok(())
}
