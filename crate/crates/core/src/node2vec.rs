//! Context encoder: node2vec biased random walks followed by skip-gram with
//! negative sampling, producing one dense vector per graph node.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context_graph::{ContextGraph, ContextId};
use crate::error::{Error, Result};
use crate::fsutil::{self, data_lines};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkConfig {
    /// Nodes per walk, including the start node.
    pub walk_length: usize,
    /// Walks started from every node.
    pub num_walks: usize,
    /// Return parameter.
    pub p: f64,
    /// In-out parameter.
    pub q: f64,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig { walk_length: 5, num_walks: 1000, p: 1.0, q: 1.0, seed: 0 }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.walk_length < 1 || self.num_walks < 1 {
            return Err(Error::Config("walk_length and num_walks must be >= 1".into()));
        }
        if !(self.p > 0.0 && self.p.is_finite()) || !(self.q > 0.0 && self.q.is_finite()) {
            return Err(Error::Config(format!("p and q must be positive, got p={} q={}", self.p, self.q)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgnsConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Starting rate; decays linearly to [`SGNS_MIN_LEARNING_RATE`].
    pub learning_rate: f64,
    pub seed: u64,
}

pub const SGNS_MIN_LEARNING_RATE: f64 = 1e-4;

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig { dim: 768, window: 2, negatives: 5, epochs: 5, learning_rate: 0.025, seed: 0 }
    }
}

impl SgnsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config("embedding dim must be >= 2".into()));
        }
        if self.window < 1 || self.negatives < 1 || self.epochs < 1 {
            return Err(Error::Config("window, negatives and epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Random walks stored as indices into `nodes`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Walks {
    pub nodes: Vec<ContextId>,
    pub walks: Vec<Vec<u32>>,
}

impl Walks {
    pub fn len(&self) -> usize {
        self.walks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.walks.is_empty()
    }

    /// Walk `i` as context ids.
    pub fn walk_ids(&self, i: usize) -> Vec<&ContextId> {
        self.walks[i].iter().map(|&n| &self.nodes[n as usize]).collect()
    }
}

/// Second-order biased walks. Walks are emitted round by round: walk `r` of
/// every node (in graph order) precedes walk `r + 1` of any node. Each start
/// node draws from its own ChaCha stream, so the output does not depend on
/// how the per-node work is scheduled.
pub fn generate_walks(graph: &ContextGraph, cfg: &WalkConfig) -> Result<Walks> {
    cfg.validate()?;
    if graph.is_empty() {
        return Err(Error::InputDomain("cannot walk an empty graph".into()));
    }
    let inv_p = 1.0 / cfg.p;
    let inv_q = 1.0 / cfg.q;
    let per_node: Vec<Vec<Vec<u32>>> = (0..graph.num_nodes())
        .into_par_iter()
        .map(|start| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(start as u64);
            let mut weights = Vec::new();
            (0..cfg.num_walks)
                .map(|_| walk_from(graph, start, cfg.walk_length, inv_p, inv_q, &mut rng, &mut weights))
                .collect()
        })
        .collect();

    let mut walks = Vec::with_capacity(graph.num_nodes() * cfg.num_walks);
    for r in 0..cfg.num_walks {
        for node_walks in &per_node {
            walks.push(node_walks[r].clone());
        }
    }
    Ok(Walks { nodes: graph.nodes().to_vec(), walks })
}

fn walk_from(
    graph: &ContextGraph,
    start: usize,
    length: usize,
    inv_p: f64,
    inv_q: f64,
    rng: &mut ChaCha8Rng,
    weights: &mut Vec<f64>,
) -> Vec<u32> {
    let mut walk = Vec::with_capacity(length);
    walk.push(start as u32);
    let mut prev: Option<usize> = None;
    let mut cur = start;
    while walk.len() < length {
        let nbrs = graph.neighbors(cur);
        if nbrs.is_empty() {
            break;
        }
        let next = match prev {
            None => nbrs[rng.random_range(0..nbrs.len())],
            Some(t) => {
                weights.clear();
                let mut total = 0.0;
                for &x in nbrs {
                    let w = if x == t {
                        inv_p
                    } else if graph.has_edge(t, x) {
                        1.0
                    } else {
                        inv_q
                    };
                    total += w;
                    weights.push(total);
                }
                let u = rng.random::<f64>() * total;
                let k = weights.partition_point(|&c| c <= u).min(nbrs.len() - 1);
                nbrs[k]
            }
        };
        walk.push(next as u32);
        prev = Some(cur);
        cur = next;
    }
    walk
}

/// Dense vector per context.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextEmbeddingTable {
    dim: usize,
    vectors: BTreeMap<ContextId, Vec<f64>>,
}

impl ContextEmbeddingTable {
    pub fn new(dim: usize, vectors: BTreeMap<ContextId, Vec<f64>>) -> Result<Self> {
        for (id, v) in &vectors {
            if v.len() != dim {
                return Err(Error::InputDomain(format!("vector for {id} has {} entries, expected {dim}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InputDomain(format!("vector for {id} has non-finite entries")));
            }
        }
        Ok(ContextEmbeddingTable { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &ContextId) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn lookup(&self, id: &ContextId) -> Result<&[f64]> {
        self.get(id).ok_or_else(|| Error::Lookup(format!("no embedding for context {id}")))
    }

    pub fn ids(&self) -> impl Iterator<Item = &ContextId> {
        self.vectors.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ContextId, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// Text format: `n d` header, then `id v1 .. vd` per context in id order.
    /// Values use shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim);
        for (id, v) in &self.vectors {
            out.push_str(id.as_str());
            for x in v {
                out.push(' ');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = data_lines(text);
        let (hline, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty embedding file"))?;
        let mut parts = header.split_whitespace().map(str::parse::<usize>);
        let (n, dim) = match (parts.next(), parts.next(), parts.next()) {
            (Some(Ok(n)), Some(Ok(d)), None) => (n, d),
            _ => return Err(Error::parse(path, hline, "expected `n d` header")),
        };
        let mut vectors = BTreeMap::new();
        for (lineno, line) in lines {
            let mut fields = line.split_whitespace();
            let id = ContextId::new(fields.next().unwrap_or_default())
                .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
            let v: Vec<f64> = fields
                .map(|s| s.parse::<f64>().map_err(|_| Error::parse(path, lineno, format!("bad value {s:?}"))))
                .collect::<Result<_>>()?;
            if v.len() != dim {
                return Err(Error::parse(path, lineno, format!("expected {dim} values, got {}", v.len())));
            }
            if vectors.insert(id.clone(), v).is_some() {
                return Err(Error::parse(path, lineno, format!("duplicate context {id}")));
            }
        }
        if vectors.len() != n {
            return Err(Error::parse(path, hline, format!("header declares {n} rows, found {}", vectors.len())));
        }
        ContextEmbeddingTable::new(dim, vectors).map_err(|e| Error::parse(path, hline, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&fsutil::read_to_string(path)?, path)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// The `m` contexts most cosine-similar to `id`, excluding `id` itself.
/// Ties are broken by lexicographic id.
pub fn nearest_neighbors(table: &ContextEmbeddingTable, id: &ContextId, m: usize) -> Result<Vec<(ContextId, f64)>> {
    if m < 1 {
        return Err(Error::InputDomain("m must be >= 1".into()));
    }
    let query = table.lookup(id)?;
    let mut scored: Vec<(ContextId, f64)> = table
        .iter()
        .filter(|(other, _)| *other != id)
        .map(|(other, v)| (other.clone(), cosine(query, v)))
        .collect();
    // iteration order is already lexicographic; stable sort keeps it for ties
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored.truncate(m);
    Ok(scored)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Skip-gram with negative sampling over the walk corpus. Returns the input
/// (centre-word) vectors for every node that occurs in at least one walk.
pub fn train_sgns(walks: &Walks, cfg: &SgnsConfig) -> Result<ContextEmbeddingTable> {
    cfg.validate()?;
    if walks.is_empty() {
        return Err(Error::InputDomain("no walks to train on".into()));
    }
    let n_nodes = walks.nodes.len();
    let mut counts = vec![0u64; n_nodes];
    for walk in &walks.walks {
        for &n in walk {
            let n = n as usize;
            if n >= n_nodes {
                return Err(Error::InputDomain(format!("walk references node index {n} out of range")));
            }
            counts[n] += 1;
        }
    }

    // negatives come from the unigram distribution raised to 3/4
    let mut cumulative = Vec::with_capacity(n_nodes);
    let mut acc = 0.0;
    for &c in &counts {
        acc += (c as f64).powf(0.75);
        cumulative.push(acc);
    }
    let total_weight = acc;

    let dim = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound = 0.5 / dim as f64;
    let mut input: Vec<f64> = (0..n_nodes * dim).map(|_| rng.random_range(-bound..bound)).collect();
    let mut output = vec![0.0f64; n_nodes * dim];
    let mut grad = vec![0.0f64; dim];

    let tokens_per_epoch: u64 = counts.iter().sum();
    let total_tokens = (tokens_per_epoch * cfg.epochs as u64) as f64;
    let mut seen_tokens = 0u64;

    for _ in 0..cfg.epochs {
        for walk in &walks.walks {
            for (i, &center) in walk.iter().enumerate() {
                let progress = seen_tokens as f64 / total_tokens;
                let lr = cfg.learning_rate + (SGNS_MIN_LEARNING_RATE - cfg.learning_rate) * progress;
                seen_tokens += 1;
                let center = center as usize;
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window + 1).min(walk.len());
                for (j, &ctx) in walk.iter().enumerate().take(hi).skip(lo) {
                    if j == i {
                        continue;
                    }
                    let ctx = ctx as usize;
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let vin = &input[center * dim..(center + 1) * dim];
                    for s in 0..=cfg.negatives {
                        let (target, label) = if s == 0 {
                            (ctx, 1.0)
                        } else {
                            let u = rng.random::<f64>() * total_weight;
                            let t = cumulative.partition_point(|&c| c <= u).min(n_nodes - 1);
                            if t == ctx {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let vout = &mut output[target * dim..(target + 1) * dim];
                        let f: f64 = vin.iter().zip(vout.iter()).map(|(a, b)| a * b).sum();
                        let g = (label - sigmoid(f)) * lr;
                        for k in 0..dim {
                            grad[k] += g * vout[k];
                            vout[k] += g * vin[k];
                        }
                    }
                    let vin = &mut input[center * dim..(center + 1) * dim];
                    for k in 0..dim {
                        vin[k] += grad[k];
                    }
                }
            }
        }
    }

    let vectors = walks
        .nodes
        .iter()
        .enumerate()
        .filter(|(i, _)| counts[*i] > 0)
        .map(|(i, id)| (id.clone(), input[i * dim..(i + 1) * dim].to_vec()))
        .collect();
    ContextEmbeddingTable::new(dim, vectors)
}

/// Walks plus SGNS in one call.
pub fn embed_graph(graph: &ContextGraph, walk: &WalkConfig, sgns: &SgnsConfig) -> Result<ContextEmbeddingTable> {
    let walks = generate_walks(graph, walk)?;
    train_sgns(&walks, sgns)
}
