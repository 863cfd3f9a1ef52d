//! Python bindings for the `lmsoc` crate.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use lmsoc::context_graph::{self, ContextGraph, ContextId, GeoPoint};
use lmsoc::corpus::{self, Mode, TemporalWorldSpec};
use lmsoc::encoder::{load_checkpoint, Checkpoint};
use lmsoc::eval::{self, EvalModel};
use lmsoc::experiment::{self, Artifacts, ExperimentConfig};
use lmsoc::node2vec::{self, ContextEmbeddingTable, SgnsConfig, WalkConfig};
use lmsoc::Error;

fn err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Io { .. } => PyIOError::new_err(msg),
        Error::Lookup(_) => PyKeyError::new_err(msg),
        Error::TrainingDiverged { .. } => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn ctx(id: &str) -> PyResult<ContextId> {
    ContextId::new(id).map_err(err)
}

/// Undirected context graph.
#[pyclass(name = "ContextGraph", module = "lmsoc_py")]
struct PyGraph {
    inner: ContextGraph,
}

#[pymethods]
impl PyGraph {
    /// Chain of consecutive years, inclusive on both ends.
    #[staticmethod]
    fn time_chain(start_year: i64, end_year: i64) -> PyResult<Self> {
        Ok(PyGraph { inner: context_graph::build_time_chain(start_year, end_year).map_err(err)? })
    }

    /// Symmetrized k-nearest-neighbour graph over `{id: (lat, lon)}`.
    #[staticmethod]
    #[pyo3(signature = (cities, k=5))]
    fn geo_knn(cities: BTreeMap<String, (f64, f64)>, k: usize) -> PyResult<Self> {
        let mut points = BTreeMap::new();
        for (id, (lat, lon)) in cities {
            points.insert(ctx(&id)?, GeoPoint::new(lat, lon).map_err(err)?);
        }
        Ok(PyGraph { inner: context_graph::build_geo_knn(&points, k).map_err(err)? })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(PyGraph { inner: ContextGraph::read(&path).map_err(err)? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(&path).map_err(err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn nodes(&self) -> Vec<String> {
        self.inner.nodes().iter().map(|n| n.as_str().to_string()).collect()
    }

    fn edges(&self) -> Vec<(String, String)> {
        self.inner
            .sorted_edges()
            .into_iter()
            .map(|(a, b)| (a.as_str().to_string(), b.as_str().to_string()))
            .collect()
    }

    fn neighbors(&self, id: &str) -> PyResult<Vec<String>> {
        let i = self.inner.node_index(&ctx(id)?).map_err(err)?;
        let nodes = self.inner.nodes();
        Ok(self.inner.neighbors(i).iter().map(|&j| nodes[j].as_str().to_string()).collect())
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.inner.num_edges()
    }

    fn __len__(&self) -> usize {
        self.inner.num_nodes()
    }

    fn __repr__(&self) -> String {
        format!("ContextGraph(nodes={}, edges={})", self.inner.num_nodes(), self.inner.num_edges())
    }
}

/// One vector per context id.
#[pyclass(name = "ContextEmbeddings", module = "lmsoc_py")]
struct PyEmbeddings {
    inner: ContextEmbeddingTable,
}

#[pymethods]
impl PyEmbeddings {
    #[new]
    fn new(vectors: BTreeMap<String, Vec<f64>>) -> PyResult<Self> {
        let dim = vectors.values().next().map_or(0, Vec::len);
        let mut table = BTreeMap::new();
        for (id, v) in vectors {
            table.insert(ctx(&id)?, v);
        }
        Ok(PyEmbeddings { inner: ContextEmbeddingTable::new(dim, table).map_err(err)? })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(PyEmbeddings { inner: ContextEmbeddingTable::read(&path).map_err(err)? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(&path).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.ids().map(|i| i.as_str().to_string()).collect()
    }

    fn vector(&self, id: &str) -> PyResult<Vec<f64>> {
        Ok(self.inner.lookup(&ctx(id)?).map_err(err)?.to_vec())
    }

    /// The `m` most cosine-similar other contexts, closest first.
    #[pyo3(signature = (id, m=5))]
    fn nearest(&self, id: &str, m: usize) -> PyResult<Vec<(String, f64)>> {
        let nn = node2vec::nearest_neighbors(&self.inner, &ctx(id)?, m).map_err(err)?;
        Ok(nn.into_iter().map(|(c, s)| (c.as_str().to_string(), s)).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, id: &str) -> bool {
        ContextId::new(id).is_ok_and(|c| self.inner.get(&c).is_some())
    }

    fn __repr__(&self) -> String {
        format!("ContextEmbeddings(len={}, dim={})", self.inner.len(), self.inner.dim())
    }
}

/// Random walks plus skip-gram over a context graph.
#[pyfunction]
#[pyo3(signature = (graph, dim=64, walk_length=5, num_walks=1000, p=1.0, q=1.0, window=2, negatives=5, epochs=5, learning_rate=0.025, seed=0))]
#[allow(clippy::too_many_arguments)]
fn embed(
    py: Python<'_>,
    graph: &PyGraph,
    dim: usize,
    walk_length: usize,
    num_walks: usize,
    p: f64,
    q: f64,
    window: usize,
    negatives: usize,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> PyResult<PyEmbeddings> {
    let walk = WalkConfig { walk_length, num_walks, p, q, seed };
    let sgns = SgnsConfig { dim, window, negatives, epochs, learning_rate, seed };
    let g = &graph.inner;
    let inner = py.detach(|| node2vec::embed_graph(g, &walk, &sgns)).map_err(err)?;
    Ok(PyEmbeddings { inner })
}

/// Great-circle distance in kilometres.
#[pyfunction]
fn geodesic_distance(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> PyResult<f64> {
    let a = GeoPoint::new(lat1, lon1).map_err(err)?;
    let b = GeoPoint::new(lat2, lon2).map_err(err)?;
    Ok(context_graph::geodesic_distance(a, b))
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    corpus::tokenize(text)
}

/// Officeholder corpus. Returns `(examples, answers)` where examples are
/// `(context, sentence)` pairs and answers are `(task, context, answer)`.
#[pyfunction]
#[pyo3(signature = (instances_per_template=200, seed=0))]
#[allow(clippy::type_complexity)]
fn temporal_corpus(instances_per_template: usize, seed: u64) -> PyResult<(Vec<(String, String)>, Vec<(String, String, String)>)> {
    let spec = TemporalWorldSpec { instances_per_template, ..TemporalWorldSpec::default() };
    let (c, key) = corpus::gen_temporal_corpus(&spec, seed).map_err(err)?;
    let examples = c.examples.iter().map(|e| (e.context.as_str().to_string(), e.tokens.join(" "))).collect();
    let answers = key
        .entries()
        .map(|e| (e.task, e.context.as_str().to_string(), e.answer.join(" ")))
        .collect();
    Ok((examples, answers))
}

/// Built-in city table as `(id, surface, lat, lon, state, teams)` rows.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn builtin_cities() -> Vec<(String, String, f64, f64, String, String)> {
    corpus::builtin_us_cities()
        .into_iter()
        .map(|c| (c.id.as_str().to_string(), c.surface, c.point.lat(), c.point.lon(), c.state.join(" "), c.teams.join(" ")))
        .collect()
}

/// A trained masked-LM checkpoint.
#[pyclass(name = "Model", module = "lmsoc_py")]
struct PyModel {
    ckpt: Checkpoint,
    contexts: Option<ContextEmbeddingTable>,
}

impl PyModel {
    fn with_eval<T>(&self, f: impl FnOnce(&EvalModel) -> lmsoc::Result<T>) -> PyResult<T> {
        let m = EvalModel::from_checkpoint(&self.ckpt, self.contexts.as_ref()).map_err(err)?;
        f(&m).map_err(err)
    }
}

#[pymethods]
impl PyModel {
    /// Load a checkpoint. SOC models also need the context embeddings file.
    #[staticmethod]
    #[pyo3(signature = (path, contexts=None))]
    fn load(path: PathBuf, contexts: Option<PathBuf>) -> PyResult<Self> {
        let ckpt = load_checkpoint(&path).map_err(err)?;
        let contexts = contexts.map(|p| ContextEmbeddingTable::read(&p)).transpose().map_err(err)?;
        let m = PyModel { ckpt, contexts };
        m.with_eval(|_| Ok(()))?;
        Ok(m)
    }

    #[getter]
    fn mode(&self) -> PyResult<String> {
        self.with_eval(|m| Ok(m.mode().name().to_string()))
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.ckpt.params.data.len()
    }

    #[getter]
    fn vocab(&self) -> Vec<String> {
        self.ckpt.vocab.tokens().to_vec()
    }

    /// Raw logits at the single `[MASK]` position of `text`.
    fn mask_logits(&self, text: &str, context: &str) -> PyResult<Vec<f64>> {
        let c = ctx(context)?;
        self.with_eval(|m| m.mask_logits(&corpus::tokenize(text), &c))
    }

    /// Top-`k` vocabulary tokens for the `[MASK]` position, best first.
    #[pyo3(signature = (text, context, k=10))]
    fn predict(&self, text: &str, context: &str, k: usize) -> PyResult<Vec<(String, f64)>> {
        let c = ctx(context)?;
        let tokens = corpus::tokenize(text);
        self.with_eval(|m| {
            let logits = m.mask_logits(&tokens, &c)?;
            let ranking = m.ranking(&tokens, &c)?;
            Ok(ranking
                .into_iter()
                .take(k)
                .map(|id| (self.ckpt.vocab.token(id).to_string(), logits[id as usize]))
                .collect())
        })
    }

    /// 1-based rank of the best-placed answer token, or None.
    fn rank_of_answer(&self, text: &str, context: &str, answer: Vec<String>) -> PyResult<Option<usize>> {
        let c = ctx(context)?;
        let tokens = corpus::tokenize(text);
        self.with_eval(|m| {
            let ranking: Vec<&str> = m.ranking(&tokens, &c)?.into_iter().map(|id| self.ckpt.vocab.token(id)).collect();
            let answer: Vec<&str> = answer.iter().map(String::as_str).collect();
            Ok(eval::rank_of_answer(&ranking, &answer))
        })
    }

    fn __repr__(&self) -> String {
        format!("Model(params={}, vocab={})", self.ckpt.params.data.len(), self.ckpt.vocab.len())
    }
}

#[pyfunction]
fn mrr(ranks: Vec<usize>) -> PyResult<f64> {
    eval::mrr(&ranks).map_err(err)
}

#[pyfunction]
fn mean_rank(ranks: Vec<usize>) -> PyResult<f64> {
    eval::mean_rank(&ranks).map_err(err)
}

/// Percentile bootstrap interval of the mean.
#[pyfunction]
#[pyo3(signature = (values, level=0.95, resamples=10000, seed=0))]
fn bootstrap_ci(values: Vec<f64>, level: f64, resamples: usize, seed: u64) -> PyResult<(f64, f64)> {
    eval::bootstrap_ci(&values, level, resamples, seed).map_err(err)
}

/// `{"count", "median", "mean", "q1", "q3", "min", "max"}` of a distance list.
#[pyfunction]
fn summarize_distances(distances: Vec<f64>) -> PyResult<BTreeMap<&'static str, f64>> {
    let s = eval::summarize_distances(&distances).map_err(err)?;
    Ok(BTreeMap::from([
        ("count", s.count as f64),
        ("median", s.median),
        ("mean", s.mean),
        ("q1", s.q1),
        ("q3", s.q3),
        ("min", s.min),
        ("max", s.max),
    ]))
}

/// Run one pipeline stage. `config` is a JSON object shaped like the TOML
/// config files. Returns the paths written.
#[pyfunction]
#[pyo3(signature = (stage, out_dir, config=None, mode=None))]
fn run_stage(py: Python<'_>, stage: &str, out_dir: PathBuf, config: Option<&str>, mode: Option<&str>) -> PyResult<Vec<PathBuf>> {
    let cfg: ExperimentConfig = serde_json::from_str(config.unwrap_or("{}"))
        .map_err(|e| PyValueError::new_err(format!("invalid configuration: {e}")))?;
    cfg.validate().map_err(err)?;
    let modes: Vec<Mode> = match mode {
        Some(m) => vec![m.parse().map_err(err)?],
        None => cfg.experiment.modes.clone(),
    };
    let art = Artifacts::new(out_dir);
    let stage = stage.replace('_', "-");
    py.detach(|| {
        let outs = match stage.as_str() {
            "build-graph" => vec![experiment::stage_build_graph(&cfg, &art)?],
            "embed" => vec![experiment::stage_embed(&cfg, &art)?],
            "gen-corpus" => vec![experiment::stage_gen_corpus(&cfg, &art)?],
            "pretrain" => modes
                .iter()
                .map(|&m| experiment::stage_pretrain(&cfg, &art, m))
                .collect::<lmsoc::Result<Vec<_>>>()?,
            "evaluate" => vec![experiment::stage_evaluate(&cfg, &art)?],
            "report" => vec![experiment::stage_report(&art)?],
            other => return Err(Error::Config(format!("unknown stage {other:?}"))),
        };
        Ok(outs.into_iter().flat_map(|o| o.written).collect())
    })
    .map_err(err)
}

#[pymodule]
fn lmsoc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyEmbeddings>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(embed, m)?)?;
    m.add_function(wrap_pyfunction!(geodesic_distance, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(temporal_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_cities, m)?)?;
    m.add_function(wrap_pyfunction!(mrr, m)?)?;
    m.add_function(wrap_pyfunction!(mean_rank, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_ci, m)?)?;
    m.add_function(wrap_pyfunction!(summarize_distances, m)?)?;
    m.add_function(wrap_pyfunction!(run_stage, m)?)?;
    Ok(())
}
