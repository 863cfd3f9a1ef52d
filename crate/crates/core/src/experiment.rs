//! Experiment configuration and the stages of a full run: graph, context
//! embeddings, corpus, pretraining per mode, evaluation and reporting.
//!
//! Every stage reads its inputs from and writes its outputs to one output
//! directory, so stages can be rerun independently.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::context_graph::{build_geo_knn, build_time_chain, ContextGraph, ContextId};
use crate::corpus::{
    build_vocab, builtin_us_cities_text, encode, gen_geo_corpus, gen_temporal_corpus, geo_query_template,
    parse_city_attributes, AnswerKey, City, Corpus, Encoded, GeoCorpusSpec, Mode, TemporalWorldSpec, TASK_CLOSECITY,
    TASK_NFL, TASK_STATES,
};
use crate::encoder::{init_model, load_checkpoint, save_checkpoint, Checkpoint, ModelConfig, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::eval::{
    build_queries, closecity_csv_rows, closecity_report, cloze_csv_rows, read_queries, queries_to_text, run_cloze_eval,
    BootstrapConfig, CloseCityReport, ClozeQuery, EvalModel, EvalReport, Gazetteer, CLOSECITY_CSV_HEADER,
    CLOZE_CSV_HEADER,
};
use crate::fsutil::{self, write_atomic};
use crate::node2vec::{embed_graph, ContextEmbeddingTable, SgnsConfig, WalkConfig};
use crate::plot::{distance_box_chart, mrr_bar_chart};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "LMSOC_OUT";
pub const TASK_TEMPORAL: &str = "temporal";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Temporal,
    Geographic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub kind: ExperimentKind,
    /// Base seed. Section seeds are offsets from it.
    pub seed: u64,
    /// Empty selects every task the experiment kind supports.
    pub tasks: Vec<String>,
    pub modes: Vec<Mode>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            name: "temporal".into(),
            kind: ExperimentKind::Temporal,
            seed: 0,
            tasks: Vec::new(),
            modes: Mode::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Where artifacts go; defaults to `$LMSOC_OUT/<name>` or `runs/<name>`.
    pub out_dir: Option<PathBuf>,
    /// City attribute file for geographic runs; the bundled US list if unset.
    pub cities: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    /// Neighbors per city in the geographic graph.
    pub k: usize,
}

impl Default for GraphSection {
    fn default() -> Self {
        GraphSection { k: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeoSection {
    pub sentences_per_city: usize,
    pub nearby_cities: usize,
    /// Training cities. Unset takes the first `num_seen` rows of the city file.
    pub seen: Option<Vec<ContextId>>,
    pub num_seen: usize,
}

impl Default for GeoSection {
    fn default() -> Self {
        let spec = GeoCorpusSpec::default();
        GeoSection { sentences_per_city: spec.sentences_per_city, nearby_cities: spec.nearby_cities, seen: None, num_seen: 10 }
    }
}

/// Architecture knobs; vocabulary size and mode come from the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection { hidden: m.hidden, layers: m.layers, heads: m.heads, ff: m.ff, max_len: m.max_len, dropout: m.dropout, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
    /// Cloze probe for the temporal task; `{office}` is substituted.
    pub temporal_template: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        let b = BootstrapConfig::default();
        EvalSection { level: b.level, resamples: b.resamples, seed: 0, temporal_template: "the {office} is [MASK]".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub paths: PathsSection,
    pub graph: GraphSection,
    pub temporal: TemporalWorldSpec,
    pub geo: GeoSection,
    pub walk: WalkConfig,
    pub sgns: SgnsConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentSection::default(),
            paths: PathsSection::default(),
            graph: GraphSection::default(),
            temporal: TemporalWorldSpec { instances_per_template: 200, ..TemporalWorldSpec::default() },
            geo: GeoSection::default(),
            walk: WalkConfig::default(),
            sgns: SgnsConfig { dim: 64, ..SgnsConfig::default() },
            model: ModelSection::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

fn offset(base: u64, s: u64) -> u64 {
    base.wrapping_add(s)
}

impl ExperimentConfig {
    /// Selected tasks, expanded to the defaults for the kind when unset.
    pub fn tasks(&self) -> Vec<String> {
        if !self.experiment.tasks.is_empty() {
            return self.experiment.tasks.clone();
        }
        match self.experiment.kind {
            ExperimentKind::Temporal => vec![TASK_TEMPORAL.into()],
            ExperimentKind::Geographic => vec![TASK_STATES.into(), TASK_NFL.into(), TASK_CLOSECITY.into()],
        }
    }

    pub fn walk_config(&self) -> WalkConfig {
        WalkConfig { seed: offset(self.experiment.seed, self.walk.seed), ..self.walk.clone() }
    }

    pub fn sgns_config(&self) -> SgnsConfig {
        SgnsConfig { seed: offset(self.experiment.seed, self.sgns.seed), ..self.sgns.clone() }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: offset(self.experiment.seed, self.train.seed), ..self.train.clone() }
    }

    pub fn bootstrap_config(&self) -> BootstrapConfig {
        BootstrapConfig { level: self.eval.level, resamples: self.eval.resamples, seed: offset(self.experiment.seed, self.eval.seed) }
    }

    pub fn corpus_seed(&self) -> u64 {
        self.experiment.seed
    }

    pub fn model_config(&self, mode: Mode, vocab_size: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            hidden: m.hidden,
            layers: m.layers,
            heads: m.heads,
            ff: m.ff,
            max_len: m.max_len,
            vocab_size,
            mode,
            dropout: m.dropout,
            seed: offset(self.experiment.seed, m.seed),
        }
    }

    /// Checks everything that can be checked without running a stage.
    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.name.is_empty() || e.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("experiment name {:?} must be a plain directory name", e.name)));
        }
        if e.modes.is_empty() {
            return Err(Error::Config("select at least one mode".into()));
        }
        if e.modes.iter().collect::<BTreeSet<_>>().len() != e.modes.len() {
            return Err(Error::Config("modes must not repeat".into()));
        }
        let allowed: &[&str] = match e.kind {
            ExperimentKind::Temporal => &[TASK_TEMPORAL],
            ExperimentKind::Geographic => &[TASK_STATES, TASK_NFL, TASK_CLOSECITY],
        };
        for t in self.tasks() {
            if !allowed.contains(&t.as_str()) {
                return Err(Error::Config(format!("task {t:?} is not available for a {:?} experiment (choose from {allowed:?})", e.kind)));
            }
        }
        match e.kind {
            ExperimentKind::Temporal => {
                self.temporal.validate()?;
                let tpl = &self.eval.temporal_template;
                if !tpl.contains("{office}") || tpl.matches("[MASK]").count() != 1 {
                    return Err(Error::Config("temporal_template needs `{office}` and exactly one [MASK]".into()));
                }
            }
            ExperimentKind::Geographic => {
                if self.graph.k < 1 {
                    return Err(Error::Config("graph.k must be >= 1".into()));
                }
                if self.geo.sentences_per_city < 1 || self.geo.nearby_cities < 1 {
                    return Err(Error::Config("geo.sentences_per_city and geo.nearby_cities must be >= 1".into()));
                }
                if let Some(p) = &self.paths.cities {
                    if !p.is_file() {
                        return Err(Error::Config(format!("city file {} does not exist", p.display())));
                    }
                }
            }
        }
        self.walk.validate()?;
        self.sgns.validate()?;
        self.train.validate()?;
        self.model_config(Mode::None, 1).validate()?;
        if e.modes.contains(&Mode::Soc) && self.sgns.dim != self.model.hidden {
            return Err(Error::Config(format!(
                "SOC needs context vectors as wide as the model: sgns.dim = {} but model.hidden = {}",
                self.sgns.dim, self.model.hidden
            )));
        }
        if !(self.eval.level > 0.0 && self.eval.level < 1.0) || self.eval.resamples == 0 {
            return Err(Error::Config("eval.level must lie in (0, 1) and eval.resamples be positive".into()));
        }
        Ok(())
    }

    /// Output directory: `paths.out_dir`, else `<root>/<name>` where root is
    /// the given environment value or `runs`.
    pub fn out_dir(&self, env_root: Option<&Path>) -> PathBuf {
        match &self.paths.out_dir {
            Some(p) => p.clone(),
            None => env_root.unwrap_or(Path::new("runs")).join(&self.experiment.name),
        }
    }
}

/// File names inside an output directory.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Artifacts { root: root.into() }
    }
    pub fn graph(&self) -> PathBuf {
        self.root.join("graph.txt")
    }
    pub fn embeddings(&self) -> PathBuf {
        self.root.join("contexts.emb")
    }
    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus.tsv")
    }
    pub fn answers(&self) -> PathBuf {
        self.root.join("answers.tsv")
    }
    pub fn queries(&self) -> PathBuf {
        self.root.join("queries.tsv")
    }
    pub fn cities(&self) -> PathBuf {
        self.root.join("cities.tsv")
    }
    pub fn checkpoint(&self, mode: Mode) -> PathBuf {
        self.root.join("checkpoints").join(format!("{}.ckpt", mode.name()))
    }
    pub fn train_log(&self, mode: Mode) -> PathBuf {
        self.root.join("checkpoints").join(format!("{}.log", mode.name()))
    }
    pub fn report_json(&self) -> PathBuf {
        self.root.join("reports").join("report.json")
    }
    pub fn cloze_csv(&self) -> PathBuf {
        self.root.join("reports").join("cloze.csv")
    }
    pub fn closecity_csv(&self) -> PathBuf {
        self.root.join("reports").join("closecity.csv")
    }
    pub fn mrr_svg(&self) -> PathBuf {
        self.root.join("reports").join("mrr.svg")
    }
    pub fn distance_svg(&self) -> PathBuf {
        self.root.join("reports").join("closecity.svg")
    }
}

/// What a stage wrote, plus a human-readable note.
#[derive(Clone, Debug, PartialEq)]
pub struct StageOutput {
    pub written: Vec<PathBuf>,
    pub message: String,
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} is missing; run `lmsoc {stage}` first", path.display())))
    }
}

fn cities_text(cfg: &ExperimentConfig) -> Result<String> {
    match &cfg.paths.cities {
        Some(p) => fsutil::read_to_string(p),
        None => Ok(builtin_us_cities_text().to_string()),
    }
}

fn load_cities(cfg: &ExperimentConfig) -> Result<Vec<City>> {
    let path = cfg.paths.cities.clone().unwrap_or_else(|| PathBuf::from("us_cities.tsv"));
    parse_city_attributes(&cities_text(cfg)?, &path)
}

fn seen_cities(cfg: &ExperimentConfig, cities: &[City]) -> Result<BTreeSet<ContextId>> {
    match &cfg.geo.seen {
        Some(ids) => {
            let known: BTreeSet<&ContextId> = cities.iter().map(|c| &c.id).collect();
            for id in ids {
                if !known.contains(id) {
                    return Err(Error::Config(format!("seen city {id} is not in the city file")));
                }
            }
            Ok(ids.iter().cloned().collect())
        }
        None => {
            if cfg.geo.num_seen < 1 || cfg.geo.num_seen >= cities.len() {
                return Err(Error::Config(format!(
                    "geo.num_seen must be between 1 and {} for this city file",
                    cities.len().saturating_sub(1)
                )));
            }
            Ok(cities[..cfg.geo.num_seen].iter().map(|c| c.id.clone()).collect())
        }
    }
}

pub fn stage_build_graph(cfg: &ExperimentConfig, art: &Artifacts) -> Result<StageOutput> {
    cfg.validate()?;
    let graph = match cfg.experiment.kind {
        ExperimentKind::Temporal => build_time_chain(cfg.temporal.start_year, cfg.temporal.end_year)?,
        ExperimentKind::Geographic => {
            let points: BTreeMap<ContextId, _> = load_cities(cfg)?.into_iter().map(|c| (c.id, c.point)).collect();
            build_geo_knn(&points, cfg.graph.k)?
        }
    };
    graph.write(&art.graph())?;
    Ok(StageOutput {
        written: vec![art.graph()],
        message: format!("graph: {} nodes, {} edges", graph.num_nodes(), graph.num_edges()),
    })
}

pub fn stage_embed(cfg: &ExperimentConfig, art: &Artifacts) -> Result<StageOutput> {
    cfg.validate()?;
    require(&art.graph(), "build-graph")?;
    let graph = ContextGraph::read(&art.graph())?;
    let (walk, sgns) = (cfg.walk_config(), cfg.sgns_config());
    let table = embed_graph(&graph, &walk, &sgns)?;
    table.write(&art.embeddings())?;
    Ok(StageOutput {
        written: vec![art.embeddings()],
        message: format!(
            "walks: length {} x {} per node (p={}, q={}, seed {}); sgns: dim {}, window {}, negatives {}, epochs {}, lr {} (seed {}); {} vectors",
            walk.walk_length,
            walk.num_walks,
            walk.p,
            walk.q,
            walk.seed,
            sgns.dim,
            sgns.window,
            sgns.negatives,
            sgns.epochs,
            sgns.learning_rate,
            sgns.seed,
            table.len()
        ),
    })
}

fn make_queries(cfg: &ExperimentConfig, key: &AnswerKey, seen: &BTreeSet<ContextId>) -> Result<Vec<ClozeQuery>> {
    let mut out = Vec::new();
    for task in cfg.tasks() {
        match task.as_str() {
            TASK_TEMPORAL => {
                for office in &cfg.temporal.offices {
                    let template = cfg.eval.temporal_template.replace("{office}", office);
                    out.extend(build_queries(key, office, &template, seen)?);
                }
            }
            TASK_CLOSECITY => {}
            t => out.extend(build_queries(key, t, geo_query_template(t).expect("validated task"), seen)?),
        }
    }
    Ok(out)
}

pub fn stage_gen_corpus(cfg: &ExperimentConfig, art: &Artifacts) -> Result<StageOutput> {
    cfg.validate()?;
    let mut written = vec![art.corpus(), art.answers(), art.queries()];
    let (corpus, key) = match cfg.experiment.kind {
        ExperimentKind::Temporal => gen_temporal_corpus(&cfg.temporal, cfg.corpus_seed())?,
        ExperimentKind::Geographic => {
            let cities = load_cities(cfg)?;
            let seen = seen_cities(cfg, &cities)?;
            let spec = GeoCorpusSpec { sentences_per_city: cfg.geo.sentences_per_city, nearby_cities: cfg.geo.nearby_cities };
            write_atomic(&art.cities(), cities_text(cfg)?.as_bytes())?;
            written.push(art.cities());
            gen_geo_corpus(&cities, &seen, &spec, cfg.corpus_seed())?
        }
    };
    let queries = make_queries(cfg, &key, &corpus.seen)?;
    corpus.write(&art.corpus())?;
    key.write(&art.answers())?;
    write_atomic(&art.queries(), queries_to_text(&queries).as_bytes())?;
    Ok(StageOutput {
        written,
        message: format!(
            "corpus: {} sentences over {} seen contexts ({} unseen); {} queries",
            corpus.examples.len(),
            corpus.seen.len(),
            corpus.unseen.len(),
            queries.len()
        ),
    })
}

fn read_corpus(art: &Artifacts) -> Result<Corpus> {
    require(&art.corpus(), "gen-corpus")?;
    require(&art.answers(), "gen-corpus")?;
    let key = AnswerKey::read(&art.answers())?;
    Corpus::read(&art.corpus(), &key.contexts())
}

fn read_table(art: &Artifacts, cfg: &ExperimentConfig) -> Result<ContextEmbeddingTable> {
    require(&art.embeddings(), "embed")?;
    let table = ContextEmbeddingTable::read(&art.embeddings())?;
    if table.dim() != cfg.model.hidden {
        return Err(Error::Config(format!(
            "{} holds {}-dimensional vectors but model.hidden is {}",
            art.embeddings().display(),
            table.dim(),
            cfg.model.hidden
        )));
    }
    Ok(table)
}

/// Trains one mode and writes its checkpoint and `step<TAB>loss<TAB>lr` log.
/// Nothing is written if training diverges.
pub fn stage_pretrain(cfg: &ExperimentConfig, art: &Artifacts, mode: Mode) -> Result<StageOutput> {
    cfg.validate()?;
    let corpus = read_corpus(art)?;
    let table = match mode {
        Mode::Soc => Some(read_table(art, cfg)?),
        _ => None,
    };
    let vocab = build_vocab(&corpus, mode)?;
    let model_cfg = cfg.model_config(mode, vocab.len());
    let examples: Vec<Encoded> = corpus.examples.iter().map(|e| encode(e, &vocab, mode)).collect::<Result<_>>()?;
    let longest = examples.iter().map(|e| e.ids.len()).max().unwrap_or(0);
    if longest > model_cfg.max_tokens() {
        return Err(Error::Config(format!(
            "longest training sentence needs {longest} positions but model.max_len allows {} in {} mode",
            model_cfg.max_tokens(),
            mode.name()
        )));
    }
    let params = init_model(&model_cfg)?;
    let mut trainer = Trainer::new(params, cfg.train_config(), &examples, table.as_ref(), vocab.word_ids())?;
    trainer.run()?;
    let log = trainer.log_text();
    let final_loss = trainer.log().last().map(|o| o.loss).unwrap_or(0.0);
    let params = trainer.into_params();
    if !params.all_finite() {
        return Err(Error::TrainingDiverged { step: cfg.train.total_steps, last_good_step: None, last_loss: Some(final_loss) });
    }
    let n_params = params.num_params();
    let ckpt = Checkpoint { params, vocab, context_dim: table.as_ref().map(|t| t.dim()) };
    save_checkpoint(&ckpt, &art.checkpoint(mode))?;
    write_atomic(&art.train_log(mode), log.as_bytes())?;
    Ok(StageOutput {
        written: vec![art.checkpoint(mode), art.train_log(mode)],
        message: format!(
            "{}: {} parameters, {} steps, final loss {:.4}",
            mode.model_name(),
            n_params,
            cfg.train.total_steps,
            final_loss
        ),
    })
}

/// Everything `evaluate` produces, echoed with the effective configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub cloze: Vec<EvalReport>,
    pub closecity: Vec<CloseCityReport>,
}

impl Report {
    pub fn cloze_for(&self, mode: Mode, task: &str) -> Option<&EvalReport> {
        self.cloze.iter().find(|r| r.model == mode.model_name() && r.task == task)
    }

    pub fn closecity_for(&self, mode: Mode) -> Option<&CloseCityReport> {
        self.closecity.iter().find(|r| r.model == mode.model_name())
    }
}

/// Offices belong to the temporal task; everything else is its own task.
fn report_task(cfg: &ExperimentConfig, query_task: &str) -> String {
    if cfg.experiment.kind == ExperimentKind::Temporal && cfg.temporal.offices.iter().any(|o| o == query_task) {
        TASK_TEMPORAL.to_string()
    } else {
        query_task.to_string()
    }
}

pub fn stage_evaluate(cfg: &ExperimentConfig, art: &Artifacts) -> Result<StageOutput> {
    cfg.validate()?;
    let missing: Vec<String> = cfg
        .experiment
        .modes
        .iter()
        .filter(|m| !art.checkpoint(**m).is_file())
        .map(|m| format!("`lmsoc pretrain --mode {}`", m.name()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!("missing checkpoints; run {}", missing.join(", "))));
    }
    require(&art.queries(), "gen-corpus")?;
    let queries = read_queries(&art.queries())?;
    let tasks = cfg.tasks();
    let table = if cfg.experiment.modes.contains(&Mode::Soc) { Some(read_table(art, cfg)?) } else { None };
    let closecity = if tasks.iter().any(|t| t == TASK_CLOSECITY) {
        require(&art.cities(), "gen-corpus")?;
        let cities = parse_city_attributes(&fsutil::read_to_string(&art.cities())?, &art.cities())?;
        let corpus = read_corpus(art)?;
        let inputs: Vec<(ContextId, bool)> = cities.iter().map(|c| (c.id.clone(), corpus.seen.contains(&c.id))).collect();
        Some((Gazetteer::from_cities(&cities), inputs))
    } else {
        None
    };
    let mut groups: BTreeMap<String, Vec<ClozeQuery>> = BTreeMap::new();
    for q in queries {
        groups.entry(report_task(cfg, &q.task)).or_default().push(q);
    }

    let boot = cfg.bootstrap_config();
    let mut report = Report { config: cfg.clone(), cloze: Vec::new(), closecity: Vec::new() };
    for &mode in &cfg.experiment.modes {
        let ckpt = load_checkpoint(&art.checkpoint(mode))?;
        if ckpt.params.config.mode != mode {
            return Err(Error::Mode(format!("{} holds a {} model", art.checkpoint(mode).display(), ckpt.params.config.mode.name())));
        }
        let model = EvalModel::from_checkpoint(&ckpt, table.as_ref().filter(|_| mode == Mode::Soc))?;
        for task in &tasks {
            if let Some(qs) = groups.get(task) {
                let mut r = run_cloze_eval(&model, qs, &boot)?;
                r.task = task.clone();
                report.cloze.push(r);
            }
        }
        if let Some((gaz, inputs)) = &closecity {
            let template = crate::corpus::tokenize(geo_query_template(TASK_CLOSECITY).expect("known task"));
            report.closecity.push(closecity_report(&model, &template, inputs, gaz)?);
        }
    }
    let mut out = write_report_files(&report, art)?;
    out.written.insert(0, art.report_json());
    write_atomic(&art.report_json(), (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
    Ok(out)
}

/// CSV tables and SVG charts for a report.
pub fn write_report_files(report: &Report, art: &Artifacts) -> Result<StageOutput> {
    let mut written = Vec::new();
    let mut csv = vec![CLOZE_CSV_HEADER.to_string()];
    csv.extend(report.cloze.iter().flat_map(cloze_csv_rows));
    write_atomic(&art.cloze_csv(), (csv.join("\n") + "\n").as_bytes())?;
    written.push(art.cloze_csv());
    if !report.cloze.is_empty() {
        write_atomic(&art.mrr_svg(), mrr_bar_chart(&report.cloze).as_bytes())?;
        written.push(art.mrr_svg());
    }
    if !report.closecity.is_empty() {
        let mut csv = vec![CLOSECITY_CSV_HEADER.to_string()];
        csv.extend(report.closecity.iter().flat_map(closecity_csv_rows));
        write_atomic(&art.closecity_csv(), (csv.join("\n") + "\n").as_bytes())?;
        write_atomic(&art.distance_svg(), distance_box_chart(&report.closecity).as_bytes())?;
        written.push(art.closecity_csv());
        written.push(art.distance_svg());
    }
    Ok(StageOutput { written, message: summary_table(report) })
}

/// Re-renders tables and charts from an existing `report.json`.
pub fn stage_report(art: &Artifacts) -> Result<StageOutput> {
    require(&art.report_json(), "evaluate")?;
    let report: Report = serde_json::from_str(&fsutil::read_to_string(&art.report_json())?)?;
    write_report_files(&report, art)
}

/// Plain-text summary: MRR and mean rank per model, task and split, then
/// median distances for the city probe.
pub fn summary_table(report: &Report) -> String {
    let mut out = format!("{:<8} {:<10} {:<8} {:>7} {:>10}\n", "model", "task", "split", "MRR", "mean rank");
    for r in &report.cloze {
        for split in crate::eval::SPLITS {
            if let Some(s) = r.split(split) {
                out.push_str(&format!("{:<8} {:<10} {:<8} {:>7.3} {:>10.2}\n", r.model, r.task, split, s.mrr, s.mean_rank));
            }
        }
    }
    if !report.closecity.is_empty() {
        out.push_str(&format!("\n{:<8} {:<8} {:>12}\n", "model", "split", "median km"));
        for r in &report.closecity {
            for split in crate::eval::SPLITS {
                if let Some(d) = r.split(split) {
                    out.push_str(&format!("{:<8} {:<8} {:>12.1}\n", r.model, split, d.median));
                }
            }
        }
    }
    out
}
