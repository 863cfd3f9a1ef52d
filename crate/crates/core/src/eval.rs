//! Cloze evaluation: answer ranks, MRR, bootstrap intervals and the
//! nearest-other-city distance probe.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context_graph::{geodesic_distance, ContextId, GeoPoint};
use crate::corpus::{encode_tokens, tokenize, AnswerKey, City, Mode, Vocab, MASK};
use crate::encoder::{mask_logits, rank_by_logits, Checkpoint, ModelParams};
use crate::error::{Error, Result};
use crate::fsutil::{self, data_lines};
use crate::node2vec::ContextEmbeddingTable;

/// A fill-in-the-blank probe grounded at one context.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClozeQuery {
    pub task: String,
    pub context: ContextId,
    pub seen: bool,
    pub template: Vec<String>,
    pub answer: Vec<String>,
}

impl ClozeQuery {
    pub fn new(task: &str, context: ContextId, seen: bool, template: Vec<String>, answer: Vec<String>) -> Result<Self> {
        let masks = template.iter().filter(|t| *t == MASK).count();
        if masks != 1 {
            return Err(Error::InputDomain(format!("template must hold exactly one {MASK}, found {masks}")));
        }
        if answer.is_empty() {
            return Err(Error::InputDomain("answer must have at least one token".into()));
        }
        Ok(ClozeQuery { task: task.to_string(), context, seen, template, answer })
    }
}

/// One query per answer-key entry of `task`, split by membership in `seen`.
pub fn build_queries(key: &AnswerKey, task: &str, template: &str, seen: &BTreeSet<ContextId>) -> Result<Vec<ClozeQuery>> {
    let template = tokenize(template);
    key.entries()
        .filter(|e| e.task == task)
        .map(|e| {
            let seen = seen.contains(&e.context);
            ClozeQuery::new(task, e.context, seen, template.clone(), e.answer)
        })
        .collect()
}

/// Writes `task<TAB>context<TAB>seen|unseen<TAB>template<TAB>answer` lines.
pub fn queries_to_text(queries: &[ClozeQuery]) -> String {
    queries
        .iter()
        .map(|q| {
            format!(
                "{}\t{}\t{}\t{}\t{}\n",
                q.task,
                q.context,
                if q.seen { "seen" } else { "unseen" },
                q.template.join(" "),
                q.answer.join(" ")
            )
        })
        .collect()
}

pub fn parse_queries(text: &str, path: &Path) -> Result<Vec<ClozeQuery>> {
    data_lines(text)
        .map(|(lineno, line)| {
            let fields: Vec<&str> = line.split('\t').collect();
            let [task, ctx, split, template, answer] = fields.as_slice() else {
                return Err(Error::parse(path, lineno, "expected 5 tab-separated fields"));
            };
            let seen = match *split {
                "seen" => true,
                "unseen" => false,
                other => return Err(Error::parse(path, lineno, format!("split must be seen|unseen, got {other:?}"))),
            };
            let context = ContextId::new(*ctx).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
            ClozeQuery::new(task, context, seen, tokenize(template), tokenize(answer))
                .map_err(|e| Error::parse(path, lineno, e.to_string()))
        })
        .collect()
}

pub fn read_queries(path: &Path) -> Result<Vec<ClozeQuery>> {
    parse_queries(&fsutil::read_to_string(path)?, path)
}

/// Best 1-based position in `ranking` of any answer token. `None` when no
/// answer token appears at all.
pub fn rank_of_answer<T: PartialEq>(ranking: &[T], answer: &[T]) -> Option<usize> {
    ranking.iter().position(|t| answer.contains(t)).map(|i| i + 1)
}

pub fn mrr(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::InputDomain("MRR of an empty query set".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::InputDomain("ranks start at 1".into()));
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

pub fn mean_rank(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::InputDomain("mean rank of an empty query set".into()));
    }
    Ok(ranks.iter().sum::<usize>() as f64 / ranks.len() as f64)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Linear interpolation between order statistics of a sorted sample.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval for the mean of `values`.
pub fn bootstrap_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InputDomain("bootstrap needs at least two observations".into()));
    }
    if !(level > 0.0 && level < 1.0) || resamples == 0 {
        return Err(Error::InputDomain("level must lie in (0, 1) and resamples be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    // clamp against summation rounding so the interval brackets the estimate
    // exactly when every value is equal
    let (lo, hi) = (quantile_sorted(&means, alpha), quantile_sorted(&means, 1.0 - alpha));
    let (min, max) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    Ok((lo.clamp(min, max), hi.clamp(min, max)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { level: 0.95, resamples: 10_000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub queries: usize,
    pub mrr: f64,
    pub mean_rank: f64,
    /// Absent when the split has fewer than two answerable queries.
    pub mrr_ci: Option<(f64, f64)>,
    pub mean_rank_ci: Option<(f64, f64)>,
}

pub fn summarize_ranks(ranks: &[usize], boot: &BootstrapConfig) -> Result<SplitSummary> {
    let rr: Vec<f64> = ranks.iter().map(|&r| 1.0 / r as f64).collect();
    let raw: Vec<f64> = ranks.iter().map(|&r| r as f64).collect();
    let ci = |xs: &[f64]| (xs.len() >= 2).then(|| bootstrap_ci(xs, boot.level, boot.resamples, boot.seed)).transpose();
    Ok(SplitSummary {
        queries: ranks.len(),
        mrr: mrr(ranks)?,
        mean_rank: mean_rank(ranks)?,
        mrr_ci: ci(&rr)?,
        mean_rank_ci: ci(&raw)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub task: String,
    pub context: ContextId,
    pub seen: bool,
    /// `None` marks an unanswerable query (no answer token in the vocabulary).
    pub rank: Option<usize>,
    pub reciprocal_rank: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub task: String,
    pub seen: Option<SplitSummary>,
    pub unseen: Option<SplitSummary>,
    pub overall: Option<SplitSummary>,
    pub unanswerable: usize,
    pub queries: Vec<QueryRecord>,
}

impl EvalReport {
    pub fn from_records(model: &str, task: &str, queries: Vec<QueryRecord>, boot: &BootstrapConfig) -> Result<Self> {
        let ranks = |pred: &dyn Fn(&QueryRecord) -> bool| -> Vec<usize> {
            queries.iter().filter(|q| pred(q)).filter_map(|q| q.rank).collect()
        };
        let split = |r: Vec<usize>| (!r.is_empty()).then(|| summarize_ranks(&r, boot)).transpose();
        Ok(EvalReport {
            model: model.to_string(),
            task: task.to_string(),
            seen: split(ranks(&|q| q.seen))?,
            unseen: split(ranks(&|q| !q.seen))?,
            overall: split(ranks(&|_| true))?,
            unanswerable: queries.iter().filter(|q| q.rank.is_none()).count(),
            queries,
        })
    }

    pub fn split(&self, name: &str) -> Option<&SplitSummary> {
        match name {
            "seen" => self.seen.as_ref(),
            "unseen" => self.unseen.as_ref(),
            "overall" => self.overall.as_ref(),
            _ => None,
        }
    }
}

/// A trained model plus what it needs to condition on a context.
#[derive(Clone, Copy, Debug)]
pub struct EvalModel<'a> {
    pub params: &'a ModelParams,
    pub vocab: &'a Vocab,
    pub contexts: Option<&'a ContextEmbeddingTable>,
}

impl<'a> EvalModel<'a> {
    pub fn new(params: &'a ModelParams, vocab: &'a Vocab, contexts: Option<&'a ContextEmbeddingTable>) -> Result<Self> {
        if params.config.vocab_size != vocab.len() {
            return Err(Error::Config("vocabulary does not match the model".into()));
        }
        if params.config.mode == Mode::Soc {
            let table = contexts.ok_or_else(|| Error::Mode("SOC evaluation needs a context table".into()))?;
            if table.dim() != params.config.hidden {
                return Err(Error::Config(format!(
                    "context vectors have dimension {} but the model hidden size is {}",
                    table.dim(),
                    params.config.hidden
                )));
            }
        }
        Ok(EvalModel { params, vocab, contexts })
    }

    pub fn from_checkpoint(ck: &'a Checkpoint, contexts: Option<&'a ContextEmbeddingTable>) -> Result<Self> {
        EvalModel::new(&ck.params, &ck.vocab, contexts)
    }

    pub fn mode(&self) -> Mode {
        self.params.config.mode
    }

    /// Raw vocabulary logits at the mask of `template` grounded at `context`.
    pub fn mask_logits(&self, template: &[String], context: &ContextId) -> Result<Vec<f64>> {
        let enc = encode_tokens(template, context, self.vocab, self.mode())?;
        let sc = match &enc.context {
            Some(ctx) => Some(self.contexts.expect("checked in new").lookup(ctx)?),
            None => None,
        };
        mask_logits(self.params, &enc.ids, sc)
    }

    pub fn ranking(&self, template: &[String], context: &ContextId) -> Result<Vec<u32>> {
        Ok(rank_by_logits(&self.mask_logits(template, context)?))
    }

    fn answer_ids(&self, answer: &[String]) -> Vec<u32> {
        answer.iter().filter_map(|t| self.vocab.id(t)).collect()
    }
}

/// Ranks every query's answer and aggregates by split. Queries run in
/// parallel; records keep query order.
pub fn run_cloze_eval(model: &EvalModel, queries: &[ClozeQuery], boot: &BootstrapConfig) -> Result<EvalReport> {
    let tasks: BTreeSet<&str> = queries.iter().map(|q| q.task.as_str()).collect();
    let records = queries
        .par_iter()
        .map(|q| {
            let ranking = model.ranking(&q.template, &q.context)?;
            let rank = rank_of_answer(&ranking, &model.answer_ids(&q.answer));
            Ok(QueryRecord {
                task: q.task.clone(),
                context: q.context.clone(),
                seen: q.seen,
                rank,
                reciprocal_rank: rank.map(|r| 1.0 / r as f64),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let task = tasks.into_iter().collect::<Vec<_>>().join("+");
    EvalReport::from_records(model.mode().model_name(), &task, records, boot)
}

/// City surface tokens and the places each may refer to.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gazetteer {
    forms: BTreeMap<String, Vec<(ContextId, GeoPoint)>>,
    cities: BTreeMap<ContextId, (String, GeoPoint)>,
}

impl Gazetteer {
    pub fn from_cities(cities: &[City]) -> Self {
        let mut g = Gazetteer::default();
        for c in cities {
            g.forms.entry(c.surface.clone()).or_default().push((c.id.clone(), c.point));
            g.cities.insert(c.id.clone(), (c.surface.clone(), c.point));
        }
        g
    }

    pub fn locations(&self, surface: &str) -> Option<&[(ContextId, GeoPoint)]> {
        self.forms.get(surface).map(Vec::as_slice)
    }

    pub fn surface_forms(&self) -> impl Iterator<Item = &str> {
        self.forms.keys().map(String::as_str)
    }

    pub fn city(&self, id: &ContextId) -> Result<(&str, GeoPoint)> {
        self.cities
            .get(id)
            .map(|(s, p)| (s.as_str(), *p))
            .ok_or_else(|| Error::Lookup(format!("city {id} is not in the gazetteer")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CityPrediction {
    pub surface: String,
    /// Position of the predicted token in the full ranking.
    pub rank: usize,
    /// The gazetteer entry scored, the nearest one for ambiguous names.
    pub resolved: ContextId,
    pub distance_km: f64,
}

/// First city token in `ranking` that is not the input city's own name,
/// scored at its location nearest to the input city.
pub fn closest_admissible_city(
    ranking: &[String],
    input: &ContextId,
    gazetteer: &Gazetteer,
) -> Result<Option<CityPrediction>> {
    let (own, origin) = gazetteer.city(input)?;
    for (i, tok) in ranking.iter().enumerate() {
        if tok == own {
            continue;
        }
        let Some(places) = gazetteer.locations(tok) else { continue };
        let (resolved, distance_km) = places
            .iter()
            .map(|(id, p)| (id, geodesic_distance(origin, *p)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)))
            .expect("gazetteer forms are non-empty");
        return Ok(Some(CityPrediction { surface: tok.clone(), rank: i + 1, resolved: resolved.clone(), distance_km }));
    }
    Ok(None)
}

pub fn run_closecity_eval(
    model: &EvalModel,
    template: &[String],
    input: &ContextId,
    gazetteer: &Gazetteer,
) -> Result<Option<CityPrediction>> {
    let ranking = model.vocab.decode(&model.ranking(template, input)?);
    closest_admissible_city(&ranking, input, gazetteer)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub count: usize,
    pub median: f64,
    pub mean: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

pub fn summarize_distances(distances: &[f64]) -> Result<DistanceSummary> {
    if distances.is_empty() {
        return Err(Error::InputDomain("no distances to summarize".into()));
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::InputDomain("distances must be finite".into()));
    }
    let mut s = distances.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(DistanceSummary {
        count: s.len(),
        median: quantile_sorted(&s, 0.5),
        mean: mean(&s),
        q1: quantile_sorted(&s, 0.25),
        q3: quantile_sorted(&s, 0.75),
        min: s[0],
        max: s[s.len() - 1],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CityRecord {
    pub context: ContextId,
    pub seen: bool,
    /// `None` when no city token appears anywhere in the ranking.
    pub prediction: Option<CityPrediction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloseCityReport {
    pub model: String,
    pub seen: Option<DistanceSummary>,
    pub unseen: Option<DistanceSummary>,
    pub overall: Option<DistanceSummary>,
    pub no_prediction: usize,
    pub cities: Vec<CityRecord>,
}

impl CloseCityReport {
    pub fn split(&self, name: &str) -> Option<&DistanceSummary> {
        match name {
            "seen" => self.seen.as_ref(),
            "unseen" => self.unseen.as_ref(),
            "overall" => self.overall.as_ref(),
            _ => None,
        }
    }
}

/// Runs the distance probe for every context in `inputs` (id, seen flag).
pub fn closecity_report(
    model: &EvalModel,
    template: &[String],
    inputs: &[(ContextId, bool)],
    gazetteer: &Gazetteer,
) -> Result<CloseCityReport> {
    let cities = inputs
        .par_iter()
        .map(|(id, seen)| {
            Ok(CityRecord { context: id.clone(), seen: *seen, prediction: run_closecity_eval(model, template, id, gazetteer)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let split = |pred: &dyn Fn(&CityRecord) -> bool| -> Result<Option<DistanceSummary>> {
        let d: Vec<f64> = cities
            .iter()
            .filter(|c| pred(c))
            .filter_map(|c| c.prediction.as_ref().map(|p| p.distance_km))
            .collect();
        (!d.is_empty()).then(|| summarize_distances(&d)).transpose()
    };
    Ok(CloseCityReport {
        model: model.mode().model_name().to_string(),
        seen: split(&|c| c.seen)?,
        unseen: split(&|c| !c.seen)?,
        overall: split(&|_| true)?,
        no_prediction: cities.iter().filter(|c| c.prediction.is_none()).count(),
        cities,
    })
}

pub const SPLITS: [&str; 3] = ["seen", "unseen", "overall"];

pub const CLOZE_CSV_HEADER: &str = "model,task,split,queries,mrr,mrr_lo,mrr_hi,mean_rank,mean_rank_lo,mean_rank_hi,unanswerable";

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// One CSV row per split of a cloze report; empty splits are skipped.
pub fn cloze_csv_rows(report: &EvalReport) -> Vec<String> {
    SPLITS
        .iter()
        .filter_map(|&split| {
            let s = report.split(split)?;
            Some(format!(
                "{},{},{},{},{},{},{},{},{},{},{}",
                report.model,
                report.task,
                split,
                s.queries,
                s.mrr,
                opt(s.mrr_ci.map(|c| c.0)),
                opt(s.mrr_ci.map(|c| c.1)),
                s.mean_rank,
                opt(s.mean_rank_ci.map(|c| c.0)),
                opt(s.mean_rank_ci.map(|c| c.1)),
                report.unanswerable
            ))
        })
        .collect()
}

pub const CLOSECITY_CSV_HEADER: &str = "model,task,split,cities,median_km,mean_km,q1_km,q3_km,min_km,max_km,no_prediction";

pub fn closecity_csv_rows(report: &CloseCityReport) -> Vec<String> {
    SPLITS
        .iter()
        .filter_map(|&split| {
            let s = report.split(split)?;
            Some(format!(
                "{},closecity,{},{},{},{},{},{},{},{},{}",
                report.model, split, s.count, s.median, s.mean, s.q1, s.q3, s.min, s.max, report.no_prediction
            ))
        })
        .collect()
}
