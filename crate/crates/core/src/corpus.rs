//! Synthetic grounded corpora, vocabularies, and per-mode input encoding.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context_graph::{geodesic_distance, parse_located, ContextId, GeoPoint};
use crate::error::{Error, Result};
use crate::fsutil::{self, data_lines};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const MASK: &str = "[MASK]";
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const MASK_ID: u32 = 2;
const CTX_UNK: &str = "[ctx:unk]";

/// How a model sees the social context of its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// No context at all.
    None,
    /// A control-code token per context appended to the text.
    Ctrl,
    /// A frozen context vector appended to the embedded sequence.
    Soc,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::None, Mode::Ctrl, Mode::Soc];

    pub fn name(self) -> &'static str {
        match self {
            Mode::None => "none",
            Mode::Ctrl => "ctrl",
            Mode::Soc => "soc",
        }
    }

    /// Display name of the model family trained in this mode.
    pub fn model_name(self) -> &'static str {
        match self {
            Mode::None => "BERT",
            Mode::Ctrl => "LMCTRL",
            Mode::Soc => "LMSOC",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "bert" => Ok(Mode::None),
            "ctrl" | "lmctrl" => Ok(Mode::Ctrl),
            "soc" | "lmsoc" => Ok(Mode::Soc),
            other => Err(Error::Config(format!("unknown mode {other:?} (expected none, ctrl or soc)"))),
        }
    }
}

/// Lowercase, whitespace-split tokens. Special tokens keep their spelling.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| if [PAD, UNK, MASK].contains(&t) { t.to_string() } else { t.to_lowercase() })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundedExample {
    pub tokens: Vec<String>,
    pub context: ContextId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub examples: Vec<GroundedExample>,
    /// Contexts that ground training text.
    pub seen: BTreeSet<ContextId>,
    /// Contexts that only appear at evaluation time.
    pub unseen: BTreeSet<ContextId>,
}

impl Corpus {
    pub fn universe(&self) -> BTreeSet<ContextId> {
        self.seen.union(&self.unseen).cloned().collect()
    }

    /// `context_id<TAB>tokens` per example.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            out.push_str(ex.context.as_str());
            out.push('\t');
            out.push_str(&ex.tokens.join(" "));
            out.push('\n');
        }
        out
    }

    /// Parses a corpus file. The seen partition is every context that grounds
    /// an example; `unseen` is filled from `universe` minus seen.
    pub fn from_text(text: &str, path: &Path, universe: &BTreeSet<ContextId>) -> Result<Self> {
        let mut examples = Vec::new();
        let mut seen = BTreeSet::new();
        for (lineno, line) in data_lines(text) {
            let (ctx, toks) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, lineno, "expected `context_id<TAB>tokens`"))?;
            let context = ContextId::new(ctx).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
            let tokens = tokenize(toks);
            if tokens.is_empty() {
                return Err(Error::parse(path, lineno, "example has no tokens"));
            }
            seen.insert(context.clone());
            examples.push(GroundedExample { tokens, context });
        }
        let unseen = universe.difference(&seen).cloned().collect();
        Ok(Corpus { examples, seen, unseen })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn read(path: &Path, universe: &BTreeSet<ContextId>) -> Result<Self> {
        Self::from_text(&fsutil::read_to_string(path)?, path, universe)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerEntry {
    pub task: String,
    pub context: ContextId,
    pub answer: Vec<String>,
}

/// Expected answers per (task, context).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AnswerKey {
    entries: BTreeMap<(String, ContextId), Vec<String>>,
}

impl AnswerKey {
    pub fn insert(&mut self, task: &str, context: ContextId, answer: Vec<String>) {
        self.entries.insert((task.to_string(), context), answer);
    }

    pub fn get(&self, task: &str, context: &ContextId) -> Option<&[String]> {
        self.entries.get(&(task.to_string(), context.clone())).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tasks(&self) -> BTreeSet<&str> {
        self.entries.keys().map(|(t, _)| t.as_str()).collect()
    }

    pub fn contexts(&self) -> BTreeSet<ContextId> {
        self.entries.keys().map(|(_, c)| c.clone()).collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = AnswerEntry> + '_ {
        self.entries
            .iter()
            .map(|((task, context), answer)| AnswerEntry { task: task.clone(), context: context.clone(), answer: answer.clone() })
    }

    /// `task<TAB>context_id<TAB>answer tokens` per entry, sorted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ((task, ctx), answer) in &self.entries {
            out.push_str(&format!("{task}\t{ctx}\t{}\n", answer.join(" ")));
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut key = AnswerKey::default();
        for (lineno, line) in data_lines(text) {
            let fields: Vec<&str> = line.split('\t').collect();
            let [task, ctx, answer] = fields.as_slice() else {
                return Err(Error::parse(path, lineno, "expected `task<TAB>context_id<TAB>answer`"));
            };
            let context = ContextId::new(*ctx).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
            let answer = tokenize(answer);
            if answer.is_empty() {
                return Err(Error::parse(path, lineno, "empty answer"));
            }
            key.insert(task, context, answer);
        }
        Ok(key)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&fsutil::read_to_string(path)?, path)
    }
}

/// The officeholder world: one entity per office per term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalWorldSpec {
    pub start_year: i64,
    pub end_year: i64,
    /// Years each officeholder serves.
    pub term_length: i64,
    /// Spacing of the years that ground training text.
    pub training_step: i64,
    pub instances_per_template: usize,
    pub offices: Vec<String>,
}

impl Default for TemporalWorldSpec {
    fn default() -> Self {
        TemporalWorldSpec {
            start_year: 1900,
            end_year: 2000,
            term_length: 5,
            training_step: 5,
            instances_per_template: 1000,
            offices: vec!["president".into(), "minister".into()],
        }
    }
}

impl TemporalWorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.start_year > self.end_year {
            return Err(Error::Config("start_year must not exceed end_year".into()));
        }
        if self.term_length < 1 || self.training_step < 1 {
            return Err(Error::Config("term_length and training_step must be >= 1".into()));
        }
        if self.instances_per_template < 1 || self.offices.is_empty() {
            return Err(Error::Config("need at least one office and one instance per template".into()));
        }
        for office in &self.offices {
            if office.is_empty() || office.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("office {office:?} must be a single token")));
            }
        }
        Ok(())
    }

    /// Token of the officeholder for `office` in `year`.
    pub fn entity(&self, office: &str, year: i64) -> String {
        let term = (year - self.start_year).div_euclid(self.term_length);
        format!("{office}_{term}")
    }

    pub fn training_years(&self) -> Vec<i64> {
        (self.start_year..=self.end_year).step_by(self.training_step as usize).collect()
    }

    pub fn all_years(&self) -> Vec<i64> {
        (self.start_year..=self.end_year).collect()
    }
}

/// `the <office> is <entity>` sentences grounded at every training year. The
/// answer key covers every integer year in range.
pub fn gen_temporal_corpus(spec: &TemporalWorldSpec, seed: u64) -> Result<(Corpus, AnswerKey)> {
    spec.validate()?;
    let training = spec.training_years();
    let mut examples = Vec::with_capacity(training.len() * spec.offices.len() * spec.instances_per_template);
    for &year in &training {
        for office in &spec.offices {
            let tokens = vec!["the".to_string(), office.clone(), "is".to_string(), spec.entity(office, year)];
            for _ in 0..spec.instances_per_template {
                examples.push(GroundedExample { tokens: tokens.clone(), context: ContextId::from(year) });
            }
        }
    }
    examples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let seen: BTreeSet<ContextId> = training.iter().map(|&y| ContextId::from(y)).collect();
    let unseen = spec.all_years().into_iter().map(ContextId::from).filter(|c| !seen.contains(c)).collect();
    let mut key = AnswerKey::default();
    for year in spec.all_years() {
        for office in &spec.offices {
            key.insert(office, ContextId::from(year), vec![spec.entity(office, year)]);
        }
    }
    Ok((Corpus { examples, seen, unseen }, key))
}

/// A city with its coordinates and the facts the geographic corpus talks about.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct City {
    pub id: ContextId,
    pub point: GeoPoint,
    pub state: Vec<String>,
    pub teams: Vec<String>,
    /// Token naming the city in text; several cities may share one.
    pub surface: String,
}

/// Parses `context_id<TAB>lat<TAB>lon<TAB>state tokens<TAB>team tokens`, with
/// an optional sixth column giving the surface token (defaults to the id).
pub fn parse_city_attributes(text: &str, path: &Path) -> Result<Vec<City>> {
    let mut cities: Vec<City> = Vec::new();
    let mut ids = BTreeSet::new();
    for (lineno, line) in data_lines(text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if !(5..=6).contains(&fields.len()) {
            return Err(Error::parse(
                path,
                lineno,
                "expected `context_id<TAB>lat<TAB>lon<TAB>state tokens<TAB>team tokens[<TAB>surface]`",
            ));
        }
        let (id, point) = parse_located(&fields, path, lineno)?;
        let state = tokenize(fields[3]);
        let teams = tokenize(fields[4]);
        if state.is_empty() {
            return Err(Error::parse(path, lineno, format!("city {id} is missing its state")));
        }
        if teams.is_empty() {
            return Err(Error::parse(path, lineno, format!("city {id} is missing its team")));
        }
        let surface = match fields.get(5).map(|s| tokenize(s)) {
            Some(t) if t.len() == 1 => t[0].clone(),
            Some(_) => return Err(Error::parse(path, lineno, "surface form must be a single token")),
            None => id.as_str().to_lowercase(),
        };
        if !ids.insert(id.clone()) {
            return Err(Error::parse(path, lineno, format!("duplicate city {id}")));
        }
        cities.push(City { id, point, state, teams, surface });
    }
    Ok(cities)
}

pub fn read_city_attributes(path: &Path) -> Result<Vec<City>> {
    parse_city_attributes(&fsutil::read_to_string(path)?, path)
}

const BUILTIN_CITIES: &str = include_str!("../data/us_cities.tsv");

/// Fifty US cities in ten states; the first ten are the usual training cities.
pub fn builtin_us_cities() -> Vec<City> {
    parse_city_attributes(BUILTIN_CITIES, Path::new("us_cities.tsv")).expect("bundled gazetteer parses")
}

pub fn builtin_us_cities_text() -> &'static str {
    BUILTIN_CITIES
}

pub const TASK_STATES: &str = "states";
pub const TASK_NFL: &str = "nfl";
pub const TASK_CLOSECITY: &str = "closecity";

#[derive(Clone, Copy, Debug)]
enum Slot {
    State,
    Team,
    NearbyCity,
}

const GEO_TEMPLATES: [(&str, Slot); 5] = [
    ("i reside in the state of {}", Slot::State),
    ("the most popular nfl team in my state is {}", Slot::Team),
    ("i drive to the city of {} for work", Slot::NearbyCity),
    ("we live in the state of {}", Slot::State),
    ("we cheer for the {}", Slot::Team),
];

/// Cloze templates used to probe the geographic tasks.
pub fn geo_query_template(task: &str) -> Option<&'static str> {
    match task {
        TASK_STATES => Some("i reside in the state of [MASK]"),
        TASK_NFL => Some("the most popular nfl team in my state is [MASK]"),
        TASK_CLOSECITY => Some("i drive to the city of [MASK] for work"),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeoCorpusSpec {
    pub sentences_per_city: usize,
    /// Nearby cities a speaker may mention driving to.
    pub nearby_cities: usize,
}

impl Default for GeoCorpusSpec {
    fn default() -> Self {
        GeoCorpusSpec { sentences_per_city: 200, nearby_cities: 3 }
    }
}

/// Sentences grounded at each seen city, cycling through state, team and
/// commute templates. Unseen cities only appear in the answer keys (their
/// names may still occur as words in text).
pub fn gen_geo_corpus(
    cities: &[City],
    seen: &BTreeSet<ContextId>,
    spec: &GeoCorpusSpec,
    seed: u64,
) -> Result<(Corpus, AnswerKey)> {
    if spec.sentences_per_city < 1 || spec.nearby_cities < 1 {
        return Err(Error::Config("sentences_per_city and nearby_cities must be >= 1".into()));
    }
    let by_id: BTreeMap<&ContextId, &City> = cities.iter().map(|c| (&c.id, c)).collect();
    for s in seen {
        if !by_id.contains_key(s) {
            return Err(Error::InputDomain(format!("seen city {s} is not in the gazetteer")));
        }
    }
    for c in cities {
        if c.state.is_empty() || c.teams.is_empty() {
            return Err(Error::InputDomain(format!("city {} lacks a state or team attribute", c.id)));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(seen.len() * spec.sentences_per_city);
    for id in seen {
        let city = by_id[id];
        let mut others: Vec<(f64, &City)> = cities
            .iter()
            .filter(|o| o.surface != city.surface)
            .map(|o| (geodesic_distance(city.point, o.point), o))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0));
        others.truncate(spec.nearby_cities);
        if others.is_empty() {
            return Err(Error::InputDomain("need at least two distinct cities".into()));
        }
        for i in 0..spec.sentences_per_city {
            let (template, slot) = GEO_TEMPLATES[i % GEO_TEMPLATES.len()];
            let filler = match slot {
                Slot::State => city.state.join(" "),
                Slot::Team => city.teams[rng.random_range(0..city.teams.len())].clone(),
                Slot::NearbyCity => others[rng.random_range(0..others.len())].1.surface.clone(),
            };
            examples.push(GroundedExample { tokens: tokenize(&template.replace("{}", &filler)), context: id.clone() });
        }
    }
    examples.shuffle(&mut rng);

    let mut key = AnswerKey::default();
    for c in cities {
        key.insert(TASK_STATES, c.id.clone(), c.state.clone());
        key.insert(TASK_NFL, c.id.clone(), c.teams.clone());
    }
    let unseen = cities.iter().map(|c| c.id.clone()).filter(|c| !seen.contains(c)).collect();
    Ok((Corpus { examples, seen: seen.clone(), unseen }, key))
}

/// Token/id bijection. Ids 0..3 are `[PAD]`, `[UNK]`, `[MASK]`; corpus tokens
/// follow in sorted order; CTRL vocabularies end with one control token per
/// seen context and `[ctx:unk]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    control: BTreeMap<ContextId, u32>,
    control_unk: Option<u32>,
    /// Ids below this bound are specials or corpus words.
    n_words: u32,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    words: Vec<String>,
    control_contexts: Vec<ContextId>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Vocab::assemble(r.words, &r.control_contexts.into_iter().collect())
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            words: v.tokens[3..v.n_words as usize].to_vec(),
            control_contexts: v.control.keys().cloned().collect(),
        }
    }
}

pub fn control_token(ctx: &ContextId) -> String {
    format!("[ctx:{ctx}]")
}

impl Vocab {
    fn assemble(words: Vec<String>, control_contexts: &BTreeSet<ContextId>) -> Self {
        let mut tokens: Vec<String> = vec![PAD.into(), UNK.into(), MASK.into()];
        tokens.extend(words);
        let n_words = tokens.len() as u32;
        let mut control = BTreeMap::new();
        let mut control_unk = None;
        if !control_contexts.is_empty() {
            for ctx in control_contexts {
                control.insert(ctx.clone(), tokens.len() as u32);
                tokens.push(control_token(ctx));
            }
            control_unk = Some(tokens.len() as u32);
            tokens.push(CTX_UNK.into());
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocab { tokens, index, control, control_unk, n_words }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Ids of ordinary corpus words (candidates for random replacement).
    pub fn word_ids(&self) -> std::ops::Range<u32> {
        3..self.n_words
    }

    pub fn is_control(&self, id: u32) -> bool {
        id >= self.n_words
    }

    pub fn has_control_tokens(&self) -> bool {
        self.control_unk.is_some()
    }

    /// Control-token id for `ctx`, falling back to `[ctx:unk]` for contexts
    /// never seen in training. `None` if this vocabulary has no control tokens.
    pub fn control_id(&self, ctx: &ContextId) -> Option<u32> {
        self.control_unk.map(|unk| self.control.get(ctx).copied().unwrap_or(unk))
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }
}

pub fn build_vocab(corpus: &Corpus, mode: Mode) -> Result<Vocab> {
    if corpus.examples.is_empty() {
        return Err(Error::InputDomain("cannot build a vocabulary from an empty corpus".into()));
    }
    let words: BTreeSet<&str> = corpus
        .examples
        .iter()
        .flat_map(|e| e.tokens.iter().map(String::as_str))
        .filter(|t| ![PAD, UNK, MASK].contains(t))
        .collect();
    let control = if mode == Mode::Ctrl { corpus.seen.clone() } else { BTreeSet::new() };
    Ok(Vocab::assemble(words.into_iter().map(String::from).collect(), &control))
}

/// Model input for one example. `ids[..n_text]` are text positions (eligible
/// for masking); anything after is a control token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoded {
    pub ids: Vec<u32>,
    pub n_text: usize,
    /// Side payload resolved to a vector at the encoder (SOC mode only).
    pub context: Option<ContextId>,
}

/// Encodes text tokens (which may include `[MASK]`) for a given mode.
pub fn encode_tokens(tokens: &[String], context: &ContextId, vocab: &Vocab, mode: Mode) -> Result<Encoded> {
    let mut ids: Vec<u32> = tokens.iter().map(|t| vocab.id_or_unk(t)).collect();
    let n_text = ids.len();
    let context = match mode {
        Mode::None => None,
        Mode::Ctrl => {
            let code = vocab
                .control_id(context)
                .ok_or_else(|| Error::Mode("CTRL encoding needs a vocabulary with control tokens".into()))?;
            ids.push(code);
            None
        }
        Mode::Soc => Some(context.clone()),
    };
    Ok(Encoded { ids, n_text, context })
}

pub fn encode(example: &GroundedExample, vocab: &Vocab, mode: Mode) -> Result<Encoded> {
    encode_tokens(&example.tokens, &example.context, vocab, mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(instances: usize) -> TemporalWorldSpec {
        TemporalWorldSpec { instances_per_template: instances, ..TemporalWorldSpec::default() }
    }

    #[test]
    fn paper_scale_temporal_counts() {
        let (corpus, key) = gen_temporal_corpus(&spec(1000), 0).unwrap();
        assert_eq!(corpus.examples.len(), 42_000);
        assert_eq!(corpus.seen.len(), 21);
        assert_eq!(corpus.unseen.len(), 80);
        assert_eq!(key.len(), 202);
        assert!(corpus.seen.is_disjoint(&corpus.unseen));
        assert!(corpus.examples.iter().all(|e| corpus.seen.contains(&e.context) && e.tokens.len() == 4));
    }

    #[test]
    fn entity_terms() {
        let s = spec(1);
        assert_eq!(s.entity("president", 1912), "president_2");
        assert_eq!(s.entity("president", 1913), s.entity("president", 1910));
        assert_eq!(s.entity("minister", 2000), "minister_20");
        let (_, key) = gen_temporal_corpus(&s, 1).unwrap();
        assert_eq!(key.get("president", &ContextId::from(1913)).unwrap(), ["president_2"]);
    }

    #[test]
    fn temporal_seed_only_changes_order() {
        let (a, ka) = gen_temporal_corpus(&spec(3), 1).unwrap();
        let (b, kb) = gen_temporal_corpus(&spec(3), 2).unwrap();
        assert_eq!(ka, kb);
        assert_ne!(a.examples, b.examples);
        let sorted = |c: &Corpus| {
            let mut v: Vec<String> = c.examples.iter().map(|e| format!("{} {}", e.context, e.tokens.join(" "))).collect();
            v.sort();
            v
        };
        assert_eq!(sorted(&a), sorted(&b));
        assert_eq!(gen_temporal_corpus(&spec(3), 1).unwrap().0, a);
    }

    fn seen_ten() -> (Vec<City>, BTreeSet<ContextId>) {
        let cities = builtin_us_cities();
        let seen = cities.iter().take(10).map(|c| c.id.clone()).collect();
        (cities, seen)
    }

    #[test]
    fn builtin_gazetteer_layout() {
        let (cities, seen) = seen_ten();
        assert_eq!(cities.len(), 50);
        let states: BTreeSet<String> = cities.iter().map(|c| c.state.join(" ")).collect();
        assert_eq!(states.len(), 10);
        let seen_states: BTreeSet<String> =
            cities.iter().filter(|c| seen.contains(&c.id)).map(|c| c.state.join(" ")).collect();
        assert_eq!(seen_states.len(), 10);
        let columbus: Vec<&City> = cities.iter().filter(|c| c.surface == "columbus").collect();
        assert_eq!(columbus.len(), 2);
    }

    #[test]
    fn geo_answer_keys_and_counts() {
        let (cities, seen) = seen_ten();
        let (corpus, key) = gen_geo_corpus(&cities, &seen, &GeoCorpusSpec { sentences_per_city: 100, ..Default::default() }, 3).unwrap();
        assert_eq!(corpus.examples.len(), 1000);
        let buffalo = ContextId::new("buffalo").unwrap();
        assert_eq!(corpus.examples.iter().filter(|e| e.context == buffalo).count(), 100);
        assert_eq!(key.get(TASK_STATES, &ContextId::new("rochester").unwrap()).unwrap(), ["new", "york"]);
        assert_eq!(key.get(TASK_STATES, &ContextId::new("san_jose").unwrap()).unwrap(), ["california"]);
        assert_eq!(corpus.unseen.len(), 40);
        assert!(corpus.examples.iter().all(|e| seen.contains(&e.context)));
    }

    #[test]
    fn geo_rejects_missing_attributes() {
        let err = parse_city_attributes("x\t1\t2\t\tbills\n", Path::new("c.tsv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let (mut cities, seen) = seen_ten();
        cities[0].teams.clear();
        assert!(matches!(
            gen_geo_corpus(&cities, &seen, &GeoCorpusSpec::default(), 0),
            Err(Error::InputDomain(_))
        ));
    }

    #[test]
    fn vocab_sizes_by_mode() {
        let (corpus, _) = gen_temporal_corpus(&spec(2), 0).unwrap();
        let none = build_vocab(&corpus, Mode::None).unwrap();
        let soc = build_vocab(&corpus, Mode::Soc).unwrap();
        let ctrl = build_vocab(&corpus, Mode::Ctrl).unwrap();
        assert_eq!(none, soc);
        assert_eq!(ctrl.len(), none.len() + corpus.seen.len() + 1);
        assert_eq!(none.id(PAD), Some(PAD_ID));
        assert_eq!(none.id(UNK), Some(UNK_ID));
        assert_eq!(none.id(MASK), Some(MASK_ID));
        // permuting the corpus does not change the vocabulary
        let (other, _) = gen_temporal_corpus(&spec(2), 9).unwrap();
        assert_eq!(build_vocab(&other, Mode::Ctrl).unwrap(), ctrl);
    }

    #[test]
    fn encode_by_mode() {
        let (corpus, _) = gen_temporal_corpus(&spec(1), 0).unwrap();
        let ex = GroundedExample { tokens: tokenize("the president is president_0"), context: ContextId::from(1900) };
        let none = build_vocab(&corpus, Mode::None).unwrap();
        let e = encode(&ex, &none, Mode::None).unwrap();
        assert_eq!((e.ids.len(), e.n_text, e.context.clone()), (4, 4, None));
        assert_eq!(none.decode(&e.ids), ex.tokens);

        let ctrl = build_vocab(&corpus, Mode::Ctrl).unwrap();
        let e = encode(&ex, &ctrl, Mode::Ctrl).unwrap();
        assert_eq!(e.ids.len(), 5);
        assert_eq!(ctrl.token(*e.ids.last().unwrap()), "[ctx:1900]");
        let unseen = GroundedExample { context: ContextId::from(1901), ..ex.clone() };
        let e = encode(&unseen, &ctrl, Mode::Ctrl).unwrap();
        assert_eq!(ctrl.token(*e.ids.last().unwrap()), "[ctx:unk]");
        assert!(ctrl.is_control(*e.ids.last().unwrap()));

        let e = encode(&ex, &none, Mode::Soc).unwrap();
        assert_eq!(e.ids.len(), 4);
        assert_eq!(e.context, Some(ContextId::from(1900)));

        assert!(matches!(encode(&ex, &none, Mode::Ctrl), Err(Error::Mode(_))));
        let oov = GroundedExample { tokens: tokenize("the king is x"), context: ContextId::from(1900) };
        assert_eq!(encode(&oov, &none, Mode::None).unwrap().ids[1], UNK_ID);
    }

    #[test]
    fn vocab_serde_round_trip() {
        let (corpus, _) = gen_temporal_corpus(&spec(1), 0).unwrap();
        let ctrl = build_vocab(&corpus, Mode::Ctrl).unwrap();
        let json = serde_json::to_string(&ctrl).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ctrl);
    }

    #[test]
    fn corpus_and_answer_files_round_trip() {
        let (corpus, key) = gen_temporal_corpus(&spec(2), 0).unwrap();
        let universe = corpus.universe();
        let back = Corpus::from_text(&corpus.to_text(), Path::new("c"), &universe).unwrap();
        assert_eq!(back, corpus);
        let kb = AnswerKey::from_text(&key.to_text(), Path::new("k")).unwrap();
        assert_eq!(kb, key);
        assert!(Corpus::from_text("1900 the president\n", Path::new("c"), &universe).is_err());
    }
}
