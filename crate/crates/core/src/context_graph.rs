//! Similarity graphs over social contexts: year chains, geodesic k-nearest
//! neighbour graphs over city coordinates, and k-NN graphs over any metric.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{self, data_lines};

/// Mean Earth radius used by the haversine formula, in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Identifier of one social context (a year, a city, ...).
///
/// Identifiers double as vocabulary tokens and file keys, so they may not be
/// empty or contain whitespace.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ContextId(String);

impl ContextId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::InputDomain("context id must be non-empty".into()));
        }
        if id.chars().any(char::is_whitespace) {
            return Err(Error::InputDomain(format!("context id {id:?} contains whitespace")));
        }
        Ok(ContextId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ContextId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        ContextId::new(value)
    }
}

impl From<ContextId> for String {
    fn from(id: ContextId) -> Self {
        id.0
    }
}

impl From<i64> for ContextId {
    fn from(year: i64) -> Self {
        ContextId(year.to_string())
    }
}

impl fmt::Display for ContextId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for ContextId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// A latitude/longitude pair in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InputDomain(format!("latitude {lat} outside [-90, 90]")));
        }
        if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::InputDomain(format!("longitude {lon} outside [-180, 180]")));
        }
        Ok(GeoPoint { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Great-circle distance in kilometres (haversine on a 6371 km sphere).
pub fn geodesic_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    if a == b {
        return 0.0;
    }
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Undirected, unweighted graph over context identifiers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContextGraph {
    nodes: Vec<ContextId>,
    index: HashMap<ContextId, usize>,
    // sorted neighbour indices
    adj: Vec<Vec<usize>>,
    num_edges: usize,
}

impl ContextGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a node, returning its index. Adding an existing id is a no-op.
    pub fn add_node(&mut self, id: ContextId) -> usize {
        if let Some(&i) = self.index.get(&id) {
            return i;
        }
        let i = self.nodes.len();
        self.index.insert(id.clone(), i);
        self.nodes.push(id);
        self.adj.push(Vec::new());
        i
    }

    /// Adds the undirected edge `{a, b}`. Returns `false` if it was already present.
    pub fn add_edge(&mut self, a: usize, b: usize) -> Result<bool> {
        let n = self.nodes.len();
        if a >= n || b >= n {
            return Err(Error::InputDomain(format!("edge ({a}, {b}) references a missing node")));
        }
        if a == b {
            return Err(Error::InputDomain(format!("self-loop on {}", self.nodes[a])));
        }
        match self.adj[a].binary_search(&b) {
            Ok(_) => Ok(false),
            Err(pos) => {
                self.adj[a].insert(pos, b);
                let pos = self.adj[b].binary_search(&a).unwrap_err();
                self.adj[b].insert(pos, a);
                self.num_edges += 1;
                Ok(true)
            }
        }
    }

    pub fn add_edge_by_id(&mut self, a: &ContextId, b: &ContextId) -> Result<bool> {
        let ia = self.node_index(a)?;
        let ib = self.node_index(b)?;
        self.add_edge(ia, ib)
    }

    pub fn nodes(&self) -> &[ContextId] {
        &self.nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_index(&self, id: &ContextId) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("context {id} is not a graph node")))
    }

    pub fn contains(&self, id: &ContextId) -> bool {
        self.index.contains_key(id)
    }

    /// Sorted neighbour indices of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a < self.adj.len() && self.adj[a].binary_search(&b).is_ok()
    }

    pub fn has_edge_by_id(&self, a: &ContextId, b: &ContextId) -> bool {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&ia), Some(&ib)) => self.has_edge(ia, ib),
            _ => false,
        }
    }

    /// Every edge once, endpoints in lexicographic order, edges sorted.
    pub fn sorted_edges(&self) -> Vec<(&ContextId, &ContextId)> {
        let mut edges: Vec<(&ContextId, &ContextId)> = Vec::with_capacity(self.num_edges);
        for (a, nbrs) in self.adj.iter().enumerate() {
            for &b in nbrs {
                let (x, y) = (&self.nodes[a], &self.nodes[b]);
                if x < y {
                    edges.push((x, y));
                }
            }
        }
        edges.sort();
        edges
    }

    /// Serializes to the text graph format: a `nodes: n edges: m` header, one
    /// `a<TAB>b` line per edge, then one line per isolated node.
    pub fn to_text(&self) -> String {
        let mut out = format!("nodes: {} edges: {}\n", self.num_nodes(), self.num_edges());
        for (a, b) in self.sorted_edges() {
            out.push_str(a.as_str());
            out.push('\t');
            out.push_str(b.as_str());
            out.push('\n');
        }
        let mut isolated: Vec<&ContextId> =
            (0..self.num_nodes()).filter(|&i| self.degree(i) == 0).map(|i| &self.nodes[i]).collect();
        isolated.sort();
        for id in isolated {
            out.push_str(id.as_str());
            out.push('\n');
        }
        out
    }

    /// Parses the text graph format. Node order in the result is lexicographic.
    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = data_lines(text);
        let (hline, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty graph file"))?;
        let (n, m) = parse_graph_header(header).ok_or_else(|| {
            Error::parse(path, hline, format!("expected `nodes: <n> edges: <m>`, got {header:?}"))
        })?;
        let mut ids = BTreeSet::new();
        let mut pairs = Vec::new();
        for (lineno, line) in lines {
            let fields: Vec<&str> = line.split('\t').collect();
            let parse_id = |s: &str| ContextId::new(s).map_err(|e| Error::parse(path, lineno, e.to_string()));
            match fields.as_slice() {
                [a] => {
                    ids.insert(parse_id(a)?);
                }
                [a, b] => {
                    let (a, b) = (parse_id(a)?, parse_id(b)?);
                    ids.insert(a.clone());
                    ids.insert(b.clone());
                    pairs.push((a, b, lineno));
                }
                _ => return Err(Error::parse(path, lineno, "expected `id_a<TAB>id_b`")),
            }
        }
        let mut g = ContextGraph::new();
        for id in ids {
            g.add_node(id);
        }
        for (a, b, lineno) in pairs {
            let added = g.add_edge_by_id(&a, &b).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
            if !added {
                return Err(Error::parse(path, lineno, format!("duplicate edge {a}-{b}")));
            }
        }
        if g.num_nodes() != n || g.num_edges() != m {
            return Err(Error::parse(
                path,
                hline,
                format!("header declares {n} nodes / {m} edges, body has {} / {}", g.num_nodes(), g.num_edges()),
            ));
        }
        Ok(g)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&fsutil::read_to_string(path)?, path)
    }
}

fn parse_graph_header(line: &str) -> Option<(usize, usize)> {
    let rest = line.trim().strip_prefix("nodes:")?;
    let (n, rest) = rest.split_once("edges:")?;
    Some((n.trim().parse().ok()?, rest.trim().parse().ok()?))
}

/// Path graph linking every year to the next one.
pub fn build_time_chain(start_year: i64, end_year: i64) -> Result<ContextGraph> {
    if start_year > end_year {
        return Err(Error::InputDomain(format!("start year {start_year} is after end year {end_year}")));
    }
    let mut g = ContextGraph::new();
    let mut prev = None;
    for year in start_year..=end_year {
        let i = g.add_node(ContextId::from(year));
        if let Some(p) = prev {
            g.add_edge(p, i)?;
        }
        prev = Some(i);
    }
    Ok(g)
}

/// Links each context to its `k` nearest others under `dist`, then drops
/// direction. Ties are broken by lexicographic id order; nodes are ordered
/// lexicographically.
pub fn build_metric_knn<P, D>(contexts: &BTreeMap<ContextId, P>, dist: D, k: usize) -> Result<ContextGraph>
where
    D: Fn(&P, &P) -> f64,
{
    if k < 1 {
        return Err(Error::InputDomain("k must be at least 1".into()));
    }
    if contexts.len() < 2 {
        return Err(Error::InputDomain(format!("need at least 2 contexts, got {}", contexts.len())));
    }
    let entries: Vec<(&ContextId, &P)> = contexts.iter().collect();
    let mut g = ContextGraph::new();
    for (id, _) in &entries {
        g.add_node((*id).clone());
    }
    for (i, (id, p)) in entries.iter().enumerate() {
        let mut others = Vec::with_capacity(entries.len() - 1);
        for (j, (_, q)) in entries.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = dist(p, q);
            if !d.is_finite() || d < 0.0 {
                return Err(Error::InputDomain(format!("distance from {id} is {d}; must be finite and >= 0")));
            }
            others.push((d, j));
        }
        // entries are already in id order, so a stable sort on distance breaks ties by id
        others.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(_, j) in others.iter().take(k) {
            g.add_edge(i, j)?;
        }
    }
    Ok(g)
}

pub fn build_geo_knn(cities: &BTreeMap<ContextId, GeoPoint>, k: usize) -> Result<ContextGraph> {
    build_metric_knn(cities, |a, b| geodesic_distance(*a, *b), k)
}

/// Parses a gazetteer: `context_id<TAB>lat<TAB>lon` per line, `#` comments.
/// Extra columns are ignored.
pub fn parse_gazetteer(text: &str, path: &Path) -> Result<BTreeMap<ContextId, GeoPoint>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in data_lines(text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(Error::parse(path, lineno, "expected `context_id<TAB>lat<TAB>lon`"));
        }
        let (id, point) = parse_located(&fields, path, lineno)?;
        if out.insert(id.clone(), point).is_some() {
            return Err(Error::parse(path, lineno, format!("duplicate context {id}")));
        }
    }
    Ok(out)
}

pub(crate) fn parse_located(fields: &[&str], path: &Path, lineno: usize) -> Result<(ContextId, GeoPoint)> {
    let id = ContextId::new(fields[0].trim()).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
    let num = |s: &str, what: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::parse(path, lineno, format!("bad {what} {s:?}")))
    };
    let point = GeoPoint::new(num(fields[1], "latitude")?, num(fields[2], "longitude")?)
        .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
    Ok((id, point))
}

pub fn read_gazetteer(path: &Path) -> Result<BTreeMap<ContextId, GeoPoint>> {
    parse_gazetteer(&fsutil::read_to_string(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> ContextId {
        ContextId::new(s).unwrap()
    }

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    const BUFFALO: (f64, f64) = (42.8864, -78.8784);
    const TORONTO: (f64, f64) = (43.6532, -79.3832);
    const NYC: (f64, f64) = (40.7128, -74.0060);

    #[test]
    fn context_id_rejects_whitespace_and_empty() {
        assert!(ContextId::new("").is_err());
        assert!(ContextId::new("new york").is_err());
        assert!(ContextId::new("new_york").is_ok());
    }

    #[test]
    fn geo_point_range_checks() {
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -180.5).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
        assert!(GeoPoint::new(-90.0, 180.0).is_ok());
    }

    #[test]
    fn reported_city_distances() {
        let b = pt(BUFFALO.0, BUFFALO.1);
        let within = |d: f64, target: f64| (d - target).abs() <= 0.1 * target;
        assert!(within(geodesic_distance(b, pt(TORONTO.0, TORONTO.1)), 100.0));
        assert!(within(geodesic_distance(b, pt(NYC.0, NYC.1)), 470.0));
        let pit = pt(40.4406, -79.9959);
        let col = pt(39.9612, -82.9988);
        assert!(within(geodesic_distance(pit, col), 261.0));
        assert_eq!(geodesic_distance(b, b), 0.0);
    }

    #[test]
    fn antipodal_distance_is_half_circumference() {
        let d = geodesic_distance(pt(0.0, 0.0), pt(0.0, 180.0));
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 1e-6);
    }

    #[test]
    fn time_chain_shapes() {
        let g = build_time_chain(1900, 1902).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(
            g.sorted_edges(),
            vec![(&id("1900"), &id("1901")), (&id("1901"), &id("1902"))]
        );
        let single = build_time_chain(1950, 1950).unwrap();
        assert_eq!((single.num_nodes(), single.num_edges()), (1, 0));
        let full = build_time_chain(1900, 2000).unwrap();
        assert_eq!((full.num_nodes(), full.num_edges()), (101, 100));
        assert_eq!(full.degree(0), 1);
        assert_eq!(full.degree(100), 1);
        assert!((1..100).all(|i| full.degree(i) == 2));
        assert!(build_time_chain(2000, 1900).is_err());
    }

    #[test]
    fn collinear_knn_k1() {
        let pts: BTreeMap<ContextId, f64> = [("a", 0.0), ("b", 1.0), ("c", 3.0)]
            .into_iter()
            .map(|(k, v)| (id(k), v))
            .collect();
        let g = build_metric_knn(&pts, |x, y| (x - y).abs(), 1).unwrap();
        assert_eq!(g.sorted_edges(), vec![(&id("a"), &id("b")), (&id("b"), &id("c"))]);
    }

    #[test]
    fn knn_saturates_to_complete_graph() {
        let pts: BTreeMap<ContextId, f64> =
            (0..6).map(|i| (id(&format!("n{i}")), (i * i) as f64)).collect();
        let g = build_metric_knn(&pts, |x, y| (x - y).abs(), 5).unwrap();
        assert_eq!(g.num_edges(), 15);
        let g = build_metric_knn(&pts, |x, y| (x - y).abs(), 50).unwrap();
        assert_eq!(g.num_edges(), 15);
    }

    #[test]
    fn knn_ties_break_lexicographically() {
        // b is equidistant from a and c; k=1 must pick a
        let pts: BTreeMap<ContextId, f64> =
            [("a", 0.0), ("b", 1.0), ("c", 2.0)].into_iter().map(|(k, v)| (id(k), v)).collect();
        let g = build_metric_knn(&pts, |x, y| (x - y).abs(), 1).unwrap();
        // a->b, b->a (tie with c), c->b
        assert_eq!(g.sorted_edges(), vec![(&id("a"), &id("b")), (&id("b"), &id("c"))]);
        assert_eq!(g.degree(g.node_index(&id("b")).unwrap()), 2);
    }

    #[test]
    fn knn_errors() {
        let one: BTreeMap<ContextId, f64> = [(id("x"), 0.0)].into_iter().collect();
        assert!(matches!(build_metric_knn(&one, |a, b| a - b, 1), Err(Error::InputDomain(_))));
        let two: BTreeMap<ContextId, f64> = [(id("x"), 0.0), (id("y"), 1.0)].into_iter().collect();
        assert!(matches!(build_metric_knn(&two, |a, b| (a - b).abs(), 0), Err(Error::InputDomain(_))));
        assert!(build_metric_knn(&two, |_, _| f64::NAN, 1).is_err());
    }

    #[test]
    fn geo_knn_buffalo_toronto_nyc() {
        let cities: BTreeMap<ContextId, GeoPoint> = [
            ("buffalo", BUFFALO),
            ("toronto", TORONTO),
            ("new_york_city", NYC),
        ]
        .into_iter()
        .map(|(k, (a, b))| (id(k), pt(a, b)))
        .collect();
        let g = build_geo_knn(&cities, 1).unwrap();
        assert_eq!(
            g.sorted_edges(),
            vec![(&id("buffalo"), &id("new_york_city")), (&id("buffalo"), &id("toronto"))]
        );
        let single: BTreeMap<_, _> = [(id("buffalo"), pt(BUFFALO.0, BUFFALO.1))].into_iter().collect();
        assert!(build_geo_knn(&single, 1).is_err());
    }

    #[test]
    fn graph_text_golden_and_round_trip() {
        let g = build_time_chain(1900, 1902).unwrap();
        let text = g.to_text();
        assert_eq!(text, "nodes: 3 edges: 2\n1900\t1901\n1901\t1902\n");
        let back = ContextGraph::from_text(&text, Path::new("mem")).unwrap();
        assert_eq!(back.sorted_edges(), g.sorted_edges());

        let single = build_time_chain(1950, 1950).unwrap();
        let back = ContextGraph::from_text(&single.to_text(), Path::new("mem")).unwrap();
        assert_eq!(back.nodes(), &[id("1950")]);
    }

    #[test]
    fn graph_text_rejects_bad_header_and_counts() {
        let p = Path::new("g.txt");
        assert!(matches!(ContextGraph::from_text("nodes 3\n", p), Err(Error::Parse { line: 1, .. })));
        assert!(ContextGraph::from_text("nodes: 3 edges: 1\na\tb\n", p).is_err());
        assert!(ContextGraph::from_text("nodes: 2 edges: 1\na\tb\na\tb\n", p).is_err());
    }

    #[test]
    fn gazetteer_parsing() {
        let text = "# city\tlat\tlon\nbuffalo\t42.8864\t-78.8784\n\ntoronto\t43.6532\t-79.3832\n";
        let g = parse_gazetteer(text, Path::new("gaz.tsv")).unwrap();
        assert_eq!(g.len(), 2);
        let err = parse_gazetteer("x\t95\t0\n", Path::new("gaz.tsv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_gazetteer("a\t1\t2\nb\tnorth\t2\n", Path::new("gaz.tsv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }
}
