//! Undirected graph, node labels and the known / validation / novel label
//! partition.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{Seeds, Stream};

/// Undirected simple graph over dense node ids `0..node_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    node_count: usize,
    /// Unique undirected edges, stored as `(u, v)` with `u < v`, sorted.
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from arbitrary pairs. Self-loops are dropped and
    /// duplicates (in either orientation) collapsed.
    pub fn from_edges<I>(node_count: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut set = BTreeSet::new();
        for (u, v) in pairs {
            for id in [u, v] {
                if id >= node_count {
                    return Err(Error::NodeOutOfRange { id, node_count });
                }
            }
            if u != v {
                set.insert((u.min(v), u.max(v)));
            }
        }
        let mut adjacency = vec![Vec::new(); node_count];
        for &(u, v) in &set {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Graph {
            node_count,
            edges: set.into_iter().collect(),
            adjacency,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    /// Writes the graph back out as an edge list readable by
    /// [`load_edge_list`].
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# nodes={} edges={}", self.node_count, self.edges.len())?;
        for &(u, v) in &self.edges {
            writeln!(out, "{u} {v}")?;
        }
        Ok(())
    }
}

/// Mapping between external node tokens and dense internal ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    external: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    /// Identity table for ids `0..n`.
    pub fn identity(n: usize) -> Self {
        let mut map = IdMap::default();
        for i in 0..n {
            map.intern(&i.to_string());
        }
        map
    }

    fn intern(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.external.len();
        self.external.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn external(&self, id: usize) -> &str {
        &self.external[id]
    }

    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }

    /// Reads a table written by [`IdMap::write`]; internal ids must be
    /// `0, 1, 2, ...` in order.
    pub fn read<R: BufRead>(source: R) -> Result<Self> {
        let mut map = IdMap::default();
        for item in data_lines(source) {
            let (line, text) = item?;
            let (a, b) = two_tokens(line, &text)?;
            if parse_id(line, a)? != map.len() || map.get(b).is_some() {
                return Err(Error::Parse {
                    line,
                    msg: "node map must list internal ids 0.. in order, each external id once".into(),
                });
            }
            map.intern(b);
        }
        Ok(map)
    }

    /// Two-column text table: `internal_id external_id`.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, ext) in self.external.iter().enumerate() {
            writeln!(out, "{i} {ext}")?;
        }
        Ok(())
    }
}

fn data_lines<R: BufRead>(source: R) -> impl Iterator<Item = Result<(usize, String)>> {
    source.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })),
        Ok(l) => {
            let t = l.trim();
            if t.is_empty() || t.starts_with('#') {
                None
            } else {
                Some(Ok((i + 1, t.to_string())))
            }
        }
    })
}

fn two_tokens(line: usize, text: &str) -> Result<(&str, &str)> {
    let mut it = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty());
    match (it.next(), it.next(), it.next()) {
        (Some(a), Some(b), None) => Ok((a, b)),
        _ => Err(Error::Parse {
            line,
            msg: format!("expected two node ids, got {text:?}"),
        }),
    }
}

fn parse_id(line: usize, token: &str) -> Result<usize> {
    token.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid node id {token:?}"),
    })
}

/// Reads an edge list whose ids are already dense non-negative integers.
/// `node_count` is one past the largest id seen, or the count declared by a
/// `# nodes=N` header (as written by [`Graph::write_edge_list`]) if larger,
/// so isolated trailing nodes survive a round trip.
pub fn load_edge_list<R: BufRead>(source: R) -> Result<Graph> {
    let mut pairs = Vec::new();
    let mut node_count = 0;
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let text = line.trim();
        if let Some(comment) = text.strip_prefix('#') {
            if let Some(n) = declared_nodes(comment) {
                node_count = node_count.max(n);
            }
            continue;
        }
        if text.is_empty() {
            continue;
        }
        let (a, b) = two_tokens(line_no, text)?;
        let (u, v) = (parse_id(line_no, a)?, parse_id(line_no, b)?);
        node_count = node_count.max(u.max(v) + 1);
        pairs.push((u, v));
    }
    if node_count == 0 {
        return Err(Error::EmptyGraph);
    }
    Graph::from_edges(node_count, pairs)
}

fn declared_nodes(comment: &str) -> Option<usize> {
    comment
        .split_whitespace()
        .find_map(|tok| tok.strip_prefix("nodes="))
        .and_then(|n| n.parse().ok())
}

/// Reads an edge list with arbitrary node tokens, assigning dense ids in
/// order of first appearance.
pub fn load_edge_list_remapped<R: BufRead>(source: R) -> Result<(Graph, IdMap)> {
    let mut map = IdMap::default();
    let mut pairs = Vec::new();
    for item in data_lines(source) {
        let (line, text) = item?;
        let (a, b) = two_tokens(line, &text)?;
        pairs.push((map.intern(a), map.intern(b)));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let graph = Graph::from_edges(map.len(), pairs)?;
    Ok((graph, map))
}

/// Binary node-label indicators, stored as the sorted positive set of each
/// label. Every node outside a label's positive set is a negative for it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    node_count: usize,
    positives: Vec<Vec<usize>>,
}

impl LabelMatrix {
    pub fn new(node_count: usize, mut positives: Vec<Vec<usize>>) -> Result<Self> {
        for list in &mut positives {
            if let Some(&id) = list.iter().find(|&&id| id >= node_count) {
                return Err(Error::NodeOutOfRange { id, node_count });
            }
            list.sort_unstable();
            list.dedup();
        }
        Ok(LabelMatrix {
            node_count,
            positives,
        })
    }

    pub fn label_count(&self) -> usize {
        self.positives.len()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn positives(&self, label: usize) -> &[usize] {
        &self.positives[label]
    }

    pub fn negative_count(&self, label: usize) -> usize {
        self.node_count - self.positives[label].len()
    }

    pub fn has_label(&self, node: usize, label: usize) -> bool {
        self.positives[label].binary_search(&node).is_ok()
    }

    /// Writes `node label` lines, ordered by label then node.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (label, nodes) in self.positives.iter().enumerate() {
            for v in nodes {
                writeln!(out, "{v} {label}")?;
            }
        }
        Ok(())
    }
}

fn parse_label_lines<R, F>(source: R, node_count: usize, mut node_id: F) -> Result<LabelMatrix>
where
    R: BufRead,
    F: FnMut(usize, &str) -> Result<usize>,
{
    let mut positives: Vec<Vec<usize>> = Vec::new();
    for item in data_lines(source) {
        let (line, text) = item?;
        let (a, b) = two_tokens(line, &text)?;
        let node = node_id(line, a)?;
        if node >= node_count {
            return Err(Error::NodeOutOfRange {
                id: node,
                node_count,
            });
        }
        let label = b.parse::<usize>().map_err(|_| Error::Parse {
            line,
            msg: format!("invalid label id {b:?}"),
        })?;
        if label >= positives.len() {
            positives.resize(label + 1, Vec::new());
        }
        positives[label].push(node);
    }
    LabelMatrix::new(node_count, positives)
}

/// Reads `node_id label_id` lines over dense node ids. Labels between 0 and
/// the largest id that never occur are kept with no positives.
pub fn load_labels<R: BufRead>(source: R, node_count: usize) -> Result<LabelMatrix> {
    parse_label_lines(source, node_count, parse_id)
}

/// Like [`load_labels`] but resolves node tokens through `map`.
pub fn load_labels_remapped<R: BufRead>(source: R, map: &IdMap) -> Result<LabelMatrix> {
    parse_label_lines(source, map.len(), |line, token| {
        map.get(token).ok_or_else(|| Error::Parse {
            line,
            msg: format!("node {token:?} does not appear in the edge list"),
        })
    })
}

/// Train / validation / test label partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSplit {
    pub known: Vec<usize>,
    pub validation: Vec<usize>,
    pub novel: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatio {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatio {
    fn default() -> Self {
        SplitRatio {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatio {
    /// Set sizes: `⌊r·n⌋` each, leftover labels handed out one at a time
    /// starting with the training set. A set left empty takes one label from
    /// the largest set when `n ≥ 3`.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let ratios = [self.train, self.val, self.test];
        let mut sizes = ratios.map(|r| (r * n as f64 + 1e-9).floor() as usize);
        let mut remainder = n - sizes.iter().sum::<usize>();
        let mut i = 0;
        while remainder > 0 {
            sizes[i % 3] += 1;
            remainder -= 1;
            i += 1;
        }
        if n >= 3 {
            for k in 0..3 {
                if sizes[k] == 0 {
                    let largest = (0..3).max_by_key(|&j| (sizes[j], 3 - j)).unwrap();
                    sizes[largest] -= 1;
                    sizes[k] += 1;
                }
            }
        }
        sizes
    }
}

pub fn split_labels(labels: &LabelMatrix, ratio: SplitRatio, seed: u64) -> Result<LabelSplit> {
    let n = labels.label_count();
    let err = |msg: &str| Error::Split {
        label_count: n,
        msg: msg.to_string(),
    };
    let r = [ratio.train, ratio.val, ratio.test];
    if r.iter().any(|&x| !(x > 0.0)) {
        return Err(err("ratios must be positive"));
    }
    if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(err("ratios must sum to 1"));
    }
    if n < 3 {
        return Err(err("need at least 3 labels"));
    }
    let sizes = ratio.sizes(n);
    if sizes.contains(&0) {
        return Err(err("ratio leaves an empty set"));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut Seeds::new(seed).stream(Stream::Split));
    let sorted = |range: std::ops::Range<usize>| {
        let mut v = ids[range].to_vec();
        v.sort_unstable();
        v
    };
    Ok(LabelSplit {
        known: sorted(0..sizes[0]),
        validation: sorted(sizes[0]..sizes[0] + sizes[1]),
        novel: sorted(sizes[0] + sizes[1]..n),
    })
}

impl LabelSplit {
    /// Text form: three lines `known: ...`, `validation: ...`, `novel: ...`.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (name, set) in [
            ("known", &self.known),
            ("validation", &self.validation),
            ("novel", &self.novel),
        ] {
            let ids: Vec<String> = set.iter().map(|x| x.to_string()).collect();
            writeln!(out, "{name}: {}", ids.join(" "))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(source: R) -> Result<Self> {
        let mut split = LabelSplit {
            known: Vec::new(),
            validation: Vec::new(),
            novel: Vec::new(),
        };
        for item in data_lines(source) {
            let (line, text) = item?;
            let (name, rest) = text.split_once(':').ok_or_else(|| Error::Parse {
                line,
                msg: "expected `set: ids`".into(),
            })?;
            let ids = rest
                .split_whitespace()
                .map(|t| parse_id(line, t))
                .collect::<Result<Vec<_>>>()?;
            match name.trim() {
                "known" => split.known = ids,
                "validation" => split.validation = ids,
                "novel" => split.novel = ids,
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown label set {other:?}"),
                    })
                }
            }
        }
        Ok(split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph(text: &str) -> Result<Graph> {
        load_edge_list(text.as_bytes())
    }

    #[test]
    fn path_graph() {
        let g = graph("0 1\n1 2\n").unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.adjacency(), &[vec![1], vec![0, 2], vec![1]]);
    }

    #[test]
    fn duplicates_and_self_loops() {
        let g = graph("0 1\n1 0\n2 2\n").unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.adjacency(), &[vec![1], vec![0], vec![]]);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn comments_and_commas() {
        let g = graph("# header\n\n0,1\n  1\t2  \n").unwrap();
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn parse_error_names_line() {
        match graph("0 1\n1 x\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(graph("0 1 2\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_input() {
        assert!(matches!(graph("# nothing\n"), Err(Error::EmptyGraph)));
        assert!(matches!(
            load_edge_list_remapped("".as_bytes()),
            Err(Error::EmptyGraph)
        ));
    }

    #[test]
    fn remapped_ids() {
        let (g, map) = load_edge_list_remapped("10 20\n20 35\n".as_bytes()).unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(map.get("35"), Some(2));
        assert_eq!(map.external(1), "20");
        let labels = load_labels_remapped("35 0\n10 1\n".as_bytes(), &map).unwrap();
        assert_eq!(labels.positives(0), &[2]);
        assert_eq!(labels.positives(1), &[0]);
        assert!(load_labels_remapped("99 0\n".as_bytes(), &map).is_err());
        let mut buf = Vec::new();
        map.write(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "0 10\n1 20\n2 35\n");
        assert_eq!(IdMap::read(buf.as_slice()).unwrap(), map);
        assert!(IdMap::read("1 10\n".as_bytes()).is_err());
    }

    #[test]
    fn labels() {
        let l = load_labels("0 0\n1 0\n2 1\n".as_bytes(), 3).unwrap();
        assert_eq!(l.label_count(), 2);
        assert_eq!(l.positives(0), &[0, 1]);
        assert_eq!(l.positives(1), &[2]);
        assert_eq!(l.negative_count(0), 1);
        assert!(l.has_label(2, 1));
    }

    #[test]
    fn labels_keep_empty_and_collapse_duplicates() {
        let l = load_labels("0 2\n0 2\n1 0\n".as_bytes(), 2).unwrap();
        assert_eq!(l.label_count(), 3);
        assert!(l.positives(1).is_empty());
        assert_eq!(l.positives(2), &[0]);
    }

    #[test]
    fn label_errors() {
        assert!(matches!(
            load_labels("5 0\n".as_bytes(), 3),
            Err(Error::NodeOutOfRange { id: 5, .. })
        ));
        assert!(matches!(
            load_labels("0\n".as_bytes(), 3),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    fn n_labels(n: usize) -> LabelMatrix {
        LabelMatrix::new(4, vec![vec![0]; n]).unwrap()
    }

    #[test]
    fn split_sizes() {
        let r = SplitRatio::default();
        assert_eq!(r.sizes(39), [24, 8, 7]);
        assert_eq!(r.sizes(10), [6, 2, 2]);
        assert_eq!(r.sizes(16), [10, 3, 3]);
        assert_eq!(r.sizes(3), [1, 1, 1]);
        assert_eq!(r.sizes(4), [2, 1, 1]);
        let s = split_labels(&n_labels(39), r, 1).unwrap();
        assert_eq!(
            (s.known.len(), s.validation.len(), s.novel.len()),
            (24, 8, 7)
        );
        assert_eq!(s, split_labels(&n_labels(39), r, 1).unwrap());
    }

    #[test]
    fn split_errors() {
        let r = SplitRatio::default();
        assert!(matches!(
            split_labels(&n_labels(2), r, 0),
            Err(Error::Split { .. })
        ));
        let bad = SplitRatio {
            train: 0.5,
            val: 0.2,
            test: 0.2,
        };
        assert!(split_labels(&n_labels(10), bad, 0).is_err());
        let neg = SplitRatio {
            train: 1.2,
            val: -0.1,
            test: -0.1,
        };
        assert!(split_labels(&n_labels(10), neg, 0).is_err());
    }

    #[test]
    fn header_keeps_isolated_nodes() {
        let g = Graph::from_edges(5, [(0, 1)]).unwrap();
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        assert_eq!(load_edge_list(buf.as_slice()).unwrap(), g);
        assert_eq!(load_edge_list("0 1\n".as_bytes()).unwrap().node_count(), 2);
        assert!(matches!(load_edge_list("# nothing\n".as_bytes()), Err(Error::EmptyGraph)));
    }

    #[test]
    fn labels_round_trip() {
        let l = LabelMatrix::new(5, vec![vec![3, 0], vec![], vec![4]]).unwrap();
        let mut buf = Vec::new();
        l.write(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "0 0\n3 0\n4 2\n");
        assert_eq!(load_labels(buf.as_slice(), 5).unwrap(), l);
    }

    #[test]
    fn split_round_trip() {
        let s = split_labels(&n_labels(12), SplitRatio::default(), 5).unwrap();
        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        assert_eq!(LabelSplit::read(buf.as_slice()).unwrap(), s);
    }

    proptest! {
        #[test]
        fn adjacency_symmetric(pairs in proptest::collection::vec((0usize..30, 0usize..30), 1..200)) {
            let text: String = pairs.iter().map(|(u, v)| format!("{u} {v}\n")).collect();
            let g = load_edge_list(text.as_bytes()).unwrap();
            for i in 0..g.node_count() {
                prop_assert!(!g.neighbors(i).contains(&i));
                prop_assert!(g.neighbors(i).windows(2).all(|w| w[0] < w[1]));
                for &j in g.neighbors(i) {
                    prop_assert!(g.neighbors(j).contains(&i));
                }
            }
            let mut buf = Vec::new();
            g.write_edge_list(&mut buf).unwrap();
            let again = load_edge_list(buf.as_slice()).unwrap();
            // trailing isolated nodes are not representable in an edge list
            prop_assert_eq!(again.adjacency(), &g.adjacency()[..again.node_count()]);
        }

        #[test]
        fn split_partitions(n in 3usize..80, seed in any::<u64>()) {
            let s = split_labels(&n_labels(n), SplitRatio::default(), seed).unwrap();
            let mut all: Vec<usize> = s.known.iter().chain(&s.validation).chain(&s.novel).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let expect = [0.6, 0.2, 0.2].map(|r| r * n as f64);
            for (len, e) in [s.known.len(), s.validation.len(), s.novel.len()].iter().zip(expect) {
                prop_assert!((*len as f64 - e).abs() <= 1.0 + 1e-9);
            }
        }
    }
}
