//! Episodic few-shot binary classification tasks built from a label pool.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph::LabelMatrix;
use crate::rng::Rng;

/// Support and query sizes per polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskShape {
    pub k_support_pos: usize,
    pub k_support_neg: usize,
    pub k_query_pos: usize,
    pub k_query_neg: usize,
}

impl TaskShape {
    pub fn new(k_support_pos: usize, k_support_neg: usize, k_query_pos: usize, k_query_neg: usize) -> Result<Self> {
        let shape = TaskShape {
            k_support_pos,
            k_support_neg,
            k_query_pos,
            k_query_neg,
        };
        if [k_support_pos, k_support_neg, k_query_pos, k_query_neg].contains(&0) {
            return Err(Error::Config(format!("task shape {shape} has an empty set")));
        }
        Ok(shape)
    }

    /// Same counts for support and query.
    pub fn symmetric(pos: usize, neg: usize) -> Result<Self> {
        Self::new(pos, neg, pos, neg)
    }

    pub fn positives_needed(&self) -> usize {
        self.k_support_pos + self.k_query_pos
    }

    pub fn negatives_needed(&self) -> usize {
        self.k_support_neg + self.k_query_neg
    }
}

impl fmt::Display for TaskShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},{},{},{})",
            self.k_support_pos, self.k_support_neg, self.k_query_pos, self.k_query_neg
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub label: usize,
    pub support_pos: Vec<usize>,
    pub support_neg: Vec<usize>,
    pub query_pos: Vec<usize>,
    pub query_neg: Vec<usize>,
}

impl Task {
    /// Query nodes with their 0/1 truth, positives first.
    pub fn queries(&self) -> impl Iterator<Item = (usize, bool)> + '_ {
        self.query_pos
            .iter()
            .map(|&v| (v, true))
            .chain(self.query_neg.iter().map(|&v| (v, false)))
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.support_pos
            .iter()
            .chain(&self.support_neg)
            .chain(&self.query_pos)
            .chain(&self.query_neg)
            .copied()
    }

    /// Checks membership, disjointness and uniqueness against `labels`.
    pub fn validate(&self, labels: &LabelMatrix) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidTask(format!("label {}: {msg}", self.label)));
        if self.label >= labels.label_count() {
            return bad("unknown label".into());
        }
        if self.support_pos.is_empty() || self.support_neg.is_empty() {
            return bad("empty support set".into());
        }
        if self.query_pos.is_empty() && self.query_neg.is_empty() {
            return bad("empty query set".into());
        }
        for id in self.nodes() {
            if id >= labels.node_count() {
                return Err(Error::NodeOutOfRange {
                    id,
                    node_count: labels.node_count(),
                });
            }
        }
        for (name, set, positive) in [
            ("S+", &self.support_pos, true),
            ("S-", &self.support_neg, false),
            ("Q+", &self.query_pos, true),
            ("Q-", &self.query_neg, false),
        ] {
            let mut seen = HashSet::new();
            for &v in set {
                if !seen.insert(v) {
                    return bad(format!("duplicate node {v} in {name}"));
                }
                if labels.has_label(v, self.label) != positive {
                    return bad(format!("node {v} in {name} has the wrong polarity"));
                }
            }
        }
        let overlaps = |a: &[usize], b: &[usize]| a.iter().any(|v| b.contains(v));
        if overlaps(&self.support_pos, &self.query_pos) || overlaps(&self.support_neg, &self.query_neg) {
            return bad("support and query overlap".into());
        }
        Ok(())
    }

    fn write_record<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let ids = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(
            out,
            "{} | {} | {} | {} | {}",
            self.label,
            ids(&self.support_pos),
            ids(&self.support_neg),
            ids(&self.query_pos),
            ids(&self.query_neg)
        )
    }
}

/// Labels in `pool` with enough positives and negatives for `shape`.
pub fn eligible_labels(labels: &LabelMatrix, pool: &[usize], shape: TaskShape) -> Vec<usize> {
    pool.iter()
        .copied()
        .filter(|&y| {
            y < labels.label_count()
                && labels.positives(y).len() >= shape.positives_needed()
                && labels.negative_count(y) >= shape.negatives_needed()
        })
        .collect()
}

/// Draws one task: label uniform over the eligible part of `pool`, nodes
/// uniform without replacement from the label's positive and negative sets.
pub fn sample_task(labels: &LabelMatrix, pool: &[usize], shape: TaskShape, rng: &mut Rng) -> Result<Task> {
    let eligible = eligible_labels(labels, pool, shape);
    sample_from_eligible(labels, &eligible, shape, rng)
}

/// Same as [`sample_task`] with the eligibility filter already applied.
pub fn sample_from_eligible(labels: &LabelMatrix, eligible: &[usize], shape: TaskShape, rng: &mut Rng) -> Result<Task> {
    if eligible.is_empty() {
        return Err(Error::NoEligibleLabel {
            shape: shape.to_string(),
        });
    }
    let label = eligible[rng.gen_range(0..eligible.len())];
    let positives = labels.positives(label);
    let mut pos: Vec<usize> = index::sample(rng, positives.len(), shape.positives_needed())
        .into_iter()
        .map(|i| positives[i])
        .collect();
    let mut neg = sample_negatives(labels.node_count(), positives, shape.negatives_needed(), rng);
    let query_pos = pos.split_off(shape.k_support_pos);
    let query_neg = neg.split_off(shape.k_support_neg);
    Ok(Task {
        label,
        support_pos: pos,
        support_neg: neg,
        query_pos,
        query_neg,
    })
}

/// `count` distinct nodes outside the sorted `positives`, uniformly.
fn sample_negatives(node_count: usize, positives: &[usize], count: usize, rng: &mut Rng) -> Vec<usize> {
    let available = node_count - positives.len();
    if count * 4 <= available {
        // rejection is cheap when negatives are plentiful
        let mut seen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let v = rng.gen_range(0..node_count);
            if positives.binary_search(&v).is_err() && seen.insert(v) {
                out.push(v);
            }
        }
        out
    } else {
        let complement: Vec<usize> = (0..node_count)
            .filter(|v| positives.binary_search(v).is_err())
            .collect();
        index::sample(rng, complement.len(), count)
            .into_iter()
            .map(|i| complement[i])
            .collect()
    }
}

/// Samples `n` tasks, one after another from the same stream.
pub fn sample_tasks(labels: &LabelMatrix, pool: &[usize], shape: TaskShape, n: usize, rng: &mut Rng) -> Result<Vec<Task>> {
    let eligible = eligible_labels(labels, pool, shape);
    (0..n)
        .map(|_| sample_from_eligible(labels, &eligible, shape, rng))
        .collect()
}

/// One record per line: `label | S+ | S- | Q+ | Q-`, ids space-separated.
pub fn write_tasks<W: Write>(tasks: &[Task], mut out: W) -> std::io::Result<()> {
    for t in tasks {
        t.write_record(&mut out)?;
    }
    Ok(())
}

pub fn read_tasks<R: BufRead>(source: R) -> Result<Vec<Task>> {
    let mut tasks = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = text.split('|').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 5 `|`-separated fields, found {}", fields.len()),
            });
        }
        let ids = |s: &str| -> Result<Vec<usize>> {
            s.split_whitespace()
                .map(|t| {
                    t.parse().map_err(|_| Error::Parse {
                        line: line_no,
                        msg: format!("invalid id {t:?}"),
                    })
                })
                .collect()
        };
        let label = fields[0].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("invalid label {:?}", fields[0]),
        })?;
        tasks.push(Task {
            label,
            support_pos: ids(fields[1])?,
            support_neg: ids(fields[2])?,
            query_pos: ids(fields[3])?,
            query_neg: ids(fields[4])?,
        });
    }
    Ok(tasks)
}
