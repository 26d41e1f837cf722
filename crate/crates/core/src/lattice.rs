//! Span enumeration, span representation pooling, and the token-overlap
//! neighbor structure used by the separation loss.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::tape::{NodeId, Tape};

/// A contiguous token interval, inclusive on both ends, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start <= end, "span start must not exceed end");
        Span { start, end }
    }

    /// Number of tokens covered.
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// True if the two spans share at least one token position.
    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn token_indices(&self) -> impl Iterator<Item = usize> {
        self.start..=self.end
    }

    /// Build from an index run as stored in gold annotations.
    pub fn from_indices(indices: &[usize]) -> Self {
        Span::new(indices[0], *indices.last().unwrap())
    }
}

/// How the length cap is interpreted.
///
/// `TokenLength` caps the number of tokens (`end - start + 1 <= cap`).
/// `EndDelta` caps the index difference (`end - start <= cap`), which admits
/// spans one token longer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanLengthSemantics {
    #[default]
    TokenLength,
    EndDelta,
}

/// Token-vector pooling used to build span representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Max,
    Mean,
    EndpointConcat,
}

impl Pooling {
    /// Dimension of a span representation given token dimension `d`.
    pub fn rep_dim(self, d: usize) -> usize {
        match self {
            Pooling::Max | Pooling::Mean => d,
            Pooling::EndpointConcat => 2 * d,
        }
    }
}

/// All candidate spans of a sentence with their representations and
/// token-overlap neighbor sets.
#[derive(Debug, Clone)]
pub struct SpanLattice {
    /// Canonical order: by start, then end.
    pub spans: Vec<Span>,
    /// Row i is the representation of `spans[i]`.
    pub reps: Array2<f64>,
    /// `neighbors[i]` lists every j != i whose span shares a token with span
    /// i, in increasing order.
    pub neighbors: Vec<Vec<usize>>,
}

impl SpanLattice {
    pub fn num_spans(&self) -> usize {
        self.spans.len()
    }

    /// Index of a span in canonical order, if present.
    pub fn index_of(&self, span: &Span) -> Option<usize> {
        span_index(&self.spans, span)
    }
}

/// Position of a span within a canonically ordered span list.
pub fn span_index(spans: &[Span], span: &Span) -> Option<usize> {
    spans.binary_search(span).ok()
}

/// Enumerate every span with length within the cap, in canonical order.
pub fn enumerate_spans(
    n: usize,
    max_span_length: usize,
    semantics: SpanLengthSemantics,
) -> Vec<Span> {
    assert!(n >= 1, "sentence must have at least one token");
    assert!(max_span_length >= 1, "span length cap must be positive");
    let max_tokens = match semantics {
        SpanLengthSemantics::TokenLength => max_span_length,
        SpanLengthSemantics::EndDelta => max_span_length + 1,
    };
    let mut spans = Vec::with_capacity(span_count(n, max_tokens));
    for start in 0..n {
        for end in start..n.min(start + max_tokens) {
            spans.push(Span::new(start, end));
        }
    }
    spans
}

/// Closed-form span count: sum over lengths 1..=min(cap, n) of (n - len + 1).
pub fn span_count(n: usize, max_tokens: usize) -> usize {
    (1..=max_tokens.min(n)).map(|len| n - len + 1).sum()
}

/// Pool token vectors over one span.
pub fn pool_span(enc: &Array2<f64>, span: &Span, method: Pooling) -> Array1<f64> {
    assert!(span.end < enc.nrows(), "span outside encoding bounds");
    let window = enc.slice(ndarray::s![span.start..=span.end, ..]);
    match method {
        Pooling::Max => window.fold_axis(ndarray::Axis(0), f64::NEG_INFINITY, |acc, x| acc.max(*x)),
        Pooling::Mean => window.mean_axis(ndarray::Axis(0)).unwrap(),
        Pooling::EndpointConcat => {
            let first = enc.row(span.start);
            let last = enc.row(span.end);
            let mut out = Array1::zeros(2 * enc.ncols());
            out.slice_mut(ndarray::s![..enc.ncols()]).assign(&first);
            out.slice_mut(ndarray::s![enc.ncols()..]).assign(&last);
            out
        }
    }
}

/// Neighbor sets under the token-overlap relation, excluding self.
pub fn neighbor_sets(spans: &[Span]) -> Vec<Vec<usize>> {
    let mut neighbors = vec![Vec::new(); spans.len()];
    for i in 0..spans.len() {
        for j in i + 1..spans.len() {
            if spans[i].overlaps(&spans[j]) {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    for set in &mut neighbors {
        set.sort_unstable();
    }
    neighbors
}

/// Build the full lattice from a token encoding.
pub fn build_lattice(
    enc: &Array2<f64>,
    max_span_length: usize,
    method: Pooling,
    semantics: SpanLengthSemantics,
) -> SpanLattice {
    let spans = enumerate_spans(enc.nrows(), max_span_length, semantics);
    let mut reps = Array2::zeros((spans.len(), method.rep_dim(enc.ncols())));
    for (i, span) in spans.iter().enumerate() {
        reps.row_mut(i).assign(&pool_span(enc, span, method));
    }
    let neighbors = neighbor_sets(&spans);
    SpanLattice {
        spans,
        reps,
        neighbors,
    }
}

/// Tape-level span pooling: one representation row per span, differentiable
/// through to the token encoding node.
pub fn span_reps_node(tape: &mut Tape, enc: NodeId, spans: &[Span], method: Pooling) -> NodeId {
    let ranges: Vec<(usize, usize)> = spans.iter().map(|s| (s.start, s.end)).collect();
    match method {
        Pooling::Max => tape.pool_max(enc, ranges),
        Pooling::Mean => tape.pool_mean(enc, ranges),
        Pooling::EndpointConcat => {
            let starts: Vec<usize> = spans.iter().map(|s| s.start).collect();
            let ends: Vec<usize> = spans.iter().map(|s| s.end).collect();
            let first = tape.gather_rows(enc, starts);
            let last = tape.gather_rows(enc, ends);
            tape.concat_cols(first, last)
        }
    }
}
