//! Named trainable parameters with gradient buffers, plus the bookkeeping
//! that routes tape-leaf gradients back into the store after a backward pass.

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tape::{Gradients, NodeId, Tape};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    #[serde(skip)]
    grads: Vec<Array2<f64>>,
    #[serde(skip)]
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Rebuild the name index and gradient buffers after deserialization.
    pub fn rebuild_index(&mut self) {
        self.by_name = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        self.grads = self.values.iter().map(|v| Array2::zeros(v.raw_dim())).collect();
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) -> usize {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter {name}"
        );
        let idx = self.values.len();
        self.names.push(name.to_string());
        self.grads.push(Array2::zeros(value.raw_dim()));
        self.values.push(value);
        self.by_name.insert(name.to_string(), idx);
        idx
    }

    /// Glorot-uniform initialized matrix parameter.
    pub fn insert_glorot(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) -> usize {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let value = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound));
        self.insert(name, value)
    }

    pub fn insert_zeros(&mut self, name: &str, rows: usize, cols: usize) -> usize {
        self.insert(name, Array2::zeros((rows, cols)))
    }

    pub fn idx(&self, name: &str) -> usize {
        *self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn value(&self, idx: usize) -> &Array2<f64> {
        &self.values[idx]
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Array2<f64> {
        &mut self.values[idx]
    }

    pub fn grad(&self, idx: usize) -> &Array2<f64> {
        &self.grads[idx]
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn iter_names(&self) -> impl Iterator<Item = (usize, &str)> {
        self.names.iter().enumerate().map(|(i, n)| (i, n.as_str()))
    }

    fn add_grad(&mut self, idx: usize, contribution: &Array2<f64>, scale: f64) {
        self.grads[idx].scaled_add(scale, contribution);
    }

    fn add_grad_rows(
        &mut self,
        idx: usize,
        rows: &[usize],
        contribution: &Array2<f64>,
        scale: f64,
    ) {
        for (r, &target) in rows.iter().enumerate() {
            let mut row = self.grads[idx].row_mut(target);
            row.scaled_add(scale, &contribution.row(r));
        }
    }
}

/// Which tape leaves correspond to which store parameters for one forward
/// pass. Row-subset bindings cover embedding lookups, where only the used
/// rows appear on the tape.
#[derive(Debug, Default)]
pub struct Binding {
    dense: Vec<(usize, NodeId)>,
    rows: Vec<(usize, Vec<usize>, NodeId)>,
}

impl Binding {
    pub fn new() -> Self {
        Binding::default()
    }

    /// Copy a full parameter onto the tape and remember the pairing.
    pub fn bind(&mut self, tape: &mut Tape, store: &ParamStore, idx: usize) -> NodeId {
        let node = tape.leaf(store.value(idx).clone());
        self.dense.push((idx, node));
        node
    }

    /// Copy selected parameter rows onto the tape (gradient scatters back).
    pub fn bind_rows(
        &mut self,
        tape: &mut Tape,
        store: &ParamStore,
        idx: usize,
        row_ids: Vec<usize>,
    ) -> NodeId {
        let selected = store.value(idx).select(ndarray::Axis(0), &row_ids);
        let node = tape.leaf(selected);
        self.rows.push((idx, row_ids, node));
        node
    }

    /// Accumulate `scale` times the tape gradients into the store buffers.
    pub fn harvest(&self, tape: &Tape, grads: &Gradients, store: &mut ParamStore, scale: f64) {
        for &(idx, node) in &self.dense {
            store.add_grad(idx, &grads.wrt(tape, node), scale);
        }
        for (idx, row_ids, node) in &self.rows {
            store.add_grad_rows(*idx, row_ids, &grads.wrt(tape, *node), scale);
        }
    }
}
