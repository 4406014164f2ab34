//! Block-structured parameter space shared by all clients.
//!
//! The global parameter vector is the direct sum of M task-specific blocks
//! and one shared block. The restriction operator maps the global vector to
//! a client's local pair `(task_block, sqrt(1/M) * shared_block)`, and the
//! interpolation operator is its transpose. Both are implemented as indexed
//! block operations on a flat storage vector; no matrices are materialized.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Dimensions of the parameter blocks: M task blocks plus one shared block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub task_dims: Vec<usize>,
    pub shared_dim: usize,
    #[serde(skip)]
    offsets: Vec<usize>,
    #[serde(skip)]
    inv_sqrt_m: f64,
}

impl BlockLayout {
    pub fn new(task_dims: Vec<usize>, shared_dim: usize) -> Result<Self> {
        if task_dims.is_empty() {
            return Err(CoreError::InvalidLayout("need at least one client".into()));
        }
        if shared_dim == 0 || task_dims.iter().any(|&d| d == 0) {
            return Err(CoreError::InvalidLayout("all block dims must be >= 1".into()));
        }
        let mut layout = BlockLayout {
            task_dims,
            shared_dim,
            offsets: Vec::new(),
            inv_sqrt_m: 0.0,
        };
        layout.rebuild_cache();
        Ok(layout)
    }

    /// Recomputes the derived fields; needed after deserialization since the
    /// cache is not part of the wire format.
    pub fn rebuild_cache(&mut self) {
        let mut offsets = Vec::with_capacity(self.task_dims.len() + 1);
        let mut acc = 0usize;
        for &d in &self.task_dims {
            offsets.push(acc);
            acc += d;
        }
        offsets.push(acc);
        self.offsets = offsets;
        self.inv_sqrt_m = (1.0 / self.num_clients() as f64).sqrt();
    }

    pub fn num_clients(&self) -> usize {
        self.task_dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.offsets[self.task_dims.len()] + self.shared_dim
    }

    /// sqrt(1/M), cached at construction.
    pub fn inv_sqrt_m(&self) -> f64 {
        self.inv_sqrt_m
    }

    pub fn task_range(&self, i: usize) -> Result<std::ops::Range<usize>> {
        if i >= self.num_clients() {
            return Err(CoreError::ClientOutOfRange {
                index: i,
                clients: self.num_clients(),
            });
        }
        Ok(self.offsets[i]..self.offsets[i] + self.task_dims[i])
    }

    pub fn shared_range(&self) -> std::ops::Range<usize> {
        let start = self.offsets[self.task_dims.len()];
        start..start + self.shared_dim
    }
}

/// Full parameter vector over the global space, flat contiguous storage.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalParam {
    data: Vec<f64>,
    layout: Arc<BlockLayout>,
}

impl GlobalParam {
    pub fn zeros(layout: Arc<BlockLayout>) -> Self {
        let n = layout.total_dim();
        GlobalParam {
            data: vec![0.0; n],
            layout,
        }
    }

    pub fn from_vec(data: Vec<f64>, layout: Arc<BlockLayout>) -> Result<Self> {
        if data.len() != layout.total_dim() {
            return Err(CoreError::DimensionMismatch(format!(
                "global vector has length {}, layout expects {}",
                data.len(),
                layout.total_dim()
            )));
        }
        Ok(GlobalParam { data, layout })
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn task_block(&self, i: usize) -> Result<&[f64]> {
        Ok(&self.data[self.layout.task_range(i)?])
    }

    pub fn shared_block(&self) -> &[f64] {
        &self.data[self.layout.shared_range()]
    }

    /// Restriction operator: local pair `(w_i, sqrt(1/M) * w_{M+1})`.
    pub fn restrict(&self, i: usize) -> Result<LocalView> {
        let s = self.layout.inv_sqrt_m();
        let task = self.task_block(i)?.to_vec();
        let shared = self.shared_block().iter().map(|x| s * x).collect();
        Ok(LocalView {
            task,
            shared,
            client_id: i,
        })
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// `sum_i ||I_i R_i w||^2` and `||w||^2`. The first never exceeds the
    /// second (stable decomposition).
    pub fn decomposition_norms(&self) -> (f64, f64) {
        let m = self.layout.num_clients() as f64;
        let shared_sq: f64 = self.shared_block().iter().map(|x| x * x).sum();
        let mut sum_sq = 0.0;
        for i in 0..self.layout.num_clients() {
            let task_sq: f64 = self.task_block(i).expect("valid index").iter().map(|x| x * x).sum();
            sum_sq += task_sq + shared_sq / (m * m);
        }
        (sum_sq, self.norm_sq())
    }
}

/// A client's local pair as produced by the restriction operator.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalView {
    pub task: Vec<f64>,
    pub shared: Vec<f64>,
    pub client_id: usize,
}

impl LocalView {
    /// Interpolation operator (transpose of restriction): places the task
    /// block at client position and `sqrt(1/M) * shared` in the shared block.
    pub fn interpolate(&self, layout: &Arc<BlockLayout>) -> Result<GlobalParam> {
        let range = layout.task_range(self.client_id)?;
        if self.task.len() != layout.task_dims[self.client_id] || self.shared.len() != layout.shared_dim
        {
            return Err(CoreError::DimensionMismatch(format!(
                "local view for client {} does not match layout",
                self.client_id
            )));
        }
        let mut w = GlobalParam::zeros(Arc::clone(layout));
        w.data[range].copy_from_slice(&self.task);
        let s = layout.inv_sqrt_m();
        let shared_range = layout.shared_range();
        for (dst, src) in w.data[shared_range].iter_mut().zip(&self.shared) {
            *dst = s * src;
        }
        Ok(w)
    }
}

/// A client's parameters in raw coordinates: its task block and its local
/// copy of the shared block (no sqrt(1/M) scaling).
#[derive(Debug, Clone, PartialEq)]
pub struct ClientParams {
    pub task: Vec<f64>,
    pub shared: Vec<f64>,
}

/// Virtual average `w̄ = sum_i I_i R_i v_i`: task blocks pass through, the
/// shared block is the arithmetic mean of the clients' raw shared copies.
pub fn virtual_average(clients: &[ClientParams], layout: &Arc<BlockLayout>) -> Result<GlobalParam> {
    let m = layout.num_clients();
    if clients.len() != m {
        return Err(CoreError::DimensionMismatch(format!(
            "virtual average needs exactly {m} clients, got {}",
            clients.len()
        )));
    }
    let mut w = GlobalParam::zeros(Arc::clone(layout));
    for (i, c) in clients.iter().enumerate() {
        if c.task.len() != layout.task_dims[i] || c.shared.len() != layout.shared_dim {
            return Err(CoreError::DimensionMismatch(format!(
                "client {i} params do not match layout"
            )));
        }
        let range = layout.task_range(i)?;
        w.data[range].copy_from_slice(&c.task);
    }
    let shared_range = layout.shared_range();
    let inv_m = 1.0 / m as f64;
    for (j, dst) in w.data[shared_range].iter_mut().enumerate() {
        let mut acc = 0.0;
        for c in clients {
            acc += c.shared[j];
        }
        *dst = acc * inv_m;
    }
    Ok(w)
}
