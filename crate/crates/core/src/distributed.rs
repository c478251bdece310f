//! In-process simulation of InfoNCE with batch gathering across workers.
//!
//! A global batch of `N * M` rows is split into `M` contiguous shards. Each
//! worker gathers every shard's vision and text rows, then scores its own `N`
//! rows against all `N * M` rows in both directions. Averaging the per-worker
//! losses reproduces the loss over the full `NM x NM` similarity matrix.
//!
//! Workers can run sequentially or on real threads; the gather is a barrier and
//! the final reduction is a fixed left fold in worker order, so both modes give
//! bit-identical results.

use std::ops::Range;
use std::sync::{Barrier, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::objective::{diagonal_sets, infonce_with_sets, logit_row, positive_sets, row_cross_entropy, Batch};

/// How positives are chosen inside the gathered loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PositiveMode {
    /// Every row with the same label is a positive.
    #[default]
    MultiPositive,
    /// Only the row's own partner is a positive (plain N*M-way classification).
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    #[default]
    Sequential,
    Threaded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardPlan {
    pub workers: usize,
    pub local_batch: usize,
}

impl ShardPlan {
    pub fn new(batch: usize, workers: usize) -> Result<Self> {
        if workers == 0 || batch == 0 || !batch.is_multiple_of(workers) {
            return Err(Error::IndivisibleBatch { batch, workers });
        }
        Ok(ShardPlan { workers, local_batch: batch / workers })
    }

    pub fn global_batch(&self) -> usize {
        self.workers * self.local_batch
    }

    /// Global rows owned by `worker`.
    pub fn range(&self, worker: usize) -> Range<usize> {
        worker * self.local_batch..(worker + 1) * self.local_batch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerState {
    pub worker_id: usize,
    pub plan: ShardPlan,
    pub local_vision: Matrix,
    pub local_text: Matrix,
    pub gathered_vision: Option<Matrix>,
    pub gathered_text: Option<Matrix>,
}

/// Splits the video/category rows of `batch` into `workers` contiguous shards.
pub fn shard_batch(batch: &Batch, workers: usize) -> Result<(Vec<WorkerState>, ShardPlan)> {
    let plan = ShardPlan::new(batch.size(), workers)?;
    let states = (0..workers)
        .map(|w| {
            let rows: Vec<usize> = plan.range(w).collect();
            Ok(WorkerState {
                worker_id: w,
                plan,
                local_vision: batch.video().select_rows(&rows)?,
                local_text: batch.cat().select_rows(&rows)?,
                gathered_vision: None,
                gathered_text: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((states, plan))
}

fn check_plan(states: &[WorkerState]) -> Result<ShardPlan> {
    let plan = states.first().ok_or(Error::InconsistentShardPlan)?.plan;
    let consistent = states.len() == plan.workers
        && states.iter().enumerate().all(|(w, s)| {
            s.worker_id == w
                && s.plan == plan
                && s.local_vision.rows() == plan.local_batch
                && s.local_text.rows() == plan.local_batch
                && s.local_vision.cols() == states[0].local_vision.cols()
                && s.local_text.cols() == states[0].local_vision.cols()
        });
    if consistent {
        Ok(plan)
    } else {
        Err(Error::InconsistentShardPlan)
    }
}

fn concat(parts: &[&Matrix]) -> Result<Matrix> {
    let cols = parts[0].cols();
    let rows = parts.iter().map(|m| m.rows()).sum();
    let data = parts.iter().flat_map(|m| m.as_slice().iter().copied()).collect();
    Matrix::new(rows, cols, data)
}

/// Gives every worker the concatenation of all shards, in global row order.
pub fn batch_gather(mut states: Vec<WorkerState>) -> Result<Vec<WorkerState>> {
    check_plan(&states)?;
    let vision = concat(&states.iter().map(|s| &s.local_vision).collect::<Vec<_>>())?;
    let text = concat(&states.iter().map(|s| &s.local_text).collect::<Vec<_>>())?;
    for s in &mut states {
        s.gathered_vision = Some(vision.clone());
        s.gathered_text = Some(text.clone());
    }
    Ok(states)
}

fn sets_for(labels: &[usize], mode: PositiveMode) -> Vec<Vec<usize>> {
    match mode {
        PositiveMode::MultiPositive => positive_sets(labels),
        PositiveMode::Diagonal => diagonal_sets(labels.len()),
    }
}

/// Symmetric loss of one worker's `N` rows against all `N * M` gathered rows.
/// `labels` are the global batch labels.
pub fn shard_loss(state: &WorkerState, labels: &[usize], tau: f64, mode: PositiveMode) -> Result<f64> {
    crate::numerics::check_temperature(tau)?;
    let (Some(all_vision), Some(all_text)) = (&state.gathered_vision, &state.gathered_text) else {
        return Err(Error::GatherNotRun(state.worker_id));
    };
    if labels.len() != state.plan.global_batch() {
        return Err(Error::LengthMismatch { expected: state.plan.global_batch(), got: labels.len() });
    }
    let sets = sets_for(labels, mode);
    Ok(shard_loss_with_sets(state, all_vision, all_text, &sets, tau))
}

fn shard_loss_with_sets(state: &WorkerState, all_vision: &Matrix, all_text: &Matrix, sets: &[Vec<usize>], tau: f64) -> f64 {
    let range = state.plan.range(state.worker_id);
    let n = state.plan.local_batch as f64;
    let per_vision: f64 =
        state.local_vision.iter_rows().zip(&sets[range.clone()]).map(|(v, k)| row_cross_entropy(&logit_row(v, all_text, tau), k)).sum();
    let per_text: f64 =
        state.local_text.iter_rows().zip(&sets[range]).map(|(t, k)| row_cross_entropy(&logit_row(t, all_vision, tau), k)).sum();
    0.5 * (per_vision / n + per_text / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributedLoss {
    pub loss: f64,
    pub per_worker: Vec<f64>,
}

/// Mean of per-worker losses, folded left in ascending worker order.
fn reduce(per_worker: &[f64]) -> f64 {
    let sum = per_worker[1..].iter().fold(per_worker[0], |acc, v| acc + v);
    sum / per_worker.len() as f64
}

pub fn distributed_loss(batch: &Batch, workers: usize, mode: PositiveMode, execution: Execution) -> Result<DistributedLoss> {
    let (states, _) = shard_batch(batch, workers)?;
    let per_worker = match execution {
        Execution::Sequential => {
            let states = batch_gather(states)?;
            states.iter().map(|s| shard_loss(s, batch.labels(), batch.tau(), mode)).collect::<Result<Vec<_>>>()?
        }
        Execution::Threaded => run_threaded(states, batch.labels(), batch.tau(), mode)?,
    };
    Ok(DistributedLoss { loss: reduce(&per_worker), per_worker })
}

/// Loss over the full `B x B` similarity matrix, computed on one node.
pub fn single_node_loss(batch: &Batch, mode: PositiveMode) -> f64 {
    infonce_with_sets(batch.video(), batch.cat(), &sets_for(batch.labels(), mode), batch.tau()).sym
}

/// Shared slots plus a barrier; no worker reads before all have written.
struct Exchange {
    slots: Mutex<Vec<Option<(Matrix, Matrix)>>>,
    barrier: Barrier,
}

impl Exchange {
    fn new(workers: usize) -> Self {
        Exchange { slots: Mutex::new(vec![None; workers]), barrier: Barrier::new(workers) }
    }

    fn all_gather(&self, worker: usize, vision: Matrix, text: Matrix) -> Result<(Matrix, Matrix)> {
        self.slots.lock().expect("exchange lock poisoned")[worker] = Some((vision, text));
        self.barrier.wait();
        let slots = self.slots.lock().expect("exchange lock poisoned");
        let parts: Vec<&(Matrix, Matrix)> = slots.iter().map(|s| s.as_ref().expect("barrier passed")).collect();
        let v = concat(&parts.iter().map(|p| &p.0).collect::<Vec<_>>())?;
        let t = concat(&parts.iter().map(|p| &p.1).collect::<Vec<_>>())?;
        Ok((v, t))
    }
}

fn run_threaded(states: Vec<WorkerState>, labels: &[usize], tau: f64, mode: PositiveMode) -> Result<Vec<f64>> {
    check_plan(&states)?;
    let exchange = Exchange::new(states.len());
    let sets = sets_for(labels, mode);
    std::thread::scope(|scope| {
        let handles: Vec<_> = states
            .into_iter()
            .map(|mut s| {
                let (exchange, sets) = (&exchange, &sets);
                scope.spawn(move || -> Result<f64> {
                    let (v, t) = exchange.all_gather(s.worker_id, s.local_vision.clone(), s.local_text.clone())?;
                    s.gathered_vision = Some(v);
                    s.gathered_text = Some(t);
                    let (av, at) = (s.gathered_vision.as_ref().unwrap(), s.gathered_text.as_ref().unwrap());
                    Ok(shard_loss_with_sets(&s, av, at, sets, tau))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect()
    })
}
