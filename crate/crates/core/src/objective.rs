//! Symmetric multi-positive InfoNCE over video, attribute and category
//! embeddings, with analytic gradients w.r.t. every embedding row.
//!
//! For anchors `x_i`, candidates `y_j` and temperature `tau`, one direction is
//!
//! ```text
//! l_x2y = (1/B) sum_i [ logsumexp_j(x_i . y_j / tau) - mean_{k in K(i)} x_i . y_k / tau ]
//! ```
//!
//! where `K(i)` holds every batch index sharing `i`'s label. The symmetric
//! loss averages both directions. Inputs are assumed unit-norm; nothing here
//! renormalizes, so gradients are taken in the ambient space.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{check_temperature, dot, logsumexp_unchecked, norm, normalize_in_place, softmax_unchecked, Matrix};

pub const DEFAULT_TAU: f64 = 0.01;
const BATCH_UNIT_TOL: f64 = 1e-9;

/// One training batch of row-aligned embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub(crate) video: Matrix,
    pub(crate) attr: Option<Matrix>,
    pub(crate) cat: Matrix,
    pub(crate) labels: Vec<usize>,
    pub(crate) tau: f64,
}

impl Batch {
    pub fn new(video: Matrix, attr: Option<Matrix>, cat: Matrix, labels: Vec<usize>, tau: f64) -> Result<Self> {
        check_temperature(tau)?;
        let (b, d) = (video.rows(), video.cols());
        for m in std::iter::once(&cat).chain(attr.as_ref()) {
            if m.rows() != b {
                return Err(Error::LengthMismatch { expected: b, got: m.rows() });
            }
            if m.cols() != d {
                return Err(Error::DimMismatch { expected: d, got: m.cols() });
            }
        }
        if labels.len() != b {
            return Err(Error::LengthMismatch { expected: b, got: labels.len() });
        }
        for m in std::iter::once(&video).chain(Some(&cat)).chain(attr.as_ref()) {
            if let Some(r) = m.iter_rows().find(|r| (norm(r) - 1.0).abs() > BATCH_UNIT_TOL) {
                return Err(Error::InvalidArgument(format!("batch rows must be unit-norm, found norm {}", norm(r))));
            }
        }
        Ok(Batch { video, attr, cat, labels, tau })
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.video.cols()
    }

    pub fn video(&self) -> &Matrix {
        &self.video
    }

    pub fn attr(&self) -> Option<&Matrix> {
        self.attr.as_ref()
    }

    pub fn cat(&self) -> &Matrix {
        &self.cat
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Same batch with rows reordered by `perm` (new row `i` is old row `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Ok(Batch {
            video: self.video.select_rows(perm)?,
            attr: self.attr.as_ref().map(|a| a.select_rows(perm)).transpose()?,
            cat: self.cat.select_rows(perm)?,
            labels: perm.iter().map(|&i| self.labels[i]).collect(),
            tau: self.tau,
        })
    }

    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        check_temperature(tau)?;
        self.tau = tau;
        Ok(self)
    }
}

/// Shape of a seeded random batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomBatchSpec {
    pub batch: usize,
    pub dim: usize,
    pub classes: usize,
    pub tau: f64,
    pub with_attributes: bool,
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut *rng)).collect();
        if normalize_in_place(&mut v).is_ok() {
            return v;
        }
    }
}

/// Random unit-norm batch; category rows are shared by equal labels.
pub fn random_batch<R: Rng + ?Sized>(rng: &mut R, spec: RandomBatchSpec) -> Result<Batch> {
    if spec.batch == 0 || spec.dim == 0 || spec.classes == 0 {
        return Err(Error::InvalidArgument("batch, dim and classes must be positive".into()));
    }
    let classes: Vec<Vec<f64>> = (0..spec.classes).map(|_| random_unit(rng, spec.dim)).collect();
    let labels: Vec<usize> = (0..spec.batch).map(|_| rng.gen_range(0..spec.classes)).collect();
    let rows = |rng: &mut R| -> Vec<Vec<f64>> { (0..spec.batch).map(|_| random_unit(rng, spec.dim)).collect() };
    let video = Matrix::from_rows(&rows(rng))?;
    let attr = if spec.with_attributes { Some(Matrix::from_rows(&rows(rng))?) } else { None };
    let cat_rows: Vec<&[f64]> = labels.iter().map(|&l| classes[l].as_slice()).collect();
    let cat = Matrix::from_rows(&cat_rows)?;
    Batch::new(video, attr, cat, labels, spec.tau)
}

/// `K(i)`: every index whose label equals label `i`, ascending. Always contains `i`.
pub fn positive_sets(labels: &[usize]) -> Vec<Vec<usize>> {
    labels.iter().map(|&yi| labels.iter().enumerate().filter(|(_, &y)| y == yi).map(|(k, _)| k).collect()).collect()
}

/// Positive sets that only pair each row with itself.
pub fn diagonal_sets(n: usize) -> Vec<Vec<usize>> {
    (0..n).map(|i| vec![i]).collect()
}

pub fn contrastive_logits(x: &Matrix, y: &Matrix, tau: f64) -> Result<Matrix> {
    check_temperature(tau)?;
    if x.cols() != y.cols() {
        return Err(Error::DimMismatch { expected: x.cols(), got: y.cols() });
    }
    let mut data = Vec::with_capacity(x.rows() * y.rows());
    for xi in x.iter_rows() {
        data.extend(y.iter_rows().map(|yj| dot(xi, yj) / tau));
    }
    Matrix::new(x.rows(), y.rows(), data)
}

/// Cross-entropy of one logit row against a uniform target over `positives`.
pub(crate) fn row_cross_entropy(logits: &[f64], positives: &[usize]) -> f64 {
    let pos_mean = positives.iter().map(|&k| logits[k]).sum::<f64>() / positives.len() as f64;
    logsumexp_unchecked(logits) - pos_mean
}

/// Logits of one anchor row against every candidate row.
pub(crate) fn logit_row(anchor: &[f64], candidates: &Matrix, tau: f64) -> Vec<f64> {
    candidates.iter_rows().map(|c| dot(anchor, c) / tau).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoNceTerms {
    pub x2y: f64,
    pub y2x: f64,
    pub sym: f64,
}

fn check_pair(x: &Matrix, y: &Matrix, labels: &[usize], tau: f64) -> Result<()> {
    check_temperature(tau)?;
    if x.cols() != y.cols() {
        return Err(Error::DimMismatch { expected: x.cols(), got: y.cols() });
    }
    if x.rows() != y.rows() {
        return Err(Error::LengthMismatch { expected: x.rows(), got: y.rows() });
    }
    if labels.len() != x.rows() {
        return Err(Error::LengthMismatch { expected: x.rows(), got: labels.len() });
    }
    Ok(())
}

/// Mean over anchor rows of [`row_cross_entropy`], anchors in `a`, candidates in `c`.
fn directional(a: &Matrix, c: &Matrix, sets: &[Vec<usize>], tau: f64) -> f64 {
    let sum: f64 = a.iter_rows().zip(sets).map(|(ai, k)| row_cross_entropy(&logit_row(ai, c, tau), k)).sum();
    sum / a.rows() as f64
}

/// Symmetric multi-positive InfoNCE. `x2y` uses rows of `x` as anchors and
/// normalizes over rows of `y`; `y2x` is the reverse.
pub fn symmetric_infonce(x: &Matrix, y: &Matrix, labels: &[usize], tau: f64) -> Result<InfoNceTerms> {
    check_pair(x, y, labels, tau)?;
    let sets = positive_sets(labels);
    Ok(infonce_with_sets(x, y, &sets, tau))
}

pub(crate) fn infonce_with_sets(x: &Matrix, y: &Matrix, sets: &[Vec<usize>], tau: f64) -> InfoNceTerms {
    let x2y = directional(x, y, sets, tau);
    let y2x = directional(y, x, sets, tau);
    InfoNceTerms { x2y, y2x, sym: 0.5 * (x2y + y2x) }
}

/// Adds `scale * d(l_a2c)/d(a), d/d(c)` into `ga`, `gc`, where row `i` of `a`
/// is the anchor and the softmax runs over rows of `c`.
fn accumulate_directional_grad(a: &Matrix, c: &Matrix, sets: &[Vec<usize>], tau: f64, scale: f64, ga: &mut Matrix, gc: &mut Matrix) {
    let coef = scale / (a.rows() as f64 * tau);
    for (i, (ai, k)) in a.iter_rows().zip(sets).enumerate() {
        let mut g = softmax_unchecked(&logit_row(ai, c, tau));
        let w = 1.0 / k.len() as f64;
        for &kk in k {
            g[kk] -= w;
        }
        for (j, gij) in g.into_iter().enumerate() {
            let s = coef * gij;
            if s == 0.0 {
                continue;
            }
            let cj = c.row(j).to_vec();
            ga.row_mut(i).iter_mut().zip(&cj).for_each(|(o, v)| *o += s * v);
            gc.row_mut(j).iter_mut().zip(ai).for_each(|(o, v)| *o += s * v);
        }
    }
}

/// Gradients of `sym` w.r.t. `x` and `y`.
pub fn symmetric_infonce_grad(x: &Matrix, y: &Matrix, labels: &[usize], tau: f64) -> Result<(InfoNceTerms, Matrix, Matrix)> {
    check_pair(x, y, labels, tau)?;
    let sets = positive_sets(labels);
    let terms = infonce_with_sets(x, y, &sets, tau);
    let mut gx = Matrix::zeros(x.rows(), x.cols());
    let mut gy = Matrix::zeros(y.rows(), y.cols());
    accumulate_directional_grad(x, y, &sets, tau, 0.5, &mut gx, &mut gy);
    accumulate_directional_grad(y, x, &sets, tau, 0.5, &mut gy, &mut gx);
    Ok((terms, gx, gy))
}

/// All loss terms of a batch and their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub l_v2c: f64,
    pub l_c2v: f64,
    pub l_v: f64,
    pub l_a2c: f64,
    pub l_c2a: f64,
    pub l_a: f64,
    pub total: f64,
    pub grad_video: Matrix,
    pub grad_attr: Option<Matrix>,
    pub grad_cat: Matrix,
}

pub fn total_loss(batch: &Batch) -> Result<LossBreakdown> {
    let (v, c, tau, labels) = (&batch.video, &batch.cat, batch.tau, &batch.labels);
    // x = video: x2y normalizes over categories (C2V), y2x over videos (V2C)
    let (tv, grad_video, mut grad_cat) = symmetric_infonce_grad(v, c, labels, tau)?;
    let (mut l_a2c, mut l_c2a, mut l_a, mut grad_attr) = (0.0, 0.0, 0.0, None);
    if let Some(a) = &batch.attr {
        let (ta, ga, gc) = symmetric_infonce_grad(a, c, labels, tau)?;
        l_a2c = ta.y2x;
        l_c2a = ta.x2y;
        l_a = ta.sym;
        grad_attr = Some(ga);
        grad_cat.as_mut_slice().iter_mut().zip(gc.as_slice()).for_each(|(o, v)| *o += v);
    }
    let total = if batch.attr.is_some() { tv.sym + l_a } else { tv.sym };
    Ok(LossBreakdown { l_v2c: tv.y2x, l_c2v: tv.x2y, l_v: tv.sym, l_a2c, l_c2a, l_a, total, grad_video, grad_attr, grad_cat })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Embedding {
    Video,
    Attribute,
    Category,
}

/// Change in one direction of the loss when coordinate `k` of anchor row `r`
/// (`anchor_side`) or candidate row `r` moves by `h`.
///
/// Uses `lse(z + d) - lse(z) = ln1p(sum_j p_j expm1(d_j))` with `p = softmax(z)`,
/// so the result keeps full relative precision however small it is. Taking
/// `L(x + h) - L(x - h)` directly would cancel away every digit below
/// `1e-16 * L`.
#[allow(clippy::too_many_arguments)]
fn directional_shift(a: &Matrix, c: &Matrix, sets: &[Vec<usize>], tau: f64, anchor_side: bool, r: usize, k: usize, h: f64) -> f64 {
    let shift_row = |i: usize, delta: &dyn Fn(usize) -> f64| {
        let p = softmax_unchecked(&logit_row(a.row(i), c, tau));
        let moved: f64 = p.iter().enumerate().map(|(j, pj)| pj * delta(j).exp_m1()).sum();
        let pos = sets[i].iter().map(|&j| delta(j)).sum::<f64>() / sets[i].len() as f64;
        moved.ln_1p() - pos
    };
    let sum = if anchor_side {
        shift_row(r, &|j| h * c.row(j)[k] / tau)
    } else {
        (0..a.rows()).map(|i| shift_row(i, &|j| if j == r { h * a.row(i)[k] / tau } else { 0.0 })).sum()
    };
    sum / a.rows() as f64
}

/// `L(x + h e) - L(x)` for the total loss, where `e` is coordinate `k` of row
/// `r` of the `which` embedding matrix.
fn total_loss_shift(batch: &Batch, sets: &[Vec<usize>], which: Embedding, r: usize, k: usize, h: f64) -> f64 {
    let mut pairs = vec![(&batch.video, Embedding::Video)];
    if let Some(a) = &batch.attr {
        pairs.push((a, Embedding::Attribute));
    }
    let c = &batch.cat;
    let mut total = 0.0;
    for (x, role) in pairs {
        if which == role {
            total += 0.5 * directional_shift(x, c, sets, batch.tau, true, r, k, h);
            total += 0.5 * directional_shift(c, x, sets, batch.tau, false, r, k, h);
        } else if which == Embedding::Category {
            total += 0.5 * directional_shift(x, c, sets, batch.tau, false, r, k, h);
            total += 0.5 * directional_shift(c, x, sets, batch.tau, true, r, k, h);
        }
    }
    total
}

/// Largest relative error between the analytic gradient of the total loss and
/// a central difference `(L(x + eps) - L(x - eps)) / (2 eps)`, over every
/// coordinate of every embedding matrix. The denominator is
/// `max(|analytic|, 1e-8)`.
pub fn finite_diff_check(batch: &Batch, epsilon: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let analytic = total_loss(batch)?;
    let sets = positive_sets(&batch.labels);
    let dim = batch.video.cols();
    let mut worst: f64 = 0.0;
    let mut targets = vec![(Embedding::Video, &analytic.grad_video), (Embedding::Category, &analytic.grad_cat)];
    if let Some(ga) = &analytic.grad_attr {
        targets.push((Embedding::Attribute, ga));
    }
    for (which, grad) in targets {
        for (idx, &g) in grad.as_slice().iter().enumerate() {
            let (r, k) = (idx / dim, idx % dim);
            let plus = total_loss_shift(batch, &sets, which, r, k, epsilon);
            let minus = total_loss_shift(batch, &sets, which, r, k, -epsilon);
            let fd = (plus - minus) / (2.0 * epsilon);
            worst = worst.max((fd - g).abs() / g.abs().max(1e-8));
        }
    }
    Ok(worst)
}
