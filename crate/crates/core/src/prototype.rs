//! Hierarchical prototype decision head.
//!
//! Each class holds a small set of prototype vectors per level, initialized
//! as QR-orthogonalized Gaussian rows on a radius-`r` hypersphere. Class
//! scores aggregate cosine similarities through a temperature log-sum-exp;
//! only the highest level predicts. Prototypes never receive gradients: the
//! only mechanism that moves them is the momentum-scheduled EMA over batch
//! statistics, and every update re-projects onto the sphere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ops::softmax_slice;
use crate::tensor::tape::{NodeId, Tape};
use crate::tensor::{Element, Tensor};

/// Three-phase momentum schedule constants: freeze, linear decay, exponential
/// approach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub t_warm: u64,
    pub t_active: u64,
    pub gamma_a: f64,
    pub gamma_b: f64,
    pub tau: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams { t_warm: 3, t_active: 10, gamma_a: 0.99, gamma_b: 0.999, tau: 30.0 }
    }
}

impl ScheduleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_a > 0.0 && self.gamma_a <= self.gamma_b && self.gamma_b <= 1.0) {
            return Err(Error::Config(format!(
                "momentum bounds must satisfy 0 < gamma_a <= gamma_b <= 1, got ({}, {})",
                self.gamma_a, self.gamma_b
            )));
        }
        if self.tau <= 0.0 {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Momentum coefficient at step `t`: 1 during warm-up, linear decay to
/// `gamma_a` over the active phase, then exponential approach to `gamma_b`.
pub fn gamma_schedule(t: u64, p: &ScheduleParams) -> Result<f64> {
    p.validate()?;
    let gamma = if t < p.t_warm {
        1.0
    } else if t < p.t_warm + p.t_active {
        let alpha = (t - p.t_warm) as f64 / p.t_active as f64;
        1.0 - (1.0 - p.gamma_a) * alpha
    } else {
        let dt = (t - p.t_warm - p.t_active) as f64;
        p.gamma_a + (p.gamma_b - p.gamma_a) * (1.0 - (-dt / p.tau).exp())
    };
    Ok(gamma)
}

/// One hierarchy level: `per_class` prototypes of dimension `dim` for each
/// class, stored row-major `[class][k][dim]` in 64-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeLevel {
    pub per_class: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    pub levels: Vec<PrototypeLevel>,
    pub n_classes: usize,
    pub dim: usize,
    pub radius: f64,
    pub temperature: f64,
    pub schedule: ScheduleParams,
    pub step: u64,
}

pub struct Predictions {
    pub classes: Vec<usize>,
    pub probabilities: Vec<Vec<f64>>,
}

impl PrototypeBank {
    /// Per class and level: K x D Gaussian rows, orthogonalized (modified
    /// Gram-Schmidt, the Q factor of a QR factorization), scaled to radius.
    pub fn init(
        n_classes: usize,
        k_levels: &[usize],
        dim: usize,
        radius: f64,
        temperature: f64,
        schedule: ScheduleParams,
        seed: u64,
    ) -> Result<Self> {
        if n_classes == 0 || dim == 0 || k_levels.is_empty() {
            return Err(Error::Config("prototype bank needs classes, dims and levels".into()));
        }
        if radius <= 0.0 {
            return Err(Error::Config(format!("radius must be positive, got {radius}")));
        }
        if temperature <= 0.0 {
            return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
        }
        schedule.validate()?;
        for (l, &k) in k_levels.iter().enumerate() {
            if k == 0 {
                return Err(Error::Config(format!("level {l} has zero prototypes per class")));
            }
            if k > dim {
                return Err(Error::Config(format!(
                    "level {l} asks for {k} orthogonal prototypes in dimension {dim}; \
                     orthogonalization is impossible with k > dim"
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut levels = Vec::with_capacity(k_levels.len());
        for &k in k_levels {
            let mut values = vec![0.0f64; n_classes * k * dim];
            for c in 0..n_classes {
                let rows = &mut values[c * k * dim..(c + 1) * k * dim];
                for v in rows.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                orthonormalize_rows(rows, k, dim)?;
                for v in rows.iter_mut() {
                    *v *= radius;
                }
            }
            levels.push(PrototypeLevel { per_class: k, values });
        }
        Ok(PrototypeBank {
            levels,
            n_classes,
            dim,
            radius,
            temperature,
            schedule,
            step: 0,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Total prototype count across levels and classes.
    pub fn total_prototypes(&self) -> usize {
        self.levels.iter().map(|l| l.per_class * self.n_classes).sum()
    }

    pub fn top_level(&self) -> usize {
        self.levels.len() - 1
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level >= self.levels.len() {
            return Err(Error::invalid(
                "prototype_level",
                format!("level {level} out of range 0..{}", self.levels.len()),
            ));
        }
        Ok(())
    }

    /// Unit-norm prototype matrix `(C*K, D)` for one level.
    fn unit_rows(&self, level: usize) -> Vec<f64> {
        let lv = &self.levels[level];
        lv.values.iter().map(|v| v / self.radius).collect()
    }

    /// Class scores `s_c(z) = log sum_k exp(cos(z, p_k^c) / T)` for one
    /// level, built on the tape: differentiable in `z`, constant in the
    /// prototypes.
    pub fn class_scores<T: Element>(
        &self,
        tape: &mut Tape<T>,
        z: NodeId,
        level: usize,
    ) -> Result<NodeId> {
        self.check_level(level)?;
        let shape = tape.shape(z).to_vec();
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(Error::ShapeMismatch {
                op: "class_scores",
                lhs: shape,
                rhs: vec![0, self.dim],
            });
        }
        let b = shape[0];
        let k = self.levels[level].per_class;
        let zhat = tape.row_normalize(z)?;
        let protos = tape.constant_f64(vec![self.n_classes * k, self.dim], self.unit_rows(level))?;
        let sims = tape.matmul(zhat, protos, false, true)?; // (B, C*K)
        let grouped = tape.reshape(sims, vec![b, self.n_classes, k])?;
        tape.lse_last_axis(grouped, self.temperature)
    }

    /// Softmax prediction using only the highest level.
    pub fn predict<T: Element>(&self, z: &Tensor<T>) -> Result<Predictions> {
        let mut tape: Tape<T> = Tape::new();
        let zid = tape.leaf(z);
        let scores = self.class_scores(&mut tape, zid, self.top_level())?;
        let values = tape.value_f64(scores);
        let mut classes = Vec::with_capacity(values.len() / self.n_classes);
        let mut probabilities = Vec::with_capacity(classes.capacity());
        for row in values.chunks(self.n_classes) {
            let mut p = row.to_vec();
            softmax_slice(&mut p);
            let (mut best, mut best_p) = (0usize, p[0]);
            for (c, &v) in p.iter().enumerate().skip(1) {
                if v > best_p {
                    best = c;
                    best_p = v;
                }
            }
            classes.push(best);
            probabilities.push(p);
        }
        Ok(Predictions { classes, probabilities })
    }

    /// EMA update from batch embeddings (Eq. 12-13 semantics): soft
    /// assignment of each class member over that class's prototypes, weighted
    /// mean, convex blend at momentum `gamma(t)`, re-projection to the
    /// sphere. A momentum of exactly 1 freezes the bank bitwise; classes
    /// absent from the batch are untouched. Runs outside any tape.
    pub fn ema_update(&mut self, z: &[f64], batch: usize, labels: &[usize], t: u64) -> Result<()> {
        if labels.len() != batch || z.len() != batch * self.dim {
            return Err(Error::invalid(
                "ema_update",
                format!("batch {batch} with {} labels and {} values", labels.len(), z.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.n_classes) {
            return Err(Error::invalid(
                "ema_update",
                format!("label {bad} out of range 0..{}", self.n_classes),
            ));
        }
        self.step = t;
        let gamma = gamma_schedule(t, &self.schedule)?;
        if gamma >= 1.0 {
            return Ok(()); // warm-up freeze
        }
        let dim = self.dim;
        let mut z_norms = Vec::with_capacity(batch);
        for i in 0..batch {
            let row = &z[i * dim..(i + 1) * dim];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n < 1e-12 {
                return Err(Error::numeric("ema_update", "zero-norm embedding (cosine undefined)"));
            }
            z_norms.push(n);
        }
        for level in &mut self.levels {
            let k = level.per_class;
            for c in 0..self.n_classes {
                let members: Vec<usize> =
                    (0..batch).filter(|&i| labels[i] == c).collect();
                if members.is_empty() {
                    continue;
                }
                let protos = &mut level.values[c * k * dim..(c + 1) * k * dim];
                // q_ik: per member, softmax over the class's prototypes of
                // raw cosine similarity
                let mut q = vec![0.0f64; members.len() * k];
                for (mi, &i) in members.iter().enumerate() {
                    let zrow = &z[i * dim..(i + 1) * dim];
                    let lane = &mut q[mi * k..(mi + 1) * k];
                    for (ki, qv) in lane.iter_mut().enumerate() {
                        let p = &protos[ki * dim..(ki + 1) * dim];
                        let dot: f64 = zrow.iter().zip(p).map(|(a, b)| a * b).sum();
                        *qv = dot / (z_norms[i] * self.radius);
                    }
                    softmax_slice(lane);
                }
                for ki in 0..k {
                    let mut weight = 0.0f64;
                    let mut mean = vec![0.0f64; dim];
                    for (mi, &i) in members.iter().enumerate() {
                        let qv = q[mi * k + ki];
                        weight += qv;
                        let zrow = &z[i * dim..(i + 1) * dim];
                        for (m, &v) in mean.iter_mut().zip(zrow) {
                            *m += qv * v;
                        }
                    }
                    let p = &mut protos[ki * dim..(ki + 1) * dim];
                    let mut norm_sq = 0.0f64;
                    for (pv, m) in p.iter_mut().zip(&mean) {
                        *pv = gamma * *pv + (1.0 - gamma) * (m / weight);
                        norm_sq += *pv * *pv;
                    }
                    let norm = norm_sq.sqrt();
                    if norm < 1e-12 {
                        return Err(Error::numeric(
                            "ema_update",
                            "prototype collapsed to zero during update",
                        ));
                    }
                    let scale = self.radius / norm;
                    for pv in p.iter_mut() {
                        *pv *= scale;
                    }
                }
            }
        }
        Ok(())
    }

    /// Diversity penalty of one level on the tape (constant leaves: no
    /// gradient ever reaches the bank).
    pub fn diversity_level<T: Element>(&self, tape: &mut Tape<T>, level: usize) -> Result<NodeId> {
        self.check_level(level)?;
        let k = self.levels[level].per_class;
        let unit = self.unit_rows(level);
        let mut acc: Option<NodeId> = None;
        for c in 0..self.n_classes {
            let rows = unit[c * k * self.dim..(c + 1) * k * self.dim].to_vec();
            let pid = tape.constant_f64(vec![k, self.dim], rows)?;
            let pen = diversity_penalty(tape, pid)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, pen)?,
                None => pen,
            });
        }
        tape.scale(acc.expect("n_classes > 0"), 1.0 / self.n_classes as f64)
    }

    /// Scalar diversity loss of the whole bank: per-class squared Frobenius
    /// distance of the Gram matrix from identity, averaged over classes,
    /// then over levels.
    pub fn diversity_loss(&self) -> Result<f64> {
        let mut tape: Tape<f64> = Tape::new();
        let mut acc: Option<NodeId> = None;
        for level in 0..self.n_levels() {
            let d = self.diversity_level(&mut tape, level)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, d)?,
                None => d,
            });
        }
        let total = tape.scale(acc.expect("levels non-empty"), 1.0 / self.n_levels() as f64)?;
        Ok(tape.scalar_value(total))
    }
}

/// `|| P_hat P_hat^T - I ||_F^2` for one class's prototype matrix node
/// (rows are normalized on the tape, so the comparison target is exactly the
/// identity). Differentiable in the input node.
pub fn diversity_penalty<T: Element>(tape: &mut Tape<T>, protos: NodeId) -> Result<NodeId> {
    let shape = tape.shape(protos).to_vec();
    if shape.len() != 2 {
        return Err(Error::invalid("diversity_penalty", format!("expected 2-d matrix, got {shape:?}")));
    }
    let k = shape[0];
    let unit = tape.row_normalize(protos)?;
    let gram = tape.matmul(unit, unit, false, true)?;
    let mut eye = vec![0.0f64; k * k];
    for i in 0..k {
        eye[i * k + i] = 1.0;
    }
    let eye = tape.constant_f64(vec![k, k], eye)?;
    let diff = tape.sub(gram, eye)?;
    let sq = tape.mul(diff, diff)?;
    tape.sum_all(sq)
}

/// Combined multi-level training loss: per level, weighted cross-entropy of
/// the class scores plus `lambda` times that level's diversity penalty.
/// Gradient flows only to the embedding side; prototypes are constants.
pub fn total_loss<T: Element>(
    tape: &mut Tape<T>,
    level_scores: &[NodeId],
    labels: &[usize],
    bank: &PrototypeBank,
    level_weights: &[f64],
    lambda: f64,
) -> Result<NodeId> {
    if level_scores.len() != bank.n_levels() || level_weights.len() != bank.n_levels() {
        return Err(Error::invalid(
            "total_loss",
            format!(
                "{} score matrices and {} weights for {} levels",
                level_scores.len(),
                level_weights.len(),
                bank.n_levels()
            ),
        ));
    }
    if let Some(&w) = level_weights.iter().find(|&&w| w <= 0.0) {
        return Err(Error::invalid("total_loss", format!("level weight {w} must be positive")));
    }
    let mut acc: Option<NodeId> = None;
    for (level, (&scores, &w)) in level_scores.iter().zip(level_weights).enumerate() {
        let ce = tape.cross_entropy(scores, labels)?;
        let mut term = tape.scale(ce, w)?;
        if lambda != 0.0 {
            let div = bank.diversity_level(tape, level)?;
            let div = tape.scale(div, lambda)?;
            term = tape.add(term, div)?;
        }
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.expect("levels non-empty"))
}

/// Modified Gram-Schmidt with re-orthogonalization: rows become orthonormal.
fn orthonormalize_rows(rows: &mut [f64], k: usize, dim: usize) -> Result<()> {
    for i in 0..k {
        for _pass in 0..2 {
            for j in 0..i {
                let dot: f64 = {
                    let (head, tail) = rows.split_at(i * dim);
                    let qj = &head[j * dim..(j + 1) * dim];
                    let vi = &tail[..dim];
                    vi.iter().zip(qj).map(|(a, b)| a * b).sum()
                };
                let (head, tail) = rows.split_at_mut(i * dim);
                let qj = &head[j * dim..(j + 1) * dim];
                let vi = &mut tail[..dim];
                for (v, &q) in vi.iter_mut().zip(qj) {
                    *v -= dot * q;
                }
            }
        }
        let vi = &mut rows[i * dim..(i + 1) * dim];
        let norm = vi.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-10 {
            return Err(Error::numeric(
                "init_prototypes",
                "degenerate random draw during orthogonalization",
            ));
        }
        for v in vi.iter_mut() {
            *v /= norm;
        }
    }
    Ok(())
}
