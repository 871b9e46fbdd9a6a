//! Teacher-forced SID pretraining and joint generate/retrieve/rerank training.

mod optim;
mod stage1;
mod stage2;

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use optim::{lr_at, AdamW, ADAM_EPS, BETA1, BETA2};
pub use stage1::{train_stage1, validation_loss_sid};
pub use stage2::{
    stage2_gradients, stage2_loss, stage2_step, train_stage2, validation_losses, LossTerms,
    Stage2Loss, StepReport,
};

use crate::backbone::{forward_segment, sid_logits, Model, Params};
use crate::error::{Error, Result};
use crate::numerics::{bce_value, ops, Backend, Eager, Gradients, Graph, NodeId, Tensor};
use crate::serialization::SerializedSequence;
use crate::tokenizer::SemanticId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup: usize,
    pub total_steps: usize,
    pub batch: usize,
    pub accumulation: usize,
    /// Beam width C.
    pub beam: usize,
    /// Retrieval length M.
    pub retrieval: usize,
    /// Serialized history window L, in items.
    pub window: usize,
    pub seed: u64,
    /// Rank-loss gradients reach only the rank head.
    pub head_only: bool,
    /// Weight of positive terms in the rank loss; 1 leaves it unweighted.
    pub pos_weight: f64,
    pub constrained: bool,
    /// Steps between validation-loss measurements in the metrics log; 0 disables.
    pub eval_every: usize,
    /// Validation instances used for those measurements.
    pub eval_instances: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            weight_decay: 1e-4,
            warmup: 200,
            total_steps: 5000,
            batch: 16,
            accumulation: 1,
            beam: 20,
            retrieval: 10,
            window: 32,
            seed: 0,
            head_only: false,
            pos_weight: 1.0,
            constrained: true,
            eval_every: 0,
            eval_instances: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup > self.total_steps {
            return Err(Error::invalid(format!(
                "warmup {} exceeds total steps {}",
                self.warmup, self.total_steps
            )));
        }
        if self.total_steps == 0
            || self.batch == 0
            || self.accumulation == 0
            || self.beam == 0
            || self.window == 0
        {
            return Err(Error::invalid(
                "steps, batch, accumulation, beam and window must be positive",
            ));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) || !(self.pos_weight > 0.0) {
            return Err(Error::invalid(
                "lr and pos_weight must be positive, weight_decay non-negative",
            ));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        lr_at(step, self.lr, self.warmup, self.total_steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub loss_sid: f64,
    pub loss_rank: f64,
    pub lr: f64,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("step,loss_sid,loss_rank,lr\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6e}",
            r.step, r.loss_sid, r.loss_rank, r.lr
        );
    }
    out
}

/// `y = 1` exactly for the candidate equal to `truth`.
pub fn make_beam_labels(candidates: &[SemanticId], truth: SemanticId) -> Vec<f64> {
    candidates
        .iter()
        .map(|&c| if c == truth { 1.0 } else { 0.0 })
        .collect()
}

/// Summed binary cross-entropy.
pub fn loss_rank(yhats: &[f64], labels: &[f64]) -> Result<f64> {
    if yhats.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "loss_rank",
            lhs: vec![yhats.len()],
            rhs: vec![labels.len()],
        });
    }
    Ok(bce_value(yhats, labels, &vec![1.0; labels.len()]))
}

/// Negative log-likelihood of `targets` under full-vocabulary softmax of
/// `logits` (one row per target).
pub fn sid_nll(
    logits: &Tensor,
    targets: &[usize],
    precision: crate::numerics::Precision,
) -> Result<f64> {
    if logits.rows() != targets.len() {
        return Err(Error::DimMismatch {
            expected: logits.rows(),
            got: targets.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::NoTargets);
    }
    let lp = ops::log_softmax(logits, precision)?;
    let v = lp.cols();
    let mut s = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        if t >= v {
            return Err(Error::OutOfRange(format!("target token {t} of {v}")));
        }
        s -= lp.data()[r * v + t];
    }
    Ok(precision.round(s))
}

/// SID logits at the supervised positions of `seq`, with their targets.
fn masked_logits<B: Backend>(
    b: &mut B,
    model_cfg: &crate::backbone::ModelConfig,
    p: &Params<B::Value>,
    seq: &SerializedSequence,
) -> Result<(
    B::Value,
    Vec<usize>,
    B::Value,
    Vec<crate::backbone::LayerKv<B::Value>>,
)> {
    let targets = seq.sid_targets();
    if targets.is_empty() {
        return Err(Error::NoTargets);
    }
    let (hidden, kv) = forward_segment(b, model_cfg, p, &seq.tokens, 0, &[])?;
    let rows: Vec<usize> = targets.iter().map(|t| t.0).collect();
    let h = b.select_rows(&hidden, &rows)?;
    let logits = sid_logits(b, p, &h)?;
    Ok((
        logits,
        targets.into_iter().map(|t| t.1).collect(),
        hidden,
        kv,
    ))
}

/// Teacher-forced SID loss of one sequence, evaluated eagerly.
pub fn loss_sid(model: &Model, seq: &SerializedSequence) -> Result<f64> {
    let mut b = Eager::new(model.config().precision);
    let (logits, targets, _, _) = masked_logits(&mut b, model.config(), model.params(), seq)?;
    sid_nll(&logits, &targets, model.config().precision)
}

/// Model parameters placed on a fresh recording graph.
pub struct Bound {
    pub graph: Graph,
    pub nodes: Params<NodeId>,
}

pub fn bind(model: &Model, seed: u64) -> Bound {
    let mut graph = Graph::with_seed(model.config().precision, seed);
    let nodes = model
        .params()
        .map(|name, t| graph.param(name, (**t).clone()));
    Bound { graph, nodes }
}

impl Bound {
    /// Taped SID loss node; also returns the hidden node and layer caches.
    pub fn loss_sid(
        &mut self,
        model: &Model,
        seq: &SerializedSequence,
    ) -> Result<(NodeId, NodeId, Vec<crate::backbone::LayerKv<NodeId>>)> {
        let (logits, targets, hidden, kv) =
            masked_logits(&mut self.graph, model.config(), &self.nodes, seq)?;
        let lp = self.graph.log_softmax(logits)?;
        let v = self.graph.value(lp).cols();
        let picks = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| r * v + t)
            .collect();
        Ok((self.graph.nll_pick(lp, picks)?, hidden, kv))
    }

    /// Gradient of every parameter, zero where the loss does not reach it.
    pub fn param_grads(&self, grads: &Gradients) -> Params<Vec<f64>> {
        self.nodes.map(|_, &id| match grads.get(id) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.graph.value(id).numel()],
        })
    }
}

/// Adds `scale * g` into `acc`, both in [`Params::entries`] order.
pub(crate) fn accumulate(acc: &mut [Vec<f64>], g: &Params<Vec<f64>>, scale: f64) {
    for (a, g) in acc.iter_mut().zip(g.values()) {
        for (x, y) in a.iter_mut().zip(g) {
            *x += scale * y;
        }
    }
}

/// Applies one AdamW update to `model` with accumulated gradients.
pub(crate) fn apply_update(
    model: &mut Model,
    opt: &mut AdamW,
    grads: &[Vec<f64>],
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let precision = model.config().precision;
    let entries = model.params().entries();
    let names: Vec<String> = entries.iter().map(|(n, _)| n.clone()).collect();
    let mut buffers: Vec<Vec<f64>> = entries.iter().map(|(_, t)| t.data().to_vec()).collect();
    {
        let mut views: Vec<&mut [f64]> = buffers.iter_mut().map(|b| b.as_mut_slice()).collect();
        let gviews: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
        let nviews: Vec<&str> = names.iter().map(String::as_str).collect();
        opt.step(&mut views, &gviews, &nviews, lr, weight_decay)?;
    }
    let shapes: Vec<Vec<usize>> = entries.iter().map(|(_, t)| t.shape().to_vec()).collect();
    let tensors = buffers
        .into_iter()
        .zip(shapes)
        .map(|(data, shape)| Tensor::new(shape, data).map(|t| Arc::new(t.rounded(precision))))
        .collect::<Result<Vec<_>>>()?;
    *model.params_mut() = model.params().from_values(tensors)?;
    Ok(())
}

pub(crate) fn zero_grads(model: &Model) -> Vec<Vec<f64>> {
    model
        .params()
        .values()
        .iter()
        .map(|t| vec![0.0; t.numel()])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Precision;

    #[test]
    fn label_examples() {
        let beams = [SemanticId::new(1, 2, 3, 4), SemanticId::new(1, 2, 3, 5)];
        assert_eq!(
            make_beam_labels(&beams, SemanticId::new(1, 2, 3, 4)),
            vec![1.0, 0.0]
        );
        assert_eq!(
            make_beam_labels(&beams, SemanticId::new(0, 0, 0, 0)),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn rank_loss_examples() {
        assert!((loss_rank(&[0.5], &[1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(loss_rank(&[1.0, 0.0], &[1.0, 0.0]).unwrap().abs() < 1e-9);
        assert!((loss_rank(&[0.8, 0.2], &[1.0, 0.0]).unwrap() - 0.446_287_1).abs() < 1e-7);
        assert!(loss_rank(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn one_hot_logits_give_zero_loss() {
        let targets = [3, 0, 5];
        let mut data = vec![0.0; 3 * 7];
        for (r, &t) in targets.iter().enumerate() {
            data[r * 7 + t] = 1e4;
        }
        let logits = Tensor::matrix(3, 7, data).unwrap();
        assert_eq!(sid_nll(&logits, &targets, Precision::F64).unwrap(), 0.0);
        let uniform = Tensor::zeros(&[3, 7]);
        let l = sid_nll(&uniform, &targets, Precision::F64).unwrap();
        assert!((l - 3.0 * 7f64.ln()).abs() < 1e-12);
        assert!(matches!(
            sid_nll(&Tensor::zeros(&[0, 7]), &[], Precision::F64),
            Err(Error::NoTargets)
        ));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            warmup: 6000,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            beam: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }
}
