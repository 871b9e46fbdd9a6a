use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{accumulate, apply_update, bind, loss_sid, zero_grads, AdamW, MetricsRow, TrainConfig};
use crate::backbone::Model;
use crate::corpus::Corpus;
use crate::data::Instance;
use crate::error::{Error, Result};

/// Mean teacher-forced SID loss over `instances`.
pub fn validation_loss_sid(
    model: &Model,
    corpus: &Corpus,
    instances: &[Instance],
    window: usize,
) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::invalid("no validation instances"));
    }
    let mut total = 0.0;
    for &inst in instances {
        total += loss_sid(model, &corpus.teacher_sequence(inst, window)?)?;
    }
    Ok(total / instances.len() as f64)
}

/// Teacher-forced pretraining on randomly drawn training windows.
///
/// `on_step` sees every metrics row together with the updated model.
pub fn train_stage1(
    model: &mut Model,
    corpus: &Corpus,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&MetricsRow, &Model) -> Result<()>,
) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    let pool = &corpus.split.train;
    if pool.is_empty() {
        return Err(Error::invalid("no training instances"));
    }
    model.config().check_fits(cfg.window + 1, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(
        &model
            .params()
            .values()
            .iter()
            .map(|t| t.numel())
            .collect::<Vec<_>>(),
    );
    let per_step = cfg.batch * cfg.accumulation;
    let scale = 1.0 / per_step as f64;
    let mut rows = Vec::with_capacity(cfg.total_steps);
    for step in 0..cfg.total_steps {
        let mut grads = zero_grads(model);
        let mut loss = 0.0;
        for _ in 0..per_step {
            let inst = pool[rng.gen_range(0..pool.len())];
            let seq = corpus.teacher_sequence(inst, cfg.window)?;
            let mut bound = bind(model, rng.gen());
            let (l, _, _) = bound.loss_sid(model, &seq)?;
            let g = bound.graph.backward(l)?;
            accumulate(&mut grads, &bound.param_grads(&g), scale);
            loss += bound.graph.value(l).item()? * scale;
        }
        let lr = cfg.lr_at(step);
        apply_update(model, &mut opt, &grads, lr, cfg.weight_decay)?;
        let row = MetricsRow {
            step,
            loss_sid: loss,
            loss_rank: 0.0,
            lr,
        };
        on_step(&row, model)?;
        rows.push(row);
    }
    Ok(rows)
}
