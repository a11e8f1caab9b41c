use crate::error::{Error, Result};

/// Linear warmup from 0 to `base_lr` over `[0, warmup)`, then cosine decay to
/// 0 at `total_steps`.
pub fn cosine_warmup_lr(
    step: usize,
    total_steps: usize,
    warmup: usize,
    base_lr: f64,
) -> Result<f64> {
    if step > total_steps || warmup > total_steps {
        return Err(Error::Range(format!(
            "need step <= total_steps and warmup <= total_steps (step={step}, warmup={warmup}, total={total_steps})"
        )));
    }
    if step < warmup {
        return Ok(base_lr * step as f64 / warmup as f64);
    }
    if total_steps == warmup {
        return Ok(base_lr);
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}
