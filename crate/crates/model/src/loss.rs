//! Tensor form of the training objective; mirrors `eae_core::loss`.

use candle_core::{DType, Result, Tensor, D};
use candle_nn::ops;
use eae_core::loss::{LossConfig, NceMode, PROB_EPSILON};

pub struct TensorLoss {
    pub total: Tensor,
    pub wce: f64,
    pub nce: f64,
}

fn label_index(labels: &[bool], logits: &Tensor) -> Result<Tensor> {
    let idx: Vec<u32> = labels.iter().map(|&y| u32::from(y)).collect();
    Tensor::from_vec(idx, (labels.len(), 1), logits.device())
}

/// `logits` is `(batch, 2)` with columns `[negative, positive]`.
pub fn combined_loss(logits: &Tensor, labels: &[bool], cfg: &LossConfig) -> Result<TensorLoss> {
    let (n, c) = logits.dims2()?;
    if c != 2 || n != labels.len() || n == 0 {
        candle_core::bail!("expected ({}, 2) logits, got ({n}, {c})", labels.len());
    }
    let idx = label_index(labels, logits)?;
    let dtype = logits.dtype();

    // log p(true class), clamped like the reference implementation.
    let log_p = ops::log_softmax(logits, D::Minus1)?.gather(&idx, 1)?.squeeze(1)?;
    let log_p = log_p.clamp(PROB_EPSILON.ln(), (1.0 - PROB_EPSILON).ln())?;
    let w: Vec<f64> = labels.iter().map(|&y| if y { cfg.w_pos } else { cfg.w_neg }).collect();
    let w = Tensor::from_vec(w, n, logits.device())?.to_dtype(dtype)?;
    let wce = (log_p.mul(&w)?.sum_all()? * (-1.0 / n as f64))?;

    let wce_value = scalar(&wce)?;
    let (total, nce_value) = if cfg.use_nce {
        let scaled = (logits / cfg.tau)?;
        let nce = match cfg.nce_mode {
            NceMode::PerInstance => {
                (ops::log_softmax(&scaled, D::Minus1)?.gather(&idx, 1)?.sum_all()? * (-1.0 / n as f64))?
            }
            NceMode::InBatch => {
                let t = scaled.gather(&idx, 1)?.squeeze(1)?;
                let max = t.max_keepdim(0)?;
                let lse = (t.broadcast_sub(&max)?.exp()?.sum_all()?.log()? + max.squeeze(0)?)?;
                (lse - t.mean_all()?)?
            }
        };
        let v = scalar(&nce)?;
        ((wce + nce)?, v)
    } else {
        (wce, 0.0)
    };
    Ok(TensorLoss {
        total,
        wce: wce_value,
        nce: nce_value,
    })
}

fn scalar(t: &Tensor) -> Result<f64> {
    t.to_dtype(DType::F64)?.to_scalar::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> (Vec<[f64; 2]>, Vec<bool>) {
        let logits = (0..n).map(|_| [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)]).collect();
        let labels = (0..n).map(|_| rng.random_bool(0.5)).collect();
        (logits, labels)
    }

    #[test]
    fn matches_reference_values_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let configs = [
            LossConfig::default(),
            LossConfig::cross_entropy(),
            LossConfig { tau: 0.5, nce_mode: NceMode::InBatch, ..LossConfig::default() },
        ];
        for cfg in configs {
            for n in [1, 5, 16] {
                let (logits, labels) = random_batch(&mut rng, n);
                let flat: Vec<f64> = logits.iter().flatten().copied().collect();
                let var = Var::from_vec(flat, (n, 2), &Device::Cpu).unwrap();
                let out = combined_loss(var.as_tensor(), &labels, &cfg).unwrap();
                let reference = eae_core::loss::combined_loss(&logits, &labels, &cfg).unwrap();
                let total = out.total.to_scalar::<f64>().unwrap();
                assert!((total - reference.total).abs() < 1e-12, "{total} vs {}", reference.total);
                assert!((out.wce - reference.wce).abs() < 1e-12);
                assert!((out.nce - reference.nce).abs() < 1e-12);

                let grads = out.total.backward().unwrap();
                let g = grads.get(var.as_tensor()).unwrap().to_vec2::<f64>().unwrap();
                let expected = eae_core::loss::combined_grad(&logits, &labels, &cfg).unwrap();
                for (a, b) in g.iter().zip(&expected) {
                    assert!((a[0] - b[0]).abs() < 1e-10 && (a[1] - b[1]).abs() < 1e-10, "{a:?} vs {b:?}");
                }
            }
        }
    }
}
