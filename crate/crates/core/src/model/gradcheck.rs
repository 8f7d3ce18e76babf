use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::transformer::{Fault, Transformer};
use super::ModelConfig;

const STEP: f64 = 1e-5;
/// Finite differences at `STEP` in f64 carry roughly 1e-10 absolute noise;
/// the floor keeps near-zero gradients from producing spurious ratios.
const DENOM_FLOOR: f64 = 1e-6;
const SAMPLES_PER_TENSOR: usize = 24;
const SEQUENCES: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
    /// Largest relative error per tensor, in storage order.
    pub per_tensor: Vec<(String, f64)>,
}

/// Compares analytic gradients with central differences in f64 on a random
/// batch. Dropout is disabled. Every tensor is probed at up to 24 entries.
pub fn gradient_check(config: &ModelConfig, seed: u64, tolerance: f64) -> GradCheckReport {
    gradient_check_with_fault(config, seed, tolerance, Fault::None)
}

#[doc(hidden)]
pub fn gradient_check_with_fault(config: &ModelConfig, seed: u64, tolerance: f64, fault: Fault) -> GradCheckReport {
    let config = ModelConfig {
        dropout: 0.0,
        ..config.clone()
    };
    let mut model = Transformer::<f64>::new(config.clone(), seed).expect("valid gradient-check config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // Leave the last position unused so untouched position embeddings are
    // probed too.
    let len = config.max_seq_len.saturating_sub(1).max(1);
    let batch: Vec<(Vec<u32>, Vec<u32>)> = (0..SEQUENCES)
        .map(|_| {
            let seq: Vec<u32> = (0..=len).map(|_| rng.gen_range(0..config.vocab_size as u32)).collect();
            (seq[..len].to_vec(), seq[1..].to_vec())
        })
        .collect();
    let total = (SEQUENCES * len) as f64;

    let mut grads = vec![0.0; model.num_params()];
    for (inp, tgt) in &batch {
        model
            .accumulate_grads(inp, tgt, 0.0, &mut None, &mut grads, 1.0 / total, fault)
            .expect("valid batch");
    }
    let loss = |m: &Transformer<f64>| -> f64 {
        batch
            .iter()
            .map(|(inp, tgt)| m.loss(inp, tgt).expect("valid batch") * tgt.len() as f64)
            .sum::<f64>()
            / total
    };

    let tensors: Vec<(String, usize, usize)> = model
        .layout()
        .tensors()
        .map(|(n, o, l)| (n.to_string(), o, l))
        .collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        checked: 0,
        tolerance,
        passed: true,
        per_tensor: Vec::new(),
    };
    for (name, off, len) in tensors {
        let picks: Vec<usize> = if len <= SAMPLES_PER_TENSOR {
            (0..len).collect()
        } else {
            let mut v: Vec<usize> = (0..SAMPLES_PER_TENSOR).map(|_| rng.gen_range(0..len)).collect();
            if name == "wpe" {
                // the final, unused position
                v.push(len - 1);
            }
            v
        };
        let mut worst: f64 = 0.0;
        for i in picks {
            let idx = off + i;
            let orig = model.params()[idx];
            model.params_mut()[idx] = orig + STEP;
            let up = loss(&model);
            model.params_mut()[idx] = orig - STEP;
            let down = loss(&model);
            model.params_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let analytic = grads[idx];
            let rel = relative_error(analytic, numeric);
            worst = worst.max(rel);
            report.checked += 1;
        }
        if worst > report.max_rel_error {
            report.max_rel_error = worst;
            report.worst_tensor = name.clone();
        }
        report.per_tensor.push((name, worst));
    }
    report.passed = report.max_rel_error < tolerance;
    report
}

fn relative_error(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(DENOM_FLOOR)
}
