//! Central finite differences against the analytic gradients.

use crate::exec::Exec;
use crate::model::{batch_loss, gradients, Batch, ModelParams};

use super::RunError;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Relative error per tensor, in declaration order.
    pub per_tensor: Vec<(String, f64)>,
    /// Name and error of the worst tensor.
    pub worst: (String, f64),
    /// Number of parameters perturbed.
    pub checked: usize,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.worst.1
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, e) in &self.per_tensor {
            s.push_str(&format!("{name}\t{e:.3e}\n"));
        }
        s.push_str(&format!("worst\t{}\t{:.3e}\n", self.worst.0, self.worst.1));
        s
    }
}

/// `‖a - n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

const CHUNK: usize = 64;

/// Perturb every parameter by `±h` and compare the central difference of the
/// total loss with [`gradients`], one relative error per tensor.
pub fn finite_diff_check(params: &ModelParams, batch: &Batch, h: f64, exec: Exec) -> Result<GradCheckReport, RunError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(RunError::Invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let (_, grads) = gradients(params, batch, exec)?;
    let info = params.tensor_info();
    let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    // flat (tensor, element) work list, processed in chunks on cloned params
    let jobs: Vec<(usize, usize)> = shapes.iter().enumerate().flat_map(|(t, &n)| (0..n).map(move |i| (t, i))).collect();
    let numeric: Vec<Result<Vec<f64>, RunError>> = exec.map(&jobs.chunks(CHUNK).collect::<Vec<_>>(), |chunk| {
        let mut p = params.clone();
        let mut out = Vec::with_capacity(chunk.len());
        for &(t, i) in *chunk {
            let orig = flat_get(&p, t, i);
            flat_set(&mut p, t, i, orig + h);
            let up = batch_loss(&p, batch, Exec::Sequential)?.total;
            flat_set(&mut p, t, i, orig - h);
            let down = batch_loss(&p, batch, Exec::Sequential)?.total;
            flat_set(&mut p, t, i, orig);
            out.push((up - down) / (2.0 * h));
        }
        Ok(out)
    });
    let mut flat = Vec::with_capacity(jobs.len());
    for r in numeric {
        flat.extend(r?);
    }
    let mut per_tensor = Vec::with_capacity(info.len());
    let mut offset = 0;
    for ((inf, g), &n) in info.iter().zip(grads.tensors()).zip(&shapes) {
        let analytic: Vec<f64> = g.iter().copied().collect();
        per_tensor.push((inf.name.clone(), relative_error(&analytic, &flat[offset..offset + n])));
        offset += n;
    }
    let worst = per_tensor
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap_or_else(|| (String::new(), 0.0));
    Ok(GradCheckReport {
        per_tensor,
        worst,
        checked: jobs.len(),
    })
}

fn flat_get(p: &ModelParams, t: usize, i: usize) -> f64 {
    let tensor = &p.tensors()[t];
    let cols = tensor.ncols();
    tensor[[i / cols, i % cols]]
}

fn flat_set(p: &mut ModelParams, t: usize, i: usize, v: f64) {
    let mut ts = p.tensors_mut();
    let cols = ts[t].ncols();
    ts[t][[i / cols, i % cols]] = v;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[0.0, 1.0]) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_step() {
        let cfg = crate::model::ModelConfig {
            embed_dim: 4,
            layers: 1,
            heads: 1,
            event_vocab: 400,
            ..Default::default()
        };
        let p = ModelParams::zeros(&cfg);
        let batch = Batch::default();
        assert!(matches!(finite_diff_check(&p, &batch, 0.0, Exec::Sequential), Err(RunError::Invalid(_))));
        assert!(matches!(finite_diff_check(&p, &batch, -1e-4, Exec::Sequential), Err(RunError::Invalid(_))));
    }
}
