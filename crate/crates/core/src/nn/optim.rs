use super::param::{Param, ParamKind};
use super::Layer;

/// Step decay: `initial * gamma^(epoch / step)` for zero-based `epoch`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub initial: f64,
    pub step_epochs: usize,
    pub gamma: f64,
}

impl Default for StepSchedule {
    /// 0.01, divided by ten every four epochs.
    fn default() -> Self {
        StepSchedule {
            initial: 0.01,
            step_epochs: 4,
            gamma: 0.1,
        }
    }
}

impl StepSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        self.initial * self.gamma.powi((epoch / self.step_epochs.max(1)) as i32)
    }
}

/// SGD with momentum and decoupled-from-bias weight decay (PyTorch form).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
}

impl Default for Sgd {
    fn default() -> Self {
        Sgd {
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

impl Sgd {
    pub fn step(&self, model: &mut dyn Layer, lr: f32) {
        model.visit_params(&mut |p: &mut Param| {
            if !p.is_trainable() {
                return;
            }
            let wd = if p.kind == ParamKind::Weight { self.weight_decay } else { 0.0 };
            for i in 0..p.value.len() {
                let g = p.grad[i] + wd * p.value[i];
                p.velocity[i] = self.momentum * p.velocity[i] + g;
                p.value[i] -= lr * p.velocity[i];
            }
        });
    }

    pub fn zero_grad(model: &mut dyn Layer) {
        model.visit_params(&mut |p: &mut Param| p.zero_grad());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_trace() {
        let s = StepSchedule::default();
        let lrs: Vec<f64> = (0..10).map(|e| s.lr(e)).collect();
        for (e, lr) in lrs.iter().enumerate() {
            let want = match e {
                0..=3 => 0.01,
                4..=7 => 0.001,
                _ => 0.0001,
            };
            assert!((lr - want).abs() < 1e-15, "epoch {}: {lr}", e + 1);
        }
    }
}
