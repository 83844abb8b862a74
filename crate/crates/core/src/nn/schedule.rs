use super::WarmupRule;

/// Linear warmup from zero to `max_lr`, then cosine decay to `floor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LRSchedule {
    pub max_lr: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub floor: f64,
}

impl LRSchedule {
    pub fn new(max_lr: f64, total_steps: usize, warmup: WarmupRule, floor_fraction: f64) -> Self {
        Self {
            max_lr,
            total_steps,
            warmup_steps: warmup.steps(total_steps).min(total_steps),
            floor: floor_fraction * max_lr,
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let step = step.min(self.total_steps);
        if step < self.warmup_steps {
            return self.max_lr * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps - self.warmup_steps;
        if span == 0 {
            return self.max_lr;
        }
        let progress = (step - self.warmup_steps) as f64 / span as f64;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.floor + (self.max_lr - self.floor) * cosine
    }
}
