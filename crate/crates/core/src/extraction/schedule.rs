use crate::error::{Error, Result};

use super::TrainConfig;

/// Number of warmup steps, kept inside `[1, steps - 1]` so both ramps exist.
pub fn warmup_steps(config: &TrainConfig) -> usize {
    let raw = (config.warmup_fraction * config.steps as f64).round() as usize;
    raw.clamp(1, config.steps.saturating_sub(1).max(1))
}

/// Linear warmup to `peak_lr`, then linear decay to zero at `steps`.
pub fn lr_at(step: usize, config: &TrainConfig) -> Result<f64> {
    let steps = config.steps;
    if step > steps {
        return Err(Error::param(format!("step {step} outside 0..={steps}")));
    }
    if steps < 2 {
        return Ok(0.0);
    }
    let warm = warmup_steps(config);
    let lr = if step <= warm {
        config.peak_lr * (step as f64 / warm as f64)
    } else {
        config.peak_lr * ((steps - step) as f64 / (steps - warm) as f64)
    };
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn thousand_steps() {
        let c = cfg(1000);
        assert_eq!(warmup_steps(&c), 70);
        assert_eq!(lr_at(70, &c).unwrap(), 0.0002);
        assert_eq!(lr_at(1000, &c).unwrap(), 0.0);
        assert_eq!(lr_at(0, &c).unwrap(), 0.0);
        assert!((lr_at(35, &c).unwrap() - 0.0001).abs() < 1e-12);
        assert!(matches!(lr_at(1001, &c), Err(Error::Parameter(_))));
    }

    #[test]
    fn single_peak_and_continuity() {
        for steps in [2, 3, 7, 14, 200, 1334] {
            let c = cfg(steps);
            let lrs: Vec<f64> = (0..=steps).map(|s| lr_at(s, &c).unwrap()).collect();
            let peak = lrs.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(peak, c.peak_lr);
            assert_eq!(lrs.iter().filter(|&&v| v == peak).count(), 1);
            assert_eq!(lrs.iter().position(|&v| v == peak).unwrap(), warmup_steps(&c));
            let max_jump = lrs.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
            assert!(max_jump <= c.peak_lr + 1e-18);
            assert_eq!(lrs[steps], 0.0);
        }
    }

    #[test]
    fn degenerate_step_counts() {
        assert_eq!(lr_at(0, &cfg(1)).unwrap(), 0.0);
        assert_eq!(lr_at(1, &cfg(1)).unwrap(), 0.0);
    }
}
