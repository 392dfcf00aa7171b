use crate::error::{Error, Result};

pub fn warmup_steps(total_steps: usize, warmup_fraction: f64) -> usize {
    (warmup_fraction * total_steps as f64).ceil() as usize
}

/// Linear warmup from 0 to `peak_lr` over `ceil(warmup_fraction * total)`
/// steps, then linear decay to 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, peak_lr: f64, warmup_fraction: f64) -> Result<f64> {
    if step > total_steps {
        return Err(Error::StepOutOfRange {
            step: step as u64,
            total: total_steps as u64,
        });
    }
    if !(warmup_fraction > 0.0 && warmup_fraction < 1.0) {
        return Err(Error::Config(format!(
            "warmup_fraction {warmup_fraction} not in (0, 1)"
        )));
    }
    let w = warmup_steps(total_steps, warmup_fraction);
    if step <= w {
        if w == 0 {
            return Ok(0.0);
        }
        return Ok(peak_lr * step as f64 / w as f64);
    }
    Ok(peak_lr * (total_steps - step) as f64 / (total_steps - w) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        for total in [10, 37, 100, 1001] {
            let w = warmup_steps(total, 0.1);
            assert_eq!(lr_at(w, total, 3e-4, 0.1).unwrap(), 3e-4);
            assert_eq!(lr_at(total, total, 3e-4, 0.1).unwrap(), 0.0);
            assert_eq!(lr_at(0, total, 3e-4, 0.1).unwrap(), 0.0);
        }
    }

    #[test]
    fn closed_form_midpoint() {
        let lr = lr_at(55, 100, 1e-3, 0.1).unwrap();
        assert!((lr - 1e-3 * 45.0 / 90.0).abs() < 1e-18);
        assert!((lr - 5.0e-4).abs() < 1e-15);
    }

    #[test]
    fn out_of_range() {
        assert!(lr_at(101, 100, 1e-3, 0.1).is_err());
        assert!(lr_at(1, 100, 1e-3, 0.0).is_err());
        assert!(lr_at(1, 100, 1e-3, 1.0).is_err());
    }

    #[test]
    fn single_peak_and_continuous() {
        let total = 250;
        let lrs: Vec<f64> = (0..=total).map(|s| lr_at(s, total, 1.0, 0.1).unwrap()).collect();
        let peak = lrs.iter().cloned().fold(0.0, f64::max);
        assert_eq!(lrs.iter().filter(|&&v| v == peak).count(), 1);
        for w in lrs.windows(2) {
            assert!((w[1] - w[0]).abs() <= 1.0 / 25.0 + 1e-12);
        }
    }
}
