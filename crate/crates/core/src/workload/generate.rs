use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::{ArrivalTrace, WorkloadError};

/// Homogeneous Poisson arrivals on `[t0, t1)` at `qpm` queries per minute.
fn poisson_segment<R: Rng>(rng: &mut R, t0: f64, t1: f64, qpm: f64, out: &mut Vec<f64>) {
    if qpm <= 0.0 || t1 <= t0 {
        return;
    }
    let gap = Exp::new(qpm / 60.0).expect("positive rate");
    let mut t = t0;
    loop {
        t += gap.sample(rng);
        if t >= t1 {
            break;
        }
        out.push(t);
    }
}

/// Concatenated constant-rate segments given as `(duration_min, qpm)`.
pub fn gen_piecewise(segments: &[(f64, f64)], seed: u64) -> Result<ArrivalTrace, WorkloadError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arrivals = Vec::new();
    let mut t = 0.0;
    for &(minutes, qpm) in segments {
        if !(minutes >= 0.0) || !(qpm >= 0.0) {
            return Err(WorkloadError::InvalidParameters(format!(
                "segment ({minutes} min, {qpm} qpm) must be non-negative"
            )));
        }
        let end = t + minutes * 60.0;
        poisson_segment(&mut rng, t, end, qpm, &mut arrivals);
        t = end;
    }
    Ok(ArrivalTrace::new("piecewise", arrivals, t))
}

pub fn gen_poisson(qpm: f64, duration_min: f64, seed: u64) -> Result<ArrivalTrace, WorkloadError> {
    let mut trace = gen_piecewise(&[(duration_min, qpm)], seed)?;
    trace.name = format!("poisson-{qpm}qpm");
    Ok(trace)
}

/// Inhomogeneous Poisson arrivals whose rate rises linearly from `start_qpm`
/// to `end_qpm`; the rate is held constant within each minute at its
/// mid-minute value, so the expected count is `duration * (start + end) / 2`.
pub fn gen_ramp(start_qpm: f64, end_qpm: f64, duration_min: u32, seed: u64) -> Result<ArrivalTrace, WorkloadError> {
    if !(start_qpm > 0.0) || !(end_qpm >= start_qpm) {
        return Err(WorkloadError::InvalidParameters(format!(
            "ramp needs 0 < start ({start_qpm}) <= end ({end_qpm})"
        )));
    }
    let d = f64::from(duration_min);
    let segments: Vec<(f64, f64)> = (0..duration_min)
        .map(|m| (1.0, start_qpm + (end_qpm - start_qpm) * (f64::from(m) + 0.5) / d))
        .collect();
    let mut trace = gen_piecewise(&segments, seed)?;
    trace.name = format!("ramp-{start_qpm}-{end_qpm}");
    Ok(trace)
}

/// Alternating low/high Poisson segments. Each period starts with its low
/// phase and spends `duty * period_min` minutes at `high_qpm`.
pub fn gen_bursty(
    low_qpm: f64,
    high_qpm: f64,
    period_min: f64,
    duty: f64,
    duration_min: f64,
    seed: u64,
) -> Result<ArrivalTrace, WorkloadError> {
    if !(duty > 0.0 && duty < 1.0) {
        return Err(WorkloadError::InvalidParameters(format!("duty {duty} must lie in (0, 1)")));
    }
    if !(period_min > 0.0) || !(duration_min >= 0.0) {
        return Err(WorkloadError::InvalidParameters(format!(
            "period {period_min} must be positive and duration {duration_min} non-negative"
        )));
    }
    let segments = bursty_segments(low_qpm, high_qpm, period_min, duty, duration_min);
    let mut trace = gen_piecewise(&segments, seed)?;
    trace.name = format!("bursty-{low_qpm}-{high_qpm}");
    Ok(trace)
}

fn bursty_segments(low: f64, high: f64, period: f64, duty: f64, duration: f64) -> Vec<(f64, f64)> {
    let low_len = period * (1.0 - duty);
    let high_len = period * duty;
    let mut segments = Vec::new();
    let mut t = 0.0;
    while t < duration {
        for (len, qpm) in [(low_len, low), (high_len, high)] {
            let len = len.min(duration - t);
            if len > 0.0 {
                segments.push((len, qpm));
                t += len;
            }
        }
    }
    segments
}

#[cfg(test)]
mod tests {
    use super::*;

    fn within_3_sigma(count: usize, mean: f64) -> bool {
        (count as f64 - mean).abs() <= 3.0 * mean.sqrt()
    }

    #[test]
    fn ramp_count_matches_poisson_expectation() {
        let t = gen_ramp(50.0, 600.0, 800, 1).unwrap();
        assert!(within_3_sigma(t.len(), 800.0 * 325.0), "{}", t.len());
        assert_eq!(t.duration_s, 800.0 * 60.0);
    }

    #[test]
    fn ramp_slope_matches() {
        let t = gen_ramp(50.0, 600.0, 800, 3).unwrap();
        let counts = t.per_minute_counts();
        let n = counts.len() as f64;
        let mx = (n - 1.0) / 2.0;
        let my = counts.iter().sum::<usize>() as f64 / n;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (i, c) in counts.iter().enumerate() {
            sxy += (i as f64 - mx) * (*c as f64 - my);
            sxx += (i as f64 - mx).powi(2);
        }
        let slope = sxy / sxx;
        let expected = 550.0 / 800.0;
        assert!((slope - expected).abs() / expected < 0.1, "slope {slope}");
    }

    #[test]
    fn homogeneous_ramp_and_empty_ramp() {
        let mut total = 0;
        for seed in 0..200 {
            total += gen_ramp(60.0, 60.0, 1, seed).unwrap().len();
        }
        let mean = total as f64 / 200.0;
        // 3 sigma of the mean of 200 Poisson(60) draws
        assert!((mean - 60.0).abs() < 3.0 * (60.0f64 / 200.0).sqrt(), "{mean}");
        assert!(gen_ramp(50.0, 600.0, 0, 1).unwrap().is_empty());
        assert!(gen_ramp(0.0, 10.0, 5, 1).is_err());
        assert!(gen_ramp(20.0, 10.0, 5, 1).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(gen_ramp(50.0, 100.0, 20, 9).unwrap(), gen_ramp(50.0, 100.0, 20, 9).unwrap());
        assert_ne!(gen_ramp(50.0, 100.0, 20, 9).unwrap(), gen_ramp(50.0, 100.0, 20, 10).unwrap());
        let a = gen_bursty(60.0, 300.0, 20.0, 0.5, 40.0, 4).unwrap();
        assert_eq!(a, gen_bursty(60.0, 300.0, 20.0, 0.5, 40.0, 4).unwrap());
    }

    #[test]
    fn bursty_segments_and_counts() {
        let segs = bursty_segments(60.0, 300.0, 20.0, 0.5, 40.0);
        assert_eq!(segs, vec![(10.0, 60.0), (10.0, 300.0), (10.0, 60.0), (10.0, 300.0)]);
        let t = gen_bursty(60.0, 300.0, 20.0, 0.5, 40.0, 2).unwrap();
        let counts = t.per_minute_counts();
        let high: usize = counts[10..20].iter().chain(&counts[30..40]).sum();
        let low: usize = counts[0..10].iter().chain(&counts[20..30]).sum();
        assert!(within_3_sigma(high, 20.0 * 300.0), "{high}");
        assert!(within_3_sigma(low, 20.0 * 60.0), "{low}");
    }

    #[test]
    fn bursty_partial_cycle() {
        // 15 minutes of a 20-minute period: full low phase, half the high phase.
        assert_eq!(bursty_segments(60.0, 300.0, 20.0, 0.5, 15.0), vec![(10.0, 60.0), (5.0, 300.0)]);
        assert_eq!(bursty_segments(60.0, 300.0, 20.0, 0.5, 6.0), vec![(6.0, 60.0)]);
        assert!(gen_bursty(60.0, 300.0, 20.0, 1.0, 15.0, 1).is_err());
    }

    #[test]
    fn bursty_with_equal_rates_is_homogeneous() {
        let t = gen_bursty(120.0, 120.0, 10.0, 0.99, 60.0, 5).unwrap();
        assert!(within_3_sigma(t.len(), 60.0 * 120.0));
    }
}
