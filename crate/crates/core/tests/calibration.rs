//! Offline calibration of the NPSS detection threshold. Ignored by default;
//! run with `cargo test --release -p nbiot --test calibration -- --ignored --nocapture`.

use nbiot::channel::add_noise;
use nbiot::receiver::{AccumulatorState, SEGMENT_INPUT_SAMPLES, SEGMENT_SAMPLES};
use nbiot::Complex64;

fn noise_ratios(segments: usize, trials: usize, seed: u64) -> Vec<f64> {
    (0..trials)
        .map(|t| {
            let len = (segments - 1) * SEGMENT_SAMPLES + SEGMENT_INPUT_SAMPLES;
            let mut x = vec![Complex64::new(0.0, 0.0); len];
            add_noise(&mut x, 1.0, seed ^ ((segments as u64) << 32) ^ t as u64);
            let mut st = AccumulatorState::new(nbiot::receiver::DEFAULT_FORGETTING).unwrap();
            for s in 0..segments {
                st.accumulate(&x[s * SEGMENT_SAMPLES..s * SEGMENT_SAMPLES + SEGMENT_INPUT_SAMPLES])
                    .unwrap();
            }
            let (_, _, peak, mean) = st.peak();
            peak / mean
        })
        .collect()
}

#[test]
#[ignore]
fn calibrate_npss_threshold() {
    let scale: usize = std::env::var("CAL_TRIALS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1000);
    for k in [1usize, 2, 4, 8, 16, 32, 64] {
        let trials = if k <= 8 { 2 * scale } else { scale };
        let start = std::time::Instant::now();
        let mut r = noise_ratios(k, trials, 0xCA11);
        r.sort_by(|a, b| a.total_cmp(b));
        let q = |p: f64| r[((p * r.len() as f64) as usize).min(r.len() - 1)];
        println!(
            "k={k:3} trials={trials} q50={:.3} q90={:.3} q99={:.3} q995={:.3} max={:.3} ({:.1}s)",
            q(0.5),
            q(0.9),
            q(0.99),
            q(0.995),
            r[r.len() - 1],
            start.elapsed().as_secs_f64()
        );
    }
}
