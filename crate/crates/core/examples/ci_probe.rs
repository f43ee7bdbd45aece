// probe: per-coefficient coverage + estimate spread under noise
use mortpca::synth::TrendCoeffs;
use mortpca::trend::{confidence_intervals, fit_trend, trend_values, FitConfig, TrendModelId};
use mortpca::week::WeekCalendar;
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

fn main() {
    let cal = WeekCalendar::default();
    let start: i64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let end: i64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1039);
    let seed: u64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(103);
    let weeks: Vec<_> = (start..end).map(|w| cal.from_offset(w)).collect();
    let truth = TrendCoeffs::reference();
    let clean = trend_values(&truth.to_model(), &weeks).unwrap();
    let mut rng = StdRng::seed_from_u64(103);
    let noise = Normal::new(0.0, 0.32).unwrap();
    let names = ["intercept", "cosine", "logistic", "spring", "summer", "autumn"];
    let mut hits = [0u32; 6];
    let mut est_sum = [0.0f64; 6];
    let mut est_sq = [0.0f64; 6];
    let mut width_sum = [0.0f64; 6];
    let mut t0s = Vec::new();
    let mut betas = Vec::new();
    const REPS: usize = 40;
    for _ in 0..REPS {
        let noisy: Vec<f64> = clean.iter().map(|v| v + noise.sample(&mut rng)).collect();
        let m = fit_trend(&weeks, &noisy, TrendModelId::M1_3, &FitConfig::default()).unwrap();
        t0s.push(m.t0);
        betas.push(m.beta);
        for ci in confidence_intervals(&m, 0.95).unwrap() {
            let (i, v) = match ci.name {
                "intercept" => (0, truth.intercept),
                "cosine" => (1, truth.cosine_amp),
                "logistic" => (2, truth.logistic_scale),
                "spring" => (3, truth.spring),
                "summer" => (4, truth.summer),
                "autumn" => (5, truth.autumn),
                _ => continue,
            };
            if ci.lower <= v && v <= ci.upper { hits[i] += 1; }
            est_sum[i] += ci.estimate;
            est_sq[i] += ci.estimate * ci.estimate;
            width_sum[i] += ci.upper - ci.lower;
        }
    }
    for i in 0..6 {
        let mean = est_sum[i] / REPS as f64;
        let var = est_sq[i] / REPS as f64 - mean * mean;
        println!(
            "{:<10} hits {:>2}/{} mean est {:>9.4} sd {:>8.4} mean CI width {:>8.4}",
            names[i], hits[i], REPS, mean, var.max(0.0).sqrt(), width_sum[i] / REPS as f64
        );
    }
    let tm = t0s.iter().sum::<f64>() / REPS as f64;
    let bm = betas.iter().sum::<f64>() / REPS as f64;
    println!("t0 mean {tm:.2} (truth 220), spread {:?}", (t0s.iter().cloned().fold(f64::MAX, f64::min), t0s.iter().cloned().fold(f64::MIN, f64::max)));
    println!("beta mean {bm:.2} (truth 482.05), spread {:?}", (betas.iter().cloned().fold(f64::MAX, f64::min), betas.iter().cloned().fold(f64::MIN, f64::max)));
}
