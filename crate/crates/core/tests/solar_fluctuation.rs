use gridsde::sde::uniform_grid;
use gridsde::solar::{simulate_fluctuation, SolarMode, SolarScenario};

fn cloudy() -> SolarScenario {
    SolarScenario {
        mode: SolarMode::Cloudy,
        ..SolarScenario::default()
    }
}

#[test]
fn stationary_spread_and_mean_reversion() {
    let grid = uniform_grid(0.0, 0.01, 10_001);
    let burn = 1000;
    let mut stds = Vec::new();
    let mut finals = Vec::new();
    for seed in 0..100u64 {
        let dp = simulate_fluctuation(&cloudy(), &grid, seed).unwrap();
        let tail = &dp[burn..];
        let m = tail.iter().sum::<f64>() / tail.len() as f64;
        let var = tail.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (tail.len() - 1) as f64;
        stds.push(var.sqrt());
        finals.push(*dp.last().unwrap());
    }
    let mean_std = stds.iter().sum::<f64>() / stds.len() as f64;
    println!("mean stationary std {mean_std:.5}");
    assert!((0.02..=0.05).contains(&mean_std));

    let n = finals.len() as f64;
    let m = finals.iter().sum::<f64>() / n;
    let s = (finals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(m.abs() <= 3.0 * s / n.sqrt(), "mean {m} std {s}");
}
