use std::time::Instant;

use gridsde::drift::{fit_sde, DriftData, EstimatorConfig, ReducedLoss};
use gridsde::kernels::{gram_symmetric, KernelSpec};
use gridsde::sde::{differences, euler_maruyama, ornstein_uhlenbeck, uniform_grid, Increments};
use nalgebra::DMatrix;

fn ou_data(seed: u64) -> DriftData {
    let sys = ornstein_uhlenbeck(1.0, 0.5);
    let grid = uniform_grid(0.0, 0.01, 251);
    let parts: Vec<Increments> = [-10.0, -5.0, 5.0, 10.0]
        .iter()
        .enumerate()
        .map(|(i, x0)| {
            let traj = euler_maruyama(&sys, &[*x0], &grid, seed * 16 + i as u64).unwrap();
            differences(&traj).unwrap()
        })
        .collect();
    DriftData::from_increments(&Increments::concat(&parts).unwrap(), 0).unwrap()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[test]
fn ou_drift_and_diffusion_recovered() {
    let config = EstimatorConfig {
        kernel_f: KernelSpec::rbf(0.7).unwrap(),
        kernel_sigma: KernelSpec::rbf(0.5).unwrap(),
        ..EstimatorConfig::default()
    };
    for seed in [1u64, 2, 3] {
        let start = Instant::now();
        let data = ou_data(seed);
        let fit = fit_sde(&data, &config).unwrap();
        let mut xs: Vec<f64> = data.x.iter().copied().collect();
        xs.sort_by(f64::total_cmp);
        let (lo, hi) = (quantile(&xs, 0.1), quantile(&xs, 0.9));
        let grid: Vec<f64> = (0..200)
            .map(|i| lo + (hi - lo) * i as f64 / 199.0)
            .collect();
        let pts = DMatrix::from_column_slice(200, 1, &grid);
        let f = fit.predict_f(&pts).unwrap();
        let s = fit.predict_sigma(&pts).unwrap();
        let num: f64 = f.iter().zip(&grid).map(|(a, x)| (a + x).powi(2)).sum();
        let den: f64 = grid.iter().map(|x| x * x).sum();
        let f_err = (num / den).sqrt();
        let s_err = s.iter().map(|v| (v - 0.5).abs()).sum::<f64>() / 200.0 / 0.5;
        let mut sm = fit.sigma_min.clone();
        sm.sort_by(f64::total_cmp);
        println!(
            "seed {seed}: f_err {f_err:.3} s_err {s_err:.3} median sigma_min {:.3} iters {} {:?}",
            quantile(&sm, 0.5),
            fit.iterations,
            start.elapsed()
        );
        assert!(f_err <= 0.2);
        assert!(s_err <= 0.25);
        assert!(fit.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn gradient_matches_finite_differences_on_ou_sample() {
    let data = ou_data(7);
    let n = 120;
    let x = data.x.rows(0, n).into_owned();
    let xs = x.map(|v| v / 10.0);
    let y: Vec<f64> = data.y[..n].iter().map(|v| v / 10.0).collect();
    let k = gram_symmetric(&KernelSpec::rbf(0.7).unwrap(), &xs).unwrap();
    let g = gram_symmetric(&KernelSpec::rbf(0.5).unwrap(), &xs).unwrap();
    let loss = ReducedLoss::new(&k, &g, &data.dt[..n], &y, 1e-6, 1e-4).unwrap();
    let s: Vec<f64> = (0..n).map(|i| 0.04 + 0.0003 * i as f64).collect();
    let (_, grad) = loss.value_and_gradient(&s).unwrap();
    let fd = loss.fd_gradient(&s, 1e-6).unwrap();
    let scale = fd.amax();
    for (a, b) in grad.iter().zip(fd.iter()) {
        assert!((a - b).abs() <= 1e-4 * scale.max(b.abs()), "{a} vs {b}");
    }
}
