use hedgelab::market_data::{lagged_returns, raw_kurtosis};
use hedgelab::stoch::{gbm_paths, heston_paths_with_variance, GbmParams, HestonParams};

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn gbm_terminal_mean_and_step_variance() {
    let params = GbmParams { mu: 0.1, ..GbmParams::default() };
    let batch = gbm_paths(&params, 40_000, 3).unwrap();
    assert_eq!(batch.rejected, 0);
    let terminal: Vec<f64> = batch.paths.iter().map(|p| p.terminal()).collect();
    let (mean, se) = mean_and_se(&terminal);
    let expected = (1.0 + params.mu * params.dt).powi(params.n_steps as i32);
    assert!((mean - expected).abs() < 3.0 * se, "E[S_T] {mean} vs {expected} (se {se})");

    let simple: Vec<f64> = batch
        .paths
        .iter()
        .flat_map(|p| p.prices().windows(2).map(|w| w[1] / w[0] - 1.0).collect::<Vec<_>>())
        .collect();
    let (m, _) = mean_and_se(&simple);
    let var = simple.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / simple.len() as f64;
    let target = params.sigma * params.sigma * params.dt;
    assert!((var / target - 1.0).abs() < 0.02, "step variance {var} vs {target}");
}

#[test]
fn heston_moments_match_closed_forms() {
    let params = HestonParams::default();
    let batch = heston_paths_with_variance(&params, 20_000, 11).unwrap();
    let vt: Vec<f64> = batch.variances.iter().map(|v| *v.last().unwrap()).collect();
    let (mv, sev) = mean_and_se(&vt);
    let ev = params.expected_terminal_variance();
    assert!((mv - ev).abs() < 3.0 * sev, "E[V_T] {mv} vs {ev} (se {sev})");
    let st: Vec<f64> = batch.paths.iter().map(|p| p.terminal()).collect();
    let (ms, ses) = mean_and_se(&st);
    assert!((ms - 1.0).abs() < 3.0 * ses, "E[S_T] {ms} (se {ses})");
    assert!(batch.variances.iter().flatten().all(|v| *v >= 0.0));
}

#[test]
fn heston_daily_returns_are_close_to_gaussian() {
    let batch = heston_paths_with_variance(&HestonParams::default(), 20_000, 5).unwrap();
    let prices: Vec<&[f64]> = batch.paths.iter().map(|p| p.prices()).collect();
    let k = raw_kurtosis(&lagged_returns(&prices, 1)).unwrap();
    assert!((2.5..=4.5).contains(&k), "lag-1 kurtosis {k}");
}

#[test]
fn heston_without_vol_of_vol_behaves_like_gbm() {
    let params = HestonParams { vol_of_vol: 0.0, ..HestonParams::default() };
    let batch = heston_paths_with_variance(&params, 20_000, 8).unwrap();
    assert!(batch.variances.iter().flatten().all(|v| (v - 0.04).abs() < 1e-15));
    let prices: Vec<&[f64]> = batch.paths.iter().map(|p| p.prices()).collect();
    let r = lagged_returns(&prices, 1);
    let (m, _) = mean_and_se(&r);
    let var = r.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / r.len() as f64;
    let target = 0.04 * params.dt;
    assert!((var / target - 1.0).abs() < 0.02, "log-return variance {var} vs {target}");
    let k = raw_kurtosis(&r).unwrap();
    assert!((k - 3.0).abs() < 0.1, "kurtosis {k}");
}

#[test]
fn batches_do_not_depend_on_batch_size() {
    let params = HestonParams::default();
    let small = heston_paths_with_variance(&params, 10, 21).unwrap();
    let large = heston_paths_with_variance(&params, 50, 21).unwrap();
    assert_eq!(small.paths[..], large.paths[..10]);
    let g = GbmParams::default();
    assert_eq!(gbm_paths(&g, 5, 2).unwrap().paths[..], gbm_paths(&g, 9, 2).unwrap().paths[..5]);
}
