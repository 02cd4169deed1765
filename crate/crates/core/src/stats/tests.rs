use super::*;
use crate::rng;

fn normal_samples(seed: u64, n: usize, mu: f64, sd: f64) -> Vec<f64> {
    let mut r = rng::seeded(seed);
    (0..n).map(|_| mu + sd * rng::normal(&mut r)).collect()
}

#[test]
fn dct_matches_direct_formula() {
    let x: Vec<f64> = (0..16).map(|i| ((i * i) as f64 * 0.13).sin()).collect();
    let got = super::dct1d(&x);
    let n = x.len();
    for k in 0..n {
        let want: f64 = if k == 0 {
            x.iter().sum()
        } else {
            x.iter()
                .enumerate()
                .map(|(j, &v)| {
                    2.0 * v * (std::f64::consts::PI * k as f64 * (2.0 * j as f64 + 1.0) / (2.0 * n as f64)).cos()
                })
                .sum()
        };
        assert!((got[k] - want).abs() < 1e-9, "k={k}: {} vs {want}", got[k]);
    }
}

#[test]
fn kde_on_standard_normal_recovers_shape() {
    let samples = normal_samples(42, 10_000, 0.0, 1.0);
    let kde = kde_isj(&samples, 1024).unwrap();
    assert!(!kde.silverman_fallback, "ISJ should converge on 10k normal samples");

    let integral = kde_integral(&kde);
    assert!((integral - 1.0).abs() <= 1e-3, "integral {integral}");
    assert!(kde.density.iter().all(|&d| d >= 0.0));

    let peak = kde.grid[kde
        .density
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0];
    assert!(peak.abs() < 0.1, "peak at {peak}");

    // sample statistics line up with the generator
    let s = SizeSample { values: samples, unit: "unitless".into() };
    let rep = distribution_stats(&s).unwrap();
    assert!(rep.mean.abs() <= 0.05, "mean {}", rep.mean);
    assert!((rep.stdev - 1.0).abs() <= 0.05, "stdev {}", rep.stdev);
    assert!(rep.mode.abs() <= 0.1, "mode {}", rep.mode);
}

#[test]
fn degenerate_sample_uses_fallback_and_collapses_stats() {
    let s = SizeSample::new(vec![5.0, 5.0, 5.0], "px").unwrap();
    let rep = distribution_stats(&s).unwrap();
    assert_eq!(rep.mean, 5.0);
    assert_eq!(rep.d50, 5.0);
    assert_eq!(rep.mode, 5.0);
    assert_eq!(rep.stdev, 0.0);
    assert_eq!(rep.cv, 0.0);

    let kde = kde_isj(&s.values, 256).unwrap();
    assert!(kde.silverman_fallback);
    // the [min-3h, max+3h] grid clips the 0.27% of mass beyond 3 sigma
    assert!((kde_integral(&kde) - 1.0).abs() < 3e-3);
}

#[test]
fn small_samples_take_the_silverman_path() {
    let kde = kde_isj(&[1.0, 2.0, 3.5, 2.5, 1.5], 256).unwrap();
    assert!(kde.silverman_fallback);
    assert!((kde_integral(&kde) - 1.0).abs() < 2e-3);
}

#[test]
fn isj_undersmooths_bimodal_mixtures_relative_to_silverman() {
    let mut v = normal_samples(7, 4000, -2.0, 0.3);
    v.extend(normal_samples(8, 4000, 2.0, 0.3));
    let isj = isj_bandwidth(&v).expect("isj converges");
    let silver = silverman_bandwidth(&v);
    assert!(isj < silver, "isj {isj} vs silverman {silver}");
}

#[test]
fn cv_reproduces_published_value_within_rounding() {
    // a sample engineered to mean 9.34, population stdev 2.33
    let v = vec![9.34 - 2.33, 9.34 + 2.33];
    let s = SizeSample::new(v, "um").unwrap();
    let rep = distribution_stats(&s).unwrap();
    assert!((rep.mean - 9.34).abs() < 1e-12);
    assert!((rep.stdev - 2.33).abs() < 1e-12);
    assert!((rep.cv - 24.96).abs() < 0.02, "cv {}", rep.cv);
}

#[test]
fn simple_symmetry_cases() {
    let s = SizeSample::new(vec![4.0, 5.0, 6.0, 5.0], "px").unwrap();
    let rep = distribution_stats(&s).unwrap();
    assert_eq!(rep.mean, 5.0);
    assert_eq!(rep.d50, 5.0);
}

#[test]
fn shift_and_scale_equivariance() {
    let base = normal_samples(11, 400, 8.0, 1.2).iter().map(|v| v.abs() + 1.0).collect::<Vec<_>>();
    let s0 = SizeSample::new(base.clone(), "px").unwrap();
    let r0 = distribution_stats(&s0).unwrap();

    let c = 3.0;
    let shifted = SizeSample::new(base.iter().map(|v| v + c).collect(), "px").unwrap();
    let r1 = distribution_stats(&shifted).unwrap();
    assert!((r1.mean - (r0.mean + c)).abs() < 1e-9);
    assert!((r1.d50 - (r0.d50 + c)).abs() < 1e-9);
    assert!((r1.mode - (r0.mode + c)).abs() < 0.15, "mode {} vs {}", r1.mode, r0.mode + c);
    assert!((r1.stdev - r0.stdev).abs() < 1e-9);
    assert!((r1.cv - r0.stdev / r1.mean * 100.0).abs() < 1e-9);

    let k = 2.5;
    let scaled = SizeSample::new(base.iter().map(|v| v * k).collect(), "px").unwrap();
    let r2 = distribution_stats(&scaled).unwrap();
    assert!((r2.mean - r0.mean * k).abs() < 1e-9);
    assert!((r2.d50 - r0.d50 * k).abs() < 1e-9);
    assert!((r2.mode - r0.mode * k).abs() < 0.3);
    assert!((r2.stdev - r0.stdev * k).abs() < 1e-9);
    assert!((r2.cv - r0.cv).abs() < 1e-9);

    // mode stays inside the sample range
    let min = base.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = base.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(r0.mode >= min && r0.mode <= max);
}

#[test]
fn compare_reports_deltas_and_unit_guard() {
    let gt = StatsReport { mean: 9.34, d50: 8.89, mode: 8.60, stdev: 2.33, cv: 24.96, count: 100, unit: "um".into() };
    let sr = StatsReport { mean: 9.19, d50: 8.86, mode: 8.55, stdev: 2.42, cv: 26.32, count: 100, unit: "um".into() };

    let same = compare_reports(&gt, &gt).unwrap();
    assert!(same.fields.iter().all(|&(_, abs, rel)| abs == 0.0 && rel == 0.0));

    let d = compare_reports(&gt, &sr).unwrap();
    let get = |name: &str| d.fields.iter().find(|f| f.0 == name).unwrap();
    assert!((get("mean").1 - 0.15).abs() < 1e-9);
    assert!((get("d50").1 - 0.03).abs() < 1e-9);
    // relative delta equals absolute / reference
    for &(name, abs, rel) in &d.fields {
        let reference = match name {
            "mean" => gt.mean,
            "d50" => gt.d50,
            "mode" => gt.mode,
            "stdev" => gt.stdev,
            "cv" => gt.cv,
            _ => unreachable!(),
        };
        assert!((rel - abs / reference).abs() < 1e-12);
    }

    let px = StatsReport { unit: "px".into(), ..gt.clone() };
    assert!(compare_reports(&gt, &px).is_err());
}

#[test]
fn size_sample_validation() {
    assert!(SizeSample::new(vec![], "px").is_err());
    assert!(SizeSample::new(vec![1.0, -2.0], "px").is_err());
    assert!(SizeSample::new(vec![1.0, 0.0], "px").is_err());
}
