// Temporary calibration probe for detector training; removed before delivery.
use micrograin::nn::networks::{build_network, NetworkKind, NetworkSpec};
use micrograin::srpsa::*;
use micrograin::synth::{generate_pair, SceneSpec};
use std::time::Instant;

fn train_scene(seed: u64) -> SceneSpec {
    SceneSpec { width: 192, height: 192, count: 5, radius_mean: 12.0, radius_stdev: 2.0, min_separation: 2.0, seed }
}

fn test_scene(seed: u64) -> SceneSpec {
    SceneSpec { width: 224, height: 224, count: 5, radius_mean: 12.0, radius_stdev: 2.0, min_separation: 2.2, seed }
}

#[test]
#[ignore]
fn detector_training_probe() {
    let train: Vec<DetectorSample> = (0..120u64)
        .map(|i| { let p = generate_pair(&train_scene(i)).unwrap(); DetectorSample { image: p.sem, annotations: p.annotations } })
        .collect();
    let test: Vec<DetectorSample> = (1000..1100u64)
        .map(|i| { let p = generate_pair(&test_scene(i)).unwrap(); DetectorSample { image: p.sem, annotations: p.annotations } })
        .collect();
    let total_gt: usize = test.iter().map(|s| s.annotations.len()).sum();
    println!("train {} images, test {} images / {} particles", train.len(), test.len(), total_gt);

    for (base, epochs, lr) in [(24usize, 40usize, 1.5e-3f64), (24, 80, 1.5e-3)] {
        let mut spec = NetworkSpec::desk(NetworkKind::SrpsaNet);
        spec.base_width = base;
        let cfg = DetectorTrainConfig { epochs, lr, seed: 7, ..DetectorTrainConfig::default() };
        let mut stack = build_network::<f32>(&spec, 7);
        let t0 = Instant::now();
        let best = train_detector(&train, &spec, &mut stack, &cfg, |_, _| {}).unwrap();
        let train_time = t0.elapsed().as_secs_f64();

        let (mut matched, mut center_only, mut n_dets) = (0usize, 0usize, 0usize);
        for s in &test {
            let dets = detect(&s.image, &spec, &best, 0.5, 5.0);
            n_dets += dets.len();
            for gt in &s.annotations {
                if dets.iter().any(|d| ((d.x - gt.x).powi(2) + (d.y - gt.y).powi(2)).sqrt() < 2.0) { center_only += 1; }
                if dets.iter().any(|d| ((d.x - gt.x).powi(2) + (d.y - gt.y).powi(2)).sqrt() < 2.0 && (d.r - gt.r).abs() / gt.r < 0.15) { matched += 1; }
            }
        }
        println!("base {base} epochs {epochs} lr {lr}: {train_time:.0}s, dets {n_dets}, center {:.1}%, full {:.1}%",
            100.0 * center_only as f64 / total_gt as f64, 100.0 * matched as f64 / total_gt as f64);
    }
}
