use super::*;
use crate::loss::srpsa_loss_maps;
use crate::tensor::gradcheck;

#[test]
fn empty_annotations_give_zero_maps() {
    let maps = rasterize_targets(&[], 64, 64, 1, 5.0);
    assert_eq!((maps.gw, maps.gh), (16, 16));
    assert!(maps.p.iter().all(|&v| v == 0.0));
    assert!(maps.r.iter().all(|&v| v == 0.0));
    assert!(decode_detections(&maps, 0.5).is_empty());
}

#[test]
fn rasterize_example_encoding() {
    let ann = CircleAnnotation { x: 42.0, y: 42.0, r: 8.0, p: 1.0 };
    let maps = rasterize_targets(&[ann], 64, 64, 1, 5.0);
    let i = 10 * maps.gw + 10;
    assert_eq!(maps.p[i], 1.0);
    assert!((maps.x[i] - 0.5).abs() < 1e-6);
    assert!((maps.y[i] - 0.5).abs() < 1e-6);
    assert!((maps.r[i] - 0.4).abs() < 1e-6);
}

#[test]
fn decode_inverts_the_example() {
    let mut maps = DetectionMaps::zeros(16, 16, 1, 5.0);
    let i = 10 * 16 + 10;
    maps.p[i] = 1.0;
    maps.x[i] = 0.5;
    maps.y[i] = 0.5;
    maps.r[i] = 0.4;
    let dets = decode_detections(&maps, 0.5);
    assert_eq!(dets.len(), 1);
    let d = dets[0];
    assert!((d.x - 42.0).abs() < 1e-5);
    assert!((d.y - 42.0).abs() < 1e-5);
    assert!((d.r - 8.0).abs() < 1e-5);
}

#[test]
fn round_trip_recovers_sparse_annotations() {
    let mut r = crate::rng::seeded(7);
    use rand::Rng as _;
    for _case in 0..50 {
        // distinct cells so nothing collides
        let mut cells: Vec<(usize, usize)> = Vec::new();
        let mut anns = Vec::new();
        while anns.len() < 8 {
            let cx = r.gen_range(0..16usize);
            let cy = r.gen_range(0..16usize);
            if cells.iter().any(|&(a, b)| {
                (a as i64 - cx as i64).abs() <= 1 && (b as i64 - cy as i64).abs() <= 1
            }) {
                continue;
            }
            cells.push((cx, cy));
            anns.push(CircleAnnotation {
                x: (cx as f64 + r.gen_range(0.0..1.0)) * 4.0,
                y: (cy as f64 + r.gen_range(0.0..1.0)) * 4.0,
                r: r.gen_range(2.0..19.0),
                p: 1.0,
            });
        }
        let maps = rasterize_targets(&anns, 64, 64, 1, 5.0);
        let mut dets = decode_detections(&maps, 0.5);
        assert_eq!(dets.len(), anns.len());
        dets.sort_by(|a, b| (a.y, a.x).partial_cmp(&(b.y, b.x)).unwrap());
        let mut sorted = anns.clone();
        sorted.sort_by(|a, b| (a.y, a.x).partial_cmp(&(b.y, b.x)).unwrap());
        for (d, a) in dets.iter().zip(&sorted) {
            assert!((d.x - a.x).abs() < 0.5, "x {} vs {}", d.x, a.x);
            assert!((d.y - a.y).abs() < 0.5);
            assert!((d.r - a.r).abs() < 1e-3, "r {} vs {}", d.r, a.r);
        }
    }
}

#[test]
fn nms_keeps_the_stronger_adjacent_cell() {
    let mut maps = DetectionMaps::zeros(8, 8, 1, 5.0);
    maps.p[3 * 8 + 3] = 0.9;
    maps.p[3 * 8 + 4] = 0.8;
    let dets = decode_detections(&maps, 0.5);
    assert_eq!(dets.len(), 1);
    assert!((dets[0].p - 0.9).abs() < 1e-6);
}

#[test]
fn decode_count_is_monotone_in_threshold() {
    let mut r = crate::rng::seeded(9);
    use rand::Rng as _;
    for _ in 0..50 {
        let mut maps = DetectionMaps::zeros(12, 12, 4, 5.0);
        for v in maps.p.iter_mut() {
            *v = r.gen_range(0.0f32..1.0);
        }
        let mut prev = usize::MAX;
        for t in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let n = decode_detections(&maps, t).len();
            assert!(n <= prev);
            prev = n;
        }
    }
}

#[test]
fn merge_identities_and_duplicates() {
    let a = CircleAnnotation { x: 40.0, y: 40.0, r: 8.0, p: 0.9 };
    let b = CircleAnnotation { x: 41.0, y: 40.0, r: 8.0, p: 0.7 }; // 1 px apart
    let far = CircleAnnotation { x: 90.0, y: 90.0, r: 8.0, p: 0.8 };

    assert_eq!(multiscale_merge(&[], &[a, far]).len(), 2);
    assert_eq!(multiscale_merge(&[a, far], &[]).len(), 2);

    let merged = multiscale_merge(&[a], &[b]);
    assert_eq!(merged.len(), 1);
    assert!((merged[0].p - 0.9).abs() < 1e-12);

    let merged = multiscale_merge(&[a], &[far]);
    assert_eq!(merged.len(), 2);

    // idempotence
    let once = multiscale_merge(&[a, far], &[b]);
    let twice = multiscale_merge(&once, &[]);
    assert_eq!(once, twice);
}

#[test]
fn annotation_csv_round_trip_and_errors() {
    let anns = vec![
        CircleAnnotation { x: 1.5, y: 2.25, r: 3.0, p: 1.0 },
        CircleAnnotation { x: 10.0, y: 20.0, r: 4.5, p: 0.875 },
    ];
    let dir = std::env::temp_dir().join("mgrn_srpsa_test");
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join("a.csv");
    write_annotations_csv(&p, &anns).unwrap();
    let back = read_annotations_csv(&p).unwrap();
    assert_eq!(back, anns);

    assert!(parse_annotations_csv("x,y,r\n1,2,3\n").is_err());
    assert!(parse_annotations_csv("x,y,r,p\n1,2,three,1\n").is_err());
}

#[test]
fn graph_loss_matches_map_loss_and_ignores_off_mask_noise() {
    let mut r = crate::rng::seeded(15);
    use rand::Rng as _;
    let (gh, gw) = (6usize, 6usize);
    let n = gh * gw;

    let mut truth = DetectionMaps::zeros(gh, gw, 4, 5.0);
    for i in [7usize, 20, 29] {
        truth.p[i] = 1.0;
        truth.x[i] = r.gen_range(0.0f32..1.0);
        truth.y[i] = r.gen_range(0.0f32..1.0);
        truth.r[i] = r.gen_range(0.1f32..0.9);
    }

    let raw: Vec<f64> = (0..4 * n).map(|_| r.gen_range(-2.0..2.0)).collect();

    for literal in [false, true] {
        let mut g = crate::tensor::Graph::<f64>::new();
        let raw_t = g.leaf(raw.clone(), vec![4, gh, gw], false);
        let loss_t = srpsa_loss_graph(&mut g, raw_t, &truth, 5.0, literal);
        let graph_loss = g.value(loss_t);

        let mut pred = DetectionMaps::zeros(gh, gw, 4, 5.0);
        for i in 0..n {
            pred.p[i] = (1.0 / (1.0 + (-raw[i]).exp())) as f32;
            pred.x[i] = raw[n + i] as f32;
            pred.y[i] = raw[2 * n + i] as f32;
            pred.r[i] = raw[3 * n + i] as f32;
        }
        let map_loss = srpsa_loss_maps(&pred, &truth, 5.0, literal);
        assert!((graph_loss - map_loss).abs() < 1e-6, "graph {graph_loss} vs maps {map_loss}");

        // identity case
        assert!(srpsa_loss_maps(&truth, &truth, 5.0, literal) < 1e-12);

        // corrupt regression channels outside the mask: loss unchanged
        let mut noisy = pred.clone();
        for i in 0..n {
            if truth.p[i] < 0.5 {
                noisy.x[i] += 10.0;
                noisy.y[i] -= 3.0;
                noisy.r[i] += 7.0;
            }
        }
        let noisy_loss = srpsa_loss_maps(&noisy, &truth, 5.0, literal);
        assert_eq!(noisy_loss, map_loss);
    }
}

#[test]
fn srpsa_loss_gradients_match_finite_differences() {
    let mut r = crate::rng::seeded(16);
    use rand::Rng as _;
    let (gh, gw) = (4usize, 4usize);
    let n = gh * gw;
    let mut truth = DetectionMaps::zeros(gh, gw, 4, 5.0);
    truth.p[5] = 1.0;
    truth.x[5] = 0.25;
    truth.y[5] = 0.75;
    truth.r[5] = 0.4;
    let raw: Vec<f64> = (0..4 * n).map(|_| r.gen_range(-1.5..1.5)).collect();
    for literal in [false, true] {
        let truth_c = truth.clone();
        let worst = gradcheck::check(&[vec![4, gh, gw]], &[raw.clone()], 1e-5, move |g, ids| {
            srpsa_loss_graph(g, ids[0], &truth_c, 5.0, literal)
        });
        assert!(worst < 1e-5, "srpsa loss worst rel err {worst} (literal={literal})");
    }
}

#[test]
fn empty_mask_loss_is_confidence_only() {
    let truth = DetectionMaps::zeros(4, 4, 4, 5.0);
    let mut pred = DetectionMaps::zeros(4, 4, 4, 5.0);
    for (i, v) in pred.x.iter_mut().enumerate() {
        *v = i as f32; // junk regression values must not contribute
    }
    pred.p.iter_mut().for_each(|v| *v = 0.5);
    let loss = srpsa_loss_maps(&pred, &truth, 5.0, false);
    // p term only: 5 * 0.25 mean over grid, divided by 4
    assert!((loss - 5.0 * 0.25 / 4.0).abs() < 1e-9);
}
