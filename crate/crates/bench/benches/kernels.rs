use std::f64::consts::PI;

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use nalgebra::Matrix3;

use radioslam::ranging::{bisect_peak, matched_filter_profile};
use radioslam::scene::circle_trajectory;
use radioslam::slam::{coarse_match_points, CoarseSearch, Edge, EdgeKind, OptimizeOptions, PoseGraph, Submap};
use radioslam::waveform::OfdmConfig;
use radioslam::{Complex64, Pose2};

fn delayed_channel(cfg: &OfdmConfig, delay_samples: f64) -> Vec<Complex64> {
    let n = cfg.n_subcarriers;
    (0..n)
        .map(|p| Complex64::from_polar(1.0, -2.0 * PI * p as f64 * delay_samples / n as f64))
        .collect()
}

fn bench_bisect(c: &mut Criterion) {
    let cfg = OfdmConfig::analysis();
    let h = delayed_channel(&cfg, 37.3);
    c.bench_function("bisect_peak_k1_20it", |b| {
        b.iter(|| bisect_peak(black_box(&h), 1, 20, &cfg).unwrap())
    });
}

fn bench_matched_filter(c: &mut Criterion) {
    let n = 1024;
    let symbol = |q: usize| -> Vec<Complex64> {
        (0..n)
            .map(|k| Complex64::from_polar(1.0, ((k * 7919 + q * 104729) % 360) as f64 * PI / 180.0))
            .collect()
    };
    let tx: Vec<_> = (0..12).map(symbol).collect();
    let rx: Vec<_> = tx
        .iter()
        .map(|s| {
            let mut r = s.clone();
            r.rotate_right(5);
            r
        })
        .collect();
    c.bench_function("matched_filter_12_symbols", |b| {
        b.iter(|| matched_filter_profile(black_box(&rx), black_box(&tx), true, 122.88e6).unwrap())
    });
}

fn room_points(step: f64) -> Vec<[f64; 2]> {
    let corners = [[-4.0, -3.0], [5.0, -3.0], [5.0, 3.5], [-4.0, 3.5], [-4.0, -3.0]];
    let mut pts = Vec::new();
    for w in corners.windows(2) {
        let (a, b): ([f64; 2], [f64; 2]) = (w[0], w[1]);
        let n = ((b[0] - a[0]).hypot(b[1] - a[1]) / step).ceil() as usize;
        for k in 0..n {
            let f = k as f64 / n as f64;
            pts.push([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]);
        }
    }
    pts
}

fn bench_coarse_match(c: &mut Criterion) {
    let reference = room_points(0.1);
    let shift = Pose2::new(0.4, -0.2, 4f64.to_radians());
    let scan: Vec<_> = reference.iter().map(|&p| shift.inverse_transform_point(p)).collect();
    let submap = Submap::from_points(0, 0, 0.25, reference);
    let search = CoarseSearch::default();
    c.bench_function("coarse_match_room", |b| {
        b.iter(|| coarse_match_points(black_box(&scan), &submap, &Pose2::identity(), &search).unwrap())
    });
}

fn circle_graph() -> PoseGraph {
    let truth = circle_trajectory([0.0, 0.0], 5.0, 60);
    let info = Matrix3::from_diagonal(&nalgebra::Vector3::new(100.0, 100.0, 3000.0));
    let mut g = PoseGraph::new();
    let mut pose = truth[0];
    g.add_node(pose);
    for t in 1..truth.len() {
        let z = truth[t - 1].between(&truth[t]);
        // a small systematic bias on each step
        let noisy = Pose2::new(z.x * 1.01, z.y + 0.01, z.heading + 0.002);
        pose = pose.compose(&noisy);
        g.add_node(pose);
        g.add_edge(Edge {
            from: t - 1,
            to: t,
            measurement: noisy,
            information: info,
            kind: EdgeKind::Odometry,
        })
        .unwrap();
    }
    let last = truth.len() - 1;
    g.add_edge(Edge {
        from: 0,
        to: last,
        measurement: truth[0].between(&truth[last]),
        information: info,
        kind: EdgeKind::Loop,
    })
    .unwrap();
    g
}

fn bench_optimize(c: &mut Criterion) {
    let graph = circle_graph();
    c.bench_function("optimize_circle_60", |b| {
        b.iter(|| {
            let mut g = graph.clone();
            g.optimize(0, &OptimizeOptions::default()).unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_bisect,
    bench_matched_filter,
    bench_coarse_match,
    bench_optimize
);
criterion_main!(benches);
