use nalgebra::DMatrix;
use proptest::prelude::*;

use ude_core::aggregation::{blend, nmi, AlignmentStats, MIConfig};
use ude_core::data::{make_windows, zscore_apply, zscore_fit, zscore_inverse, Series, WindowSpec, ZeroVariancePolicy};
use ude_core::embedding::{build_hankel, flatten_patch, patch_grid, reshape_patch, DelayConfig};
use ude_core::encoder::{pool_tokens, read_checkpoint, write_checkpoint, EncoderConfig, EncoderModel, ModelConfig};
use ude_core::koopman::{fit_koopman, fit_koopman_pairs, LatentTrajectory};
use ude_core::topology::{bottleneck, rips_persistence, wasserstein_points, PointCloud, RipsOptions};
use ude_core::training::cosine_lr;

fn samples(len: impl Into<prop::collection::SizeRange>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0..100.0f64, len)
}

fn diagram() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0..3.0f64, 0.01..3.0f64).prop_map(|(b, l)| (b, b + l)), 0..6)
}

fn delay() -> impl Strategy<Value = DelayConfig> {
    (1..6usize, 1..4usize)
        .prop_flat_map(|(m, tau)| (Just(m), Just(tau), 1..=m, 1..=m))
        .prop_map(|(m, tau, p, q)| DelayConfig { m, tau, p, q })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hankel_entries_follow_delays(cfg in delay(), x in samples(30..80)) {
        let h = build_hankel(&x, &cfg).unwrap();
        prop_assert_eq!(h.rows(), x.len() - (cfg.m - 1) * cfg.tau);
        prop_assert_eq!(h.cols(), cfg.m);
        for r in 0..h.rows() {
            for c in 0..h.cols() {
                prop_assert_eq!(h.values[(r, c)].to_bits(), x[r + c * cfg.tau].to_bits());
            }
        }
    }

    #[test]
    fn patches_tile_the_hankel_matrix(cfg in delay(), x in samples(30..80)) {
        let h = build_hankel(&x, &cfg).unwrap();
        let grid = patch_grid(&x, &cfg).unwrap();
        prop_assert_eq!(grid.u_count, h.rows() / cfg.p);
        prop_assert_eq!(grid.v_count, cfg.m / cfg.q);
        prop_assert_eq!(grid.len(), cfg.patch_count(x.len()).unwrap());
        for j in 0..grid.len() {
            let (u, v) = grid.position(j);
            prop_assert_eq!(grid.index_of(u, v), j);
            let patch = grid.patch(u, v);
            for i in 0..cfg.p {
                for k in 0..cfg.q {
                    prop_assert_eq!(patch[(i, k)], h.values[(u * cfg.p + i, v * cfg.q + k)]);
                }
            }
        }
    }

    #[test]
    fn flatten_reshape_round_trip(p in 1..6usize, q in 1..6usize, seed in any::<u64>()) {
        let m = DMatrix::from_fn(p, q, |r, c| (seed as f64 * 1e-12 + (r * 7 + c) as f64).sin());
        prop_assert_eq!(reshape_patch(&flatten_patch(&m), p, q).unwrap(), m);
    }

    #[test]
    fn zscore_round_trip(x in samples(2..100), offset in -50.0..50.0f64) {
        let y: Vec<f64> = x.iter().map(|v| v * 0.5 + offset).collect();
        let s = Series::new(vec!["a".into(), "b".into()], vec![x, y], 1.0).unwrap();
        let stats = zscore_fit(&s, ZeroVariancePolicy::PassThrough).unwrap();
        let back = zscore_inverse(&zscore_apply(&s, &stats).unwrap(), &stats).unwrap();
        for (orig, rec) in s.channels.iter().zip(&back.channels) {
            for (a, b) in orig.iter().zip(rec) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn window_count_and_bounds(len in 10..200usize, lookback in 1..20usize, horizon in 1..10usize, stride in 1..5usize) {
        let s = Series::univariate("x", (0..len).map(|i| i as f64).collect()).unwrap();
        let spec = WindowSpec { lookback, horizon, stride };
        match make_windows(&s, &spec) {
            Ok(w) => {
                prop_assert_eq!(w.len(), (len - spec.span()) / stride + 1);
                for win in &w {
                    prop_assert_eq!(win.input(&s, &spec).len(), lookback);
                    prop_assert_eq!(win.target(&s, &spec).len(), horizon);
                    prop_assert_eq!(win.target(&s, &spec)[0], win.input(&s, &spec)[lookback - 1] + 1.0);
                }
            }
            Err(_) => prop_assert!(len < spec.span()),
        }
    }

    #[test]
    fn wasserstein_is_a_metric(a in diagram(), b in diagram(), c in diagram()) {
        let ab = wasserstein_points(&a, &b, 2.0);
        prop_assert_eq!(wasserstein_points(&a, &a, 2.0), 0.0);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - wasserstein_points(&b, &a, 2.0)).abs() < 1e-12);
        let via = ab + wasserstein_points(&b, &c, 2.0);
        prop_assert!(wasserstein_points(&a, &c, 2.0) <= via + 1e-12);
        // under the max-norm ground metric the largest single cost bounds every W_p from below
        prop_assert!(bottleneck(&a, &b) <= ab + 1e-12);
    }

    #[test]
    fn rips_diagram_shape(points in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 1..25)) {
        let cloud = PointCloud::new(points.iter().map(|&(x, y)| vec![x, y]).collect()).unwrap();
        let d = rips_persistence(&cloud, &RipsOptions::default()).unwrap();
        prop_assert_eq!(d.of_dim(0).count(), points.len());
        prop_assert_eq!(d.of_dim(0).filter(|f| f.is_essential()).count(), 1);
        for f in &d.features {
            prop_assert!(f.birth >= 0.0 && f.death > f.birth);
        }
        prop_assert!(d.of_dim(0).all(|f| f.birth == 0.0));
    }

    #[test]
    fn nmi_bounded_and_symmetric(x in samples(5..200), seed in any::<u64>()) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| (v * 0.3 + (i as f64 + seed as f64 * 1e-9).sin()).tanh()).collect();
        let xy = nmi(&x, &y, 16).unwrap().value;
        let yx = nmi(&y, &x, 16).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&xy));
        prop_assert!((xy - yx).abs() < 1e-12);
    }

    #[test]
    fn blend_weights_sum_to_one(k in 1..6usize, used in 0..6usize, x in samples(50)) {
        let used = used.min(k);
        let cfg = MIConfig::with_top_k(k).unwrap();
        let channels: Vec<Vec<f64>> = (0..=used).map(|c| x.iter().map(|v| v * (c + 1) as f64).collect()).collect();
        let s = Series::new((0..=used).map(|c| format!("c{c}")).collect(), channels, 1.0).unwrap();
        let stats = AlignmentStats::fit(&s);
        let forecast = vec![1.5; 7];
        let neighbours: Vec<(usize, Vec<f64>)> = (1..=used).map(|c| (c, vec![-2.0; 7])).collect();
        let b = blend(0, &forecast, &neighbours, &stats, &cfg).unwrap();
        let total = b.self_weight + b.neighbor_weights.iter().map(|(_, w)| w).sum::<f64>();
        prop_assert!((total - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn cosine_schedule_bounds(total in 1..500usize, step in 0..600usize, lr in 1e-6..1.0f64, ratio in 0.0..1.0f64) {
        let lo = lr * ratio;
        let v = cosine_lr(step, total, lr, lo);
        prop_assert!(v >= lo - 1e-15 && v <= lr + 1e-15);
        prop_assert!(cosine_lr(step + 1, total, lr, lo) <= v + 1e-15);
        prop_assert_eq!(cosine_lr(0, total, lr, lo), lr);
    }

    #[test]
    fn pooling_preserves_column_means_when_tiling(n in 1..10usize, k in 1..5usize, d in 1..4usize) {
        let t = DMatrix::from_fn(n * k, d, |r, c| ((r * 3 + c) as f64).cos());
        let pooled = pool_tokens(&t, k, k);
        prop_assert_eq!(pooled.nrows(), n);
        for c in 0..d {
            let a = t.column(c).sum() / (n * k) as f64;
            let b = pooled.column(c).sum() / n as f64;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn koopman_recovers_linear_maps(
        entries in prop::collection::vec(-1.0..1.0f64, 9),
        snapshots in prop::collection::vec(-1.0..1.0f64, 30),
    ) {
        let k = DMatrix::from_row_slice(3, 3, &entries);
        let zm = DMatrix::from_column_slice(3, 10, &snapshots);
        prop_assume!(zm.rank(1e-3) == 3);
        let zp = &k * &zm;
        let fit = fit_koopman_pairs(&zm, &zp).unwrap();
        prop_assert!((&fit.k - &k).norm() < 1e-8);
        prop_assert!(fit.residual < 1e-10);
    }

    #[test]
    fn koopman_trajectory_fit_is_exact_for_rotations(theta in 0.01..3.0f64, r in 0.5..1.0f64) {
        let k = DMatrix::from_row_slice(2, 2, &[r * theta.cos(), -r * theta.sin(), r * theta.sin(), r * theta.cos()]);
        let mut z = DMatrix::from_column_slice(2, 1, &[1.0, 0.5]);
        let mut states = Vec::new();
        for _ in 0..12 {
            states.push(z.iter().copied().collect::<Vec<f64>>());
            z = &k * z;
        }
        let fit = fit_koopman(&LatentTrajectory::new(states).unwrap()).unwrap();
        prop_assert!((&fit.k - &k).norm() < 1e-8);
        for l in &fit.eigenvalues {
            prop_assert!((l.norm() - r).abs() < 1e-8);
        }
    }
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let cfg = ModelConfig {
        delay: DelayConfig { m: 4, tau: 1, p: 2, q: 2 },
        lookback: 12,
        encoder: EncoderConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 8,
            horizon: 3,
            ..EncoderConfig::default()
        },
    };
    let model = EncoderModel::new(cfg).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&model, &mut bytes).unwrap();
    let back = read_checkpoint(bytes.as_slice()).unwrap();
    let mut again = Vec::new();
    write_checkpoint(&back, &mut again).unwrap();
    assert_eq!(bytes, again);
    let x: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
    assert_eq!(model.forecast(&x).unwrap(), back.forecast(&x).unwrap());
}

#[test]
fn attention_rows_are_stochastic() {
    let cfg = ModelConfig {
        delay: DelayConfig { m: 4, tau: 1, p: 2, q: 2 },
        lookback: 15,
        encoder: EncoderConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 8,
            horizon: 3,
            ..EncoderConfig::default()
        },
    };
    let model = EncoderModel::new(cfg).unwrap();
    let x: Vec<f64> = (0..15).map(|i| (i as f64 * 0.4).cos()).collect();
    let latent = model.latent(&x, true).unwrap();
    let maps = latent.attention_maps.unwrap();
    assert_eq!(maps.len(), 2);
    for a in maps.iter().flatten() {
        assert_eq!(a.nrows(), model.n_tokens());
        for r in 0..a.nrows() {
            assert!((a.row(r).sum() - 1.0).abs() < 1e-12);
            assert!(a.row(r).iter().all(|v| *v >= 0.0));
        }
    }
}

#[test]
fn key_bias_gradient_vanishes() {
    // adding a constant to every score of a softmax row changes nothing
    let cfg = ModelConfig {
        delay: DelayConfig { m: 4, tau: 1, p: 2, q: 2 },
        lookback: 13,
        encoder: EncoderConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 8,
            horizon: 3,
            ..EncoderConfig::default()
        },
    };
    let mut model = EncoderModel::new(cfg).unwrap();
    let x: Vec<f64> = (0..13).map(|i| (i as f64 * 0.7).sin() + 0.1 * i as f64).collect();
    let (_, cache) = model.forward_cached(&x, None).unwrap();
    model.zero_grad();
    model.backward_cached(&cache, &[1.0, -2.0, 0.5]).unwrap();
    let mut checked = 0;
    for layer in &model.grads.layers {
        assert!(layer.key.bias.iter().all(|g| g.abs() < 1e-12), "{:?}", layer.key.bias);
        assert!(layer.key.weight.iter().any(|g| g.abs() > 1e-8));
        checked += 1;
    }
    assert_eq!(checked, 2);
}
