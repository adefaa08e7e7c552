use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use segmem::cli::simulate_entry;
use segmem::kernels::{fc_forward, place_tensor, FcSpec, FlashWeights, KernelError, QTensor};
use segmem::netplan::{load_network, plan_entry, plan_network, NetEntry, NetOp};
use segmem::planner::{
    layer_model, min_offset, min_offset_by_liveness, min_offset_graph, min_offset_pairwise,
    module_model, plan_layer, plan_layer_with, ConvSpec, LayerSpec, ModuleSpec, Padding,
};
use segmem::pool::{Pool, PoolConfig, PoolError};

fn padding() -> impl Strategy<Value = Padding> {
    prop_oneof![Just(Padding::Same), Just(Padding::Valid)]
}

fn conv_spec() -> impl Strategy<Value = ConvSpec> {
    (
        1usize..4,
        1usize..7,
        1usize..12,
        1usize..12,
        1usize..3,
        padding(),
    )
        .prop_flat_map(|(r, extra, c, k, stride, padding)| {
            let r = 2 * r - 1;
            (Just((r, c, k, stride, padding)), r..r + extra)
        })
        .prop_map(|((r, c, k, stride, padding), h)| ConvSpec {
            batch: 1,
            h,
            w: h,
            c,
            k,
            r,
            s: r,
            stride,
            padding,
        })
}

fn module_spec() -> impl Strategy<Value = ModuleSpec> {
    (
        3usize..8,
        1usize..10,
        0usize..12,
        1usize..10,
        prop_oneof![Just(1usize), Just(3), Just(5)],
        prop_oneof![
            Just([1, 1, 1]),
            Just([2, 1, 1]),
            Just([1, 2, 1]),
            Just([1, 1, 2])
        ],
    )
        .prop_map(|(hw, ci, extra, co, rs, strides)| {
            ModuleSpec::new(hw, ci, ci + extra, co, rs, strides)
        })
        .prop_filter("fusable", |m| m.validate().is_ok() && m.is_fusable())
}

fn layer_entry(op: NetOp) -> NetEntry {
    NetEntry {
        name: "x".into(),
        gap_before: false,
        segment_elems: None,
        op,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solvers_agree_on_conv_layers(spec in conv_spec(), seg in 1usize..5, dw in any::<bool>()) {
        let layer = if dw {
            LayerSpec::Depthwise(ConvSpec { k: spec.c, ..spec })
        } else {
            LayerSpec::Conv2D(spec)
        };
        let model = layer_model(&layer, seg).unwrap();
        let d = min_offset(&model).unwrap();
        prop_assert_eq!(d, min_offset_pairwise(&model).unwrap());
        prop_assert_eq!(d, min_offset_by_liveness(&model).unwrap());
    }

    #[test]
    fn solvers_agree_on_small_modules(m in module_spec()) {
        let model = module_model(&m, m.c_in.min(m.c_out).clamp(1, 4)).unwrap();
        let d = min_offset(&model).unwrap();
        prop_assert_eq!(d, min_offset_pairwise(&model).unwrap());
    }

    #[test]
    fn single_layer_reduction_at_most_half(
        m in 1usize..8, k in 1usize..64, n in 1usize..64, spec in conv_spec(),
    ) {
        let fc = plan_layer(&LayerSpec::FullyConnected { m, k, n }, 1).unwrap();
        prop_assert!(fc.reduction() <= 0.5 && fc.reduction() >= 0.0);
        let conv = plan_layer(&LayerSpec::Conv2D(spec), 1).unwrap();
        prop_assert!(conv.reduction() <= 0.5);
    }

    #[test]
    fn enlarging_a_dimension_never_shrinks_footprint(
        m in 1usize..6, k in 1usize..24, n in 1usize..24, which in 0usize..3, seg in 1usize..6,
    ) {
        let base = LayerSpec::FullyConnected { m, k, n };
        let grown = match which {
            0 => LayerSpec::FullyConnected { m: m + 1, k, n },
            1 => LayerSpec::FullyConnected { m, k: k + 1, n },
            _ => LayerSpec::FullyConnected { m, k, n: n + 1 },
        };
        let a = plan_layer_with(&base, 1, seg).unwrap().footprint_bytes;
        let b = plan_layer_with(&grown, 1, seg).unwrap().footprint_bytes;
        prop_assert!(b >= a, "{:?} {} -> {:?} {}", base, a, grown, b);
    }

    #[test]
    fn enlarging_a_module_never_shrinks_footprint(m in module_spec(), which in 0usize..4) {
        let mut g = m;
        match which {
            0 => g.hw += 1,
            1 => g.c_mid += 1,
            2 => g.c_out += 1,
            _ => {
                g.c_in += 1;
                g.c_mid = g.c_mid.max(g.c_in);
            }
        }
        prop_assume!(g.validate().is_ok() && g.is_fusable());
        // same segment size on both sides
        let seg = m.c_in.min(m.c_out);
        let a = segmem::planner::min_offset_graph_with(&m, 1, seg).unwrap().footprint_bytes;
        let b = segmem::planner::min_offset_graph_with(&g, 1, seg).unwrap().footprint_bytes;
        prop_assert!(b >= a, "{} {} -> {} {}", m, a, g, b);
    }

    #[test]
    fn fc_free_and_store_counts(m in 1usize..5, k in 1usize..30, n in 1usize..30, seg in 1usize..6, seed in any::<u64>()) {
        let spec = FcSpec { m, k, n };
        let plan = plan_layer_with(&spec.into(), 1, seg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = QTensor::random(vec![m, k], &mut rng);
        let w = FlashWeights::random(vec![k, n], k, &mut rng);
        let mut pool = Pool::new(PoolConfig::with_segments(plan.footprint_segments, seg).unwrap());
        place_tensor(&mut pool, 0, &x, seg).unwrap();
        let stores_before = pool.metrics().total_stores;
        fc_forward(&mut pool, 0, &w, spec, &plan).unwrap();
        let metrics = pool.metrics();
        let (kt, nt) = (k.div_ceil(seg), n.div_ceil(seg));
        prop_assert_eq!(metrics.total_frees, (m * kt) as u64);
        prop_assert_eq!(metrics.total_stores - stores_before, (m * nt) as u64);
        prop_assert_eq!(metrics.peak_live_segments, plan.footprint_segments);
    }

    #[test]
    fn planned_offset_is_minimal(spec in conv_spec(), dw in any::<bool>(), seed in 0u64..1000) {
        let op = if dw {
            NetOp::Layer(LayerSpec::Depthwise(ConvSpec { k: spec.c, ..spec }))
        } else {
            NetOp::Layer(LayerSpec::Conv2D(spec))
        };
        let e = layer_entry(op);
        let plan = plan_entry(&e, 1).unwrap();
        let ok = simulate_entry(&e, plan.footprint_bytes, seed, 0, false).unwrap();
        prop_assert!(ok.bit_exact);
        prop_assert!(ok.metrics.peak_live_segments <= plan.footprint_segments);
        if plan.offset_segments >= 1 {
            let err = simulate_entry(&e, plan.footprint_bytes, seed, -1, false).unwrap_err();
            prop_assert!(matches!(err, KernelError::Pool(PoolError::Clobber { .. })), "{}", err);
        }
    }

    #[test]
    fn baselines_are_ordered(m in module_spec()) {
        prop_assert!(m.baseline_bytes(1) <= m.no_overlap_bytes(1));
    }
}

#[test]
fn bundled_network_invariants() {
    for text in [
        segmem::netplan::VWW_CONFIG,
        segmem::netplan::IMAGENET_320KB_CONFIG,
    ] {
        let report = plan_network(&load_network(text).unwrap()).unwrap();
        for e in report.entries.iter().filter(|e| e.fused) {
            assert!(e.footprint_bytes <= e.baseline_bytes, "{}", e.name);
            assert!(e.baseline_bytes <= e.no_overlap_bytes, "{}", e.name);
            assert!((0.0..1.0).contains(&e.reduction), "{}", e.name);
        }
        for w in report.entries.windows(2) {
            assert_eq!(w[0].out_base_bytes, w[1].in_base_bytes);
        }
    }
}

#[test]
fn unfused_module_exceeds_in_place_baseline() {
    // B16: the 7x7 window is larger than the 6x6 image, so the module runs as
    // separate layers and cannot beat an in-place depthwise baseline.
    let report =
        plan_network(&load_network(segmem::netplan::IMAGENET_320KB_CONFIG).unwrap()).unwrap();
    let b16 = report.entry("B16").unwrap();
    assert!(!b16.fused);
    assert!(b16.footprint_bytes > b16.baseline_bytes);
    assert!(b16.footprint_bytes <= b16.no_overlap_bytes);
}

#[test]
fn tiny_module_workspace_can_exceed_baseline() {
    let m = ModuleSpec::new(5, 9, 9, 6, 5, [1, 2, 1]);
    let plan = min_offset_graph(&m).unwrap();
    assert_eq!(plan.workspace_segments, 27);
    assert!(plan.footprint_bytes > m.baseline_bytes(1));
}
