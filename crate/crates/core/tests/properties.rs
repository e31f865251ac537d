use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use proxlead::algorithms::comm;
use proxlead::compression::{bit_count, compress, coordinate_variance, decode, CompressorSpec};
use proxlead::harness::{aggregate, align, Curve, ExperimentConfig, MetricsRow};
use proxlead::problem::Regularizer;
use proxlead::rng::{derive_seed, stream, Purpose};
use proxlead::topology::{build_from_edges, build_ring};

fn vector(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, 1..max_len)
}

fn spec() -> impl Strategy<Value = CompressorSpec> {
    prop_oneof![
        Just(CompressorSpec::identity()),
        (1u32..=8, 1usize..=300).prop_map(|(b, bs)| CompressorSpec::quant_inf_norm(b, bs).unwrap()),
    ]
}

/// Path graph plus arbitrary extra edges, so the graph is always connected.
fn graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..12).prop_flat_map(|n| {
        prop::collection::vec((0..n, 0..n), 0..2 * n).prop_map(move |extra| {
            let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
            edges.extend(extra.into_iter().filter(|(a, b)| a != b));
            (n, edges)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metropolis_weights_are_doubly_stochastic((n, edges) in graph()) {
        let net = build_from_edges(n, &edges).unwrap();
        let w = net.w();
        prop_assert!((w - w.transpose()).amax() < 1e-15);
        for i in 0..n {
            prop_assert!((w.row(i).sum() - 1.0).abs() < 1e-12);
            prop_assert!(w.row(i).iter().all(|&v| v >= 0.0));
        }
        let s = net.spectral();
        prop_assert!(s.lam_min_nz > 0.0 && s.lam_max < 2.0 && s.lam_min_nz <= s.lam_max);
    }

    #[test]
    fn laplacian_pinv_inverts_on_centred_matrices((n, edges) in graph(), seed in any::<u64>()) {
        let net = build_from_edges(n, &edges).unwrap();
        let mut rng = stream(seed, 0, Purpose::Data);
        let raw = DMatrix::from_fn(n, 3, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        // Y = (I - W) X is centred, and ‖Y‖²_pinv = ⟨X, (I - W) X⟩
        let y = net.laplacian_apply(&raw);
        let direct = raw.dot(&y);
        prop_assert!((net.pinv_norm_sq(&y) - direct).abs() <= 1e-9 * direct.abs().max(1e-12));
    }

    #[test]
    fn compression_round_trip_is_exact(x in vector(600), spec in spec(), seed in any::<u64>()) {
        let mut rng = stream(seed, 0, Purpose::Compressor);
        let (q, msg) = compress(&spec, &x, &mut rng).unwrap();
        let back = decode(&msg).unwrap();
        prop_assert_eq!(back.len(), x.len());
        prop_assert!(back.iter().zip(&q).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(msg.total_bits, bit_count(&spec, x.len()));
        let norm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (qi, xi) in q.iter().zip(&x) {
            prop_assert!(*qi == 0.0 || qi.signum() == xi.signum());
            prop_assert!(qi.abs() <= norm * (1.0 + 1e-12));
        }
    }

    #[test]
    fn compressor_variance_respects_analytic_constant(x in vector(300), bits in 1u32..=6, block in 1usize..=300) {
        let spec = CompressorSpec::quant_inf_norm(bits, block).unwrap();
        let var: f64 = coordinate_variance(&spec, &x).iter().sum();
        let sq: f64 = x.iter().map(|v| v * v).sum();
        prop_assert!(var <= spec.analytic_c(x.len()) * sq * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn soft_threshold_is_optimal_and_nonexpansive(w in 0.0f64..5.0, eta in 1e-3f64..2.0, a in -10.0f64..10.0, b in -10.0f64..10.0) {
        let r = Regularizer::L1(w);
        let (pa, pb) = (r.prox_scalar(eta, a), r.prox_scalar(eta, b));
        prop_assert!((pa - pb).abs() <= (a - b).abs() + 1e-15);
        // a - prox(a) ∈ ηw ∂|·|(prox(a))
        let g = a - pa;
        if pa != 0.0 {
            prop_assert!((g - eta * w * pa.signum()).abs() < 1e-12);
        } else {
            prop_assert!(g.abs() <= eta * w + 1e-12);
        }
    }

    #[test]
    fn comm_keeps_neighbour_aggregate_consistent(n in 3usize..10, p in 1usize..20, alpha in 0.01f64..1.0, bits in 1u32..4, seed in any::<u64>()) {
        let net = build_ring(n, 1.0 / 3.0).unwrap();
        let spec = CompressorSpec::quant_inf_norm(bits, 8).unwrap();
        let mut rng = stream(seed, 0, Purpose::Compressor);
        let z = DMatrix::from_fn(n, p, |i, j| ((i * 7 + j * 3) as f64 + seed as f64 * 1e-3).sin());
        let h = DMatrix::from_fn(n, p, |i, j| ((i + 2 * j) as f64).cos());
        let h_w = net.mix(&h).unwrap();
        let out = comm(&z, &h, &h_w, alpha, &spec, &net, &mut rng).unwrap();
        prop_assert!((&out.h_w - net.mix(&out.h).unwrap()).amax() < 1e-12);
        prop_assert!((&out.z_hat_w - net.mix(&out.z_hat).unwrap()).amax() < 1e-12);
        prop_assert_eq!(out.bits, n as u64 * bit_count(&spec, p));
    }

    #[test]
    fn alignment_is_monotone_and_complete(
        steps_a in prop::collection::vec(0u32..50, 1..30),
        steps_b in prop::collection::vec(0u32..50, 1..30),
    ) {
        let curve = |label: &str, steps: &[u32]| {
            let mut b = 0.0;
            let budget: Vec<f64> = steps.iter().map(|s| { b += *s as f64; b }).collect();
            let values: Vec<f64> = (0..budget.len()).map(|i| 1.0 / (1.0 + i as f64)).collect();
            Curve { label: label.into(), budget, suboptimality: values.clone(), consensus_err: values }
        };
        let curves = [curve("a", &steps_a), curve("b", &steps_b)];
        let al = align(&curves).unwrap();
        prop_assert!(al.grid.windows(2).all(|w| w[0] < w[1]));
        let lo = curves[0].budget[0].max(curves[1].budget[0]);
        let hi = curves[0].budget.last().unwrap().min(*curves[1].budget.last().unwrap());
        for (c, idx) in curves.iter().zip(&al.index) {
            prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
            for (&g, &i) in al.grid.iter().zip(idx) {
                prop_assert!(c.budget[i] <= g);
            }
            // every own row inside the shared range appears on the grid
            for &b in c.budget.iter().filter(|&&b| b >= lo && b <= hi) {
                prop_assert!(al.grid.contains(&b));
            }
        }
    }

    #[test]
    fn aggregate_of_copies_has_no_spread(values in prop::collection::vec(0.0f64..10.0, 1..20), copies in 1usize..5) {
        let rows: Vec<MetricsRow> = values
            .iter()
            .enumerate()
            .map(|(k, &v)| MetricsRow { k, suboptimality: v, consensus_err: v, phi: v, bits_cum: k as u64, grad_evals_cum: k as u64, wall_ns: 0 })
            .collect();
        let agg = aggregate(&vec![rows.clone(); copies]).unwrap();
        for (a, r) in agg.iter().zip(&rows) {
            prop_assert_eq!(a.k, r.k);
            prop_assert!((a.mean[0] - r.suboptimality).abs() <= 4.0 * f64::EPSILON * r.suboptimality);
            prop_assert!(a.stderr.iter().zip(&a.mean).all(|(s, m)| *s <= 4.0 * f64::EPSILON * m.abs().max(1.0)));
        }
    }

    #[test]
    fn canonical_config_round_trips(seed in any::<u64>(), iters in 0usize..10_000, eta in 0.01f64..0.1, bits in 1u32..8) {
        let text = format!(
            "seed = {seed}\niterations = {iters}\n[topology]\nkind = \"ring\"\nn = 6\n[problem]\nkind = \"logistic\"\nm = 3\np = 4\n\
             [compressor]\nkind = \"quant_inf_norm\"\nbits = {bits}\nblock_size = 16\n[oracle]\nkind = \"sgd\"\n\
             [algorithm]\nname = \"prox_lead\"\nparams = \"experimental\"\neta = {eta:?}\n"
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.canonical()).unwrap();
        prop_assert_eq!(cfg.hash(), again.hash());
        prop_assert_eq!(cfg.problem_hash(), again.problem_hash());
    }

    #[test]
    fn derived_seeds_are_distinct(base in any::<u64>(), i in 0u64..1000, j in 0u64..1000) {
        prop_assume!(i != j);
        prop_assert_ne!(derive_seed(base, i), derive_seed(base, j));
        prop_assert_eq!(derive_seed(base, i), derive_seed(base, i));
    }
}

#[test]
fn stochastic_rounding_mean_matches_input() {
    // exact expectation of each coordinate from the two rounding outcomes
    let spec = CompressorSpec::quant_inf_norm(2, 4).unwrap();
    let x = DVector::from_vec(vec![0.3, -1.2, 0.05, 0.9, -0.4]);
    let mut rng = stream(3, 0, Purpose::Compressor);
    let trials = 40_000;
    let mut mean = DVector::zeros(5);
    for _ in 0..trials {
        let (q, _) = compress(&spec, x.as_slice(), &mut rng).unwrap();
        mean += DVector::from_vec(q);
    }
    mean /= trials as f64;
    let var = coordinate_variance(&spec, x.as_slice());
    for j in 0..5 {
        let se = (var[j] / trials as f64).sqrt();
        // summation rounding over the trials
        assert!((mean[j] - x[j]).abs() <= 5.0 * se + 1e-11 * x[j].abs(), "coordinate {j}");
    }
}
