use std::fs;
use std::path::Path;

use proxlead::algorithms::rho_cor6;
use proxlead::harness::*;

fn config(text: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(text).unwrap();
    cfg.output = out.to_path_buf();
    cfg
}

const QUAD: &str = r#"
name = "quad"
iterations = 200
metrics_stride = 10
[topology]
kind = "ring"
n = 8
[problem]
kind = "quadratic"
m = 4
p = 10
[compressor]
kind = "quant_inf_norm"
bits = 2
block_size = 256
[oracle]
kind = "sgd"
[algorithm]
name = "prox_lead"
params = "experimental"
eta = 0.05
"#;

const COR6: &str = r#"
name = "cor6"
iterations = 300
[topology]
kind = "ring"
n = 8
[problem]
kind = "quadratic"
m = 4
p = 10
[oracle]
kind = "full"
[algorithm]
name = "prox_lead"
params = "cor6"
"#;

#[test]
fn zero_iterations_give_header_only() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(QUAD, tmp.path());
    cfg.iterations = 0;
    let s = run_experiment(&cfg).unwrap();
    let text = fs::read_to_string(s.dir.join("replica-000.csv")).unwrap();
    assert_eq!(text, format!("{CSV_HEADER}\n"));
}

#[test]
fn same_config_gives_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = config(QUAD, a.path());
    cfg.replicas = 3;
    let sa = run_experiment(&cfg).unwrap();
    cfg.output = b.path().to_path_buf();
    let sb = run_experiment(&cfg).unwrap();
    for f in ["replica-000.csv", "replica-002.csv", "aggregate.csv", "config.toml", "meta.toml"] {
        assert_eq!(fs::read(sa.dir.join(f)).unwrap(), fs::read(sb.dir.join(f)).unwrap(), "{f}");
    }
    // a different seed changes the stochastic trajectory
    cfg.seed = 1;
    let sc = run_experiment(&cfg).unwrap();
    assert_ne!(fs::read(sa.dir.join("replica-000.csv")).unwrap(), fs::read(sc.dir.join("replica-000.csv")).unwrap());
}

#[test]
fn rows_satisfy_metric_invariants() {
    let tmp = tempfile::tempdir().unwrap();
    let s = run_experiment(&config(QUAD, tmp.path())).unwrap();
    let rows = &s.replicas[0];
    assert_eq!(rows.len(), 21);
    for w in rows.windows(2) {
        assert!(w[1].bits_cum >= w[0].bits_cum && w[1].grad_evals_cum >= w[0].grad_evals_cum);
    }
    assert!(rows.iter().all(|r| r.suboptimality >= 0.0 && r.wall_ns == 0));
}

#[test]
fn cor6_run_respects_accumulated_contraction() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(COR6, tmp.path());
    let prep = prepare(&cfg, None).unwrap();
    let rho = rho_cor6(prep.prob.constants().0, prep.params.base.eta, &prep.net.spectral());
    assert_eq!(prep.rho_bound(), Some(rho));
    let s = run_experiment(&cfg).unwrap();
    let rows = &s.replicas[0];
    let phi0 = rows[0].phi;
    for r in rows {
        // M = 1 at α = 1, so ‖X - X*‖² ≤ Φ
        assert!(r.suboptimality <= rho.powi(r.k as i32) * phi0 / 8.0 * (1.0 + 1e-9) + 1e-300, "k = {}", r.k);
    }
    assert!(rows.last().unwrap().suboptimality < 1e-10);
}

#[test]
fn aggregate_recomputes_from_replica_files() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(QUAD, tmp.path());
    cfg.replicas = 4;
    let s = run_experiment(&cfg).unwrap();
    let replicas: Vec<_> =
        (0..4).map(|r| parse_csv(&fs::read_to_string(s.dir.join(format!("replica-{r:03}.csv"))).unwrap()).unwrap()).collect();
    let recomputed = write_aggregate_csv(&aggregate(&replicas).unwrap());
    assert_eq!(recomputed, fs::read_to_string(s.dir.join("aggregate.csv")).unwrap());
    let parsed = parse_aggregate_csv(&recomputed).unwrap();
    assert_eq!(parsed.len(), replicas[0].len());
}

#[test]
fn eta_sweep_gives_one_output_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(QUAD, tmp.path());
    let values: Vec<String> = ["0.01", "0.05", "0.1"].iter().map(|s| s.to_string()).collect();
    let s = sweep(&cfg, "eta", &values).unwrap();
    assert_eq!(s.points.len(), 3);
    for p in &s.points {
        assert!(p.dir.join("replica-000.csv").is_file());
        assert!(!p.diverged);
    }
    let summary = fs::read_to_string(s.dir.join("sweep.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    // derived seeds differ per point, data seed is shared
    assert_ne!(s.points[0].seed, s.points[1].seed);
    let metas: Vec<String> = s.points.iter().map(|p| fs::read_to_string(p.dir.join("meta.toml")).unwrap()).collect();
    let line = |m: &str| m.lines().find(|l| l.starts_with("problem_hash")).unwrap().to_string();
    assert_eq!(line(&metas[0]), line(&metas[2]));
}

#[test]
fn bits_sweep_has_decreasing_noise_constant() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(QUAD, tmp.path());
    cfg.iterations = 20;
    let values: Vec<String> = ["1", "2", "4", "8"].iter().map(|s| s.to_string()).collect();
    let s = sweep(&cfg, "bits", &values).unwrap();
    assert_eq!(s.points.len(), 4);
    let mut prev = f64::INFINITY;
    for (p, v) in s.points.iter().zip(&values) {
        assert!(p.c < prev, "analytic C at b = {v}");
        prev = p.c;
    }
    let mut prev = f64::INFINITY;
    for v in &values {
        let mut point = cfg.clone();
        point.set_axis("bits", v).unwrap();
        let (est, analytic) = estimate_c_for(&point, 20, 1000).unwrap();
        assert!(est.c_hat < prev && est.c_hat <= analytic * 1.2, "b = {v}: {} vs {analytic}", est.c_hat);
        prev = est.c_hat;
    }
}

#[test]
fn sweep_rejects_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(QUAD, tmp.path());
    assert!(sweep(&cfg, "eta", &[]).is_err());
    assert!(sweep(&cfg, "no_such_axis", &["1".to_string()]).is_err());
    assert!(sweep(&cfg, "bits", &["two".to_string()]).is_err());
}

fn logistic(bits: Option<u32>, p: usize, alg: &str, tmp: &Path) -> ExperimentConfig {
    let compressor = match bits {
        Some(b) => format!("kind = \"quant_inf_norm\"\nbits = {b}\nblock_size = 256"),
        None => "kind = \"identity\"".to_string(),
    };
    let params = if alg == "dgd" { "params = \"cor6\"".to_string() } else { "params = \"thm5\"\nalpha = 0.5\ngamma = 1.0".to_string() };
    config(
        &format!(
            r#"
iterations = 1500
metrics_stride = 5
[topology]
kind = "ring"
n = 8
[problem]
kind = "logistic"
m = 5
p = {p}
l1 = 0.005
[compressor]
{compressor}
[oracle]
kind = "full"
[algorithm]
name = "{alg}"
{params}
"#
        ),
        tmp,
    )
}

#[test]
fn two_bit_curve_needs_far_fewer_bits() {
    let tmp = tempfile::tempdir().unwrap();
    let q = logistic(Some(2), 256, "prox_lead", tmp.path());
    let id = logistic(None, 256, "prox_lead", tmp.path());
    let s = compare(&[("2bit".into(), q), ("32bit".into(), id)], BudgetAxis::Bits).unwrap();
    let text = fs::read_to_string(&s.path).unwrap();
    assert!(text.lines().next().unwrap().starts_with("bits"));
    let reach = |c: &Curve, tol: f64| c.budget[c.suboptimality.iter().position(|&v| v <= tol).unwrap()];
    for tol in [1e-2, 1e-4, 1e-6] {
        let ratio = reach(&s.curves[1], tol) / reach(&s.curves[0], tol);
        assert!(ratio >= 12.0, "tol {tol}: ratio {ratio}");
    }
}

#[test]
fn dgd_plateaus_above_prox_lead() {
    let tmp = tempfile::tempdir().unwrap();
    let dgd = logistic(None, 20, "dgd", tmp.path());
    let lead = logistic(Some(2), 20, "prox_lead", tmp.path());
    let s = compare(&[("dgd".into(), dgd), ("prox_lead".into(), lead)], BudgetAxis::Iterations).unwrap();
    let (d, l) = (&s.curves[0].suboptimality, &s.curves[1].suboptimality);
    let n = d.len();
    // DGD has stalled: its last fifth barely moves
    assert!(d[n - 1] > 0.9 * d[4 * n / 5]);
    assert!(l[l.len() - 1] < 1e-3 * d[n - 1]);
}

#[test]
fn compare_single_config_passes_through() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(QUAD, tmp.path());
    let s = compare(&[("only".into(), cfg.clone())], BudgetAxis::GradEvals).unwrap();
    let run = run_experiment(&cfg).unwrap();
    assert_eq!(s.curves.len(), 1);
    assert_eq!(s.curves[0].suboptimality.len(), run.replicas[0].len());
    for (a, b) in s.curves[0].suboptimality.iter().zip(&run.replicas[0]) {
        assert_eq!(*a, b.suboptimality);
    }
}

#[test]
fn compare_rejects_mismatched_problems() {
    let tmp = tempfile::tempdir().unwrap();
    let a = config(QUAD, tmp.path());
    let mut b = a.clone();
    b.problem.p = 12;
    assert!(compare(&[("a".into(), a.clone()), ("b".into(), b)], BudgetAxis::Iterations).is_err());
    let mut c = a.clone();
    c.topology = TopologyConfig::Complete { n: 8 };
    assert!(compare(&[("a".into(), a), ("c".into(), c)], BudgetAxis::Iterations).is_err());
}

#[test]
fn reference_cache_is_reused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(QUAD, tmp.path());
    let prep = prepare(&cfg, Some(tmp.path())).unwrap();
    let path = reference_path(tmp.path(), &cfg);
    let first = fs::read_to_string(&path).unwrap();
    let again = prepare(&cfg, Some(tmp.path())).unwrap();
    assert_eq!(first, fs::read_to_string(&path).unwrap());
    assert_eq!(prep.reference.x_star, again.reference.x_star);
}
