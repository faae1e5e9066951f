mod common;

use icam::eval::report::GapReport;
use icam::eval::{evaluate, exact_cvrp, exact_tsp, gap, nn_two_opt, GapRow, Method, ReferenceSpec};
use icam::instance::{generate_set, generate_uniform, CapacityRule, Instance, Problem};
use icam::model::{IcamModel, ModelConfig};
use icam::rollout::{check_order, tour_length, RolloutMode};

#[test]
fn exact_tsp_matches_brute_force() {
    for n in 5..=9 {
        for s in 0..12 {
            let inst = generate_uniform(Problem::Tsp, n, CapacityRule::ByScale, 1000 * n as u64 + s).unwrap();
            let ex = exact_tsp(&inst).unwrap();
            assert!((ex.length - common::brute_tsp(&inst)).abs() <= 1e-9);
            assert!((tour_length(&inst, &ex.order).unwrap() - ex.length).abs() <= 1e-9);
        }
    }
}

#[test]
fn exact_tsp_small_cases_and_limits() {
    let sq = Instance::tsp("sq", vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
    assert!((exact_tsp(&sq).unwrap().length - 4.0).abs() < 1e-12);
    let tri = Instance::tsp("t", vec![[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]]).unwrap();
    assert!((exact_tsp(&tri).unwrap().length - 12.0).abs() < 1e-12);
    let big = generate_uniform(Problem::Tsp, 16, CapacityRule::ByScale, 0).unwrap();
    let err = exact_tsp(&big).unwrap_err().to_string();
    assert!(err.contains("nn2opt"), "{err}");
}

#[test]
fn exact_cvrp_matches_ordered_partitions() {
    for customers in [3, 5, 6] {
        for s in 0..6 {
            let cap = [10, 15, 25][s as usize % 3];
            let inst = generate_uniform(Problem::Cvrp, customers, CapacityRule::Fixed { capacity: cap }, 77 + s).unwrap();
            let ex = exact_cvrp(&inst).unwrap();
            assert!((ex.length - common::brute_cvrp(&inst)).abs() <= 1e-9, "{customers} {s}");
            check_order(&inst, &ex.order).unwrap();
            assert!((tour_length(&inst, &ex.order).unwrap() - ex.length).abs() <= 1e-9);
        }
    }
}

#[test]
fn exact_cvrp_small_cases_and_limits() {
    let one = Instance::cvrp("o", vec![[0.0, 0.0], [3.0, 4.0]], vec![0, 5], 10).unwrap();
    assert!((exact_cvrp(&one).unwrap().length - 10.0).abs() < 1e-12);
    let split = Instance::cvrp("s", vec![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]], vec![0, 6, 6], 10).unwrap();
    assert!((exact_cvrp(&split).unwrap().length - 6.0).abs() < 1e-12);
    let big = generate_uniform(Problem::Cvrp, 9, CapacityRule::ByScale, 0).unwrap();
    assert!(exact_cvrp(&big).is_err());
}

#[test]
fn nn2opt_never_beats_the_optimum() {
    for n in 4..=12 {
        for s in 0..8 {
            let inst = generate_uniform(Problem::Tsp, n, CapacityRule::ByScale, 500 + s).unwrap();
            let h = nn_two_opt(&inst).unwrap();
            let ex = exact_tsp(&inst).unwrap();
            assert!(h.length >= ex.length - 1e-12);
            assert!(gap(h.length, ex.length).unwrap() >= -1e-10);
            assert_eq!(h.order[0], 0);
            check_order(&inst, &h.order).unwrap();
        }
    }
    let c = generate_uniform(Problem::Cvrp, 5, CapacityRule::ByScale, 0).unwrap();
    assert!(nn_two_opt(&c).is_err());
}

#[derive(serde::Deserialize)]
struct Pinned {
    n50: Big,
    n12: Small,
}
#[derive(serde::Deserialize)]
struct Big {
    seed: u64,
    count: usize,
    mean_length: f64,
}
#[derive(serde::Deserialize)]
struct Small {
    seed: u64,
    count: usize,
    mean_gap_vs_exact: f64,
}

#[test]
fn nn2opt_matches_the_pinned_fixture() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/nn2opt.json")).unwrap();
    let pinned: Pinned = serde_json::from_str(&text).unwrap();
    let big = generate_set(Problem::Tsp, 50, CapacityRule::ByScale, pinned.n50.seed, pinned.n50.count).unwrap();
    let mean = big.iter().map(|i| nn_two_opt(i).unwrap().length).sum::<f64>() / big.len() as f64;
    assert!((mean - pinned.n50.mean_length).abs() <= 1e-9, "{mean}");
    let small = generate_set(Problem::Tsp, 12, CapacityRule::ByScale, pinned.n12.seed, pinned.n12.count).unwrap();
    let report = evaluate(&small, Method::Nn2opt, None, &ReferenceSpec::Exact).unwrap();
    assert!((report.mean_gap - pinned.n12.mean_gap_vs_exact).abs() <= 1e-9, "{}", report.mean_gap);
}

#[test]
fn published_gaps() {
    assert_eq!(format!("{:.3}", gap(7.7747, 7.7632).unwrap()), "0.148");
    assert_eq!(format!("{:.3}", gap(23.5608, 23.1199).unwrap()), "1.907");
    assert_eq!(gap(3.5, 3.5).unwrap(), 0.0);
    assert!(gap(1.0, 0.0).is_err());
}

#[test]
fn report_aggregates_match_rows() {
    let insts = generate_set(Problem::Tsp, 10, CapacityRule::ByScale, 3, 6).unwrap();
    let model = IcamModel::new(ModelConfig::tiny(Problem::Tsp), 1).unwrap();
    let report = evaluate(&insts, Method::Icam(RolloutMode::GreedyMulti), Some(&model), &ReferenceSpec::Auto(None)).unwrap();
    assert_eq!(report.rows.len(), 6);
    let n = report.rows.len() as f64;
    let mean_obj = report.rows.iter().map(|r| r.objective).sum::<f64>() / n;
    let mean_gap = report.rows.iter().map(|r| r.gap).sum::<f64>() / n;
    assert_eq!(report.mean_objective, mean_obj);
    assert_eq!(report.mean_gap, mean_gap);
    for (row, inst) in report.rows.iter().zip(&insts) {
        assert_eq!(row.id, inst.id);
        assert_eq!(row.reference_source, "exact");
        assert!(row.gap >= -1e-10);
        assert!((row.gap - gap(row.objective, row.reference).unwrap()).abs() < 1e-12);
    }
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with(GapReport::CSV_HEADER));
    assert!(report.to_markdown().contains("| icam/greedy-multi | 10 |"));
}

#[test]
fn references_come_from_files_in_original_units() {
    let dir = tempfile::tempdir().unwrap();
    let mut inst = generate_uniform(Problem::Tsp, 30, CapacityRule::ByScale, 9).unwrap();
    inst.unit_scale = 1000.0;
    let h = nn_two_opt(&inst).unwrap().length * 1000.0;
    let path = dir.path().join("ref.jsonl");
    std::fs::write(&path, format!("{{\"id\":\"{}\",\"length\":{}}}\n", inst.id, h * 0.98)).unwrap();
    let insts = [inst];
    let r = evaluate(&insts, Method::Nn2opt, None, &ReferenceSpec::File(path.clone())).unwrap();
    assert!((r.rows[0].objective - h).abs() < 1e-9);
    assert!((r.rows[0].gap - (1.0 / 0.98 - 1.0) * 100.0).abs() < 1e-9);
    let auto = evaluate(&insts, Method::Nn2opt, None, &ReferenceSpec::Auto(Some(path))).unwrap();
    assert_eq!(auto.rows[0].reference_source, "file");
    let fallback = evaluate(&insts, Method::Nn2opt, None, &ReferenceSpec::Auto(None)).unwrap();
    assert_eq!(fallback.rows[0].reference_source, "nn2opt");
    assert_eq!(fallback.rows[0].gap, 0.0);
    let missing = dir.path().join("other.jsonl");
    std::fs::write(&missing, "{\"id\":\"nope\",\"length\":1.0}\n").unwrap();
    assert!(evaluate(&insts, Method::Nn2opt, None, &ReferenceSpec::File(missing)).is_err());
}

#[test]
fn empty_reports_are_rejected() {
    assert!(GapReport::from_rows(Vec::<GapRow>::new()).is_err());
}
