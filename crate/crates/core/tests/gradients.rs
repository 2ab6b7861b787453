use std::time::Instant;

use lgfa::gradcheck::{
    end_to_end_check, primitive_suite, run_suite, CheckSettings, END_TO_END_TOLERANCE, PRIMITIVE_TOLERANCE,
};
use lgfa::model::LgfaConfig;
use lgfa::tensor::{Graph, OpKind, Tensor};

#[test]
fn primitives_match_finite_differences() {
    for seed in [0, 1, 2] {
        for r in primitive_suite(seed, CheckSettings::default()).unwrap() {
            assert!(
                r.max_rel_error < PRIMITIVE_TOLERANCE,
                "seed {seed}: {} max rel err {:.3e} at {}[{}]",
                r.name,
                r.max_rel_error,
                r.worst_input,
                r.worst_index
            );
        }
    }
}

#[test]
fn full_suite_passes_quickly() {
    let start = Instant::now();
    let report = run_suite(7, CheckSettings::default()).unwrap();
    let elapsed = start.elapsed();
    print!("{}", report.to_table());
    assert!(report.passed, "{}", report.to_table());
    assert!(elapsed.as_secs() < 120, "suite took {elapsed:?}");
    assert!(report.checks.iter().any(|c| c.name == "lgfa[t/full]"));
    for c in report.checks.iter().filter(|c| c.name.starts_with("lgfa")) {
        assert_eq!(c.tolerance, END_TO_END_TOLERANCE);
    }
}

#[test]
fn injected_fault_is_caught_and_named() {
    for kind in [OpKind::LayerNorm, OpKind::Gelu, OpKind::Softmax, OpKind::MatMulNt] {
        let settings = CheckSettings {
            fault: Some(kind),
            ..Default::default()
        };
        let results = primitive_suite(3, settings).unwrap();
        let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
        assert!(failed.contains(&kind.name()), "{kind}: failures {failed:?}");
    }
}

#[test]
fn injected_fault_breaks_end_to_end_check() {
    let settings = CheckSettings {
        fault: Some(OpKind::LayerNorm),
        ..Default::default()
    };
    let r = end_to_end_check(&LgfaConfig::gradcheck(), 1, settings).unwrap();
    assert!(!r.passed);
    assert!(!r.worst_input.is_empty());
}

#[test]
fn matmul_sum_gradient_is_row_sums_of_b() {
    let mut g = Graph::new();
    let a = g.variable(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap());
    let b = g.constant(Tensor::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]).unwrap());
    let y = g.matmul(a, b).unwrap();
    let loss = g.sum(y);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(a).unwrap(), &[11.0, 15.0, 11.0, 15.0]);
}

#[test]
fn backward_twice_is_identical() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::from_rows(&[&[0.3, -1.0, 2.0], &[1.5, 0.2, -0.4]]).unwrap());
    let gamma = g.variable(Tensor::filled(&[3], 1.0));
    let beta = g.variable(Tensor::zeros(&[3]));
    let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
    let s = g.softmax_rows(y).unwrap();
    let loss = g.cross_entropy(s, &[0, 2]).unwrap();
    assert_eq!(g.backward(loss).unwrap(), g.backward(loss).unwrap());
}
