mod common;

use common::{max_relative_error, mlm_example, span_example, tiny_model};
use fffner::formulate::{FormulationVariant, Label};

fn check(name: &str, joint: bool, make: impl Fn(&fffner::encoder::ModelParams, u64) -> Vec<fffner::encoder::TrainExample>) {
    for seed in 0..10 {
        let p = tiny_model(seed, 8, 3, joint);
        let batch = make(&p, seed);
        let err = max_relative_error(&p, &batch, 1e-5);
        eprintln!("{name} seed {seed}: {err:.2e}");
        assert!(err < 1e-4, "{name} seed {seed}: relative error {err:.3e}");
    }
}

#[test]
fn positive_loss_matches_finite_differences() {
    check("pos", false, |p, s| vec![span_example(p, s, FormulationVariant::Fff, Label::Positive(1))]);
}

#[test]
fn negative_loss_matches_finite_differences() {
    check("neg", false, |p, s| vec![span_example(p, s, FormulationVariant::Fff, Label::Negative)]);
}

#[test]
fn joint_loss_matches_finite_differences() {
    check("joint", true, |p, s| {
        vec![
            span_example(p, s, FormulationVariant::SpanTypeTogether, Label::Negative),
            span_example(p, s + 100, FormulationVariant::SpanTypeTogether, Label::Positive(2)),
        ]
    });
}

#[test]
fn mlm_loss_matches_finite_differences() {
    check("mlm", false, |p, s| vec![mlm_example(p, s), mlm_example(p, s + 50)]);
}

#[test]
fn mixed_batch_matches_finite_differences() {
    check("mixed", false, |p, s| {
        vec![
            span_example(p, s, FormulationVariant::Fff, Label::Positive(0)),
            span_example(p, s + 1, FormulationVariant::NoBrackets, Label::Negative),
            span_example(p, s + 2, FormulationVariant::NotMask, Label::Positive(2)),
        ]
    });
}

#[test]
fn duplicated_batch_gives_identical_gradient() {
    let p = tiny_model(3, 8, 3, false);
    let a = span_example(&p, 1, FormulationVariant::Fff, Label::Positive(1));
    let b = span_example(&p, 2, FormulationVariant::Fff, Label::Negative);
    let g1 = p.gradient(&[a.clone(), b.clone()], None).unwrap();
    let g2 = p.gradient(&[a.clone(), b.clone(), a, b], None).unwrap();
    assert!((g1.loss - g2.loss).abs() < 1e-12);
    for (x, y) in g1.grad.iter().zip(&g2.grad) {
        assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
    }
}

#[test]
fn untouched_tensors_get_zero_gradient() {
    let p = tiny_model(4, 8, 3, false);
    let neg = span_example(&p, 1, FormulationVariant::Fff, Label::Negative);
    let g = p.gradient(&[neg], None).unwrap().grad;
    assert!(g[p.layout.type_w.clone()].iter().chain(&g[p.layout.type_b.clone()]).all(|&x| x == 0.0));
    let mlm = mlm_example(&p, 1);
    let g = p.gradient(&[mlm], None).unwrap().grad;
    assert!(g[p.layout.ent_w.start..].iter().all(|&x| x == 0.0));
}
