//! Finite-difference validation of the analytic gradients.

mod common;

use common::{random_attrs, random_featmap, random_model, rng};
use rand::prelude::*;
use selar::model::{Aggregation, ProjectionModel, Space};
use selar::tensor::{Matrix, Tensor};
use selar::train::grad_check;

#[test]
fn finite_differences_agree_in_every_space_and_pooling() {
    let mut rng = rng(9001);
    for &space in &Space::ALL {
        for aggregation in [Aggregation::Gap, Aggregation::Gmp] {
            let mut worst = 0.0f64;
            let mut checked = 0usize;
            for instance in 0..8 {
                let m = *[1usize, 2, 3, 5].choose(&mut rng).unwrap();
                let d = rng.random_range(2..8);
                let l = rng.random_range(2..7);
                let classes = rng.random_range(2..6);
                let attrs = random_attrs(&mut rng, classes, l);
                let model =
                    random_model(&mut rng, l, d, aggregation, space, instance % 2 == 0);
                let featmap = random_featmap(&mut rng, m, d);
                let label = rng.random_range(0..classes);
                let report = grad_check(&model, &featmap, label, &attrs, 1e-3).unwrap();
                assert!(
                    report.entries_checked > 0,
                    "{space}/{aggregation} instance {instance}: every entry was flagged"
                );
                worst = worst.max(report.max_rel_error);
                checked += report.entries_checked;
            }
            assert!(
                worst <= 1e-4,
                "{space}/{aggregation}: worst relative error {worst:.3e} over {checked} entries"
            );
        }
    }
}

#[test]
fn bias_entries_are_covered_by_the_check() {
    let mut rng = rng(31);
    let attrs = random_attrs(&mut rng, 3, 4);
    let model = random_model(&mut rng, 4, 5, Aggregation::Gap, Space::Attribute, true);
    let featmap = random_featmap(&mut rng, 3, 5);
    let report = grad_check(&model, &featmap, 1, &attrs, 1e-3).unwrap();
    // 4x5 weights plus 4 bias entries, all small enough to check exhaustively.
    assert_eq!(report.entries_checked + report.flagged_kinks, 24);
    assert!(report.max_rel_error <= 1e-4);
}

#[test]
fn average_pooling_never_flags_kinks() {
    let mut rng = rng(17);
    for _ in 0..10 {
        let m = rng.random_range(1..5);
        let d = rng.random_range(2..6);
        let l = rng.random_range(2..6);
        let classes = rng.random_range(2..5);
        let space = *[Space::Visual, Space::Attribute, Space::Class]
            .choose(&mut rng)
            .unwrap();
        let attrs = random_attrs(&mut rng, classes, l);
        let model = random_model(&mut rng, l, d, Aggregation::Gap, space, false);
        let featmap = random_featmap(&mut rng, m, d);
        let label = rng.random_range(0..classes);
        let report = grad_check(&model, &featmap, label, &attrs, 1e-3).unwrap();
        assert_eq!(report.flagged_kinks, 0, "average pooling has no argmax to flip");
        assert!(report.max_rel_error <= 1e-4);
    }
}

#[test]
fn a_constructed_argmax_tie_is_flagged_not_failed() {
    // Both locations produce the same attribute score, so any finite step
    // flips the pooled argmax: location 0 holds channel 0, location 1 holds
    // channel 1, and the row weights them equally.
    let featmap = Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let weights = Matrix::new(1, 2, vec![0.5, 0.5]).unwrap();
    let model =
        ProjectionModel::new(weights, None, Aggregation::Gmp, Space::Attribute).unwrap();
    let attrs = selar::model::AttributeMatrix::new(
        vec!["a".into(), "b".into()],
        Matrix::new(2, 1, vec![1.0, 1.0]).unwrap(),
    )
    .unwrap()
    .normalize_rows()
    .unwrap();
    let report = grad_check(&model, &featmap, 0, &attrs, 1e-3).unwrap();
    assert_eq!(report.flagged_kinks, 2);
    assert_eq!(report.entries_checked, 0);
    assert_eq!(report.max_rel_error, 0.0);
}
