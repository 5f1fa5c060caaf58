use std::time::Instant;

use sigseg_core::gradcheck::{self, CheckedOp, GradcheckOptions, TOLERANCE};
use sigseg_core::{Shape, Tape, Tensor};

#[test]
fn every_op_passes_finite_differences() {
    let start = Instant::now();
    for seed in [0, 1, 2] {
        let rows = gradcheck::run(&GradcheckOptions {
            seed,
            inject_fault: None,
        })
        .unwrap();
        assert_eq!(rows.len(), CheckedOp::ALL.len());
        for r in &rows {
            assert!(
                r.passed && r.max_rel_err < TOLERANCE,
                "seed {seed} {}: {:.3e}",
                r.op.name(),
                r.max_rel_err
            );
        }
    }
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn perturbed_backward_is_caught_for_every_op() {
    for op in CheckedOp::ALL {
        let rows = gradcheck::run(&GradcheckOptions {
            seed: 0,
            inject_fault: Some(op),
        })
        .unwrap();
        for r in rows {
            assert_eq!(r.passed, r.op != op, "{} with fault on {}", r.op.name(), op.name());
        }
    }
}

#[test]
fn op_names_round_trip() {
    for op in CheckedOp::ALL {
        assert_eq!(CheckedOp::parse(op.name()), Some(op));
    }
    assert_eq!(CheckedOp::parse("softmax"), None);
}

#[test]
fn zero_grad_makes_backward_independent_of_history() {
    let x0 = Tensor::uniform(Shape::new(1, 2, 4, 4), -1.0, 1.0, 3);
    let w0 = Tensor::uniform(Shape::new(2, 2, 3, 3), -1.0, 1.0, 4);
    let mut tape = Tape::new();
    let x = tape.leaf(x0, true);
    let w = tape.leaf(w0, true);
    let y = tape.conv2d(x, w, None, 1, 1).unwrap();
    let s = tape.sigmoid(y);
    let l = tape.sum(s);
    tape.backward(l).unwrap();
    let first = tape.grad(w).unwrap().to_vec();
    tape.backward(l).unwrap();
    tape.backward(l).unwrap();
    tape.zero_grad();
    tape.backward(l).unwrap();
    assert_eq!(tape.grad(w).unwrap(), first.as_slice());
}
