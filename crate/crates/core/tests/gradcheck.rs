use memdep_core::autodiff::gradcheck::{check_inputs, op_suite, FD_STEP};
use memdep_core::autodiff::{Tape, Tensor};

#[test]
fn every_op_matches_central_differences() {
    let reports = op_suite(20, 7).unwrap();
    assert!(reports.len() >= 20);
    for r in &reports {
        assert_eq!(r.trials, 20);
        assert!(r.max_rel_err <= 1e-4, "{}: {:.3e}", r.op, r.max_rel_err);
    }
}

#[test]
fn matmul_sum_gradient_is_column_sums_of_b() {
    // d/dA Σ(A·B) = 1·Bᵀ: every row equals the row sums of B
    let a = Tensor::new(&[3, 4], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
    let b = Tensor::new(&[4, 2], vec![1.0, 2.0, -1.0, 0.5, 3.0, -2.0, 0.25, 4.0]).unwrap();
    let mut tape = Tape::new();
    let (va, vb) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
    let c = tape.matmul(va, vb).unwrap();
    let loss = tape.sum(c).unwrap();
    tape.backward(loss).unwrap();
    let g = tape.grad(va).unwrap();
    let row_sums = [3.0, -0.5, 1.0, 4.25];
    for r in 0..3 {
        assert_eq!(g.row(r), row_sums);
    }
    let err = check_inputs(&[a, b], FD_STEP, |t, v| {
        let c = t.matmul(v[0], v[1])?;
        t.sum(c)
    })
    .unwrap();
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn sigmoid_weighted_composite_matches_differences() {
    let w = Tensor::new(&[2, 3], vec![0.3, -1.2, 0.8, 2.0, -0.1, 0.0]).unwrap();
    let x = Tensor::new(&[2, 3], vec![1.5, 0.2, -0.7, 0.4, 1.1, -2.0]).unwrap();
    let err = check_inputs(&[w, x], FD_STEP, |t, v| {
        let s = t.sigmoid(v[0])?;
        let p = t.mul(s, v[1])?;
        t.sum(p)
    })
    .unwrap();
    assert!(err <= 1e-5, "{err}");
}

#[test]
fn sum_gradient_is_all_ones_and_disconnected_leaf_stays_empty() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::filled(&[2, 3, 2], 0.7));
    let unused = tape.leaf(Tensor::filled(&[4], 1.0));
    let loss = tape.sum(x).unwrap();
    tape.backward(loss).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 1.0));
    assert!(tape.grad(unused).is_none());
    // a second backward accumulates
    tape.backward(loss).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 2.0));
}
