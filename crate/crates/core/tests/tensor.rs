use memdep_core::autodiff::gradcheck::{check_inputs, FD_STEP};
use memdep_core::autodiff::{Tape, Tensor, TensorError};

fn naive(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[i * m + j] = (0..k).map(|l| a[i * k + l] * b[l * m + j]).sum();
        }
    }
    out
}

#[test]
fn element_count_must_match_shape() {
    assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
    assert!(matches!(Tensor::new(&[2, 3], vec![0.0; 5]), Err(TensorError::ElementCount { .. })));
    assert!(matches!(Tensor::new(&[0, 3], vec![]), Err(TensorError::EmptyExtent { .. })));
}

#[test]
fn reshape_keeps_data() {
    let t = Tensor::new(&[2, 3], (0..6).map(|x| x as f64).collect()).unwrap();
    let r = t.clone().reshaped(&[3, 2]).unwrap();
    assert_eq!(r.data(), t.data());
    assert_eq!(r.shape(), &[3, 2]);
    assert!(t.reshaped(&[4, 2]).is_err());
}

#[test]
fn products_match_naive_sums() {
    let a: Vec<f64> = (0..12).map(|x| x as f64 * 0.5 - 2.0).collect();
    let b: Vec<f64> = (0..12).map(|x| (x as f64).sin()).collect();
    let mut tape = Tape::new();
    let av = tape.leaf(Tensor::new(&[3, 4], a.clone()).unwrap());
    let bv = tape.leaf(Tensor::new(&[4, 3], b.clone()).unwrap());
    let c = tape.matmul(av, bv).unwrap();
    for (x, e) in tape.value(c).data().iter().zip(naive(&a, &b, 3, 4, 3)) {
        assert!((x - e).abs() < 1e-12);
    }
    // b read as 3×4 and transposed
    let bt = tape.leaf(Tensor::new(&[3, 4], b.clone()).unwrap());
    let d = tape.matmul_nt(av, bt).unwrap();
    let b_t: Vec<f64> = (0..4).flat_map(|l| (0..3).map(move |j| (j, l))).map(|(j, l)| b[j * 4 + l]).collect();
    for (x, e) in tape.value(d).data().iter().zip(naive(&a, &b_t, 3, 4, 3)) {
        assert!((x - e).abs() < 1e-12);
    }
}

#[test]
fn quadratic_gradient_is_exact_to_roundoff() {
    let x = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
    let err = check_inputs(&[x], FD_STEP, |t, v| {
        let sq = t.mul(v[0], v[0])?;
        t.sum(sq)
    })
    .unwrap();
    assert!(err < 1e-9, "{err}");
}
