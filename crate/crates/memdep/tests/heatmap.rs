use memdep::heatmap;
use memdep_core::dataset;
use memdep_core::envgym::{HallwayParams, TaskParams};
use memdep_core::model::{Model, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn parse_pgm(bytes: &[u8]) -> (usize, usize, &[u8]) {
    let mut fields = bytes.splitn(4, |&b| b == b'\n');
    assert_eq!(fields.next(), Some(&b"P5"[..]));
    let dims = std::str::from_utf8(fields.next().unwrap()).unwrap();
    let (w, h) = dims.split_once(' ').unwrap();
    assert_eq!(fields.next(), Some(&b"255"[..]));
    (w.parse().unwrap(), h.parse().unwrap(), fields.next().unwrap())
}

#[test]
fn export_writes_every_head_with_causal_rows() {
    let params = TaskParams::Hallway(HallwayParams { length: 6, object_pool: 4 });
    let ds = dataset::generate(&params, 1, 2).unwrap();
    let t = &ds.trajectories[0];
    let config = ModelConfig { d_model: 16, ff_width: 32, max_steps: 32, ..ModelConfig::desk() };
    let model = Model::new(config.clone(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = heatmap::export(&model, t, dir.path()).unwrap();
    // all heads plus sigmoid maps of the supervised head, csv and pgm each
    let heads = config.n_layers * config.n_heads + config.supervised_heads().len();
    assert_eq!(files.len(), 2 * heads);
    let layer = config.supervised_layer();
    assert!(dir.path().join(format!("L{layer}H0_sigmoid.pgm")).exists());

    let n = 2 * t.len();
    for l in 0..config.n_layers {
        for h in 0..config.n_heads {
            let pgm = std::fs::read(dir.path().join(format!("L{l}H{h}.pgm"))).unwrap();
            let (w, hgt, pixels) = parse_pgm(&pgm);
            assert_eq!((w, hgt, pixels.len()), (n, n, n * n));
            let csv = std::fs::read_to_string(dir.path().join(format!("L{l}H{h}.csv"))).unwrap();
            let rows: Vec<Vec<f64>> =
                csv.lines().map(|r| r.split(',').map(|x| x.parse().unwrap()).collect()).collect();
            assert_eq!(rows.len(), n);
            for (r, row) in rows.iter().enumerate() {
                assert_eq!(row.len(), n);
                let sum: f64 = row[..=r].iter().sum();
                assert!((sum - 1.0).abs() <= 1e-9, "row {r} sums to {sum}");
                assert!(row[r + 1..].iter().all(|&x| x == 0.0), "row {r} attends to the future");
                for (c, &v) in row.iter().enumerate() {
                    assert_eq!(pixels[r * n + c], (255.0 * v).round() as u8);
                }
            }
        }
    }
}

#[test]
fn pgm_quantization() {
    let m = memdep_core::autodiff::Tensor::new(&[2, 2], vec![0.0, 1.0, 0.5, 0.002]).unwrap();
    let (w, h, px) = {
        let b = heatmap::to_pgm(&m);
        let (w, h, px) = parse_pgm(&b);
        (w, h, px.to_vec())
    };
    assert_eq!((w, h), (2, 2));
    assert_eq!(px, vec![0, 255, 128, 1]);
    assert_eq!(heatmap::to_csv(&m), "0,1\n0.5,0.002\n");
}
