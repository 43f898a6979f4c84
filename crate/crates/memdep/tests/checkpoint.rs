use memdep::checkpoint::{self, CheckpointError, Header};
use memdep_core::envgym::{HallwayParams, TaskParams};
use memdep_core::model::{Model, ModelConfig};
use memdep_core::profile::{Method, Profile};
use memdep_core::envgym::TaskKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model() -> (Header, Model) {
    let config = ModelConfig { d_model: 16, ff_width: 32, max_steps: 16, ..ModelConfig::desk() };
    let m = Model::new(config.clone(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let header = Header {
        model: config,
        task: Some(TaskParams::Hallway(HallwayParams { length: 6, object_pool: 4 })),
        train: Some(Profile::Desk.train_config(TaskKind::Hallway, Method::AttentionTuner, 3)),
    };
    (header, m)
}

#[test]
fn round_trip_preserves_every_bit() {
    let (header, m) = model();
    let bytes = checkpoint::encode(&header, m.params()).unwrap();
    let (h2, store) = checkpoint::decode(&bytes).unwrap();
    assert_eq!(h2, header);
    assert_eq!(checkpoint::encode(&h2, &store).unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &header, &m).unwrap();
    let (h3, m3) = checkpoint::load(&path).unwrap();
    assert_eq!(h3, header);
    assert_eq!(checkpoint::encode(&h3, m3.params()).unwrap(), bytes);
}

#[test]
fn corrupt_files_are_rejected() {
    let (header, m) = model();
    let bytes = checkpoint::encode(&header, m.params()).unwrap();
    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(checkpoint::decode(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(checkpoint::decode(&bad), Err(CheckpointError::Magic)));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(checkpoint::decode(&bad), Err(CheckpointError::Version(9))));
    let mut bad = bytes.clone();
    bad.push(0);
    assert!(checkpoint::decode(&bad).is_err());
    let mut bad = bytes.clone();
    let n = bad.len();
    bad[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
    assert!(matches!(checkpoint::decode(&bad), Err(CheckpointError::Tensor(..))));
}

#[test]
fn header_must_match_tensors() {
    let (mut header, m) = model();
    header.model.d_model = 32;
    header.model.ff_width = 64;
    let bytes = checkpoint::encode(&header, m.params()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(checkpoint::load(&path), Err(CheckpointError::Model(_))));
}
