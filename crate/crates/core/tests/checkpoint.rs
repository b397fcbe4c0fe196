mod common;

use common::rng;
use wingan_core::checkpoint::{config_hash, peek_dtype, Checkpoint, CheckpointError, Group, RngState};
use wingan_core::networks::{Discriminator, DiscriminatorSpec, Generator, GeneratorSpec};
use wingan_tensor::{DType, ParamStore, Tensor};

fn spec() -> GeneratorSpec {
    let mut s = GeneratorSpec::strans(16, 8).unwrap();
    s.latent_dim = 8;
    s
}

#[test]
fn network_state_survives_a_file_roundtrip() {
    let (g, gs) = Generator::build::<f32, _>(&spec(), &mut rng(1)).unwrap();
    let dspec = DiscriminatorSpec::new(16, 8);
    let (_, ds) = Discriminator::build::<f32, _>(&dspec, &mut rng(2)).unwrap();
    let ck = Checkpoint {
        step: 123,
        config_hash: config_hash(&serde_json::to_string(&spec()).unwrap()),
        meta: serde_json::json!({"generator": spec()}).to_string(),
        rng: RngState {
            seed: 9,
            stream: 1,
            word_pos: 77,
        },
        groups: vec![Group::from_store("generator", &gs), Group::from_store("discriminator", &ds)],
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck/latest.wgck");
    ck.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(peek_dtype(&bytes), Some(DType::F32));
    let back = Checkpoint::<f32>::load(&path).unwrap();
    assert_eq!(back, ck);

    // A fresh network with other init receives the saved values.
    let (g2, mut gs2) = Generator::build::<f32, _>(&spec(), &mut rng(5)).unwrap();
    back.group("generator").unwrap().load_into(&mut gs2).unwrap();
    let z = Tensor::randn(&[2, 8], 1.0, &mut rng(3));
    assert_eq!(g.generate(&gs, &z, None).unwrap().data(), g2.generate(&gs2, &z, None).unwrap().data());
    assert!(matches!(back.group("ema"), Err(CheckpointError::MissingGroup(_))));
    assert!(Checkpoint::<f64>::load(&path).is_err());

    // Stores of another architecture are rejected.
    let mut other: ParamStore<f32> = Generator::build(&GeneratorSpec::strans(32, 8).map(|mut s| {
        s.latent_dim = 8;
        s
    }).unwrap(), &mut rng(0))
    .unwrap()
    .1;
    assert!(matches!(back.group("generator").unwrap().load_into(&mut other), Err(CheckpointError::Mismatch(_))));
}

#[test]
fn truncated_files_are_rejected() {
    let (_, gs) = Generator::build::<f64, _>(&spec(), &mut rng(1)).unwrap();
    let ck = Checkpoint {
        step: 0,
        config_hash: [0; 32],
        meta: String::new(),
        rng: RngState::default(),
        groups: vec![Group::from_store("generator", &gs)],
    };
    let bytes = ck.to_bytes();
    for cut in [10, bytes.len() / 2, bytes.len() - 1] {
        assert!(Checkpoint::<f64>::from_bytes(&bytes[..cut]).is_err());
    }
    let mut wrong_version = bytes.clone();
    wrong_version[4] = 9;
    assert!(Checkpoint::<f64>::from_bytes(&wrong_version).is_err());
}
