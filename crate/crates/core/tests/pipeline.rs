use hashcbr_core::cbr::{CbrEngine, EngineConfig, Hasher};
use hashcbr_core::data::{load_sparse_text, normalize, split, write_sparse_text, DatasetSchema, SparseCase};
use hashcbr_core::index::{linear_scan, retrieve, HashIndex, RetrieveOptions};
use hashcbr_core::network::{hash, load_checkpoint, relaxed_code, save_checkpoint, Hyperparams};
use hashcbr_core::seed::{self, Stream};
use hashcbr_core::synth::{heterogeneous, HeterogeneousSpec};
use hashcbr_core::training::{train, TrainConfig};
use hashcbr_core::{HashFunction, NetworkParams};

fn small_fixture(n: usize, s: u64) -> (Vec<SparseCase>, Vec<SparseCase>, usize) {
    let ds = heterogeneous(
        &HeterogeneousSpec {
            n,
            ..HeterogeneousSpec::default()
        },
        s,
    );
    let (a, b) = split(&ds.cases, 0.8, seed::derive(s, Stream::Split)).unwrap();
    (a, b, ds.dim)
}

fn small_hyper(lambda: f64) -> Hyperparams {
    Hyperparams {
        k_w: 16,
        k_v: 16,
        r: 16,
        hidden_width: 32,
        lambda,
        ..Hyperparams::default()
    }
}

fn trained(cases: &[SparseCase], dim: usize, hyper: &Hyperparams, epochs: usize) -> NetworkParams {
    let config = TrainConfig {
        epochs,
        patience: 0,
        seed: 4,
        ..TrainConfig::default()
    };
    train(cases, dim, hyper, &config).unwrap().params
}

fn mean_abs_code(cases: &[SparseCase], params: &NetworkParams) -> f64 {
    let codes: Vec<Vec<f64>> = cases.iter().map(|c| relaxed_code(&c.features, params).unwrap()).collect();
    let n: usize = codes.iter().map(Vec::len).sum();
    codes.iter().flatten().map(|v| v.abs()).sum::<f64>() / n as f64
}

#[test]
fn training_separates_classes() {
    let (train_cases, test_cases, dim) = small_fixture(600, 1);
    let params = trained(&train_cases, dim, &small_hyper(0.2), 20);
    let codes: Vec<(u32, Vec<f64>)> = test_cases
        .iter()
        .map(|c| (c.label, relaxed_code(&c.features, &params).unwrap()))
        .collect();
    let (mut within, mut between, mut nw, mut nb) = (0.0, 0.0, 0usize, 0usize);
    for (i, (li, zi)) in codes.iter().enumerate() {
        for (lj, zj) in &codes[i + 1..] {
            let s: f64 = zi.iter().zip(zj).map(|(a, b)| a * b).sum();
            if li == lj {
                within += s;
                nw += 1;
            } else {
                between += s;
                nb += 1;
            }
        }
    }
    assert!(within / nw as f64 > between / nb as f64);
}

#[test]
fn lambda_pushes_codes_toward_the_corners() {
    let (train_cases, _, dim) = small_fixture(2000, 2);
    let mags: Vec<f64> = [0.0, 0.4, 0.9]
        .iter()
        .map(|&l| mean_abs_code(&train_cases, &trained(&train_cases, dim, &small_hyper(l), 50)))
        .collect();
    assert!(mags.windows(2).all(|w| w[1] >= w[0]), "{mags:?}");
}

#[test]
fn validation_objective_trends_down() {
    let (train_cases, _, dim) = small_fixture(600, 3);
    let out = train(
        &train_cases,
        dim,
        &small_hyper(0.2),
        &TrainConfig {
            epochs: 20,
            patience: 0,
            seed: 3,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let first = out.log.first().unwrap().objective;
    let last = out.log.last().unwrap().objective;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn files_round_trip_through_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (train_cases, test_cases, dim) = small_fixture(300, 5);
    let data = dir.path().join("train.svm");
    write_sparse_text(&data, &train_cases, None).unwrap();
    let loaded = load_sparse_text(&data).unwrap();
    assert_eq!(loaded.cases.len(), train_cases.len());

    let mut schema = DatasetSchema::all_numeric(dim, loaded.label_names.clone());
    schema.fit_ranges(&loaded.cases);
    let cases = normalize(&loaded.cases, &schema);
    let hyper = small_hyper(0.2);
    let params = trained(&cases, dim, &hyper, 3);

    let ckpt = dir.path().join("model.ckpt");
    save_checkpoint(&params, &ckpt).unwrap();
    let back = load_checkpoint(&ckpt).unwrap();
    for c in &cases {
        assert_eq!(hash(c, &params).unwrap(), hash(c, &back).unwrap());
    }

    let index = HashIndex::build(&cases, &back).unwrap();
    let mut dump = Vec::new();
    index.write_dump(&mut dump).unwrap();
    let restored = HashIndex::from_dump(&mut dump.as_slice(), &cases).unwrap();
    assert_eq!(restored, index);

    let queries = normalize(&test_cases, &schema);
    let opts = RetrieveOptions {
        top_n: cases.len(),
        max_radius: 16,
        ..RetrieveOptions::default()
    };
    for q in queries.iter().take(10) {
        // asking for the whole case base forces expansion over every bucket
        let hashed = retrieve(&restored, &q.features, &back, &opts).unwrap();
        let exact = linear_scan(&restored, &q.features, cases.len()).unwrap();
        assert_eq!(hashed.neighbors, exact.neighbors);
    }
}

#[test]
fn stream_of_250_triggers_two_updates_and_keeps_codes_consistent() {
    let (train_cases, rest, dim) = small_fixture(400, 6);
    let hyper = small_hyper(0.2);
    let params = trained(&train_cases[..50], dim, &hyper, 2);
    let mut engine = CbrEngine::new(
        Hasher::Learned(params),
        &train_cases[..50],
        EngineConfig {
            hyper: hyper.clone(),
            ..EngineConfig::default()
        },
    )
    .unwrap();
    let stream: Vec<&SparseCase> = train_cases[50..].iter().chain(&rest).take(250).collect();
    assert_eq!(stream.len(), 250);
    let mut last_updates = 0;
    for c in stream {
        engine.solve(c.id, c.features.clone(), Some(c.label)).unwrap();
        assert!(engine.updates() >= last_updates);
        last_updates = engine.updates();
        assert_eq!(engine.updates(), engine.solved() / hyper.n_u as u64);
    }
    assert_eq!(engine.updates(), 2);
    for (id, code) in engine.index().codes() {
        let case = engine.index().case(id).unwrap();
        assert_eq!(&engine.hasher().hash_features(&case.features).unwrap(), code);
    }
}
