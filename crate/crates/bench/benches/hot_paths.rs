use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use molcnp::baselines::{knn_fit_predict, rf_fit, rf_predict, ForestConfig, KnnMetric};
use molcnp::chem::{ecfp_fingerprint, parse_smiles, tanimoto, Fingerprint};
use molcnp::cnp::{episode_loss, predict, sample_episode, CnpConfig, CnpModel};

const CAFFEINE: &str = "Cn1cnc2c1c(=O)n(C)c(=O)n2C";

fn random_fp(nbits: usize, rng: &mut ChaCha8Rng) -> Fingerprint {
    let mut fp = Fingerprint::zeros(nbits, 0);
    for b in 0..nbits {
        if rng.gen_bool(0.5) {
            fp.set(b);
        }
    }
    fp
}

fn bench_fingerprint(c: &mut Criterion) {
    let mol = parse_smiles(CAFFEINE).unwrap();
    c.bench_function("parse_smiles caffeine", |b| {
        b.iter(|| parse_smiles(black_box(CAFFEINE)).unwrap())
    });
    c.bench_function("ecfp r3/1024 caffeine", |b| {
        b.iter(|| ecfp_fingerprint(black_box(&mol), 3, 1024))
    });
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_fp(1024, &mut rng);
    let b2 = random_fp(1024, &mut rng);
    c.bench_function("tanimoto 1024", |b| {
        b.iter(|| tanimoto(black_box(&a), black_box(&b2)).unwrap())
    });
}

fn bench_cnp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let config = CnpConfig {
        nbits: 256,
        encoder_hidden: vec![64, 64],
        repr_dim: 32,
        decoder_hidden: vec![64, 64],
        variance_floor: 1e-6,
    };
    let model = CnpModel::init(&config, &mut rng);
    let fps: Vec<Fingerprint> = (0..192).map(|_| random_fp(256, &mut rng)).collect();
    let ys: Vec<f64> = (0..192).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let points: Vec<(&Fingerprint, f64)> = fps.iter().zip(ys.iter().copied()).collect();
    let episode = sample_episode("bench", &points, &mut rng, (32, 32), (128, 128)).unwrap();

    c.bench_function("episode_loss c32/t128 w64", |b| {
        b.iter(|| episode_loss(black_box(&model), black_box(&episode)).unwrap())
    });

    let ctx: Vec<&Fingerprint> = fps[..64].iter().collect();
    let tgt: Vec<&Fingerprint> = fps[64..].iter().collect();
    c.bench_function("predict c64/t128 w64", |b| {
        b.iter(|| predict(black_box(&model), &ctx, &ys[..64], &tgt).unwrap())
    });
}

fn bench_baselines(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fps: Vec<Fingerprint> = (0..500).map(|_| random_fp(256, &mut rng)).collect();
    let refs: Vec<&Fingerprint> = fps.iter().collect();
    let ys: Vec<f64> = (0..500).map(|_| rng.gen_range(-2.0..2.0)).collect();

    c.bench_function("knn k5 500x500", |b| {
        b.iter(|| knn_fit_predict(&refs, &ys, &refs, 5, KnnMetric::Hamming).unwrap())
    });

    let config = ForestConfig {
        n_estimators: 20,
        ..ForestConfig::default()
    };
    c.bench_function("rf fit 20 trees n500", |b| {
        b.iter(|| rf_fit(&refs, &ys, &config, 9).unwrap())
    });
    let forest = rf_fit(&refs, &ys, &config, 9).unwrap();
    c.bench_function("rf predict 500", |b| {
        b.iter(|| rf_predict(black_box(&forest), &refs))
    });
}

criterion_group!(benches, bench_fingerprint, bench_cnp, bench_baselines);
criterion_main!(benches);
