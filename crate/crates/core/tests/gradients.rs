use indirect_core::rng::{rng_for, Stream};
use indirect_core::{
    indirect_nll, Activation, Architecture, ClassifierParams, FeatureMatrix, SimplexVector,
    TransitionMatrix, WeakDataset,
};
use rand::Rng;

fn constructors() -> Vec<(&'static str, TransitionMatrix)> {
    let props = vec![
        SimplexVector::new(vec![0.7, 0.2, 0.1]).unwrap(),
        SimplexVector::new(vec![0.1, 0.6, 0.3]).unwrap(),
        SimplexVector::new(vec![0.2, 0.2, 0.6]).unwrap(),
        SimplexVector::new(vec![0.3, 0.4, 0.3]).unwrap(),
    ];
    let priors = SimplexVector::new(vec![0.3, 0.3, 0.2, 0.2]).unwrap();
    vec![
        ("identity", TransitionMatrix::identity(3).unwrap()),
        ("ccn", TransitionMatrix::class_conditional_noise(3, 0.3).unwrap()),
        ("complementary", TransitionMatrix::uniform_complementary(3).unwrap()),
        ("coarse", TransitionMatrix::coarse_partition(3, &[vec![0, 1], vec![2]]).unwrap()),
        ("pu", TransitionMatrix::pu_censoring(0.4).unwrap()),
        ("llp", TransitionMatrix::llp_from_proportions(&props, &priors).unwrap()),
    ]
}

fn architectures() -> Vec<Architecture> {
    vec![
        Architecture::Linear,
        Architecture::Mlp { hidden: vec![5], activation: Activation::Tanh },
        Architecture::Mlp { hidden: vec![4, 3], activation: Activation::Relu },
    ]
}

fn random_dataset(m: &TransitionMatrix, n: usize, d: usize, seed: u64) -> WeakDataset {
    let mut rng = rng_for(seed, Stream::Probe);
    let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    // Only observations with positive mass for some class are possible.
    let possible: Vec<usize> = (0..m.n_y()).filter(|&y| m.row(y).iter().any(|&v| v > 0.0)).collect();
    let obs = (0..n).map(|_| possible[rng.random_range(0..possible.len())]).collect();
    WeakDataset::new("random", FeatureMatrix::new(n, d, data).unwrap(), obs, m.clone()).unwrap()
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (name, m) in constructors() {
        for (a, arch) in architectures().into_iter().enumerate() {
            for trial in 0..3u64 {
                let seed = trial * 100 + a as u64;
                let data = random_dataset(&m, 12, 3, seed);
                let mut params = ClassifierParams::init(arch.clone(), 3, m.n_z(), seed).unwrap();
                // Keep ReLU units away from their kink.
                let mut rng = rng_for(seed, Stream::Subset);
                for w in params.flat.iter_mut() {
                    *w += rng.random_range(-0.5..0.5);
                }
                let batch: Vec<usize> = (0..data.len()).collect();
                let analytic = indirect_nll(&params, &data, &batch).unwrap().grad;
                for p in 0..params.n_params() {
                    let mut plus = params.clone();
                    plus.flat[p] += h;
                    let mut minus = params.clone();
                    minus.flat[p] -= h;
                    let fd = (indirect_nll(&plus, &data, &batch).unwrap().loss
                        - indirect_nll(&minus, &data, &batch).unwrap().loss)
                        / (2.0 * h);
                    let rel = (fd - analytic[p]).abs() / fd.abs().max(analytic[p].abs()).max(1e-6);
                    worst = worst.max(rel);
                    assert!(rel <= 1e-5, "{name} {arch:?} param {p}: fd {fd} vs analytic {}", analytic[p]);
                }
            }
        }
    }
    println!("worst relative gradient error {worst:.3e}");
}
