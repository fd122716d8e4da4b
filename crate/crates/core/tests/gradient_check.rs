use rand::Rng;
use rand_distr::StandardNormal;
use snv_core::network::{DenseNet, ParamIndex};
use snv_core::seed::indexed_rng;

const SIZES: [usize; 4] = [6, 5, 4, 3];
const STEP: f64 = 1e-6;

/// Smallest |pre-activation| over every hidden unit and input.
fn min_kink_distance(net: &DenseNet, inputs: &[Vec<f64>]) -> f64 {
    let p = net.params();
    let mut closest = f64::INFINITY;
    for x in inputs {
        let mut a = x.clone();
        for l in 0..net.hidden_layers() {
            let w = &p.weights[l];
            let z: Vec<f64> = (0..w.rows())
                .map(|r| (0..w.cols()).map(|c| w.get(r, c) * a[c]).sum::<f64>() + p.biases[l][r])
                .collect();
            closest = z.iter().fold(closest, |m, v| m.min(v.abs()));
            a = z.into_iter().map(|v| v.max(0.0)).collect();
        }
    }
    closest
}

fn check(seed: u64, partition: Option<std::ops::Range<usize>>) {
    let mut rng = indexed_rng(seed, 0);
    let mut net = DenseNet::new(&SIZES, &mut rng).unwrap();
    for b in net.params_mut().biases.iter_mut() {
        b.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
    }
    let range = partition.clone().unwrap_or(0..SIZES[3]);
    let (inputs, labels) = loop {
        let inputs: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..SIZES[0]).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        if min_kink_distance(&net, &inputs) > 1e-3 {
            let labels = (0..8).map(|_| rng.random_range(range.clone())).collect::<Vec<usize>>();
            break (inputs, labels);
        }
    };

    let (_, grad) = net.grad(&inputs, &labels, partition.clone()).unwrap();
    let indices: Vec<ParamIndex> = net.params().indices().collect();
    assert_eq!(indices.len(), 6 * 5 + 5 + 5 * 4 + 4 + 4 * 3 + 3);
    for idx in indices {
        let orig = net.params().get(idx);
        *net.params_mut().get_mut(idx) = orig + STEP;
        let up = net.loss(&inputs, &labels, partition.clone()).unwrap();
        *net.params_mut().get_mut(idx) = orig - STEP;
        let down = net.loss(&inputs, &labels, partition.clone()).unwrap();
        *net.params_mut().get_mut(idx) = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let analytic = grad.get(idx);
        let tol = 1e-5 * analytic.abs().max(numeric.abs()) + 1e-8;
        assert!(
            (analytic - numeric).abs() <= tol,
            "seed {seed} {idx:?}: analytic {analytic} numeric {numeric}"
        );
    }
}

#[test]
fn gradients_match_central_differences() {
    for seed in 0..20 {
        check(seed, None);
    }
}

#[test]
fn partition_gradients_match_central_differences() {
    for seed in 0..20 {
        check(100 + seed, Some(1..3));
    }
}
