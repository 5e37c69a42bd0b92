use gaitxai_core::network::{build_architecture, ArchConfig, Architecture, Mode};
use gaitxai_core::relevance::{lrp_explain, Rule, RuleAssignment};
use gaitxai_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHAPE: [usize; 3] = [50, 15, 12];

fn rules() -> [Rule; 4] {
    [
        Rule::ZPlus,
        Rule::Flat,
        Rule::AlphaBeta { alpha: 1.0, beta: 0.0 },
        Rule::AlphaBeta { alpha: 2.0, beta: 1.0 },
    ]
}

#[test]
fn bias_free_relu_networks_conserve_relevance() {
    let cfg = ArchConfig::default();
    for arch in Architecture::ALL {
        for seed in 0..5u64 {
            let mut net = build_architecture::<f64>(arch, &SHAPE, 4, &cfg).unwrap();
            net.init_parameters(seed);
            let mut r = ChaCha8Rng::seed_from_u64(seed + 100);
            let x = Tensor::from_fn(&SHAPE, |_| r.random_range(-2.0..2.0)).unwrap();
            let trace = net.forward(&x, Mode::Infer).unwrap();
            let class = seed as usize % 4;
            for rule in rules() {
                let map = lrp_explain(&net, &trace, class, &RuleAssignment::uniform(&net, rule)).unwrap();
                let fc = map.logit;
                let tol = 1e-4 * fc.abs().max(1.0);
                assert!((map.sum() - fc).abs() <= tol, "{arch} seed {seed} {rule}: {} vs {fc}", map.sum());
                for step in &map.steps {
                    assert!(
                        (step.relevance_out - step.relevance_in).abs() <= tol,
                        "{arch} seed {seed} {rule} layer {}: {:?}",
                        step.layer,
                        step
                    );
                }
            }
        }
    }
}
