use mtforge::moe_router::{
    gate_loss, gate_loss_grad, route, softmax_rows, top1_experts, RouterConfig,
};
use mtforge::rng;
use ndarray::Array2;
use rand::Rng;

fn random_logits(seed: u64, case: u64) -> (Array2<f64>, f64) {
    let mut r = rng::stream(seed, case);
    let t = r.gen_range(1..=64);
    let e = r.gen_range(2..=16);
    let scale = r.gen_range(0.1..4.0);
    let cf = [0.25, 0.5, 1.0, 1.25, 2.0, 3.0][r.gen_range(0..6)];
    (
        Array2::from_shape_fn((t, e), |_| r.gen_range(-scale..scale)),
        cf,
    )
}

/// Central finite-difference gradient of `l_aux` with the top-1 assignment of
/// the unperturbed logits held fixed.
pub fn numeric_grad(logits: &Array2<f64>, h: f64) -> Array2<f64> {
    let top1 = top1_experts(logits.view());
    let mut grad = Array2::zeros(logits.dim());
    for ((t, j), g) in grad.indexed_iter_mut() {
        let mut plus = logits.clone();
        plus[[t, j]] += h;
        let mut minus = logits.clone();
        minus[[t, j]] -= h;
        let lp = gate_loss(softmax_rows(plus.view()).view(), &top1).unwrap();
        let lm = gate_loss(softmax_rows(minus.view()).view(), &top1).unwrap();
        *g = (lp - lm) / (2.0 * h);
    }
    grad
}

#[test]
fn capacity_and_weights_hold_on_random_instances() {
    for case in 0..500 {
        let (logits, cf) = random_logits(21, case);
        let (t, e) = logits.dim();
        let cfg = RouterConfig {
            capacity_factor: cf,
            ..RouterConfig::new(e)
        };
        let r = route(logits.view(), &cfg).unwrap();
        let cap = (cf * t as f64 / e as f64).ceil() as usize;
        assert_eq!(r.capacity, cap);
        let mut load = vec![0; e];
        for (tok, a) in r.assignments.iter().enumerate() {
            assert!(a.len() <= 2);
            assert_eq!(r.dropped[tok], a.is_empty());
            if !a.is_empty() {
                let sum: f64 = a.iter().map(|x| x.weight).sum();
                assert!((sum - 1.0).abs() < 1e-9, "case {case}");
            }
            for x in a {
                load[x.expert] += 1;
            }
        }
        assert_eq!(load, r.expert_load);
        assert!(
            load.iter().all(|&l| l <= cap),
            "case {case}: {load:?} > {cap}"
        );
    }
}

/// `‖a - n‖∞ / max(‖a‖∞, ‖n‖∞)`, or `None` when both gradients vanish (an
/// exactly balanced top-1 assignment) and only the absolute error means
/// anything.
pub fn relative_error(a: &Array2<f64>, n: &Array2<f64>) -> (Option<f64>, f64) {
    let inf = |m: &Array2<f64>| m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let err = a
        .iter()
        .zip(n.iter())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = inf(a).max(inf(n));
    ((scale > 1e-6).then(|| err / scale), err)
}

#[test]
fn gradient_matches_finite_differences() {
    for case in 0..100 {
        let (logits, _) = random_logits(22, case);
        let analytic = gate_loss_grad(logits.view()).unwrap();
        let numeric = numeric_grad(&logits, 1e-5);
        match relative_error(&analytic, &numeric) {
            (Some(rel), _) => assert!(rel < 1e-5, "case {case}: relative error {rel}"),
            (None, abs) => assert!(abs < 1e-9, "case {case}: absolute error {abs}"),
        }
    }
}

#[test]
fn balanced_routing_has_unit_loss() {
    for e in [2usize, 4, 8, 16] {
        // Token t prefers expert t mod e; gates have the same off-peak mass.
        let t = 4 * e;
        let logits = Array2::from_shape_fn((t, e), |(i, j)| if j == i % e { 2.0 } else { 0.0 });
        let r = route(logits.view(), &RouterConfig::new(e)).unwrap();
        assert!((r.aux_loss - 1.0).abs() < 1e-9, "E={e}: {}", r.aux_loss);
        let uniform = Array2::zeros((t, e));
        let r = route(uniform.view(), &RouterConfig::new(e)).unwrap();
        // All tokens tie to expert 0: f = (1, 0, ...), mean gate 1/E.
        assert!((r.aux_loss - 1.0).abs() < 1e-9);
    }
}

#[test]
fn loss_is_invariant_to_token_order() {
    let (logits, _) = random_logits(23, 0);
    let r1 = route(logits.view(), &RouterConfig::new(logits.ncols())).unwrap();
    let mut rev = logits.clone();
    rev.invert_axis(ndarray::Axis(0));
    let r2 = route(rev.view(), &RouterConfig::new(logits.ncols())).unwrap();
    assert!((r1.aux_loss - r2.aux_loss).abs() < 1e-12);
}
