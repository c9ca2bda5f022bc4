//! Central finite-difference checks of reverse-mode gradients (f64 only).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::tensor::Tensor;

/// Step used for the central differences.
pub const STEP: f64 = 1e-5;

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

impl GradReport {
    fn record(&mut self, what: impl FnOnce() -> String, analytic: f64, numeric: f64, floor: f64) {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        self.checked += 1;
        if err > self.max_rel_err || self.checked == 1 {
            self.max_rel_err = err;
            self.worst = format!("{} analytic {analytic:e} numeric {numeric:e}", what());
        }
    }
}

/// Fixed random weights turning a matrix output into a scalar without the
/// cancellations a plain sum would have (e.g. after layer norm).
pub fn probe_weights(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// `Σ w ⊙ x`.
pub fn weighted_sum(g: &mut Graph<f64>, x: Var, seed: u64) -> Var {
    let (r, c) = g.shape(x);
    let w = probe_weights(r, c, seed);
    let p = g.mul_const(x, w);
    g.sum(p)
}

/// Compares the analytic gradient of `f` with central differences on
/// `samples` randomly chosen coordinates of the parameters in `ids`.
///
/// `floor` bounds the denominator of the relative error from below.
pub fn check_params(
    store: &ParamStore<f64>,
    ids: &[ParamId],
    samples: usize,
    floor: f64,
    rng: &mut ChaCha8Rng,
    f: impl Fn(&mut Graph<f64>) -> Var,
) -> GradReport {
    let mut g = Graph::new(store);
    let out = f(&mut g);
    let grads = g.backward(out);
    let sizes: Vec<usize> = ids.iter().map(|&id| store.get(id).len()).collect();
    let total: usize = sizes.iter().sum();
    assert!(total > 0, "no coordinates to check");
    let mut report = GradReport::default();
    let mut work = store.clone();
    for _ in 0..samples {
        let mut flat = rng.random_range(0..total);
        let mut k = 0;
        while flat >= sizes[k] {
            flat -= sizes[k];
            k += 1;
        }
        let id = ids[k];
        let analytic = grads.param(id).map_or(0.0, |t| t.data()[flat]);
        let orig = store.get(id).data()[flat];
        let mut eval = |v: f64| {
            work.get_mut(id).data_mut()[flat] = v;
            let mut g = Graph::new(&work);
            let out = f(&mut g);
            g.value(out).item()
        };
        let numeric = (eval(orig + STEP) - eval(orig - STEP)) / (2.0 * STEP);
        work.get_mut(id).data_mut()[flat] = orig;
        report.record(
            || format!("{}[{flat}]", store.name(id)),
            analytic,
            numeric,
            floor,
        );
    }
    report
}

/// Like [`check_params`] but perturbs graph inputs instead of parameters.
pub fn check_inputs(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    samples: usize,
    floor: f64,
    rng: &mut ChaCha8Rng,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Var,
) -> GradReport {
    let run = |ins: &[Tensor<f64>]| {
        let mut g = Graph::new(store);
        let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars);
        (g, vars, out)
    };
    let (g, vars, out) = run(inputs);
    let grads = g.backward(out);
    let sizes: Vec<usize> = inputs.iter().map(Tensor::len).collect();
    let total: usize = sizes.iter().sum();
    let mut report = GradReport::default();
    let mut work = inputs.to_vec();
    for _ in 0..samples {
        let mut flat = rng.random_range(0..total);
        let mut k = 0;
        while flat >= sizes[k] {
            flat -= sizes[k];
            k += 1;
        }
        let analytic = grads.wrt(vars[k]).map_or(0.0, |t| t.data()[flat]);
        let orig = inputs[k].data()[flat];
        let mut eval = |v: f64| {
            work[k].data_mut()[flat] = v;
            let (g, _, out) = run(&work);
            g.value(out).item()
        };
        let numeric = (eval(orig + STEP) - eval(orig - STEP)) / (2.0 * STEP);
        work[k].data_mut()[flat] = orig;
        report.record(|| format!("input {k}[{flat}]"), analytic, numeric, floor);
    }
    report
}
