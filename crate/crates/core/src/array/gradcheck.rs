//! Central finite differences, the independent oracle for the backward pass.
//!
//! These helpers never look at the tape's adjoints: they re-run the full
//! forward function at perturbed inputs, so agreement with `Tape::backward`
//! is a genuine two-route check.

/// Central finite-difference gradient of `f` at `x` with the given step.
pub fn finite_difference<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut xs = x.to_vec();
    for i in 0..x.len() {
        let orig = xs[i];
        xs[i] = orig + step;
        let fp = f(&xs);
        xs[i] = orig - step;
        let fm = f(&xs);
        xs[i] = orig;
        grad[i] = (fp - fm) / (2.0 * step);
    }
    grad
}

/// Largest relative error between an analytic gradient and its
/// finite-difference counterpart. The denominator floors at 1e-6 so
/// near-zero entries compare absolutely.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        let denom = a.abs().max(n.abs()).max(1e-6);
        worst = worst.max((a - n).abs() / denom);
    }
    worst
}

use super::tape::{NodeId, Tape};
use super::{DiffArray, ParamStore};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Compare `Tape::backward` against central finite differences for an
/// arbitrary scalar-valued graph over the store's parameters. Returns the
/// max relative error across every coordinate of every trainable parameter.
pub fn check_graph<F>(store: &ParamStore, build: F, step: f64) -> f64
where
    F: Fn(&mut Tape) -> NodeId,
{
    let eval = |s: &ParamStore| -> f64 {
        let mut tape = Tape::new(s);
        let out = build(&mut tape);
        tape.values(out)[0]
    };

    let mut tape = Tape::new(store);
    let loss = build(&mut tape);
    let grads = tape.backward(loss).expect("backward failed");

    let mut worst = 0.0f64;
    for id in store.ids() {
        if !store.get(id).requires_grad {
            continue;
        }
        let analytic = grads
            .get(id)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; store.get(id).numel()]);
        let mut numeric = vec![0.0; analytic.len()];
        for i in 0..numeric.len() {
            let mut probe = store.clone();
            probe.get_mut(id).values[i] += step;
            let fp = eval(&probe);
            probe.get_mut(id).values[i] -= 2.0 * step;
            let fm = eval(&probe);
            numeric[i] = (fp - fm) / (2.0 * step);
        }
        worst = worst.max(max_rel_error(&analytic, &numeric));
    }
    worst
}

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Box-Muller, good enough for test fixtures
    (0..n)
        .map(|_| {
            let u1: f64 = rng.gen_range(1e-9..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

/// Run the finite-difference comparison for every tape primitive on random
/// inputs. Returns (primitive name, max relative error) pairs.
pub fn all_primitive_checks(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::new();
    let mut run = |name: &'static str,
                   store: ParamStore,
                   build: Box<dyn Fn(&mut Tape) -> NodeId>| {
        let err = check_graph(&store, |t| build(t), FD_STEP);
        results.push((name, err));
    };

    // weight every output coordinate differently so adjoints cannot hide
    // behind symmetric reductions
    fn weighted_scalar(t: &mut Tape, x: NodeId, weights: &[f64]) -> NodeId {
        let shape = t.shape(x).to_vec();
        let w = t.constant(shape, weights.to_vec());
        let prod = t.mul(x, w).unwrap();
        t.sum_all(prod)
    }

    {
        let mut s = ParamStore::new();
        let a = s.register("a", DiffArray::new(vec![3, 4], randn(&mut rng, 12), true));
        let b = s.register("b", DiffArray::new(vec![4, 2], randn(&mut rng, 8), true));
        let w = randn(&mut rng, 6);
        run(
            "matmul",
            s,
            Box::new(move |t| {
                let (na, nb) = (t.param(a), t.param(b));
                let c = t.matmul(na, nb).unwrap();
                weighted_scalar(t, c, &w)
            }),
        );
    }
    {
        let mut s = ParamStore::new();
        let a = s.register("a", DiffArray::new(vec![3, 4], randn(&mut rng, 12), true));
        let b = s.register("b", DiffArray::new(vec![2, 4], randn(&mut rng, 8), true));
        let w = randn(&mut rng, 6);
        run(
            "matmul_nt",
            s,
            Box::new(move |t| {
                let (na, nb) = (t.param(a), t.param(b));
                let c = t.matmul_nt(na, nb).unwrap();
                weighted_scalar(t, c, &w)
            }),
        );
    }
    {
        let mut s = ParamStore::new();
        let a = s.register("a", DiffArray::new(vec![2, 3], randn(&mut rng, 6), true));
        let b = s.register("b", DiffArray::new(vec![2, 3], randn(&mut rng, 6), true));
        let w = randn(&mut rng, 6);
        run(
            "add",
            s,
            Box::new(move |t| {
                let (na, nb) = (t.param(a), t.param(b));
                let c = t.add(na, nb).unwrap();
                weighted_scalar(t, c, &w)
            }),
        );
    }
    {
        let mut s = ParamStore::new();
        let a = s.register("a", DiffArray::new(vec![3, 4], randn(&mut rng, 12), true));
        let b = s.register("bias", DiffArray::new(vec![4], randn(&mut rng, 4), true));
        let w = randn(&mut rng, 12);
        run(
            "add_bias",
            s,
            Box::new(move |t| {
                let (na, nb) = (t.param(a), t.param(b));
                let c = t.add_bias(na, nb).unwrap();
                weighted_scalar(t, c, &w)
            }),
        );
    }
    {
        let mut s = ParamStore::new();
        let a = s.register("a", DiffArray::new(vec![2, 3], randn(&mut rng, 6), true));
        let b = s.register("b", DiffArray::new(vec![2, 3], randn(&mut rng, 6), true));
        let w = randn(&mut rng, 6);
        run(
            "mul",
            s,
            Box::new(move |t| {
                let (na, nb) = (t.param(a), t.param(b));
                let c = t.mul(na, nb).unwrap();
                weighted_scalar(t, c, &w)
            }),
        );
    }
    {
        let mut s = ParamStore::new();
        let a = s.register("a", DiffArray::new(vec![3, 4], randn(&mut rng, 12), true));
        let sc = s.register("s", DiffArray::new(vec![3, 1], randn(&mut rng, 3), true));
        let w = randn(&mut rng, 12);
        run(
            "scale_rows",
            s,
            Box::new(move |t| {
                let (na, ns) = (t.param(a), t.param(sc));
                let c = t.scale_rows(na, ns).unwrap();
                weighted_scalar(t, c, &w)
            }),
        );
    }
    {
        let mut s = ParamStore::new();
        let a = s.register("a", DiffArray::new(vec![5], randn(&mut rng, 5), true));
        let w = randn(&mut rng, 5);
        run(
            "scale_and_add_scalar",
            s,
            Box::new(move |t| {
                let na = t.param(a);
                let c = t.scale(na, -1.7);
                let c = t.add_scalar(c, 0.3);
                weighted_scalar(t, c, &w)
            }),
        );
    }
    {
        let mut s = ParamStore::new();
        let a = s.register("a", DiffArray::new(vec![5], randn(&mut rng, 5), true));
        let w = randn(&mut rng, 5);
        run(
            "exp",
            s,
            Box::new(move |t| {
                let na = t.param(a);
                let c = t.exp(na);
                weighted_scalar(t, c, &w)
            }),
        );
    }
    {
        let mut s = ParamStore::new();
        let vals: Vec<f64> = (0..5).map(|_| rng.gen_range(0.5..2.0)).collect();
        let a = s.register("a", DiffArray::new(vec![5], vals, true));
        let w = randn(&mut rng, 5);
        run(
            "ln",
            s,
            Box::new(move |t| {
                let na = t.param(a);
                let c = t.ln(na);
                weighted_scalar(t, c, &w)
            }),
        );
    }
    {
        let mut s = ParamStore::new();
        let a = s.register("a", DiffArray::new(vec![6], randn(&mut rng, 6), true));
        let w = randn(&mut rng, 6);
        run(
            "tanh",
            s,
            Box::new(move |t| {
                let na = t.param(a);
                let c = t.tanh(na);
                weighted_scalar(t, c, &w)
            }),
        );
    }
    {
        let mut s = ParamStore::new();
        let a = s.register("a", DiffArray::new(vec![6], randn(&mut rng, 6), true));
        let w = randn(&mut rng, 6);
        run(
            "sigmoid",
            s,
            Box::new(move |t| {
                let na = t.param(a);
                let c = t.sigmoid(na);
                weighted_scalar(t, c, &w)
            }),
        );
    }
    {
        let mut s = ParamStore::new();
        let a = s.register("a", DiffArray::new(vec![3, 5], randn(&mut rng, 15), true));
        let w = randn(&mut rng, 15);
        run(
            "softmax_rows",
            s,
            Box::new(move |t| {
                let na = t.param(a);
                let c = t.softmax_rows(na);
                weighted_scalar(t, c, &w)
            }),
        );
    }
    {
        let mut s = ParamStore::new();
        let x = s.register("x", DiffArray::new(vec![3, 6], randn(&mut rng, 18), true));
        let g = s.register(
            "gamma",
            DiffArray::new(vec![6], (0..6).map(|_| rng.gen_range(0.5..1.5)).collect(), true),
        );
        let b = s.register("beta", DiffArray::new(vec![6], randn(&mut rng, 6), true));
        let w = randn(&mut rng, 18);
        run(
            "layer_norm",
            s,
            Box::new(move |t| {
                let (nx, ng, nb) = (t.param(x), t.param(g), t.param(b));
                let c = t.layer_norm(nx, ng, nb, 1e-5).unwrap();
                weighted_scalar(t, c, &w)
            }),
        );
    }
    {
        let mut s = ParamStore::new();
        let tab = s.register("table", DiffArray::new(vec![7, 4], randn(&mut rng, 28), true));
        let ids = vec![2usize, 0, 2, 6];
        let w = randn(&mut rng, 16);
        run(
            "gather",
            s,
            Box::new(move |t| {
                let nt = t.param(tab);
                let c = t.gather(nt, &ids).unwrap();
                weighted_scalar(t, c, &w)
            }),
        );
    }
    {
        let mut s = ParamStore::new();
        let q = s.register("q", DiffArray::new(vec![5, 8], randn(&mut rng, 40), true));
        let k = s.register("k", DiffArray::new(vec![5, 8], randn(&mut rng, 40), true));
        let v = s.register("v", DiffArray::new(vec![5, 8], randn(&mut rng, 40), true));
        let w = randn(&mut rng, 40);
        run(
            "causal_attention",
            s,
            Box::new(move |t| {
                let (nq, nk, nv) = (t.param(q), t.param(k), t.param(v));
                let c = t.causal_attention(nq, nk, nv, 2).unwrap();
                weighted_scalar(t, c, &w)
            }),
        );
    }
    {
        let mut s = ParamStore::new();
        let a = s.register("logits", DiffArray::new(vec![4, 6], randn(&mut rng, 24), true));
        let targets = vec![0usize, 5, 2, 2];
        let w = randn(&mut rng, 4);
        run(
            "cross_entropy_rows",
            s,
            Box::new(move |t| {
                let na = t.param(a);
                let c = t.cross_entropy_rows(na, &targets).unwrap();
                weighted_scalar(t, c, &w)
            }),
        );
    }
    {
        let mut s = ParamStore::new();
        let a = s.register("a", DiffArray::new(vec![3, 4], randn(&mut rng, 12), true));
        run(
            "mean_all",
            s,
            Box::new(move |t| {
                let na = t.param(a);
                t.mean_all(na)
            }),
        );
    }
    {
        let mut s = ParamStore::new();
        let a = s.register("a", DiffArray::new(vec![2, 3], randn(&mut rng, 6), true));
        let b = s.register("b", DiffArray::new(vec![2, 2], randn(&mut rng, 4), true));
        let w = randn(&mut rng, 10);
        run(
            "concat_cols",
            s,
            Box::new(move |t| {
                let (na, nb) = (t.param(a), t.param(b));
                let c = t.concat_cols(&[na, nb]).unwrap();
                weighted_scalar(t, c, &w)
            }),
        );
    }
    {
        let mut s = ParamStore::new();
        let a = s.register("a", DiffArray::new(vec![2, 3], randn(&mut rng, 6), true));
        let b = s.register("b", DiffArray::new(vec![4, 3], randn(&mut rng, 12), true));
        let w = randn(&mut rng, 18);
        run(
            "concat_rows",
            s,
            Box::new(move |t| {
                let (na, nb) = (t.param(a), t.param(b));
                let c = t.concat_rows(na, nb).unwrap();
                weighted_scalar(t, c, &w)
            }),
        );
    }
    {
        let mut s = ParamStore::new();
        let a = s.register("a", DiffArray::new(vec![5, 3], randn(&mut rng, 15), true));
        let w = randn(&mut rng, 6);
        run(
            "slice_rows",
            s,
            Box::new(move |t| {
                let na = t.param(a);
                let c = t.slice_rows(na, 1, 3).unwrap();
                weighted_scalar(t, c, &w)
            }),
        );
    }
    {
        let mut s = ParamStore::new();
        let a = s.register("a", DiffArray::new(vec![1, 4], randn(&mut rng, 4), true));
        let w = randn(&mut rng, 12);
        run(
            "broadcast_rows",
            s,
            Box::new(move |t| {
                let na = t.param(a);
                let c = t.broadcast_rows(na, 3).unwrap();
                weighted_scalar(t, c, &w)
            }),
        );
    }
    {
        let mut s = ParamStore::new();
        let a = s.register("a", DiffArray::new(vec![2, 6], randn(&mut rng, 12), true));
        let w = randn(&mut rng, 12);
        run(
            "reshape",
            s,
            Box::new(move |t| {
                let na = t.param(a);
                let c = t.reshape(na, vec![3, 4]).unwrap();
                weighted_scalar(t, c, &w)
            }),
        );
    }
    results
}
