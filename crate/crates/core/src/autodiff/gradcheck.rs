//! Central finite-difference verification of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest relative error between backward-pass gradients and central
/// differences with step `h`, over every entry of every input.
/// `f` rebuilds the scalar loss from freshly recorded input leaves.
pub fn max_gradient_error<F>(inputs: &[Tensor<f64>], h: f64, floor: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = vals.iter().map(|t| tape.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars = inputs.iter().map(|t| tape.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let g = grads.get_or_zeros(*v, &inputs[i]);
        for k in 0..inputs[i].len() {
            let x = inputs[i].data()[k];
            probe[i].data_mut()[k] = x + h;
            let up = eval(&probe)?;
            probe[i].data_mut()[k] = x - h;
            let down = eval(&probe)?;
            probe[i].data_mut()[k] = x;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(g.data()[k], numeric, floor));
        }
    }
    Ok(worst)
}

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Denominator floor for [`relative_error`], so entries whose true
/// gradient is zero are judged on absolute error.
pub const FLOOR: f64 = 1e-4;

fn random(rng: &mut rand_chacha::ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    use rand::Rng;
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Projects a matrix onto a fixed random direction per column and sums,
/// turning any output into a scalar with non-degenerate gradients.
fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    use rand::SeedableRng;
    let c = tape.value(v).cols();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let dir = tape.leaf(random(&mut rng, c, 1))?;
    let y = tape.matmul(v, dir)?;
    tape.sum(y)
}

/// Gradient check of every tape primitive on random small shapes.
/// Returns `(primitive, max relative error)` pairs.
pub fn primitive_suite(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    use super::Segments;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (r, c) = (rng.random_range(2..6), rng.random_range(2..5));
    let a = random(&mut rng, r, c);
    let b = random(&mut rng, r, c);
    let w = random(&mut rng, c, 3);
    let bias = random(&mut rng, 1, c);
    let index: Arc<Vec<usize>> = Arc::new((0..r + 2).map(|_| rng.random_range(0..r)).collect());
    let groups: Vec<Vec<usize>> = (0..3)
        .map(|g| (0..r).filter(|&i| i % 3 == g || rng.random_bool(0.3)).collect())
        .collect();
    let seg = Arc::new(Segments::from_lists(&groups));
    let mut target = random(&mut rng, r, c);
    for x in target.data_mut() {
        *x = x.abs() + 0.05;
    }
    let support: Arc<Vec<Vec<usize>>> = Arc::new(
        (0..r)
            .map(|_| {
                let mut bones: Vec<usize> = (0..6).collect();
                for k in 0..c {
                    let j = rng.random_range(k..6);
                    bones.swap(k, j);
                }
                bones.truncate(c);
                bones
            })
            .collect(),
    );
    let edges: Arc<Vec<(usize, usize)>> = Arc::new((1..r).map(|i| (i - 1, i)).chain([(0, r - 1)]).collect());

    let mut out = Vec::new();
    let mut run = |name: &'static str, inputs: Vec<Tensor<f64>>, f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>| -> Result<()> {
        let err = max_gradient_error(&inputs, STEP, FLOOR, f)?;
        out.push((name, err));
        Ok(())
    };

    run("matmul", vec![a.clone(), w.clone()], &|t, v| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y, 1)
    })?;
    run("concat", vec![a.clone(), b.clone()], &|t, v| {
        let y = t.concat(&[v[0], v[1], v[0]])?;
        project(t, y, 2)
    })?;
    run("add", vec![a.clone(), b.clone()], &|t, v| {
        let y = t.add(v[0], v[1])?;
        project(t, y, 3)
    })?;
    run("sub", vec![a.clone(), b.clone()], &|t, v| {
        let y = t.sub(v[0], v[1])?;
        project(t, y, 4)
    })?;
    run("add_row", vec![a.clone(), bias.clone()], &|t, v| {
        let y = t.add_row(v[0], v[1])?;
        project(t, y, 5)
    })?;
    run("scale", vec![a.clone()], &|t, v| {
        let y = t.scale(v[0], -1.7)?;
        project(t, y, 6)
    })?;
    run("leaky_relu", vec![a.clone()], &|t, v| {
        let y = t.leaky_relu(v[0], 0.2)?;
        project(t, y, 7)
    })?;
    run("softmax_rows", vec![a.clone()], &|t, v| {
        let y = t.softmax_rows(v[0])?;
        project(t, y, 8)
    })?;
    let idx = index.clone();
    run("gather_rows", vec![a.clone()], &move |t, v| {
        let y = t.gather_rows(v[0], idx.clone())?;
        project(t, y, 9)
    })?;
    let s = seg.clone();
    run("segment_max", vec![a.clone()], &move |t, v| {
        let y = t.segment_max(v[0], &s)?;
        project(t, y, 10)
    })?;
    let s = seg.clone();
    run("segment_mean", vec![a.clone()], &move |t, v| {
        let y = t.segment_mean(v[0], s.clone())?;
        project(t, y, 11)
    })?;
    let s = seg.clone();
    run("segment_var", vec![a.clone()], &move |t, v| {
        let y = t.segment_var(v[0], s.clone())?;
        project(t, y, 12)
    })?;
    run("dropout", vec![a.clone()], &|t, v| {
        let y = t.dropout(v[0], 0.4, 13)?;
        project(t, y, 13)
    })?;
    run("sum", vec![a.clone()], &|t, v| t.sum(v[0]))?;
    let tg = target.clone();
    run("softmax_kl", vec![a.clone()], &move |t, v| t.softmax_kl(v[0], &tg, 1e-8))?;
    let (sp, ed) = (support.clone(), edges.clone());
    run("laplacian_energy", vec![a.clone()], &move |t, v| t.laplacian_energy(v[0], sp.clone(), ed.clone()))?;
    run("two_layer_mlp", vec![a, w, random(&mut rng, 3, 2)], &|t, v| {
        let h = t.matmul(v[0], v[1])?;
        let h = t.leaky_relu(h, 0.2)?;
        let y = t.matmul(h, v[2])?;
        let y = t.softmax_rows(y)?;
        project(t, y, 14)
    })?;
    Ok(out)
}
