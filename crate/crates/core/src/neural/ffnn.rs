use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::{DropoutRng, NetworkSpec, Parameters, Tensor};

pub(super) struct Cache {
    /// Input to each hidden layer, then the input to the head.
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    /// Inverted-dropout multipliers (`None` at inference).
    masks: Vec<Option<Array2<f64>>>,
}

pub(super) fn dropout_mask(rng: &mut impl Rng, shape: (usize, usize), rate: f64) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

pub(super) fn forward(
    params: &Parameters,
    spec: &NetworkSpec,
    x: ArrayView2<f64>,
    mut rng: DropoutRng,
) -> (Array1<f64>, Cache) {
    let p = &params.0;
    let mut cache = Cache { inputs: Vec::new(), pre_activations: Vec::new(), masks: Vec::new() };
    let mut a = x.to_owned();
    for (l, act) in spec.activations.iter().enumerate() {
        let z = a.dot(&p[2 * l].view2()) + &p[2 * l + 1].view1();
        let mut h = z.mapv(|v| act.apply(v));
        let mask = rng.as_deref_mut().filter(|_| spec.dropout > 0.0).map(|r| dropout_mask(r, h.dim(), spec.dropout));
        if let Some(m) = &mask {
            h *= m;
        }
        cache.inputs.push(a);
        cache.pre_activations.push(z);
        cache.masks.push(mask);
        a = h;
    }
    let head = spec.hidden.len() * 2;
    let y = a.dot(&p[head].view2()).column(0).to_owned() + p[head + 1].data[0];
    cache.inputs.push(a);
    (y, cache)
}

/// Gradients of a loss whose derivative w.r.t. the outputs is `dy`.
pub(super) fn backward(params: &Parameters, spec: &NetworkSpec, cache: &Cache, dy: ArrayView1<f64>) -> Parameters {
    let p = &params.0;
    let mut grads: Vec<Tensor> = params.0.iter().map(|t| Tensor::zeros(&t.shape)).collect();
    let head = spec.hidden.len() * 2;
    let dy = dy.insert_axis(Axis(1));
    let a_last = cache.inputs.last().expect("head input cached");
    grads[head].view2_mut().assign(&a_last.t().dot(&dy));
    grads[head + 1].data[0] = dy.sum();
    let mut da = dy.dot(&p[head].view2().t());
    for l in (0..spec.hidden.len()).rev() {
        let act = spec.activations[l];
        let z = &cache.pre_activations[l];
        let mut dz = da;
        if let Some(m) = &cache.masks[l] {
            dz *= m;
        }
        ndarray::Zip::from(&mut dz).and(z).for_each(|d, &zv| *d *= act.derivative(zv, act.apply(zv)));
        grads[2 * l].view2_mut().assign(&cache.inputs[l].t().dot(&dz));
        grads[2 * l + 1].view1_mut().assign(&dz.sum_axis(Axis(0)));
        da = dz.dot(&p[2 * l].view2().t());
    }
    Parameters(grads)
}
