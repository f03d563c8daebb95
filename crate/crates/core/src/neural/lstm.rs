use ndarray::{s, Array1, Array2, ArrayView1, ArrayView3, Axis, Zip};

use super::ffnn::dropout_mask;
use super::{sigmoid, DropoutRng, NetworkSpec, Parameters, Tensor};

struct StepCache {
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    /// Activated gates `[i, f, g, o]` side by side, `(B, 4h)`.
    gates: Array2<f64>,
    tanh_c: Array2<f64>,
}

struct LayerCache {
    inputs: Vec<Array2<f64>>,
    steps: Vec<StepCache>,
    /// Layer-level activation of each hidden state, before dropout.
    activated: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
}

pub(super) struct Cache {
    layers: Vec<LayerCache>,
    head_input: Array2<f64>,
}

pub(super) fn forward(
    params: &Parameters,
    spec: &NetworkSpec,
    batch: ArrayView3<f64>,
    mut rng: DropoutRng,
) -> (Array1<f64>, Cache) {
    let p = &params.0;
    let (b, window, _) = batch.dim();
    let mut seq: Vec<Array2<f64>> = (0..window).map(|t| batch.slice(s![.., t, ..]).to_owned()).collect();
    let mut layers = Vec::with_capacity(spec.hidden.len());
    for (l, (&hdim, act)) in spec.hidden.iter().zip(&spec.activations).enumerate() {
        let (w, u, bias) = (p[3 * l].view2(), p[3 * l + 1].view2(), p[3 * l + 2].view1());
        let mut h = Array2::zeros((b, hdim));
        let mut c = Array2::zeros((b, hdim));
        let mut cache = LayerCache { inputs: Vec::new(), steps: Vec::new(), activated: Vec::new(), masks: Vec::new() };
        let mut out = Vec::with_capacity(window);
        for x in seq {
            let mut z = x.dot(&w) + h.dot(&u) + &bias;
            z.slice_mut(s![.., 0..2 * hdim]).mapv_inplace(sigmoid);
            z.slice_mut(s![.., 2 * hdim..3 * hdim]).mapv_inplace(f64::tanh);
            z.slice_mut(s![.., 3 * hdim..]).mapv_inplace(sigmoid);
            let (i, f, g, o) = split(&z, hdim);
            let c_new = &f * &c + &i * &g;
            let tanh_c = c_new.mapv(f64::tanh);
            let h_new = &o * &tanh_c;
            let a = h_new.mapv(|v| act.apply(v));
            let mask = rng.as_deref_mut().filter(|_| spec.dropout > 0.0).map(|r| dropout_mask(r, a.dim(), spec.dropout));
            out.push(match &mask {
                Some(m) => &a * m,
                None => a.clone(),
            });
            cache.steps.push(StepCache { h_prev: h, c_prev: c, gates: z, tanh_c });
            cache.inputs.push(x);
            cache.activated.push(a);
            cache.masks.push(mask);
            h = h_new;
            c = c_new;
        }
        layers.push(cache);
        seq = out;
    }
    let head = 3 * spec.hidden.len();
    let head_input = seq.pop().expect("window is non-empty");
    let y = head_input.dot(&p[head].view2()).column(0).to_owned() + p[head + 1].data[0];
    (y, Cache { layers, head_input })
}

fn split(z: &Array2<f64>, h: usize) -> (ArrayView2<'_>, ArrayView2<'_>, ArrayView2<'_>, ArrayView2<'_>) {
    (
        z.slice(s![.., 0..h]),
        z.slice(s![.., h..2 * h]),
        z.slice(s![.., 2 * h..3 * h]),
        z.slice(s![.., 3 * h..]),
    )
}

type ArrayView2<'a> = ndarray::ArrayView2<'a, f64>;

/// Back-propagation through time for a loss with output derivative `dy`.
pub(super) fn backward(params: &Parameters, spec: &NetworkSpec, cache: &Cache, dy: ArrayView1<f64>) -> Parameters {
    let p = &params.0;
    let mut grads: Vec<Tensor> = p.iter().map(|t| Tensor::zeros(&t.shape)).collect();
    let head = 3 * spec.hidden.len();
    let dy = dy.insert_axis(Axis(1));
    grads[head].view2_mut().assign(&cache.head_input.t().dot(&dy));
    grads[head + 1].data[0] = dy.sum();

    let window = cache.layers[0].steps.len();
    // gradient w.r.t. each step's (post-dropout) layer output; only the last
    // step of the top layer feeds the head
    let mut d_out: Vec<Option<Array2<f64>>> = vec![None; window];
    d_out[window - 1] = Some(dy.dot(&p[head].view2().t()));

    for l in (0..spec.hidden.len()).rev() {
        let hdim = spec.hidden[l];
        let act = spec.activations[l];
        let lc = &cache.layers[l];
        let (w, u) = (p[3 * l].view2(), p[3 * l + 1].view2());
        let b = lc.steps[0].h_prev.nrows();
        let mut dw = Array2::<f64>::zeros(w.dim());
        let mut du = Array2::<f64>::zeros(u.dim());
        let mut dbias = Array1::<f64>::zeros(4 * hdim);
        let mut dh_next = Array2::<f64>::zeros((b, hdim));
        let mut dc_next = Array2::<f64>::zeros((b, hdim));
        let mut d_in: Vec<Option<Array2<f64>>> = vec![None; window];
        for t in (0..window).rev() {
            let st = &lc.steps[t];
            let mut dh = dh_next;
            if let Some(g) = d_out[t].take() {
                let mut da = g;
                if let Some(m) = &lc.masks[t] {
                    da *= m;
                }
                Zip::from(&mut da).and(&lc.activated[t]).for_each(|d, &a| *d *= act.derivative(a, a));
                // Relu derivative needs the pre-activation, which equals the
                // activated value wherever it is positive.
                dh += &da;
            }
            let (i, f, g, o) = split(&st.gates, hdim);
            let mut dz = Array2::<f64>::zeros((b, 4 * hdim));
            let mut dc = dc_next;
            Zip::from(&mut dc).and(&dh).and(&o).and(&st.tanh_c).for_each(|dc, &dh, &o, &tc| {
                *dc += dh * o * (1.0 - tc * tc);
            });
            Zip::from(dz.slice_mut(s![.., 3 * hdim..])).and(&dh).and(&st.tanh_c).and(&o).for_each(|d, &dh, &tc, &o| {
                *d = dh * tc * o * (1.0 - o);
            });
            Zip::from(dz.slice_mut(s![.., 0..hdim])).and(&dc).and(&g).and(&i).for_each(|d, &dc, &g, &i| {
                *d = dc * g * i * (1.0 - i);
            });
            Zip::from(dz.slice_mut(s![.., hdim..2 * hdim])).and(&dc).and(&st.c_prev).and(&f).for_each(
                |d, &dc, &cp, &f| {
                    *d = dc * cp * f * (1.0 - f);
                },
            );
            Zip::from(dz.slice_mut(s![.., 2 * hdim..3 * hdim])).and(&dc).and(&i).and(&g).for_each(|d, &dc, &i, &g| {
                *d = dc * i * (1.0 - g * g);
            });
            dc_next = &dc * &f;
            dw += &lc.inputs[t].t().dot(&dz);
            du += &st.h_prev.t().dot(&dz);
            dbias += &dz.sum_axis(Axis(0));
            dh_next = dz.dot(&u.t());
            if l > 0 {
                d_in[t] = Some(dz.dot(&w.t()));
            }
        }
        grads[3 * l].view2_mut().assign(&dw);
        grads[3 * l + 1].view2_mut().assign(&du);
        grads[3 * l + 2].view1_mut().assign(&dbias);
        d_out = d_in;
    }
    Parameters(grads)
}
