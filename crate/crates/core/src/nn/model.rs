use rand_distr::{Distribution, StandardNormal};

use super::{BackboneConfig, Layout, ModelWeights};
use crate::error::{Error, Result};
use crate::losses::{self, LossSpec};
use crate::rng;

/// `ln(1/100)`: a logit scale of 100 on cosine scores.
pub const DEFAULT_LOG_TEMPERATURE: f64 = -4.605_170_185_988_091;

/// Builds the stand-in for a pretrained model: hidden layers get random
/// `N(0, 1/fan_in)` weights, the last layer is zero so the residual backbone
/// starts as the identity, and the prototypes are the L2-normalised
/// `anchor_means + anchor_noise * N(0, 1)`.
pub fn init_pretrained(
    config: &BackboneConfig,
    anchor_means: &[f64],
    num_classes: usize,
    anchor_noise: f64,
    seed: u64,
) -> Result<ModelWeights> {
    let layout = config.layout(num_classes)?;
    let d = layout.feature_dim();
    if anchor_means.len() != num_classes * d {
        return Err(Error::ShapeMismatch(format!(
            "anchor matrix has {} values, expected {num_classes} x {d}",
            anchor_means.len()
        )));
    }
    let mut m = ModelWeights::zeros(layout.clone());
    let mut rng = rng::stream(seed, 0);
    let last = layout.num_layers() - 1;
    for l in 0..layout.num_layers() {
        if l == last && layout.residual() {
            continue;
        }
        let (_, fan_in) = layout.layer_shape(l);
        let std = 1.0 / (fan_in as f64).sqrt();
        for w in &mut m.flat_mut()[layout.weight_range(l)] {
            let z: f64 = StandardNormal.sample(&mut rng);
            *w = std * z;
        }
    }
    let mut rng = rng::stream(seed, 1);
    let protos = &mut m.flat_mut()[layout.prototype_range()];
    for (row, anchor) in protos.chunks_mut(d).zip(anchor_means.chunks(d)) {
        for (p, a) in row.iter_mut().zip(anchor) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *p = a + anchor_noise * z;
        }
        normalize(row);
    }
    let idx = layout.log_temperature_index();
    m.flat_mut()[idx] = DEFAULT_LOG_TEMPERATURE;
    Ok(m)
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-sample activations kept for the backward pass.
struct Trace {
    /// `acts[0]` is the input; `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    unit: Vec<f64>,
    radius: f64,
    cos: Vec<f64>,
}

struct Head {
    unit_protos: Vec<f64>,
    proto_norms: Vec<f64>,
    scale: f64,
}

impl Head {
    fn new(m: &ModelWeights) -> Self {
        let d = m.layout().feature_dim();
        let mut unit_protos = m.prototypes().to_vec();
        let proto_norms = unit_protos.chunks_mut(d).map(normalize).collect();
        Self {
            unit_protos,
            proto_norms,
            scale: m.scale(),
        }
    }
}

fn trace(layout: &Layout, params: &[f64], head: &Head, x: &[f64]) -> Trace {
    let n_layers = layout.num_layers();
    let mut acts = Vec::with_capacity(n_layers + 1);
    acts.push(x.to_vec());
    for l in 0..n_layers {
        let (out, inp) = layout.layer_shape(l);
        let w = &params[layout.weight_range(l)];
        let b = &params[layout.bias_range(l)];
        let h = &acts[l];
        let mut a: Vec<f64> = (0..out).map(|o| b[o] + dot(&w[o * inp..(o + 1) * inp], h)).collect();
        if l + 1 < n_layers {
            a.iter_mut().for_each(|v| *v = v.tanh());
        }
        acts.push(a);
    }
    let mut unit = acts[n_layers].clone();
    if layout.residual() {
        unit.iter_mut().zip(x).for_each(|(z, xi)| *z += xi);
    }
    let radius = norm(&unit).max(1e-12);
    unit.iter_mut().for_each(|z| *z /= radius);
    let d = layout.feature_dim();
    let cos = head
        .unit_protos
        .chunks(d)
        .map(|p| dot(&unit, p).clamp(-1.0, 1.0))
        .collect();
    Trace {
        acts,
        unit,
        radius,
        cos,
    }
}

fn check_input(m: &ModelWeights, features: &[f64]) -> Result<usize> {
    let d = m.layout().input_dim();
    if features.len() % d != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} feature values are not a multiple of width {d}",
            features.len()
        )));
    }
    if let Some(i) = features.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput { row: i / d });
    }
    Ok(features.len() / d)
}

/// Logits `s * cos(backbone(x), prototype_y)` for a row-major batch, where
/// `s = exp(-log_temperature)`.
pub fn forward(m: &ModelWeights, features: &[f64]) -> Result<Vec<f64>> {
    let n = check_input(m, features)?;
    let layout = m.layout();
    let d = layout.input_dim();
    let head = Head::new(m);
    let mut logits = Vec::with_capacity(n * layout.num_classes());
    for x in features.chunks(d) {
        let t = trace(layout, m.flat(), &head, x);
        logits.extend(t.cos.iter().map(|c| head.scale * c));
    }
    Ok(logits)
}

/// Arg-max class per row.
pub fn predict(m: &ModelWeights, features: &[f64]) -> Result<Vec<usize>> {
    let k = m.layout().num_classes();
    Ok(forward(m, features)?
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect())
}

/// Mean batch loss and its gradient over the whole flat parameter vector.
pub fn loss_and_grads(
    m: &ModelWeights,
    features: &[f64],
    labels: &[usize],
    loss: &LossSpec,
) -> Result<(f64, Vec<f64>)> {
    let n = check_input(m, features)?;
    if n != labels.len() {
        return Err(Error::ShapeMismatch(format!("{n} rows but {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::Empty("batch"));
    }
    let layout = m.layout();
    let k = layout.num_classes();
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::ShapeMismatch(format!("label {y} out of range for {k} classes")));
    }
    let d_in = layout.input_dim();
    let d = layout.feature_dim();
    let params = m.flat();
    let head = Head::new(m);
    let s = head.scale;
    let inv_b = 1.0 / n as f64;

    let mut grads = vec![0.0; layout.len()];
    let mut g_unit_protos = vec![0.0; k * d];
    let mut g_scale_cos = 0.0;
    let mut total = 0.0;
    let mut logits = vec![0.0; k];

    for (x, &y) in features.chunks(d_in).zip(labels) {
        let t = trace(layout, params, &head, x);
        logits.iter_mut().zip(&t.cos).for_each(|(l, c)| *l = s * c);
        let (l, mut g) = losses::loss_with_grad(&logits, k, &[y], loss);
        total += l;
        g.iter_mut().for_each(|v| *v *= inv_b);

        // head: logits_c = s * <u, p_c>
        let mut g_unit = vec![0.0; d];
        for (c, gc) in g.iter().enumerate() {
            if *gc == 0.0 {
                continue;
            }
            let p = &head.unit_protos[c * d..(c + 1) * d];
            g_unit.iter_mut().zip(p).for_each(|(gu, pi)| *gu += s * gc * pi);
            g_unit_protos[c * d..(c + 1) * d]
                .iter_mut()
                .zip(&t.unit)
                .for_each(|(gp, ui)| *gp += s * gc * ui);
            g_scale_cos += gc * t.cos[c];
        }

        // u = z / |z|
        let radial = dot(&t.unit, &g_unit);
        let mut delta: Vec<f64> = g_unit
            .iter()
            .zip(&t.unit)
            .map(|(gu, ui)| (gu - ui * radial) / t.radius)
            .collect();

        // backbone, last layer first; the residual input path has no parameters
        for l in (0..layout.num_layers()).rev() {
            let (out, inp) = layout.layer_shape(l);
            if l + 1 < layout.num_layers() {
                delta
                    .iter_mut()
                    .zip(&t.acts[l + 1])
                    .for_each(|(dv, h)| *dv *= 1.0 - h * h);
            }
            let h_prev = &t.acts[l];
            let wr = layout.weight_range(l);
            let br = layout.bias_range(l);
            {
                let gw = &mut grads[wr.clone()];
                for o in 0..out {
                    let dv = delta[o];
                    if dv == 0.0 {
                        continue;
                    }
                    gw[o * inp..(o + 1) * inp]
                        .iter_mut()
                        .zip(h_prev)
                        .for_each(|(g, h)| *g += dv * h);
                }
            }
            grads[br].iter_mut().zip(&delta).for_each(|(g, dv)| *g += dv);
            if l > 0 {
                let w = &params[wr];
                let mut prev = vec![0.0; inp];
                for o in 0..out {
                    let dv = delta[o];
                    prev.iter_mut()
                        .zip(&w[o * inp..(o + 1) * inp])
                        .for_each(|(p, wv)| *p += wv * dv);
                }
                delta = prev;
            }
        }
    }

    // prototypes p_c / |p_c|
    let pr = layout.prototype_range();
    let gp = &mut grads[pr];
    for c in 0..k {
        let pu = &head.unit_protos[c * d..(c + 1) * d];
        let gu = &g_unit_protos[c * d..(c + 1) * d];
        let radial = dot(pu, gu);
        let r = head.proto_norms[c].max(1e-12);
        for i in 0..d {
            gp[c * d + i] = (gu[i] - pu[i] * radial) / r;
        }
    }
    // d(s * cos) / d log_temperature = -s * cos
    grads[layout.log_temperature_index()] = -s * g_scale_cos;

    let mean = total * inv_b;
    if !mean.is_finite() {
        return Err(Error::Diverged {
            job: "loss evaluation".into(),
            step: 0,
            loss: mean,
        });
    }
    Ok((mean, grads))
}
