//! Forward and backward kernels for the fixed head architecture.
//!
//! Shapes: activations are `Tensor2` with one sample per row. Linear weights
//! are stored `in x out`. Stacked backbone features are one row per sample
//! holding `layers * dim` values, layer-major.

use super::kernels;
use super::Tensor2;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::rng::SeededRng;

/// Epsilon inside the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct LinearGrads {
    pub dx: Tensor2,
    pub dw: Tensor2,
    pub db: Vec<f64>,
}

fn check_linear(x: &Tensor2, w: &Tensor2, b: &[f64]) -> Result<()> {
    if x.cols() != w.rows() || w.cols() != b.len() {
        return Err(Error::shape(format!(
            "linear: x {:?}, W {:?}, b {}",
            x.shape(),
            w.shape(),
            b.len()
        )));
    }
    Ok(())
}

pub fn linear_fwd(x: &Tensor2, w: &Tensor2, b: &[f64]) -> Result<Tensor2> {
    linear_fwd_with(Exec::default(), x, w, b)
}

pub fn linear_fwd_with(exec: Exec, x: &Tensor2, w: &Tensor2, b: &[f64]) -> Result<Tensor2> {
    check_linear(x, w, b)?;
    Ok(kernels::affine(exec, x, w, b))
}

pub fn linear_bwd(x: &Tensor2, w: &Tensor2, dy: &Tensor2) -> Result<LinearGrads> {
    let mut dw = Tensor2::zeros(w.rows(), w.cols());
    let mut db = vec![0.0; w.cols()];
    let dx = linear_bwd_acc(Exec::default(), x, w, dy, &mut dw, &mut db)?;
    Ok(LinearGrads { dx, dw, db })
}

/// Backward pass that accumulates into existing weight and bias gradients
/// and returns the input gradient.
pub fn linear_bwd_acc(
    exec: Exec,
    x: &Tensor2,
    w: &Tensor2,
    dy: &Tensor2,
    dw: &mut Tensor2,
    db: &mut [f64],
) -> Result<Tensor2> {
    if x.cols() != w.rows()
        || dy.cols() != w.cols()
        || dy.rows() != x.rows()
        || dw.shape() != w.shape()
        || db.len() != w.cols()
    {
        return Err(Error::shape(format!(
            "linear backward: x {:?}, W {:?}, dy {:?}",
            x.shape(),
            w.shape(),
            dy.shape()
        )));
    }
    kernels::affine_weight_grad(exec, x, dy, dw);
    for n in 0..dy.rows() {
        for (g, d) in db.iter_mut().zip(dy.row(n)) {
            *g += d;
        }
    }
    Ok(kernels::affine_input_grad(exec, dy, w))
}

pub fn relu_fwd(x: &Tensor2) -> Tensor2 {
    x.map(|v| v.max(0.0))
}

/// `x` is the pre-activation input.
pub fn relu_bwd(x: &Tensor2, dy: &Tensor2) -> Tensor2 {
    let data = x.data().iter().zip(dy.data()).map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 }).collect();
    Tensor2::from_vec(x.rows(), x.cols(), data).expect("relu_bwd shapes")
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_fwd(x: &Tensor2) -> Tensor2 {
    x.map(sigmoid)
}

/// `y` is the sigmoid output.
pub fn sigmoid_bwd(y: &Tensor2, dy: &Tensor2) -> Tensor2 {
    let data = y.data().iter().zip(dy.data()).map(|(&s, &g)| g * s * (1.0 - s)).collect();
    Tensor2::from_vec(y.rows(), y.cols(), data).expect("sigmoid_bwd shapes")
}

pub struct LayerNormCache {
    xhat: Tensor2,
    inv_std: Vec<f64>,
}

pub struct LayerNormGrads {
    pub dx: Tensor2,
    pub dgamma: Vec<f64>,
    pub dbeta: Vec<f64>,
}

/// Per-row normalization with biased variance, then `gamma * xhat + beta`.
pub fn layer_norm_fwd(x: &Tensor2, gamma: &[f64], beta: &[f64], eps: f64) -> Result<(Tensor2, LayerNormCache)> {
    let f = x.cols();
    if f == 0 || gamma.len() != f || beta.len() != f {
        return Err(Error::shape(format!("layer norm over {f} features, gamma {}, beta {}", gamma.len(), beta.len())));
    }
    let mut xhat = Tensor2::zeros(x.rows(), f);
    let mut y = Tensor2::zeros(x.rows(), f);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / f as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / f as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        let xr = xhat.row_mut(r);
        for (o, v) in xr.iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
        let xr = xhat.row(r).to_vec();
        for (j, o) in y.row_mut(r).iter_mut().enumerate() {
            *o = gamma[j] * xr[j] + beta[j];
        }
    }
    Ok((y, LayerNormCache { xhat, inv_std }))
}

pub fn layer_norm_bwd(cache: &LayerNormCache, gamma: &[f64], dy: &Tensor2) -> Result<LayerNormGrads> {
    let f = cache.xhat.cols();
    if dy.shape() != cache.xhat.shape() || gamma.len() != f {
        return Err(Error::shape("layer norm backward shapes"));
    }
    let mut dgamma = vec![0.0; f];
    let mut dbeta = vec![0.0; f];
    let mut dx = Tensor2::zeros(dy.rows(), f);
    let mut g = vec![0.0; f];
    for r in 0..dy.rows() {
        let xh = cache.xhat.row(r);
        let d = dy.row(r);
        for j in 0..f {
            dgamma[j] += d[j] * xh[j];
            dbeta[j] += d[j];
            g[j] = d[j] * gamma[j];
        }
        let mean_g = g.iter().sum::<f64>() / f as f64;
        let mean_gx = g.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / f as f64;
        let is = cache.inv_std[r];
        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = is * (g[j] - mean_g - xh[j] * mean_gx);
        }
    }
    Ok(LayerNormGrads { dx, dgamma, dbeta })
}

/// Inverted dropout. With `rng == None` (eval mode) the input is returned
/// unchanged and no mask is produced. The mask holds the per-element scale:
/// `0` for dropped elements, `1 / (1 - rate)` for survivors.
pub fn dropout(x: &Tensor2, rate: f64, rng: Option<&mut SeededRng>) -> Result<(Tensor2, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::OutOfRange { what: "dropout rate", value: rate });
    }
    let Some(rng) = rng else {
        return Ok((x.clone(), None));
    };
    if rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.data().len()).map(|_| if rng.bernoulli(rate) { 0.0 } else { keep }).collect();
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok((Tensor2::from_vec(x.rows(), x.cols(), data)?, Some(mask)))
}

pub fn dropout_bwd(mask: Option<&[f64]>, dy: &Tensor2) -> Tensor2 {
    match mask {
        None => dy.clone(),
        Some(m) => {
            let data = dy.data().iter().zip(m).map(|(g, s)| g * s).collect();
            Tensor2::from_vec(dy.rows(), dy.cols(), data).expect("dropout mask shape")
        }
    }
}

pub struct AggregateGrads {
    pub dh: Tensor2,
    pub dw: Vec<f64>,
    pub db: f64,
}

/// Learned mixing of stacked layer tokens: `out[n, f] = sum_l w[l] h[n, l, f] + b`.
pub fn layer_aggregate_fwd(h: &Tensor2, layers: usize, w: &[f64], b: f64) -> Result<Tensor2> {
    if layers == 0 || w.len() != layers || !h.cols().is_multiple_of(layers) {
        return Err(Error::shape(format!(
            "layer aggregation: {} columns, {layers} layers, {} weights",
            h.cols(),
            w.len()
        )));
    }
    let dim = h.cols() / layers;
    let mut out = Tensor2::zeros(h.rows(), dim);
    for n in 0..h.rows() {
        let src = h.row(n);
        let dst = out.row_mut(n);
        dst.iter_mut().for_each(|v| *v = b);
        for (l, &wl) in w.iter().enumerate() {
            for (o, s) in dst.iter_mut().zip(&src[l * dim..(l + 1) * dim]) {
                *o += wl * s;
            }
        }
    }
    Ok(out)
}

/// `with_input_grad = false` skips `dh`, which is never needed for frozen
/// backbone features.
pub fn layer_aggregate_bwd(h: &Tensor2, layers: usize, w: &[f64], dy: &Tensor2, with_input_grad: bool) -> Result<AggregateGrads> {
    let dim = dy.cols();
    if w.len() != layers || h.cols() != layers * dim || h.rows() != dy.rows() {
        return Err(Error::shape("layer aggregation backward shapes"));
    }
    let mut dw = vec![0.0; layers];
    let mut db = 0.0;
    let mut dh = if with_input_grad { Tensor2::zeros(h.rows(), h.cols()) } else { Tensor2::zeros(0, h.cols()) };
    for n in 0..dy.rows() {
        let d = dy.row(n);
        let src = h.row(n);
        db += d.iter().sum::<f64>();
        for l in 0..layers {
            dw[l] += kernels::dot(d, &src[l * dim..(l + 1) * dim]);
        }
        if with_input_grad {
            let out = dh.row_mut(n);
            for l in 0..layers {
                for (o, g) in out[l * dim..(l + 1) * dim].iter_mut().zip(d) {
                    *o = w[l] * g;
                }
            }
        }
    }
    Ok(AggregateGrads { dh, dw, db })
}

/// Mean over the batch of squared row-wise L2 errors, and its gradient
/// `2 (pred - target) / N`.
pub fn mse_loss(pred: &Tensor2, target: &Tensor2) -> Result<(f64, Tensor2)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!("mse: {:?} vs {:?}", pred.shape(), target.shape())));
    }
    let n = pred.rows();
    if n == 0 {
        return Ok((0.0, Tensor2::zeros(0, pred.cols())));
    }
    let mut total = 0.0;
    let mut grad = Tensor2::zeros(n, pred.cols());
    for r in 0..n {
        let mut row_sq = 0.0;
        for ((g, p), t) in grad.row_mut(r).iter_mut().zip(pred.row(r)).zip(target.row(r)) {
            let e = p - t;
            row_sq += e * e;
            *g = 2.0 * e / n as f64;
        }
        total += row_sq;
    }
    Ok((total / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor2 {
        Tensor2::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn linear_identity_and_hand_sum() {
        let x = t(&[&[1.0, -2.0, 3.0], &[0.5, 0.0, 4.0]]);
        assert_eq!(linear_fwd(&x, &Tensor2::identity(3), &[0.0; 3]).unwrap(), x);
        let y = linear_fwd(&t(&[&[1.0, 2.0]]), &t(&[&[1.0], &[1.0]]), &[0.5]).unwrap();
        assert_eq!(y.data(), &[3.5]);
        assert!(linear_fwd(&x, &Tensor2::identity(2), &[0.0; 2]).is_err());
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let y = relu_fwd(&t(&[&[-1.0, 2.0]]));
        assert_eq!(y.data(), &[0.0, 2.0]);
        assert_eq!(sigmoid(0.0), 0.5);
        let g = sigmoid_bwd(&sigmoid_fwd(&t(&[&[0.0]])), &t(&[&[1.0]]));
        assert_eq!(g.data(), &[0.25]);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn layer_norm_examples() {
        let (y, _) = layer_norm_fwd(&t(&[&[3.0, 3.0, 3.0]]), &[1.0; 3], &[0.0; 3], LAYER_NORM_EPS).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
        let (y, _) = layer_norm_fwd(&t(&[&[1.0, -1.0]]), &[1.0; 2], &[0.0; 2], 0.0).unwrap();
        assert_eq!(y.data(), &[1.0, -1.0]);
    }

    #[test]
    fn dropout_eval_and_zero_rate_are_identity() {
        let x = t(&[&[1.0, 2.0, 3.0]]);
        assert_eq!(dropout(&x, 0.5, None).unwrap().0, x);
        let mut rng = SeededRng::new(1);
        assert_eq!(dropout(&x, 0.0, Some(&mut rng)).unwrap().0, x);
        assert!(dropout(&x, 1.0, None).is_err());
    }

    #[test]
    fn dropout_statistics() {
        let n = 100_000;
        let x = Tensor2::from_vec(1, n, (0..n).map(|i| 1.0 + (i % 7) as f64).collect()).unwrap();
        let mut rng = SeededRng::new(2024);
        let (y, mask) = dropout(&x, 0.5, Some(&mut rng)).unwrap();
        let mask = mask.unwrap();
        let survivors = mask.iter().filter(|&&m| m > 0.0).count() as f64 / n as f64;
        assert!((survivors - 0.5).abs() < 0.01, "survivor fraction {survivors}");
        let mean_in = x.data().iter().sum::<f64>() / n as f64;
        let mean_out = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean_out / mean_in - 1.0).abs() < 0.02);
        assert_eq!(dropout_bwd(Some(&mask), &x).data(), y.data());
    }

    #[test]
    fn aggregate_examples() {
        let layers = 13;
        let dim = 5;
        let h = Tensor2::from_vec(2, layers * dim, (0..2 * layers * dim).map(|i| i as f64 * 0.1).collect()).unwrap();
        let mut one_hot = vec![0.0; layers];
        one_hot[layers - 1] = 1.0;
        let out = layer_aggregate_fwd(&h, layers, &one_hot, 0.0).unwrap();
        for n in 0..2 {
            assert_eq!(out.row(n), &h.row(n)[(layers - 1) * dim..]);
        }
        let mean = layer_aggregate_fwd(&h, layers, &[1.0 / 13.0; 13], 0.0).unwrap();
        for n in 0..2 {
            for f in 0..dim {
                let m: f64 = (0..layers).map(|l| h.get(n, l * dim + f)).sum::<f64>() / 13.0;
                assert!((mean.get(n, f) - m).abs() < 1e-12);
            }
        }
        assert!(layer_aggregate_fwd(&h, 12, &[0.0; 12], 0.0).is_err());
    }

    #[test]
    fn mse_examples() {
        let a = t(&[&[0.3, 0.7]]);
        assert_eq!(mse_loss(&a, &a).unwrap().0, 0.0);
        assert_eq!(mse_loss(&t(&[&[1.0, 0.0]]), &t(&[&[0.0, 0.0]])).unwrap().0, 1.0);
        assert!(mse_loss(&a, &t(&[&[0.3]])).is_err());
    }
}
