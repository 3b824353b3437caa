//! Forward and reverse-mode execution of a [`NetworkGraph`] on image batches.
//!
//! Batches are `(batch, channels, height, width)` arrays. Batch-norm uses
//! batch statistics in [`Mode::Train`] and running statistics in
//! [`Mode::Eval`]; only [`forward`] in train mode mutates the running
//! statistics.

mod gradcheck;
mod ops;
mod params;

use ndarray::{concatenate, s, Array1, Array4, ArrayView2, Axis, Ix2};
use thiserror::Error;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use ops::BN_EPS;
pub use params::{LayerSlots, ParamRole, ParamTensor, ParameterSet, RunningStats};

use crate::arch::{LayerKind, NetworkGraph, Tap};
use crate::scalar::Scalar;

/// Momentum of the running-statistics update.
pub const BN_MOMENTUM: f64 = 0.1;

pub type ImageBatch<T> = Array4<T>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("non-finite value produced by layer {layer} ({label})")]
    NumericOverflow { layer: usize, label: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics observed by each batch-norm layer during a train-mode
/// pass, keyed by layer index.
#[derive(Debug, Clone, Default)]
pub struct BatchStats<T> {
    pub layers: Vec<(usize, Array1<T>, Array1<T>, usize)>,
}

impl<T: Scalar> ParameterSet<T> {
    /// Exponential running update with [`BN_MOMENTUM`]; variance is stored
    /// unbiased.
    pub fn absorb_batch_stats(&mut self, stats: &BatchStats<T>) {
        let m = T::of(BN_MOMENTUM);
        for (layer, mean, var, count) in &stats.layers {
            let unbias = if *count > 1 { T::of(*count as f64 / (*count as f64 - 1.0)) } else { T::one() };
            if let Some(r) = self.running_mut(*layer) {
                r.mean.zip_mut_with(mean, |r, &b| *r = (T::one() - m) * *r + m * b);
                r.var.zip_mut_with(var, |r, &b| *r = (T::one() - m) * *r + m * b * unbias);
            }
        }
    }
}

struct BnCache<T> {
    xhat: Array4<T>,
    inv_std: Array1<T>,
}

struct Tape<T> {
    input: Array4<T>,
    outputs: Vec<Array4<T>>,
    bn: Vec<Option<BnCache<T>>>,
}

impl<T> Tape<T> {
    fn layer_input(&self, i: usize) -> &Array4<T> {
        if i == 0 {
            &self.input
        } else {
            &self.outputs[i - 1]
        }
    }
}

fn weight2<T: Scalar>(params: &ParameterSet<T>, layer: usize) -> ArrayView2<'_, T> {
    let w = params.weight(layer).expect("conv layer has weights");
    let rows = w.shape()[0];
    let cols = w.len() / rows;
    w.view().into_shape_with_order((rows, cols)).expect("contiguous").into_dimensionality::<Ix2>().expect("2-D")
}

fn vector<T: Scalar>(a: Option<&ndarray::ArrayD<T>>) -> Option<Array1<T>> {
    a.map(|a| a.iter().copied().collect())
}

fn check_inputs<T: Scalar>(graph: &NetworkGraph, params: &ParameterSet<T>, batch: &Array4<T>) -> Result<(), ExecError> {
    params.check_against(graph)?;
    let (n, c, h, w) = batch.dim();
    if n == 0 {
        return Err(ExecError::Dimension("empty batch".into()));
    }
    if c != graph.in_channels {
        return Err(ExecError::Dimension(format!("batch has {c} channels, graph expects {}", graph.in_channels)));
    }
    let d = graph.required_divisor();
    if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
        return Err(ExecError::Dimension(format!("spatial size {h}x{w} is not a positive multiple of {d}")));
    }
    if batch.iter().any(|v| !v.is_finite()) {
        return Err(ExecError::InvalidArgument("batch contains non-finite values".into()));
    }
    Ok(())
}

/// Runs the graph. With `record` set, every layer output and batch-norm
/// cache is retained for a backward pass; otherwise only tensors that a
/// later concatenation reads are kept.
fn run<T: Scalar>(
    graph: &NetworkGraph,
    params: &ParameterSet<T>,
    batch: &Array4<T>,
    mode: Mode,
    record: bool,
) -> Result<(Array4<T>, Option<Tape<T>>, BatchStats<T>), ExecError> {
    check_inputs(graph, params, batch)?;
    let n = graph.layers.len();
    let mut keep = vec![record; n];
    for l in &graph.layers {
        if let LayerKind::ConcatInput { source: Tap::Layer(j) } = l.kind {
            keep[j] = true;
        }
    }
    let mut outputs: Vec<Option<Array4<T>>> = vec![None; n];
    let mut bn_cache: Vec<Option<BnCache<T>>> = (0..n).map(|_| None).collect();
    let mut stats = BatchStats { layers: Vec::new() };
    let mut current = batch.clone();
    for (i, layer) in graph.layers.iter().enumerate() {
        let next = match layer.kind {
            LayerKind::Conv => ops::conv_forward(
                &current,
                weight2(params, i),
                vector(params.bias(i)).as_ref(),
                layer.kernel,
                layer.stride,
                layer.padding(),
            ),
            LayerKind::TransposedConv => ops::tconv_forward(
                &current,
                weight2(params, i),
                vector(params.bias(i)).as_ref(),
                layer.out_channels,
                layer.kernel,
                layer.stride,
                layer.padding(),
            ),
            LayerKind::BatchNorm => {
                let gamma = vector(params.weight(i)).expect("bn scale");
                let beta = vector(params.bias(i)).expect("bn shift");
                let (mean, var) = match mode {
                    Mode::Train => {
                        let (m, v) = ops::channel_moments(&current);
                        let (bn, _, h, w) = current.dim();
                        stats.layers.push((i, m.clone(), v.clone(), bn * h * w));
                        (m, v)
                    }
                    Mode::Eval => {
                        let r = params.running(i).expect("bn running stats");
                        (r.mean.clone(), r.var.clone())
                    }
                };
                let (y, xhat, inv_std) = ops::bn_apply(&current, &mean, &var, &gamma, &beta);
                if record {
                    bn_cache[i] = Some(BnCache { xhat, inv_std });
                }
                y
            }
            LayerKind::Activation => current.mapv(|v| if v > T::zero() { v } else { T::zero() }),
            LayerKind::ConcatInput { source } => {
                let src = match source {
                    Tap::Input => batch,
                    Tap::Layer(j) => outputs[j].as_ref().expect("concat source retained"),
                };
                concatenate(Axis(1), &[src.view(), current.view()]).map_err(|e| {
                    ExecError::Dimension(format!("layer {i} ({}): cannot concatenate: {e}", layer.label))
                })?
            }
        };
        if (layer.kind.is_conv() || matches!(layer.kind, LayerKind::BatchNorm))
            && next.iter().any(|v| !v.is_finite()) {
                return Err(ExecError::NumericOverflow { layer: i, label: layer.label.clone() });
            }
        current = next;
        if keep[i] {
            outputs[i] = Some(current.clone());
        }
    }
    let tape = record.then(|| Tape {
        input: batch.clone(),
        outputs: outputs.into_iter().map(|o| o.expect("recorded")).collect(),
        bn: bn_cache,
    });
    Ok((current, tape, stats))
}

/// Forward pass. In train mode the batch statistics are folded into the
/// running statistics of `params`.
pub fn forward<T: Scalar>(
    graph: &NetworkGraph,
    params: &mut ParameterSet<T>,
    batch: &ImageBatch<T>,
    mode: Mode,
) -> Result<ImageBatch<T>, ExecError> {
    let (out, _, stats) = run(graph, params, batch, mode, false)?;
    if mode == Mode::Train {
        params.absorb_batch_stats(&stats);
    }
    Ok(out)
}

/// Eval-mode forward pass; never mutates anything.
pub fn forward_eval<T: Scalar>(
    graph: &NetworkGraph,
    params: &ParameterSet<T>,
    batch: &ImageBatch<T>,
) -> Result<ImageBatch<T>, ExecError> {
    run(graph, params, batch, Mode::Eval, false).map(|(out, _, _)| out)
}

/// Train-mode loss without touching running statistics.
pub fn train_loss<T: Scalar>(
    graph: &NetworkGraph,
    params: &ParameterSet<T>,
    batch: &ImageBatch<T>,
    target: &ImageBatch<T>,
) -> Result<T, ExecError> {
    let (out, _, _) = run(graph, params, batch, Mode::Train, false)?;
    mse_loss(&out, target)
}

/// Mean over all elements of the squared difference.
pub fn mse_loss<T: Scalar>(pred: &ImageBatch<T>, target: &ImageBatch<T>) -> Result<T, ExecError> {
    if pred.dim() != target.dim() {
        return Err(ExecError::Dimension(format!("prediction {:?} vs target {:?}", pred.dim(), target.dim())));
    }
    if pred.is_empty() {
        return Err(ExecError::Dimension("empty tensors".into()));
    }
    let sum = ndarray::Zip::from(pred).and(target).fold(T::zero(), |acc, &p, &t| acc + (p - t) * (p - t));
    Ok(sum / T::of(pred.len() as f64))
}

/// Result of one train-mode forward + backward pass.
#[derive(Debug, Clone)]
pub struct Gradient<T> {
    pub loss: T,
    pub grads: ParameterSet<T>,
    pub batch_stats: BatchStats<T>,
    pub output: ImageBatch<T>,
}

fn accumulate<T: Scalar>(slot: &mut Option<Array4<T>>, g: Array4<T>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

/// Train-mode MSE loss and its gradient with respect to every trainable
/// tensor. Running statistics are not updated; see
/// [`ParameterSet::absorb_batch_stats`].
pub fn loss_and_gradient<T: Scalar>(
    graph: &NetworkGraph,
    params: &ParameterSet<T>,
    batch: &ImageBatch<T>,
    target: &ImageBatch<T>,
) -> Result<Gradient<T>, ExecError> {
    let (output, tape, batch_stats) = run(graph, params, batch, Mode::Train, true)?;
    let tape = tape.expect("recorded");
    let loss = mse_loss(&output, target)?;
    let scale = T::of(2.0 / output.len() as f64);
    let mut grads = params.zeros_like();
    let n = graph.layers.len();
    let mut gout: Vec<Option<Array4<T>>> = vec![None; n];
    gout[n - 1] = Some(ndarray::Zip::from(&output).and(target).map_collect(|&p, &t| scale * (p - t)));

    for i in (0..n).rev() {
        let Some(dy) = gout[i].take() else { continue };
        let layer = &graph.layers[i];
        let x = tape.layer_input(i);
        let dx = match layer.kind {
            LayerKind::Conv | LayerKind::TransposedConv => {
                let w = weight2(params, i);
                let (dx, dw, db) = if layer.kind == LayerKind::Conv {
                    ops::conv_backward(x, w, &dy, layer.kernel, layer.stride, layer.padding(), layer.has_bias)
                } else {
                    ops::tconv_backward(x, w, &dy, layer.kernel, layer.stride, layer.padding(), layer.has_bias)
                };
                let slot = grads.weight_mut(i).expect("weight slot");
                let dim = slot.raw_dim();
                slot.assign(&dw.into_shape_with_order(dim).expect("same element count"));
                if let (Some(db), Some(idx)) = (db, grads.slots(i).secondary) {
                    grads.tensors[idx].data.assign(&db.into_dyn());
                }
                dx
            }
            LayerKind::BatchNorm => {
                let cache = tape.bn[i].as_ref().expect("bn cache");
                let gamma = vector(params.weight(i)).expect("bn scale");
                let (dx, dg, db) = ops::bn_backward(&dy, &cache.xhat, &cache.inv_std, &gamma);
                let slots = grads.slots(i);
                grads.tensors[slots.primary.expect("scale")].data.assign(&dg.into_dyn());
                grads.tensors[slots.secondary.expect("shift")].data.assign(&db.into_dyn());
                dx
            }
            LayerKind::Activation => {
                let y = &tape.outputs[i];
                ndarray::Zip::from(&dy).and(y).map_collect(|&d, &v| if v > T::zero() { d } else { T::zero() })
            }
            LayerKind::ConcatInput { source } => {
                let split = graph.tap_channels(source);
                if let Tap::Layer(j) = source {
                    accumulate(&mut gout[j], dy.slice(s![.., ..split, .., ..]).to_owned());
                }
                dy.slice(s![.., split.., .., ..]).to_owned()
            }
        };
        if i > 0 {
            accumulate(&mut gout[i - 1], dx);
        }
    }
    Ok(Gradient { loss, grads, batch_stats, output })
}

/// Gradient of the train-mode MSE loss with respect to `params`.
pub fn backward<T: Scalar>(
    graph: &NetworkGraph,
    params: &ParameterSet<T>,
    batch: &ImageBatch<T>,
    target: &ImageBatch<T>,
) -> Result<ParameterSet<T>, ExecError> {
    loss_and_gradient(graph, params, batch, target).map(|g| g.grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_denseed, DenseEdSpec, GraphBuilder};

    fn probe(shape: (usize, usize, usize, usize), phase: f64) -> Array4<f64> {
        Array4::from_shape_fn(shape, |(a, b, c, d)| (((a * 17 + b * 5 + c * 11 + d * 3) as f64) * 0.41 + phase).sin())
    }

    #[test]
    fn mse_examples() {
        let a = Array4::from_shape_vec((1, 1, 1, 2), vec![0.0, 1.0]).unwrap();
        let b = Array4::from_shape_vec((1, 1, 1, 2), vec![1.0, 1.0]).unwrap();
        assert_eq!(mse_loss(&a, &b).unwrap(), 0.5);
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(mse_loss(&(&a + 1.0), &a).unwrap(), 1.0);
        let c = Array4::<f64>::zeros((1, 1, 2, 1));
        assert!(matches!(mse_loss(&a, &c), Err(ExecError::Dimension(_))));
    }

    #[test]
    fn output_matches_input_size() {
        let g = build_denseed(&DenseEdSpec::new([3, 6, 3])).unwrap();
        let mut p = ParameterSet::<f32>::init(&g, 0);
        let x = probe((2, 1, 16, 24), 0.0).mapv(|v| v as f32);
        let y = forward(&g, &mut p, &x, Mode::Train).unwrap();
        assert_eq!(y.dim(), (2, 1, 16, 24));
    }

    #[test]
    fn rejects_bad_shapes() {
        let g = build_denseed(&DenseEdSpec::new([1, 1, 1]).with_widths(4, 2)).unwrap();
        let p = ParameterSet::<f64>::init(&g, 0);
        assert!(matches!(forward_eval(&g, &p, &Array4::zeros((1, 1, 6, 8))), Err(ExecError::Dimension(_))));
        assert!(matches!(forward_eval(&g, &p, &Array4::zeros((1, 2, 8, 8))), Err(ExecError::Dimension(_))));
    }

    #[test]
    fn zero_input_through_bias_free_stem_is_zero() {
        let mut b = GraphBuilder::new("stem", 1);
        b.conv("stem", 48, 7, 1, false);
        let g = b.finish().unwrap();
        let p = ParameterSet::<f32>::init(&g, 1);
        let y = forward_eval(&g, &p, &Array4::zeros((1, 1, 8, 8))).unwrap();
        assert_eq!(y.dim(), (1, 48, 8, 8));
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_layer_prepends_its_input() {
        let mut b = GraphBuilder::new("dense", 48);
        let x0 = b.tap();
        b.batch_norm("bn").relu("relu").conv("conv", 16, 3, 1, false).concat("cat", x0);
        let g = b.finish().unwrap();
        let p = ParameterSet::<f64>::init(&g, 2);
        let x = probe((1, 48, 4, 4), 0.3);
        let y = forward_eval(&g, &p, &x).unwrap();
        assert_eq!(y.dim().1, 64);
        assert_eq!(y.slice(s![.., ..48, .., ..]), x);
    }

    #[test]
    fn one_by_one_conv_closed_form_gradient() {
        let mut b = GraphBuilder::new("linear", 1);
        b.conv("w", 1, 1, 1, false);
        let g = b.finish().unwrap();
        let mut p = ParameterSet::<f64>::init(&g, 0);
        p.weight_mut(0).unwrap().fill(0.7);
        let x = Array4::from_elem((1, 1, 1, 1), 2.0);
        let t = Array4::from_elem((1, 1, 1, 1), 0.5);
        let grad = backward(&g, &p, &x, &t).unwrap();
        let w = grad.weight(0).unwrap().iter().next().copied().unwrap();
        assert!((w - 2.0 * 2.0 * (0.7 * 2.0 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn zero_residual_gives_zero_final_gradient() {
        let g = build_denseed(&DenseEdSpec::new([1, 1, 1]).with_widths(4, 2)).unwrap();
        let p = ParameterSet::<f64>::init(&g, 5);
        let x = probe((1, 1, 8, 8), 0.9);
        let (pred, _, _) = run(&g, &p, &x, Mode::Train, false).unwrap();
        let grad = backward(&g, &p, &x, &pred).unwrap();
        let last = g.layers.len() - 1;
        assert!(grad.weight(last).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let g = build_denseed(&DenseEdSpec::new([1, 1, 1]).with_widths(4, 2)).unwrap();
        let mut p = ParameterSet::<f64>::init(&g, 5);
        let x = probe((2, 1, 8, 8), 0.1);
        let before = forward_eval(&g, &p, &x).unwrap();
        assert_eq!(before, forward_eval(&g, &p, &x).unwrap());
        forward(&g, &mut p, &x, Mode::Train).unwrap();
        assert_ne!(before, forward_eval(&g, &p, &x).unwrap());
    }
}
