//! Trainable tensors for a graph, plus batch-norm running statistics.
//!
//! On disk a set is a flat little-endian `.bin` blob and a `.manifest` text
//! file listing each tensor's layer index, role, shape and byte offset.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::ExecError;
use crate::arch::{LayerKind, NetworkGraph};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamRole {
    Weight,
    Bias,
    /// Batch-norm scale (gamma).
    Scale,
    /// Batch-norm shift (beta).
    Shift,
}

impl ParamRole {
    pub fn tag(&self) -> &'static str {
        match self {
            ParamRole::Weight => "weight",
            ParamRole::Bias => "bias",
            ParamRole::Scale => "scale",
            ParamRole::Shift => "shift",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "weight" => ParamRole::Weight,
            "bias" => ParamRole::Bias,
            "scale" => ParamRole::Scale,
            "shift" => ParamRole::Shift,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    pub layer: usize,
    pub role: ParamRole,
    pub data: ArrayD<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub layer: usize,
    pub mean: Array1<T>,
    pub var: Array1<T>,
}

/// Indices into [`ParameterSet::tensors`] for one layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LayerSlots {
    pub primary: Option<usize>,
    pub secondary: Option<usize>,
    pub running: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T> {
    pub tensors: Vec<ParamTensor<T>>,
    pub running: Vec<RunningStats<T>>,
    slots: Vec<LayerSlots>,
}

/// Weight shape implied by a layer: conv `(out, in, k, k)`, transposed conv
/// `(in, out, k, k)`.
fn layer_shapes(graph: &NetworkGraph) -> Vec<(usize, ParamRole, Vec<usize>)> {
    let mut out = Vec::new();
    for (i, l) in graph.layers.iter().enumerate() {
        match l.kind {
            LayerKind::Conv => {
                out.push((i, ParamRole::Weight, vec![l.out_channels, l.in_channels, l.kernel, l.kernel]));
                if l.has_bias {
                    out.push((i, ParamRole::Bias, vec![l.out_channels]));
                }
            }
            LayerKind::TransposedConv => {
                out.push((i, ParamRole::Weight, vec![l.in_channels, l.out_channels, l.kernel, l.kernel]));
                if l.has_bias {
                    out.push((i, ParamRole::Bias, vec![l.out_channels]));
                }
            }
            LayerKind::BatchNorm => {
                out.push((i, ParamRole::Scale, vec![l.out_channels]));
                out.push((i, ParamRole::Shift, vec![l.out_channels]));
            }
            LayerKind::Activation | LayerKind::ConcatInput { .. } => {}
        }
    }
    out
}

impl<T: Scalar> ParameterSet<T> {
    fn assemble(n_layers: usize, tensors: Vec<ParamTensor<T>>, running: Vec<RunningStats<T>>) -> Self {
        let mut slots = vec![LayerSlots::default(); n_layers];
        for (idx, t) in tensors.iter().enumerate() {
            let s = &mut slots[t.layer];
            match t.role {
                ParamRole::Weight | ParamRole::Scale => s.primary = Some(idx),
                ParamRole::Bias | ParamRole::Shift => s.secondary = Some(idx),
            }
        }
        for (idx, r) in running.iter().enumerate() {
            slots[r.layer].running = Some(idx);
        }
        ParameterSet { tensors, running, slots }
    }

    /// Convolutions: uniform in `±sqrt(6 / fan_in)` with `fan_in = in * k * k`.
    /// Biases and batch-norm shifts start at 0, scales at 1, running
    /// statistics at mean 0 / variance 1.
    pub fn init(graph: &NetworkGraph, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::new();
        let mut running = Vec::new();
        for (layer, role, shape) in layer_shapes(graph) {
            let l = &graph.layers[layer];
            let data = match role {
                ParamRole::Weight => {
                    let fan_in = (l.in_channels * l.kernel * l.kernel) as f64;
                    let bound = (6.0 / fan_in).sqrt();
                    ArrayD::from_shape_simple_fn(IxDyn(&shape), || T::of(rng.random_range(-bound..bound)))
                }
                ParamRole::Scale => ArrayD::from_elem(IxDyn(&shape), T::one()),
                ParamRole::Bias | ParamRole::Shift => ArrayD::zeros(IxDyn(&shape)),
            };
            if role == ParamRole::Scale {
                running.push(RunningStats {
                    layer,
                    mean: Array1::zeros(l.out_channels),
                    var: Array1::ones(l.out_channels),
                });
            }
            tensors.push(ParamTensor { layer, role, data });
        }
        Self::assemble(graph.layers.len(), tensors, running)
    }

    /// Same structure, every element zero, no running statistics.
    pub fn zeros_like(&self) -> Self {
        let tensors = self
            .tensors
            .iter()
            .map(|t| ParamTensor { layer: t.layer, role: t.role, data: ArrayD::zeros(t.data.raw_dim()) })
            .collect();
        Self::assemble(self.slots.len(), tensors, Vec::new())
    }

    pub fn n_layers(&self) -> usize {
        self.slots.len()
    }

    /// Number of trainable scalars.
    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slots(&self, layer: usize) -> LayerSlots {
        self.slots[layer]
    }

    pub fn weight(&self, layer: usize) -> Option<&ArrayD<T>> {
        self.slots[layer].primary.map(|i| &self.tensors[i].data)
    }

    pub fn weight_mut(&mut self, layer: usize) -> Option<&mut ArrayD<T>> {
        self.slots[layer].primary.map(|i| &mut self.tensors[i].data)
    }

    pub fn bias(&self, layer: usize) -> Option<&ArrayD<T>> {
        self.slots[layer].secondary.map(|i| &self.tensors[i].data)
    }

    pub fn running(&self, layer: usize) -> Option<&RunningStats<T>> {
        self.slots[layer].running.map(|i| &self.running[i])
    }

    pub fn running_mut(&mut self, layer: usize) -> Option<&mut RunningStats<T>> {
        self.slots[layer].running.map(|i| &mut self.running[i])
    }

    /// Checks that every tensor has the shape the graph implies.
    pub fn check_against(&self, graph: &NetworkGraph) -> Result<(), ExecError> {
        let expected = layer_shapes(graph);
        if expected.len() != self.tensors.len() || self.slots.len() != graph.layers.len() {
            return Err(ExecError::Dimension(format!(
                "parameter set has {} tensors over {} layers, graph needs {} over {}",
                self.tensors.len(),
                self.slots.len(),
                expected.len(),
                graph.layers.len()
            )));
        }
        for ((layer, role, shape), t) in expected.iter().zip(&self.tensors) {
            if t.layer != *layer || t.role != *role || t.data.shape() != shape.as_slice() {
                return Err(ExecError::Dimension(format!(
                    "layer {layer} {}: expected shape {shape:?}, found {:?}",
                    role.tag(),
                    t.data.shape()
                )));
            }
        }
        Ok(())
    }

    /// Flattened view in tensor order, for coordinate sampling.
    pub fn get_flat(&self, mut idx: usize) -> T {
        for t in &self.tensors {
            if idx < t.data.len() {
                return *t.data.iter().nth(idx).expect("in range");
            }
            idx -= t.data.len();
        }
        panic!("flat index out of range")
    }

    pub fn set_flat(&mut self, mut idx: usize, value: T) {
        for t in &mut self.tensors {
            if idx < t.data.len() {
                *t.data.iter_mut().nth(idx).expect("in range") = value;
                return;
            }
            idx -= t.data.len();
        }
        panic!("flat index out of range")
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        let tensors = self
            .tensors
            .iter()
            .map(|t| ParamTensor { layer: t.layer, role: t.role, data: t.data.mapv(|v| U::of(v.as_f64())) })
            .collect();
        let running = self
            .running
            .iter()
            .map(|r| RunningStats {
                layer: r.layer,
                mean: r.mean.mapv(|v| U::of(v.as_f64())),
                var: r.var.mapv(|v| U::of(v.as_f64())),
            })
            .collect();
        ParameterSet::assemble(self.slots.len(), tensors, running)
    }

    fn encode(&self) -> (Vec<u8>, String) {
        let mut bin = Vec::with_capacity((self.len() + 2 * self.running.len()) * T::BYTES);
        let mut rows = String::new();
        let mut put = |layer: usize, role: &str, shape: &[usize], data: &mut dyn Iterator<Item = T>| {
            let offset = bin.len();
            for v in data {
                v.write_le(&mut bin);
            }
            let shape = shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            let _ = writeln!(rows, "{layer}\t{role}\t{shape}\t{offset}\t{}", bin.len() - offset);
        };
        for t in &self.tensors {
            put(t.layer, t.role.tag(), t.data.shape(), &mut t.data.iter().copied());
        }
        for r in &self.running {
            put(r.layer, "running_mean", &[r.mean.len()], &mut r.mean.iter().copied());
            put(r.layer, "running_var", &[r.var.len()], &mut r.var.iter().copied());
        }
        let digest = hex::encode(Sha256::digest(&bin));
        let manifest = format!(
            "format = denseed-params-1\ndtype = {}\nbyte_order = little\nlayers = {}\nscalars = {}\nbytes = {}\nsha256 = {digest}\n\n{rows}",
            T::DTYPE,
            self.slots.len(),
            self.len(),
            bin.len(),
        );
        (bin, manifest)
    }

    /// Writes `<stem>.bin` and `<stem>.manifest`; returns both paths.
    pub fn save(&self, stem: &Path) -> Result<(PathBuf, PathBuf), ExecError> {
        let (bin, manifest) = self.encode();
        let bin_path = stem.with_extension("bin");
        let man_path = stem.with_extension("manifest");
        fs::write(&bin_path, bin).map_err(|e| ExecError::Io(format!("{}: {e}", bin_path.display())))?;
        fs::write(&man_path, manifest).map_err(|e| ExecError::Io(format!("{}: {e}", man_path.display())))?;
        Ok((bin_path, man_path))
    }

    pub fn load(stem: &Path) -> Result<Self, ExecError> {
        let bin_path = stem.with_extension("bin");
        let man_path = stem.with_extension("manifest");
        let bin = fs::read(&bin_path).map_err(|e| ExecError::Io(format!("{}: {e}", bin_path.display())))?;
        let text =
            fs::read_to_string(&man_path).map_err(|e| ExecError::Io(format!("{}: {e}", man_path.display())))?;
        Self::decode(&bin, &text)
    }

    fn decode(bin: &[u8], text: &str) -> Result<Self, ExecError> {
        let integrity = |m: String| ExecError::Integrity(m);
        let (head, rows) = text.split_once("\n\n").ok_or_else(|| integrity("manifest has no tensor table".into()))?;
        let head = crate::kv::KvMap::parse(head).map_err(|e| integrity(e.to_string()))?;
        if head.get("dtype") != Some(T::DTYPE) {
            return Err(integrity(format!("dtype {:?} does not match {}", head.get("dtype"), T::DTYPE)));
        }
        let want_bytes: usize = head.parsed_or("bytes", usize::MAX).map_err(|e| integrity(e.to_string()))?;
        if want_bytes != bin.len() {
            return Err(integrity(format!("container holds {} bytes, manifest says {want_bytes}", bin.len())));
        }
        if head.get("sha256") != Some(hex::encode(Sha256::digest(bin)).as_str()) {
            return Err(integrity("checksum mismatch".into()));
        }
        let n_layers: usize = head.parsed_or("layers", 0).map_err(|e| integrity(e.to_string()))?;
        let mut tensors = Vec::new();
        let mut means: Vec<(usize, Array1<T>)> = Vec::new();
        let mut vars: Vec<(usize, Array1<T>)> = Vec::new();
        for line in rows.lines().filter(|l| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split('\t').collect();
            let [layer, role, shape, offset, len] = cols[..] else {
                return Err(integrity(format!("bad manifest row {line:?}")));
            };
            let parse = |s: &str| s.parse::<usize>().map_err(|_| integrity(format!("bad number in {line:?}")));
            let (layer, offset, len) = (parse(layer)?, parse(offset)?, parse(len)?);
            if layer >= n_layers {
                return Err(integrity(format!("layer {layer} out of range")));
            }
            let shape: Vec<usize> = shape.split('x').map(parse).collect::<Result<_, _>>()?;
            let count: usize = shape.iter().product();
            let bytes = bin
                .get(offset..offset + len)
                .filter(|b| b.len() == count * T::BYTES)
                .ok_or_else(|| integrity(format!("row {line:?} exceeds container")))?;
            let values: Vec<T> = bytes.chunks_exact(T::BYTES).map(T::read_le).collect();
            match role {
                "running_mean" => means.push((layer, Array1::from(values))),
                "running_var" => vars.push((layer, Array1::from(values))),
                tag => {
                    let role = ParamRole::from_tag(tag).ok_or_else(|| integrity(format!("unknown role {tag}")))?;
                    let data = ArrayD::from_shape_vec(IxDyn(&shape), values).expect("length checked");
                    tensors.push(ParamTensor { layer, role, data });
                }
            }
        }
        if means.len() != vars.len() {
            return Err(integrity("unpaired running statistics".into()));
        }
        let running = means
            .into_iter()
            .zip(vars)
            .map(|((l1, mean), (l2, var))| {
                if l1 != l2 {
                    return Err(integrity("unpaired running statistics".into()));
                }
                Ok(RunningStats { layer: l1, mean, var })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::assemble(n_layers, tensors, running))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_denseed, count_parameters, DenseEdSpec};

    #[test]
    fn scalar_count_matches_audit() {
        let g = build_denseed(&DenseEdSpec::new([2, 2, 2])).unwrap();
        let p = ParameterSet::<f32>::init(&g, 0);
        assert_eq!(p.len() as u64, count_parameters(&g));
        p.check_against(&g).unwrap();
    }

    #[test]
    fn init_is_seeded() {
        let g = build_denseed(&DenseEdSpec::new([1, 1, 1]).with_widths(4, 2)).unwrap();
        assert_eq!(ParameterSet::<f64>::init(&g, 3), ParameterSet::<f64>::init(&g, 3));
        assert_ne!(ParameterSet::<f64>::init(&g, 3), ParameterSet::<f64>::init(&g, 4));
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let g = build_denseed(&DenseEdSpec::new([1, 1, 1])).unwrap();
        let p = ParameterSet::<f64>::init(&g, 1);
        let stem = p.weight(0).unwrap();
        let bound = (6.0f64 / 49.0).sqrt();
        assert!(stem.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn container_roundtrip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let g = build_denseed(&DenseEdSpec::new([1, 1, 1]).with_widths(4, 2)).unwrap();
        let p = ParameterSet::<f32>::init(&g, 9);
        let (bin, _) = p.save(&dir.path().join("p")).unwrap();
        assert_eq!(ParameterSet::<f32>::load(&dir.path().join("p")).unwrap(), p);
        assert!(matches!(ParameterSet::<f64>::load(&dir.path().join("p")), Err(ExecError::Integrity(_))));
        let mut bytes = std::fs::read(&bin).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&bin, bytes).unwrap();
        assert!(matches!(ParameterSet::<f32>::load(&dir.path().join("p")), Err(ExecError::Integrity(_))));
    }

    #[test]
    fn mismatched_graph_is_rejected() {
        let g1 = build_denseed(&DenseEdSpec::new([1, 1, 1])).unwrap();
        let g2 = build_denseed(&DenseEdSpec::new([1, 2, 1])).unwrap();
        let p = ParameterSet::<f32>::init(&g1, 0);
        assert!(matches!(p.check_against(&g2), Err(ExecError::Dimension(_))));
    }
}
