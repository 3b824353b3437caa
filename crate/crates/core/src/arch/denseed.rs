use super::{ArchError, GraphBuilder, NetworkGraph};

/// Block configuration of a three-block dense encoder-decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DenseEdSpec {
    /// Dense layers in the encoder, latent and decoder blocks.
    pub blocks: [usize; 3],
    /// Feature maps each dense layer adds.
    pub growth_rate: usize,
    /// Output channels of the stem convolution.
    pub initial_features: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl DenseEdSpec {
    pub const DEFAULT_GROWTH_RATE: usize = 16;
    pub const DEFAULT_INITIAL_FEATURES: usize = 48;

    /// Grayscale-in, grayscale-out spec with the default widths.
    pub fn new(blocks: [usize; 3]) -> Self {
        DenseEdSpec {
            blocks,
            growth_rate: Self::DEFAULT_GROWTH_RATE,
            initial_features: Self::DEFAULT_INITIAL_FEATURES,
            in_channels: 1,
            out_channels: 1,
        }
    }

    pub fn with_widths(mut self, initial_features: usize, growth_rate: usize) -> Self {
        self.initial_features = initial_features;
        self.growth_rate = growth_rate;
        self
    }

    pub fn name(&self) -> String {
        let [a, b, c] = self.blocks;
        let mut name = format!("DenseED-({a},{b},{c})");
        if self.growth_rate != Self::DEFAULT_GROWTH_RATE || self.initial_features != Self::DEFAULT_INITIAL_FEATURES {
            name.push_str(&format!("[K0={},K={}]", self.initial_features, self.growth_rate));
        }
        name
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        if self.blocks.contains(&0) {
            return Err(ArchError::InvalidSpec(format!("block sizes must be positive, got {:?}", self.blocks)));
        }
        if self.growth_rate == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(ArchError::InvalidSpec("growth rate and channel counts must be positive".into()));
        }
        if self.initial_features < 2 || !self.initial_features.is_multiple_of(2) {
            return Err(ArchError::InvalidSpec(format!(
                "initial features must be even and >= 2, got {}",
                self.initial_features
            )));
        }
        Ok(())
    }
}

impl Default for DenseEdSpec {
    fn default() -> Self {
        DenseEdSpec::new([3, 6, 3])
    }
}

/// Floor halving; only a transition that would produce no channels is
/// unrepresentable.
fn halve(channels: usize, at: &str) -> Result<usize, ArchError> {
    if channels < 2 {
        return Err(ArchError::Unrepresentable(format!("{channels} channels entering {at} cannot be halved")));
    }
    Ok(channels / 2)
}

fn dense_block(b: &mut GraphBuilder, label: &str, layers: usize, growth: usize) {
    b.begin_block(label);
    for i in 1..=layers {
        let x0 = b.tap();
        b.batch_norm(format!("{label}.{i}.bn"))
            .relu(format!("{label}.{i}.relu"))
            .conv(format!("{label}.{i}.conv"), growth, 3, 1, false)
            .concat(format!("{label}.{i}.cat"), x0);
    }
    b.end_block();
}

/// 1x1 halving conv followed by a stride-2 conv (down) or transposed conv (up).
fn transition(b: &mut GraphBuilder, label: &str, up: bool, out: Option<usize>) -> Result<(), ArchError> {
    let half = halve(b.channels(), label)?;
    b.batch_norm(format!("{label}.bn1"))
        .relu(format!("{label}.relu1"))
        .conv(format!("{label}.conv1"), half, 1, 1, false)
        .batch_norm(format!("{label}.bn2"))
        .relu(format!("{label}.relu2"));
    let out = out.unwrap_or(half);
    if up {
        b.transposed_conv(format!("{label}.up"), out, 3, 2, false);
    } else {
        b.conv(format!("{label}.down"), out, 3, 2, false);
    }
    Ok(())
}

/// Stem conv, three dense blocks joined by one encoding and two decoding
/// transitions. All convolutions are bias-free.
pub fn build_denseed(spec: &DenseEdSpec) -> Result<NetworkGraph, ArchError> {
    spec.validate()?;
    let k = spec.growth_rate;
    let mut b = GraphBuilder::new(spec.name(), spec.in_channels);
    b.conv("stem", spec.initial_features, 7, 2, false);
    dense_block(&mut b, "dense1", spec.blocks[0], k);
    transition(&mut b, "encode", false, None)?;
    dense_block(&mut b, "dense2", spec.blocks[1], k);
    transition(&mut b, "decode1", true, None)?;
    dense_block(&mut b, "dense3", spec.blocks[2], k);
    transition(&mut b, "decode2", true, Some(spec.out_channels))?;
    b.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{count_conv_layers, LayerKind, Tap};

    #[test]
    fn zero_block_is_invalid() {
        let err = build_denseed(&DenseEdSpec::new([0, 1, 1])).unwrap_err();
        assert!(matches!(err, ArchError::InvalidSpec(_)));
    }

    #[test]
    fn odd_initial_width_is_invalid() {
        let err = build_denseed(&DenseEdSpec::new([1, 1, 1]).with_widths(7, 4)).unwrap_err();
        assert!(matches!(err, ArchError::InvalidSpec(_)));
    }

    #[test]
    fn odd_channels_at_transition_are_floored() {
        // 4 + 2 = 6 -> 3, then 3 + 2 = 5 -> 2 at the first decoder.
        let g = build_denseed(&DenseEdSpec::new([1, 1, 1]).with_widths(4, 2)).unwrap();
        let conv1 = g.layers.iter().find(|l| l.label == "decode1.conv1").unwrap();
        assert_eq!((conv1.in_channels, conv1.out_channels), (5, 2));
    }

    #[test]
    fn transitions_halve_exactly_for_even_widths() {
        let g = build_denseed(&DenseEdSpec::new([3, 6, 3]).with_widths(16, 8)).unwrap();
        for l in g.layers.iter().filter(|l| l.label.ends_with(".conv1")) {
            assert_eq!(l.out_channels, l.in_channels / 2);
        }
    }

    #[test]
    fn table_conv_layer_counts() {
        for (blocks, convs) in [([3, 6, 3], 19), ([1, 1, 1], 10), ([9, 18, 9], 43)] {
            let g = build_denseed(&DenseEdSpec::new(blocks)).unwrap();
            assert_eq!(count_conv_layers(&g), convs, "{blocks:?}");
        }
    }

    #[test]
    fn dense_layer_concatenates_its_input_first() {
        let g = build_denseed(&DenseEdSpec::new([1, 1, 1])).unwrap();
        let block = &g.blocks[0];
        let cat = &g.layers[block.layers.end - 1];
        assert_eq!(cat.kind, LayerKind::ConcatInput { source: Tap::Layer(0) });
        assert_eq!((cat.in_channels, cat.out_channels), (16, 64));
    }

    #[test]
    fn blocks_cover_their_dense_layers() {
        let g = build_denseed(&DenseEdSpec::new([2, 3, 4])).unwrap();
        let sizes: Vec<usize> = g.blocks.iter().map(|b| b.layers.len() / 4).collect();
        assert_eq!(sizes, vec![2, 3, 4]);
    }
}
