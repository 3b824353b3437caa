//! Comparison architectures: a plain residual-free denoising stack and a
//! width-capped U-Net.

use super::{ArchError, GraphBuilder, NetworkGraph, Tap};

/// `depth` stride-1 3x3 convolutions. Only the first carries a bias; the
/// middle units are conv + batch-norm + ReLU.
pub fn build_dncnn(depth: usize, width: usize) -> Result<NetworkGraph, ArchError> {
    if depth < 3 {
        return Err(ArchError::InvalidSpec(format!("DnCNN depth must be >= 3, got {depth}")));
    }
    if width == 0 {
        return Err(ArchError::InvalidSpec("DnCNN width must be positive".into()));
    }
    let mut b = GraphBuilder::new(format!("DnCNN-{depth}"), 1);
    b.conv("head", width, 3, 1, true).relu("head.relu");
    for i in 1..=depth - 2 {
        b.conv(format!("body{i}.conv"), width, 3, 1, false)
            .batch_norm(format!("body{i}.bn"))
            .relu(format!("body{i}.relu"));
    }
    b.conv("tail", 1, 3, 1, false);
    b.finish()
}

/// U-Net with `levels` stride-2 encoder stages and as many transposed-conv
/// decoder stages, each concatenating the encoder features of matching size.
///
/// Encoder width stays at `base_width`; decoder convolutions run at twice
/// that, so feature maps never exceed `2 * base_width`. Total conv layers:
/// `3 * levels + 3`.
pub fn build_unet(levels: usize, base_width: usize) -> Result<NetworkGraph, ArchError> {
    if levels == 0 {
        return Err(ArchError::InvalidSpec("U-Net needs at least one level".into()));
    }
    if base_width == 0 {
        return Err(ArchError::InvalidSpec("U-Net width must be positive".into()));
    }
    let w = base_width;
    let mut b = GraphBuilder::new(format!("U-Net-{levels}"), 1);
    let mut skips: Vec<Tap> = Vec::with_capacity(levels);
    b.conv("enc0", w, 3, 1, true).relu("enc0.relu");
    skips.push(b.tap());
    for l in 1..=levels {
        b.conv(format!("enc{l}"), w, 3, 2, true).relu(format!("enc{l}.relu"));
        if l < levels {
            skips.push(b.tap());
        }
    }
    b.conv("bottleneck", w, 3, 1, true).relu("bottleneck.relu");
    for l in (1..=levels).rev() {
        let skip = skips.pop().expect("one skip per level");
        b.transposed_conv(format!("dec{l}.up"), w, 3, 2, true)
            .relu(format!("dec{l}.up.relu"))
            .concat(format!("dec{l}.cat"), skip)
            .conv(format!("dec{l}.conv"), 2 * w, 3, 1, true)
            .relu(format!("dec{l}.relu"));
    }
    b.conv("out", 1, 3, 1, true);
    b.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{count_conv_layers, count_parameters, trace_features};

    #[test]
    fn dncnn_reference_counts() {
        let g = build_dncnn(17, 64).unwrap();
        assert_eq!(count_conv_layers(&g), 17);
        assert_eq!(count_parameters(&g), 556_096);
        assert_eq!(trace_features(&g).unwrap().max_feature_maps, 64);
    }

    #[test]
    fn dncnn_per_layer_decomposition() {
        // head 1*64*9 + 64, body 64*64*9 + 2*64, tail 64*9.
        let g = build_dncnn(17, 64).unwrap();
        let per: Vec<u64> = g.layers.iter().filter(|l| l.parameter_count() > 0).map(|l| l.parameter_count()).collect();
        assert_eq!(per[0], 640);
        assert_eq!(*per.last().unwrap(), 576);
        assert_eq!(per[1..per.len() - 1].iter().sum::<u64>(), 15 * (36_864 + 128));
    }

    #[test]
    fn dncnn_rejects_shallow() {
        assert!(matches!(build_dncnn(2, 64), Err(ArchError::InvalidSpec(_))));
    }

    #[test]
    fn unet_reference_counts() {
        let g = build_unet(5, 48).unwrap();
        assert_eq!(count_conv_layers(&g), 18);
        assert_eq!(trace_features(&g).unwrap().max_feature_maps, 96);
        assert_eq!(g.required_divisor(), 32);
    }

    #[test]
    fn unet_rejects_zero_levels() {
        assert!(build_unet(0, 48).is_err());
    }
}
