use super::{ArchError, NetworkGraph, SpatialScale};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub label: String,
    pub channels: usize,
    pub scale: SpatialScale,
}

/// Per-layer channel and resolution trace plus the headline counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureTrace {
    pub stages: Vec<Stage>,
    pub max_feature_maps: usize,
    pub conv_layer_count: usize,
    pub parameter_count: u64,
}

impl FeatureTrace {
    /// Side length of each stage for a square input of side `input`.
    pub fn sides(&self, input: usize) -> Vec<usize> {
        self.stages
            .iter()
            .map(|s| {
                let side = s.scale * SpatialScale::from_integer(input as u64);
                side.to_integer() as usize
            })
            .collect()
    }
}

pub fn trace_features(graph: &NetworkGraph) -> Result<FeatureTrace, ArchError> {
    let scales = graph.validate()?;
    let stages: Vec<Stage> = graph
        .layers
        .iter()
        .zip(scales)
        .map(|(l, scale)| Stage { label: l.label.clone(), channels: l.out_channels, scale })
        .collect();
    Ok(FeatureTrace {
        max_feature_maps: stages.iter().map(|s| s.channels).max().unwrap_or(0),
        conv_layer_count: count_conv_layers(graph),
        parameter_count: count_parameters(graph),
        stages,
    })
}

pub fn count_parameters(graph: &NetworkGraph) -> u64 {
    graph.layers.iter().map(|l| l.parameter_count()).sum()
}

pub fn count_conv_layers(graph: &NetworkGraph) -> usize {
    graph.layers.iter().filter(|l| l.kind.is_conv()).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_denseed, DenseEdSpec, GraphBuilder};

    #[test]
    fn stem_conv_alone() {
        let mut b = GraphBuilder::new("stem", 1);
        b.conv("stem", 48, 7, 1, false);
        assert_eq!(count_parameters(&b.finish().unwrap()), 2352);
    }

    #[test]
    fn block_outputs_grow_linearly() {
        let g = build_denseed(&DenseEdSpec::new([3, 6, 3])).unwrap();
        let t = trace_features(&g).unwrap();
        let at = |label: &str| t.stages.iter().find(|s| s.label == label).unwrap().channels;
        assert_eq!(at("dense1.3.cat"), 48 + 3 * 16);
        assert_eq!(at("dense2.6.cat"), 144);
        assert_eq!(t.max_feature_maps, 144);
    }

    #[test]
    fn spatial_trace_for_128_input() {
        let g = build_denseed(&DenseEdSpec::new([3, 6, 3])).unwrap();
        let t = trace_features(&g).unwrap();
        let sides = t.sides(128);
        let at = |label: &str| sides[t.stages.iter().position(|s| s.label == label).unwrap()];
        assert_eq!(at("stem"), 64);
        assert_eq!(at("encode.down"), 32);
        assert_eq!(at("decode1.up"), 64);
        assert_eq!(at("decode2.up"), 128);
    }
}
