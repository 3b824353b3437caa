//! Architecture audit against the published configuration table.

use std::fmt;

use super::{build_denseed, build_dncnn, build_unet, trace_features, ArchError, DenseEdSpec, NetworkGraph};
use crate::kv::{parse_list, KvMap};

/// Any architecture the crate can build, as a declarative value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelConfig {
    DenseEd(DenseEdSpec),
    DnCnn { depth: usize, width: usize },
    UNet { levels: usize, base_width: usize },
}

impl ModelConfig {
    pub fn build(&self) -> Result<NetworkGraph, ArchError> {
        match *self {
            ModelConfig::DenseEd(ref spec) => build_denseed(spec),
            ModelConfig::DnCnn { depth, width } => build_dncnn(depth, width),
            ModelConfig::UNet { levels, base_width } => build_unet(levels, base_width),
        }
    }

    pub fn name(&self) -> String {
        match *self {
            ModelConfig::DenseEd(ref spec) => spec.name(),
            ModelConfig::DnCnn { depth, width: 64 } => format!("DnCNN-{depth}"),
            ModelConfig::DnCnn { depth, width } => format!("DnCNN-{depth}[w={width}]"),
            ModelConfig::UNet { levels, base_width: 48 } => format!("U-Net-{levels}"),
            ModelConfig::UNet { levels, base_width } => format!("U-Net-{levels}[w={base_width}]"),
        }
    }

    /// Reads `model=denseed|dncnn|unet` plus the family's keys. DenseED is
    /// the default family: `blocks=a,b,c growth=K initial=K0`.
    pub fn from_kv(kv: &KvMap) -> Result<Self, ArchError> {
        let invalid = |e: crate::kv::KvError| ArchError::InvalidSpec(e.to_string());
        match kv.get("model").unwrap_or("denseed") {
            "denseed" => {
                let blocks = kv.get("blocks").unwrap_or("3,6,3");
                let blocks: Vec<usize> = parse_list("blocks", blocks).map_err(invalid)?;
                let blocks: [usize; 3] = blocks
                    .try_into()
                    .map_err(|b: Vec<usize>| ArchError::InvalidSpec(format!("blocks needs 3 entries, got {}", b.len())))?;
                let mut spec = DenseEdSpec::new(blocks);
                spec.growth_rate = kv.parsed_or("growth", spec.growth_rate).map_err(invalid)?;
                spec.initial_features = kv.parsed_or("initial", spec.initial_features).map_err(invalid)?;
                spec.in_channels = kv.parsed_or("in_channels", 1).map_err(invalid)?;
                spec.out_channels = kv.parsed_or("out_channels", 1).map_err(invalid)?;
                spec.validate()?;
                Ok(ModelConfig::DenseEd(spec))
            }
            "dncnn" => Ok(ModelConfig::DnCnn {
                depth: kv.parsed_or("depth", 17).map_err(invalid)?,
                width: kv.parsed_or("width", 64).map_err(invalid)?,
            }),
            "unet" => Ok(ModelConfig::UNet {
                levels: kv.parsed_or("levels", 5).map_err(invalid)?,
                base_width: kv.parsed_or("width", 48).map_err(invalid)?,
            }),
            other => Err(ArchError::InvalidSpec(format!("unknown model family {other:?}"))),
        }
    }

    pub const KEYS: [&'static str; 9] =
        ["model", "blocks", "growth", "initial", "in_channels", "out_channels", "depth", "width", "levels"];

    /// Inline `key=value` form; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self, ArchError> {
        let kv = KvMap::parse_inline(text).map_err(|e| ArchError::InvalidSpec(e.to_string()))?;
        if let Some(bad) = kv.0.keys().find(|k| !Self::KEYS.contains(&k.as_str())) {
            return Err(ArchError::InvalidSpec(format!("unknown model key {bad:?}")));
        }
        Self::from_kv(&kv)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        match *self {
            ModelConfig::DenseEd(ref s) => {
                kv.insert("model", "denseed");
                kv.insert("blocks", format!("{},{},{}", s.blocks[0], s.blocks[1], s.blocks[2]));
                kv.insert("growth", s.growth_rate);
                kv.insert("initial", s.initial_features);
                kv.insert("in_channels", s.in_channels);
                kv.insert("out_channels", s.out_channels);
            }
            ModelConfig::DnCnn { depth, width } => {
                kv.insert("model", "dncnn");
                kv.insert("depth", depth);
                kv.insert("width", width);
            }
            ModelConfig::UNet { levels, base_width } => {
                kv.insert("model", "unet");
                kv.insert("levels", levels);
                kv.insert("width", base_width);
            }
        }
        kv
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_kv().render_inline())
    }
}

/// One row of the published comparison table, verbatim, with flags for
/// which columns are expected to be reproduced exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceRow {
    pub config: ModelConfig,
    pub conv_layers: usize,
    pub parameters: u64,
    pub max_feature_maps: usize,
    /// False where the printed count cannot be reproduced: the (3,6,3) row
    /// repeats the (4,4,4) count, and the U-Net internals are unpublished.
    pub parameters_exact: bool,
    /// False for rows whose printed maximum is not the largest concatenation
    /// ((2,2,2): 72 vs 80, (4,4,4): 120 vs 124).
    pub max_feature_maps_exact: bool,
}

pub fn reference_table() -> Vec<ReferenceRow> {
    let dense = |b: [usize; 3], convs, params, maxfm, pe, me| ReferenceRow {
        config: ModelConfig::DenseEd(DenseEdSpec::new(b)),
        conv_layers: convs,
        parameters: params,
        max_feature_maps: maxfm,
        parameters_exact: pe,
        max_feature_maps_exact: me,
    };
    vec![
        dense([1, 1, 1], 10, 36_572, 64, true, true),
        dense([2, 2, 2], 13, 80_702, 72, true, false),
        dense([3, 3, 3], 16, 143_040, 96, true, true),
        dense([4, 4, 4], 19, 223_586, 120, true, false),
        dense([3, 6, 3], 19, 223_586, 144, false, true),
        dense([6, 12, 6], 31, 788_046, 264, true, true),
        dense([8, 8, 8], 31, 727_850, 236, true, true),
        dense([9, 18, 9], 43, 1_663_176, 384, true, true),
        ReferenceRow {
            config: ModelConfig::UNet { levels: 5, base_width: 48 },
            conv_layers: 18,
            parameters: 989_712,
            max_feature_maps: 96,
            parameters_exact: false,
            max_feature_maps_exact: true,
        },
        ReferenceRow {
            config: ModelConfig::DnCnn { depth: 17, width: 64 },
            conv_layers: 17,
            parameters: 556_096,
            max_feature_maps: 64,
            parameters_exact: true,
            max_feature_maps_exact: true,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRow {
    pub name: String,
    pub config: ModelConfig,
    pub conv_layers: usize,
    pub parameters: u64,
    pub max_feature_maps: usize,
    pub expected: Option<ReferenceRow>,
}

impl AuditRow {
    /// Columns that disagree with the table, each with whether the
    /// disagreement is a failure (`true`) or an expected flag.
    pub fn mismatches(&self) -> Vec<(&'static str, bool)> {
        let Some(e) = self.expected else { return Vec::new() };
        let mut out = Vec::new();
        if self.conv_layers != e.conv_layers {
            out.push(("conv_layers", true));
        }
        if self.parameters != e.parameters {
            out.push(("parameters", e.parameters_exact));
        }
        if self.max_feature_maps != e.max_feature_maps {
            out.push(("max_feature_maps", e.max_feature_maps_exact));
        }
        out
    }

    pub fn has_hard_mismatch(&self) -> bool {
        self.mismatches().iter().any(|&(_, hard)| hard)
    }

    pub fn status(&self) -> String {
        if self.expected.is_none() {
            return "n/a".into();
        }
        let m = self.mismatches();
        if m.is_empty() {
            return "match".into();
        }
        m.iter()
            .map(|&(col, hard)| format!("{}:{col}", if hard { "mismatch" } else { "flagged" }))
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub rows: Vec<AuditRow>,
}

impl AuditReport {
    pub const HEADER: [&'static str; 6] =
        ["name", "conv_layers", "parameters", "max_feature_maps", "table3_expected_params", "match"];

    pub fn is_clean(&self) -> bool {
        !self.rows.iter().any(AuditRow::has_hard_mismatch)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::HEADER).expect("in-memory write");
        for r in &self.rows {
            let expected = r.expected.map(|e| e.parameters.to_string()).unwrap_or_default();
            w.write_record([
                r.name.clone(),
                r.conv_layers.to_string(),
                r.parameters.to_string(),
                r.max_feature_maps.to_string(),
                expected,
                r.status(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush to Vec")).expect("csv output is utf-8")
    }

    /// Human-readable lines describing every hard mismatch.
    pub fn diff(&self) -> Vec<String> {
        let mut out = Vec::new();
        for r in self.rows.iter().filter(|r| r.has_hard_mismatch()) {
            let e = r.expected.expect("mismatch implies an expectation");
            for (col, _) in r.mismatches().into_iter().filter(|m| m.1) {
                let (got, want) = match col {
                    "conv_layers" => (r.conv_layers as u64, e.conv_layers as u64),
                    "parameters" => (r.parameters, e.parameters),
                    _ => (r.max_feature_maps as u64, e.max_feature_maps as u64),
                };
                out.push(format!("{}: {col} derived {got}, table {want}", r.name));
            }
        }
        out
    }
}

pub fn audit_table(configs: &[ModelConfig]) -> Result<AuditReport, ArchError> {
    let table = reference_table();
    let rows = configs
        .iter()
        .map(|cfg| {
            let graph = cfg.build()?;
            let trace = trace_features(&graph)?;
            Ok(AuditRow {
                name: cfg.name(),
                config: *cfg,
                conv_layers: trace.conv_layer_count,
                parameters: trace.parameter_count,
                max_feature_maps: trace.max_feature_maps,
                expected: table.iter().find(|row| row.config == *cfg).copied(),
            })
        })
        .collect::<Result<Vec<_>, ArchError>>()?;
    Ok(AuditReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_list_gives_empty_report() {
        let r = audit_table(&[]).unwrap();
        assert!(r.rows.is_empty());
        assert!(r.is_clean());
        assert_eq!(r.to_csv().lines().count(), 1);
    }

    #[test]
    fn two_two_two_max_feature_maps_is_flagged() {
        let r = audit_table(&[ModelConfig::DenseEd(DenseEdSpec::new([2, 2, 2]))]).unwrap();
        assert_eq!(r.rows[0].max_feature_maps, 80);
        assert_eq!(r.rows[0].status(), "flagged:max_feature_maps");
        assert!(r.is_clean());
    }

    #[test]
    fn config_kv_roundtrip() {
        for row in reference_table() {
            assert_eq!(ModelConfig::from_kv(&row.config.to_kv()).unwrap(), row.config);
        }
    }

    #[test]
    fn bad_inline_configs() {
        assert!(matches!(ModelConfig::parse("blocks=0,1,1"), Err(ArchError::InvalidSpec(_))));
        assert!(ModelConfig::parse("blocks=1,2").is_err());
        assert!(ModelConfig::parse("model=resnet").is_err());
        assert!(ModelConfig::parse("blocks=a,b,c").is_err());
    }

    #[test]
    fn unknown_config_has_no_expectation() {
        let cfg = ModelConfig::parse("blocks=5,5,5").unwrap();
        let r = audit_table(&[cfg]).unwrap();
        assert_eq!(r.rows[0].status(), "n/a");
        assert!(r.to_csv().contains("\"DenseED-(5,5,5)\""));
    }
}
