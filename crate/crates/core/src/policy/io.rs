//! Parameter files: one JSON header line, then one parameter per line.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PolicySpec;
use crate::error::PolicyError;

pub const PARAM_FORMAT: &str = "mixflow-policy-params";
pub const PARAM_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerInfo {
    pub name: String,
    pub shape: [usize; 2],
    pub activation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamHeader {
    pub format: String,
    pub version: u32,
    pub spec: PolicySpec,
    pub layers: Vec<LayerInfo>,
    pub num_params: usize,
    /// Free-form provenance (tool version, config digest, seed).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
}

impl ParamHeader {
    pub fn for_spec(spec: &PolicySpec) -> Self {
        Self {
            format: PARAM_FORMAT.into(),
            version: PARAM_VERSION,
            spec: spec.clone(),
            layers: spec
                .blocks()
                .into_iter()
                .map(|(name, shape, act)| LayerInfo {
                    name,
                    shape,
                    activation: act.into(),
                })
                .collect(),
            num_params: spec.param_count(),
            generator: None,
        }
    }
}

/// Serialises parameters; floats use the shortest exact round-trip form.
pub fn encode_params(spec: &PolicySpec, params: &[f64], generator: Option<&str>) -> Result<String, PolicyError> {
    spec.check_params(params)?;
    let mut header = ParamHeader::for_spec(spec);
    header.generator = generator.map(str::to_string);
    let header = serde_json::to_string(&header).map_err(|e| PolicyError::Format(e.to_string()))?;
    let mut out = header;
    out.push('\n');
    for p in params {
        out.push_str(&format!("{p:?}\n"));
    }
    Ok(out)
}

pub fn decode_params(text: &str) -> Result<(PolicySpec, Vec<f64>), PolicyError> {
    let mut lines = text.lines();
    let header_line = lines.next().ok_or_else(|| PolicyError::Format("empty file".into()))?;
    let header: ParamHeader =
        serde_json::from_str(header_line).map_err(|e| PolicyError::Format(format!("header: {e}")))?;
    if header.format != PARAM_FORMAT {
        return Err(PolicyError::Format(format!("unknown format `{}`", header.format)));
    }
    if header.version != PARAM_VERSION {
        return Err(PolicyError::Format(format!("unsupported version {}", header.version)));
    }
    let expected = ParamHeader {
        generator: header.generator.clone(),
        ..ParamHeader::for_spec(&header.spec)
    };
    if header != expected {
        return Err(PolicyError::Format("layer table does not match the declared architecture".into()));
    }
    let params = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| PolicyError::Format(format!("bad parameter `{l}`: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    header.spec.check_params(&params)?;
    Ok((header.spec, params))
}

pub fn save_params(path: &Path, spec: &PolicySpec, params: &[f64], generator: Option<&str>) -> Result<(), PolicyError> {
    let text = encode_params(spec, params, generator)?;
    fs::write(path, text).map_err(|e| PolicyError::Format(format!("{}: {e}", path.display())))
}

pub fn load_params(path: &Path) -> Result<(PolicySpec, Vec<f64>), PolicyError> {
    let text = fs::read_to_string(path).map_err(|e| PolicyError::Format(format!("{}: {e}", path.display())))?;
    decode_params(&text)
}
