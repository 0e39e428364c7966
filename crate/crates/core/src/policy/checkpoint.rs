//! Text checkpoint: a `key=value` header followed by one parameter per line,
//! written with 17 significant digits so the round trip is bit-exact.
//!
//! ```text
//! navlab-checkpoint
//! format_version=1
//! input_dim=36
//! hidden_dim=32
//! actions=4
//! parameter_count=6756
//! training_generation=300
//! rng_seed=7
//! params
//! -1.2345678901234567e-2
//! ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::{GruParams, NetDims};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "navlab-checkpoint";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub dims: NetDims,
    pub parameter_count: usize,
    pub training_generation: usize,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: GruParams,
}

impl Checkpoint {
    pub fn new(params: GruParams, training_generation: usize, rng_seed: u64) -> Self {
        let dims = params.dims();
        Self {
            header: CheckpointHeader {
                format_version: CHECKPOINT_FORMAT_VERSION,
                dims,
                parameter_count: dims.parameter_count(),
                training_generation,
                rng_seed,
            },
            params,
        }
    }

    pub fn to_text(&self) -> String {
        let h = &self.header;
        let mut out = String::with_capacity(32 * h.parameter_count + 256);
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "format_version={}", h.format_version);
        let _ = writeln!(out, "input_dim={}", h.dims.input);
        let _ = writeln!(out, "hidden_dim={}", h.dims.hidden);
        let _ = writeln!(out, "actions={}", h.dims.actions);
        let _ = writeln!(out, "parameter_count={}", h.parameter_count);
        let _ = writeln!(out, "training_generation={}", h.training_generation);
        let _ = writeln!(out, "rng_seed={}", h.rng_seed);
        out.push_str("params\n");
        for v in self.params.flatten() {
            let _ = writeln!(out, "{v:.16e}");
        }
        out
    }

    pub fn from_text(text: &str, source_name: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(source_name, 0, format!("truncated checkpoint: missing {what}")))
        };
        let (_, magic) = next("magic line")?;
        if magic.trim() != MAGIC {
            return Err(Error::parse(source_name, 1, "not a navlab checkpoint"));
        }
        let mut field = |key: &str| -> Result<u64> {
            let (i, line) = next(key)?;
            let value = line
                .strip_prefix(key)
                .and_then(|rest| rest.strip_prefix('='))
                .ok_or_else(|| Error::parse(source_name, i + 1, format!("expected `{key}=`")))?;
            value
                .trim()
                .parse()
                .map_err(|_| Error::parse(source_name, i + 1, format!("bad value for {key}")))
        };
        let format_version = field("format_version")? as u32;
        if format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::parse(
                source_name,
                2,
                format!("unsupported format_version {format_version}"),
            ));
        }
        let dims = NetDims {
            input: field("input_dim")? as usize,
            hidden: field("hidden_dim")? as usize,
            actions: field("actions")? as usize,
        };
        let parameter_count = field("parameter_count")? as usize;
        let training_generation = field("training_generation")? as usize;
        let rng_seed = field("rng_seed")?;
        if parameter_count != dims.parameter_count() {
            return Err(Error::parse(
                source_name,
                6,
                format!(
                    "parameter_count {parameter_count} disagrees with dimensions ({})",
                    dims.parameter_count()
                ),
            ));
        }
        let (i, marker) = next("params marker")?;
        if marker.trim() != "params" {
            return Err(Error::parse(source_name, i + 1, "expected `params`"));
        }
        let mut flat = Vec::with_capacity(parameter_count);
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|_| Error::parse(source_name, i + 1, format!("bad parameter `{line}`")))?;
            if !v.is_finite() {
                return Err(Error::parse(source_name, i + 1, "non-finite parameter"));
            }
            flat.push(v);
        }
        let params = GruParams::unflatten(&flat, dims)?;
        Ok(Self {
            header: CheckpointHeader {
                format_version,
                dims,
                parameter_count,
                training_generation,
                rng_seed,
            },
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, &path.display().to_string())
    }
}
