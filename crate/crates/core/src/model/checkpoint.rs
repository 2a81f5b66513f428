//! Binary checkpoints: magic, version, a JSON config block, then the flat
//! parameters as little-endian `f64` in declaration order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{AlphaSchedule, GuidedModel, ModelConfig, ModelError, ParamLayout};
use crate::patterns::{HeadAssignment, PatternSpec};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGLM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    schedule: AlphaSchedule,
    num_layers: usize,
    per_head: Vec<Option<String>>,
    num_params: usize,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

pub fn write_checkpoint(model: &GuidedModel, mut w: impl Write) -> Result<(), ModelError> {
    let header = Header {
        config: model.config.clone(),
        schedule: model.schedule,
        num_layers: model.guiding.num_layers,
        per_head: model
            .guiding
            .per_head()
            .iter()
            .map(|s| s.map(|s| s.to_string()))
            .collect(),
        num_params: model.params.len(),
    };
    let block = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(block.len() as u32).to_le_bytes())?;
    w.write_all(&block)?;
    let mut buf = Vec::with_capacity(model.params.len() * 8);
    for p in &model.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint(mut r: impl Read) -> Result<GuidedModel, ModelError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = read_u32(&mut r)? as usize;
    let mut block = vec![0u8; len];
    r.read_exact(&mut block)?;
    let header: Header = serde_json::from_slice(&block).map_err(|e| bad(e.to_string()))?;
    header.config.validate()?;
    let per_head = header
        .per_head
        .iter()
        .map(|s| s.as_deref().map(str::parse::<PatternSpec>).transpose())
        .collect::<Result<Vec<_>, _>>()?;
    let guiding = HeadAssignment::from_per_head(header.num_layers, per_head);
    let layout = ParamLayout::new(&header.config);
    if layout.total != header.num_params {
        return Err(bad(format!(
            "config implies {} parameters, header says {}",
            layout.total, header.num_params
        )));
    }
    let mut raw = vec![0u8; header.num_params * 8];
    r.read_exact(&mut raw)?;
    let params = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut model = GuidedModel::new(header.config, guiding, header.schedule.alpha0)?;
    model.params = params;
    model.schedule = header.schedule;
    Ok(model)
}
