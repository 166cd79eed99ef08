use super::{FieldError, MimoConfig, MimoModel, BRANCHES};
use crate::nn::{Mlp, MultiTaskLossState, Tensor};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MIMO";
const VERSION: u32 = 1;

/// Training provenance stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct CheckpointMeta {
    pub dataset_hash: u64,
    pub step_count: usize,
}

/// A model plus its training metadata; round-trips bitwise through the
/// on-disk format.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MimoModel,
    pub meta: CheckpointMeta,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Header {
    config: MimoConfig,
    s: [f64; 4],
    kinds: MultiTaskLossState,
    meta: CheckpointMeta,
}

fn tensor_names(model: &MimoModel) -> Vec<String> {
    let mut names = Vec::new();
    let mut mlp = |prefix: &str, m: &Mlp| {
        for i in 0..m.layers.len() {
            names.push(format!("{prefix}.{i}.w"));
            names.push(format!("{prefix}.{i}.b"));
        }
    };
    mlp("encoder", &model.encoder);
    mlp("trunk", &model.trunk);
    for (b, h) in BRANCHES.iter().zip(&model.heads) {
        mlp(&format!("head.{b:?}").to_lowercase(), h);
    }
    names
}

/// Binary layout: magic, version u32, header-JSON length + bytes, tensor
/// count u32, then per tensor: name (u32 length + UTF-8), rank u32, dims
/// u32 each, data as little-endian f64.
pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), FieldError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let header = Header {
        config: ckpt.model.config.clone(),
        s: ckpt.model.loss_state.s,
        kinds: ckpt.model.loss_state.clone(),
        meta: ckpt.meta.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;

    let names = tensor_names(&ckpt.model);
    let tensors = ckpt.model.param_tensors();
    assert_eq!(names.len(), tensors.len());
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in names.iter().zip(tensors) {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, FieldError> {
    let file = path.display().to_string();
    let bad = |msg: &str| FieldError::BadCheckpoint {
        file: file.clone(),
        msg: msg.into(),
    };
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("wrong magic bytes"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let json_len = read_u32(&mut r)? as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| bad(&format!("header: {e}")))?;

    let mut model = MimoModel::init(header.config, 0);
    model.loss_state = header.kinds;
    model.loss_state.s = header.s;

    let expected = tensor_names(&model);
    let count = read_u32(&mut r)? as usize;
    if count != expected.len() {
        return Err(bad(&format!(
            "tensor count {count}, expected {}",
            expected.len()
        )));
    }
    let mut params = model.param_tensors_mut();
    for (name, slot) in expected.iter().zip(params.iter_mut()) {
        let name_len = read_u32(&mut r)? as usize;
        let mut buf = vec![0u8; name_len];
        r.read_exact(&mut buf)?;
        let got = String::from_utf8(buf).map_err(|_| {
            FieldError::BadCheckpoint {
                file: file.clone(),
                msg: "tensor name is not UTF-8".into(),
            }
        })?;
        if &got != name {
            return Err(bad(&format!("tensor `{got}`, expected `{name}`")));
        }
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        if shape != slot.shape {
            return Err(bad(&format!(
                "tensor `{got}` shape {shape:?}, expected {:?}",
                slot.shape
            )));
        }
        let mut bytes = vec![0u8; slot.len() * 8];
        r.read_exact(&mut bytes)?;
        **slot = Tensor::new(
            shape,
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    Ok(Checkpoint {
        model,
        meta: header.meta,
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, FieldError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
