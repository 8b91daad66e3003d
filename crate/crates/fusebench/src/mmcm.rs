//! MMCM model files.
//!
//! ```text
//! b"MMCM", version u32 LE (= 1), head count u32 LE
//! per head:  kind u8, L u32, dims u32×L, activation u8, dropout f32,
//!            then every layer's weight (row-major) and bias as f32 LE
//! trailer:   fusion strategy u8
//! ```
//!
//! Heads appear in training order (the branches, then the meta-classifier
//! for `sum` and `mixed`). The trailing strategy byte disambiguates
//! single-branch models.

use std::path::Path;

use fusebench_core::fusion::{FusionPlan, FusionStrategy, ModelGraph};
use fusebench_core::nn::{Activation, HeadKind, HeadSpec, ParamSet};

use crate::error::{read_file, write_atomic, Error, Result};

pub const MAGIC: &[u8; 4] = b"MMCM";
pub const VERSION: u32 = 1;

fn kind_code(k: HeadKind) -> u8 {
    match k {
        HeadKind::Mlp => 0,
        HeadKind::Gmlp => 1,
    }
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Gelu => 0,
        Activation::Relu => 1,
        Activation::LeakyRelu => 2,
    }
}

fn strategy_code(s: FusionStrategy) -> u8 {
    match s {
        FusionStrategy::ImageOnly => 0,
        FusionStrategy::TextOnly => 1,
        FusionStrategy::Concat => 2,
        FusionStrategy::Sum => 3,
        FusionStrategy::Mixed => 4,
    }
}

fn heads(model: &ModelGraph) -> Vec<(&HeadSpec, &ParamSet<f32>)> {
    let mut out: Vec<_> = model
        .plan
        .branch_specs
        .iter()
        .zip(&model.branch_params)
        .collect();
    if let (Some(s), Some(p)) = (&model.plan.meta_spec, &model.meta_params) {
        out.push((s, p));
    }
    out
}

pub fn encode_model(model: &ModelGraph) -> Result<Vec<u8>> {
    model.validate()?;
    let heads = heads(model);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(heads.len() as u32).to_le_bytes());
    for (spec, params) in heads {
        out.push(kind_code(spec.kind));
        out.extend_from_slice(&(spec.layer_dims.len() as u32).to_le_bytes());
        for &d in &spec.layer_dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(activation_code(spec.activation));
        out.extend_from_slice(&spec.dropout.to_le_bytes());
        for block in params.blocks() {
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out.push(strategy_code(model.plan.strategy));
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.what,
                self.bytes.len() as u64,
                "truncated model file",
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn err(&self, at: usize, msg: impl Into<String>) -> Error {
        Error::format(self.what, at as u64, msg)
    }
}

fn read_head(c: &mut Cursor<'_>) -> Result<(HeadSpec, ParamSet<f32>)> {
    let at = c.pos;
    let kind = match c.u8()? {
        0 => HeadKind::Mlp,
        1 => HeadKind::Gmlp,
        k => return Err(c.err(at, format!("unknown head kind {k}"))),
    };
    let len_at = c.pos;
    let len = c.u32()? as usize;
    // Each dim takes four bytes; bounds the allocation on corrupt input.
    if len > (c.bytes.len() - c.pos) / 4 {
        return Err(c.err(len_at, format!("layer count {len} exceeds file size")));
    }
    let layer_dims = (0..len)
        .map(|_| c.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let act_at = c.pos;
    let activation = match c.u8()? {
        0 => Activation::Gelu,
        1 => Activation::Relu,
        2 => Activation::LeakyRelu,
        a => return Err(c.err(act_at, format!("unknown activation {a}"))),
    };
    let dropout = c.f32()?;
    let spec = HeadSpec {
        kind,
        layer_dims,
        activation,
        dropout,
    };
    spec.validate().map_err(|e| c.err(at, e.to_string()))?;
    let n_params: usize = spec.linear_shapes().iter().map(|(o, i)| o * i + o).sum();
    if n_params > (c.bytes.len() - c.pos) / 4 {
        return Err(c.err(c.bytes.len(), "truncated parameter block"));
    }
    let mut params = ParamSet::zeros(&spec);
    for block in params.blocks_mut() {
        for v in block.iter_mut() {
            *v = c.f32()?;
        }
    }
    Ok((spec, params))
}

pub fn decode_model(bytes: &[u8], what: &str) -> Result<ModelGraph> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        what,
    };
    if c.take(4)? != MAGIC {
        return Err(c.err(0, "bad magic, expected MMCM"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(c.err(4, format!("unsupported version {version}")));
    }
    let count = c.u32()? as usize;
    if count == 0 || count > 4 {
        return Err(c.err(8, format!("head count {count} outside 1..=4")));
    }
    let mut heads = Vec::with_capacity(count);
    for _ in 0..count {
        heads.push(read_head(&mut c)?);
    }
    let strategy_at = c.pos;
    let strategy = match c.u8()? {
        0 => FusionStrategy::ImageOnly,
        1 => FusionStrategy::TextOnly,
        2 => FusionStrategy::Concat,
        3 => FusionStrategy::Sum,
        4 => FusionStrategy::Mixed,
        s => return Err(c.err(strategy_at, format!("unknown fusion strategy {s}"))),
    };
    if c.pos != bytes.len() {
        return Err(c.err(c.pos, "trailing bytes after model"));
    }
    let n_branches = strategy.branch_inputs().len();
    let expected = n_branches + strategy.has_meta() as usize;
    if count != expected {
        return Err(c.err(
            8,
            format!(
                "{} model needs {expected} heads, file has {count}",
                strategy.name()
            ),
        ));
    }
    let meta = if strategy.has_meta() {
        heads.pop()
    } else {
        None
    };
    let (branch_specs, branch_params): (Vec<_>, Vec<_>) = heads.into_iter().unzip();
    let plan = FusionPlan::new(strategy, branch_specs).map_err(|e| c.err(8, e.to_string()))?;
    if let (Some((spec, _)), Some(want)) = (&meta, &plan.meta_spec) {
        if spec != want {
            return Err(c.err(8, "meta-classifier must be a single linear K→K layer"));
        }
    }
    let model = ModelGraph {
        plan,
        branch_params,
        meta_params: meta.map(|m| m.1),
    };
    model.validate().map_err(|e| c.err(8, e.to_string()))?;
    Ok(model)
}

pub fn read_model(path: &Path) -> Result<ModelGraph> {
    decode_model(&read_file(path)?, &path.display().to_string())
}

pub fn write_model(model: &ModelGraph, path: &Path) -> Result<()> {
    write_atomic(path, &encode_model(model)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fusebench_core::nn::param_init;
    use fusebench_core::RngState;

    fn model(strategy: FusionStrategy, kind: HeadKind) -> ModelGraph {
        let t = HeadSpec {
            kind,
            layer_dims: vec![0, 6, 3],
            activation: Activation::LeakyRelu,
            dropout: 0.25,
        };
        let plan = FusionPlan::from_template(strategy, &t, 4, 5).unwrap();
        let mut rng = RngState::new(3);
        let branch_params = plan
            .branch_specs
            .iter()
            .map(|s| param_init(s, &mut rng).unwrap())
            .collect();
        let meta_params = plan
            .meta_spec
            .as_ref()
            .map(|s| param_init(s, &mut rng).unwrap());
        ModelGraph {
            plan,
            branch_params,
            meta_params,
        }
    }

    #[test]
    fn round_trips_every_strategy() {
        for s in [
            FusionStrategy::ImageOnly,
            FusionStrategy::TextOnly,
            FusionStrategy::Concat,
            FusionStrategy::Sum,
            FusionStrategy::Mixed,
        ] {
            for kind in [HeadKind::Mlp, HeadKind::Gmlp] {
                let m = model(s, kind);
                let bytes = encode_model(&m).unwrap();
                let back = decode_model(&bytes, "t").unwrap();
                assert_eq!(back, m);
                assert_eq!(encode_model(&back).unwrap(), bytes);
            }
        }
    }

    #[test]
    fn corrupt_files() {
        let bytes = encode_model(&model(FusionStrategy::Sum, HeadKind::Mlp)).unwrap();
        assert!(matches!(
            decode_model(&bytes[..bytes.len() - 5], "t"),
            Err(Error::Format { .. })
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_model(&extra, "t").is_err());
        let mut wrong = bytes.clone();
        *wrong.last_mut().unwrap() = 2;
        assert!(decode_model(&wrong, "t").is_err());
        assert!(decode_model(b"MMCX", "t").is_err());
    }
}
