//! Binary model format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"DONET1"
//! u32    block count
//! per block:
//!   u8   kind tag
//!   u32  tensor count
//!   per tensor: u32 ndim, ndim * u32 dims, numel * f64 payload
//! u8     0xFF trailer marker
//! u32    config length, then that many bytes of config JSON
//! 4 tensors: stem weight, stem bias, head weight, head bias
//! ```
//!
//! Per-block tensors appear in a fixed order: bn1 gamma/beta/mean/var,
//! map1 weight/bias, bn2 gamma/beta/mean/var, map2 weight/bias, then the
//! coefficient scalar for kinds that own one, then gate weight and bias for
//! the gating kinds. Running statistics travel with the weights; the EMA
//! momentum is a constant 0.1 and is not stored. Writing the same model
//! twice yields identical bytes, and load(save(m)) == m bit for bit.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{RunningStats, Tensor};

use super::{Block, BlockKind, BnLayer, MapLayer, Model, ModelConfig, Param, Transform};

const MAGIC: &[u8; 6] = b"DONET1";
const TRAILER: u8 = 0xFF;

/// Tensors each block serializes, before kind-specific extras.
const BASE_TENSORS: u32 = 12;

pub fn save(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    from_bytes(&std::fs::read(path)?)
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, model.blocks.len() as u32);
    for block in &model.blocks {
        out.push(block.kind.tag());
        let extras = block.kind.has_lambda() as u32 + 2 * block.kind.has_gate() as u32;
        put_u32(&mut out, BASE_TENSORS + extras);
        let t = &block.transform;
        put_bn(&mut out, &t.bn1);
        put_tensor(&mut out, &t.map1.weight.value);
        put_tensor(&mut out, &t.map1.bias.value);
        put_bn(&mut out, &t.bn2);
        put_tensor(&mut out, &t.map2.weight.value);
        put_tensor(&mut out, &t.map2.bias.value);
        if let Some(l) = &block.lambda_raw {
            put_tensor(&mut out, &l.value);
        }
        if let (Some(w), Some(b)) = (&block.gate_w, &block.gate_b) {
            put_tensor(&mut out, &w.value);
            put_tensor(&mut out, &b.value);
        }
    }
    out.push(TRAILER);
    let config = serde_json::to_vec(model.config())?;
    put_u32(&mut out, config.len() as u32);
    out.extend_from_slice(&config);
    put_tensor(&mut out, &model.stem.weight.value);
    put_tensor(&mut out, &model.stem.bias.value);
    put_tensor(&mut out, &model.head.weight.value);
    put_tensor(&mut out, &model.head.bias.value);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut rd = Rd { b: bytes, pos: 0 };
    if rd.take(6)? != MAGIC {
        return Err(Error::format("bad magic"));
    }
    let n_blocks = rd.u32()? as usize;
    let mut blocks = Vec::with_capacity(n_blocks);
    for i in 0..n_blocks {
        let kind = BlockKind::from_tag(rd.u8()?)?;
        let extras = kind.has_lambda() as u32 + 2 * kind.has_gate() as u32;
        if rd.u32()? != BASE_TENSORS + extras {
            return Err(Error::format(format!("wrong tensor count for block {i}")));
        }
        let name = format!("block{i}");
        let bn1 = get_bn(&mut rd, &format!("{name}.bn1"))?;
        let map1 = get_map(&mut rd, &format!("{name}.map1"))?;
        let bn2 = get_bn(&mut rd, &format!("{name}.bn2"))?;
        let map2 = get_map(&mut rd, &format!("{name}.map2"))?;
        let lambda_raw = if kind.has_lambda() {
            Some(Param::no_decay(format!("{name}.lambda"), rd.tensor()?))
        } else {
            None
        };
        let (gate_w, gate_b) = if kind.has_gate() {
            (
                Some(Param::new(format!("{name}.gate_w"), rd.tensor()?)),
                Some(Param::new(format!("{name}.gate_b"), rd.tensor()?)),
            )
        } else {
            (None, None)
        };
        blocks.push(Block {
            kind,
            transform: Transform { bn1, map1, bn2, map2 },
            lambda_raw,
            gate_w,
            gate_b,
        });
    }
    if rd.u8()? != TRAILER {
        return Err(Error::format("missing trailer marker"));
    }
    let config_len = rd.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(rd.take(config_len)?)?;
    config.validate()?;
    let stem = MapLayer {
        weight: Param::new("stem.weight", rd.tensor()?),
        bias: Param::new("stem.bias", rd.tensor()?),
    };
    let head = MapLayer {
        weight: Param::new("head.weight", rd.tensor()?),
        bias: Param::new("head.bias", rd.tensor()?),
    };
    if rd.pos != bytes.len() {
        return Err(Error::format("trailing bytes after model"));
    }
    if config.depth != blocks.len() || blocks.iter().any(|b| b.kind != config.kind) {
        return Err(Error::format("stored blocks disagree with the config"));
    }
    // Spot-check geometry against the config.
    if blocks.iter().any(|b| b.transform.bn1.gamma.value.numel() != config.width) {
        return Err(Error::format("block width disagrees with the config"));
    }
    Ok(Model { config, stem, blocks, head })
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_bn(out: &mut Vec<u8>, bn: &BnLayer) {
    put_tensor(out, &bn.gamma.value);
    put_tensor(out, &bn.beta.value);
    let c = bn.stats.channels();
    put_tensor(out, &Tensor::new(vec![c], bn.stats.mean.clone()).expect("stats shape"));
    put_tensor(out, &Tensor::new(vec![c], bn.stats.var.clone()).expect("stats shape"));
}

struct Rd<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Rd<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.b.len() {
            return Err(Error::format("unexpected end of stream"));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let ndim = self.u32()? as usize;
        if ndim == 0 || ndim > 4 {
            return Err(Error::format(format!("tensor rank {ndim} out of range")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        // Guard against absurd headers before allocating.
        if numel == 0 || numel > (self.b.len() - self.pos) / 8 + 1 {
            return Err(Error::format("tensor payload exceeds the stream"));
        }
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(self.f64()?);
        }
        Tensor::new(shape, data).map_err(|_| Error::format("inconsistent tensor header"))
    }
}

fn get_bn(rd: &mut Rd, name: &str) -> Result<BnLayer> {
    let gamma = Param::new(format!("{name}.gamma"), rd.tensor()?);
    let beta = Param::new(format!("{name}.beta"), rd.tensor()?);
    let mean = rd.tensor()?;
    let var = rd.tensor()?;
    let c = gamma.value.numel();
    if beta.value.numel() != c || mean.numel() != c || var.numel() != c {
        return Err(Error::format("normalization tensors disagree on channels"));
    }
    let stats = RunningStats {
        mean: mean.into_data(),
        var: var.into_data(),
        momentum: RunningStats::new(c).momentum,
    };
    Ok(BnLayer { gamma, beta, stats })
}

fn get_map(rd: &mut Rd, name: &str) -> Result<MapLayer> {
    let weight = Param::new(format!("{name}.weight"), rd.tensor()?);
    let bias = Param::new(format!("{name}.bias"), rd.tensor()?);
    if !matches!(weight.value.shape().len(), 2 | 4) || bias.value.shape().len() != 1 {
        return Err(Error::format("map weights must be dense or 3x3-conv shaped"));
    }
    Ok(MapLayer { weight, bias })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::InputShape;

    fn config(kind: BlockKind, conv: bool) -> ModelConfig {
        ModelConfig {
            kind,
            input: if conv {
                InputShape::Image { channels: 2, height: 4, width: 4 }
            } else {
                InputShape::Dense { features: 3 }
            },
            width: 3,
            depth: 2,
            classes: 2,
            lambda_init: (0.1, 0.2),
        }
    }

    fn models_equal(a: &Model, b: &Model) -> bool {
        if a.config() != b.config() {
            return false;
        }
        let (pa, pb) = (a.params(), b.params());
        if pa.len() != pb.len() {
            return false;
        }
        let params_ok = pa.iter().zip(&pb).all(|(x, y)| {
            x.name == y.name
                && x.decay == y.decay
                && x.value.shape() == y.value.shape()
                && x.value
                    .data()
                    .iter()
                    .zip(y.value.data())
                    .all(|(u, v)| u.to_bits() == v.to_bits())
        });
        let stats_ok = a.blocks.iter().zip(&b.blocks).all(|(x, y)| {
            x.transform.bn1.stats == y.transform.bn1.stats
                && x.transform.bn2.stats == y.transform.bn2.stats
        });
        params_ok && stats_ok
    }

    #[test]
    fn round_trip_is_bit_exact_for_every_kind_and_both_map_kinds() {
        for kind in BlockKind::ALL {
            for conv in [false, true] {
                let m = Model::build(&config(kind, conv), 71).unwrap();
                let bytes = to_bytes(&m).unwrap();
                let back = from_bytes(&bytes).unwrap();
                assert!(models_equal(&m, &back), "{kind:?} conv={conv}");
                // Idempotent re-serialization.
                assert_eq!(bytes, to_bytes(&back).unwrap());
            }
        }
    }

    #[test]
    fn save_and_load_round_trip_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.donet");
        let m = Model::build(&config(BlockKind::InGatingSig, false), 5).unwrap();
        save(&m, &path).unwrap();
        let back = load(&path).unwrap();
        assert!(models_equal(&m, &back));
    }

    #[test]
    fn loading_a_missing_file_reports_the_path() {
        match load(Path::new("/nonexistent/model.donet")) {
            Err(Error::MissingArtifact(p)) => assert!(p.ends_with("model.donet")),
            other => panic!("expected missing-artifact error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn corrupted_streams_are_rejected() {
        let m = Model::build(&config(BlockKind::In, false), 9).unwrap();
        let bytes = to_bytes(&m).unwrap();
        // Bad magic.
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        // Truncation at every prefix length must error, never panic.
        for cut in [0, 5, 6, 7, 11, bytes.len() / 2, bytes.len() - 1] {
            assert!(from_bytes(&bytes[..cut]).is_err(), "cut={cut}");
        }
        // Trailing garbage.
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(from_bytes(&long), Err(Error::Format(_))));
        // Kind tag flipped to a gate-less kind: tensor count no longer fits.
        let mut flip = bytes;
        flip[10] = BlockKind::Residual.tag();
        assert!(from_bytes(&flip).is_err());
    }

    #[test]
    fn running_stats_travel_with_the_weights() {
        use crate::tensor::{Graph, Mode};
        let mut m = Model::build(&config(BlockKind::In, false), 31).unwrap();
        // One train-mode pass perturbs the EMA statistics.
        let x = Tensor::new(vec![2, 3], vec![0.1, 0.9, 0.4, 0.7, 0.2, 0.5]).unwrap();
        let mut g = Graph::new();
        m.forward(&mut g, &x, Mode::Train).unwrap();
        let back = from_bytes(&to_bytes(&m).unwrap()).unwrap();
        assert_eq!(m.blocks[0].transform.bn1.stats, back.blocks[0].transform.bn1.stats);
        assert_ne!(
            back.blocks[0].transform.bn1.stats.mean,
            vec![0.0; 3],
            "stats should have moved off their initial values"
        );
    }
}
