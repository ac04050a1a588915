//! Versioned binary checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic      8 bytes  "RGYMCKPT"
//! version    u32
//! kind       u32
//! tensors    u32
//! manifest   per tensor: rank u32, then rank x u64 dims
//! payload    per tensor: prod(dims) x f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::nn::Mlp;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"RGYMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Logistic = 1,
    BetaParam = 2,
    Policy = 3,
    Critic = 4,
}

impl ModelKind {
    fn from_tag(tag: u32) -> Result<Self> {
        Ok(match tag {
            1 => ModelKind::Logistic,
            2 => ModelKind::BetaParam,
            3 => ModelKind::Policy,
            4 => ModelKind::Critic,
            _ => return Err(Error::Format(format!("unknown model kind {tag}"))),
        })
    }
}

/// Named-by-position tensors with explicit shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub tensors: Vec<(Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    /// One `[out, in]` weight tensor and one `[out]` bias tensor per layer.
    pub fn from_mlp(kind: ModelKind, net: &Mlp) -> Self {
        let mut tensors = Vec::new();
        let mut off = 0;
        let p = net.params();
        for w in net.sizes().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            tensors.push((vec![fan_out, fan_in], p[off..off + fan_in * fan_out].to_vec()));
            off += fan_in * fan_out;
            tensors.push((vec![fan_out], p[off..off + fan_out].to_vec()));
            off += fan_out;
        }
        Self { kind, tensors }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        if self.tensors.is_empty() || !self.tensors.len().is_multiple_of(2) {
            return Err(Error::Format("MLP checkpoint needs weight/bias pairs".into()));
        }
        let mut sizes = Vec::new();
        let mut params = Vec::new();
        for pair in self.tensors.chunks(2) {
            let (ws, w) = &pair[0];
            let (bs, b) = &pair[1];
            if ws.len() != 2 || bs.len() != 1 || bs[0] != ws[0] {
                return Err(Error::Format(format!("bad layer shapes {ws:?} / {bs:?}")));
            }
            match sizes.last() {
                None => sizes.push(ws[1]),
                Some(&prev) if prev != ws[1] => {
                    return Err(Error::Format(format!("layer input {} after width {prev}", ws[1])));
                }
                Some(_) => {}
            }
            sizes.push(ws[0]);
            params.extend_from_slice(w);
            params.extend_from_slice(b);
        }
        Mlp::from_params(&sizes, params).ok_or_else(|| Error::Format("parameter count mismatch".into()))
    }

    pub fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!("expected a {kind:?} checkpoint, found {:?}", self.kind)));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        w.write_u32::<LittleEndian>(self.kind as u32)?;
        w.write_u32::<LittleEndian>(self.tensors.len() as u32)?;
        for (shape, data) in &self.tensors {
            if shape.iter().product::<usize>() != data.len() {
                return Err(Error::Format(format!("shape {shape:?} holds {} values", data.len())));
            }
            w.write_u32::<LittleEndian>(shape.len() as u32)?;
            for &d in shape {
                w.write_u64::<LittleEndian>(d as u64)?;
            }
        }
        for (_, data) in &self.tensors {
            for &v in data {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let kind = ModelKind::from_tag(r.read_u32::<LittleEndian>()?)?;
        let count = r.read_u32::<LittleEndian>()? as usize;
        let mut shapes = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let rank = r.read_u32::<LittleEndian>()? as usize;
            if rank > 8 {
                return Err(Error::Format(format!("tensor rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()?;
            shapes.push(shape);
        }
        let mut tensors = Vec::with_capacity(shapes.len());
        for shape in shapes {
            let n: usize = shape.iter().product();
            let mut data = vec![0.0; n];
            r.read_f64_into::<LittleEndian>(&mut data)?;
            tensors.push((shape, data));
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint payload".into()));
        }
        Ok(Self { kind, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn mlp_round_trip() {
        let net = Mlp::new(&[3, 5, 2], &mut stream(1, Purpose::Synthetic, &[]));
        let ck = Checkpoint::from_mlp(ModelKind::Policy, &net);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"RGYMCKPT");
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_mlp().unwrap(), net);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let net = Mlp::new(&[2, 2], &mut stream(2, Purpose::Synthetic, &[]));
        let mut buf = Vec::new();
        Checkpoint::from_mlp(ModelKind::Critic, &net).write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::read_from(bad.as_slice()), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(matches!(Checkpoint::read_from(bad.as_slice()), Err(Error::Format(_))));
        assert!(Checkpoint::read_from(&buf[..buf.len() - 3]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(Checkpoint::read_from(long.as_slice()), Err(Error::Format(_))));
    }
}
