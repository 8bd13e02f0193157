//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes   "SNPCKPT\0"
//! version   u32
//! meta_len  u64
//! meta      meta_len bytes of JSON (CheckpointMeta)
//! count     u64       number of f64 values that follow
//! payload   count × f64 LE, layer by layer, weights (row-major) then biases
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, LayerParams, SineMlpParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SNPCKPT\0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    /// `"mlp"` for a full network, `"snp"` for encoder plus decoder heads.
    pub kind: String,
    pub layout: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    /// Number of decoder heads; 0 for `"mlp"`.
    pub heads: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub layers: Vec<LayerParams>,
}

impl CheckpointMeta {
    /// `(fan_in, fan_out)` of every stored layer, in payload order.
    pub fn layer_shapes(&self) -> Result<Vec<(usize, usize)>> {
        super::validate_layout(&self.layout)?;
        let pairs: Vec<(usize, usize)> = self.layout.windows(2).map(|w| (w[0], w[1])).collect();
        match self.kind.as_str() {
            "mlp" => Ok(pairs),
            "snp" => {
                if pairs.len() < 2 || self.heads == 0 {
                    return Err(Error::Checkpoint(
                        "snp checkpoint needs an encoder layer and at least one head".into(),
                    ));
                }
                let (head, encoder) = pairs.split_last().unwrap();
                let mut shapes = encoder.to_vec();
                shapes.extend(std::iter::repeat_n(*head, self.heads));
                Ok(shapes)
            }
            other => Err(Error::Checkpoint(format!("unknown checkpoint kind `{other}`"))),
        }
    }
}

impl Checkpoint {
    pub fn from_mlp(params: &SineMlpParams, seed: u64) -> Self {
        Self {
            meta: CheckpointMeta {
                format_version: CHECKPOINT_VERSION,
                kind: "mlp".into(),
                layout: params.layout().to_vec(),
                activation: params.activation(),
                seed,
                heads: 0,
            },
            layers: params.layers().to_vec(),
        }
    }

    pub fn into_mlp(self) -> Result<SineMlpParams> {
        if self.meta.kind != "mlp" {
            return Err(Error::Checkpoint(format!(
                "expected an mlp checkpoint, found `{}`",
                self.meta.kind
            )));
        }
        SineMlpParams::from_layers(self.layers, self.meta.activation)
    }

    pub fn value_count(&self) -> usize {
        self.layers.iter().map(LayerParams::len).sum()
    }
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut out: W) -> Result<()> {
    let shapes = ckpt.meta.layer_shapes()?;
    let actual: Vec<(usize, usize)> = ckpt.layers.iter().map(|l| (l.fan_in(), l.fan_out())).collect();
    if shapes != actual {
        return Err(Error::Checkpoint("layers do not match metadata".into()));
    }
    let meta = serde_json::to_vec(&ckpt.meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(32 + meta.len() + 8 * ckpt.value_count());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&ckpt.meta.format_version.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta);
    buf.extend_from_slice(&(ckpt.value_count() as u64).to_le_bytes());
    for l in &ckpt.layers {
        for v in l.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)
        .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, "payload")?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let meta_len = cur.u64("metadata length")? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(cur.take(meta_len, "metadata")?)
        .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    if meta.format_version != version {
        return Err(Error::Checkpoint("metadata version disagrees with header".into()));
    }
    let shapes = meta.layer_shapes()?;
    let expected: usize = shapes.iter().map(|(i, o)| i * o + o).sum();
    let count = cur.u64("value count")? as usize;
    if count != expected {
        return Err(Error::Checkpoint(format!(
            "payload holds {count} values, layout needs {expected}"
        )));
    }
    let mut layers = Vec::with_capacity(shapes.len());
    for (fan_in, fan_out) in shapes {
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| cur.f64()).collect::<Result<_>>()?;
        let b: Vec<f64> = (0..fan_out).map(|_| cur.f64()).collect::<Result<_>>()?;
        layers.push(LayerParams {
            weights: Array2::from_shape_vec((fan_out, fan_in), w).unwrap(),
            biases: Array1::from_vec(b),
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok(Checkpoint { meta, layers })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(ckpt, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_layout, init_siren};
    use crate::rng::Rng;

    fn bytes_of(c: &Checkpoint) -> Vec<u8> {
        let mut b = Vec::new();
        write_checkpoint(c, &mut b).unwrap();
        b
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = init_siren(&[2, 16, 16, 3], Activation::finer(25.0), &mut Rng::new(3, 0)).unwrap();
        let c = Checkpoint::from_mlp(&p, 3);
        let b1 = bytes_of(&c);
        let back = read_checkpoint(&b1[..]).unwrap();
        assert_eq!(back, c);
        assert_eq!(bytes_of(&back), b1);
        assert_eq!(back.into_mlp().unwrap(), p);
    }

    #[test]
    fn truncation_is_an_error() {
        let p = init_siren(&[2, 8, 1], Activation::default(), &mut Rng::new(3, 0)).unwrap();
        let b = bytes_of(&Checkpoint::from_mlp(&p, 0));
        for cut in [0, 5, 12, 30, b.len() - 1] {
            assert!(matches!(read_checkpoint(&b[..cut]), Err(Error::Checkpoint(_))));
        }
    }

    #[test]
    fn version_is_checked() {
        let p = init_siren(&[2, 8, 1], Activation::default(), &mut Rng::new(3, 0)).unwrap();
        let mut b = bytes_of(&Checkpoint::from_mlp(&p, 0));
        b[8] = 9;
        let err = read_checkpoint(&b[..]).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn default_layout_payload_size() {
        let p = init_siren(&default_layout(3), Activation::default(), &mut Rng::new(0, 0)).unwrap();
        let c = Checkpoint::from_mlp(&p, 0);
        let b = bytes_of(&c);
        let meta_len = u64::from_le_bytes(b[12..20].try_into().unwrap()) as usize;
        let count_at = 20 + meta_len;
        let count = u64::from_le_bytes(b[count_at..count_at + 8].try_into().unwrap());
        assert_eq!(count, 264_707);
        assert_eq!(b.len(), count_at + 8 + 264_707 * 8);
    }
}
