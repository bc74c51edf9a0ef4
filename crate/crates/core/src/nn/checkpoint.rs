//! Versioned little-endian checkpoint format.
//!
//! Layout: magic `MRCK`; version u32; rng seed u64; scalar width u8 (4 =
//! f32, 8 = f64); network count u32; per network: input rank u32 and dims
//! (u32 each), layer count u32, then per layer a spec record (tag u8 plus
//! u32 fields) followed by the raw weight and bias payloads; finally a
//! metadata block: entry count u32, then length-prefixed UTF-8 key/value
//! pairs.

use crate::format::{ByteReader, ByteWriter, FormatError};

use super::{Layer, LayerSpec, NnError, Network, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub seed: u64,
    pub networks: Vec<Network<T>>,
    pub meta: Vec<(String, String)>,
}

impl<T> Checkpoint<T> {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn write_spec(w: &mut ByteWriter, spec: &LayerSpec) {
    match *spec {
        LayerSpec::Conv3d {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        } => {
            w.u8(1);
            for v in [in_ch, out_ch, kernel, stride, pad] {
                w.len_u32(v);
            }
        }
        LayerSpec::Relu => w.u8(2),
        LayerSpec::MaxPool3d { window } => {
            w.u8(3);
            w.len_u32(window);
        }
        LayerSpec::Flatten => w.u8(4),
        LayerSpec::Dense { inputs, outputs } => {
            w.u8(5);
            w.len_u32(inputs);
            w.len_u32(outputs);
        }
    }
}

fn read_spec(r: &mut ByteReader) -> Result<LayerSpec, FormatError> {
    let s = "layer spec";
    let field = |r: &mut ByteReader| r.u32(s).map(|v| v as usize);
    Ok(match r.u8(s)? {
        1 => LayerSpec::Conv3d {
            in_ch: field(r)?,
            out_ch: field(r)?,
            kernel: field(r)?,
            stride: field(r)?,
            pad: field(r)?,
        },
        2 => LayerSpec::Relu,
        3 => LayerSpec::MaxPool3d { window: field(r)? },
        4 => LayerSpec::Flatten,
        5 => LayerSpec::Dense {
            inputs: field(r)?,
            outputs: field(r)?,
        },
        t => return Err(FormatError::new(s, format!("unknown layer tag {t}"))),
    })
}

pub fn write_checkpoint<T: Scalar>(ck: &Checkpoint<T>) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u64(ck.seed);
    w.u8(T::WIDTH);
    w.len_u32(ck.networks.len());
    for net in &ck.networks {
        w.len_u32(net.input_shape().len());
        for &d in net.input_shape() {
            w.len_u32(d);
        }
        w.len_u32(net.layers().len());
        for l in net.layers() {
            write_spec(&mut w, &l.spec);
            if l.has_params() {
                for v in l.weight.data().iter().chain(l.bias.data()) {
                    v.write_le(&mut w.buf);
                }
            }
        }
    }
    w.len_u32(ck.meta.len());
    for (k, v) in &ck.meta {
        w.len_u32(k.len());
        w.bytes(k.as_bytes());
        w.len_u32(v.len());
        w.bytes(v.as_bytes());
    }
    w.buf
}

fn read_values<T: Scalar>(r: &mut ByteReader, n: usize, width: u8) -> Result<Vec<T>, FormatError> {
    let raw = r.take(n * width as usize, "parameters")?;
    Ok(raw
        .chunks_exact(width as usize)
        .map(|c| match width {
            4 => T::from_f64(f32::read_le(c) as f64),
            _ => T::from_f64(f64::read_le(c)),
        })
        .collect())
}

fn read_string(r: &mut ByteReader) -> Result<String, FormatError> {
    let n = r.u32("metadata")? as usize;
    String::from_utf8(r.take(n, "metadata")?.to_vec()).map_err(|e| FormatError::new("metadata", e.to_string()))
}

/// Reads a checkpoint, converting stored parameters to `T`.
/// Scalar width (4 or 8) recorded in a checkpoint header.
pub fn checkpoint_width(bytes: &[u8]) -> Result<u8, NnError> {
    let mut r = ByteReader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    r.u64("seed")?;
    Ok(r.u8("scalar width")?)
}

pub fn read_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>, NnError> {
    let mut r = ByteReader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    let seed = r.u64("seed")?;
    let width = r.u8("scalar width")?;
    if width != 4 && width != 8 {
        return Err(FormatError::new("scalar width", format!("unsupported width {width}")).into());
    }
    let n_nets = r.u32("networks")? as usize;
    let mut networks = Vec::with_capacity(n_nets);
    for _ in 0..n_nets {
        let rank = r.u32("input shape")? as usize;
        let input: Vec<usize> = (0..rank)
            .map(|_| r.u32("input shape").map(|v| v as usize))
            .collect::<Result<_, _>>()?;
        let n_layers = r.u32("layers")? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let spec = read_spec(&mut r)?;
            let layer = match spec.param_shapes() {
                Some((ws, bs)) => {
                    let wn: usize = ws.iter().product();
                    let bn: usize = bs.iter().product();
                    let wv = read_values(&mut r, wn, width)?;
                    let bv = read_values(&mut r, bn, width)?;
                    Layer {
                        spec,
                        weight: Tensor::from_vec(&ws, wv)?,
                        bias: Tensor::from_vec(&bs, bv)?,
                    }
                }
                None => Layer {
                    spec,
                    weight: Tensor::zeros(&[0]),
                    bias: Tensor::zeros(&[0]),
                },
            };
            layers.push(layer);
        }
        networks.push(Network::from_layers(&input, layers)?);
    }
    let n_meta = r.u32("metadata")? as usize;
    let mut meta = Vec::with_capacity(n_meta);
    for _ in 0..n_meta {
        let k = read_string(&mut r)?;
        let v = read_string(&mut r)?;
        meta.push((k, v));
    }
    r.finish()?;
    Ok(Checkpoint { seed, networks, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Rng;

    fn net<T: Scalar>() -> Network<T> {
        Network::new(
            &[1, 4, 4, 4],
            &[
                LayerSpec::conv(1, 2, 3, 1),
                LayerSpec::Relu,
                LayerSpec::MaxPool3d { window: 2 },
                LayerSpec::Flatten,
                LayerSpec::dense(16, 2),
            ],
            &mut Rng::new(4),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_both_widths() {
        let ck = Checkpoint {
            seed: 77,
            networks: vec![net::<f64>(), net::<f64>()],
            meta: vec![("mode".into(), "multires".into())],
        };
        let back: Checkpoint<f64> = read_checkpoint(&write_checkpoint(&ck)).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.meta("mode"), Some("multires"));

        let ck32 = Checkpoint {
            seed: 1,
            networks: vec![net::<f32>()],
            meta: vec![],
        };
        let bytes = write_checkpoint(&ck32);
        assert_eq!(read_checkpoint::<f32>(&bytes).unwrap(), ck32);
    }

    #[test]
    fn rejects_truncation() {
        let ck = Checkpoint {
            seed: 0,
            networks: vec![net::<f64>()],
            meta: vec![],
        };
        let bytes = write_checkpoint(&ck);
        assert!(matches!(
            read_checkpoint::<f64>(&bytes[..bytes.len() - 9]),
            Err(NnError::Format(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        assert!(read_checkpoint::<f64>(&bad).is_err());
    }
}
