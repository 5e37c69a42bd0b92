//! Model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "GRFX" | version u32 | arch name (u16 len + utf8) | input shape 3×u32 | classes u32 | seed u64
//! | layer count u32 | per layer: u32 len + "key=value ..." record
//! | parameter blobs: per parameterized layer, weights then bias, as f32
//! | checksum u64 (first 8 bytes of SHA-256 over everything before it)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};

use super::{Architecture, Layer, LayerKind, Network};
use crate::binio::{check_magic, check_trailer, checksum, Cursor};
use crate::error::{Error, Result};
use crate::tensor::{Padding, PoolMode};

pub const MODEL_MAGIC: [u8; 4] = *b"GRFX";
pub const MODEL_VERSION: u32 = 1;

fn layer_record(layer: &Layer) -> String {
    let inputs = layer
        .inputs
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let mut rec = format!("kind={}", layer.kind.name());
    if !inputs.is_empty() {
        rec.push_str(&format!(" inputs={inputs}"));
    }
    match &layer.kind {
        LayerKind::Conv {
            kernel_h,
            kernel_w,
            in_channels,
            out_channels,
            stride,
            padding,
        } => {
            let pad = match padding {
                Padding::Valid => "valid",
                Padding::Same => "same",
            };
            rec.push_str(&format!(
                " kh={kernel_h} kw={kernel_w} cin={in_channels} cout={out_channels} stride={stride} padding={pad}"
            ));
        }
        LayerKind::Pool { mode } => rec.push_str(match mode {
            PoolMode::Avg => " mode=avg",
            PoolMode::Max => " mode=max",
        }),
        LayerKind::Dense { inputs, outputs } => {
            rec.push_str(&format!(" in={inputs} out={outputs}"))
        }
        LayerKind::Dropout { rate } => rec.push_str(&format!(" rate={rate}")),
        _ => {}
    }
    rec
}

fn parse_record(rec: &str) -> Result<(LayerKind, Vec<usize>)> {
    let bad = |what: &str| Error::invalid(format!("malformed layer record {rec:?}: {what}"));
    let fields: BTreeMap<&str, &str> = rec
        .split_whitespace()
        .map(|kv| kv.split_once('=').ok_or_else(|| bad("expected key=value")))
        .collect::<Result<_>>()?;
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(&format!("missing {k}")));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(k)) };
    let inputs = match fields.get("inputs") {
        Some(s) => s
            .split(',')
            .map(|i| i.parse().map_err(|_| bad("inputs")))
            .collect::<Result<Vec<usize>>>()?,
        None => vec![],
    };
    let kind = match get("kind")? {
        "input" => LayerKind::Input,
        "conv" => LayerKind::Conv {
            kernel_h: num("kh")?,
            kernel_w: num("kw")?,
            in_channels: num("cin")?,
            out_channels: num("cout")?,
            stride: num("stride")?,
            padding: match get("padding")? {
                "valid" => Padding::Valid,
                "same" => Padding::Same,
                _ => return Err(bad("padding")),
            },
        },
        "pool" => LayerKind::Pool {
            mode: match get("mode")? {
                "avg" => PoolMode::Avg,
                "max" => PoolMode::Max,
                _ => return Err(bad("mode")),
            },
        },
        "dense" => LayerKind::Dense {
            inputs: num("in")?,
            outputs: num("out")?,
        },
        "relu" => LayerKind::Relu,
        "softmax" => LayerKind::Softmax,
        "concat" => LayerKind::Concat,
        "flatten" => LayerKind::Flatten,
        "dropout" => LayerKind::Dropout {
            rate: get("rate")?.parse().map_err(|_| bad("rate"))?,
        },
        other => return Err(bad(&format!("unknown kind {other}"))),
    };
    Ok((kind, inputs))
}

/// Serializes a network into the model container.
pub fn write_model(net: &Network<f32>, mut out: impl Write) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    let io = |e| Error::io("<model buffer>", e);
    buf.extend_from_slice(&MODEL_MAGIC);
    buf.write_u32::<LittleEndian>(MODEL_VERSION).map_err(io)?;
    let arch = net.architecture().as_str().as_bytes();
    buf.write_u16::<LittleEndian>(arch.len() as u16).map_err(io)?;
    buf.extend_from_slice(arch);
    for &e in net.input_shape() {
        buf.write_u32::<LittleEndian>(e as u32).map_err(io)?;
    }
    buf.write_u32::<LittleEndian>(net.n_classes() as u32).map_err(io)?;
    buf.write_u64::<LittleEndian>(net.seed()).map_err(io)?;
    buf.write_u32::<LittleEndian>(net.layers().len() as u32).map_err(io)?;
    for layer in net.layers() {
        let rec = layer_record(layer);
        buf.write_u32::<LittleEndian>(rec.len() as u32).map_err(io)?;
        buf.extend_from_slice(rec.as_bytes());
    }
    for id in net.parameterized_layers() {
        let p = net.params(id).expect("parameterized");
        for &v in p.weight.data().iter().chain(p.bias.data()) {
            buf.write_f32::<LittleEndian>(v).map_err(io)?;
        }
    }
    let sum = checksum(&buf);
    buf.write_u64::<LittleEndian>(sum).map_err(io)?;
    out.write_all(&buf).map_err(|e| Error::io("<model output>", e))
}

/// Parses a model container, verifying magic, version, length and checksum.
pub fn read_model(mut input: impl Read) -> Result<Network<f32>> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<model input>", e))?;
    check_magic(&bytes, MODEL_MAGIC)?;
    let mut cur = Cursor::new(&bytes, 4);
    let version = cur.u32("version")?;
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch {
            expected: MODEL_VERSION,
            found: version,
        });
    }
    let arch = cur.str("architecture")?.parse::<Architecture>()?;
    let mut input_shape = [0usize; 3];
    for e in &mut input_shape {
        *e = cur.u32("input shape")? as usize;
    }
    let n_classes = cur.u32("class count")? as usize;
    let seed = cur.u64("seed")?;
    let n_layers = cur.u32("layer count")? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(4096));
    for _ in 0..n_layers {
        let len = cur.u32("layer record")? as usize;
        let rec = std::str::from_utf8(cur.take(len, "layer record")?)
            .map_err(|_| Error::invalid("layer record is not utf-8"))?;
        let (kind, inputs) = parse_record(rec)?;
        layers.push(Layer {
            kind,
            inputs,
            output_shape: input_shape.to_vec(),
        });
    }
    let mut net = Network::<f32>::from_layers(arch, seed, layers)?;
    if net.n_classes() != n_classes {
        return Err(Error::invalid(format!(
            "header declares {n_classes} classes but the layers produce {}",
            net.n_classes()
        )));
    }
    let ids: Vec<usize> = net.parameterized_layers().collect();
    for id in ids {
        let p = net.params_mut(id).expect("parameterized");
        for v in p.weight.data_mut().iter_mut().chain(p.bias.data_mut()) {
            *v = cur.f32("parameters")?;
        }
    }
    check_trailer(&mut cur)?;
    Ok(net)
}

pub fn save_model(net: &Network<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_model(net, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network<f32>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(std::io::BufReader::new(file))
}

/// Loads a model and checks it predicts the expected number of classes.
pub fn load_model_expecting(path: impl AsRef<Path>, n_classes: usize) -> Result<Network<f32>> {
    let net = load_model(path)?;
    net.ensure_classes(n_classes)?;
    Ok(net)
}
