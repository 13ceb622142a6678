//! On-disk formats.
//!
//! Models (`.sdm`), converted graphs (`.sdg`) and float models (`.sdf`) share
//! one text container:
//!
//! ```text
//! #sdnn-container
//! { ...JSON manifest, tensors embedded as base64 blobs... }
//! #checksum sha256:<hex of every byte above this line>
//! ```
//!
//! A tensor blob is `dtype: u8` (0=f32, 1=i8, 2=u8, 3=i32), `rank: u32`,
//! `rank x dim: u32`, then the raw little-endian elements.
//!
//! Tensor sequences (`.sdt`, frames or outputs) are binary: magic `SDTS`,
//! `version: u32`, `count: u32`, `count` blobs back to back, then the 32-byte
//! SHA-256 of everything before it.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::convert::{EncoderSpec, SdnnGraph, SdnnLayer};
use crate::error::{Result, SdnnError};
use crate::model::{
    Activation, ConvGeometry, ConvLayerSpec, FloatConvLayer, FloatModel, ModelIR,
    MODEL_FORMAT_VERSION,
};
use crate::quant::{DType, QuantParams, QuantTensor};
use crate::tensor::{Dims3, TensorF32};

pub const SUPPORTED_VERSIONS: &[u32] = &[MODEL_FORMAT_VERSION];

const CONTAINER_MAGIC: &str = "#sdnn-container";
const CHECKSUM_PREFIX: &str = "#checksum sha256:";
const SEQUENCE_MAGIC: &[u8; 4] = b"SDTS";
const SEQUENCE_VERSION: u32 = 1;

/// A typed tensor as stored in a blob.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorBlob {
    F32(Vec<usize>, Vec<f32>),
    I8(Vec<usize>, Vec<i8>),
    U8(Vec<usize>, Vec<u8>),
    I32(Vec<usize>, Vec<i32>),
}

impl TensorBlob {
    fn code(&self) -> u8 {
        match self {
            TensorBlob::F32(..) => 0,
            TensorBlob::I8(..) => 1,
            TensorBlob::U8(..) => 2,
            TensorBlob::I32(..) => 3,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            TensorBlob::F32(s, _)
            | TensorBlob::I8(s, _)
            | TensorBlob::U8(s, _)
            | TensorBlob::I32(s, _) => s,
        }
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.code());
        let shape = self.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match self {
            TensorBlob::F32(_, d) => d
                .iter()
                .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            TensorBlob::I8(_, d) => out.extend(d.iter().map(|&v| v as u8)),
            TensorBlob::U8(_, d) => out.extend_from_slice(d),
            TensorBlob::I32(_, d) => d
                .iter()
                .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    /// Decodes one blob from the front of `bytes`, returning it and the bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = Reader { bytes, pos: 0 };
        let code = r.take(1)?[0];
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(SdnnError::Format(format!("implausible tensor rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| SdnnError::Format("tensor size overflows".into()))?;
        let blob = match code {
            0 => TensorBlob::F32(
                shape,
                r.take(n.checked_mul(4).ok_or_else(too_big)?)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            1 => TensorBlob::I8(shape, r.take(n)?.iter().map(|&b| b as i8).collect()),
            2 => TensorBlob::U8(shape, r.take(n)?.to_vec()),
            3 => TensorBlob::I32(
                shape,
                r.take(n.checked_mul(4).ok_or_else(too_big)?)?
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            other => return Err(SdnnError::Format(format!("unknown dtype code {other}"))),
        };
        Ok((blob, r.pos))
    }

    pub fn from_quant(t: &QuantTensor) -> Self {
        let shape = t.shape().to_vec();
        match t.qparams().dtype {
            DType::I8 => TensorBlob::I8(shape, t.data().iter().map(|&v| v as i8).collect()),
            DType::U8 => TensorBlob::U8(shape, t.data().iter().map(|&v| v as u8).collect()),
        }
    }

    /// Integer contents widened to `i32`.
    pub fn to_i32(&self) -> Result<(Vec<usize>, Vec<i32>)> {
        Ok(match self {
            TensorBlob::I8(s, d) => (s.clone(), d.iter().map(|&v| v as i32).collect()),
            TensorBlob::U8(s, d) => (s.clone(), d.iter().map(|&v| v as i32).collect()),
            TensorBlob::I32(s, d) => (s.clone(), d.clone()),
            TensorBlob::F32(..) => {
                return Err(SdnnError::Format(
                    "expected an integer tensor, found f32".into(),
                ))
            }
        })
    }

    pub fn to_f32(&self) -> Result<TensorF32> {
        match self {
            TensorBlob::F32(s, d) => TensorF32::new(s.clone(), d.clone()),
            _ => Err(SdnnError::Format("expected an f32 tensor".into())),
        }
    }
}

fn too_big() -> SdnnError {
    SdnnError::Format("tensor size overflows".into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(too_big)?;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| SdnnError::Format("truncated tensor data".into()))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Writes `bytes` to `path` through a temp file in the same directory and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| SdnnError::Io(e.error))?;
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---- text container -------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Kind {
    Model,
    Graph,
    FloatModel,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: Kind,
    version: u32,
}

#[derive(Default)]
struct Blobs(BTreeMap<String, String>);

impl Blobs {
    fn put(&mut self, name: String, blob: &TensorBlob) -> String {
        self.0.insert(name.clone(), B64.encode(blob.encode()));
        name
    }

    fn get(map: &BTreeMap<String, String>, name: &str) -> Result<TensorBlob> {
        let text = map
            .get(name)
            .ok_or_else(|| SdnnError::Format(format!("missing blob {name:?}")))?;
        let bytes = B64
            .decode(text)
            .map_err(|e| SdnnError::Format(format!("blob {name:?}: {e}")))?;
        let (blob, used) = TensorBlob::decode(&bytes)?;
        if used != bytes.len() {
            return Err(SdnnError::Format(format!(
                "trailing bytes in blob {name:?}"
            )));
        }
        Ok(blob)
    }
}

fn seal(manifest: &serde_json::Value) -> Result<Vec<u8>> {
    let mut body = format!("{CONTAINER_MAGIC}\n");
    body.push_str(&serde_json::to_string_pretty(manifest)?);
    body.push('\n');
    let sum = hex(&Sha256::digest(body.as_bytes()));
    body.push_str(&format!("{CHECKSUM_PREFIX}{sum}\n"));
    Ok(body.into_bytes())
}

fn open(bytes: &[u8], expected: Kind) -> Result<serde_json::Value> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| SdnnError::Format("container is not UTF-8 text".into()))?;
    if !text.starts_with(&format!("{CONTAINER_MAGIC}\n")) {
        return Err(SdnnError::Format("bad magic: not an sdnn container".into()));
    }
    let trimmed = text.strip_suffix('\n').unwrap_or(text);
    let split = trimmed
        .rfind('\n')
        .ok_or_else(|| SdnnError::Format("truncated container".into()))?;
    let (body, last) = (&text[..=split], &trimmed[split + 1..]);
    let stored = last
        .strip_prefix(CHECKSUM_PREFIX)
        .ok_or_else(|| SdnnError::Format("truncated container: missing checksum".into()))?;
    let computed = hex(&Sha256::digest(body.as_bytes()));
    if stored != computed {
        return Err(SdnnError::Checksum {
            stored: stored.to_string(),
            computed,
        });
    }
    let value: serde_json::Value = serde_json::from_str(&body[CONTAINER_MAGIC.len() + 1..])?;
    let header: Header = serde_json::from_value(value.clone())?;
    if !SUPPORTED_VERSIONS.contains(&header.version) {
        return Err(SdnnError::UnsupportedVersion {
            found: header.version,
            supported: SUPPORTED_VERSIONS.to_vec(),
        });
    }
    if header.kind != expected {
        return Err(SdnnError::Format(format!(
            "expected a {expected:?} container, found {:?}",
            header.kind
        )));
    }
    Ok(value)
}

// ---- quantized model -------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    kind: Kind,
    version: u32,
    input_dims: Dims3,
    layers: Vec<ModelLayerManifest>,
    blobs: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct ModelLayerManifest {
    geometry: ConvGeometry,
    activation: Activation,
    weight_qparams: QuantParams,
    in_qparams: QuantParams,
    out_qparams: QuantParams,
    weights: String,
    bias: String,
}

pub fn encode_model(m: &ModelIR) -> Result<Vec<u8>> {
    m.validate()?;
    let mut blobs = Blobs::default();
    let layers = m
        .layers
        .iter()
        .enumerate()
        .map(|(k, l)| ModelLayerManifest {
            geometry: l.geometry,
            activation: l.activation,
            weight_qparams: l.weights.qparams(),
            in_qparams: l.in_qparams,
            out_qparams: l.out_qparams,
            weights: blobs.put(
                format!("layer{k}.weights"),
                &TensorBlob::from_quant(&l.weights),
            ),
            bias: blobs.put(
                format!("layer{k}.bias"),
                &TensorBlob::F32(vec![l.bias_f32.len()], l.bias_f32.clone()),
            ),
        })
        .collect();
    let manifest = ModelManifest {
        kind: Kind::Model,
        version: m.version,
        input_dims: m.input_dims,
        layers,
        blobs: blobs.0,
    };
    seal(&serde_json::to_value(manifest)?)
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelIR> {
    let man: ModelManifest = serde_json::from_value(open(bytes, Kind::Model)?)?;
    let layers = man
        .layers
        .iter()
        .map(|l| {
            let (shape, w) = Blobs::get(&man.blobs, &l.weights)?.to_i32()?;
            let weights = QuantTensor::new(shape, w, l.weight_qparams)?;
            let bias_f32 = Blobs::get(&man.blobs, &l.bias)?.to_f32()?.into_data();
            Ok(ConvLayerSpec {
                geometry: l.geometry,
                weights,
                bias_f32,
                in_qparams: l.in_qparams,
                out_qparams: l.out_qparams,
                activation: l.activation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let m = ModelIR {
        version: man.version,
        input_dims: man.input_dims,
        layers,
    };
    m.validate()?;
    Ok(m)
}

pub fn save_model(m: &ModelIR, path: &Path) -> Result<()> {
    write_atomic(path, &encode_model(m)?)
}

pub fn load_model(path: &Path) -> Result<ModelIR> {
    decode_model(&std::fs::read(path)?)
}

// ---- float model -----------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct FloatManifest {
    kind: Kind,
    version: u32,
    input_dims: Dims3,
    layers: Vec<FloatLayerManifest>,
    blobs: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct FloatLayerManifest {
    geometry: ConvGeometry,
    activation: Activation,
    weights: String,
    bias: String,
}

pub fn encode_float_model(m: &FloatModel) -> Result<Vec<u8>> {
    m.validate()?;
    let mut blobs = Blobs::default();
    let layers = m
        .layers
        .iter()
        .enumerate()
        .map(|(k, l)| FloatLayerManifest {
            geometry: l.geometry,
            activation: l.activation,
            weights: blobs.put(
                format!("layer{k}.weights"),
                &TensorBlob::F32(l.weights.shape().to_vec(), l.weights.data().to_vec()),
            ),
            bias: blobs.put(
                format!("layer{k}.bias"),
                &TensorBlob::F32(vec![l.bias.len()], l.bias.clone()),
            ),
        })
        .collect();
    let manifest = FloatManifest {
        kind: Kind::FloatModel,
        version: MODEL_FORMAT_VERSION,
        input_dims: m.input_dims,
        layers,
        blobs: blobs.0,
    };
    seal(&serde_json::to_value(manifest)?)
}

pub fn decode_float_model(bytes: &[u8]) -> Result<FloatModel> {
    let man: FloatManifest = serde_json::from_value(open(bytes, Kind::FloatModel)?)?;
    let layers = man
        .layers
        .iter()
        .map(|l| {
            Ok(FloatConvLayer {
                geometry: l.geometry,
                weights: Blobs::get(&man.blobs, &l.weights)?.to_f32()?,
                bias: Blobs::get(&man.blobs, &l.bias)?.to_f32()?.into_data(),
                activation: l.activation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let m = FloatModel {
        input_dims: man.input_dims,
        layers,
    };
    m.validate()?;
    Ok(m)
}

pub fn save_float_model(m: &FloatModel, path: &Path) -> Result<()> {
    write_atomic(path, &encode_float_model(m)?)
}

pub fn load_float_model(path: &Path) -> Result<FloatModel> {
    decode_float_model(&std::fs::read(path)?)
}

// ---- converted graph -------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct GraphManifest {
    kind: Kind,
    version: u32,
    input_dims: Dims3,
    input_qparams: QuantParams,
    encoder: EncoderSpec,
    output_qparams: QuantParams,
    layers: Vec<GraphLayerManifest>,
    blobs: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct GraphLayerManifest {
    #[serde(flatten)]
    layer: SdnnLayer,
    weights: String,
    bias_int: String,
}

pub fn encode_graph(g: &SdnnGraph) -> Result<Vec<u8>> {
    g.validate()?;
    let mut blobs = Blobs::default();
    let layers = g
        .layers
        .iter()
        .enumerate()
        .map(|(k, l)| GraphLayerManifest {
            layer: l.clone(),
            weights: blobs.put(
                format!("layer{k}.weights"),
                &TensorBlob::I8(l.geometry.weight_shape(), l.weights.clone()),
            ),
            bias_int: blobs.put(
                format!("layer{k}.bias_int"),
                &TensorBlob::I32(vec![l.bias_int.len()], l.bias_int.clone()),
            ),
        })
        .collect();
    let manifest = GraphManifest {
        kind: Kind::Graph,
        version: g.version,
        input_dims: g.input_dims,
        input_qparams: g.input_qparams,
        encoder: g.encoder,
        output_qparams: g.output_qparams,
        layers,
        blobs: blobs.0,
    };
    seal(&serde_json::to_value(manifest)?)
}

pub fn decode_graph(bytes: &[u8]) -> Result<SdnnGraph> {
    let man: GraphManifest = serde_json::from_value(open(bytes, Kind::Graph)?)?;
    let layers = man
        .layers
        .into_iter()
        .map(|gl| {
            let mut layer = gl.layer;
            layer.weights = match Blobs::get(&man.blobs, &gl.weights)? {
                TensorBlob::I8(_, w) => w,
                _ => return Err(SdnnError::Format("graph weights must be i8".into())),
            };
            layer.bias_int = match Blobs::get(&man.blobs, &gl.bias_int)? {
                TensorBlob::I32(_, b) => b,
                _ => return Err(SdnnError::Format("graph biases must be i32".into())),
            };
            Ok(layer)
        })
        .collect::<Result<Vec<_>>>()?;
    let g = SdnnGraph {
        version: man.version,
        input_dims: man.input_dims,
        input_qparams: man.input_qparams,
        encoder: man.encoder,
        layers,
        output_qparams: man.output_qparams,
    };
    g.validate()?;
    Ok(g)
}

pub fn save_graph(g: &SdnnGraph, path: &Path) -> Result<()> {
    write_atomic(path, &encode_graph(g)?)
}

pub fn load_graph(path: &Path) -> Result<SdnnGraph> {
    decode_graph(&std::fs::read(path)?)
}

// ---- tensor sequences ------------------------------------------------------

pub fn encode_sequence(tensors: &[TensorBlob]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SEQUENCE_MAGIC);
    out.extend_from_slice(&SEQUENCE_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        t.encode_into(&mut out);
    }
    let sum = Sha256::digest(&out);
    out.extend_from_slice(&sum);
    out
}

pub fn decode_sequence(bytes: &[u8]) -> Result<Vec<TensorBlob>> {
    if bytes.len() < 12 + 32 {
        return Err(SdnnError::Format("truncated tensor sequence".into()));
    }
    if &bytes[..4] != SEQUENCE_MAGIC {
        return Err(SdnnError::Format("bad magic: not a tensor sequence".into()));
    }
    let (body, stored) = bytes.split_at(bytes.len() - 32);
    let computed = Sha256::digest(body);
    if stored != computed.as_slice() {
        return Err(SdnnError::Checksum {
            stored: hex(stored),
            computed: hex(&computed),
        });
    }
    let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
    if version != SEQUENCE_VERSION {
        return Err(SdnnError::UnsupportedVersion {
            found: version,
            supported: vec![SEQUENCE_VERSION],
        });
    }
    let count = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
    let mut pos = 12;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let (blob, used) = TensorBlob::decode(&body[pos..])?;
        pos += used;
        out.push(blob);
    }
    if pos != body.len() {
        return Err(SdnnError::Format(
            "trailing bytes in tensor sequence".into(),
        ));
    }
    Ok(out)
}

pub fn save_sequence(tensors: &[TensorBlob], path: &Path) -> Result<()> {
    write_atomic(path, &encode_sequence(tensors))
}

pub fn load_sequence(path: &Path) -> Result<Vec<TensorBlob>> {
    decode_sequence(&std::fs::read(path)?)
}

/// Quantization of stored video frames: raw 8-bit pixels, `real = p / 255`.
pub fn pixel_qparams() -> QuantParams {
    QuantParams {
        scale: 1.0 / 255.0,
        zero_point: 0,
        dtype: DType::U8,
    }
}

pub fn save_frames(frames: &[QuantTensor], path: &Path) -> Result<()> {
    let blobs: Vec<_> = frames.iter().map(TensorBlob::from_quant).collect();
    save_sequence(&blobs, path)
}

/// Loads `u8` pixel frames with [`pixel_qparams`].
pub fn load_frames(path: &Path) -> Result<Vec<QuantTensor>> {
    load_sequence(path)?
        .into_iter()
        .map(|b| match b {
            TensorBlob::U8(shape, d) => QuantTensor::new(
                shape,
                d.into_iter().map(i32::from).collect(),
                pixel_qparams(),
            ),
            _ => Err(SdnnError::Format("frames must be u8 pixel tensors".into())),
        })
        .collect()
}

pub fn save_outputs(outputs: &[TensorF32], path: &Path) -> Result<()> {
    let blobs: Vec<_> = outputs
        .iter()
        .map(|t| TensorBlob::F32(t.shape().to_vec(), t.data().to_vec()))
        .collect();
    save_sequence(&blobs, path)
}

pub fn load_outputs(path: &Path) -> Result<Vec<TensorF32>> {
    load_sequence(path)?
        .iter()
        .map(TensorBlob::to_f32)
        .collect()
}
