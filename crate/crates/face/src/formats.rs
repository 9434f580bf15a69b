//! Binary dumps: face tokens (`FTOK`), point clouds (`FPC1`) and
//! checkpoints (`FACEARAE`). All integers and floats are little-endian.

use std::io::{self, Read, Write};

use face_core::sampling::PointCloud;
use face_core::tensor::{DType, Scalar, Tensor};
use face_core::tokenizer::{FaceToken, FaceTokenSequence, SLOTS};

pub const TOKEN_MAGIC: &[u8; 4] = b"FTOK";
pub const TOKEN_VERSION: u32 = 1;
pub const CLOUD_MAGIC: &[u8; 4] = b"FPC1";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FACEARAE";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: String },
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("invalid contents: {0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] face_core::error::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

type Result<T> = std::result::Result<T, FormatError>;

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn expect_magic<const N: usize>(r: &mut impl Read, magic: &[u8; N]) -> Result<()> {
    let got: [u8; N] = read_array(r)?;
    if &got != magic {
        return Err(FormatError::BadMagic { expected: String::from_utf8_lossy(magic).into() });
    }
    Ok(())
}

/// Upper bound for counts read from a header before allocating, so a
/// corrupt file fails cleanly instead of exhausting memory.
const MAX_ELEMENTS: u64 = 1 << 32;

fn checked_count(n: u64, what: &str) -> Result<usize> {
    if n > MAX_ELEMENTS {
        return Err(FormatError::Invalid(format!("{what} count {n} is implausibly large")));
    }
    Ok(n as usize)
}

pub fn write_tokens(w: &mut impl Write, seq: &FaceTokenSequence) -> Result<()> {
    w.write_all(TOKEN_MAGIC)?;
    w.write_all(&TOKEN_VERSION.to_le_bytes())?;
    w.write_all(&seq.resolution.to_le_bytes())?;
    w.write_all(&(seq.tokens.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(seq.tokens.len() * SLOTS * 2);
    for t in &seq.tokens {
        for s in t.slots {
            buf.extend_from_slice(&s.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tokens(r: &mut impl Read) -> Result<FaceTokenSequence> {
    expect_magic(r, TOKEN_MAGIC)?;
    let version = read_u32(r)?;
    if version != TOKEN_VERSION {
        return Err(FormatError::Version(version));
    }
    let resolution = read_u32(r)?;
    let count = checked_count(read_u64(r)?, "token")?;
    let mut tokens = Vec::with_capacity(count);
    for _ in 0..count {
        let raw: [u8; SLOTS * 2] = read_array(r)?;
        let slots = std::array::from_fn(|j| u16::from_le_bytes([raw[2 * j], raw[2 * j + 1]]));
        tokens.push(FaceToken { slots });
    }
    let seq = FaceTokenSequence { tokens, resolution };
    seq.validate()?;
    Ok(seq)
}

pub fn write_cloud(w: &mut impl Write, cloud: &PointCloud) -> Result<()> {
    w.write_all(CLOUD_MAGIC)?;
    w.write_all(&(cloud.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(cloud.len() * 24);
    for (p, n) in cloud.positions.iter().zip(&cloud.normals) {
        for x in p.iter().chain(n) {
            buf.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_cloud(r: &mut impl Read) -> Result<PointCloud> {
    expect_magic(r, CLOUD_MAGIC)?;
    let m = checked_count(read_u64(r)?, "point")?;
    let mut positions = Vec::with_capacity(m);
    let mut normals = Vec::with_capacity(m);
    for _ in 0..m {
        let raw: [u8; 24] = read_array(r)?;
        let f = |i: usize| f32::from_le_bytes(raw[4 * i..4 * i + 4].try_into().unwrap()) as f64;
        positions.push([f(0), f(1), f(2)]);
        normals.push([f(3), f(4), f(5)]);
    }
    Ok(PointCloud::new(positions, normals)?)
}

/// A named tensor as stored in a checkpoint, in either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn dtype(&self) -> DType {
        match self {
            StoredTensor::F32(_) => DType::F32,
            StoredTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
        }
    }

    /// The tensor in precision `T`; a cast if the stored precision differs.
    pub fn to<T: Scalar>(&self) -> Tensor<T> {
        match self {
            StoredTensor::F32(t) => t.cast(),
            StoredTensor::F64(t) => t.cast(),
        }
    }
}

impl From<Tensor<f32>> for StoredTensor {
    fn from(t: Tensor<f32>) -> Self {
        StoredTensor::F32(t)
    }
}

impl From<Tensor<f64>> for StoredTensor {
    fn from(t: Tensor<f64>) -> Self {
        StoredTensor::F64(t)
    }
}

/// Configuration text plus an ordered tensor table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub config: String,
    pub tensors: Vec<(String, StoredTensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = checked_count(read_u32(r)? as u64, "string byte")?;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| FormatError::Invalid("string is not UTF-8".into()))
}

/// Layout: magic, u32 version, u32-length config text, u32 tensor count,
/// then per tensor: u32-length name, u8 dtype, u32 rank, u64 dims, payload.
pub fn write_checkpoint(w: &mut impl Write, ckpt: &Checkpoint) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    write_str(w, &ckpt.config)?;
    w.write_all(&(ckpt.tensors.len() as u32).to_le_bytes())?;
    for (name, t) in &ckpt.tensors {
        write_str(w, name)?;
        w.write_all(&[t.dtype().code()])?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let payload: Vec<u8> = match t {
            StoredTensor::F32(t) => t.data().iter().flat_map(|x| x.to_le_bytes()).collect(),
            StoredTensor::F64(t) => t.data().iter().flat_map(|x| x.to_le_bytes()).collect(),
        };
        w.write_all(&payload)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    expect_magic(r, CHECKPOINT_MAGIC)?;
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::Version(version));
    }
    let config = read_str(r)?;
    let count = read_u32(r)? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = read_str(r)?;
        let [code] = read_array::<1>(r)?;
        let dtype = DType::from_code(code).ok_or_else(|| FormatError::Invalid(format!("dtype code {code}")))?;
        let rank = read_u32(r)? as usize;
        if rank > 8 {
            return Err(FormatError::Invalid(format!("tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(checked_count(read_u64(r)?, "dimension")?);
        }
        let numel = checked_count(shape.iter().map(|&d| d as u64).product(), "element")?;
        let mut raw = vec![0u8; numel * dtype.size()];
        r.read_exact(&mut raw)?;
        let tensor = match dtype {
            DType::F32 => StoredTensor::F32(Tensor::new(
                &shape,
                raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
            )?),
            DType::F64 => StoredTensor::F64(Tensor::new(
                &shape,
                raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            )?),
        };
        tensors.push((name, tensor));
    }
    Ok(Checkpoint { config, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_header_layout() {
        let seq = FaceTokenSequence { tokens: vec![FaceToken { slots: [1, 2, 3, 4, 5, 6, 7, 8, 9] }, FaceToken::eos(32)], resolution: 32 };
        let mut buf = Vec::new();
        write_tokens(&mut buf, &seq).unwrap();
        assert_eq!(&buf[..4], b"FTOK");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 32);
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 2);
        assert_eq!(buf.len(), 20 + 2 * 18);
        // EOS face: slot 0 = R, the rest zero.
        assert_eq!(&buf[38..40], &32u16.to_le_bytes());
        assert!(buf[40..].iter().all(|&b| b == 0));
        assert_eq!(read_tokens(&mut buf.as_slice()).unwrap(), seq);
    }

    #[test]
    fn malformed_token_dump_is_rejected() {
        let seq = FaceTokenSequence { tokens: vec![FaceToken { slots: [1, 2, 3, 4, 5, 32, 7, 8, 9] }], resolution: 32 };
        let mut buf = Vec::new();
        write_tokens(&mut buf, &seq).unwrap();
        assert!(read_tokens(&mut buf.as_slice()).is_err());
        assert!(matches!(read_tokens(&mut &b"FTAK"[..]), Err(FormatError::BadMagic { .. })));
        buf.truncate(buf.len() - 1);
        assert!(matches!(read_tokens(&mut buf.as_slice()), Err(FormatError::Io(_))));
    }

    #[test]
    fn cloud_layout() {
        let cloud = PointCloud::new(vec![[0.5, -0.25, 0.0]], vec![[0.0, 0.0, 1.0]]).unwrap();
        let mut buf = Vec::new();
        write_cloud(&mut buf, &cloud).unwrap();
        assert_eq!(&buf[..4], b"FPC1");
        assert_eq!(buf.len(), 4 + 8 + 24);
        assert_eq!(read_cloud(&mut buf.as_slice()).unwrap(), cloud);
    }

    #[test]
    fn checkpoint_round_trip() {
        let ckpt = Checkpoint {
            config: "[model]\nresolution = 32\n".into(),
            tensors: vec![
                ("a".into(), Tensor::<f32>::from_fn(&[2, 3], |i| i as f32 * 0.5).into()),
                ("b".into(), Tensor::<f64>::scalar(-1.25).into()),
            ],
        };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        assert_eq!(&buf[..8], b"FACEARAE");
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.get("b").unwrap().to::<f32>().item().unwrap(), -1.25);
    }
}
