//! Flat little-endian container of named parameter arrays.
//!
//! Layout:
//!
//! ```text
//! magic    8 bytes   "BNSCKPT\0"
//! version  u32       1
//! count    u32       number of arrays
//! repeated count times:
//!   name_len u32, name (UTF-8)
//!   ndim     u32, dims (u64 × ndim)
//!   data     f64 × product(dims)
//! ```
//!
//! All integers and floats are little-endian. Values are stored as raw IEEE-754
//! bits, so a write/read round trip is bit-exact.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{Parameters, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BNSCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub fn encode_checkpoint(params: &Parameters, out: &mut impl Write) -> io::Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for (_, name, t) in params.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.ndim() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn decode_checkpoint(r: &mut impl Read) -> Result<Parameters, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = read_u32(r)?;
    let mut params = Parameters::new();
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name =
            String::from_utf8(name).map_err(|_| CheckpointError::Corrupt("parameter name is not UTF-8".into()))?;
        let ndim = read_u32(r)? as usize;
        let shape = (0..ndim)
            .map(|_| read_u64(r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_bits(read_u64(r)?));
        }
        let tensor = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        if params.id(&name).is_some() {
            return Err(CheckpointError::Corrupt(format!("duplicate array {name}")));
        }
        params.register(name, tensor);
    }
    Ok(params)
}

pub fn write_checkpoint(path: &Path, params: &Parameters) -> Result<(), CheckpointError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = io::BufWriter::new(tmp.as_file_mut());
        encode_checkpoint(params, &mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| CheckpointError::Io(e.error))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Parameters, CheckpointError> {
    let file = std::fs::File::open(path)?;
    decode_checkpoint(&mut io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut p = Parameters::new();
        p.register("w", Tensor::new(vec![1, 2], vec![1.0, -0.0]).unwrap());
        let mut buf = Vec::new();
        encode_checkpoint(&p, &mut buf).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &1u32.to_le_bytes());
        assert_eq!(&buf[16..20], &1u32.to_le_bytes());
        assert_eq!(buf[20], b'w');
        // 8 + 4 + 4 + (4 + 1) + 4 + 2·8 + 2·8
        assert_eq!(buf.len(), 57);
        assert_eq!(&buf[49..57], &(-0.0f64).to_le_bytes());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let err = decode_checkpoint(&mut &b"NOTACKPT\x01\0\0\0"[..]).unwrap_err();
        assert!(matches!(err, CheckpointError::BadMagic));

        let mut p = Parameters::new();
        p.register("w", Tensor::vector(vec![1.0, 2.0]));
        let mut buf = Vec::new();
        encode_checkpoint(&p, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            decode_checkpoint(&mut buf.as_slice()),
            Err(CheckpointError::Io(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut p = Parameters::new();
        p.register(
            "embed",
            Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, 1e-300, f64::MIN_POSITIVE, -7.5]).unwrap(),
        );
        p.register("bias", Tensor::vector(vec![3.0]));
        write_checkpoint(&path, &p).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), p);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 0..40), rows in 1usize..4) {
            let cols = values.len() / rows;
            let data: Vec<f64> = values[..rows * cols].to_vec();
            let mut p = Parameters::new();
            p.register("m", Tensor::new(vec![rows, cols], data.clone()).unwrap());
            p.register("v", Tensor::vector(values.clone()));
            let mut buf = Vec::new();
            encode_checkpoint(&p, &mut buf).unwrap();
            let back = decode_checkpoint(&mut buf.as_slice()).unwrap();
            for ((_, n1, a), (_, n2, b)) in p.iter().zip(back.iter()) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(a.shape(), b.shape());
                let abits: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
                let bbits: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(abits, bbits);
            }
        }
    }
}
