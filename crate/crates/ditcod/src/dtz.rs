//! DTZ tensor file format.
//!
//! Layout: magic `DTEN`, 1-byte version (1), 1-byte dtype code (1 = f64),
//! 1-byte rank, rank x u32 little-endian extents, payload row-major
//! little-endian. Used for checkpoints and intermediate dumps.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"DTEN";
const VERSION: u8 = 1;
const DTYPE_F64: u8 = 1;

pub fn write_dtz<W: Write>(w: &mut W, t: &Tensor<f64>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, DTYPE_F64, t.rank() as u8])?;
    for &e in t.shape() {
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_dtz<R: Read>(r: &mut R) -> Result<Tensor<f64>> {
    let mut head = [0u8; 7];
    r.read_exact(&mut head).map_err(|e| Error::Parse { offset: 0, msg: e.to_string() })?;
    if &head[0..4] != MAGIC {
        return Err(Error::Parse { offset: 0, msg: "bad magic, expected DTEN".into() });
    }
    if head[4] != VERSION {
        return Err(Error::Parse { offset: 4, msg: format!("unsupported version {}", head[4]) });
    }
    if head[5] != DTYPE_F64 {
        return Err(Error::Parse { offset: 5, msg: format!("unsupported dtype code {}", head[5]) });
    }
    let rank = head[6] as usize;
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|e| Error::Parse { offset: 7 + i * 4, msg: e.to_string() })?;
        shape.push(u32::from_le_bytes(b) as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    let payload_off = 7 + rank * 4;
    for i in 0..n {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)
            .map_err(|e| Error::Parse { offset: payload_off + i * 8, msg: e.to_string() })?;
        data.push(f64::from_le_bytes(b));
    }
    Tensor::new(shape, data)
}

pub fn save_dtz(path: &Path, t: &Tensor<f64>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_dtz(&mut f, t)
}

pub fn load_dtz(path: &Path) -> Result<Tensor<f64>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_dtz(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let t = Tensor::<f64>::from_fn(&[2, 3, 4], |i| (i as f64).sin());
        let mut buf = Vec::new();
        write_dtz(&mut buf, &t).unwrap();
        assert_eq!(&buf[0..4], b"DTEN");
        assert_eq!(buf[4], 1);
        assert_eq!(buf[5], 1);
        assert_eq!(buf[6], 3);
        let back = read_dtz(&mut buf.as_slice()).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn bad_magic_rejected() {
        let err = read_dtz(&mut &b"NOPE\x01\x01\x01"[..]).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }
}
