//! Self-describing little-endian binary tensor container.
//!
//! Layout: 4-byte magic `MTSR`, u32 version, u8 dtype tag (1 = f64), u8
//! rank, `rank` u64 dimensions, then the payload as little-endian f64. This
//! is the on-disk format for feature maps and head parameters.

use super::{OpError, Tensor};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"MTSR";
pub const VERSION: u32 = 1;
pub const DTYPE_F64: u8 = 1;

pub fn write_tensor<W: Write>(mut w: W, t: &Tensor) -> Result<(), OpError> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[DTYPE_F64, t.rank() as u8])?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<Tensor, OpError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(OpError::Container(format!("bad magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(OpError::Container(format!("unsupported version {version}")));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head)?;
    if head[0] != DTYPE_F64 {
        return Err(OpError::Container(format!("unsupported dtype tag {}", head[0])));
    }
    let rank = head[1] as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut dim = [0u8; 8];
    for _ in 0..rank {
        r.read_exact(&mut dim)?;
        shape.push(u64::from_le_bytes(dim) as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    let mut val = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut val)?;
        data.push(f64::from_le_bytes(val));
    }
    Tensor::new(shape, data)
}

pub fn save_tensor<P: AsRef<Path>>(path: P, t: &Tensor) -> Result<(), OpError> {
    write_tensor(BufWriter::new(File::create(path)?), t)
}

pub fn load_tensor<P: AsRef<Path>>(path: P) -> Result<Tensor, OpError> {
    read_tensor(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for shape in [vec![7], vec![2, 3], vec![4, 1, 5, 2], vec![0]] {
            let t = Tensor::from_fn(shape, |_| rng.gen_range(-1e6..1e6));
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            let back = read_tensor(buf.as_slice()).unwrap();
            assert!(back.bits_eq(&t));
        }
    }

    #[test]
    fn rejects_corrupt_headers() {
        let t = Tensor::from_fn(vec![3], |i| i as f64);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();

        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_tensor(bad_magic.as_slice()), Err(OpError::Container(_))));

        let mut bad_version = buf.clone();
        bad_version[4] = 9;
        assert!(matches!(read_tensor(bad_version.as_slice()), Err(OpError::Container(_))));

        let mut bad_dtype = buf.clone();
        bad_dtype[8] = 7;
        assert!(matches!(read_tensor(bad_dtype.as_slice()), Err(OpError::Container(_))));

        let truncated = &buf[..buf.len() - 4];
        assert!(matches!(read_tensor(truncated), Err(OpError::Io(_))));

        // payload must stay finite
        let mut nan = buf.clone();
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(read_tensor(nan.as_slice()), Err(OpError::NonFinite)));
    }
}
