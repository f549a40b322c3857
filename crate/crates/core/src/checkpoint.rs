//! Flat binary container for named tensors.
//!
//! Layout, all integers little-endian:
//!   magic "ASTC" | version u32 | tensor count u32
//!   per tensor: name length u32 | UTF-8 name | rank u32 | dims u64 each |
//!               raw f64 payload
//!
//! Used for parameter checkpoints and for the per-sample records of the
//! synthetic benchmark.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ASTC";
pub const VERSION: u32 = 1;

pub fn write_tensors<'a>(
    path: &Path,
    tensors: impl ExactSizeIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Config(format!(
            "{}: bad magic {magic:?}, not a tensor container",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Config(format!(
            "{}: unsupported container version {version}",
            path.display()
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| Error::Config(format!("{}: bad tensor name: {e}", path.display())))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            shape.push(u64::from_le_bytes(buf) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok(out)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Load into existing parameter slots, matching by name with shape checks.
/// Every destination must be filled and every stored tensor consumed.
pub fn load_into(path: &Path, params: Vec<(String, &mut Tensor)>) -> Result<()> {
    let stored = read_tensors(path)?;
    let mut used = vec![false; stored.len()];
    let total = params.len();
    if stored.len() != total {
        return Err(Error::Config(format!(
            "{}: checkpoint has {} tensors, model needs {total}",
            path.display(),
            stored.len()
        )));
    }
    for (name, slot) in params {
        let idx = stored
            .iter()
            .position(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("{}: missing tensor {name}", path.display())))?;
        let (_, t) = &stored[idx];
        if t.shape() != slot.shape() {
            return Err(Error::Config(format!(
                "{}: tensor {name} has shape {:?}, expected {:?}",
                path.display(),
                t.shape(),
                slot.shape()
            )));
        }
        slot.data_mut().copy_from_slice(t.data());
        used[idx] = true;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_bits() {
        let dir = std::env::temp_dir().join("astc_roundtrip_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.astc");
        let a = Tensor::new(&[2, 3], vec![1.5, -0.25, 1e-300, 0.0, f64::MIN_POSITIVE, 7.0]).unwrap();
        let b = Tensor::scalar(42.0);
        write_tensors(&path, vec![("a", &a), ("b/x", &b)].into_iter()).unwrap();
        let back = read_tensors(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "a");
        assert_eq!(back[0].1.shape(), &[2, 3]);
        for (x, y) in a.data().iter().zip(back[0].1.data().iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(back[1].0, "b/x");
        assert_eq!(back[1].1.item(), 42.0);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = std::env::temp_dir().join("astc_magic_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("junk.astc");
        std::fs::write(&path, b"NOPE0000").unwrap();
        assert!(matches!(read_tensors(&path), Err(Error::Config(_))));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn load_into_checks_names_and_shapes() {
        let dir = std::env::temp_dir().join("astc_load_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("p.astc");
        let stored = Tensor::new(&[2], vec![3.0, 4.0]).unwrap();
        write_tensors(&path, vec![("w", &stored)].into_iter()).unwrap();

        let mut dst = Tensor::zeros(&[2]);
        load_into(&path, vec![("w".to_string(), &mut dst)]).unwrap();
        assert_eq!(dst.data(), &[3.0, 4.0]);

        let mut wrong_shape = Tensor::zeros(&[3]);
        assert!(load_into(&path, vec![("w".to_string(), &mut wrong_shape)]).is_err());
        let mut wrong_name = Tensor::zeros(&[2]);
        assert!(load_into(&path, vec![("v".to_string(), &mut wrong_name)]).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
