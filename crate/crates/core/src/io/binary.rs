//! Little-endian binary dumps: features (`FTRS`), correspondences (`CORR`),
//! sparse label masks (`MASK`) and offset fields (`OFFS`).
//!
//! Every file starts with a 4-byte magic and a `u32` record count.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub const FEATURES_MAGIC: &[u8; 4] = b"FTRS";
pub const CORRESPONDENCE_MAGIC: &[u8; 4] = b"CORR";
pub const MASK_MAGIC: &[u8; 4] = b"MASK";
pub const OFFSETS_MAGIC: &[u8; 4] = b"OFFS";

fn fmt_name(magic: &[u8; 4]) -> &'static str {
    match magic {
        FEATURES_MAGIC => "FTRS",
        CORRESPONDENCE_MAGIC => "CORR",
        MASK_MAGIC => "MASK",
        _ => "OFFS",
    }
}

fn expect_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)
        .map_err(|_| Error::format(fmt_name(magic), "missing magic"))?;
    if &m != magic {
        return Err(Error::format(
            fmt_name(magic),
            format!("bad magic {:?}", String::from_utf8_lossy(&m)),
        ));
    }
    Ok(())
}

fn truncated(magic: &[u8; 4]) -> impl Fn(std::io::Error) -> Error {
    let name = fmt_name(magic);
    move |e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(name, "truncated payload")
        } else {
            e.into()
        }
    }
}

fn to_u32(n: usize, what: &'static str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Input(format!("{what} {n} does not fit in u32")))
}

fn reject_trailing(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::format(fmt_name(magic), "trailing bytes after payload"));
    }
    Ok(())
}

pub fn write_features_to(mut w: impl Write, f: &FeatureMatrix) -> Result<()> {
    w.write_all(FEATURES_MAGIC)?;
    w.write_u32::<LittleEndian>(to_u32(f.rows(), "row count")?)?;
    w.write_u32::<LittleEndian>(to_u32(f.dim(), "dimension")?)?;
    for &v in f.values() {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features_from(mut r: impl Read) -> Result<FeatureMatrix> {
    expect_magic(&mut r, FEATURES_MAGIC)?;
    let err = truncated(FEATURES_MAGIC);
    let n = r.read_u32::<LittleEndian>().map_err(&err)? as usize;
    let d = r.read_u32::<LittleEndian>().map_err(&err)? as usize;
    let mut raw = vec![0f32; n * d];
    r.read_f32_into::<LittleEndian>(&mut raw).map_err(&err)?;
    reject_trailing(&mut r, FEATURES_MAGIC)?;
    FeatureMatrix::new(n, d, raw.into_iter().map(f64::from).collect())
}

pub fn write_pairs_to(mut w: impl Write, pairs: &[(usize, usize)]) -> Result<()> {
    w.write_all(CORRESPONDENCE_MAGIC)?;
    w.write_u32::<LittleEndian>(to_u32(pairs.len(), "pair count")?)?;
    for &(i, j) in pairs {
        w.write_u32::<LittleEndian>(to_u32(i, "index")?)?;
        w.write_u32::<LittleEndian>(to_u32(j, "index")?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs_from(mut r: impl Read) -> Result<Vec<(usize, usize)>> {
    expect_magic(&mut r, CORRESPONDENCE_MAGIC)?;
    let err = truncated(CORRESPONDENCE_MAGIC);
    let n = r.read_u32::<LittleEndian>().map_err(&err)? as usize;
    let mut raw = vec![0u32; 2 * n];
    r.read_u32_into::<LittleEndian>(&mut raw).map_err(&err)?;
    reject_trailing(&mut r, CORRESPONDENCE_MAGIC)?;
    Ok(raw.chunks_exact(2).map(|c| (c[0] as usize, c[1] as usize)).collect())
}

/// Writes a per-point `u8` label mask; labels above 255 are rejected.
pub fn write_mask_to(mut w: impl Write, labels: &[u32]) -> Result<()> {
    w.write_all(MASK_MAGIC)?;
    w.write_u32::<LittleEndian>(to_u32(labels.len(), "mask length")?)?;
    let bytes = labels
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| Error::Input(format!("label {l} does not fit in a mask byte"))))
        .collect::<Result<Vec<u8>>>()?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_mask_from(mut r: impl Read) -> Result<Vec<u32>> {
    expect_magic(&mut r, MASK_MAGIC)?;
    let err = truncated(MASK_MAGIC);
    let n = r.read_u32::<LittleEndian>().map_err(&err)? as usize;
    let mut bytes = vec![0u8; n];
    r.read_exact(&mut bytes).map_err(&err)?;
    reject_trailing(&mut r, MASK_MAGIC)?;
    Ok(bytes.into_iter().map(u32::from).collect())
}

pub fn write_offsets_to(mut w: impl Write, offsets: &[[f64; 3]]) -> Result<()> {
    w.write_all(OFFSETS_MAGIC)?;
    w.write_u32::<LittleEndian>(to_u32(offsets.len(), "offset count")?)?;
    for o in offsets {
        for &c in o {
            w.write_f32::<LittleEndian>(c as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_offsets_from(mut r: impl Read) -> Result<Vec<[f64; 3]>> {
    expect_magic(&mut r, OFFSETS_MAGIC)?;
    let err = truncated(OFFSETS_MAGIC);
    let n = r.read_u32::<LittleEndian>().map_err(&err)? as usize;
    let mut raw = vec![0f32; 3 * n];
    r.read_f32_into::<LittleEndian>(&mut raw).map_err(&err)?;
    reject_trailing(&mut r, OFFSETS_MAGIC)?;
    let out: Vec<[f64; 3]> = raw
        .chunks_exact(3)
        .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
        .collect();
    if out.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::format("OFFS", "non-finite offset"));
    }
    Ok(out)
}

macro_rules! file_io {
    ($read:ident, $read_from:ident, $write:ident, $write_to:ident, $ty:ty, $arg:ty) => {
        pub fn $read(path: impl AsRef<Path>) -> Result<$ty> {
            let path = path.as_ref();
            let f = std::fs::File::open(path).map_err(|e| Error::from(e).at(path))?;
            $read_from(std::io::BufReader::new(f)).map_err(|e| e.at(path))
        }

        pub fn $write(path: impl AsRef<Path>, value: $arg) -> Result<()> {
            let path = path.as_ref();
            let f = std::fs::File::create(path).map_err(|e| Error::from(e).at(path))?;
            $write_to(std::io::BufWriter::new(f), value).map_err(|e| e.at(path))
        }
    };
}

file_io!(read_features, read_features_from, write_features, write_features_to, FeatureMatrix, &FeatureMatrix);
file_io!(read_pairs, read_pairs_from, write_pairs, write_pairs_to, Vec<(usize, usize)>, &[(usize, usize)]);
file_io!(read_mask, read_mask_from, write_mask, write_mask_to, Vec<u32>, &[u32]);
file_io!(read_offsets, read_offsets_from, write_offsets, write_offsets_to, Vec<[f64; 3]>, &[[f64; 3]]);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_dump_layout_is_bit_exact() {
        let f = FeatureMatrix::new(2, 1, vec![1.0, -0.5]).unwrap();
        let mut buf = Vec::new();
        write_features_to(&mut buf, &f).unwrap();
        let mut expected = b"FTRS".to_vec();
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-0.5f32).to_le_bytes());
        assert_eq!(buf, expected);
        assert_eq!(read_features_from(&buf[..]).unwrap(), f);
    }

    #[test]
    fn mask_and_pairs_layout() {
        let mut buf = Vec::new();
        write_mask_to(&mut buf, &[3, 255, 0]).unwrap();
        assert_eq!(buf, [b'M', b'A', b'S', b'K', 3, 0, 0, 0, 3, 255, 0]);
        assert_eq!(read_mask_from(&buf[..]).unwrap(), vec![3, 255, 0]);
        assert!(write_mask_to(Vec::new(), &[256]).is_err());

        let mut buf = Vec::new();
        write_pairs_to(&mut buf, &[(1, 2)]).unwrap();
        assert_eq!(buf, [b'C', b'O', b'R', b'R', 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(read_pairs_from(&buf[..]).unwrap(), vec![(1, 2)]);
    }

    #[test]
    fn offsets_round_trip() {
        let o = vec![[0.5, -0.25, 1.0], [0.0, 0.0, 2.0]];
        let mut buf = Vec::new();
        write_offsets_to(&mut buf, &o).unwrap();
        assert_eq!(&buf[..4], b"OFFS");
        assert_eq!(buf.len(), 8 + 2 * 12);
        assert_eq!(read_offsets_from(&buf[..]).unwrap(), o);
    }

    #[test]
    fn rejects_bad_magic_truncation_and_trailing_bytes() {
        assert!(matches!(read_features_from(&b"FTRX\0\0\0\0\0\0\0\0"[..]), Err(Error::Format { .. })));
        let mut buf = Vec::new();
        write_pairs_to(&mut buf, &[(1, 2), (3, 4)]).unwrap();
        assert!(read_pairs_from(&buf[..buf.len() - 1]).is_err());
        buf.push(0);
        assert!(read_pairs_from(&buf[..]).is_err());
    }
}
