use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tiling::{parse_tile_name, tile_name};

use super::autoencoder::LatentCode;

pub const CODES_MAGIC: &[u8; 8] = b"CFOSCODE";

/// Tile names for `codes.bin` live next to it in `codes.bin.names`, one per line.
pub fn names_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".names");
    PathBuf::from(p)
}

pub fn codes_to_bytes(codes: &[LatentCode]) -> Result<Vec<u8>> {
    let dim = codes.first().map_or(0, |c| c.code.len());
    if codes.iter().any(|c| c.code.len() != dim) {
        return Err(Error::Dimension("codes have differing lengths".into()));
    }
    let mut out = Vec::with_capacity(24 + codes.len() * dim * 4);
    out.extend_from_slice(CODES_MAGIC);
    out.extend_from_slice(&(codes.len() as u64).to_le_bytes());
    out.extend_from_slice(&(dim as u64).to_le_bytes());
    for c in codes {
        for v in &c.code {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes the vectors of a codes file; tile ids are taken from `names`.
pub fn codes_from_bytes(bytes: &[u8], names: &str) -> Result<Vec<LatentCode>> {
    let parse_err = |reason: String| Error::Parse {
        context: "codes file".into(),
        reason,
    };
    if bytes.len() < 24 || &bytes[..8] != CODES_MAGIC {
        return Err(parse_err("missing CFOSCODE header".into()));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes")) as usize;
    let (count, dim) = (word(8), word(16));
    let expected = count
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(24))
        .ok_or_else(|| parse_err("header sizes overflow".into()))?;
    if bytes.len() != expected {
        return Err(parse_err(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let ids = names
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse_tile_name(l.trim()))
        .collect::<Result<Vec<_>>>()?;
    if ids.len() != count {
        return Err(parse_err(format!("{} names for {count} codes", ids.len())));
    }
    let floats: Vec<f32> = bytes[24..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    Ok(ids
        .into_iter()
        .enumerate()
        .map(|(i, tile_id)| LatentCode {
            tile_id,
            code: floats[i * dim..(i + 1) * dim].to_vec(),
        })
        .collect())
}

pub fn save_codes(codes: &[LatentCode], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, codes_to_bytes(codes)?).map_err(|e| Error::io(path, e))?;
    let names: String = codes.iter().map(|c| tile_name(c.tile_id) + "\n").collect();
    let np = names_path(path);
    fs::write(&np, names).map_err(|e| Error::io(&np, e))
}

pub fn load_codes(path: impl AsRef<Path>) -> Result<Vec<LatentCode>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let np = names_path(path);
    let names = fs::read_to_string(&np).map_err(|e| Error::io(&np, e))?;
    codes_from_bytes(&bytes, &names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiling::TileId;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codes.bin");
        let codes: Vec<LatentCode> = (0..3)
            .map(|i| LatentCode {
                tile_id: TileId::new(i, 2 * i),
                code: vec![i as f32, -1.5, 0.25],
            })
            .collect();
        save_codes(&codes, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"CFOSCODE");
        assert_eq!(bytes.len(), 24 + 3 * 3 * 4);
        assert_eq!(load_codes(&path).unwrap(), codes);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(codes_from_bytes(b"NOTCODES", "").is_err());
        let codes = vec![LatentCode {
            tile_id: TileId::new(0, 0),
            code: vec![1.0],
        }];
        let bytes = codes_to_bytes(&codes).unwrap();
        assert!(codes_from_bytes(&bytes[..bytes.len() - 1], "0-0").is_err());
        assert!(codes_from_bytes(&bytes, "0-0\n0-1\n").is_err());
    }
}
