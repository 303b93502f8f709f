//! `.lgnd` dataset files (all integers little-endian):
//!
//! ```text
//! "LGND" | version u32 | sample count u64                   (16 bytes)
//! per sample: id length u16 | UTF-8 id | 1024 x f32 pixels (row-major) | label u8
//! ```

use std::fs;
use std::path::Path;

use super::{PatchDataset, PATCH_PIXELS};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"LGND";
pub const DATASET_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

impl PatchDataset {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * (2 + 16 + 4 * PATCH_PIXELS + 1));
        out.extend_from_slice(&DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for i in 0..self.len() {
            let id = self.id(i).as_bytes();
            let len = u16::try_from(id.len()).map_err(|_| {
                Error::Malformed(format!("sample id of {} bytes is too long", id.len()))
            })?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(id);
            for v in self.patch(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(self.label(i));
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != DATASET_MAGIC {
            return Err(Error::BadMagic {
                expected: DATASET_MAGIC,
                found: magic,
            });
        }
        let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
        if version != DATASET_VERSION {
            return Err(Error::Version {
                expected: DATASET_VERSION,
                found: version,
            });
        }
        let count = u64::from_le_bytes(r.take(8, "sample count")?.try_into().expect("8 bytes"));
        let mut ds = PatchDataset::new();
        let mut pixels = vec![0f32; PATCH_PIXELS];
        for i in 0..count {
            let what = |field: &str| format!("sample {i} {field}");
            let len =
                u16::from_le_bytes(r.take(2, &what("id length"))?.try_into().expect("2 bytes"));
            let id = std::str::from_utf8(r.take(len as usize, &what("id"))?)
                .map_err(|_| Error::Malformed(format!("sample {i} id is not UTF-8")))?
                .to_string();
            let raw = r.take(4 * PATCH_PIXELS, &what("pixels"))?;
            for (p, chunk) in pixels.iter_mut().zip(raw.chunks_exact(4)) {
                *p = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
            let label = r.take(1, &what("label"))?[0];
            if label > 1 {
                return Err(Error::Malformed(format!("sample {i} has label {label}")));
            }
            if let Some(&value) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::IntensityRange {
                    sample: i as usize,
                    value,
                });
            }
            ds.push(id, &pixels, label)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Malformed(format!(
                "{} trailing bytes after {count} samples",
                bytes.len() - r.pos
            )));
        }
        Ok(ds)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated(format!(
                "{what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

pub fn write_dataset(ds: &PatchDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ds.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<PatchDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    PatchDataset::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set() -> PatchDataset {
        let mut ds = PatchDataset::new();
        for (i, id) in ["a", "bb", "ccc"].iter().enumerate() {
            let patch: Vec<f32> = (0..PATCH_PIXELS)
                .map(|p| ((p + i) % 10) as f32 / 10.0)
                .collect();
            ds.push(*id, &patch, (i % 2) as u8).unwrap();
        }
        ds
    }

    #[test]
    fn size_matches_layout() {
        let bytes = sample_set().to_bytes().unwrap();
        // header + per sample (2 + id + 4096 + 1), ids of 1, 2, 3 bytes
        assert_eq!(bytes.len(), 16 + 3 * (2 + 4096 + 1) + (1 + 2 + 3));
        assert_eq!(bytes.len(), 12319);
    }

    #[test]
    fn round_trip() {
        let ds = sample_set();
        assert_eq!(
            PatchDataset::from_bytes(&ds.to_bytes().unwrap()).unwrap(),
            ds
        );
    }

    #[test]
    fn distinct_diagnostics() {
        let good = sample_set().to_bytes().unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            PatchDataset::from_bytes(&bad),
            Err(Error::BadMagic { .. })
        ));

        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(
            PatchDataset::from_bytes(&bad),
            Err(Error::Version { found: 9, .. })
        ));

        assert!(matches!(
            PatchDataset::from_bytes(&good[..good.len() - 1]),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(
            PatchDataset::from_bytes(&good[..10]),
            Err(Error::Truncated(_))
        ));

        let mut bad = good.clone();
        // first pixel of the first sample: header + id length + "a"
        bad[16 + 2 + 1..16 + 2 + 1 + 4].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(
            PatchDataset::from_bytes(&bad),
            Err(Error::IntensityRange { sample: 0, .. })
        ));

        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(
            PatchDataset::from_bytes(&bad),
            Err(Error::Malformed(_))
        ));
    }
}
