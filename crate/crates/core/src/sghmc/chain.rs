//! Binary chain container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "LDPPMIX1" | version u32 | M u64 | K u64 | W u64 | S u64
//! S × ( W × (M·K f64, row-major) | W f64 mixing weights )
//! u64 length | config as key=value text
//! u64 length | catalog ids, one per line
//! ```

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::{SampleChain, SamplerConfig, Snapshot};
use crate::dpp::TraitMatrix;
use crate::error::{Error, Result};

pub const CHAIN_MAGIC: &[u8; 8] = b"LDPPMIX1";
pub const CHAIN_VERSION: u32 = 1;

pub fn encode_chain(chain: &SampleChain) -> Vec<u8> {
    let m = chain.num_items();
    let k = chain.num_traits();
    let w = chain.num_components();
    let mut out = Vec::with_capacity(48 + chain.len() * w * (m * k + 1) * 8);
    out.extend_from_slice(CHAIN_MAGIC);
    out.extend_from_slice(&CHAIN_VERSION.to_le_bytes());
    for dim in [m, k, w, chain.len()] {
        out.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    for snapshot in &chain.samples {
        for v in &snapshot.components {
            for row in v.as_matrix().row_iter() {
                for x in row.iter() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        for phi in &snapshot.weights {
            out.extend_from_slice(&phi.to_le_bytes());
        }
    }
    for block in [chain.config.to_kv_text(), chain.catalog.join("\n")] {
        out.extend_from_slice(&(block.len() as u64).to_le_bytes());
        out.extend_from_slice(block.as_bytes());
    }
    out
}

pub fn save_chain(chain: &SampleChain, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_chain(chain)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| Error::CorruptChain(format!("truncated while reading {what}")))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn dim(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?)
            .map_err(|_| Error::CorruptChain(format!("{what} does not fit in memory")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::CorruptChain(format!("{what} size overflows")))?;
        Ok(self
            .take(len, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn text(&mut self, what: &str) -> Result<&'a str> {
        let len = self.dim(what)?;
        std::str::from_utf8(self.take(len, what)?)
            .map_err(|_| Error::CorruptChain(format!("{what} is not UTF-8")))
    }
}

pub fn decode_chain(bytes: &[u8]) -> Result<SampleChain> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != CHAIN_MAGIC {
        return Err(Error::CorruptChain("bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != CHAIN_VERSION {
        return Err(Error::ChainVersion {
            found: version,
            expected: CHAIN_VERSION,
        });
    }
    let m = r.dim("M")?;
    let k = r.dim("K")?;
    let w = r.dim("W")?;
    let s = r.dim("sample count")?;
    if m == 0 || k == 0 || w == 0 {
        return Err(Error::CorruptChain(format!(
            "invalid dimensions M={m}, K={k}, W={w}"
        )));
    }
    let per_sample = m
        .checked_mul(k)
        .and_then(|mk| mk.checked_add(1))
        .and_then(|x| x.checked_mul(w))
        .and_then(|x| x.checked_mul(8))
        .ok_or_else(|| Error::CorruptChain("dimensions overflow".into()))?;
    if per_sample
        .checked_mul(s)
        .is_none_or(|total| total > bytes.len())
    {
        return Err(Error::CorruptChain(
            "truncated while reading samples".into(),
        ));
    }
    let mut samples = Vec::with_capacity(s);
    for _ in 0..s {
        let mut components = Vec::with_capacity(w);
        for _ in 0..w {
            let data = r.f64s(m * k, "trait matrix")?;
            components.push(TraitMatrix(DMatrix::from_row_slice(m, k, &data)));
        }
        let weights = r.f64s(w, "mixing weights")?;
        samples.push(Snapshot {
            components,
            weights,
        });
    }
    let config = SamplerConfig::from_kv_text(r.text("config block")?)
        .map_err(|e| Error::CorruptChain(format!("config block: {e}")))?;
    let catalog_text = r.text("catalog block")?;
    if r.pos != bytes.len() {
        return Err(Error::CorruptChain("trailing bytes after catalog".into()));
    }
    if config.num_traits != k || config.num_components != w {
        return Err(Error::CorruptChain(format!(
            "config (K={}, W={}) disagrees with header (K={k}, W={w})",
            config.num_traits, config.num_components
        )));
    }
    let catalog: Vec<String> = if catalog_text.is_empty() {
        Vec::new()
    } else {
        catalog_text.split('\n').map(str::to_owned).collect()
    };
    if catalog.len() != m {
        return Err(Error::CatalogMismatch(format!(
            "chain header has M={m} but the catalog lists {} items",
            catalog.len()
        )));
    }
    Ok(SampleChain {
        config,
        catalog,
        samples,
    })
}

pub fn load_chain(path: impl AsRef<Path>) -> Result<SampleChain> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_chain(&bytes)
}

/// Loads a chain and checks it matches the expected `M` and `K`.
pub fn load_chain_expecting(
    path: impl AsRef<Path>,
    num_items: usize,
    num_traits: usize,
) -> Result<SampleChain> {
    let chain = load_chain(path)?;
    chain.check_dims(num_items, num_traits)?;
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn chain_from(values: &[f64], m: usize, k: usize, w: usize, s: usize) -> SampleChain {
        let mut config = SamplerConfig::new(k);
        config.num_components = w;
        config.total_samples = s.max(1);
        config.burn_in = 0;
        let mut it = values.iter().copied().cycle();
        let samples = (0..s)
            .map(|_| Snapshot {
                components: (0..w)
                    .map(|_| {
                        let data: Vec<f64> = (&mut it).take(m * k).collect();
                        TraitMatrix(DMatrix::from_row_slice(m, k, &data))
                    })
                    .collect(),
                weights: vec![1.0 / w as f64; w],
            })
            .collect();
        SampleChain {
            config: config.resolved(),
            catalog: (0..m).map(|i| format!("item{i}")).collect(),
            samples,
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL, 1..40),
            m in 1usize..5, k in 1usize..4, w in 1usize..4, s in 0usize..4,
        ) {
            let chain = chain_from(&values, m, k, w, s);
            let back = decode_chain(&encode_chain(&chain)).unwrap();
            prop_assert_eq!(&back, &chain);
            for (a, b) in back.samples.iter().zip(&chain.samples) {
                for (va, vb) in a.components.iter().zip(&b.components) {
                    for (x, y) in va.as_matrix().iter().zip(vb.as_matrix().iter()) {
                        prop_assert_eq!(x.to_bits(), y.to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = encode_chain(&chain_from(&[0.5, -1.25, 3.0], 3, 2, 2, 3));
        for cut in [4, 20, 60, bytes.len() - 1] {
            let err = decode_chain(&bytes[..cut]).unwrap_err();
            assert!(err.to_string().starts_with("corrupt chain file"), "{err}");
        }
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode_chain(&chain_from(&[1.0], 2, 1, 1, 1));
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            decode_chain(&bytes),
            Err(Error::ChainVersion {
                found: 7,
                expected: 1
            })
        ));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_chain(&chain_from(&[1.0], 2, 1, 1, 1));
        bytes[0] = b'X';
        assert!(matches!(decode_chain(&bytes), Err(Error::CorruptChain(_))));
    }

    #[test]
    fn catalog_size_mismatch() {
        let mut chain = chain_from(&[1.0], 3, 1, 1, 1);
        chain.catalog.pop();
        let r = decode_chain(&encode_chain(&chain));
        assert!(matches!(r, Err(Error::CatalogMismatch(_))), "{r:?}");
    }

    #[test]
    fn dimension_expectation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.bin");
        save_chain(&chain_from(&[1.0, 2.0], 4, 5, 2, 2), &path).unwrap();
        assert!(load_chain_expecting(&path, 4, 5).is_ok());
        assert!(matches!(
            load_chain_expecting(&path, 4, 7),
            Err(Error::ChainDimension {
                expected_k: 7,
                found_k: 5,
                ..
            })
        ));
    }

    #[test]
    fn header_layout() {
        let bytes = encode_chain(&chain_from(&[1.0], 2, 3, 4, 5));
        assert_eq!(&bytes[..8], b"LDPPMIX1");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let dims: Vec<u64> = bytes[12..44]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(dims, vec![2, 3, 4, 5]);
    }
}
