//! `TLM1` parameter container: magic, little-endian `u32 |V|`, `u32 M`, then
//! `f64` bias followed by `U_1..U_M` in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use super::ToyLm;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TLM1";

impl ToyLm {
    pub fn write_params<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.vocab_size as u32).to_le_bytes())?;
        w.write_all(&(self.max_context as u32).to_le_bytes())?;
        for t in &self.theta {
            w.write_all(&t.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_params<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::Format("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|_| Error::Format("truncated header".into()))?;
        let vocab_size = u32::from_le_bytes(word) as usize;
        r.read_exact(&mut word).map_err(|_| Error::Format("truncated header".into()))?;
        let max_context = u32::from_le_bytes(word) as usize;
        if vocab_size < 2 || max_context < 1 {
            return Err(Error::Format(format!("invalid dimensions |V|={vocab_size}, M={max_context}")));
        }
        let n = ToyLm::param_count(vocab_size, max_context);
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != n * 8 {
            return Err(Error::Format(format!("expected {} parameter bytes, found {}", n * 8, bytes.len())));
        }
        let theta = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ToyLm::from_parts(vocab_size, max_context, theta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(12 + self.theta.len() * 8);
        self.write_params(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_params(bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = ToyLm::zeros(3, 2);
        let mut buf = Vec::new();
        m.write_params(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"TLM1");
        assert_eq!(&buf[4..8], &3u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(buf.len(), 12 + 8 * (3 + 2 * 9));
    }

    #[test]
    fn rejects_corrupt_files() {
        assert!(ToyLm::read_params(&b"TLM2\x02\0\0\0\x01\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        ToyLm::zeros(2, 1).write_params(&mut buf).unwrap();
        buf.pop();
        assert!(matches!(ToyLm::read_params(buf.as_slice()), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(seed in 0u64..500, v in 2usize..6, m in 1usize..4) {
            let model = ToyLm::random(v, m, 5.0, seed);
            let mut buf = Vec::new();
            model.write_params(&mut buf).unwrap();
            let back = ToyLm::read_params(buf.as_slice()).unwrap();
            prop_assert_eq!(back, model);
        }
    }
}
