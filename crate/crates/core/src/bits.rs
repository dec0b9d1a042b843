//! Base64 bitsets (LSB-first within each byte), as stored in genome files
//! and module bundles.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use crate::error::{Error, Result};

pub fn encode(bits: &[bool]) -> String {
    let mut bytes = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    STANDARD.encode(bytes)
}

pub fn decode(text: &str, n_bits: usize) -> Result<Vec<bool>> {
    let bytes = STANDARD.decode(text).map_err(|e| Error::Artifact(format!("bad base64 bitset: {e}")))?;
    if bytes.len() != n_bits.div_ceil(8) {
        return Err(Error::Artifact(format!(
            "bitset holds {} bytes, {n_bits} bits need {}",
            bytes.len(),
            n_bits.div_ceil(8)
        )));
    }
    Ok((0..n_bits).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(bits in proptest::collection::vec(any::<bool>(), 0..200)) {
            prop_assert_eq!(decode(&encode(&bits), bits.len()).unwrap(), bits);
        }
    }

    #[test]
    fn wrong_length_rejected() {
        assert!(decode(&encode(&[true; 9]), 17).is_err());
    }
}
