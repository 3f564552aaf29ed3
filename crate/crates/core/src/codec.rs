//! Keyed watermark generation and the per-block LSB payload layout.
//!
//! Every block carries 8 payload bits in the two low bits of its four pixels:
//!
//! ```text
//! p0: c1 c0    (authentication watermark of this block)
//! p1: w5 w4    \
//! p2: w3 w2     } recovery watermark of the block that maps here
//! p3: w1 w0    /
//! ```
//!
//! Both watermarks are computed from the six high bits of each pixel only, so
//! writing the payload never disturbs the values it was derived from.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// `SHA-256(key_be ‖ input_be)`, first 8 bytes read big-endian.
pub fn prf64(key: u64, input: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(key.to_be_bytes());
    hasher.update(input.to_be_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(head)
}

/// Low 6 bits of `prf64(key, index)`; the per-block mask applied to recovery
/// watermarks.
pub fn keystream6(key: u64, index: usize) -> u8 {
    (prf64(key, index as u64) & 0x3F) as u8
}

/// The three secrets: `k1` masks recovery watermarks, `k2` keys the
/// authentication hash, `k3` seeds the block mapping.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct KeySet {
    pub k1: u64,
    pub k2: u64,
    pub k3: u64,
}

impl fmt::Debug for KeySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeySet")
            .field("fingerprint", &self.fingerprint())
            .finish()
    }
}

impl KeySet {
    pub fn new(k1: u64, k2: u64, k3: u64) -> Self {
        Self { k1, k2, k3 }
    }

    /// Fresh keys from the operating system's entropy source.
    pub fn generate() -> Result<Self> {
        let mut bytes = [0u8; 24];
        getrandom::fill(&mut bytes)
            .map_err(|e| Error::Io(std::io::Error::other(format!("entropy source: {e}"))))?;
        let word = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
        Ok(Self::new(word(0), word(1), word(2)))
    }

    /// Non-secret identifier for detecting a key mismatch: 16 hex digits of
    /// SHA-256 over a tag and the three keys.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"fragmark-keyset-v1");
        for k in [self.k1, self.k2, self.k3] {
            hasher.update(k.to_be_bytes());
        }
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Key-file text: three lines `K1=`, `K2=`, `K3=` with 16 hex digits each.
    pub fn to_key_file(&self) -> String {
        format!("K1={:016X}\nK2={:016X}\nK3={:016X}\n", self.k1, self.k2, self.k3)
    }

    pub fn parse_key_file(text: &str) -> Result<Self> {
        let mut keys = [0u64; 3];
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        for (slot, key) in keys.iter_mut().enumerate() {
            let expected = format!("K{}", slot + 1);
            let (idx, line) = lines.next().ok_or_else(|| Error::Parse {
                line: slot + 1,
                message: format!("missing {expected} line"),
            })?;
            let line_no = idx + 1;
            let (name, value) = line.trim().split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected {expected}=<16 hex digits>"),
            })?;
            if name.trim() != expected {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {expected}, found {:?}", name.trim()),
                });
            }
            let value = value.trim();
            if value.len() != 16 || !value.chars().all(|c| c.is_ascii_hexdigit()) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("{expected} must be exactly 16 hex digits"),
                });
            }
            *key = u64::from_str_radix(value, 16).expect("validated hex");
        }
        if let Some((idx, _)) = lines.next() {
            return Err(Error::Parse {
                line: idx + 1,
                message: "unexpected content after K3".into(),
            });
        }
        Ok(Self::new(keys[0], keys[1], keys[2]))
    }
}

impl FromStr for KeySet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse_key_file(s)
    }
}

/// 6-bit recovery watermark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RecoveryWatermark(u8);

impl RecoveryWatermark {
    pub fn new(value: u8) -> Result<Self> {
        if value >= 64 {
            return Err(Error::Domain(format!("recovery watermark {value} exceeds 6 bits")));
        }
        Ok(Self(value))
    }

    /// Keeps the low 6 bits.
    pub const fn truncate(value: u8) -> Self {
        Self(value & 0x3F)
    }

    pub const fn value(self) -> u8 {
        self.0
    }
}

/// 2-bit authentication watermark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct AuthWatermark(u8);

impl AuthWatermark {
    pub fn new(value: u8) -> Result<Self> {
        if value >= 4 {
            return Err(Error::Domain(format!("authentication watermark {value} exceeds 2 bits")));
        }
        Ok(Self(value))
    }

    pub const fn truncate(value: u8) -> Self {
        Self(value & 0x3)
    }

    pub const fn value(self) -> u8 {
        self.0
    }
}

/// Block mean at 6-bit depth: `floor(sum(p >> 2) / 4)`.
pub fn block_mean6(pixels: [u8; 4]) -> u8 {
    let sum: u16 = pixels.iter().map(|&p| u16::from(p >> 2)).sum();
    (sum / 4) as u8
}

pub fn gen_recovery_watermark(k1: u64, index: usize, pixels: [u8; 4]) -> RecoveryWatermark {
    RecoveryWatermark::truncate(block_mean6(pixels) ^ keystream6(k1, index))
}

pub fn gen_auth_watermark(k2: u64, w: RecoveryWatermark) -> AuthWatermark {
    AuthWatermark::truncate((prf64(k2, u64::from(w.value())) & 0x3) as u8)
}

/// Inverse of the recovery-watermark mask: the 6-bit block mean.
pub fn decrypt_recovery_watermark(k1: u64, index: usize, w: RecoveryWatermark) -> u8 {
    w.value() ^ keystream6(k1, index)
}

/// Pixel value restored from a 6-bit mean, centered in its quantization bin.
pub fn reconstruct_pixel(mean6: u8) -> u8 {
    ((mean6 & 0x3F) << 2) | 0b10
}

/// All 64 authentication watermarks for one `k2`, so the hash runs once per
/// key instead of once per block.
#[derive(Debug, Clone)]
pub struct AuthTable([AuthWatermark; 64]);

impl AuthTable {
    pub fn new(k2: u64) -> Self {
        let mut table = [AuthWatermark::default(); 64];
        for (w, slot) in table.iter_mut().enumerate() {
            *slot = gen_auth_watermark(k2, RecoveryWatermark::truncate(w as u8));
        }
        Self(table)
    }

    pub fn get(&self, w: RecoveryWatermark) -> AuthWatermark {
        self.0[usize::from(w.value())]
    }
}

/// Writes `c` and the incoming recovery watermark into the block's LSBs.
pub fn embed_block_payload(pixels: [u8; 4], c: AuthWatermark, w_incoming: RecoveryWatermark) -> [u8; 4] {
    let w = w_incoming.value();
    let slots = [c.value(), (w >> 4) & 0b11, (w >> 2) & 0b11, w & 0b11];
    let mut out = pixels;
    for (p, s) in out.iter_mut().zip(slots) {
        *p = (*p & !0b11) | s;
    }
    out
}

pub fn extract_block_payload(pixels: [u8; 4]) -> (AuthWatermark, RecoveryWatermark) {
    let c = AuthWatermark::truncate(pixels[0]);
    let w = ((pixels[1] & 0b11) << 4) | ((pixels[2] & 0b11) << 2) | (pixels[3] & 0b11);
    (c, RecoveryWatermark::truncate(w))
}
