//! Per-chunk authenticated encryption.
//!
//! Chunks are sealed with ChaCha20-Poly1305 under a deterministic nonce
//! derived from the frame identity (`stream_id`, `seq_no`), which is also
//! authenticated as associated data. Frame sequence numbers are unique per
//! producer, so the nonce never repeats under one key; stages re-encrypting
//! the same frame identity use distinct per-stage subkeys.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use sha2::{Digest, Sha256};

use super::EnclaveError;

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

/// Ciphertext bound to its frame identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedBlob {
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl SealedBlob {
    /// Wire layout: nonce || tag || ciphertext.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(NONCE_LEN + TAG_LEN + self.ciphertext.len());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.tag);
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EnclaveError> {
        if bytes.len() < NONCE_LEN + TAG_LEN {
            return Err(EnclaveError::MalformedChunk);
        }
        Ok(SealedBlob {
            nonce: bytes[..NONCE_LEN].try_into().unwrap(),
            tag: bytes[NONCE_LEN..NONCE_LEN + TAG_LEN].try_into().unwrap(),
            ciphertext: bytes[NONCE_LEN + TAG_LEN..].to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        NONCE_LEN + TAG_LEN + self.ciphertext.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn nonce_for(stream_id: u32, seq_no: u64) -> [u8; NONCE_LEN] {
    let mut nonce = [0u8; NONCE_LEN];
    nonce[..4].copy_from_slice(&stream_id.to_be_bytes());
    nonce[4..].copy_from_slice(&seq_no.to_be_bytes());
    nonce
}

/// Derives a per-stage subkey from the provisioned master key, so that two
/// stages sealing the same frame identity never share a (key, nonce) pair.
pub fn derive_stage_key(master: &[u8; KEY_LEN], label: &str) -> [u8; KEY_LEN] {
    let mut hasher = Sha256::new();
    hasher.update(master);
    hasher.update([0u8]);
    hasher.update(label.as_bytes());
    hasher.finalize().into()
}

/// Symmetric AEAD under one key.
#[derive(Clone)]
pub struct Cipher {
    inner: ChaCha20Poly1305,
}

impl Cipher {
    pub fn new(key: &[u8; KEY_LEN]) -> Self {
        Cipher {
            inner: ChaCha20Poly1305::new(Key::from_slice(key)),
        }
    }

    pub fn seal(&self, stream_id: u32, seq_no: u64, plaintext: &[u8]) -> SealedBlob {
        let nonce = nonce_for(stream_id, seq_no);
        let sealed = self
            .inner
            .encrypt(
                Nonce::from_slice(&nonce),
                Payload {
                    msg: plaintext,
                    aad: &nonce,
                },
            )
            .expect("chacha20poly1305 encryption is infallible for in-memory buffers");
        let (ciphertext, tag) = sealed.split_at(sealed.len() - TAG_LEN);
        SealedBlob {
            nonce,
            ciphertext: ciphertext.to_vec(),
            tag: tag.try_into().unwrap(),
        }
    }

    /// Opens a blob against the expected frame identity. Any bit flip in
    /// nonce, tag, or ciphertext, and any identity mismatch, fails.
    pub fn open(
        &self,
        blob: &SealedBlob,
        stream_id: u32,
        seq_no: u64,
    ) -> Result<Vec<u8>, EnclaveError> {
        let expected_nonce = nonce_for(stream_id, seq_no);
        if blob.nonce != expected_nonce {
            return Err(EnclaveError::AuthFailure);
        }
        let mut sealed = Vec::with_capacity(blob.ciphertext.len() + TAG_LEN);
        sealed.extend_from_slice(&blob.ciphertext);
        sealed.extend_from_slice(&blob.tag);
        self.inner
            .decrypt(
                Nonce::from_slice(&expected_nonce),
                Payload {
                    msg: &sealed,
                    aad: &expected_nonce,
                },
            )
            .map_err(|_| EnclaveError::AuthFailure)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cipher() -> Cipher {
        Cipher::new(&[7u8; KEY_LEN])
    }

    #[test]
    fn round_trip() {
        let c = cipher();
        let blob = c.seal(3, 9, b"hello");
        assert_eq!(c.open(&blob, 3, 9).unwrap(), b"hello");
    }

    #[test]
    fn wrong_identity_fails() {
        let c = cipher();
        let blob = c.seal(3, 9, b"hello");
        assert!(matches!(
            c.open(&blob, 3, 10),
            Err(EnclaveError::AuthFailure)
        ));
    }

    #[test]
    fn bit_flip_fails() {
        let c = cipher();
        let mut blob = c.seal(1, 1, b"payload");
        blob.ciphertext[0] ^= 0x01;
        assert!(matches!(c.open(&blob, 1, 1), Err(EnclaveError::AuthFailure)));
    }

    #[test]
    fn different_key_fails() {
        let blob = cipher().seal(1, 1, b"payload");
        let other = Cipher::new(&[8u8; KEY_LEN]);
        assert!(matches!(
            other.open(&blob, 1, 1),
            Err(EnclaveError::AuthFailure)
        ));
    }

    #[test]
    fn blob_bytes_round_trip() {
        let blob = cipher().seal(2, 5, b"xyz");
        let parsed = SealedBlob::from_bytes(&blob.to_bytes()).unwrap();
        assert_eq!(parsed, blob);
    }

    #[test]
    fn stage_keys_differ_per_label() {
        let master = [1u8; KEY_LEN];
        let a = derive_stage_key(&master, "mapper");
        let b = derive_stage_key(&master, "filter");
        assert_ne!(a, b);
        assert_eq!(a, derive_stage_key(&master, "mapper"));
    }
}
