//! Trusted-authority setup, self-certified witnesses, implicit key agreement,
//! and the symmetric primitives built on SHA-256.

use alloc::string::String;
use alloc::vec::Vec;

use hmac::{Hmac, KeyInit, Mac};
use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type Key = [u8; 32];
pub type Tag = [u8; 32];
pub type Nonce = [u8; 16];

pub const SUPPORTED_BITS: [u32; 3] = [64, 512, 1024];

// One-byte domain separators for the hash variants.
const DOMAIN_EXPONENT: u8 = 0x01;
const DOMAIN_TEMP_ID: u8 = 0x02;
const DOMAIN_KEY: u8 = 0x03;
const DOMAIN_IDENTITY: u8 = 0x04;
const DOMAIN_KEYSTREAM: u8 = 0x05;
const DOMAIN_NONCE: u8 = 0x06;
const DOMAIN_RNG: u8 = 0x07;

/// Candidates tried per safe prime before giving up.
const PRIME_ATTEMPTS: u32 = 2_000_000;
const MILLER_RABIN_ROUNDS: u32 = 24;
/// Salts tried when hashing an identity into an exponent coprime to phi(n).
const SALT_ATTEMPTS: u32 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("unsupported security size {0} bits (supported: 64, 512, 1024)")]
    UnsupportedBits(u32),
    #[error("no safe prime found after {0} candidates")]
    PrimeGeneration(u32),
    #[error("no generator of full order found")]
    Generator,
    #[error("identity hash is not invertible modulo phi(n) for any tried salt")]
    NonInvertibleHash,
}

/// A deterministic RNG stream for one named purpose under a seed.
pub fn rng_for(seed: &[u8], label: &str) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update([DOMAIN_RNG]);
    h.update((seed.len() as u32).to_be_bytes());
    h.update(seed);
    h.update(label.as_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}

/// Public parameters every principal holds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicParams {
    pub n: BigUint,
    pub g: BigUint,
    pub bits: u32,
}

impl PublicParams {
    /// Width in bytes of a residue mod n in fixed-width encodings.
    pub fn modulus_len(&self) -> usize {
        self.n.bits().div_ceil(8) as usize
    }

    fn fixed_width(&self, x: &BigUint) -> Vec<u8> {
        let raw = x.to_bytes_be();
        let mut out = alloc::vec![0u8; self.modulus_len().saturating_sub(raw.len())];
        out.extend_from_slice(&raw);
        out
    }

    /// Numeric encoding I of a principal identity string.
    pub fn identity_number(&self, id: &str) -> BigUint {
        let mut h = Sha256::new();
        h.update([DOMAIN_IDENTITY]);
        h.update(id.as_bytes());
        BigUint::from_bytes_be(&h.finalize()) % &self.n
    }
}

/// Exponent hash h(I) under a salt.
pub fn exponent_hash(identity: &BigUint, salt: u32) -> BigUint {
    let mut h = Sha256::new();
    h.update([DOMAIN_EXPONENT]);
    h.update(salt.to_be_bytes());
    h.update(identity.to_bytes_be());
    BigUint::from_bytes_be(&h.finalize())
}

/// Temporary identity H(ID ‖ N).
pub fn temp_id(id: &str, nonce: &Nonce) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update([DOMAIN_TEMP_ID]);
    h.update((id.len() as u32).to_be_bytes());
    h.update(id.as_bytes());
    h.update(nonce);
    h.finalize().into()
}

/// Digest of a nonce echoed back to prove it was seen.
pub fn nonce_digest(nonce: &Nonce) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update([DOMAIN_NONCE]);
    h.update(nonce);
    h.finalize().into()
}

/// Key-derivation hash over a fixed-width residue.
pub fn key_from_residue(params: &PublicParams, x: &BigUint) -> Key {
    let mut h = Sha256::new();
    h.update([DOMAIN_KEY]);
    h.update(params.fixed_width(x));
    h.finalize().into()
}

pub fn mac(key: &Key, message: &[u8]) -> Tag {
    let mut m = <Hmac<Sha256> as KeyInit>::new_from_slice(key).expect("HMAC takes any key length");
    m.update(message);
    m.finalize().into_bytes().into()
}

pub fn verify_mac(key: &Key, message: &[u8], tag: &[u8]) -> bool {
    let mut m = <Hmac<Sha256> as KeyInit>::new_from_slice(key).expect("HMAC takes any key length");
    m.update(message);
    m.verify_slice(tag).is_ok()
}

/// Encrypt or decrypt a 32-byte key with a keystream bound to `label` and
/// `nonce`. The operation is its own inverse.
pub fn key_transport(key: &Key, label: &[u8], nonce: &[u8], secret: &Key) -> Key {
    let mut input = Vec::with_capacity(1 + label.len() + nonce.len());
    input.push(DOMAIN_KEYSTREAM);
    input.extend_from_slice(label);
    input.extend_from_slice(nonce);
    let stream = mac(key, &input);
    let mut out = [0u8; 32];
    for (o, (a, b)) in out.iter_mut().zip(secret.iter().zip(stream.iter())) {
        *o = a ^ b;
    }
    out
}

pub fn random_nonce(rng: &mut ChaCha20Rng) -> Nonce {
    let mut n = [0u8; 16];
    rng.fill_bytes(&mut n);
    n
}

pub fn random_key(rng: &mut ChaCha20Rng) -> Key {
    let mut k = [0u8; 32];
    rng.fill_bytes(&mut k);
    k
}

fn random_bits(rng: &mut ChaCha20Rng, bits: u32) -> BigUint {
    let mut buf = alloc::vec![0u8; bits.div_ceil(8) as usize];
    rng.fill_bytes(&mut buf);
    let excess = buf.len() as u32 * 8 - bits;
    buf[0] &= 0xffu8 >> excess;
    BigUint::from_bytes_be(&buf)
}

/// Uniform value in `[low, high)`, by rejection.
fn random_range(rng: &mut ChaCha20Rng, low: &BigUint, high: &BigUint) -> BigUint {
    let span = high - low;
    let bits = span.bits() as u32;
    loop {
        let x = random_bits(rng, bits);
        if x < span {
            return x + low;
        }
    }
}

const SMALL_PRIMES: [u32; 53] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109,
    113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223, 227, 229, 233, 239,
    241, 251,
];

fn is_probable_prime(n: &BigUint, rng: &mut ChaCha20Rng) -> bool {
    let two = BigUint::from(2u32);
    if *n < two {
        return false;
    }
    for &p in &SMALL_PRIMES {
        let p = BigUint::from(p);
        if *n == p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    if n.is_even() {
        return *n == two;
    }
    let n_minus_1 = n - 1u32;
    let r = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> r;
    'witness: for _ in 0..MILLER_RABIN_ROUNDS {
        let a = random_range(rng, &two, &n_minus_1);
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..r {
            x = (&x * &x) % n;
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Safe prime p = 2p' + 1 with exactly `bits` bits; returns (p, p').
fn safe_prime(bits: u32, rng: &mut ChaCha20Rng) -> Result<(BigUint, BigUint), CryptoError> {
    // Top two bits set so a product of two such primes has exactly 2*bits bits.
    let top = BigUint::from(3u32) << (bits - 3);
    for _ in 0..PRIME_ATTEMPTS {
        // p' has bits-1 bits and is odd.
        let mut q = random_bits(rng, bits - 1) | &top;
        q |= BigUint::one();
        let sieved = SMALL_PRIMES.iter().all(|&s| {
            let qm = (&q % s).to_u32_digits().first().copied().unwrap_or(0);
            qm != 0 && (2 * qm + 1) % s != 0
        });
        if !sieved {
            continue;
        }
        if !is_probable_prime(&q, rng) {
            continue;
        }
        let p: BigUint = (&q << 1u32) + 1u32;
        if is_probable_prime(&p, rng) {
            return Ok((p, q));
        }
    }
    Err(CryptoError::PrimeGeneration(PRIME_ATTEMPTS))
}

/// Holder of the factorisation; exists only during setup and issuance.
#[derive(Debug, Clone)]
pub struct TrustedAuthority {
    params: PublicParams,
    phi: BigUint,
    rng: ChaCha20Rng,
}

/// A principal's public key material: identity plus TA-issued witness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub w: BigUint,
    /// Salt under which h(I) is invertible modulo phi(n).
    pub salt: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrincipalKeys {
    pub id: String,
    pub identity: BigUint,
    pub private: BigUint,
    pub witness: Witness,
}

pub fn ta_setup(bits: u32, seed: &[u8]) -> Result<TrustedAuthority, CryptoError> {
    if !SUPPORTED_BITS.contains(&bits) {
        return Err(CryptoError::UnsupportedBits(bits));
    }
    let mut rng = rng_for(seed, "ta");
    let half = bits / 2;
    let (p, p1) = safe_prime(half, &mut rng)?;
    let (q, q1) = loop {
        let (q, q1) = safe_prime(half, &mut rng)?;
        if q != p {
            break (q, q1);
        }
    };
    let n = &p * &q;
    let phi = (&p - 1u32) * (&q - 1u32);
    // Full order 2p'q' = lcm(p-1, q-1) iff no maximal proper divisor kills g.
    let exps = [&p1 * &q1, &p1 << 1u32, &q1 << 1u32];
    let two = BigUint::from(2u32);
    let high = &n - 1u32;
    let mut g = None;
    for _ in 0..10_000 {
        let cand = random_range(&mut rng, &two, &high);
        if !cand.gcd(&n).is_one() {
            continue;
        }
        if exps.iter().all(|e| !cand.modpow(e, &n).is_one()) {
            g = Some(cand);
            break;
        }
    }
    let g = g.ok_or(CryptoError::Generator)?;
    Ok(TrustedAuthority {
        params: PublicParams { n, g, bits },
        phi,
        rng,
    })
}

impl TrustedAuthority {
    pub fn params(&self) -> &PublicParams {
        &self.params
    }

    /// Smallest salt giving an odd h(I) coprime to phi(n), with its inverse.
    fn invertible_hash(&self, identity: &BigUint) -> Result<(u32, BigUint), CryptoError> {
        for salt in 0..SALT_ATTEMPTS {
            let h = exponent_hash(identity, salt);
            if let Some(inv) = h.modinv(&self.phi) {
                return Ok((salt, inv));
            }
        }
        Err(CryptoError::NonInvertibleHash)
    }

    /// w = (g^s − I)^{h(I)^{-1} mod phi} mod n.
    pub fn issue_witness(&self, identity: &BigUint, private: &BigUint) -> Result<Witness, CryptoError> {
        let (salt, h_inv) = self.invertible_hash(identity)?;
        let n = &self.params.n;
        let gs = self.params.g.modpow(private, n);
        let base = (gs + n - (identity % n)) % n;
        Ok(Witness {
            w: base.modpow(&h_inv, n),
            salt,
        })
    }

    /// Draw a private exponent and issue the matching witness for `id`.
    pub fn enroll(&mut self, id: &str) -> Result<PrincipalKeys, CryptoError> {
        let identity = self.params.identity_number(id);
        let two = BigUint::from(2u32);
        let private = random_range(&mut self.rng, &two, &self.params.n);
        let witness = self.issue_witness(&identity, &private)?;
        Ok(PrincipalKeys {
            id: id.into(),
            identity,
            private,
            witness,
        })
    }
}

/// Public key g^s reconstructed from identity and witness: w^{h(I)} + I mod n.
pub fn reconstruct_public(params: &PublicParams, identity: &BigUint, witness: &Witness) -> BigUint {
    let h = exponent_hash(identity, witness.salt);
    (witness.w.modpow(&h, &params.n) + identity) % &params.n
}

/// Whether `(I, s, w)` satisfies the self-certification equation.
pub fn self_certifies(params: &PublicParams, keys: &PrincipalKeys) -> bool {
    reconstruct_public(params, &keys.identity, &keys.witness) == params.g.modpow(&keys.private, &params.n)
}

/// `key_from_residue((w_B^h(I_B) + I_B)^s_A mod n)`, which both ends reach as g^(s_A s_B).
pub fn derive_shared_key(params: &PublicParams, my_private: &BigUint, peer_identity: &BigUint, peer_witness: &Witness) -> Key {
    let public = reconstruct_public(params, peer_identity, peer_witness);
    key_from_residue(params, &public.modpow(my_private, &params.n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn setup_is_deterministic_and_rejects_bad_sizes() {
        let a = ta_setup(64, b"seed").unwrap();
        let b = ta_setup(64, b"seed").unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), ta_setup(64, b"other").unwrap().params());
        assert_eq!(ta_setup(3, b"seed").unwrap_err(), CryptoError::UnsupportedBits(3));
        assert_eq!(a.params().n.bits(), 64);
    }

    #[test]
    fn issued_keys_self_certify_and_perturbation_breaks_it() {
        let mut ta = ta_setup(64, b"certify").unwrap();
        let k = ta.enroll("fa:1").unwrap();
        assert!(self_certifies(ta.params(), &k));
        let mut bad = k.clone();
        bad.witness.w += 1u32;
        assert!(!self_certifies(ta.params(), &bad));
        let other = ta.enroll("ha:global").unwrap();
        assert_ne!(k.witness, other.witness);
    }

    #[test]
    fn agreement_is_symmetric() {
        let mut ta = ta_setup(64, b"agree").unwrap();
        let a = ta.enroll("a").unwrap();
        let b = ta.enroll("b").unwrap();
        let p = ta.params();
        let ab = derive_shared_key(p, &a.private, &b.identity, &b.witness);
        let ba = derive_shared_key(p, &b.private, &a.identity, &a.witness);
        assert_eq!(ab, ba);
        let direct = key_from_residue(p, &p.g.modpow(&(&a.private * &b.private), &p.n));
        assert_eq!(ab, direct);
        let aa = derive_shared_key(p, &a.private, &a.identity, &a.witness);
        assert_eq!(aa, key_from_residue(p, &p.g.modpow(&(&a.private * &a.private), &p.n)));
    }

    #[test]
    fn forged_witness_yields_different_key() {
        let mut ta = ta_setup(64, b"forge").unwrap();
        let a = ta.enroll("a").unwrap();
        let b = ta.enroll("b").unwrap();
        let p = ta.params();
        let forged = Witness {
            w: &b.witness.w + 7u32,
            salt: b.witness.salt,
        };
        assert_ne!(
            derive_shared_key(p, &a.private, &b.identity, &forged),
            derive_shared_key(p, &b.private, &a.identity, &a.witness)
        );
    }

    #[test]
    fn mac_round_trip_and_bit_flips() {
        let k = [7u8; 32];
        let m = b"registration request";
        let t = mac(&k, m);
        assert!(verify_mac(&k, m, &t));
        let mut m2 = m.to_vec();
        m2[3] ^= 0x10;
        assert!(!verify_mac(&k, &m2, &t));
        let mut k2 = k;
        k2[0] ^= 1;
        assert!(!verify_mac(&k2, m, &t));
        let mut t2 = t;
        t2[31] ^= 0x80;
        assert!(!verify_mac(&k, m, &t2));
        assert!(!verify_mac(&k, m, &t[..16]));
    }

    #[test]
    fn key_transport_is_an_involution() {
        let k = [1u8; 32];
        let secret = [9u8; 32];
        let blob = key_transport(&k, b"fa", b"nonce", &secret);
        assert_ne!(blob, secret);
        assert_eq!(key_transport(&k, b"fa", b"nonce", &blob), secret);
        assert_ne!(key_transport(&k, b"mn", b"nonce", &blob), secret);
    }

    #[test]
    fn temp_id_depends_on_both_inputs() {
        let n1 = [1u8; 16];
        let n2 = [2u8; 16];
        assert_eq!(temp_id("nai:a@home", &n1), temp_id("nai:a@home", &n1));
        assert_ne!(temp_id("nai:a@home", &n1), temp_id("nai:a@home", &n2));
        assert_ne!(temp_id("nai:a@home", &n1), temp_id("nai:b@home", &n1));
    }

    #[test]
    fn miller_rabin_matches_trial_division() {
        let mut rng = rng_for(b"mr", "test");
        for n in 0u32..3000 {
            let trial = n >= 2 && (2..n).take_while(|d| d * d <= n).all(|d| n % d != 0);
            assert_eq!(is_probable_prime(&BigUint::from(n), &mut rng), trial, "n = {n}");
        }
    }
}
