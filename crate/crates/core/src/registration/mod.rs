//! Self-certified-key registration and correspondent authentication.

pub mod crypto;
pub mod protocol;
pub mod wire;
pub mod world;

pub use crypto::{derive_shared_key, mac, self_certifies, ta_setup, verify_mac, CryptoError, PublicParams};
pub use protocol::{Correspondent, ForeignAgent, HomeRegistrar, MobileNode, Reject};
pub use wire::Kind;
pub use world::{verify, Line, RegistrationWorld, Role, Transcript, TranscriptReport, Verdict};
