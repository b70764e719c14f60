//! Fog/edge wire format and the edge's verification state machine.

mod selector;
pub mod transport;
mod verifier;
pub mod wire;

pub use selector::BranchSelector;
pub use verifier::{
    verify_branch, Action, Event, Mode, Verdict, Verifier, VerifierError, VerifierState,
    VerifierStats,
};
pub use wire::{decode_frame, encode_frame, FrameMessage, MsgType, Payload, WireError};
