pub mod adversary;
pub mod codec;
pub mod crypto;
pub mod da2a;
pub mod evidence;
pub mod harness;
pub mod master;
pub mod sequencer;
pub mod simnet;
pub mod types;
