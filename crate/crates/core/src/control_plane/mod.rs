//! Client, proxy and engine tiers of the decision pipeline and the frame
//! protocol between them.

mod client;
mod delay;
mod engine;
mod frames;
mod proxy;

pub use client::{ApplyOutcome, ClientSubflow};
pub use delay::DelayLine;
pub use engine::{Decision, Engine};
pub use frames::{
    decode_frame, encode_frame, CwndDirective, Frame, FrameDecoder, FrameError, MetricReport, WIRE_VERSION,
};
pub use proxy::{InvocationMode, InvocationPolicy, Proxy, ProxyDecision, INACTIVITY_WINDOWS};
