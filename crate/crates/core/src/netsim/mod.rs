//! Discrete-event network primitives: clock, event queue and path model.

mod clock;
mod path;
mod time;

pub use clock::SimClock;
pub use path::{
    CapacitySchedule, DelaySchedule, EnqueueOutcome, PathCounters, PathError, PathModel, PathSpec, QueuedPacket,
};
pub use time::SimTime;

/// Default packet size on the wire.
pub const MSS_BYTES: u32 = 1500;
