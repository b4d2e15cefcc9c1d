//! Command-line runner, log inspector and HTTP gateway.

pub mod gateway;
pub mod inspect;
pub mod run;
