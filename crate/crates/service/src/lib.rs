//! HTTP front end for a running experiment.
//!
//! [`Service`] owns the experiment and its log; [`router`] maps it onto the
//! routes the browser console and admin dashboard use.

pub mod error;
pub mod http;
pub mod service;

pub use error::{Result, ServiceError};
pub use http::{router, serve};
pub use service::{
    stimulus_url, system_clock, ChainSummary, Clock, RatingView, Service, StatusView, TrialView,
};
