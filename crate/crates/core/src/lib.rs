//! Online execution-time prediction for local/cloud offloading.
//!
//! Each target keeps a FIFO window of its `N` most recent `(input size,
//! execution time)` observations. A least-squares line is refitted per task
//! and the task is offloaded when the cloud is predicted strictly faster.
//!
//! - [`window`]: sliding windows and the least-squares predictor
//! - [`workload`]: input-size model and synthetic task streams
//! - [`engine`]: warm-up and steady-state decision loop, replay and live runs
//! - [`transport`]: framed request/response link and loopback cloud server
//! - [`metrics`]: correlation, residuals, decision accuracy, window-size sweep

pub mod engine;
pub mod error;
pub mod metrics;
pub mod transport;
pub mod window;
pub mod workload;

pub use engine::{decide, Decision, Engine, EngineConfig, Phase, Target, TaskRecord};
pub use error::{Error, Result};
pub use window::{LinearModel, Observation, SlidingWindow};
pub use workload::{generate_stream, CostProfile, TargetProfile, Task, TaskStream};
