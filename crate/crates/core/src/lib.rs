#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod coordinator;
pub mod error;
pub mod linalg;
pub mod lti;
pub mod qp;
pub mod secure;
pub mod sim;

pub use error::{Error, Result};
