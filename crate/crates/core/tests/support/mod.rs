//! Oracle checks shared by the integration tests and the acceptance suite.
//! Each check returns the first violation it finds as an error message.
#![allow(dead_code)]

pub mod arena;
pub mod gradient;
pub mod kernels;
pub mod quant;
pub mod schedule;
pub mod spray;

pub type Check = Result<(), String>;
