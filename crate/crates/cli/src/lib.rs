//! Library side of the `spd-gbw` command: synthetic data, condition-number diagnostics,
//! verification suites and training grids.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnose;
pub mod grid;
pub mod synth;
pub mod verify;

use spd_gbw::Error;

/// Environment variable capping the worker threads.
pub const THREADS_VAR: &str = "SPD_GBW_THREADS";

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFY_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

/// Numerical and domain failures map to 3; configuration, parse and I/O errors to 2.
pub fn exit_code(err: &Error) -> u8 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

/// Thread cap from [`THREADS_VAR`]; `None` when unset or empty.
pub fn thread_limit() -> Result<Option<usize>, Error> {
    match std::env::var(THREADS_VAR) {
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}
