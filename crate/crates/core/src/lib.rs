//! Core algorithms for hybrid model/market forecasting.
//!
//! This crate is `no_std` (with `alloc`) so it can be embedded anywhere the
//! decision logic needs to run. IO, file formats, the network service and the
//! command-line tool live in the `hybrid-market` companion crate.
//!
//! Layout:
//!
//! - [`panel`]: forecast/price/outcome panels, price normalization, alignment.
//! - [`scoring`]: Brier scores, calibration, frequency reports, hybrid dominance.
//! - [`decision`]: CRRA utility, expected utility of a trade plan, solvency and
//!   the optimal-trade solver.
//! - [`backtest`]: daily replay of beliefs against market prices.
//! - [`engine`]: limit order book exchange with full-margin escrow.
//! - [`maker`]: the model-driven quoting bot.
//! - [`venue`]: engine plus bots plus the per-market event stream.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod backtest;
pub mod date;
pub mod decision;
pub mod engine;
pub mod fixed;
pub mod maker;
pub mod panel;
pub mod scoring;
pub mod venue;

pub use date::Date;
pub use panel::StateCode;
