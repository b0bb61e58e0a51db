//! Minimal env-controlled logging (`MMELQ_LOG` = `off` | `info` | `debug`).

use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LogLevel {
    Off,
    Info,
    Debug,
}

static LEVEL: OnceLock<LogLevel> = OnceLock::new();

fn level() -> LogLevel {
    *LEVEL.get_or_init(|| match std::env::var("MMELQ_LOG").as_deref() {
        Ok("debug") => LogLevel::Debug,
        Ok("info") => LogLevel::Info,
        _ => LogLevel::Off,
    })
}

pub fn log_enabled(at: LogLevel) -> bool {
    at <= level()
}

macro_rules! log_info {
    ($($arg:tt)*) => {
        if $crate::log_enabled($crate::LogLevel::Info) {
            eprintln!($($arg)*);
        }
    };
}

macro_rules! log_debug {
    ($($arg:tt)*) => {
        if $crate::log_enabled($crate::LogLevel::Debug) {
            eprintln!($($arg)*);
        }
    };
}

pub(crate) use log_debug;
pub(crate) use log_info;
