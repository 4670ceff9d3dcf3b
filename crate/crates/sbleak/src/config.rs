//! Config files: `key = value` overrides for the timing model and the
//! covert-channel noise parameters. Absent keys keep their defaults; the
//! merged result is validated before use.

use thiserror::Error;

use crate::channel::{ChannelError, ChannelParams};
use crate::machine::{MachineError, TimingModel};

/// Config parse/validation failures.
#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {0}: expected `key = value`")]
    MalformedLine(usize),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}` has malformed value `{value}`")]
    MalformedValue { key: String, value: String },
    #[error(transparent)]
    Timing(#[from] MachineError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Parses overrides on top of the default timing model and channel
/// parameters. Lines are `key = value`; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<(TimingModel, ChannelParams), ConfigError> {
    let mut tm = TimingModel::default();
    let mut ch = ChannelParams::default();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::MalformedLine(lineno + 1));
        };
        let (key, value) = (key.trim(), value.trim());

        let malformed = || ConfigError::MalformedValue { key: key.into(), value: value.into() };
        let int = || value.parse::<u64>().map_err(|_| malformed());
        match key {
            "hit_latency" => tm.hit_latency = int()?,
            "miss_latency" => tm.miss_latency = int()?,
            "drain_cached" => tm.drain_cached = int()?,
            "drain_flushed" => tm.drain_flushed = int()?,
            "drain_locked" => tm.drain_locked = int()?,
            "transient_window" => tm.transient_window = int()?,
            "nominal_frequency" => tm.nominal_frequency = int()?,
            "stride" => ch.stride = int()?,
            "hit_mean" => ch.hit_mean = value.parse().map_err(|_| malformed())?,
            "miss_mean" => ch.miss_mean = value.parse().map_err(|_| malformed())?,
            "noise_sigma" => ch.noise_sigma = value.parse().map_err(|_| malformed())?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
    }

    tm.validate()?;
    ch.validate()?;
    Ok((tm, ch))
}
