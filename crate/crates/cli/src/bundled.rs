//! Scenario files shipped with the binary.

use crate::error::CliError;
use crate::scenario::{parse_str, Scenario};

pub const BUNDLED: [(&str, &str); 3] = [
    ("example1_k1", include_str!("../scenarios/example1_k1.toml")),
    ("example1_k5", include_str!("../scenarios/example1_k5.toml")),
    ("example2", include_str!("../scenarios/example2.toml")),
];

pub fn bundled_text(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn bundled(name: &str) -> Result<Scenario, CliError> {
    parse_str(bundled_text(name).ok_or_else(|| CliError::NotFound(name.into()))?)
}
