//! Scenarios shipped with the binary.

use crate::config::{load_config_with, ConfigError, Overrides, ScenarioConfig};

pub const BUNDLED: &[(&str, &str)] = &[
    ("scalar", include_str!("../scenarios/scalar.json")),
    ("planar_line", include_str!("../scenarios/planar_line.json")),
    ("motor_speed", include_str!("../scenarios/motor_speed.json")),
    ("track4d", include_str!("../scenarios/track4d.json")),
    ("unit_circle", include_str!("../scenarios/unit_circle.json")),
    ("stability", include_str!("../scenarios/stability.json")),
];

pub fn source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Loads a bundled scenario. Panics on an unknown name.
pub fn load(name: &str, overrides: &Overrides) -> Result<ScenarioConfig, ConfigError> {
    let text = source(name).unwrap_or_else(|| panic!("no bundled scenario named {name}"));
    load_config_with(text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_bundled_scenarios_validate() {
        for (name, _) in BUNDLED {
            let c = load(name, &Overrides::default()).unwrap();
            assert_eq!(&c.name, name);
        }
    }
}
