//! Built-in scenario library.

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

const LIBRARY: &[(&str, &str)] = &[
    ("doubling_closed", include_str!("../scenarios/doubling_closed.cfg")),
    ("doubling_hole_half", include_str!("../scenarios/doubling_hole_half.cfg")),
    ("doubling_hole_q1", include_str!("../scenarios/doubling_hole_q1.cfg")),
    ("gauss_closed", include_str!("../scenarios/gauss_closed.cfg")),
    ("gauss_hole", include_str!("../scenarios/gauss_hole.cfg")),
    ("rand2_mixed", include_str!("../scenarios/rand2_mixed.cfg")),
    ("orbit_window_random", include_str!("../scenarios/orbit_window_random.cfg")),
];

/// Names and source text of the built-in configurations.
pub fn scenario_library() -> &'static [(&'static str, &'static str)] {
    LIBRARY
}

pub fn scenario_source(name: &str) -> Result<&'static str> {
    LIBRARY
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
        .ok_or_else(|| Error::invalid(format!("no built-in scenario `{name}`")))
}

pub fn scenario(name: &str) -> Result<ExperimentConfig> {
    ExperimentConfig::parse(scenario_source(name)?)
}

/// Markov-aligned scenarios get the tight identity tolerances.
pub fn is_markov(cfg: &ExperimentConfig) -> bool {
    !cfg.maps.iter().any(|m| matches!(m, crate::config::MapSpec::Gauss { .. }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BaseChoice;

    #[test]
    fn library_contents() {
        let names: Vec<&str> = scenario_library().iter().map(|s| s.0).collect();
        assert!(names.contains(&"doubling_closed"));
        assert_eq!(names.len(), 7);
        for (name, _) in scenario_library() {
            let c = scenario(name).unwrap();
            assert_eq!(&c.name, name);
        }
        assert!(scenario("nope").is_err());
    }

    #[test]
    fn rand2_has_one_hole() {
        let c = scenario("rand2_mixed").unwrap();
        assert_eq!((c.base.kind, c.fibers()), (BaseChoice::Cycle, 2));
        assert!(c.holes[0].is_empty() && c.holes[1] == vec![(2.0 / 3.0, 1.0)]);
    }
}
