use std::path::Path;

use dualhand::adapt::AdaptationConfig;
use dualhand::scene::SceneConfig;
use serde::{Deserialize, Serialize};

use crate::failure::{Failure, Outcome};

/// The experiment file. Both sections default, so an empty file is valid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    pub adapt: AdaptationConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Outcome<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Failure::Config(e.to_string()))?;
        config
            .scene
            .validate()
            .map_err(|e| Failure::Config(format!("scene: {e}")))?;
        config
            .adapt
            .validate()
            .map_err(|e| Failure::Config(format!("adapt: {e}")))?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Outcome<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|f| match f {
            Failure::Config(m) => Failure::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dualhand::pseudolabel::{Provenance, Softness};

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(
            ExperimentConfig::parse("").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn inf_string_and_overrides() {
        let c = ExperimentConfig::parse(
            "[adapt]\nbeta = \"inf\"\nalpha = 0.5\npseudo_labels = \"abm-only\"\n[scene]\ncount = 12\n",
        )
        .unwrap();
        assert_eq!(c.adapt.beta, Softness::INFINITE);
        assert_eq!(c.adapt.alpha, 0.5);
        assert_eq!(c.adapt.pseudo_labels, Provenance::AbmOnly);
        assert_eq!(c.scene.count, 12);
        let finite = ExperimentConfig::parse("[adapt]\nbeta = 2.5\n").unwrap();
        assert_eq!(finite.adapt.beta.value(), 2.5);
    }

    #[test]
    fn bad_fields_are_named() {
        let unknown = ExperimentConfig::parse("[adapt]\nalpah = 0.5\n").unwrap_err();
        assert!(unknown.to_string().contains("alpah"), "{unknown}");
        let range = ExperimentConfig::parse("[adapt]\neta_r = 2.0\n").unwrap_err();
        assert!(matches!(range, Failure::Config(_)));
        assert!(range.to_string().contains("eta_r"), "{range}");
    }
}
