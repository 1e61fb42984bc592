//! TOML experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ivbench_core::codec::RatePoint;
use ivbench_core::dsde::DsdeConfig;
use ivbench_core::dsgs::PredictorConfig;
use ivbench_core::scenegen::SceneSpec;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Dsde,
    Dsgs,
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pipeline::Dsde => "dsde",
            Pipeline::Dsgs => "dsgs",
        })
    }
}

impl FromStr for Pipeline {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dsde" => Ok(Pipeline::Dsde),
            "dsgs" => Ok(Pipeline::Dsgs),
            other => Err(format!("unknown pipeline {other:?} (expected dsde or dsgs)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsdeSection {
    pub planes: usize,
}

impl Default for DsdeSection {
    fn default() -> Self {
        Self {
            planes: DsdeConfig::default().planes,
        }
    }
}

/// Directional checks a committed config asks the CLI to enforce (exit code 3 on failure).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gates {
    /// DSGS quality argmax is RP1 or RP2 and floaters(RP1) <= floaters(RP0).
    pub regularizer: bool,
    /// DSDE mean SSIM non-increasing over the rate points, per atlas count.
    pub dsde_monotone: bool,
    /// DSGS inter-view PSNR spread below DSDE's at every rate point, per atlas count.
    pub consistency: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scene seed; overrides `scene.seed` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub scene: SceneSpec,
    #[serde(default = "default_atlas_counts")]
    pub atlas_counts: Vec<usize>,
    #[serde(default = "default_rate_points")]
    pub rate_points: Vec<RatePoint>,
    #[serde(default = "default_pipelines")]
    pub pipelines: Vec<Pipeline>,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub dsde: DsdeSection,
    /// Search interval for both pipelines; defaults to the scene kind's interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_range: Option<(f64, f64)>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Record wall times in the sweep CSV. Off gives byte-identical CSVs across reruns.
    #[serde(default = "default_true")]
    pub timing: bool,
    #[serde(default)]
    pub gates: Gates,
}

fn default_atlas_counts() -> Vec<usize> {
    vec![1]
}

fn default_rate_points() -> Vec<RatePoint> {
    RatePoint::ALL.to_vec()
}

fn default_pipelines() -> Vec<Pipeline> {
    vec![Pipeline::Dsde, Pipeline::Dsgs]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn new(scene: SceneSpec) -> Self {
        Self {
            seed: None,
            scene,
            atlas_counts: default_atlas_counts(),
            rate_points: default_rate_points(),
            pipelines: default_pipelines(),
            predictor: PredictorConfig::default(),
            dsde: DsdeSection::default(),
            depth_range: None,
            output_dir: default_output_dir(),
            timing: true,
            gates: Gates::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::parse("config", e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| HarnessError::parse(path.display().to_string(), e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.atlas_counts.is_empty() || self.rate_points.is_empty() || self.pipelines.is_empty() {
            return bad("atlas_counts, rate_points and pipelines must be non-empty".into());
        }
        if let Some(&a) = self.atlas_counts.iter().find(|a| !(1..=2).contains(*a)) {
            return bad(format!("atlas count {a} not in {{1, 2}}"));
        }
        if has_duplicates(&self.atlas_counts) || has_duplicates(&self.rate_points) || has_duplicates(&self.pipelines) {
            return bad("duplicate entries in atlas_counts, rate_points or pipelines".into());
        }
        if let Some(s) = self.seed {
            if self.scene.seed != 0 && self.scene.seed != s {
                return bad(format!("seed {s} conflicts with scene.seed {}", self.scene.seed));
            }
        }
        let default_range = PredictorConfig::default().depth_range;
        if self.predictor.depth_range != default_range {
            return bad("set the search interval with the top-level depth_range, not predictor.depth_range".into());
        }
        let cfg_err = |e: &dyn std::fmt::Display| HarnessError::Config(e.to_string());
        self.scene_spec().validate().map_err(|e| cfg_err(&e))?;
        self.predictor_config().validate().map_err(|e| cfg_err(&e))?;
        self.dsde_config().validate().map_err(|e| cfg_err(&e))?;
        Ok(())
    }

    /// Scene spec with the top-level seed applied.
    pub fn scene_spec(&self) -> SceneSpec {
        let mut s = self.scene.clone();
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        s
    }

    pub fn resolved_depth_range(&self) -> (f64, f64) {
        self.depth_range.unwrap_or_else(|| self.scene.kind.depth_range())
    }

    pub fn predictor_config(&self) -> PredictorConfig {
        PredictorConfig {
            depth_range: self.resolved_depth_range(),
            ..self.predictor
        }
    }

    pub fn dsde_config(&self) -> DsdeConfig {
        DsdeConfig {
            planes: self.dsde.planes,
            depth_range: self.resolved_depth_range(),
        }
    }
}

fn has_duplicates<T: Ord + Clone>(v: &[T]) -> bool {
    let mut s = v.to_vec();
    s.sort();
    s.windows(2).any(|w| w[0] == w[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ivbench_core::scenegen::SceneKind;

    const SAMPLE: &str = r#"
seed = 3
atlas_counts = [1, 2]
rate_points = ["RP0", 1, "rp2"]
pipelines = ["dsgs"]
output_dir = "out/x"

[scene]
kind = "noise_augmented"
rig = "linear_9"
resolution = [480, 272]
noise_sigma = 0.05

[predictor]
refine_iters = 2

[gates]
regularizer = true
"#;

    #[test]
    fn parses_and_resolves() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.scene_spec().seed, 3);
        assert_eq!(cfg.scene.kind, SceneKind::NoiseAugmented);
        assert_eq!(cfg.rate_points, vec![RatePoint::Rp0, RatePoint::Rp1, RatePoint::Rp2]);
        assert_eq!(cfg.predictor_config().depth_range, SceneKind::NoiseAugmented.depth_range());
        assert_eq!(cfg.predictor_config().refine_iters, 2);
        assert_eq!(cfg.dsde_config().planes, 64);
        assert!(cfg.gates.regularizer && !cfg.gates.consistency);
        assert!(cfg.timing);
    }

    #[test]
    fn serialization_round_trips() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_selections() {
        let with = |extra: &str| ExperimentConfig::from_toml(&format!("{extra}\n[scene]\nkind = \"textured_plane\"\n"));
        assert!(matches!(with("atlas_counts = []"), Err(HarnessError::Config(_))));
        assert!(matches!(with("atlas_counts = [3]"), Err(HarnessError::Config(_))));
        assert!(matches!(with("pipelines = [\"dsde\", \"dsde\"]"), Err(HarnessError::Config(_))));
        assert!(matches!(with("rate_points = [7]"), Err(HarnessError::Parse { .. })));
        assert!(matches!(with("bogus = 1"), Err(HarnessError::Parse { .. })));
        assert!(matches!(with("seed = 4\n[predictor]\nsubsample = 0"), Err(HarnessError::Config(_))));
        assert!(with("").is_ok());
    }

    #[test]
    fn pipeline_names() {
        assert_eq!("DSGS".parse::<Pipeline>().unwrap(), Pipeline::Dsgs);
        assert_eq!(Pipeline::Dsde.to_string(), "dsde");
        assert!("nerf".parse::<Pipeline>().is_err());
    }
}
