//! Experiment configuration: per-scene defaults, JSON files, flag overrides.

use std::path::{Path, PathBuf};

use cdl_core::mechanics::{SceneKind, SystemSpec, Windowing};
use cdl_core::models::{ModelKind, DEFAULT_HIDDEN};
use cdl_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::LabError;

/// Elasticity used by the elastic-ball ablation unless overridden.
pub const ELASTIC_BALL_E: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneKind,
    pub model: ModelKind,
    /// Number of training trajectories (J).
    pub trajectories: usize,
    /// States per training trajectory (N).
    pub points: usize,
    pub sigma: f64,
    pub seed: u64,
    /// Overrides the scene's restitution coefficient.
    pub elasticity: Option<f64>,
    pub hidden: Vec<usize>,
    pub windowing: Windowing,
    pub train: TrainConfig,
    /// Root of the output tree; not part of the config hash.
    pub out: PathBuf,
}

impl ExperimentConfig {
    /// Defaults for a scene: dataset size, noise and epoch count.
    pub fn for_scene(scene: SceneKind, model: ModelKind) -> Self {
        let (trajectories, sigma, epochs) = match scene {
            SceneKind::Pendulum => (20, 0.2, 3000),
            SceneKind::BouncingBall => (52, 0.2, 2000),
            SceneKind::NewtonsCradle => (54, 0.02, 2000),
        };
        Self {
            scene,
            model,
            trajectories,
            points: 10,
            sigma,
            seed: 0,
            elasticity: None,
            hidden: DEFAULT_HIDDEN.to_vec(),
            windowing: Windowing::Sliced,
            train: TrainConfig {
                epochs,
                ..TrainConfig::default()
            },
            out: PathBuf::from("."),
        }
    }

    /// Parses a JSON document on top of the defaults of the scene and model
    /// it names. Nested objects merge key by key.
    pub fn from_json(text: &str) -> Result<Self, LabError> {
        let doc: Value = serde_json::from_str(text).map_err(|e| LabError::Config(format!("config: {e}")))?;
        let obj = doc
            .as_object()
            .ok_or_else(|| LabError::Config("config must be a JSON object".into()))?;
        fn field<T: serde::de::DeserializeOwned>(
            obj: &serde_json::Map<String, Value>,
            name: &str,
        ) -> Result<Option<T>, serde_json::Error> {
            obj.get(name).cloned().map(serde_json::from_value).transpose()
        }
        let scene: SceneKind = field(obj, "scene")
            .map_err(|e| LabError::Config(format!("scene: {e}")))?
            .unwrap_or(SceneKind::Pendulum);
        let model: ModelKind = field(obj, "model")
            .map_err(|e| LabError::Config(format!("model: {e}")))?
            .unwrap_or(ModelKind::Cdl);
        let mut base = serde_json::to_value(Self::for_scene(scene, model)).expect("config serialises");
        merge(&mut base, doc);
        serde_json::from_value(base).map_err(|e| LabError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn spec(&self) -> SystemSpec {
        let spec = SystemSpec::for_scene(self.scene);
        match self.elasticity {
            Some(e) => spec.with_elasticity(e),
            None => spec,
        }
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let bad = |m: String| Err(LabError::Config(m));
        self.spec().validate()?;
        self.train.validate()?;
        if !self.model.supports(self.scene) {
            return bad(format!("model {} cannot be used on {}", self.model, self.scene));
        }
        if self.trajectories == 0 || self.points < 2 {
            return bad(format!(
                "need at least one trajectory of two points, got {} x {}",
                self.trajectories, self.points
            ));
        }
        if self.train.horizon > self.points {
            return bad(format!(
                "horizon {} exceeds trajectory length {}",
                self.train.horizon, self.points
            ));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        Ok(())
    }

    /// Everything except the output root, as canonical JSON.
    pub fn content(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serialises");
        v.as_object_mut().expect("object").remove("out");
        v
    }

    /// First 16 hex digits of the SHA-256 of [`Self::content`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.content().to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Hash of the dataset parameters alone.
    pub fn dataset_hash(&self) -> String {
        let key = serde_json::json!({
            "scene": self.scene,
            "trajectories": self.trajectories,
            "points": self.points,
            "sigma": self.sigma,
            "seed": self.seed,
            "elasticity": self.elasticity,
            "windowing": self.windowing,
        });
        let digest = Sha256::digest(key.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// `<out>/runs/<scene>/<model>/<hash>`.
    pub fn run_dir(&self) -> PathBuf {
        self.out
            .join("runs")
            .join(self.scene.as_str())
            .join(self.model.as_str())
            .join(self.hash())
    }

    /// `<out>/datasets/<scene>/<dataset hash>`.
    pub fn dataset_dir(&self) -> PathBuf {
        self.out
            .join("datasets")
            .join(self.scene.as_str())
            .join(self.dataset_hash())
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Command-line overrides applied after the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scene: Option<SceneKind>,
    pub model: Option<ModelKind>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub sigma: Option<f64>,
    pub no_touch: bool,
    pub elasticity: Option<f64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    /// Resolves the final configuration. A scene or model given on the
    /// command line without a file starts from that scene's defaults.
    pub fn resolve(&self, file: Option<&Path>) -> Result<ExperimentConfig, LabError> {
        let mut cfg = match file {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::for_scene(
                self.scene.unwrap_or(SceneKind::Pendulum),
                self.model.unwrap_or(ModelKind::Cdl),
            ),
        };
        if let Some(scene) = self.scene {
            if scene != cfg.scene {
                let fresh = ExperimentConfig::for_scene(scene, cfg.model);
                cfg.trajectories = fresh.trajectories;
                cfg.sigma = fresh.sigma;
                cfg.train.epochs = fresh.train.epochs;
                cfg.scene = scene;
            }
        }
        if let Some(model) = self.model {
            cfg.model = model;
        }
        if self.no_touch {
            cfg.model = match cfg.model {
                ModelKind::Cdl => ModelKind::CdlNoTouch,
                ModelKind::ResnetContact => ModelKind::Resnet,
                other => other,
            };
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.train.seed = seed;
        }
        if let Some(epochs) = self.epochs {
            cfg.train.epochs = epochs;
        }
        if let Some(sigma) = self.sigma {
            cfg.sigma = sigma;
        }
        if let Some(e) = self.elasticity {
            cfg.elasticity = Some(e);
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_defaults() {
        let p = ExperimentConfig::for_scene(SceneKind::Pendulum, ModelKind::Cdl);
        assert_eq!((p.trajectories, p.points, p.sigma, p.train.epochs), (20, 10, 0.2, 3000));
        let b = ExperimentConfig::for_scene(SceneKind::BouncingBall, ModelKind::Cdl);
        assert_eq!((b.trajectories, b.train.epochs), (52, 2000));
        assert_eq!(b.spec().q0, vec![10.0]);
        assert_eq!(b.spec().elasticity, 1.0);
        let c = ExperimentConfig::for_scene(SceneKind::NewtonsCradle, ModelKind::Cdl);
        assert_eq!((c.spec().q0, c.spec().qdot0), (vec![0.0, 0.0], vec![2.0, 0.0]));
    }

    #[test]
    fn file_merges_over_scene_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"scene":"ball","model":"resnet","train":{"epochs":5}}"#).unwrap();
        assert_eq!(cfg.scene, SceneKind::BouncingBall);
        assert_eq!(cfg.trajectories, 52);
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.lr, 1e-3);
        assert!(ExperimentConfig::from_json(r#"{"sceen":"ball"}"#).is_err());
        assert!(ExperimentConfig::from_json("[1]").is_err());
    }

    #[test]
    fn overrides_and_validation() {
        let o = Overrides {
            scene: Some(SceneKind::NewtonsCradle),
            model: Some(ModelKind::VinVv),
            ..Default::default()
        };
        assert!(matches!(o.resolve(None), Err(LabError::Config(_))));
        let o = Overrides {
            scene: Some(SceneKind::BouncingBall),
            no_touch: true,
            seed: Some(7),
            elasticity: Some(0.8),
            ..Default::default()
        };
        let cfg = o.resolve(None).unwrap();
        assert_eq!(cfg.model, ModelKind::CdlNoTouch);
        assert_eq!((cfg.seed, cfg.train.seed), (7, 7));
        assert_eq!(cfg.spec().elasticity, 0.8);
    }

    #[test]
    fn hash_ignores_output_root() {
        let a = ExperimentConfig::for_scene(SceneKind::Pendulum, ModelKind::Cdl);
        let mut b = a.clone();
        b.out = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        assert!(a.run_dir().ends_with(format!("runs/pendulum/cdl/{}", a.hash())));
    }
}
