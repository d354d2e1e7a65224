//! Tracker configuration, built-in presets and JSON overrides.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::association::Metric;
use crate::class::ClassId;
use crate::error::{Error, Result};
use crate::motion::NoiseConfig;

/// Thresholds and ages for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassParams {
    /// Minimum projected-box IoU for pairing a 3D and an image detection.
    pub fusion_threshold: f64,
    /// First-stage gate: an upper bound for distances, a lower bound for 3D IoU.
    pub threshold_3d: f64,
    /// Second-stage IoU gate.
    pub threshold_2d: f64,
    /// Frames without any update before a track is dropped.
    pub max_age: u32,
    /// Frames since the last image update within which a matched track is confirmed.
    pub max_age_2d: u32,
}

/// Per-class partial override of [`ClassParams`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassOverride {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fusion_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold_3d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold_2d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_age: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_age_2d: Option<u32>,
}

impl ClassOverride {
    fn apply(&self, base: ClassParams) -> ClassParams {
        ClassParams {
            fusion_threshold: self.fusion_threshold.unwrap_or(base.fusion_threshold),
            threshold_3d: self.threshold_3d.unwrap_or(base.threshold_3d),
            threshold_2d: self.threshold_2d.unwrap_or(base.threshold_2d),
            max_age: self.max_age.unwrap_or(base.max_age),
            max_age_2d: self.max_age_2d.unwrap_or(base.max_age_2d),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Camera used for reported image boxes. `None` picks, per track, the
    /// camera in which the box projects largest.
    pub camera: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerConfig {
    pub metric: Metric,
    /// Drop every image detection: no fusion pairs, no second stage, and
    /// confirmation needs only a current-frame match.
    pub disable_2d: bool,
    pub noise: NoiseConfig,
    pub report: ReportConfig,
    pub default: ClassParams,
    #[serde(default)]
    pub classes: BTreeMap<ClassId, ClassOverride>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    #[default]
    Kitti,
    Nuscenes,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "kitti" => Ok(Preset::Kitti),
            "nuscenes" => Ok(Preset::Nuscenes),
            other => Err(format!("unknown preset `{other}` (accepted: kitti, nuscenes)")),
        }
    }
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig::kitti()
    }
}

impl TrackerConfig {
    /// KITTI constants. The first-stage threshold of 0.01 only makes sense as
    /// an IoU floor, so this preset associates on 3D IoU.
    pub fn kitti() -> Self {
        TrackerConfig {
            metric: Metric::Iou3d,
            disable_2d: false,
            noise: NoiseConfig::default(),
            report: ReportConfig::default(),
            default: ClassParams { fusion_threshold: 0.01, threshold_3d: 0.01, threshold_2d: 0.3, max_age: 3, max_age_2d: 3 },
            classes: BTreeMap::new(),
        }
    }

    /// NuScenes constants with per-class scaled-distance gates.
    pub fn nuscenes() -> Self {
        const THRESHOLD_3D: [f64; 7] = [7.5, 1.8, 4.4, 8.15, 7.5, 4.9, 7.5];
        const MAX_AGE_2D: [u32; 7] = [2, 3, 1, 3, 3, 2, 2];
        let classes = ClassId::ALL
            .iter()
            .map(|&c| {
                let i = c.index();
                let over = ClassOverride {
                    threshold_3d: Some(THRESHOLD_3D[i]),
                    max_age_2d: Some(MAX_AGE_2D[i]),
                    fusion_threshold: (c == ClassId::Trailer).then_some(0.01),
                    ..ClassOverride::default()
                };
                (c, over)
            })
            .collect();
        TrackerConfig {
            metric: Metric::ScaledDistance,
            disable_2d: false,
            noise: NoiseConfig::default(),
            report: ReportConfig::default(),
            default: ClassParams { fusion_threshold: 0.3, threshold_3d: 7.5, threshold_2d: 0.5, max_age: 3, max_age_2d: 2 },
            classes,
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Kitti => TrackerConfig::kitti(),
            Preset::Nuscenes => TrackerConfig::nuscenes(),
        }
    }

    pub fn params(&self, class: ClassId) -> ClassParams {
        match self.classes.get(&class) {
            Some(o) => o.apply(self.default),
            None => self.default,
        }
    }

    /// Deep-merges a JSON document over `self`; keys absent from the
    /// document keep their current value.
    pub fn merged_with(&self, overrides: &Value) -> Result<Self> {
        let mut base = serde_json::to_value(self)?;
        merge(&mut base, overrides);
        let cfg: TrackerConfig = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str, preset: Preset) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        TrackerConfig::preset(preset).merged_with(&v)
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate().map_err(Error::Config)?;
        for class in ClassId::ALL {
            let p = self.params(class);
            for (name, v) in [("fusion_threshold", p.fusion_threshold), ("threshold_3d", p.threshold_3d), ("threshold_2d", p.threshold_2d)] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::Config(format!("{class}.{name} must be finite and non-negative, got {v}")));
                }
            }
            if p.max_age < 1 || p.max_age_2d < 1 {
                return Err(Error::Config(format!("{class}: ages must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn kitti_defaults() {
        let c = TrackerConfig::default();
        let p = c.params(ClassId::Car);
        assert_eq!((p.fusion_threshold, p.threshold_3d, p.threshold_2d), (0.01, 0.01, 0.3));
        assert_eq!((p.max_age, p.max_age_2d), (3, 3));
        assert_eq!(c.params(ClassId::Pedestrian), p);
        c.validate().unwrap();
    }

    #[test]
    fn nuscenes_vectors_follow_class_order() {
        let c = TrackerConfig::nuscenes();
        let t3: Vec<f64> = ClassId::ALL.iter().map(|&k| c.params(k).threshold_3d).collect();
        let a2: Vec<u32> = ClassId::ALL.iter().map(|&k| c.params(k).max_age_2d).collect();
        assert_eq!(t3, vec![7.5, 1.8, 4.4, 8.15, 7.5, 4.9, 7.5]);
        assert_eq!(a2, vec![2, 3, 1, 3, 3, 2, 2]);
        assert_eq!(c.params(ClassId::Trailer).fusion_threshold, 0.01);
        assert_eq!(c.params(ClassId::Car).fusion_threshold, 0.3);
        assert_eq!(c.params(ClassId::Bus).threshold_2d, 0.5);
        assert_eq!(c.params(ClassId::Bus).max_age, 3);
        assert_eq!(c.metric, Metric::ScaledDistance);
    }

    #[test]
    fn overrides_merge_deeply() {
        let c = TrackerConfig::kitti().merged_with(&json!({"classes": {"car": {"max_age": 5}}, "noise": {"r": 2.0}})).unwrap();
        assert_eq!(c.params(ClassId::Car).max_age, 5);
        assert_eq!(c.params(ClassId::Car).threshold_2d, 0.3);
        assert_eq!(c.params(ClassId::Pedestrian).max_age, 3);
        assert_eq!(c.noise.r, 2.0);
        assert_eq!(c.noise.p0_velocity, 1000.0);
    }

    #[test]
    fn invalid_values_rejected() {
        let base = TrackerConfig::kitti();
        assert!(base.merged_with(&json!({"default": {"max_age": 0}})).is_err());
        assert!(base.merged_with(&json!({"default": {"threshold_2d": -0.1}})).is_err());
        assert!(base.merged_with(&json!({"classes": {"tram": {}}})).is_err());
        assert!(base.merged_with(&json!({"unknown_key": 1})).is_err());
    }

    #[test]
    fn dump_round_trips() {
        for c in [TrackerConfig::kitti(), TrackerConfig::nuscenes()] {
            let back: TrackerConfig = serde_json::from_str(&c.to_json_pretty()).unwrap();
            assert_eq!(back, c);
        }
    }
}
