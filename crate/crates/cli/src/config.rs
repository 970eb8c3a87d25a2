//! Flat `key=value` run configuration: built-in defaults, then an optional
//! file, then command-line overrides. Unknown keys are rejected at every layer.

use macforge::error::{Error, Result};
use macforge::extract::{CropMode, Pooling};
use macforge::loss::{LossConfig, LossKind};
use macforge::mining::{MiningConfig, NegativeVariant, PositiveMethod};
use macforge::pipeline::SplitSizes;
use macforge::synthscene::SceneConfig;
use macforge::train::TrainConfig;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn defaults() -> Vec<(&'static str, String)> {
    let s = SceneConfig::default();
    let t = TrainConfig::default();
    let m = MiningConfig::default();
    let l = LossConfig::default();
    let v = |x: &dyn ToString| x.to_string();
    vec![
        ("seed", v(&0)),
        ("out_dir", v(&".")),
        ("data_dir", String::new()),
        // scene
        ("clusters", v(&s.clusters)),
        ("images_per_cluster_min", v(&s.images_per_cluster.0)),
        ("images_per_cluster_max", v(&s.images_per_cluster.1)),
        ("points_per_cluster_min", v(&s.points_per_cluster.0)),
        ("points_per_cluster_max", v(&s.points_per_cluster.1)),
        ("image_size", v(&s.image_size)),
        ("camera_orbit_radius_min", v(&s.camera_orbit_radius.0)),
        ("camera_orbit_radius_max", v(&s.camera_orbit_radius.1)),
        ("zoom_range_min", v(&s.zoom_range.0)),
        ("zoom_range_max", v(&s.zoom_range.1)),
        ("occlusion_rate", v(&s.occlusion_rate)),
        ("val_clusters", v(&"auto")),
        ("test_clusters", v(&"auto")),
        // training
        ("base_lr", v(&t.base_lr)),
        ("lr_divisor", v(&t.lr_divisor)),
        ("lr_period", v(&t.lr_period)),
        ("momentum", v(&t.momentum)),
        ("weight_decay", v(&t.weight_decay)),
        ("batch_tuples", v(&t.batch_tuples)),
        ("max_epochs", v(&t.max_epochs)),
        ("remine_per_epoch", v(&t.remine_per_epoch)),
        ("max_image_side", v(&t.max_image_side)),
        ("freeze_layers", v(&t.freeze_layers)),
        ("loss", v(&LossKind::Contrastive)),
        ("tau", v(&l.tau)),
        ("triplet_margin", v(&l.triplet_margin)),
        // mining
        ("pool_size", v(&m.pool_size)),
        ("inlier_overlap", v(&m.inlier_overlap)),
        ("scale_threshold", v(&m.scale_threshold)),
        ("negatives", v(&m.negatives)),
        ("candidate_negatives_per_cluster", v(&m.candidate_negatives_per_cluster)),
        ("positive", v(&PositiveMethod::M3)),
        ("negative_variant", v(&NegativeVariant::N2)),
        // extraction and evaluation
        ("pooling", v(&"mac")),
        ("rmac_scales", v(&3)),
        ("role", v(&"test")),
        ("mode", v(&"full")),
        // artifact paths; empty means the default location under data_dir
        ("checkpoint", String::new()),
        ("projection", String::new()),
        ("projection_dim", v(&0)),
        ("db", String::new()),
        ("ground_truth", String::new()),
        ("tuples", String::new()),
        ("val_tuples", String::new()),
    ]
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: defaults().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown config key {key:?}"))),
        }
    }

    /// `key=value` assignment as given to `--set`.
    pub fn assign(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {kv:?}")))?;
        self.set(k, v)
    }

    /// One `key = value` per line; `#` starts a comment.
    pub fn merge_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.assign(line)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", origin.display(), n + 1)))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.merge_text(&text, path)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| Error::Config(format!("cannot parse {key}={raw:?}")))
    }

    /// Resolved config, one sorted `key=value` per line.
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        Sha256::digest(self.render().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out_dir"))
    }

    pub fn data_dir(&self) -> PathBuf {
        match self.raw("data_dir") {
            "" => self.out_dir(),
            d => PathBuf::from(d),
        }
    }

    /// Path for `key`, or `default_name` under the data directory when unset.
    pub fn input_path(&self, key: &str, default_name: &str) -> PathBuf {
        match self.raw(key) {
            "" => self.data_dir().join(default_name),
            p => PathBuf::from(p),
        }
    }

    pub fn optional_path(&self, key: &str) -> Option<PathBuf> {
        match self.raw(key) {
            "" => None,
            p => Some(PathBuf::from(p)),
        }
    }

    pub fn scene(&self) -> Result<SceneConfig> {
        let cfg = SceneConfig {
            clusters: self.get("clusters")?,
            images_per_cluster: (self.get("images_per_cluster_min")?, self.get("images_per_cluster_max")?),
            points_per_cluster: (self.get("points_per_cluster_min")?, self.get("points_per_cluster_max")?),
            image_size: self.get("image_size")?,
            camera_orbit_radius: (self.get("camera_orbit_radius_min")?, self.get("camera_orbit_radius_max")?),
            zoom_range: (self.get("zoom_range_min")?, self.get("zoom_range_max")?),
            occlusion_rate: self.get("occlusion_rate")?,
            seed: self.seed()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn split_sizes(&self, clusters: usize) -> Result<SplitSizes> {
        let auto = SplitSizes::for_clusters(clusters);
        let pick = |key: &str, fallback: usize| -> Result<usize> {
            match self.raw(key) {
                "auto" => Ok(fallback),
                _ => self.get(key),
            }
        };
        Ok(SplitSizes {
            val: pick("val_clusters", auto.val)?,
            test: pick("test_clusters", auto.test)?,
        })
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            base_lr: self.get("base_lr")?,
            lr_divisor: self.get("lr_divisor")?,
            lr_period: self.get("lr_period")?,
            momentum: self.get("momentum")?,
            weight_decay: self.get("weight_decay")?,
            batch_tuples: self.get("batch_tuples")?,
            max_epochs: self.get("max_epochs")?,
            negatives_per_tuple: self.get("negatives")?,
            remine_per_epoch: self.get("remine_per_epoch")?,
            max_image_side: self.get("max_image_side")?,
            freeze_layers: self.get("freeze_layers")?,
            seed: self.seed()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn mining(&self) -> Result<MiningConfig> {
        let cfg = MiningConfig {
            pool_size: self.get("pool_size")?,
            inlier_overlap: self.get("inlier_overlap")?,
            scale_threshold: self.get("scale_threshold")?,
            negatives: self.get("negatives")?,
            candidate_negatives_per_cluster: self.get("candidate_negatives_per_cluster")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn loss(&self) -> Result<(LossKind, LossConfig)> {
        let cfg = LossConfig {
            tau: self.get("tau")?,
            triplet_margin: self.get("triplet_margin")?,
        };
        cfg.validate()?;
        Ok((self.raw("loss").parse()?, cfg))
    }

    pub fn positive(&self) -> Result<PositiveMethod> {
        self.raw("positive").parse()
    }

    pub fn negative_variant(&self) -> Result<NegativeVariant> {
        self.raw("negative_variant").parse()
    }

    pub fn pooling(&self) -> Result<Pooling> {
        match self.raw("pooling") {
            "mac" => Ok(Pooling::Mac),
            "rmac" => {
                let scales: usize = self.get("rmac_scales")?;
                if scales == 0 {
                    return Err(Error::Config("rmac_scales must be at least 1".into()));
                }
                Ok(Pooling::Rmac { scales })
            }
            other => Err(Error::Config(format!("unknown pooling {other:?}"))),
        }
    }

    /// Parses and validates every typed view.
    pub fn validate(&self) -> Result<()> {
        let scene = self.scene()?;
        self.split_sizes(scene.clusters)?;
        self.train()?;
        self.mining()?;
        self.loss()?;
        self.positive()?;
        self.negative_variant()?;
        self.pooling()?;
        self.mode()?;
        self.get::<usize>("projection_dim")?;
        if !["train", "val", "test", "all"].contains(&self.raw("role")) {
            return Err(Error::Config(format!("unknown role {:?}", self.raw("role"))));
        }
        Ok(())
    }

    pub fn mode(&self) -> Result<CropMode> {
        self.raw("mode").parse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_unknown_keys() {
        let mut c = RunConfig::default();
        assert_eq!(c.raw("clusters"), "20");
        c.merge_text("# comment\nclusters = 7\n\nseed=3 # trailing\n", Path::new("f")).unwrap();
        c.assign("clusters=9").unwrap();
        assert_eq!(c.get::<usize>("clusters").unwrap(), 9);
        assert_eq!(c.seed().unwrap(), 3);
        assert!(matches!(c.assign("nope=1"), Err(Error::Config(_))));
        assert!(c.assign("clusters").is_err());
        assert!(c.merge_text("bogus = 1", Path::new("f")).is_err());
    }

    #[test]
    fn typed_views_follow_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.scene().unwrap(), SceneConfig::default());
        assert_eq!(c.train().unwrap(), TrainConfig::default());
        assert_eq!(c.mining().unwrap(), MiningConfig::default());
        assert_eq!(c.loss().unwrap(), (LossKind::Contrastive, LossConfig::default()));
        assert_eq!(c.split_sizes(20).unwrap(), SplitSizes { val: 2, test: 8 });
        assert_eq!(c.pooling().unwrap(), Pooling::Mac);
        assert_eq!(c.mode().unwrap(), CropMode::Full);
        c.validate().unwrap();
    }

    #[test]
    fn validation_failures_are_config_errors() {
        let mut c = RunConfig::default();
        c.assign("clusters=0").unwrap();
        assert!(matches!(c.scene(), Err(Error::Config(_))));
        let mut c = RunConfig::default();
        c.assign("base_lr=abc").unwrap();
        assert!(matches!(c.train(), Err(Error::Config(_))));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.assign("seed=1").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
