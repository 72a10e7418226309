//! Experiment configuration: a TOML document layered over per-dataset
//! defaults, with unknown keys rejected and a provenance note for every field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{AttackSpec, ProxyConfig, StepRule};
use crate::autodiff::OptimizerConfig;
use crate::data::{
    default_margin, downsample_images, load_idx, load_idx_labels, make_half_moons, make_toy_manifold,
    place_ood_clusters, DatasetKind, LabeledDataset, ManifoldMeta, OodPlacement, OodSet, OodSource, Split,
    ToyManifoldParams,
};
use crate::error::{Error, Result};
use crate::eval::{CalibrationSpec, GridSpec, Task};
use crate::metrics::ModelKind;
use crate::models::ModelsConfig;
use crate::nn::TrainConfig;
use crate::rng::derive_seed;

/// Environment variable naming the directory that holds `mnist/` and `fashion/`.
pub const DATA_DIR_ENV: &str = "UQBENCH_DATA_DIR";

pub const DEFAULT_SEEDS: [u64; 5] = [12345, 99999, 31337, 4242, 2718];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub tasks: Vec<Task>,
    pub models: Vec<ModelKind>,
    /// Root under which `<name>/` is created.
    pub out: PathBuf,
    pub jobs: usize,
    pub dataset: DatasetConfig,
    pub attack: AttackConfig,
    pub field: FieldConfig,
    /// Hyperparameters per model kind.
    pub model: ModelsConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_moons: Option<HalfMoonsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy_manifold: Option<ToyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mnist: Option<MnistConfig>,
    pub ood: OodConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct HalfMoonsConfig {
    pub train_size: usize,
    pub test_size: usize,
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ToyConfig {
    pub generator: ToyManifoldParams,
    /// Points per cluster in the test split.
    pub test_points_per_cluster: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct MnistConfig {
    /// Holds `mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte` and
    /// `fashion/t10k-images-idx3-ubyte`.
    pub data_dir: PathBuf,
    pub train_limit: usize,
    pub test_limit: usize,
    pub downsample: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct OodConfig {
    /// Hand-placed clusters (2-D datasets).
    pub clusters: usize,
    pub points_per_cluster: usize,
    /// Minimum distance to the training data; defaults to a multiple of the
    /// bounding-box diagonal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    pub spread: f64,
    /// Fashion-MNIST images used as OoD inputs (image dataset).
    pub limit: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AttackConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub step: StepRule,
    pub proxy: ProxyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrate: Option<CalibrationSpec>,
    pub sweep: SweepConfig,
}

impl AttackConfig {
    pub fn spec(&self) -> AttackSpec {
        AttackSpec {
            epsilon: self.epsilon,
            alpha: self.alpha,
            iterations: self.iterations,
            step: self.step,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    pub repeats: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FieldConfig {
    pub resolution: usize,
    pub expand: f64,
    /// Also write grayscale PGM renders.
    pub pgm: bool,
}

impl FieldConfig {
    pub fn grid(&self) -> GridSpec {
        GridSpec {
            resolution: self.resolution,
            expand: self.expand,
        }
    }
}

fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"))
}

impl ExperimentConfig {
    pub fn defaults(kind: DatasetKind) -> Self {
        let toy_attack = AttackConfig {
            epsilon: 0.6,
            alpha: 0.01,
            iterations: 40,
            step: StepRule::Normalized,
            proxy: ProxyConfig::new(vec![20, 20], 200),
            calibrate: None,
            sweep: SweepConfig {
                epsilons: vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
                repeats: 5,
            },
        };
        let ood = OodConfig {
            clusters: 3,
            points_per_cluster: 50,
            margin: None,
            spread: 0.25,
            limit: 2000,
        };
        let (tasks, dataset, attack) = match kind {
            DatasetKind::HalfMoons => (
                vec![Task::Robustness, Task::Ood, Task::Field],
                DatasetConfig {
                    kind,
                    half_moons: Some(HalfMoonsConfig {
                        train_size: 1000,
                        test_size: 500,
                        noise: 0.1,
                    }),
                    toy_manifold: None,
                    mnist: None,
                    ood,
                },
                toy_attack,
            ),
            DatasetKind::ToyManifold => (
                vec![Task::ManifoldSweep, Task::Ood, Task::Field, Task::Restarts],
                DatasetConfig {
                    kind,
                    half_moons: None,
                    toy_manifold: Some(ToyConfig {
                        generator: ToyManifoldParams::default(),
                        test_points_per_cluster: 50,
                    }),
                    mnist: None,
                    ood,
                },
                toy_attack,
            ),
            DatasetKind::Mnist => (
                vec![Task::Robustness, Task::Ood],
                DatasetConfig {
                    kind,
                    half_moons: None,
                    toy_manifold: None,
                    mnist: Some(MnistConfig {
                        data_dir: default_data_dir(),
                        train_limit: 10_000,
                        test_limit: 2000,
                        downsample: 2,
                    }),
                    ood,
                },
                AttackConfig {
                    epsilon: 12.5,
                    alpha: 0.1,
                    iterations: 50,
                    proxy: ProxyConfig {
                        hidden: vec![128, 128],
                        train: TrainConfig::new(OptimizerConfig::adam(1e-3), 10, 64),
                    },
                    ..toy_attack
                },
            ),
        };
        Self {
            name: kind.name().to_string(),
            seeds: DEFAULT_SEEDS.to_vec(),
            tasks,
            models: ModelKind::ALL.to_vec(),
            out: PathBuf::from("runs"),
            jobs: 1,
            dataset,
            attack,
            field: FieldConfig {
                resolution: 200,
                expand: 1.5,
                pgm: true,
            },
            model: ModelsConfig::defaults(kind),
        }
    }

    /// Parses a config document; `dataset_override` replaces `dataset.kind`
    /// before defaults are chosen.
    pub fn parse(text: &str, dataset_override: Option<DatasetKind>) -> Result<Resolved> {
        let mut user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config {
            path: "<document>".into(),
            message: e.to_string(),
        })?;
        if let Some(kind) = dataset_override {
            let ds = user
                .entry("dataset")
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let Some(ds) = ds.as_table_mut() else {
                return Err(Error::Config {
                    path: "dataset".into(),
                    message: "expected a table".into(),
                });
            };
            ds.insert("kind".into(), toml::Value::String(kind.name().into()));
        }
        let kind = match user.get("dataset").and_then(|d| d.get("kind")) {
            None => DatasetKind::HalfMoons,
            Some(v) => v.as_str().and_then(|s| s.parse().ok()).ok_or_else(|| Error::Config {
                path: "dataset.kind".into(),
                message: format!("unknown dataset {v}; expected one of half-moons, toy-manifold, mnist"),
            })?,
        };
        let defaults = Self::defaults(kind);
        let mut merged = toml::Table::try_from(&defaults).map_err(|e| Error::Config {
            path: "<defaults>".into(),
            message: e.to_string(),
        })?;
        merge(&mut merged, &user);
        let merged_text = toml::to_string(&merged).map_err(|e| Error::Config {
            path: "<document>".into(),
            message: e.to_string(),
        })?;
        let de = toml::Deserializer::parse(&merged_text).map_err(|e| Error::Config {
            path: "<document>".into(),
            message: e.to_string(),
        })?;
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().message().to_string(),
        })?;
        config.validate()?;
        let provenance = provenance(&merged, &user, kind);
        Ok(Resolved { config, provenance })
    }

    pub fn load(path: &Path, dataset_override: Option<DatasetKind>) -> Result<Resolved> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, dataset_override)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: &str| {
            Err(Error::Config {
                path: path.into(),
                message: message.into(),
            })
        };
        if self.seeds.is_empty() {
            return bad("seeds", "at least one seed is required");
        }
        if self.models.is_empty() {
            return bad("models", "at least one model is required");
        }
        if self.jobs == 0 {
            return bad("jobs", "must be positive");
        }
        let ds = &self.dataset;
        let present = match ds.kind {
            DatasetKind::HalfMoons => ds.half_moons.is_some(),
            DatasetKind::ToyManifold => ds.toy_manifold.is_some(),
            DatasetKind::Mnist => ds.mnist.is_some(),
        };
        if !present {
            return bad("dataset", &format!("missing [dataset.{}] section", ds.kind.name()));
        }
        if let Err(e) = self.attack.spec().validate() {
            return bad("attack", &e.to_string());
        }
        if self.tasks.contains(&Task::ManifoldSweep) && ds.kind != DatasetKind::ToyManifold {
            return bad("tasks", "manifold-sweep needs the toy-manifold dataset");
        }
        if self.tasks.contains(&Task::Field) && ds.kind == DatasetKind::Mnist {
            return bad("tasks", "fields need 2-D inputs");
        }
        if self.tasks.contains(&Task::Restarts) && self.seeds.len() < 2 {
            return bad("seeds", "the restart study needs two seeds");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            path: "<document>".into(),
            message: e.to_string(),
        })
    }

    /// SHA-256 of the resolved document, ignoring where the run is written
    /// and how many threads it uses (neither changes any output).
    pub fn hash(&self) -> Result<String> {
        let mut identity = self.clone();
        identity.out = PathBuf::new();
        identity.jobs = 1;
        let digest = Sha256::digest(identity.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(&self.name)
    }
}

/// A parsed config and where each leaf value came from.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: ExperimentConfig,
    /// `(dotted path, note)` for every leaf in document order.
    pub provenance: Vec<(String, String)>,
}

impl Resolved {
    pub fn provenance_csv(&self) -> String {
        let mut out = String::from("field,source\n");
        for (path, note) in &self.provenance {
            out.push_str(&format!("{path},{note}\n"));
        }
        out
    }
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn leaves(table: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => leaves(t, &path, out),
            _ => out.push(path),
        }
    }
}

fn lookup<'a>(table: &'a toml::Table, path: &str) -> Option<&'a toml::Value> {
    let mut parts = path.split('.');
    let mut cur = table.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

/// Leaves taken from the published hyperparameter listing, per dataset.
fn reference_fields(kind: DatasetKind) -> &'static [&'static str] {
    match kind {
        DatasetKind::HalfMoons | DatasetKind::ToyManifold => &[
            "model.bnn.chains",
            "model.bnn.warmup",
            "model.bnn.samples",
            "model.bnn.initial-step-size",
            "model.bnn.target-accept",
            "model.bnn.max-tree-depth",
            "model.bnn.hidden",
            "model.deep-ensemble.members",
            "model.deep-ensemble.hidden",
            "model.deep-ensemble.train.epochs",
            "model.deep-ensemble.train.optimizer.kind",
            "model.deep-ensemble.train.optimizer.learning-rate",
            "model.mc-dropout.hidden",
            "model.mc-dropout.rate",
            "model.mc-dropout.train.epochs",
            "model.mc-dropout.train.batch-size",
            "model.mc-dropout.train.patience",
            "model.mc-dropout.train.optimizer.kind",
            "model.mc-dropout.train.optimizer.learning-rate",
            "model.mc-dropout.train.optimizer.clip-norm",
            "model.swag.hidden",
            "model.swag.pretrain.epochs",
            "model.swag.pretrain.optimizer.kind",
            "model.swag.pretrain.optimizer.learning-rate",
            "model.swag.explore-epochs",
            "model.swag.explore-lr",
            "model.swag.rank",
            "model.duq.hidden",
            "model.duq.train.epochs",
            "model.duq.train.batch-size",
            "model.duq.train.optimizer.kind",
            "model.duq.train.optimizer.learning-rate",
            "model.sngp.hidden",
            "model.sngp.norm-bound",
            "model.sngp.power-iterations",
            "model.sngp.dropout",
            "model.sngp.samples",
            "model.sngp.train.epochs",
            "model.sngp.train.batch-size",
            "model.sngp.train.patience",
            "model.sngp.train.optimizer.kind",
            "model.sngp.train.optimizer.learning-rate",
            "attack.epsilon",
            "attack.alpha",
            "attack.iterations",
            "seeds",
        ],
        DatasetKind::Mnist => &[
            "model.deep-ensemble.members",
            "model.deep-ensemble.train.batch-size",
            "model.deep-ensemble.train.optimizer.kind",
            "model.deep-ensemble.train.optimizer.momentum",
            "model.deep-ensemble.train.optimizer.weight-decay",
            "model.mc-dropout.rate",
            "model.mc-dropout.passes",
            "model.mc-dropout.train.batch-size",
            "model.mc-dropout.train.optimizer.kind",
            "model.mc-dropout.train.optimizer.learning-rate",
            "model.swag.pretrain.batch-size",
            "model.swag.pretrain.optimizer.kind",
            "model.swag.pretrain.optimizer.momentum",
            "model.swag.pretrain.optimizer.weight-decay",
            "model.swag.explore-epochs",
            "model.swag.explore-lr",
            "model.swag.rank",
            "model.swag.samples",
            "model.duq.train.optimizer.kind",
            "model.duq.train.optimizer.momentum",
            "model.duq.train.optimizer.weight-decay",
            "model.sngp.norm-bound",
            "model.sngp.power-iterations",
            "model.sngp.samples",
            "model.sngp.train.batch-size",
            "model.sngp.train.optimizer.kind",
            "model.sngp.train.optimizer.momentum",
            "model.sngp.train.optimizer.learning-rate",
            "attack.iterations",
            "seeds",
        ],
    }
}

fn provenance(merged: &toml::Table, user: &toml::Table, kind: DatasetKind) -> Vec<(String, String)> {
    let mut paths = Vec::new();
    leaves(merged, "", &mut paths);
    let reference = reference_fields(kind);
    paths
        .into_iter()
        .map(|p| {
            let note = if lookup(user, &p).is_some() {
                "config file"
            } else if reference.contains(&p.as_str()) {
                "reference hyperparameter"
            } else {
                "chosen default (unpublished)"
            };
            (p, note.to_string())
        })
        .collect()
}

/// Train, test and OoD data for one seed.
#[derive(Clone, Debug)]
pub struct Materialized {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub ood: OodSet,
    pub meta: Option<ManifoldMeta>,
}

impl DatasetConfig {
    pub fn materialize(&self, seed: u64) -> Result<Materialized> {
        let (s_train, s_test, s_ood) = (derive_seed(seed, 10), derive_seed(seed, 11), derive_seed(seed, 12));
        let ood_cfg = &self.ood;
        let hand_placed = |train: &LabeledDataset, placement: &OodPlacement| {
            let margin = ood_cfg.margin.unwrap_or_else(|| default_margin(train.features()));
            place_ood_clusters(
                train,
                ood_cfg.clusters,
                ood_cfg.points_per_cluster,
                margin,
                ood_cfg.spread,
                placement,
                s_ood,
            )
        };
        match self.kind {
            DatasetKind::HalfMoons => {
                let c = self.half_moons.as_ref().ok_or_else(|| Error::invalid("missing half-moons section"))?;
                let train = make_half_moons(c.train_size, c.noise, s_train, Split::Train)?;
                let test = make_half_moons(c.test_size, c.noise, s_test, Split::Test)?;
                let ood = hand_placed(&train, &OodPlacement::Radial)?;
                Ok(Materialized {
                    train,
                    test,
                    ood,
                    meta: None,
                })
            }
            DatasetKind::ToyManifold => {
                let c = self.toy_manifold.as_ref().ok_or_else(|| Error::invalid("missing toy-manifold section"))?;
                let (train, meta) = make_toy_manifold(&c.generator, s_train, Split::Train)?;
                let test_params = ToyManifoldParams {
                    points_per_cluster: c.test_points_per_cluster,
                    ..c.generator.clone()
                };
                let (test, _) = make_toy_manifold(&test_params, s_test, Split::Test)?;
                let ood = hand_placed(&train, &OodPlacement::OffManifold(meta.clone()))?;
                Ok(Materialized {
                    train,
                    test,
                    ood,
                    meta: Some(meta),
                })
            }
            DatasetKind::Mnist => {
                let c = self.mnist.as_ref().ok_or_else(|| Error::invalid("missing mnist section"))?;
                let (train, test, ood) = load_mnist(c, ood_cfg.limit)?;
                Ok(Materialized {
                    train,
                    test,
                    ood,
                    meta: None,
                })
            }
        }
    }
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path))
    }
}

fn load_split(dir: &Path, prefix: &str, limit: usize, factor: usize, split: Split) -> Result<LabeledDataset> {
    let images = load_idx(&require(dir.join(format!("{prefix}-images-idx3-ubyte")))?)?;
    let labels = load_idx_labels(&require(dir.join(format!("{prefix}-labels-idx1-ubyte")))?)?;
    let x = downsample_images(&images, factor)?;
    let n = limit.min(labels.len());
    LabeledDataset::new(x.select_rows(&(0..n).collect::<Vec<_>>()), labels[..n].to_vec(), 10, split)
}

/// MNIST train/test splits and Fashion-MNIST test images as OoD inputs.
pub fn load_mnist(c: &MnistConfig, ood_limit: usize) -> Result<(LabeledDataset, LabeledDataset, OodSet)> {
    let mnist = c.data_dir.join("mnist");
    let train = load_split(&mnist, "train", c.train_limit, c.downsample, Split::Train)?;
    let test = load_split(&mnist, "t10k", c.test_limit, c.downsample, Split::Test)?;
    let fashion = load_idx(&require(c.data_dir.join("fashion").join("t10k-images-idx3-ubyte"))?)?;
    let fx = downsample_images(&fashion, c.downsample)?;
    let n = ood_limit.min(fx.rows());
    let ood = OodSet {
        features: fx.select_rows(&(0..n).collect::<Vec<_>>()),
        source: OodSource::FashionMnist,
    };
    Ok((train, test, ood))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_resolves_to_defaults() {
        for kind in DatasetKind::ALL {
            let r = ExperimentConfig::parse("", Some(kind)).unwrap();
            assert_eq!(r.config, ExperimentConfig::defaults(kind));
        }
        let r = ExperimentConfig::parse("[dataset]\nkind = \"toy-manifold\"\n", None).unwrap();
        assert_eq!(r.config.model.deep_ensemble.members, 20);
        assert_eq!(r.config.model.deep_ensemble.train.epochs, 500);
        assert_eq!(&r.config.seeds[..2], &[12345, 99999]);
    }

    #[test]
    fn round_trip_is_exact() {
        let text = "name = \"x\"\n[attack]\nalpha = 0.02\n[model.duq]\nlength-scale = 0.3\n";
        let r = ExperimentConfig::parse(text, None).unwrap();
        assert_eq!(r.config.attack.alpha, 0.02);
        assert_eq!(r.config.model.duq.length_scale, 0.3);
        let doc = r.config.to_toml().unwrap();
        let again = ExperimentConfig::parse(&doc, None).unwrap();
        assert_eq!(again.config, r.config);
        assert_eq!(again.config.to_toml().unwrap(), doc);
        assert_eq!(again.config.hash().unwrap(), r.config.hash().unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let err = ExperimentConfig::parse("[attack]\nepsilonn = 1.0\n", None).unwrap_err();
        let Error::Config { path, message } = err else { panic!("{err}") };
        assert_eq!(path, "attack.epsilonn");
        assert!(message.contains("epsilonn"), "{message}");
        let err = ExperimentConfig::parse("[model.swag]\nrankk = 2\n", None).unwrap_err();
        assert!(err.to_string().contains("model.swag"), "{err}");
        assert!(ExperimentConfig::parse("seeds = []", None).is_err());
        assert!(ExperimentConfig::parse("[dataset]\nkind = \"cifar\"", None).is_err());
        assert!(ExperimentConfig::parse("tasks = [\"manifold-sweep\"]", None).is_err());
    }

    #[test]
    fn provenance_distinguishes_sources() {
        let r = ExperimentConfig::parse("[attack]\nalpha = 0.02\n", None).unwrap();
        let note = |p: &str| r.provenance.iter().find(|(k, _)| k == p).unwrap().1.clone();
        assert_eq!(note("attack.alpha"), "config file");
        assert_eq!(note("attack.epsilon"), "reference hyperparameter");
        assert_eq!(note("model.deep-ensemble.members"), "reference hyperparameter");
        assert_eq!(note("dataset.half-moons.noise"), "chosen default (unpublished)");
        assert!(r.provenance.len() > 50);
        assert!(r.provenance_csv().starts_with("field,source\n"));
    }

    #[test]
    fn datasets_materialize_deterministically() {
        let cfg = ExperimentConfig::defaults(DatasetKind::ToyManifold);
        let a = cfg.dataset.materialize(1).unwrap();
        let b = cfg.dataset.materialize(1).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.ood, b.ood);
        assert!(a.meta.is_some());
        let mut mnist = ExperimentConfig::defaults(DatasetKind::Mnist);
        mnist.dataset.mnist.as_mut().unwrap().data_dir = PathBuf::from("/nonexistent");
        assert!(matches!(mnist.dataset.materialize(1), Err(Error::MissingArtifact(_))));
    }
}
