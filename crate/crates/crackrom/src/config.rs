//! Study configuration: TOML schema, validation and conversion to core types.

use std::path::{Path, PathBuf};

use crackrom_core::clustering::FcmConfig;
use crackrom_core::fom::{CrackTemplate, MaterialModel, ParamExpr, ParameterSpace, Problem};
use crackrom_core::regression::{Backend, RbfConfig, ShapeRule, TrainConfig};
use crackrom_core::rom::OfflineConfig;
use crackrom_core::snapshot::{sample_parameters, SampleSet, SamplingScheme};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

/// Invalid configuration; the message names the offending field.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub schema_version: u32,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "one")]
    pub workers: usize,
    pub problem: ProblemConfig,
    pub parameters: Vec<ParameterConfig>,
    pub discretization: DiscretizationConfig,
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub pod: PodConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub regressor: RegressorConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub width: f64,
    pub height: f64,
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub traction: f64,
    pub crack: CrackConfig,
}

/// A crack attribute: a number, or an affine function of a named parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValueOrParam {
    Value(f64),
    Param {
        param: String,
        #[serde(default = "unit")]
        scale: f64,
        #[serde(default)]
        offset: f64,
    },
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CrackConfig {
    None,
    Edge {
        y: ValueOrParam,
        length: ValueOrParam,
    },
    Center {
        x: ValueOrParam,
        y: ValueOrParam,
        half_length: ValueOrParam,
        angle: ValueOrParam,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterConfig {
    pub name: String,
    pub bounds: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    pub degree: usize,
    pub elements: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default = "default_scheme")]
    pub scheme: SamplingScheme,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_test_seed")]
    pub test_seed: u64,
}

fn default_scheme() -> SamplingScheme {
    SamplingScheme::LatinHypercube
}

fn default_test_seed() -> u64 {
    1001
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringConfig {
    pub clusters: usize,
    pub exponent: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Cluster on this many leading global POD coefficients; 0 uses full vectors.
    pub pre_project: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        let f = FcmConfig::default();
        Self {
            clusters: f.clusters,
            exponent: f.exponent,
            tol: f.tol,
            max_iter: f.max_iter,
            seed: f.seed,
            pre_project: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PodConfig {
    pub eps: f64,
}

impl Default for PodConfig {
    fn default() -> Self {
        Self { eps: 1e-5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub k: usize,
    pub minkowski_p: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            k: 1,
            minkowski_p: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressorConfig {
    pub backend: Backend,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub lm_mu0: f64,
    pub lm_increase: f64,
    pub lm_decrease: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub l2: f64,
    pub restarts: usize,
    pub seed: u64,
    pub rbf_shape_factor: f64,
    pub rbf_affine_tail: bool,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let r = RbfConfig::default();
        let factor = match r.shape {
            ShapeRule::MedianDistance { factor } => factor,
            ShapeRule::Fixed(_) => 1.0,
        };
        Self {
            backend: Backend::Rbf,
            hidden_layers: t.hidden_layers,
            hidden_units: t.hidden_units,
            lm_mu0: t.lm_mu0,
            lm_increase: t.lm_increase,
            lm_decrease: t.lm_decrease,
            max_epochs: t.max_epochs,
            patience: t.patience,
            validation_fraction: t.validation_fraction,
            l2: t.l2,
            restarts: t.restarts,
            seed: t.seed,
            rbf_shape_factor: factor,
            rbf_affine_tail: r.affine_tail,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub cluster_counts: Vec<usize>,
    /// Basis-size caps for the error curves; empty means 1..=max basis size.
    pub caps: Vec<usize>,
    pub speedup_reps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            cluster_counts: vec![1, 4, 8, 16],
            caps: Vec::new(),
            speedup_reps: 9,
        }
    }
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: StudyConfig =
            toml::from_str(text).map_err(|e| ConfigError(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            anyhow::Error::new(e).context(format!("cannot read config {}", path.display()))
        })?;
        Ok(Self::from_toml(&text)
            .map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `--seed`: sampling, clustering and training seeds take `seed`, the test set `seed + 1`.
    pub fn override_seed(&mut self, seed: u64) {
        self.sampling.seed = seed;
        self.sampling.test_seed = seed.wrapping_add(1);
        self.clustering.seed = seed;
        self.regressor.seed = seed;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version = {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        let p = &self.problem;
        for (name, v) in [("problem.width", p.width), ("problem.height", p.height)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(p.youngs_modulus > 0.0 && p.youngs_modulus.is_finite()) {
            return bad(format!(
                "problem.youngs_modulus must be positive, got {}",
                p.youngs_modulus
            ));
        }
        if !(0.0..0.5).contains(&p.poisson_ratio) {
            return bad(format!(
                "problem.poisson_ratio must lie in [0, 0.5), got {}",
                p.poisson_ratio
            ));
        }
        if !p.traction.is_finite() {
            return bad("problem.traction must be finite");
        }
        if self.parameters.is_empty() {
            return bad("parameters: at least one parameter is required");
        }
        for (i, q) in self.parameters.iter().enumerate() {
            if q.name.is_empty() || self.parameters[..i].iter().any(|o| o.name == q.name) {
                return bad(format!(
                    "parameters[{i}].name `{}` is empty or repeated",
                    q.name
                ));
            }
            if !(q.bounds[0].is_finite() && q.bounds[1].is_finite() && q.bounds[1] > q.bounds[0]) {
                return bad(format!(
                    "parameters[{i}].bounds {:?} must be finite and increasing",
                    q.bounds
                ));
            }
        }
        for (field, attr) in self.crack_attributes() {
            if let ValueOrParam::Param {
                param,
                scale,
                offset,
            } = attr
            {
                if self.parameter_index(param).is_none() {
                    return bad(format!(
                        "problem.crack.{field} refers to unknown parameter `{param}`"
                    ));
                }
                if !(scale.is_finite() && offset.is_finite()) {
                    return bad(format!(
                        "problem.crack.{field} scale and offset must be finite"
                    ));
                }
            }
        }
        self.check_crack_fits()?;
        let d = &self.discretization;
        if !(1..=5).contains(&d.degree) {
            return bad(format!(
                "discretization.degree must lie in [1, 5], got {}",
                d.degree
            ));
        }
        if d.elements.contains(&0) {
            return bad("discretization.elements must be positive");
        }
        let s = &self.sampling;
        if s.n_train < 2 {
            return bad(format!(
                "sampling.n_train must be at least 2, got {}",
                s.n_train
            ));
        }
        if s.n_test == 0 {
            return bad("sampling.n_test must be at least 1");
        }
        let c = &self.clustering;
        if c.clusters == 0 || c.clusters > s.n_train {
            return bad(format!(
                "clustering.clusters must lie in [1, sampling.n_train = {}], got {}",
                s.n_train, c.clusters
            ));
        }
        if !(c.exponent > 1.0) {
            return bad(format!(
                "clustering.exponent must exceed 1, got {}",
                c.exponent
            ));
        }
        if !(c.tol > 0.0) || c.max_iter == 0 {
            return bad("clustering.tol and clustering.max_iter must be positive");
        }
        if !(self.pod.eps > 0.0 && self.pod.eps < 1.0) {
            return bad(format!("pod.eps must lie in (0, 1), got {}", self.pod.eps));
        }
        if self.classifier.k == 0 || self.classifier.k > s.n_train {
            return bad(format!(
                "classifier.k must lie in [1, {}], got {}",
                s.n_train, self.classifier.k
            ));
        }
        if !(self.classifier.minkowski_p >= 1.0) {
            return bad(format!(
                "classifier.minkowski_p must be at least 1, got {}",
                self.classifier.minkowski_p
            ));
        }
        let r = &self.regressor;
        if !(1..=5).contains(&r.hidden_layers) || !(1..=15).contains(&r.hidden_units) {
            return bad(format!(
                "regressor.hidden_layers must lie in [1, 5] and regressor.hidden_units in [1, 15], got {} and {}",
                r.hidden_layers, r.hidden_units
            ));
        }
        if !(r.rbf_shape_factor > 0.0) {
            return bad(format!(
                "regressor.rbf_shape_factor must be positive, got {}",
                r.rbf_shape_factor
            ));
        }
        self.train_config()
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        let b = &self.bench;
        if b.cluster_counts.iter().any(|&n| n == 0 || n > s.n_train) {
            return bad(format!(
                "bench.cluster_counts must lie in [1, {}]",
                s.n_train
            ));
        }
        if b.caps.contains(&0) {
            return bad("bench.caps must be positive");
        }
        if b.speedup_reps < 5 {
            return bad(format!(
                "bench.speedup_reps must be at least 5, got {}",
                b.speedup_reps
            ));
        }
        Ok(())
    }

    fn crack_attributes(&self) -> Vec<(&'static str, &ValueOrParam)> {
        match &self.problem.crack {
            CrackConfig::None => Vec::new(),
            CrackConfig::Edge { y, length } => vec![("y", y), ("length", length)],
            CrackConfig::Center {
                x,
                y,
                half_length,
                angle,
            } => vec![
                ("x", x),
                ("y", y),
                ("half_length", half_length),
                ("angle", angle),
            ],
        }
    }

    /// Range of a crack attribute over the parameter box.
    fn attribute_range(&self, attr: &ValueOrParam) -> [f64; 2] {
        match attr {
            ValueOrParam::Value(v) => [*v, *v],
            ValueOrParam::Param {
                param,
                scale,
                offset,
            } => {
                let b = self.parameters[self.parameter_index(param).expect("validated")].bounds;
                let (a, c) = (scale * b[0] + offset, scale * b[1] + offset);
                [a.min(c), a.max(c)]
            }
        }
    }

    fn check_crack_fits(&self) -> Result<(), ConfigError> {
        let (w, h) = (self.problem.width, self.problem.height);
        match &self.problem.crack {
            CrackConfig::None => Ok(()),
            CrackConfig::Edge { y, length } => {
                let (yr, lr) = (self.attribute_range(y), self.attribute_range(length));
                if !(yr[0] > 0.0 && yr[1] < h) {
                    return bad(format!(
                        "problem.crack.y range {yr:?} must lie inside (0, {h})"
                    ));
                }
                if !(lr[0] > 0.0 && lr[1] < w) {
                    return bad(format!(
                        "problem.crack.length range {lr:?} must lie inside (0, {w})"
                    ));
                }
                Ok(())
            }
            CrackConfig::Center {
                x, y, half_length, ..
            } => {
                let (xr, yr, hr) = (
                    self.attribute_range(x),
                    self.attribute_range(y),
                    self.attribute_range(half_length),
                );
                if !(hr[0] > 0.0) {
                    return bad("problem.crack.half_length must be positive");
                }
                if !(xr[0] - hr[1] > 0.0
                    && xr[1] + hr[1] < w
                    && yr[0] - hr[1] > 0.0
                    && yr[1] + hr[1] < h)
                {
                    return bad(
                        "problem.crack: center crack must stay inside the plate for all parameters",
                    );
                }
                Ok(())
            }
        }
    }

    fn parameter_index(&self, name: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p.name == name)
    }

    fn expr(&self, v: &ValueOrParam) -> ParamExpr {
        match v {
            ValueOrParam::Value(x) => ParamExpr::Value(*x),
            ValueOrParam::Param {
                param,
                scale,
                offset,
            } => ParamExpr::Param {
                index: self.parameter_index(param).expect("validated"),
                scale: *scale,
                offset: *offset,
            },
        }
    }

    pub fn bounds(&self) -> Vec<[f64; 2]> {
        self.parameters.iter().map(|p| p.bounds).collect()
    }

    pub fn problem(&self) -> crackrom_core::Result<Problem> {
        let p = &self.problem;
        let crack = match &p.crack {
            CrackConfig::None => None,
            CrackConfig::Edge { y, length } => Some(CrackTemplate::Edge {
                y: self.expr(y),
                length: self.expr(length),
            }),
            CrackConfig::Center {
                x,
                y,
                half_length,
                angle,
            } => Some(CrackTemplate::Center {
                x: self.expr(x),
                y: self.expr(y),
                half_length: self.expr(half_length),
                angle: self.expr(angle),
            }),
        };
        Problem::plate_in_tension(
            self.discretization.degree,
            self.discretization.elements,
            [p.width, p.height],
            MaterialModel::new(p.youngs_modulus, p.poisson_ratio)?,
            p.traction,
            crack,
            ParameterSpace::new(
                self.parameters.iter().map(|q| q.name.clone()).collect(),
                self.bounds(),
            )?,
        )
    }

    pub fn train_config(&self) -> TrainConfig {
        let r = &self.regressor;
        TrainConfig {
            hidden_layers: r.hidden_layers,
            hidden_units: r.hidden_units,
            lm_mu0: r.lm_mu0,
            lm_increase: r.lm_increase,
            lm_decrease: r.lm_decrease,
            max_epochs: r.max_epochs,
            patience: r.patience,
            validation_fraction: r.validation_fraction,
            l2: r.l2,
            restarts: r.restarts,
            seed: r.seed,
            ..TrainConfig::default()
        }
    }

    pub fn offline_config(&self) -> OfflineConfig {
        let c = &self.clustering;
        OfflineConfig {
            clustering: FcmConfig {
                clusters: c.clusters,
                exponent: c.exponent,
                tol: c.tol,
                max_iter: c.max_iter,
                seed: c.seed,
            },
            pre_project: (c.pre_project > 0).then_some(c.pre_project),
            eps_pod: self.pod.eps,
            backend: self.regressor.backend,
            mlp: self.train_config(),
            rbf: RbfConfig {
                shape: ShapeRule::MedianDistance {
                    factor: self.regressor.rbf_shape_factor,
                },
                ridge: 0.0,
                affine_tail: self.regressor.rbf_affine_tail,
            },
            knn_k: self.classifier.k,
            knn_p: self.classifier.minkowski_p,
            workers: self.workers,
        }
    }

    pub fn train_samples(&self) -> crackrom_core::Result<SampleSet> {
        sample_parameters(
            &self.bounds(),
            self.sampling.n_train,
            self.sampling.scheme,
            self.sampling.seed,
        )
    }

    /// Test parameters are drawn uniformly at random with their own seed.
    pub fn test_samples(&self) -> crackrom_core::Result<SampleSet> {
        sample_parameters(
            &self.bounds(),
            self.sampling.n_test,
            SamplingScheme::UniformRandom,
            self.sampling.test_seed,
        )
    }

    /// Fingerprint of everything that determines the training snapshots.
    pub fn snapshot_digest(&self) -> [u8; 32] {
        let key = (
            &self.problem,
            &self.parameters,
            &self.discretization,
            self.sampling.n_train,
            self.sampling.scheme,
            self.sampling.seed,
        );
        Sha256::digest(format!("{key:?}").as_bytes()).into()
    }

    /// Parses `v1,v2[,v3]` and checks it against the parameter bounds.
    pub fn parse_mu(&self, text: &str) -> Result<Vec<f64>, ConfigError> {
        let mu: Vec<f64> = text
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| ConfigError(format!("--mu `{text}`: {e}")))?;
        if mu.len() != self.parameters.len() {
            return bad(format!(
                "--mu has {} components, the study has {} parameters",
                mu.len(),
                self.parameters.len()
            ));
        }
        for (v, p) in mu.iter().zip(&self.parameters) {
            if !(p.bounds[0]..=p.bounds[1]).contains(v) {
                return bad(format!(
                    "--mu: {} = {v} outside [{}, {}]",
                    p.name, p.bounds[0], p.bounds[1]
                ));
            }
        }
        Ok(mu)
    }
}
