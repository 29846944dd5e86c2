//! JSON run configuration with `SGM_<SECTION>_<KEY>` environment overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sgm_core::graph::WeightScheme;
use sgm_core::isr::IsrOptions;
use sgm_core::net::{EncoderSpec, LrSchedule, OptimizerKind};
use sgm_core::pde::{LossWeights, ProblemKind, TrainOptions};
use sgm_core::pointcloud::{DomainSpec, SamplingLaw};
use sgm_core::resistance::{KrylovOptions, ResistanceMethod};
use sgm_core::sampler::{ClusterSettings, SamplerConfig, SamplerMode};

use crate::CliError;

pub const SECTIONS: [&str; 10] =
    ["run", "cloud", "graph", "resistance", "lrd", "isr", "sampler", "network", "optimizer", "train"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub problem: ProblemKind,
    pub seeds: Vec<u64>,
    pub steps: u64,
    pub eval_every: u64,
    pub eval_resolution: usize,
    pub output_dir: PathBuf,
    /// Sampler modes compared by `bench`.
    pub methods: Vec<SamplerMode>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Poisson2d,
            seeds: vec![0],
            steps: 2000,
            eval_every: 100,
            eval_resolution: 101,
            output_dir: PathBuf::from("sgm-out"),
            methods: vec![SamplerMode::Uniform, SamplerMode::Sgm],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloudSection {
    pub n_interior: usize,
    pub n_boundary: usize,
    pub law: SamplingLaw,
    /// Overrides the problem's default domain.
    pub domain: Option<DomainSpec>,
    /// Load the cloud from this CSV instead of generating it.
    pub file: Option<PathBuf>,
}

impl Default for CloudSection {
    fn default() -> Self {
        Self { n_interior: 5000, n_boundary: 1000, law: SamplingLaw::Uniform, domain: None, file: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub k: usize,
    pub weight_scheme: WeightScheme,
    pub output_scale: f64,
    /// Wait for background rebuilds at the next refresh (reproducible) or
    /// only swap in finished ones.
    pub join_rebuilds: bool,
}

impl Default for GraphSection {
    fn default() -> Self {
        Self { k: 10, weight_scheme: WeightScheme::InverseDistance, output_scale: 1.0, join_rebuilds: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResistanceSection {
    pub method: ResistanceMethod,
    pub n_vectors: usize,
    pub smoothing_steps: usize,
}

impl Default for ResistanceSection {
    fn default() -> Self {
        let k = KrylovOptions::default();
        Self { method: ResistanceMethod::Krylov, n_vectors: k.n_vectors, smoothing_steps: k.smoothing_steps }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrdSection {
    pub levels: usize,
    /// `null` means `1 / average degree`.
    pub diam_budget: Option<f64>,
}

impl Default for LrdSection {
    fn default() -> Self {
        Self { levels: 10, diam_budget: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsrSection {
    pub r: usize,
    pub dense_limit: usize,
    pub lanczos_steps: usize,
}

impl Default for IsrSection {
    fn default() -> Self {
        let o = IsrOptions::default();
        Self { r: o.r, dense_limit: o.dense_limit, lanczos_steps: o.lanczos_steps }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub mode: SamplerMode,
    pub batch_size: usize,
    pub probe_fraction: f64,
    pub tau_e: u64,
    pub tau_g: u64,
    pub p_min: f64,
    pub p_max: f64,
    pub epoch_target: Option<usize>,
    pub mis_seeds: usize,
    /// `null` uses the run seed.
    pub seed: Option<u64>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let d = SamplerConfig::default();
        Self {
            mode: d.mode,
            batch_size: d.batch_size,
            probe_fraction: d.probe_fraction,
            tau_e: d.tau_e,
            tau_g: d.tau_g,
            p_min: d.p_min,
            p_max: d.p_max,
            epoch_target: d.epoch_target,
            mis_seeds: d.mis_seeds,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub width: usize,
    /// Hidden layers.
    pub depth: usize,
    pub encoder: EncoderSpec,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self { width: 32, depth: 3, encoder: EncoderSpec::Identity }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub gamma: f64,
    pub every: u64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let s = LrSchedule::default();
        Self { kind: OptimizerKind::Adam, lr: s.lr, gamma: s.gamma, every: s.every }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub boundary_batch: usize,
    pub w_interior: f64,
    pub w_boundary: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self { boundary_batch: TrainOptions::default().boundary_batch, w_interior: w.interior, w_boundary: w.boundary }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub cloud: CloudSection,
    pub graph: GraphSection,
    pub resistance: ResistanceSection,
    pub lrd: LrdSection,
    pub isr: IsrSection,
    pub sampler: SamplerSection,
    pub network: NetworkSection,
    pub optimizer: OptimizerSection,
    pub train: TrainSection,
}

impl RunConfig {
    /// Reads `path`, applies `SGM_*` overrides from the process environment
    /// and validates.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(vec![format!("cannot read config {}: {e}", path.display())]))?;
        Self::from_json_with_env(&text, std::env::vars())
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        Self::from_json_with_env(text, std::iter::empty())
    }

    /// Parses `text`, applies overrides from `env` and validates, reporting
    /// every problem found.
    pub fn from_json_with_env(text: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<Self, CliError> {
        let mut root: Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(vec![format!("config is not valid JSON: {e}")]))?;
        let mut problems = Vec::new();
        let Some(obj) = root.as_object_mut() else {
            return Err(CliError::Config(vec!["config must be a JSON object".into()]));
        };
        for key in obj.keys() {
            if !SECTIONS.contains(&key.as_str()) {
                problems.push(format!("unknown section `{key}`; valid sections: {}", SECTIONS.join(", ")));
            }
        }
        apply_env(obj, env, &mut problems);
        let cfg = RunConfig {
            run: section(obj, "run", &mut problems),
            cloud: section(obj, "cloud", &mut problems),
            graph: section(obj, "graph", &mut problems),
            resistance: section(obj, "resistance", &mut problems),
            lrd: section(obj, "lrd", &mut problems),
            isr: section(obj, "isr", &mut problems),
            sampler: section(obj, "sampler", &mut problems),
            network: section(obj, "network", &mut problems),
            optimizer: section(obj, "optimizer", &mut problems),
            train: section(obj, "train", &mut problems),
        };
        problems.extend(cfg.problems());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(CliError::Config(problems))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Every semantic constraint violated by this configuration.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let r = &self.run;
        if r.seeds.is_empty() {
            out.push("run.seeds must list at least one seed".into());
        }
        if r.eval_every == 0 {
            out.push("run.eval_every must be at least 1".into());
        }
        if r.eval_resolution < 16 {
            out.push(format!("run.eval_resolution must be at least 16, got {}", r.eval_resolution));
        }
        if self.cloud.n_interior == 0 || self.cloud.n_boundary == 0 {
            out.push("cloud.n_interior and cloud.n_boundary must be at least 1".into());
        }
        if let Some(f) = &self.cloud.file {
            if !f.is_file() {
                out.push(format!("cloud.file {} does not exist", f.display()));
            }
        }
        let domain = self.domain();
        if let Err(e) = sgm_core::pde::Problem::new(r.problem, domain, self.loss_weights()) {
            out.push(e.to_string());
        }
        if self.graph.k == 0 {
            out.push("graph.k must be at least 1".into());
        }
        if !(self.graph.output_scale.is_finite() && self.graph.output_scale >= 0.0) {
            out.push("graph.output_scale must be finite and non-negative".into());
        }
        if self.resistance.n_vectors == 0 {
            out.push("resistance.n_vectors must be at least 1".into());
        }
        if self.lrd.levels == 0 {
            out.push("lrd.levels must be at least 1".into());
        }
        if let Some(b) = self.lrd.diam_budget {
            if !(b > 0.0 && b.is_finite()) {
                out.push(format!("lrd.diam_budget must be positive, got {b}"));
            }
        }
        if self.isr.r == 0 {
            out.push("isr.r must be at least 1".into());
        }
        out.extend(self.sampler_config(0).problems(self.cloud.n_interior));
        if self.network.width == 0 || self.network.depth == 0 {
            out.push("network.width and network.depth must be at least 1".into());
        }
        if let EncoderSpec::Fourier { features, scale } = self.network.encoder {
            if features == 0 || !(scale > 0.0) {
                out.push("network.encoder fourier needs features >= 1 and scale > 0".into());
            }
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            out.push(format!("optimizer.lr must be positive, got {}", o.lr));
        }
        if !(o.gamma > 0.0 && o.gamma <= 1.0) {
            out.push(format!("optimizer.gamma must lie in (0, 1], got {}", o.gamma));
        }
        if o.every == 0 {
            out.push("optimizer.every must be at least 1".into());
        }
        let t = &self.train;
        if t.boundary_batch == 0 {
            out.push("train.boundary_batch must be at least 1".into());
        }
        if !(t.w_interior >= 0.0 && t.w_boundary >= 0.0) {
            out.push("train loss weights must be non-negative".into());
        }
        out
    }

    pub fn domain(&self) -> DomainSpec {
        self.cloud.domain.unwrap_or_else(|| self.run.problem.default_domain())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { interior: self.train.w_interior, boundary: self.train.w_boundary }
    }

    pub fn sampler_config(&self, run_seed: u64) -> SamplerConfig {
        let s = &self.sampler;
        SamplerConfig {
            mode: s.mode,
            batch_size: s.batch_size,
            probe_fraction: s.probe_fraction,
            tau_e: s.tau_e,
            tau_g: s.tau_g,
            p_min: s.p_min,
            p_max: s.p_max,
            epoch_target: s.epoch_target,
            mis_seeds: s.mis_seeds,
            seed: s.seed.unwrap_or(run_seed),
        }
    }

    pub fn krylov(&self, seed: u64) -> KrylovOptions {
        KrylovOptions { n_vectors: self.resistance.n_vectors, smoothing_steps: self.resistance.smoothing_steps, seed }
    }

    pub fn isr_options(&self, seed: u64) -> IsrOptions {
        IsrOptions { r: self.isr.r, dense_limit: self.isr.dense_limit, lanczos_steps: self.isr.lanczos_steps, seed }
    }

    pub fn cluster_settings(&self, seed: u64) -> ClusterSettings {
        ClusterSettings {
            k: self.graph.k,
            weight_scheme: self.graph.weight_scheme,
            krylov: self.krylov(seed),
            levels: self.lrd.levels,
            diam_budget: self.lrd.diam_budget,
            output_scale: self.graph.output_scale,
            isr: self.isr_options(seed),
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule { lr: self.optimizer.lr, gamma: self.optimizer.gamma, every: self.optimizer.every }
    }

    pub fn train_options(&self, seed: u64) -> TrainOptions {
        TrainOptions {
            steps: self.run.steps,
            eval_every: self.run.eval_every,
            eval_resolution: self.run.eval_resolution,
            boundary_batch: self.train.boundary_batch,
            seed,
        }
    }
}

fn section<T: DeserializeOwned + Default>(obj: &Map<String, Value>, name: &str, problems: &mut Vec<String>) -> T {
    let Some(v) = obj.get(name) else {
        return T::default();
    };
    match serde_json::from_value(v.clone()) {
        Ok(t) => t,
        Err(e) => {
            problems.push(format!("{name}: {e}"));
            T::default()
        }
    }
}

/// Keys a section accepts, read off its serialised default.
fn section_keys(name: &str) -> Vec<String> {
    let v = serde_json::to_value(RunConfig::default()).expect("defaults serialise");
    v[name].as_object().map(|o| o.keys().cloned().collect()).unwrap_or_default()
}

fn apply_env(obj: &mut Map<String, Value>, env: impl IntoIterator<Item = (String, String)>, problems: &mut Vec<String>) {
    let overrides: BTreeMap<String, String> = env.into_iter().filter(|(k, _)| k.starts_with("SGM_")).collect();
    for (var, raw) in overrides {
        if var == "SGM_LOG" {
            continue;
        }
        let rest = &var["SGM_".len()..];
        let Some((sec, key)) = rest.split_once('_') else {
            problems.push(format!("{var}: expected SGM_<SECTION>_<KEY>"));
            continue;
        };
        let (sec, key) = (sec.to_ascii_lowercase(), key.to_ascii_lowercase());
        if !SECTIONS.contains(&sec.as_str()) {
            problems.push(format!("{var}: unknown section `{sec}`; valid sections: {}", SECTIONS.join(", ")));
            continue;
        }
        let keys = section_keys(&sec);
        if !keys.contains(&key) {
            problems.push(format!("{var}: unknown key `{key}` in section `{sec}`; valid keys: {}", keys.join(", ")));
            continue;
        }
        let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        let entry = obj.entry(sec.clone()).or_insert_with(|| Value::Object(Map::new()));
        match entry.as_object_mut() {
            Some(m) => {
                m.insert(key, value);
            }
            None => problems.push(format!("{var}: section `{sec}` is not an object")),
        }
    }
}
