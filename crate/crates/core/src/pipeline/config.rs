//! Training configuration and its flat `key = value` text form.

use serde::{Deserialize, Serialize};

use crate::cvt::CvtConfig;
use crate::extract::ChamferConfig;
use crate::field::RegWeights;
use crate::geom::Aabb;
use crate::render::{AlphaMode, BetaSchedule, NetworkConfig, RenderConfig};
use crate::traverse::{MarchConfig, PruneConfig};
use crate::{Error, Result};

/// How sites are added between levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Refinement {
    /// Midpoints of surface-band edges.
    #[default]
    Adaptive,
    /// Midpoints of edges drawn uniformly from the whole mesh (control runs).
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub levels: u32,
    pub iters_per_level: usize,
    pub batch_rays: usize,
    pub grid_side: usize,
    pub max_sites: usize,
    pub seed: u64,
    pub lambda_first: f64,
    pub lambda_later: f64,
    pub eps: f64,
    pub w_reg: f64,
    pub w_tv: f64,
    pub reg_detach: bool,
    pub smooth_k: usize,
    pub beta0: f64,
    pub beta_growth: f64,
    pub beta_max: f64,
    pub alpha_mode: AlphaMode,
    pub prune: bool,
    pub prune_band: f64,
    pub prune_min_transmittance: f64,
    pub max_segments: usize,
    pub lr_sdf: f64,
    pub lr_features: f64,
    pub lr_network: f64,
    pub lr_decay: f64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub refinement: Refinement,
    /// Sites added by uniform refinement at each level; empty adds as many as
    /// the adaptive rule would.
    pub uniform_counts: Vec<usize>,
    pub cvt_enabled: bool,
    /// Re-interpolate SDF and features at the moved positions after a CVT
    /// phase instead of carrying each site's values along.
    pub cvt_resample: bool,
    pub cvt_neighbors: usize,
    pub cvt_iterations: usize,
    pub cvt_knn_refresh: usize,
    pub cvt_learning_rate: Option<f64>,
    pub cvt_lr_final_ratio: f64,
    pub eval_samples: usize,
    pub eval_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            levels: 3,
            iters_per_level: 10_000,
            batch_rays: 4096,
            grid_side: 16,
            max_sites: 3_000_000,
            seed: 0,
            lambda_first: 1.0,
            lambda_later: 0.5,
            eps: 0.1,
            w_reg: 0.1,
            w_tv: 0.01,
            reg_detach: false,
            smooth_k: 16,
            beta0: 30.0,
            beta_growth: 1.3,
            beta_max: 200.0,
            alpha_mode: AlphaMode::Normalized,
            prune: true,
            prune_band: 8.0,
            prune_min_transmittance: 1e-4,
            max_segments: 1024,
            lr_sdf: 0.01,
            lr_features: 0.01,
            lr_network: 1e-3,
            lr_decay: 0.33,
            hidden_layers: 2,
            hidden_width: 64,
            refinement: Refinement::Adaptive,
            uniform_counts: Vec::new(),
            cvt_enabled: true,
            cvt_resample: true,
            cvt_neighbors: 24,
            cvt_iterations: 300,
            cvt_knn_refresh: 100,
            cvt_learning_rate: None,
            cvt_lr_final_ratio: 1.0,
            eval_samples: 100_000,
            eval_clip: 0.1,
        }
    }
}

trait Value: Sized {
    fn parse(s: &str) -> std::result::Result<Self, String>;
    fn show(&self) -> String;
}

macro_rules! numeric_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|_| format!("expected {}, got '{s}'", stringify!($t)))
            }
            fn show(&self) -> String {
                format!("{self:?}")
            }
        }
    )*};
}
numeric_value!(f64, usize, u32, u64, bool);

impl Value for Option<f64> {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            Ok(None)
        } else {
            f64::parse(s).map(Some)
        }
    }
    fn show(&self) -> String {
        self.map_or("auto".into(), |v| v.show())
    }
}

impl Value for Vec<usize> {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(usize::parse).collect()
    }
    fn show(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

impl Value for AlphaMode {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        match s {
            "normalized" => Ok(AlphaMode::Normalized),
            "printed" => Ok(AlphaMode::Printed),
            _ => Err(format!("expected normalized or printed, got '{s}'")),
        }
    }
    fn show(&self) -> String {
        match self {
            AlphaMode::Normalized => "normalized".into(),
            AlphaMode::Printed => "printed".into(),
        }
    }
}

impl Value for Refinement {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        match s {
            "adaptive" => Ok(Refinement::Adaptive),
            "uniform" => Ok(Refinement::Uniform),
            _ => Err(format!("expected adaptive or uniform, got '{s}'")),
        }
    }
    fn show(&self) -> String {
        match self {
            Refinement::Adaptive => "adaptive".into(),
            Refinement::Uniform => "uniform".into(),
        }
    }
}

macro_rules! config_keys {
    ($($field:ident: $doc:literal),* $(,)?) => {
        /// Every configuration key with a one-line description.
        pub const CONFIG_KEYS: &[(&str, &str)] = &[$((stringify!($field), $doc)),*];

        impl TrainConfig {
            /// Sets one key from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
                match key {
                    $(stringify!($field) => self.$field = Value::parse(value)?,)*
                    _ => return Err(format!("unknown key '{key}'")),
                }
                Ok(())
            }

            /// `(key, value)` pairs in documentation order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($field), self.$field.show())),*]
            }
        }
    };
}

config_keys! {
    levels: "number of hierarchy levels",
    iters_per_level: "render/backprop steps per level",
    batch_rays: "rays per step",
    grid_side: "initial lattice is grid_side^3 sites",
    max_sites: "hard cap on the site count",
    seed: "seed for every random draw",
    lambda_first: "coarse color weight at level 0",
    lambda_later: "coarse color weight at later levels",
    eps: "photometric normalization constant",
    w_reg: "normal smoothing weight",
    w_tv: "total variation weight",
    reg_detach: "treat the smoothed field as a constant",
    smooth_k: "neighbors of the SDF smoothing kernel",
    beta0: "initial sharpness",
    beta_growth: "sharpness growth factor per 1000 steps",
    beta_max: "sharpness cap at level 0 (doubles per level)",
    alpha_mode: "normalized or printed",
    prune: "drop segments outside the surface band",
    prune_band: "band half-width in units of 1/beta",
    prune_min_transmittance: "stop rays below this transmittance",
    max_segments: "segment cap per ray",
    lr_sdf: "SDF step size at level 0",
    lr_features: "feature step size at level 0",
    lr_network: "network step size at level 0",
    lr_decay: "step size factor per level",
    hidden_layers: "hidden layers per color network",
    hidden_width: "units per hidden layer",
    refinement: "adaptive or uniform",
    uniform_counts: "comma list of sites added per level by uniform refinement",
    cvt_enabled: "run a CVT phase after each up-sampling",
    cvt_resample: "re-interpolate the field at moved sites after a CVT phase",
    cvt_neighbors: "CVT neighbor count",
    cvt_iterations: "CVT steps per phase",
    cvt_knn_refresh: "CVT neighbor table refresh period",
    cvt_learning_rate: "CVT step size, or auto",
    cvt_lr_final_ratio: "CVT step size multiplier at the last step",
    eval_samples: "surface samples for per-level Chamfer scores",
    eval_clip: "Chamfer clip distance",
}

impl TrainConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str, file: &std::path::Path) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |column: usize, message: String| Error::Parse {
                file: file.to_path_buf(),
                line: n + 1,
                column,
                message,
            };
            let (key, value) = line.split_once('=').ok_or_else(|| err(1, "expected 'key = value'".into()))?;
            let eq = raw.find('=').unwrap_or(0);
            let after = &raw[eq + 1..];
            let value_col = eq + 2 + after.len() - after.trim_start().len();
            cfg.set(key.trim(), value.trim()).map_err(|m| err(value_col, m))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Text form listing every key, with descriptions as comments.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ((key, value), (_, doc)) in self.entries().into_iter().zip(CONFIG_KEYS) {
            out.push_str(&format!("# {doc}\n{key} = {value}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("levels", self.levels as usize),
            ("batch_rays", self.batch_rays),
            ("max_sites", self.max_sites),
            ("smooth_k", self.smooth_k),
            ("max_segments", self.max_segments),
            ("hidden_width", self.hidden_width),
            ("eval_samples", self.eval_samples),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("{k} must be at least 1")));
            }
        }
        if self.grid_side < 2 {
            return Err(Error::invalid("grid_side must be at least 2"));
        }
        let positive = [
            ("eps", self.eps),
            ("beta0", self.beta0),
            ("beta_max", self.beta_max),
            ("beta_growth", self.beta_growth),
            ("prune_band", self.prune_band),
            ("lr_decay", self.lr_decay),
            ("eval_clip", self.eval_clip),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{k} must be positive")));
            }
        }
        let non_negative = [
            ("lambda_first", self.lambda_first),
            ("lambda_later", self.lambda_later),
            ("w_reg", self.w_reg),
            ("w_tv", self.w_tv),
            ("lr_sdf", self.lr_sdf),
            ("lr_features", self.lr_features),
            ("lr_network", self.lr_network),
            ("prune_min_transmittance", self.prune_min_transmittance),
        ];
        for (k, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{k} must be non-negative")));
            }
        }
        if self.max_sites > 3_000_000 {
            return Err(Error::invalid("max_sites cannot exceed 3000000"));
        }
        if self.cvt_enabled {
            self.cvt(0, None).validate()?;
        }
        Ok(())
    }

    /// Coarse color weight at `level`.
    pub fn lambda(&self, level: u32) -> f64 {
        if level == 0 {
            self.lambda_first
        } else {
            self.lambda_later
        }
    }

    pub fn render(&self, level: u32) -> RenderConfig {
        RenderConfig {
            alpha_mode: self.alpha_mode,
            lambda: self.lambda(level),
            eps: self.eps,
            prune: self
                .prune
                .then_some(PruneConfig { band: self.prune_band, min_transmittance: self.prune_min_transmittance }),
            march: MarchConfig { max_segments: self.max_segments, ..Default::default() },
        }
    }

    pub fn beta_schedule(&self) -> BetaSchedule {
        BetaSchedule { beta0: self.beta0, growth: self.beta_growth, beta_max: self.beta_max }
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig { hidden_layers: self.hidden_layers, hidden_width: self.hidden_width }
    }

    pub fn reg_weights(&self) -> RegWeights {
        RegWeights { w_reg: self.w_reg, w_tv: self.w_tv }
    }

    pub fn cvt(&self, level: u32, domain: Option<Aabb>) -> CvtConfig {
        CvtConfig {
            n_neighbors: self.cvt_neighbors,
            n_iterations: self.cvt_iterations,
            knn_refresh_period: self.cvt_knn_refresh,
            learning_rate: self.cvt_learning_rate,
            rng_seed: crate::rng::hash_key(&[self.seed, 0xC7, level as u64]),
            lr_final_ratio: self.cvt_lr_final_ratio,
            domain,
        }
    }

    pub fn chamfer(&self) -> ChamferConfig {
        ChamferConfig { clip: self.eval_clip, n_samples: self.eval_samples, seed: self.seed }
    }
}
