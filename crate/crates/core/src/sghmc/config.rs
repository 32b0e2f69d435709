use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mixture::Hyperparams;

/// Sampler settings. The Dirichlet and Gamma hyperparameters default to
/// `1/W`, `√K` and `1` when left unset.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub num_components: usize,
    pub num_traits: usize,
    pub eta: f64,
    pub beta: f64,
    pub minibatch_size: usize,
    pub leapfrog_steps: usize,
    pub total_samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub alpha: Option<f64>,
    pub a0: Option<f64>,
    pub b0: Option<f64>,
    /// Standard deviation of the initial trait entries.
    pub init_scale: f64,
    /// Fan per-component and per-observation work out to the rayon pool.
    /// Results are identical either way.
    pub parallel: bool,
}

impl SamplerConfig {
    pub fn new(num_traits: usize) -> Self {
        SamplerConfig {
            num_components: 100,
            num_traits,
            eta: 1e-5,
            beta: 0.01,
            minibatch_size: 5000,
            leapfrog_steps: 1,
            total_samples: 2000,
            burn_in: 1800,
            thinning: 1,
            seed: 0,
            alpha: None,
            a0: None,
            b0: None,
            init_scale: 0.1,
            parallel: true,
        }
    }

    pub fn hyperparams(&self) -> Hyperparams {
        let defaults = Hyperparams::defaults(self.num_components, self.num_traits);
        Hyperparams {
            alpha: self.alpha.unwrap_or(defaults.alpha),
            a0: self.a0.unwrap_or(defaults.a0),
            b0: self.b0.unwrap_or(defaults.b0),
        }
    }

    /// Copy with every defaulted hyperparameter filled in.
    pub fn resolved(&self) -> Self {
        let h = self.hyperparams();
        SamplerConfig {
            alpha: Some(h.alpha),
            a0: Some(h.a0),
            b0: Some(h.b0),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_components == 0 {
            return fail("number of components must be at least 1".into());
        }
        if self.num_traits == 0 {
            return fail("trait dimension must be at least 1".into());
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return fail(format!("eta must be positive, got {}", self.eta));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return fail(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if self.minibatch_size == 0 {
            return fail("minibatch size must be at least 1".into());
        }
        if self.leapfrog_steps == 0 {
            return fail("leapfrog steps must be at least 1".into());
        }
        if self.thinning == 0 {
            return fail("thinning must be at least 1".into());
        }
        if self.burn_in >= self.total_samples {
            return fail(format!(
                "burn-in ({}) must be smaller than the sample count ({})",
                self.burn_in, self.total_samples
            ));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return fail(format!(
                "init scale must be positive, got {}",
                self.init_scale
            ));
        }
        self.hyperparams().validate()
    }

    /// Applies one `key=value` setting. Keys match the command-line flags.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
        }
        match key {
            "w" => self.num_components = parse(key, value)?,
            "k" => self.num_traits = parse(key, value)?,
            "eta" => self.eta = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "minibatch" => self.minibatch_size = parse(key, value)?,
            "leapfrog" => self.leapfrog_steps = parse(key, value)?,
            "samples" => self.total_samples = parse(key, value)?,
            "burn-in" => self.burn_in = parse(key, value)?,
            "thinning" => self.thinning = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "alpha" => self.alpha = Some(parse(key, value)?),
            "a0" => self.a0 = Some(parse(key, value)?),
            "b0" => self.b0 = Some(parse(key, value)?),
            "init-scale" => self.init_scale = parse(key, value)?,
            "parallel" => self.parallel = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown sampler key `{key}`"))),
        }
        Ok(())
    }

    /// Canonical `key=value` lines in a fixed order. Floats use the shortest
    /// representation that parses back to the same bits.
    pub fn to_kv_text(&self) -> String {
        let h = self.hyperparams();
        let mut out = String::new();
        let pairs: [(&str, String); 15] = [
            ("w", self.num_components.to_string()),
            ("k", self.num_traits.to_string()),
            ("eta", format!("{:?}", self.eta)),
            ("beta", format!("{:?}", self.beta)),
            ("minibatch", self.minibatch_size.to_string()),
            ("leapfrog", self.leapfrog_steps.to_string()),
            ("samples", self.total_samples.to_string()),
            ("burn-in", self.burn_in.to_string()),
            ("thinning", self.thinning.to_string()),
            ("seed", self.seed.to_string()),
            ("alpha", format!("{:?}", h.alpha)),
            ("a0", format!("{:?}", h.a0)),
            ("b0", format!("{:?}", h.b0)),
            ("init-scale", format!("{:?}", self.init_scale)),
            ("parallel", self.parallel.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut config = SamplerConfig::new(1);
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value", line_no + 1))
            })?;
            config.set(key.trim(), value)?;
        }
        Ok(config)
    }
}
