use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use tsfb_core::plant::ContinuousLti;
use tsfb_core::stabilizer::{GramianOptions, WindowSpec};
use tsfb_core::timescale::{make_scale, ScaleKind, TimeScale};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub k: usize,
    pub delta1: f64,
    pub delta2: f64,
    /// Defaults to the span of the scale.
    pub m_max: Option<f64>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            k: 5,
            delta1: 0.5,
            delta2: 0.05,
            m_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub amplitude: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { amplitude: 2.0 }
    }
}

/// Everything a run needs. Read from `--config`, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Scale file: explicit elements, or a generator object with a `kind`.
    pub scale_path: Option<PathBuf>,
    /// Inline generator, used when no scale file is given.
    pub scale: Option<ScaleKind>,
    /// Plant file; the DC motor when absent.
    pub model_path: Option<PathBuf>,
    pub alpha: f64,
    pub window: WindowConfig,
    pub t0: Option<f64>,
    pub tf: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub reference: ReferenceConfig,
    pub mesh_h: Option<f64>,
    pub band: f64,
    pub output_dir: PathBuf,
    /// Replaces the seed of a random scale generator.
    pub seed: Option<u64>,
    pub k_range: Option<(usize, usize)>,
    /// `(start, stop, step)`, stop included.
    pub alpha_range: Option<(f64, f64, f64)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scale_path: None,
            scale: None,
            model_path: None,
            alpha: 0.1,
            window: WindowConfig::default(),
            t0: None,
            tf: None,
            x0: None,
            reference: ReferenceConfig::default(),
            mesh_h: None,
            band: 0.1,
            output_dir: PathBuf::from("."),
            seed: None,
            k_range: None,
            alpha_range: None,
        }
    }
}

/// Flags shared by every run command; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// JSON file holding a full run configuration
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Time scale JSON (elements, or a generator with a "kind")
    #[arg(long = "scale")]
    pub scale_path: Option<PathBuf>,
    /// Plant JSON {"A_hat": [[..]], "B_hat": [[..]]}; defaults to the DC motor
    #[arg(long = "model")]
    pub model_path: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Window size (number of jumps)
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub delta1: Option<f64>,
    #[arg(long)]
    pub delta2: Option<f64>,
    #[arg(long)]
    pub m_max: Option<f64>,
    #[arg(long)]
    pub t0: Option<f64>,
    #[arg(long)]
    pub tf: Option<f64>,
    /// Initial state, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Reference step amplitude
    #[arg(long, allow_hyphen_values = true)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub mesh_h: Option<f64>,
    /// Settling band as a fraction of the final value
    #[arg(long)]
    pub band: Option<f64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn from_flags(flags: &RunFlags) -> Result<Self> {
        let mut cfg = match &flags.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        macro_rules! set {
            ($field:expr, $flag:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        if flags.scale_path.is_some() {
            cfg.scale_path = flags.scale_path.clone();
        }
        if flags.model_path.is_some() {
            cfg.model_path = flags.model_path.clone();
        }
        set!(cfg.alpha, flags.alpha);
        set!(cfg.window.k, flags.k);
        set!(cfg.window.delta1, flags.delta1);
        set!(cfg.window.delta2, flags.delta2);
        set!(cfg.reference.amplitude, flags.amplitude);
        set!(cfg.band, flags.band);
        set!(cfg.output_dir, flags.output_dir);
        if flags.m_max.is_some() {
            cfg.window.m_max = flags.m_max;
        }
        if flags.t0.is_some() {
            cfg.t0 = flags.t0;
        }
        if flags.tf.is_some() {
            cfg.tf = flags.tf;
        }
        if flags.x0.is_some() {
            cfg.x0 = flags.x0.clone();
        }
        if flags.mesh_h.is_some() {
            cfg.mesh_h = flags.mesh_h;
        }
        if flags.seed.is_some() {
            cfg.seed = flags.seed;
        }
        Ok(cfg)
    }

    pub fn time_scale(&self) -> Result<TimeScale> {
        let kind = match (&self.scale_path, &self.scale) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading scale {}", path.display()))?;
                let value: serde_json::Value = serde_json::from_str(&text)
                    .with_context(|| format!("parsing scale {}", path.display()))?;
                if value.get("kind").is_some() {
                    serde_json::from_value::<ScaleKind>(value)
                        .with_context(|| format!("parsing scale generator {}", path.display()))?
                } else {
                    return TimeScale::from_json(&text)
                        .with_context(|| format!("loading scale {}", path.display()));
                }
            }
            (None, Some(kind)) => kind.clone(),
            (None, None) => {
                bail!("no time scale given (use --scale or the config's scale/scale_path)")
            }
        };
        Ok(make_scale(&self.reseed(kind))?)
    }

    fn reseed(&self, mut kind: ScaleKind) -> ScaleKind {
        if let Some(s) = self.seed {
            match &mut kind {
                ScaleKind::Random { seed, .. }
                | ScaleKind::Ticks { seed, .. }
                | ScaleKind::RandomWithGap { seed, .. } => *seed = s,
                _ => {}
            }
        }
        kind
    }

    pub fn plant(&self) -> Result<ContinuousLti> {
        match &self.model_path {
            Some(p) => {
                ContinuousLti::load(p).with_context(|| format!("loading model {}", p.display()))
            }
            None => Ok(ContinuousLti::motor()),
        }
    }

    pub fn window_spec(&self, ts: &TimeScale) -> Result<WindowSpec> {
        let m_max = self.window.m_max.unwrap_or_else(|| ts.max() - ts.min());
        Ok(WindowSpec::new(
            self.window.k,
            self.window.delta1,
            self.window.delta2,
            m_max,
        )?)
    }

    pub fn gramian_options(&self, ts: &TimeScale) -> Result<GramianOptions> {
        let mut opts = GramianOptions::for_scale(ts);
        if let Some(h) = self.mesh_h {
            opts.h = h;
        }
        opts.validate()?;
        Ok(opts)
    }

    /// `[t0, tf]`, defaulting to the whole scale.
    pub fn range(&self, ts: &TimeScale) -> (f64, f64) {
        (self.t0.unwrap_or(ts.min()), self.tf.unwrap_or(ts.max()))
    }

    pub fn x0(&self, n: usize) -> Result<Vec<f64>> {
        match &self.x0 {
            Some(v) if v.len() == n => Ok(v.clone()),
            Some(v) => bail!("x0 has {} entries but the plant has {n} states", v.len()),
            None => Ok(vec![0.0; n]),
        }
    }

    pub fn k_values(&self) -> Vec<usize> {
        let (lo, hi) = self.k_range.unwrap_or((2, 25));
        (lo..=hi).collect()
    }

    pub fn alpha_values(&self) -> Result<Vec<f64>> {
        let (start, stop, step) = self.alpha_range.unwrap_or((0.01, 0.79, 0.02));
        if !step.is_finite() || step <= 0.0 || stop < start {
            bail!("alpha range needs step > 0 and stop >= start");
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| start + step * i as f64).collect())
    }
}
