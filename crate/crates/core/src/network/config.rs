//! Declarative network configuration and its flat `key = value` text form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Encoder base channels per stage, before E-Ratio scaling.
pub const DEFAULT_ENCODER_CHANNELS: [usize; 7] = [4, 8, 16, 16, 16, 32, 64];
/// Decoder base channels per output scale (finest first), before D-Ratio scaling.
pub const DEFAULT_DECODER_CHANNELS: [usize; 7] = [2, 4, 8, 8, 8, 16, 32];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub e_ratio: usize,
    pub d_ratio: usize,
    /// Correlation shifts at correlation resolution.
    pub search_range: usize,
    pub encoder_stages: usize,
    pub scales: usize,
    /// Number of downsampling stages applied to each view before correlating.
    pub corr_level: usize,
    /// Channels per input view.
    pub image_channels: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            encoder_channels: DEFAULT_ENCODER_CHANNELS.to_vec(),
            decoder_channels: DEFAULT_DECODER_CHANNELS.to_vec(),
            e_ratio: 16,
            d_ratio: 16,
            search_range: 20,
            encoder_stages: 7,
            scales: 7,
            corr_level: 3,
            image_channels: 3,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn with_ratios(e_ratio: usize, d_ratio: usize) -> Self {
        Self { e_ratio, d_ratio, ..Self::default() }
    }

    /// Named size variants: `fadnet++` (16,16), `m` (8,8), `s` (4,4), `t` (2,1),
    /// plus the desk-scale `tiny` preset.
    pub fn variant(name: &str) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        if lower == "tiny" {
            return Ok(Self::tiny());
        }
        let (e, d) = match lower.as_str() {
            "fadnet++" | "full" => (16, 16),
            "m" | "fadnet-m" => (8, 8),
            "s" | "fadnet-s" => (4, 4),
            "t" | "fadnet-t" => (2, 1),
            other => return Err(Error::Config(format!("unknown variant {other:?}"))),
        };
        Ok(Self::with_ratios(e, d))
    }

    /// Ratio-1 network for desk-scale runs on small images: correlation runs
    /// on the input images themselves, over shifts `0..10`.
    pub fn tiny() -> Self {
        Self { search_range: 10, corr_level: 0, ..Self::with_ratios(1, 1) }
    }

    pub fn encoder_width(&self, stage: usize) -> usize {
        self.encoder_channels[stage] * self.e_ratio
    }

    pub fn decoder_width(&self, scale: usize) -> usize {
        self.decoder_channels[scale] * self.d_ratio
    }

    /// Input extents must be multiples of this.
    pub fn required_divisor(&self) -> usize {
        1 << (self.scales - 1)
    }

    /// Total image channels consumed by the first-stage (correlation) network.
    pub fn correlation_input_channels(&self) -> usize {
        2 * self.image_channels
    }

    /// Left, right, warped left and the initial disparity.
    pub fn refinement_input_channels(&self) -> usize {
        3 * self.image_channels + 1
    }

    pub fn validate(&self) -> Result<()> {
        let mut failures = Vec::new();
        if self.e_ratio == 0 || self.d_ratio == 0 {
            failures.push("ratios must be >= 1".to_string());
        }
        if self.encoder_channels.len() != self.encoder_stages {
            failures.push(format!(
                "{} encoder channel entries for {} stages",
                self.encoder_channels.len(),
                self.encoder_stages
            ));
        }
        if self.decoder_channels.len() != self.scales {
            failures.push(format!(
                "{} decoder channel entries for {} scales",
                self.decoder_channels.len(),
                self.scales
            ));
        }
        if self.encoder_channels.iter().chain(&self.decoder_channels).any(|&c| c == 0) {
            failures.push("every base channel count must be >= 1".into());
        }
        if self.scales == 0 || self.scales > self.encoder_stages {
            failures.push(format!(
                "scales ({}) must be in 1..={} (encoder stages)",
                self.scales, self.encoder_stages
            ));
        }
        if self.corr_level >= self.scales.max(1) {
            failures.push(format!(
                "correlation level {} must be below the scale count {}",
                self.corr_level, self.scales
            ));
        }
        if self.search_range == 0 {
            failures.push("search_range must be >= 1".into());
        }
        if self.image_channels == 0 {
            failures.push("image_channels must be >= 1".into());
        }
        if failures.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(failures.join("; ")))
        }
    }

    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "e_ratio = {}", self.e_ratio);
        let _ = writeln!(s, "d_ratio = {}", self.d_ratio);
        let _ = writeln!(s, "search_range = {}", self.search_range);
        let _ = writeln!(s, "base_channels = {}", list(&self.encoder_channels));
        let _ = writeln!(s, "decoder_channels = {}", list(&self.decoder_channels));
        let _ = writeln!(s, "encoder_stages = {}", self.encoder_stages);
        let _ = writeln!(s, "scales = {}", self.scales);
        let _ = writeln!(s, "corr_level = {}", self.corr_level);
        let _ = writeln!(s, "image_channels = {}", self.image_channels);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    /// Pull the network keys out of a parsed config file, leaving the rest.
    pub fn from_config_file(file: &mut ConfigFile) -> Result<Self> {
        let mut cfg = match file.take("variant") {
            Some(v) => Self::variant(&v)?,
            None => Self::default(),
        };
        if let Some(v) = file.take_parsed("e_ratio")? {
            cfg.e_ratio = v;
        }
        if let Some(v) = file.take_parsed("d_ratio")? {
            cfg.d_ratio = v;
        }
        if let Some(v) = file.take_parsed("search_range")? {
            cfg.search_range = v;
        }
        if let Some(v) = file.take_list("base_channels")? {
            cfg.encoder_stages = v.len();
            cfg.encoder_channels = v;
        }
        if let Some(v) = file.take_list("decoder_channels")? {
            cfg.scales = v.len();
            cfg.decoder_channels = v;
        }
        if let Some(v) = file.take_parsed("encoder_stages")? {
            cfg.encoder_stages = v;
        }
        if let Some(v) = file.take_parsed("scales")? {
            cfg.scales = v;
        }
        if let Some(v) = file.take_parsed("corr_level")? {
            cfg.corr_level = v;
        }
        if let Some(v) = file.take_parsed("image_channels")? {
            cfg.image_channels = v;
        }
        if let Some(v) = file.take_parsed("seed")? {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromStr for NetworkConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut file: ConfigFile = text.parse()?;
        let cfg = Self::from_config_file(&mut file)?;
        file.finish()?;
        Ok(cfg)
    }
}

/// Flat `key = value` file. `#` starts a comment; blank lines are ignored.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl FromStr for ConfigFile {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1))
            })?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", lineno + 1)));
            }
        }
        Ok(Self { entries })
    }
}

impl ConfigFile {
    pub fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn take_parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        self.take(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("cannot parse {key} = {v:?}")))
            })
            .transpose()
    }

    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        self.take(key)
            .map(|v| {
                v.split(',')
                    .map(|item| {
                        item.trim()
                            .parse()
                            .map_err(|_| Error::Config(format!("cannot parse {key} entry {item:?}")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Error out on any key nobody consumed.
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            let keys: Vec<_> = self.entries.keys().cloned().collect();
            Err(Error::Config(format!("unknown keys: {}", keys.join(", "))))
        }
    }
}
