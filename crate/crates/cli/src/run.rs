//! Training-run settings and on-disk datasets.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fadnet_core::io::{read_pfm, DisparityMap};
use fadnet_core::network::{ConfigFile, NetworkConfig};
use fadnet_core::training::{AdamConfig, LossSchedule, StereoSample, SyntheticSpec, TextureMode};
use fadnet_core::Tensor;

use crate::images::{read_rgb, write_rgb};

pub const MANIFEST: &str = "manifest.txt";

/// Everything `train` reads from its config file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub schedule: LossSchedule,
    pub refine: bool,
    /// Held-out pairs: generated separately for synthetic runs, taken from the
    /// end of the manifest for on-disk data (0 = evaluate on the training set).
    pub test_count: usize,
    pub synthetic: SyntheticSpec,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut file: ConfigFile = text.parse()?;
        let network = NetworkConfig::from_config_file(&mut file)?;
        let mut adam = AdamConfig { lr: 1e-3, ..AdamConfig::default() };
        if let Some(v) = file.take_parsed("lr")? {
            adam.lr = v;
        }
        let batch_size = file.take_parsed("batch_size")?.unwrap_or(1);
        let mut schedule = LossSchedule::default();
        if let Some(epochs) = file.take_list::<usize>("epochs")? {
            schedule = schedule.with_epochs(&epochs)?;
        }
        schedule.validate(network.scales)?;
        let refine = file.take_parsed("refine")?.unwrap_or(true);
        let test_count = file.take_parsed("test_count")?.unwrap_or(8);
        let mut synthetic = SyntheticSpec::new(64, 64, 8.0, TextureMode::Dots);
        if let Some(v) = file.take_parsed("height")? {
            synthetic.height = v;
        }
        if let Some(v) = file.take_parsed("width")? {
            synthetic.width = v;
        }
        if let Some(v) = file.take_parsed("max_disparity")? {
            synthetic.max_disparity = v;
        }
        if let Some(v) = file.take("texture") {
            synthetic.mode = v.parse()?;
        }
        if let Some(v) = file.take_parsed("subpixel")? {
            synthetic.subpixel = v;
        }
        file.finish()?;
        Ok(Self { network, adam, batch_size, schedule, refine, test_count, synthetic })
    }
}

/// One manifest line: `left right disparity`, paths relative to the dataset root.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub left: PathBuf,
    pub right: PathBuf,
    pub disparity: PathBuf,
}

pub fn read_manifest(root: &Path) -> Result<Vec<Entry>> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let [l, r, d] = cols[..] else {
            bail!("{}:{}: expected `left right disparity`", path.display(), n + 1);
        };
        entries.push(Entry { left: root.join(l), right: root.join(r), disparity: root.join(d) });
    }
    if entries.is_empty() {
        bail!("{} lists no samples", path.display());
    }
    Ok(entries)
}

pub fn load_sample(entry: &Entry) -> Result<StereoSample> {
    let left = read_rgb(&entry.left)?;
    let right = read_rgb(&entry.right)?;
    let gt = read_pfm(&fs::read(&entry.disparity).with_context(|| format!("reading {}", entry.disparity.display()))?)
        .with_context(|| format!("decoding {}", entry.disparity.display()))?;
    if left.shape() != right.shape() || left.shape()[1..] != [gt.height, gt.width] {
        bail!("sample {} has mismatched image and disparity sizes", entry.left.display());
    }
    let (disparity, valid) = gt.to_tensors();
    Ok(StereoSample { left, right, disparity, valid })
}

/// Write `samples` as `left/NNNN.png`, `right/NNNN.png`, `disp/NNNN.pfm` plus a manifest.
pub fn write_dataset(root: &Path, samples: &[StereoSample]) -> Result<()> {
    for sub in ["left", "right", "disp"] {
        fs::create_dir_all(root.join(sub))?;
    }
    let mut manifest = String::from("# left right disparity\n");
    for (i, s) in samples.iter().enumerate() {
        let name = format!("{i:04}");
        write_rgb(&root.join(format!("left/{name}.png")), &s.left)?;
        write_rgb(&root.join(format!("right/{name}.png")), &s.right)?;
        let gt = DisparityMap::from_tensor(&s.disparity, Some(&s.valid))?;
        fs::write(root.join(format!("disp/{name}.pfm")), fadnet_core::io::write_pfm(&gt))?;
        manifest.push_str(&format!("left/{name}.png right/{name}.png disp/{name}.pfm\n"));
    }
    fs::write(root.join(MANIFEST), manifest)?;
    Ok(())
}

/// `(1, 3, H, W)` batch of one image.
pub fn as_batch(t: &Tensor) -> Result<Tensor> {
    Ok(Tensor::stack(std::slice::from_ref(t))?)
}
