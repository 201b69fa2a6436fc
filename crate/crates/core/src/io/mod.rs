//! Disparity codecs, accuracy metrics and distribution histograms.

mod disparity;
pub mod kitti;
pub mod metrics;
pub mod pfm;

pub use disparity::DisparityMap;
pub use kitti::{read_kitti_png, write_kitti_png};
pub use metrics::{disparity_histogram, epe, threshold_metrics, Histogram, ThresholdMetrics, DEFAULT_BAD_THRESHOLDS};
pub use pfm::{read_pfm, write_pfm};

use std::path::Path;

use crate::error::{Error, Result};

/// On-disk disparity encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisparityFormat {
    Pfm,
    KittiPng,
}

impl DisparityFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Pfm => "pfm",
            Self::KittiPng => "png",
        }
    }

    pub fn decode(self, bytes: &[u8]) -> Result<DisparityMap> {
        match self {
            Self::Pfm => read_pfm(bytes),
            Self::KittiPng => read_kitti_png(bytes),
        }
    }

    pub fn encode(self, map: &DisparityMap) -> Result<Vec<u8>> {
        match self {
            Self::Pfm => Ok(write_pfm(map)),
            Self::KittiPng => write_kitti_png(map),
        }
    }

    pub fn read(self, path: &Path) -> Result<DisparityMap> {
        self.decode(&std::fs::read(path)?)
    }

    pub fn write(self, path: &Path, map: &DisparityMap) -> Result<()> {
        std::fs::write(path, self.encode(map)?)?;
        Ok(())
    }
}

impl std::str::FromStr for DisparityFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pfm" => Ok(Self::Pfm),
            "kitti" | "png" => Ok(Self::KittiPng),
            other => Err(Error::Config(format!("unknown disparity format {other:?}"))),
        }
    }
}
