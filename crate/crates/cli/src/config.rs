//! `--config` file: one TOML table per subcommand plus `[pipeline]`.
//! Command-line flags override file values, which override built-in defaults.

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;
use topview_core::PipelineConfig;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub pipeline: Option<PipelineConfig>,
    pub vp: VpSection,
    pub project: ProjectSection,
    pub analyze: AnalyzeSection,
    pub synth: SynthSection,
    pub serve: ServeSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VpSection {
    pub iterations: Option<usize>,
    pub threshold: Option<f64>,
    pub min_inlier_ratio: Option<f64>,
    pub seed: Option<u64>,
    pub image_size: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectSection {
    pub image_size: Option<String>,
    pub fps: Option<f64>,
    pub sample_fps: Option<f64>,
    pub geojson_mode: Option<String>,
    pub threshold: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    pub threshold: Option<f64>,
    pub min_duration: Option<usize>,
    pub interval: Option<u64>,
    pub grid: Option<f64>,
    pub registry: Option<String>,
    pub calib: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub seed: Option<u64>,
    pub bbox_sigma: Option<f64>,
    pub dropout: Option<f64>,
    pub remove_ids: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub port: Option<u16>,
    pub host: Option<String>,
    pub scene_dir: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn pipeline(&self) -> PipelineConfig {
        self.pipeline.unwrap_or_default()
    }
}

/// Parses `WIDTHxHEIGHT`.
pub fn parse_image_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
    let w: u32 = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
    let h: u32 = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
    if w == 0 || h == 0 {
        return Err(format!("image size must be positive, got `{s}`"));
    }
    Ok((w, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_size() {
        assert_eq!(parse_image_size("1280x720"), Ok((1280, 720)));
        assert!(parse_image_size("1280").is_err());
        assert!(parse_image_size("0x5").is_err());
    }

    #[test]
    fn sections_parse() {
        let c: FileConfig = toml::from_str(
            "[vp]\nseed = 3\n[pipeline]\nsmoothing_window = 7\n[pipeline.grid]\nalpha = 0.5\n[analyze]\nthreshold = 1.5\n",
        )
        .unwrap();
        assert_eq!(c.vp.seed, Some(3));
        assert_eq!(c.pipeline().smoothing_window, 7);
        assert_eq!(c.pipeline().grid.alpha, 0.5);
        assert_eq!(c.pipeline().grid.subdivisions, PipelineConfig::default().grid.subdivisions);
        assert_eq!(c.analyze.threshold, Some(1.5));
        assert!(toml::from_str::<FileConfig>("[vp]\nbogus = 1\n").is_err());
    }
}
