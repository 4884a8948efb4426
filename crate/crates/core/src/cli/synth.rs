use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{merge, require, to_toml, write_atomic, write_image};
use crate::cascade::Task;
use crate::image::{add_gaussian_noise, load_image, Image, NoiseSpec};
use crate::synth::{degrade_depth, denoise_patches, depth_patches, depth_scene, derive_seed};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthArgs {
    /// Directory of clean images (`NAME_depth.*` + `NAME_guide.*` pairs for sr-depth).
    #[arg(long = "in")]
    #[serde(rename = "in", skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Gaussian noise level (default 25 for denoise, 0 for sr-depth).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    /// Depth downsampling factor.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patch_size: Option<usize>,
    /// Number of training patches.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    /// Generate this many procedural depth/color scenes instead of reading `--in`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene_size: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl SynthArgs {
    fn resolve(self) -> Result<Self> {
        let mut a = merge(&self, self.config.as_deref())?;
        let task = *a.task.get_or_insert(Task::Denoise);
        a.sigma.get_or_insert(if task.is_joint() { 0.0 } else { 25.0 });
        a.seed.get_or_insert(0);
        a.patch_size.get_or_insert(32);
        a.count.get_or_insert(5000);
        if task.is_joint() {
            a.factor.get_or_insert(4);
            if a.scenes.is_some() {
                a.scene_size.get_or_insert(128);
            }
        }
        if a.input.is_none() && a.scenes.is_none() {
            return Err(Error::Config("synth needs --in (or --scenes for sr-depth)".into()));
        }
        if a.scenes.is_some() && !task.is_joint() {
            return Err(Error::Config("--scenes only applies to --task sr-depth".into()));
        }
        require(&a.out, "out")?;
        Ok(a)
    }
}

const IMAGE_EXTS: [&str; 5] = ["pgm", "ppm", "pnm", "pfm", "png"];

/// Sorted image paths in `dir`; every unreadable one is listed in the error.
fn load_dir(dir: &Path) -> Result<Vec<(String, Image)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no images found in {}", dir.display())));
    }
    let mut images = Vec::new();
    let mut failures = Vec::new();
    for p in paths {
        match load_image(&p) {
            Ok(img) => images.push((p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), img)),
            Err(e) => failures.push(format!("  {}: {e}", p.display())),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Format(format!("unreadable inputs:\n{}", failures.join("\n"))));
    }
    Ok(images)
}

pub fn run(args: SynthArgs) -> Result<()> {
    let a = args.resolve()?;
    let out = a.out.clone().expect("resolved");
    let (task, sigma, seed) = (a.task.expect("resolved"), a.sigma.expect("resolved"), a.seed.expect("resolved"));
    let (size, count) = (a.patch_size.expect("resolved"), a.count.expect("resolved"));
    let set = if task.is_joint() {
        let factor = a.factor.expect("resolved");
        let scenes: Vec<(String, Image, Image)> = match a.scenes {
            Some(n) => {
                let s = a.scene_size.expect("resolved");
                (0..n)
                    .map(|i| {
                        let (d, g) = depth_scene(s, s, 6, derive_seed(seed, 1_000_000 + i as u64));
                        (format!("scene{i:03}"), d, g)
                    })
                    .collect()
            }
            None => pair_depth_guides(load_dir(a.input.as_deref().expect("checked"))?)?,
        };
        let mut triples = Vec::with_capacity(scenes.len());
        for (i, (name, depth, guide)) in scenes.into_iter().enumerate() {
            let low = degrade_depth(&depth, factor)?;
            let degraded = add_gaussian_noise(&low, &NoiseSpec::new(sigma, derive_seed(seed, 2_000_000 + i as u64))?);
            write_image(&degraded, &out.join("pairs").join(format!("{name}_input.pfm")))?;
            write_image(&guide, &out.join("pairs").join(format!("{name}_guide.pfm")))?;
            write_image(&depth, &out.join("pairs").join(format!("{name}_clean.pfm")))?;
            triples.push((degraded, guide, depth));
        }
        depth_patches(&triples, size, count, seed)?
    } else {
        let images = load_dir(a.input.as_deref().expect("checked"))?;
        let mut clean = Vec::with_capacity(images.len());
        for (i, (name, img)) in images.into_iter().enumerate() {
            let noisy = add_gaussian_noise(&img, &NoiseSpec::new(sigma, derive_seed(seed, 2_000_000 + i as u64))?);
            write_image(&noisy, &out.join("pairs").join(format!("{name}_input.pfm")))?;
            write_image(&img, &out.join("pairs").join(format!("{name}_clean.pfm")))?;
            clean.push(img);
        }
        denoise_patches(&clean, sigma, size, count, seed)?
    };
    write_atomic(&out.join("patches.damp"), &set.to_bytes())?;
    write_atomic(&out.join("config.resolved"), to_toml(&a)?.as_bytes())?;
    println!("wrote {} patches of {size}x{size} to {}", set.len(), out.join("patches.damp").display());
    Ok(())
}

fn pair_depth_guides(images: Vec<(String, Image)>) -> Result<Vec<(String, Image, Image)>> {
    let mut depths = Vec::new();
    let mut guides = std::collections::BTreeMap::new();
    for (stem, img) in images {
        if let Some(name) = stem.strip_suffix("_depth") {
            depths.push((name.to_string(), img));
        } else if let Some(name) = stem.strip_suffix("_guide") {
            guides.insert(name.to_string(), img);
        }
    }
    if depths.is_empty() {
        return Err(Error::Config("no NAME_depth images found".into()));
    }
    depths
        .into_iter()
        .map(|(name, d)| {
            let g = guides.remove(&name).ok_or_else(|| Error::Config(format!("{name}_depth has no {name}_guide")))?;
            if (g.height(), g.width()) != (d.height(), d.width()) {
                return Err(Error::Shape(format!("{name}: guide and depth sizes differ")));
            }
            Ok((name, d, g))
        })
        .collect()
}
