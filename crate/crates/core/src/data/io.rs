use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};

use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Dataset layout: one directory per modality, files `NNNN_{rgb|depth|gt}.png`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleDirs {
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub gt: PathBuf,
}

impl SampleDirs {
    /// `root/rgb`, `root/depth`, `root/gt`.
    pub fn under(root: impl AsRef<Path>) -> Self {
        let root = root.as_ref();
        Self {
            rgb: root.join("rgb"),
            depth: root.join("depth"),
            gt: root.join("gt"),
        }
    }

    pub fn create(&self) -> Result<()> {
        for d in [&self.rgb, &self.depth, &self.gt] {
            std::fs::create_dir_all(d)?;
        }
        Ok(())
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write plane `(0, 0)` of a `(1, 1, H, W)` map as 8-bit grayscale.
pub fn save_gray(path: impl AsRef<Path>, map: &Tensor) -> Result<()> {
    let [_, _, h, w] = map.shape();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([quantize(map.at(0, 0, y as usize, x as usize))])
    });
    img.save(path)?;
    Ok(())
}

/// Read an 8-bit grayscale PNG as a `(1, 1, H, W)` map with values `v/255`.
pub fn load_gray(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
    Tensor::from_vec([1, 1, h as usize, w as usize], data)
}

fn load_rgb(path: &Path) -> Result<Tensor> {
    if !path.exists() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut out = Tensor::zeros([1, 3, h, w]);
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            out.set(0, c, y as usize, x as usize, p.0[c] as f64 / 255.0);
        }
    }
    Ok(out)
}

/// Write sample `index` as three PNGs into `dirs`.
pub fn save_sample(dirs: &SampleDirs, index: usize, s: &Sample) -> Result<()> {
    let (h, w) = s.size();
    let rgb = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([0, 1, 2].map(|c| quantize(s.rgb.at(0, c, y, x))))
    });
    rgb.save(dirs.rgb.join(format!("{index:04}_rgb.png")))?;
    save_gray(dirs.depth.join(format!("{index:04}_depth.png")), &s.depth)?;
    save_gray(dirs.gt.join(format!("{index:04}_gt.png")), &s.gt)?;
    Ok(())
}

/// Stems `NNNN` of every `NNNN_<suffix>.png` in `dir`, sorted.
pub fn list_stems(dir: &Path, suffix: &str) -> Result<Vec<String>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.display().to_string()));
    }
    let tail = format!("_{suffix}.png");
    let mut stems: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix(&tail))
                .map(str::to_owned)
        })
        .collect();
    stems.sort();
    Ok(stems)
}

/// Load every `NNNN_rgb.png` with its depth map and mask. Pairs are
/// matched by the numeric stem.
pub fn load_pairs(dirs: &SampleDirs) -> Result<Vec<(String, Sample)>> {
    let stems = list_stems(&dirs.rgb, "rgb")?;
    let mut out = Vec::with_capacity(stems.len());
    for stem in stems {
        let rgb = load_rgb(&dirs.rgb.join(format!("{stem}_rgb.png")))?;
        let depth = load_gray(dirs.depth.join(format!("{stem}_depth.png")))?;
        let gt = load_gray(dirs.gt.join(format!("{stem}_gt.png")))?;
        let size = |t: &Tensor| (t.shape()[2], t.shape()[3]);
        if size(&rgb) != size(&depth) || size(&rgb) != size(&gt) {
            return Err(Error::invalid(
                "load_pairs",
                format!("sample {stem}: rgb, depth and gt sizes differ"),
            ));
        }
        out.push((stem, Sample { rgb, depth, gt }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SceneSpec};

    #[test]
    fn round_trip_is_lossless_at_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let dirs = SampleDirs::under(dir.path());
        dirs.create().unwrap();
        let samples = generate(
            &SceneSpec {
                seed: 4,
                ..SceneSpec::default()
            },
            3,
        )
        .unwrap();
        for (i, s) in samples.iter().enumerate() {
            save_sample(&dirs, i, s).unwrap();
        }
        let loaded = load_pairs(&dirs).unwrap();
        assert_eq!(loaded.len(), 3);
        let q = |t: &Tensor| t.map(|v| (v * 255.0).round() / 255.0);
        for ((stem, l), s) in loaded.iter().zip(&samples) {
            assert_eq!(stem.len(), 4);
            assert_eq!(l.rgb, q(&s.rgb));
            assert_eq!(l.depth, q(&s.depth));
            assert_eq!(l.gt, s.gt);
        }
    }

    #[test]
    fn gray_levels_map_linearly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        GrayImage::from_fn(2, 1, |x, _| Luma([if x == 0 { 128 } else { 255 }]))
            .save(&path)
            .unwrap();
        let t = load_gray(&path).unwrap();
        assert_eq!(t.data(), &[128.0 / 255.0, 1.0]);
    }

    #[test]
    fn missing_partner_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let dirs = SampleDirs::under(dir.path());
        dirs.create().unwrap();
        let s = generate(&SceneSpec::default(), 1).unwrap().remove(0);
        save_sample(&dirs, 0, &s).unwrap();
        std::fs::remove_file(dirs.depth.join("0000_depth.png")).unwrap();
        assert!(matches!(load_pairs(&dirs), Err(Error::MissingFile(_))));
    }

    #[test]
    fn size_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let dirs = SampleDirs::under(dir.path());
        dirs.create().unwrap();
        let s = generate(&SceneSpec::default(), 1).unwrap().remove(0);
        save_sample(&dirs, 0, &s).unwrap();
        save_gray(dirs.gt.join("0000_gt.png"), &Tensor::zeros([1, 1, 32, 32])).unwrap();
        assert!(matches!(load_pairs(&dirs), Err(Error::InvalidArgument { .. })));
    }
}
