//! Face datasets and their on-disk layouts.

use std::fs;
use std::path::Path;

use zune_jpeg::zune_core::colorspace::ColorSpace;
use zune_jpeg::zune_core::options::DecoderOptions;
use zune_jpeg::JpegDecoder;

use super::image::preprocess;
use super::pgm;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Att,
    Lfw,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceImage {
    pub subject: u32,
    /// 1-based position of the image within its subject.
    pub index: u32,
    /// `[1, H, W]`, values in `[0, 1]`.
    pub image: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceDataset {
    pub images: Vec<FaceImage>,
    pub source: Source,
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    Ok(entries)
}

/// Decode a JPEG to `[3, H, W]` RGB in `[0, 1]`.
pub fn load_jpeg(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let fail = |msg: String| Error::Jpeg {
        path: path.to_path_buf(),
        msg,
    };
    let opts = DecoderOptions::default().jpeg_set_out_colorspace(ColorSpace::RGB);
    let mut dec = JpegDecoder::new_with_options(std::io::Cursor::new(bytes), opts);
    let pixels = dec.decode().map_err(|e| fail(format!("{e:?}")))?;
    let info = dec.info().ok_or_else(|| fail("missing image info".into()))?;
    let (h, w) = (info.height as usize, info.width as usize);
    if pixels.len() != h * w * 3 {
        return Err(fail(format!("expected {} RGB bytes, got {}", h * w * 3, pixels.len())));
    }
    let mut planar = vec![0.0; 3 * h * w];
    for (i, px) in pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            planar[c * h * w + i] = px[c] as f64 / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], planar)
}

impl FaceDataset {
    /// Sorted distinct subject ids.
    pub fn subjects(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.images.iter().map(|i| i.subject).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Indices into `images` belonging to `subject`, in storage order.
    pub fn images_of(&self, subject: u32) -> Vec<usize> {
        self.images
            .iter()
            .enumerate()
            .filter(|(_, im)| im.subject == subject)
            .map(|(i, _)| i)
            .collect()
    }

    /// ORL/AT&T layout: `root/s<subject>/<index>.pgm`.
    pub fn load_orl(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::Data(format!("dataset directory {} not found", root.display())));
        }
        let mut images = Vec::new();
        for dir in read_dir_sorted(root)? {
            let Some(name) = dir.file_name().and_then(|n| n.to_str()) else { continue };
            let Some(subject) = name.strip_prefix('s').and_then(|n| n.parse::<u32>().ok()) else {
                continue;
            };
            if !dir.is_dir() {
                continue;
            }
            for file in read_dir_sorted(&dir)? {
                if file.extension().and_then(|e| e.to_str()) != Some("pgm") {
                    continue;
                }
                let Some(index) = file.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u32>().ok()) else {
                    continue;
                };
                let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
                images.push(FaceImage {
                    subject,
                    index,
                    image: pgm::load_pgm(&bytes)?,
                });
            }
        }
        if images.is_empty() {
            return Err(Error::Data(format!("no s<N>/<M>.pgm images under {}", root.display())));
        }
        images.sort_by_key(|im| (im.subject, im.index));
        Ok(Self { images, source: Source::Att })
    }

    /// LFW layout: `root/<Person_Name>/*.jpg` (or `*.pgm`). Subjects are
    /// numbered from 1 in sorted name order; images from 1 in sorted file order.
    pub fn load_lfw(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::Data(format!("dataset directory {} not found", root.display())));
        }
        let mut images = Vec::new();
        let mut subject = 0;
        for dir in read_dir_sorted(root)? {
            if !dir.is_dir() {
                continue;
            }
            let mut index = 0;
            let mut any = false;
            for file in read_dir_sorted(&dir)? {
                let ext = file.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
                let decode = match ext.as_deref() {
                    Some("jpg" | "jpeg") => |b: &[u8], p: &Path| load_jpeg(b, p),
                    Some("pgm") => |b: &[u8], _: &Path| Ok(pgm::load_pgm(b)?),
                    _ => continue,
                };
                if !any {
                    subject += 1;
                    any = true;
                }
                index += 1;
                let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
                images.push(FaceImage {
                    subject,
                    index,
                    image: decode(&bytes, &file)?,
                });
            }
        }
        if images.is_empty() {
            return Err(Error::Data(format!("no images under {}", root.display())));
        }
        Ok(Self { images, source: Source::Lfw })
    }

    /// Resize every image to grayscale `[1, size, size]`.
    pub fn preprocessed(mut self, size: usize) -> Result<Self> {
        for im in &mut self.images {
            im.image = preprocess(&im.image, size)?;
        }
        Ok(self)
    }

    /// Write the ORL layout (8-bit P5) for this dataset under `root`.
    pub fn write_orl(&self, root: &Path) -> Result<()> {
        for im in &self.images {
            let dir = root.join(format!("s{}", im.subject));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let path = dir.join(format!("{}.pgm", im.index));
            fs::write(&path, pgm::encode_p5(&im.image)).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orl_layout_metadata_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut images = Vec::new();
        for subject in [3u32, 12] {
            for index in [1u32, 2, 10] {
                let v = (subject * 10 + index) as f64 / 255.0;
                images.push(FaceImage {
                    subject,
                    index,
                    image: Tensor::from_vec(&[1, 2, 3], vec![v; 6]).unwrap(),
                });
            }
        }
        let ds = FaceDataset { images, source: Source::Att };
        ds.write_orl(dir.path()).unwrap();
        std::fs::write(dir.path().join("README"), "not a subject").unwrap();
        let back = FaceDataset::load_orl(dir.path()).unwrap();
        assert_eq!(back.subjects(), vec![3, 12]);
        let meta: Vec<(u32, u32)> = back.images.iter().map(|i| (i.subject, i.index)).collect();
        assert_eq!(meta, vec![(3, 1), (3, 2), (3, 10), (12, 1), (12, 2), (12, 10)]);
        for (a, b) in ds.images.iter().zip(&back.images) {
            assert!((a.image.data()[0] - b.image.data()[0]).abs() < 1e-12);
        }
        assert_eq!(back.images_of(12), vec![3, 4, 5]);
    }

    #[test]
    fn missing_directory_is_reported() {
        let err = FaceDataset::load_orl(Path::new("/definitely/not/here")).unwrap_err();
        assert!(err.to_string().contains("not found"));
    }

    #[test]
    fn lfw_layout_with_pgm_mirror() {
        let dir = tempfile::tempdir().unwrap();
        for (name, n) in [("Bob_Two", 2), ("Alice_One", 1)] {
            let d = dir.path().join(name);
            std::fs::create_dir_all(&d).unwrap();
            for k in 0..n {
                let img = Tensor::from_vec(&[1, 2, 2], vec![0.5; 4]).unwrap();
                std::fs::write(d.join(format!("{name}_{:04}.pgm", k + 1)), pgm::encode_p5(&img)).unwrap();
            }
        }
        let ds = FaceDataset::load_lfw(dir.path()).unwrap();
        let meta: Vec<(u32, u32)> = ds.images.iter().map(|i| (i.subject, i.index)).collect();
        assert_eq!(meta, vec![(1, 1), (2, 1), (2, 2)]);
        assert_eq!(ds.source, Source::Lfw);
    }
}
