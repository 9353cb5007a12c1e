use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{kernels, Tensor};

pub const SYNTHETIC_RESOLUTIONS: [usize; 4] = [8, 16, 32, 48];
pub const MAX_SYNTHETIC_CLASSES: usize = 10;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;
const CIFAR_TRAIN_FILES: [&str; 5] = ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"];
const CIFAR_TEST_FILE: &str = "test_batch.bin";

/// Images in `[−1, 1]` with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImageSet {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.images.dim(2)
    }

    pub fn batch(&self, indices: &[usize]) -> Tensor {
        self.images.select_rows(indices)
    }

    /// First `n` items and the rest.
    pub fn split(&self, n: usize) -> (LabeledImageSet, LabeledImageSet) {
        let n = n.min(self.len());
        let head = LabeledImageSet { images: self.images.narrow(0, n), labels: self.labels[..n].to_vec(), num_classes: self.num_classes };
        let tail = LabeledImageSet {
            images: self.images.narrow(n, self.len()),
            labels: self.labels[n..].to_vec(),
            num_classes: self.num_classes,
        };
        (head, tail)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Average-pool the images down to `resolution`.
    pub fn downsampled(&self, resolution: usize) -> Result<LabeledImageSet> {
        Ok(LabeledImageSet { images: downsample(&self.images, resolution)?, labels: self.labels.clone(), num_classes: self.num_classes })
    }
}

/// Repeated 2×2 average pooling down to `resolution`.
pub fn downsample(images: &Tensor, resolution: usize) -> Result<Tensor> {
    let mut out = images.clone();
    while out.dim(2) > resolution {
        out = kernels::avg_pool2(&out)?;
    }
    if out.dim(2) != resolution {
        return Err(Error::Config(format!("cannot pool {}×{} images down to {resolution}", images.dim(2), images.dim(3))));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Shape {
    Disk,
    Square,
    Plus,
    Ring,
    Triangle,
    Diamond,
    Saltire,
    Frame,
    Stripes,
    Checker,
}

const SHAPES: [Shape; MAX_SYNTHETIC_CLASSES] = [
    Shape::Disk,
    Shape::Square,
    Shape::Plus,
    Shape::Ring,
    Shape::Triangle,
    Shape::Diamond,
    Shape::Saltire,
    Shape::Frame,
    Shape::Stripes,
    Shape::Checker,
];

impl Shape {
    /// Membership test in shape-local coordinates, the shape spanning `[−1, 1]²`.
    fn contains(self, u: f32, v: f32) -> bool {
        let (au, av) = (u.abs(), v.abs());
        let r = (u * u + v * v).sqrt();
        match self {
            Shape::Disk => r <= 1.0,
            Shape::Square => au <= 0.8 && av <= 0.8,
            Shape::Plus => (au <= 0.3 && av <= 1.0) || (av <= 0.3 && au <= 1.0),
            Shape::Ring => (0.55..=1.0).contains(&r),
            Shape::Triangle => v <= 0.8 && v >= -1.0 + 2.0 * au * 0.9,
            Shape::Diamond => au + av <= 1.0,
            Shape::Saltire => au <= 1.0 && av <= 1.0 && ((u - v).abs() <= 0.4 || (u + v).abs() <= 0.4),
            Shape::Frame => au <= 0.95 && av <= 0.95 && (au >= 0.55 || av >= 0.55),
            Shape::Stripes => au <= 0.95 && av <= 0.95 && ((v + 1.0) * 2.5) as i32 % 2 == 0,
            Shape::Checker => au <= 0.95 && av <= 0.95 && (((u + 1.0) * 2.0) as i32 + ((v + 1.0) * 2.0) as i32) % 2 == 0,
        }
    }
}

fn render<R: Rng + ?Sized>(shape: Shape, res: usize, rng: &mut R, out: &mut [f32]) {
    let scale = rng.random_range(0.55..0.8f32);
    let margin = 1.0 - scale;
    let cx = rng.random_range(-margin..=margin) * 0.9;
    let cy = rng.random_range(-margin..=margin) * 0.9;
    let bg: [f32; 3] = std::array::from_fn(|_| rng.random_range(-1.0..-0.3f32));
    let fg: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.1..1.0f32));
    let plane = res * res;
    const SUB: usize = 2;
    for y in 0..res {
        for x in 0..res {
            let mut cover = 0.0;
            for sy in 0..SUB {
                for sx in 0..SUB {
                    let px = ((x * SUB + sx) as f32 + 0.5) / (res * SUB) as f32 * 2.0 - 1.0;
                    let py = ((y * SUB + sy) as f32 + 0.5) / (res * SUB) as f32 * 2.0 - 1.0;
                    if shape.contains((px - cx) / scale, (py - cy) / scale) {
                        cover += 1.0;
                    }
                }
            }
            let a = cover / (SUB * SUB) as f32;
            for ch in 0..3 {
                let noise = rng.random_range(-0.04..0.04f32);
                out[ch * plane + y * res + x] = (bg[ch] * (1.0 - a) + fg[ch] * a + noise).clamp(-1.0, 1.0);
            }
        }
    }
}

/// Procedurally rendered shapes, one shape family per class, with random
/// position, scale and colors. Labels are balanced and shuffled.
pub fn gen_synthetic_dataset(n: usize, resolution: usize, num_classes: usize, seed: u64) -> Result<LabeledImageSet> {
    if !SYNTHETIC_RESOLUTIONS.contains(&resolution) {
        return Err(Error::Config(format!("synthetic resolution must be one of {SYNTHETIC_RESOLUTIONS:?}, got {resolution}")));
    }
    if !(2..=MAX_SYNTHETIC_CLASSES).contains(&num_classes) {
        return Err(Error::Config(format!("synthetic class count must be in 2..={MAX_SYNTHETIC_CLASSES}, got {num_classes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    labels.shuffle(&mut rng);
    let per = 3 * resolution * resolution;
    let mut data = vec![0.0f32; n * per];
    for (chunk, &label) in data.chunks_exact_mut(per).zip(&labels) {
        render(SHAPES[label], resolution, &mut rng, chunk);
    }
    Ok(LabeledImageSet { images: Tensor::new(vec![n, 3, resolution, resolution], data)?, labels, num_classes })
}

fn parse_cifar_records(path: &Path, bytes: &[u8], images: &mut Vec<f32>, labels: &mut Vec<usize>) -> Result<()> {
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        let pos = (bytes.len() / CIFAR_RECORD_BYTES * CIFAR_RECORD_BYTES) as u64;
        return Err(Error::Format {
            path: path.to_path_buf(),
            pos,
            msg: format!("truncated record: {} trailing bytes, expected {CIFAR_RECORD_BYTES}", bytes.len() as u64 - pos),
        });
    }
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label > 9 {
            return Err(Error::Format { path: path.to_path_buf(), pos: (i * CIFAR_RECORD_BYTES) as u64, msg: format!("label byte {label} outside 0..=9") });
        }
        labels.push(label);
        images.extend(rec[1..].iter().map(|&b| f32::from(b) / 127.5 - 1.0));
    }
    Ok(())
}

/// Parse CIFAR-10 binary batch files. `train` selects the five training
/// batches, otherwise the test batch.
pub fn load_cifar10_bin(dir: &Path, train: bool) -> Result<LabeledImageSet> {
    let files: Vec<&str> = if train { CIFAR_TRAIN_FILES.to_vec() } else { vec![CIFAR_TEST_FILE] };
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let path = dir.join(f);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        parse_cifar_records(&path, &bytes, &mut images, &mut labels)?;
    }
    let n = labels.len();
    Ok(LabeledImageSet { images: Tensor::new(vec![n, 3, 32, 32], images)?, labels, num_classes: 10 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic_balanced_and_in_range() {
        let a = gen_synthetic_dataset(103, 16, 4, 7).unwrap();
        let b = gen_synthetic_dataset(103, 16, 4, 7).unwrap();
        assert_eq!(a, b);
        let counts = a.class_counts();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1);
        assert!(a.images.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(a.images.shape(), &[103, 3, 16, 16]);
    }

    #[test]
    fn synthetic_rejects_bad_arguments() {
        assert!(matches!(gen_synthetic_dataset(10, 12, 4, 0), Err(Error::Config(_))));
        assert!(matches!(gen_synthetic_dataset(10, 16, 11, 0), Err(Error::Config(_))));
    }

    #[test]
    fn every_shape_is_visible() {
        for shape in SHAPES {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut buf = vec![0.0; 3 * 32 * 32];
            render(shape, 32, &mut rng, &mut buf);
            let bright = buf[..1024].iter().filter(|&&v| v > 0.0).count();
            assert!(bright > 20, "{shape:?} covers {bright} pixels");
        }
    }

    #[test]
    fn cifar_record_parsing() {
        assert_eq!(CIFAR_RECORD_BYTES, 3073);
        let mut rec = vec![3u8];
        rec.extend(std::iter::repeat_n(255u8, 3072));
        let (mut im, mut lb) = (Vec::new(), Vec::new());
        parse_cifar_records(Path::new("x"), &rec, &mut im, &mut lb).unwrap();
        assert_eq!(lb, vec![3]);
        assert!(im.iter().all(|&v| v == 1.0));
        rec[0] = 10;
        assert!(matches!(parse_cifar_records(Path::new("x"), &rec, &mut im, &mut lb), Err(Error::Format { pos: 0, .. })));
        let err = parse_cifar_records(Path::new("x"), &rec[..100], &mut im, &mut lb).unwrap_err();
        assert!(matches!(err, Error::Format { pos: 0, .. }));
    }

    #[test]
    fn downsample_pools() {
        let t = Tensor::from_fn(&[1, 1, 4, 4], |i| i as f32);
        let d = downsample(&t, 2).unwrap();
        assert_eq!(d.data(), &[2.5, 4.5, 10.5, 12.5]);
        assert!(downsample(&t, 3).is_err());
    }
}
