//! Style-labeled image corpora: directory ingestion, augmentation, synthetic
//! generation and minibatch serving.
//!
//! On-disk layout is one subdirectory per style under a corpus root, holding
//! PNG or JPEG files. Style indices are fixed by lexicographic style-name
//! order and sample order by sorted file names, so ingestion is independent
//! of directory listing order.

mod imageio;
mod synth;

pub use imageio::{
    decode_image, encode_png, five_crop, five_crop_offsets, pixel_to_unit, resize_bilinear,
    tile_grid, unit_to_pixel,
};
pub use synth::{derive_seed, synth_image_pixels, synth_style_corpus};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A style-labeled image collection with a fixed spatial size.
#[derive(Debug, Clone)]
pub struct StyleDataset {
    style_names: Vec<String>,
    samples: Vec<(Tensor, usize)>,
    image_size: usize,
}

impl StyleDataset {
    /// Builds a dataset, checking label range and uniform image geometry.
    pub fn new(style_names: Vec<String>, samples: Vec<(Tensor, usize)>) -> Result<StyleDataset> {
        if style_names.is_empty() || samples.is_empty() {
            return Err(Error::Data("dataset has no styles or no samples".into()));
        }
        let first_shape = samples[0].0.shape().to_vec();
        if first_shape.len() != 3 || first_shape[0] != 3 || first_shape[1] != first_shape[2] {
            return Err(Error::Data(format!(
                "samples must be [3, S, S], got {first_shape:?}"
            )));
        }
        for (img, style) in &samples {
            if *style >= style_names.len() {
                return Err(Error::Data(format!(
                    "style index {style} out of range for {} styles",
                    style_names.len()
                )));
            }
            if img.shape() != first_shape.as_slice() {
                return Err(Error::Data(format!(
                    "sample shape {:?} differs from {:?}",
                    img.shape(),
                    first_shape
                )));
            }
        }
        Ok(StyleDataset {
            style_names,
            image_size: first_shape[1],
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_styles(&self) -> usize {
        self.style_names.len()
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn style_names(&self) -> &[String] {
        &self.style_names
    }

    pub fn get(&self, i: usize) -> (&Tensor, usize) {
        let (img, style) = &self.samples[i];
        (img, *style)
    }

    /// `(style name, image count)` per style, in index order.
    pub fn manifest(&self) -> Vec<(String, usize)> {
        let mut counts = vec![0usize; self.style_names.len()];
        for (_, style) in &self.samples {
            counts[*style] += 1;
        }
        self.style_names
            .iter()
            .cloned()
            .zip(counts)
            .collect()
    }

    /// SHA-256 over style names, geometry, labels and pixel data. Two
    /// datasets with the same fingerprint are the same corpus.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update((self.style_names.len() as u64).to_le_bytes());
        for name in &self.style_names {
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
        }
        hasher.update((self.image_size as u64).to_le_bytes());
        hasher.update((self.samples.len() as u64).to_le_bytes());
        for (img, style) in &self.samples {
            hasher.update((*style as u64).to_le_bytes());
            for &v in img.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().into()
    }

    /// Stratified split: per style, the first `train_fraction` of samples
    /// (in dataset order) go to the training half.
    pub fn split_holdout(&self, train_fraction: f64) -> Result<(StyleDataset, StyleDataset)> {
        if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
            return Err(Error::InvalidArgument(
                "train fraction must lie in (0, 1)".into(),
            ));
        }
        let mut per_style: Vec<Vec<&(Tensor, usize)>> = vec![Vec::new(); self.num_styles()];
        for s in &self.samples {
            per_style[s.1].push(s);
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for group in per_style {
            let n_train = ((group.len() as f64) * train_fraction).floor() as usize;
            for (i, s) in group.into_iter().enumerate() {
                if i < n_train {
                    train.push(s.clone());
                } else {
                    test.push(s.clone());
                }
            }
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::Data("split leaves an empty half".into()));
        }
        Ok((
            StyleDataset::new(self.style_names.clone(), train)?,
            StyleDataset::new(self.style_names.clone(), test)?,
        ))
    }
}

/// How one epoch is batched.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    /// Base seed; the epoch permutation uses `seed ^ epoch_index`.
    pub seed: u64,
    pub drop_last: bool,
}

impl BatchPlan {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument(
                "batch size must be >= 2 (batchnorm needs batch statistics)".into(),
            ));
        }
        Ok(())
    }
}

/// One epoch of shuffled minibatches: `(images [B, 3, S, S], labels)`.
///
/// The permutation is a pure function of `(plan.seed ^ epoch_index)`, so the
/// same plan and epoch always serve the same batches.
pub fn minibatches(
    dataset: &StyleDataset,
    plan: &BatchPlan,
    epoch_index: u64,
) -> Result<Vec<(Tensor, Vec<usize>)>> {
    plan.validate()?;
    if plan.batch_size > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "batch size {} exceeds dataset size {}",
            plan.batch_size,
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ epoch_index);
    order.shuffle(&mut rng);

    let s = dataset.image_size();
    let mut batches = Vec::new();
    let mut cursor = 0;
    while cursor < order.len() {
        let end = (cursor + plan.batch_size).min(order.len());
        if plan.drop_last && end - cursor < plan.batch_size {
            break;
        }
        let b = end - cursor;
        let mut data = vec![0.0; b * 3 * s * s];
        let mut labels = Vec::with_capacity(b);
        for (bi, &si) in order[cursor..end].iter().enumerate() {
            let (img, style) = dataset.get(si);
            data[bi * 3 * s * s..(bi + 1) * 3 * s * s].copy_from_slice(img.data());
            labels.push(style);
        }
        batches.push((Tensor::from_vec(&[b, 3, s, s], data), labels));
        cursor = end;
    }
    Ok(batches)
}

fn list_sorted(dir: &Path, want_dirs: bool) -> Result<Vec<std::path::PathBuf>> {
    let mut entries = Vec::new();
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let name = entry.file_name();
        if name.to_string_lossy().starts_with('.') {
            continue;
        }
        if path.is_dir() == want_dirs {
            entries.push(path);
        }
    }
    entries.sort();
    Ok(entries)
}

/// Decodes a style-labeled corpus from `root/<style>/<images>`.
///
/// Every image is resized to `target_size` (bilinear) and scaled to
/// `[-1, 1]`. With `augment`, each image additionally contributes its five
/// 90% crops, each resized to the target, for exactly six samples per file.
pub fn ingest_directory(root: &Path, target_size: usize, augment: bool) -> Result<StyleDataset> {
    if target_size < 4 {
        return Err(Error::InvalidArgument("target size must be >= 4".into()));
    }
    let style_dirs = list_sorted(root, true)?;
    if style_dirs.is_empty() {
        return Err(Error::Data(format!(
            "no style subdirectories under {}",
            root.display()
        )));
    }
    let mut style_names = Vec::new();
    let mut files: Vec<(usize, std::path::PathBuf)> = Vec::new();
    for (k, dir) in style_dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let images = list_sorted(dir, false)?;
        if images.is_empty() {
            return Err(Error::Data(format!(
                "style folder {} holds no images",
                dir.display()
            )));
        }
        style_names.push(name);
        files.extend(images.into_iter().map(|p| (k, p)));
    }

    // decode in parallel; order is fixed by the sorted file list
    let decoded: Vec<Result<Vec<(Tensor, usize)>>> = files
        .par_iter()
        .map(|(k, path)| {
            let original = decode_image(path)?;
            let mut out = Vec::with_capacity(if augment { 6 } else { 1 });
            out.push((resize_bilinear(&original, target_size, target_size)?, *k));
            if augment {
                for crop in five_crop(&original)? {
                    out.push((resize_bilinear(&crop, target_size, target_size)?, *k));
                }
            }
            Ok(out)
        })
        .collect();
    let mut samples = Vec::new();
    for group in decoded {
        samples.extend(group?);
    }
    StyleDataset::new(style_names, samples)
}

/// Counts decodable images per style without building the dataset; fails on
/// the first undecodable file, naming it.
pub fn scan_manifest(root: &Path) -> Result<Vec<(String, usize)>> {
    let style_dirs = list_sorted(root, true)?;
    if style_dirs.is_empty() {
        return Err(Error::Data(format!(
            "no style subdirectories under {}",
            root.display()
        )));
    }
    let mut rows = Vec::new();
    for dir in style_dirs {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let images = list_sorted(&dir, false)?;
        if images.is_empty() {
            return Err(Error::Data(format!(
                "style folder {} holds no images",
                dir.display()
            )));
        }
        images
            .par_iter()
            .map(|p| decode_image(p).map(|_| ()))
            .collect::<Result<Vec<()>>>()?;
        rows.push((name, images.len()));
    }
    Ok(rows)
}

/// Renders `(style, count)` rows plus a `Total` row as a fixed-width text
/// table.
pub fn manifest_table(rows: &[(String, usize)]) -> String {
    let name_width = rows
        .iter()
        .map(|(n, _)| n.len())
        .chain(std::iter::once("Style name".len()))
        .max()
        .unwrap_or(10);
    let mut out = String::new();
    out.push_str(&format!("{:<name_width$}  {:>12}\n", "Style name", "Image number"));
    let mut total = 0usize;
    for (name, count) in rows {
        out.push_str(&format!("{name:<name_width$}  {count:>12}\n"));
        total += count;
    }
    out.push_str(&format!("{:<name_width$}  {total:>12}\n", "Total"));
    out
}

/// Writes a dataset to `root/<style>/img_<i>.png`, the layout
/// [`ingest_directory`] reads back.
pub fn write_corpus(dataset: &StyleDataset, root: &Path) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut per_style_counter = vec![0usize; dataset.num_styles()];
    for i in 0..dataset.len() {
        let (img, style) = dataset.get(i);
        let dir = root.join(&dataset.style_names()[style]);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("img_{:05}.png", per_style_counter[style]));
        per_style_counter[style] += 1;
        encode_png(&path, img)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::imageio::pixel_to_unit;

    fn toy_corpus(dir: &Path, styles: &[&str], per_style: usize, size: usize) {
        for (k, name) in styles.iter().enumerate() {
            let sub = dir.join(name);
            std::fs::create_dir_all(&sub).unwrap();
            for i in 0..per_style {
                let img = Tensor::from_fn(&[3, size, size], |j| {
                    pixel_to_unit(((j + k * 31 + i * 7) % 256) as u8)
                });
                encode_png(&sub.join(format!("{i:03}.png")), &img).unwrap();
            }
        }
    }

    #[test]
    fn ingest_two_styles_no_augment() {
        let dir = tempfile::tempdir().unwrap();
        toy_corpus(dir.path(), &["a", "b"], 3, 16);
        let ds = ingest_directory(dir.path(), 16, false).unwrap();
        assert_eq!(ds.num_styles(), 2);
        assert_eq!(ds.len(), 6);
        assert_eq!(
            ds.manifest(),
            vec![("a".to_string(), 3), ("b".to_string(), 3)]
        );
    }

    #[test]
    fn augment_multiplies_by_exactly_six() {
        let dir = tempfile::tempdir().unwrap();
        toy_corpus(dir.path(), &["a", "b"], 3, 16);
        let ds = ingest_directory(dir.path(), 16, true).unwrap();
        assert_eq!(ds.len(), 36);
    }

    #[test]
    fn style_indices_follow_sorted_names() {
        let dir = tempfile::tempdir().unwrap();
        toy_corpus(dir.path(), &["zebra", "apple", "mid"], 1, 16);
        let ds = ingest_directory(dir.path(), 16, false).unwrap();
        assert_eq!(ds.style_names(), &["apple", "mid", "zebra"]);
    }

    #[test]
    fn empty_root_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = ingest_directory(dir.path(), 16, false).unwrap_err();
        assert!(err.to_string().contains("no style subdirectories"));
    }

    #[test]
    fn empty_style_folder_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("empty-style")).unwrap();
        let err = ingest_directory(dir.path(), 16, false).unwrap_err();
        assert!(err.to_string().contains("empty-style"));
    }

    #[test]
    fn undecodable_file_rejected_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("a");
        std::fs::create_dir_all(&sub).unwrap();
        std::fs::write(sub.join("broken.png"), b"not an image").unwrap();
        let err = ingest_directory(dir.path(), 16, false).unwrap_err();
        assert!(err.to_string().contains("broken.png"));
    }

    #[test]
    fn corpus_roundtrip_through_disk_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_style_corpus(3, 4, 16, 11).unwrap();
        write_corpus(&ds, dir.path()).unwrap();
        let back = ingest_directory(dir.path(), 16, false).unwrap();
        assert_eq!(back.len(), ds.len());
        assert_eq!(back.fingerprint(), ds.fingerprint());
    }

    #[test]
    fn minibatch_counts_with_and_without_drop_last() {
        let ds = synth_style_corpus(2, 5, 8, 3).unwrap(); // 10 samples
        let plan = BatchPlan {
            batch_size: 3,
            seed: 1,
            drop_last: true,
        };
        assert_eq!(minibatches(&ds, &plan, 0).unwrap().len(), 3);
        let plan_keep = BatchPlan {
            drop_last: false,
            ..plan
        };
        let batches = minibatches(&ds, &plan_keep, 0).unwrap();
        assert_eq!(batches.len(), 4);
        let served: usize = batches.iter().map(|(_, l)| l.len()).sum();
        assert_eq!(served, 10);
    }

    #[test]
    fn same_seed_and_epoch_serve_identical_batches() {
        let ds = synth_style_corpus(2, 6, 8, 4).unwrap();
        let plan = BatchPlan {
            batch_size: 4,
            seed: 9,
            drop_last: true,
        };
        let a = minibatches(&ds, &plan, 2).unwrap();
        let b = minibatches(&ds, &plan, 2).unwrap();
        for ((ia, la), (ib, lb)) in a.iter().zip(&b) {
            assert_eq!(ia, ib);
            assert_eq!(la, lb);
        }
        let c = minibatches(&ds, &plan, 3).unwrap();
        assert!(a.iter().zip(&c).any(|((ia, _), (ic, _))| ia != ic));
    }

    #[test]
    fn epoch_without_drop_last_is_a_permutation() {
        let ds = synth_style_corpus(2, 7, 8, 5).unwrap(); // 14 samples
        let plan = BatchPlan {
            batch_size: 4,
            seed: 2,
            drop_last: false,
        };
        let batches = minibatches(&ds, &plan, 0).unwrap();
        // collect first-pixel signatures and match them against the dataset
        let mut seen: Vec<(u64, usize)> = Vec::new();
        for (images, labels) in &batches {
            let s = ds.image_size();
            for (bi, &label) in labels.iter().enumerate() {
                let first = images.data()[bi * 3 * s * s];
                seen.push((first.to_bits(), label));
            }
        }
        let mut expected: Vec<(u64, usize)> = (0..ds.len())
            .map(|i| {
                let (img, l) = ds.get(i);
                (img.data()[0].to_bits(), l)
            })
            .collect();
        seen.sort_unstable();
        expected.sort_unstable();
        assert_eq!(seen, expected);
    }

    #[test]
    fn oversized_batch_rejected() {
        let ds = synth_style_corpus(2, 2, 8, 6).unwrap();
        let plan = BatchPlan {
            batch_size: 10,
            seed: 0,
            drop_last: true,
        };
        assert!(minibatches(&ds, &plan, 0).is_err());
    }

    #[test]
    fn split_holdout_is_stratified_and_disjoint() {
        let ds = synth_style_corpus(4, 10, 8, 8).unwrap();
        let (train, test) = ds.split_holdout(0.8).unwrap();
        assert_eq!(train.len(), 32);
        assert_eq!(test.len(), 8);
        assert!(train.manifest().iter().all(|(_, c)| *c == 8));
        assert!(test.manifest().iter().all(|(_, c)| *c == 2));
    }

    #[test]
    fn manifest_table_has_total_row() {
        let rows = vec![("a".to_string(), 3), ("b".to_string(), 3)];
        let table = manifest_table(&rows);
        assert!(table.contains("Total"));
        assert!(table.lines().last().unwrap().contains('6'));
    }

    #[test]
    fn fingerprint_distinguishes_corpora() {
        let a = synth_style_corpus(2, 3, 8, 1).unwrap();
        let b = synth_style_corpus(2, 3, 8, 2).unwrap();
        assert_eq!(a.fingerprint(), synth_style_corpus(2, 3, 8, 1).unwrap().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
