//! MNIST IDX container (big-endian headers, u8 payload).

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::io::Write;
use std::path::Path;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize, file: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(file, "header truncated"))
}

/// Load an IDX image/label pair. Pixels are scaled to [0,1].
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let img_name = images_path.display().to_string();
    let lbl_name = labels_path.display().to_string();
    let img_bytes = std::fs::read(images_path)?;
    let lbl_bytes = std::fs::read(labels_path)?;

    let magic = read_u32_be(&img_bytes, 0, &img_name)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(
            &img_name,
            format!("bad magic number {:#010x}, expected {:#010x}", magic, IMAGE_MAGIC),
        ));
    }
    let count = read_u32_be(&img_bytes, 4, &img_name)? as usize;
    let rows = read_u32_be(&img_bytes, 8, &img_name)? as usize;
    let cols = read_u32_be(&img_bytes, 12, &img_name)? as usize;
    let expected = 16 + count * rows * cols;
    if img_bytes.len() != expected {
        return Err(Error::format(
            &img_name,
            format!(
                "header promises {} images of {}x{} ({} bytes), file has {} bytes",
                count,
                rows,
                cols,
                expected,
                img_bytes.len()
            ),
        ));
    }

    let magic = read_u32_be(&lbl_bytes, 0, &lbl_name)?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(
            &lbl_name,
            format!("bad magic number {:#010x}, expected {:#010x}", magic, LABEL_MAGIC),
        ));
    }
    let lbl_count = read_u32_be(&lbl_bytes, 4, &lbl_name)? as usize;
    if lbl_bytes.len() != 8 + lbl_count {
        return Err(Error::format(
            &lbl_name,
            format!(
                "header promises {} labels, payload has {}",
                lbl_count,
                lbl_bytes.len().saturating_sub(8)
            ),
        ));
    }
    if lbl_count != count {
        return Err(Error::format(
            &lbl_name,
            format!("{} labels for {} images", lbl_count, count),
        ));
    }

    let data: Vec<f32> = img_bytes[16..].iter().map(|b| *b as f32 / 255.0).collect();
    let labels: Vec<usize> = lbl_bytes[8..].iter().map(|b| *b as usize).collect();
    LabeledDataset::new(Tensor::new(vec![count, 1, rows, cols], data)?, labels)
}

/// Write u8 images in IDX format (`[N, rows, cols]`, values 0..=255).
pub fn write_idx_images(path: &Path, images: &[Vec<u8>], rows: usize, cols: usize) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    f.write_all(&(images.len() as u32).to_be_bytes())?;
    f.write_all(&(rows as u32).to_be_bytes())?;
    f.write_all(&(cols as u32).to_be_bytes())?;
    for img in images {
        debug_assert_eq!(img.len(), rows * cols);
        f.write_all(img)?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&LABEL_MAGIC.to_be_bytes())?;
    f.write_all(&(labels.len() as u32).to_be_bytes())?;
    f.write_all(labels)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = dir.path().join("img");
        let lbls = dir.path().join("lbl");
        let images = vec![vec![0u8; 4], vec![255u8, 0, 128, 51]];
        write_idx_images(&imgs, &images, 2, 2).unwrap();
        write_idx_labels(&lbls, &[7, 3]).unwrap();
        let ds = load_mnist_idx(&imgs, &lbls).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels, vec![7, 3]);
        // all-zero image stays all-zero after scaling
        assert!(ds.sample(0).data().iter().all(|v| *v == 0.0));
        assert_eq!(ds.sample(1).data()[0], 1.0);
        assert_eq!(ds.sample(1).data()[3], 51.0 / 255.0);
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = dir.path().join("img");
        let lbls = dir.path().join("lbl");
        write_idx_images(&imgs, &vec![vec![0u8; 4]; 9], 2, 2).unwrap();
        // header claims 10 items but payload holds 9
        let mut bytes = std::fs::read(&imgs).unwrap();
        bytes[4..8].copy_from_slice(&10u32.to_be_bytes());
        std::fs::write(&imgs, bytes).unwrap();
        write_idx_labels(&lbls, &[0; 9]).unwrap();
        let err = load_mnist_idx(&imgs, &lbls).unwrap_err().to_string();
        assert!(err.contains("promises 10"), "{}", err);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = dir.path().join("img");
        let lbls = dir.path().join("lbl");
        write_idx_images(&imgs, &[vec![0u8; 4]], 2, 2).unwrap();
        let mut bytes = std::fs::read(&imgs).unwrap();
        bytes[3] = 0x55;
        std::fs::write(&imgs, bytes).unwrap();
        write_idx_labels(&lbls, &[0]).unwrap();
        assert!(load_mnist_idx(&imgs, &lbls)
            .unwrap_err()
            .to_string()
            .contains("bad magic"));
    }
}
