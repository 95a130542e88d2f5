//! Bit-exact on-disk format for a trained system.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic "BMVR" | version u16 | flags u8 | reserved u8
//! places u32 | neurons u32 | models u32 | kernel_width u32
//! baseline_dropout f32 | merger_dropout f32 | base_seed u64
//! classifier seeds: models x u64
//! per classifier: fc1 bits (2048*a/8 bytes), fc2 bits (2048*a*N/8 bytes)
//! if flags bit 0: per classifier latents, fc1 then fc2, as f32
//! merger kernel (q*w f32), merger dense ((N+1-w)*N f32)
//! crc32 of everything above
//! ```
//!
//! Packed weights serialize tightly (no per-row word padding), so the file
//! size is exactly the closed-form byte count in [`serialized_len`]. Files
//! are written atomically: temp file in the target directory, then rename.

use std::path::Path;

use crate::baseline::FrozenBaseline;
use crate::error::{Error, Result};
use crate::gray::IMAGE_PIXELS;
use crate::merger::MergerNet;
use crate::nn::{PackedBits, RealMatrix};
use crate::pipeline::{SystemConfig, VprSystem};

pub const MAGIC: [u8; 4] = *b"BMVR";
pub const FORMAT_VERSION: u16 = 1;
const FLAG_LATENTS: u8 = 1;

/// Exact byte length [`save_system`] will produce for this system.
pub fn serialized_len(system: &VprSystem) -> u64 {
    let q = system.models() as u64;
    let a = system.config().neurons as u64;
    let n = system.places() as u64;
    let w = system.config().kernel_width as u64;
    let l = n + 1 - w;
    let header = 40 + 8 * q;
    let packed = q * ((IMAGE_PIXELS as u64 * a).div_ceil(8) + (IMAGE_PIXELS as u64 * a * n).div_ceil(8));
    let latents = if system.classifiers().iter().all(FrozenBaseline::has_latents) {
        q * 4 * (IMAGE_PIXELS as u64 * a + IMAGE_PIXELS as u64 * a * n)
    } else {
        0
    };
    let merger = 4 * (q * w + l * n);
    header + packed + latents + merger + 4
}

/// Serializes the system; see the module docs for the layout.
pub fn to_bytes(system: &VprSystem) -> Vec<u8> {
    let config = system.config();
    let with_latents = system.classifiers().iter().all(FrozenBaseline::has_latents);
    let mut out = Vec::with_capacity(serialized_len(system) as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(if with_latents { FLAG_LATENTS } else { 0 });
    out.push(0);
    out.extend_from_slice(&(system.places() as u32).to_le_bytes());
    out.extend_from_slice(&(config.neurons as u32).to_le_bytes());
    out.extend_from_slice(&(system.models() as u32).to_le_bytes());
    out.extend_from_slice(&(config.kernel_width as u32).to_le_bytes());
    out.extend_from_slice(&(config.baseline_dropout as f32).to_le_bytes());
    out.extend_from_slice(&(config.merger_dropout as f32).to_le_bytes());
    out.extend_from_slice(&config.base_seed.to_le_bytes());
    for c in system.classifiers() {
        out.extend_from_slice(&c.seed().to_le_bytes());
    }
    for c in system.classifiers() {
        out.extend_from_slice(&c.fc1_bits().tight_bytes());
        out.extend_from_slice(&c.fc2_bits().tight_bytes());
    }
    if with_latents {
        for c in system.classifiers() {
            let latents = c.latents.as_ref().expect("checked above");
            for &v in &latents.fc1 {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for &v in &latents.fc2 {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    for &v in system.merger().theta().as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &v in system.merger().dense().as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Writes the model file atomically and returns its byte length.
pub fn save_system(system: &VprSystem, path: &Path) -> Result<u64> {
    let bytes = to_bytes(system);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|source| Error::Io {
        path: tmp.clone(),
        source,
    })?;
    std::fs::rename(&tmp, path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(bytes.len() as u64)
}

pub fn load_system(path: &Path) -> Result<VprSystem> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes)
}

pub fn from_bytes(bytes: &[u8]) -> Result<VprSystem> {
    if bytes.len() < 12 {
        return Err(Error::MalformedModel("file shorter than the header".into()));
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::BadVersion(version));
    }
    let (payload, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32(payload) != stored {
        return Err(Error::ChecksumMismatch);
    }

    let mut r = Reader {
        bytes: payload,
        pos: 6,
    };
    let flags = r.take_u8()?;
    let _reserved = r.take_u8()?;
    let places = r.take_u32()? as usize;
    let neurons = r.take_u32()? as usize;
    let models = r.take_u32()? as usize;
    let kernel_width = r.take_u32()? as usize;
    let baseline_dropout = r.take_f32()? as f64;
    let merger_dropout = r.take_f32()? as f64;
    let base_seed = r.take_u64()?;
    if places == 0 || neurons == 0 || models == 0 {
        return Err(Error::MalformedModel("zero-sized dimensions".into()));
    }
    if kernel_width == 0 || kernel_width > places {
        return Err(Error::MalformedModel(format!(
            "kernel width {kernel_width} out of range for {places} places"
        )));
    }
    let with_latents = flags & FLAG_LATENTS != 0;
    let seeds: Vec<u64> = (0..models)
        .map(|_| r.take_u64())
        .collect::<Result<_>>()?;

    let b = IMAGE_PIXELS * neurons;
    let mut packed = Vec::with_capacity(models);
    for _ in 0..models {
        let fc1 = PackedBits::from_tight_bytes(IMAGE_PIXELS, neurons, r.take((IMAGE_PIXELS * neurons).div_ceil(8))?)?;
        let fc2 = PackedBits::from_tight_bytes(b, places, r.take((b * places).div_ceil(8))?)?;
        packed.push((fc1, fc2));
    }
    let mut latents = Vec::new();
    if with_latents {
        for _ in 0..models {
            let fc1 = r.take_f32_vec(IMAGE_PIXELS * neurons)?;
            let fc2 = r.take_f32_vec(b * places)?;
            latents.push((fc1, fc2));
        }
    }
    let l = places + 1 - kernel_width;
    let theta_raw = r.take_f32_vec(models * kernel_width)?;
    let dense_raw = r.take_f32_vec(l * places)?;
    r.expect_end()?;

    let classifiers: Vec<FrozenBaseline> = packed
        .into_iter()
        .enumerate()
        .map(|(m, (fc1, fc2))| {
            let lat = with_latents.then(|| {
                let (fc1_lat, fc2_lat) = latents[m].clone();
                crate::baseline::FrozenLatents {
                    fc1: fc1_lat,
                    fc2: fc2_lat,
                }
            });
            FrozenBaseline::from_parts(neurons, places, seeds[m], fc1, fc2, lat)
        })
        .collect::<Result<_>>()?;

    let theta = RealMatrix::from_vec(
        models,
        kernel_width,
        theta_raw.into_iter().map(|v| v as f64).collect(),
    );
    let dense = RealMatrix::from_vec(l, places, dense_raw.into_iter().map(|v| v as f64).collect());
    let merger = MergerNet::from_parts(models, kernel_width, places, merger_dropout, theta, dense)?;

    let config = SystemConfig {
        neurons,
        baseline_dropout,
        models,
        kernel_width,
        merger_dropout,
        base_seed,
        retain_latents: with_latents,
        ..SystemConfig::default()
    };
    VprSystem::from_parts(classifiers, merger, config)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.bytes.len() {
            return Err(Error::MalformedModel(format!(
                "unexpected end of file at offset {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn take_u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn take_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn take_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn take_f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn take_f32_vec(&mut self, len: usize) -> Result<Vec<f32>> {
        let raw = self.take(4 * len)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn expect_end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::MalformedModel(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// CRC-32 (IEEE 802.3, reflected, polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    const TABLE: [u32; 256] = crc_table();
    let mut crc = !0u32;
    for &b in bytes {
        crc = (crc >> 8) ^ TABLE[((crc ^ b as u32) & 0xFF) as usize];
    }
    !crc
}

const fn crc_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gray::GrayImage;
    use crate::nn::Rng;

    fn small_system(retain_latents: bool) -> VprSystem {
        let trav = crate::synth::synthetic_traversal(8, 40);
        let config = SystemConfig {
            neurons: 3,
            baseline_epochs: 8,
            merger_epochs: 8,
            copies_per_frame: 2,
            base_seed: 5,
            retain_latents,
            ..SystemConfig::default()
        };
        crate::pipeline::train_system(&trav, &config).unwrap().0
    }

    #[test]
    fn crc32_known_vector() {
        // The canonical check value for "123456789".
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32(b""), 0);
    }

    #[test]
    fn round_trip_preserves_predictions_exactly() {
        let system = small_system(false);
        let bytes = to_bytes(&system);
        assert_eq!(bytes.len() as u64, serialized_len(&system));
        let loaded = from_bytes(&bytes).unwrap();
        let mut rng = Rng::new(17);
        for _ in 0..100 {
            let img = GrayImage::from_fn(|_, _| rng.next_f64());
            let (p1, c1, _) = system.predict(&img).unwrap();
            let (p2, c2, _) = loaded.predict(&img).unwrap();
            assert_eq!(p1, p2);
            assert_eq!(c1, c2);
        }
        // Re-serialization is byte-identical.
        assert_eq!(to_bytes(&loaded), bytes);
    }

    #[test]
    fn latent_round_trip_restores_trainable_classifiers() {
        let system = small_system(true);
        let bytes = to_bytes(&system);
        assert_eq!(bytes.len() as u64, serialized_len(&system));
        let loaded = from_bytes(&bytes).unwrap();
        let thawed = loaded.classifiers()[0].thaw(0.75, 10).unwrap();
        assert_eq!(thawed.fc1().packed(), system.classifiers()[0].fc1_bits());
        assert_eq!(thawed.fc2().packed(), system.classifiers()[0].fc2_bits());
    }

    #[test]
    fn truncation_is_a_checksum_error() {
        let system = small_system(false);
        let bytes = to_bytes(&system);
        for cut in [bytes.len() - 1, bytes.len() - 17, bytes.len() / 2, 13] {
            let err = from_bytes(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, Error::ChecksumMismatch),
                "cut at {cut}: {err:?}"
            );
        }
    }

    #[test]
    fn bad_magic_version_and_checksum_are_distinct_errors() {
        let system = small_system(false);
        let good = to_bytes(&system);

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(from_bytes(&bad_magic), Err(Error::BadMagic)));

        let mut bad_version = good.clone();
        bad_version[4] = 0xFF;
        assert!(matches!(
            from_bytes(&bad_version),
            Err(Error::BadVersion(_))
        ));

        let mut flipped = good.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x40;
        assert!(matches!(
            from_bytes(&flipped),
            Err(Error::ChecksumMismatch)
        ));
    }

    #[test]
    fn file_size_matches_closed_form() {
        let system = small_system(false);
        let q = system.models() as u64;
        let a = system.config().neurons as u64;
        let n = system.places() as u64;
        let w = system.config().kernel_width as u64;
        let expected = (40 + 8 * q)
            + q * (2048 * a / 8 + 2048 * a * n / 8)
            + 4 * (q * w + (n + 1 - w) * n)
            + 4;
        assert_eq!(serialized_len(&system), expected);
        assert_eq!(to_bytes(&system).len() as u64, expected);
    }

    #[test]
    fn save_is_atomic_and_loads_back() {
        let system = small_system(false);
        let dir = std::env::temp_dir().join(format!("bmvr-model-test-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.bmvr");
        let written = save_system(&system, &path).unwrap();
        assert_eq!(written, std::fs::metadata(&path).unwrap().len());
        assert!(!path.with_extension("tmp").exists());
        let loaded = load_system(&path).unwrap();
        assert_eq!(loaded.places(), system.places());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
