//! Weight archives: a JSON manifest followed by named float32 arrays.
//!
//! Layout on disk, all integers little-endian:
//!
//! ```text
//! 8 bytes   magic "FOGWGT01"
//! 4 bytes   manifest length N (u32)
//! N bytes   manifest JSON (UTF-8)
//! rest      concatenated float32 values, one run per manifest layer,
//!           in manifest order
//! ```
//!
//! The manifest carries the full architecture configuration, so a load
//! needs no side information, plus a hash over the architecture that makes
//! tampered or mismatched files fail loudly. Weights are stored at 32-bit
//! precision; scores after a round trip match the original model to 1e-6.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::fnv1a_str;

use super::{FogTransformer, FogTransformerConfig};

const MAGIC: &[u8; 8] = b"FOGWGT01";

/// Everything the archive knows about the model besides the raw values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    /// Model family tag.
    pub model: String,
    /// Hash over the architecture (config + layer names and shapes).
    pub spec_hash: String,
    /// Seed the weights were originally initialized from.
    pub creation_seed: u64,
    pub config: FogTransformerConfig,
    pub layers: Vec<ManifestLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestLayer {
    pub name: String,
    pub shape: Vec<usize>,
}

fn integrity(path: &Path, message: impl Into<String>) -> Error {
    Error::ArchiveIntegrity {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Architecture fingerprint: stable across runs and platforms, sensitive to
/// any config or layout change.
fn spec_hash(config: &FogTransformerConfig, layers: &[ManifestLayer]) -> String {
    let canonical = serde_json::to_string(&(config, layers)).expect("plain data serializes");
    format!("{:016x}", fnv1a_str(&canonical))
}

fn manifest_for(model: &FogTransformer, creation_seed: u64) -> ArchiveManifest {
    let layers: Vec<ManifestLayer> = model
        .tensors()
        .iter()
        .map(|t| ManifestLayer {
            name: t.name.clone(),
            shape: t.shape.clone(),
        })
        .collect();
    ArchiveManifest {
        model: "fog-transformer".to_string(),
        spec_hash: spec_hash(model.config(), &layers),
        creation_seed,
        config: model.config().clone(),
        layers,
    }
}

/// Writes the model's weights to `path`, rounding to 32-bit floats.
pub fn save_weights(
    model: &FogTransformer,
    params: &[f64],
    creation_seed: u64,
    path: &Path,
) -> Result<()> {
    if params.len() != model.tensors().iter().map(super::TensorSpec::len).sum::<usize>() {
        return Err(Error::validation(format!(
            "parameter vector of {} values does not match the model layout",
            params.len()
        )));
    }
    let manifest = manifest_for(model, creation_seed);
    let manifest_json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let manifest_len = u32::try_from(manifest_json.len())
        .map_err(|_| Error::validation("manifest too large for archive header"))?;

    let io_err = |e: std::io::Error| Error::io(path, e);
    let file = fs::File::create(path).map_err(io_err)?;
    let mut out = std::io::BufWriter::new(file);
    let body = |out: &mut std::io::BufWriter<fs::File>| -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&manifest_len.to_le_bytes())?;
        out.write_all(&manifest_json)?;
        for &v in params {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
        out.flush()
    };
    body(&mut out).map_err(io_err)
}

/// Reads an archive back into a model and its weights.
///
/// Any structural damage (bad magic, malformed manifest, hash mismatch,
/// wrong byte count, non-finite values) is an integrity error; I/O problems
/// stay I/O errors.
pub fn load_weights(path: &Path) -> Result<(FogTransformer, Vec<f64>, ArchiveManifest)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(integrity(path, "not a weight archive (bad magic)"));
    }
    let len_bytes: [u8; 4] = bytes[8..12].try_into().expect("sliced four bytes");
    let manifest_len = u32::from_le_bytes(len_bytes) as usize;
    let manifest_end = 12usize.checked_add(manifest_len).filter(|&e| e <= bytes.len());
    let Some(manifest_end) = manifest_end else {
        return Err(integrity(path, "manifest length exceeds file size"));
    };
    let manifest: ArchiveManifest = serde_json::from_slice(&bytes[12..manifest_end])
        .map_err(|e| integrity(path, format!("malformed manifest: {e}")))?;

    let model = FogTransformer::new(manifest.config.clone())
        .map_err(|e| integrity(path, format!("manifest carries an invalid model: {e}")))?;
    let expected_layers: Vec<ManifestLayer> = model
        .tensors()
        .iter()
        .map(|t| ManifestLayer {
            name: t.name.clone(),
            shape: t.shape.clone(),
        })
        .collect();
    if manifest.layers != expected_layers {
        return Err(integrity(
            path,
            "manifest layers disagree with the declared architecture",
        ));
    }
    let expected_hash = spec_hash(&manifest.config, &manifest.layers);
    if manifest.spec_hash != expected_hash {
        return Err(integrity(
            path,
            format!(
                "architecture hash mismatch: manifest says {}, computed {expected_hash}",
                manifest.spec_hash
            ),
        ));
    }

    let n_values: usize = manifest.layers.iter().map(|l| l.shape.iter().product::<usize>()).sum();
    let payload = &bytes[manifest_end..];
    if payload.len() != n_values * 4 {
        return Err(integrity(
            path,
            format!(
                "expected {} weight bytes, found {} (truncated or padded archive)",
                n_values * 4,
                payload.len()
            ),
        ));
    }
    let mut params = Vec::with_capacity(n_values);
    for chunk in payload.chunks_exact(4) {
        let raw: [u8; 4] = chunk.try_into().expect("chunked four bytes");
        let v = f32::from_le_bytes(raw);
        if !v.is_finite() {
            return Err(integrity(path, "archive contains a non-finite weight"));
        }
        params.push(f64::from(v));
    }
    Ok((model, params, manifest))
}

/// Loads an archive that must match an already-chosen architecture; a
/// structurally valid archive for a different architecture is a
/// compatibility error, not corruption.
pub fn load_weights_expecting(
    path: &Path,
    expected: &FogTransformerConfig,
) -> Result<(FogTransformer, Vec<f64>)> {
    let (model, params, manifest) = load_weights(path)?;
    if manifest.config != *expected {
        let message = if manifest.config.n_prev != expected.n_prev {
            format!(
                "archive was trained with n_prev = {}, expected {}",
                manifest.config.n_prev, expected.n_prev
            )
        } else {
            "archive architecture differs from the expected one".to_string()
        };
        return Err(Error::ArchiveCompatibility {
            path: path.to_path_buf(),
            message,
        });
    }
    Ok((model, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fogformer::build_fog_transformer;
    use crate::neural::Model;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_inputs(t: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                (0..t * crate::windows::STEP_LEN)
                    .map(|_| rng.gen_range(-2.0..2.0))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn round_trip_preserves_inference_to_a_millionth() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.fog");
        let (model, params) = build_fog_transformer(2, 77).unwrap();
        save_weights(&model, &params, 77, &path).unwrap();
        let (loaded_model, loaded_params, manifest) = load_weights(&path).unwrap();
        assert_eq!(manifest.creation_seed, 77);
        assert_eq!(manifest.model, "fog-transformer");
        assert_eq!(loaded_model.config(), model.config());

        let mut worst = 0.0f64;
        for input in random_inputs(3, 10, 5) {
            let a = model.predict_one(&params, &input);
            let b = loaded_model.predict_one(&loaded_params, &input);
            worst = worst.max((a - b).abs());
        }
        assert!(worst < 1e-6, "round-trip drift {worst}");
    }

    #[test]
    fn expecting_loader_accepts_matching_architecture() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.fog");
        let (model, params) = build_fog_transformer(1, 3).unwrap();
        save_weights(&model, &params, 3, &path).unwrap();
        let expected = FogTransformerConfig::standard(1).unwrap();
        let (_, loaded) = load_weights_expecting(&path, &expected).unwrap();
        assert_eq!(loaded.len(), params.len());
    }

    #[test]
    fn different_history_length_is_a_compatibility_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.fog");
        let (model, params) = build_fog_transformer(1, 3).unwrap();
        save_weights(&model, &params, 3, &path).unwrap();
        let expected = FogTransformerConfig::standard(3).unwrap();
        match load_weights_expecting(&path, &expected) {
            Err(Error::ArchiveCompatibility { message, .. }) => {
                assert!(message.contains("n_prev"), "message: {message}");
            }
            other => panic!("expected a compatibility error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_archive_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.fog");
        let (model, params) = build_fog_transformer(1, 9).unwrap();
        save_weights(&model, &params, 9, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 100);
        std::fs::write(&path, &bytes).unwrap();
        match load_weights(&path) {
            Err(Error::ArchiveIntegrity { message, .. }) => {
                assert!(message.contains("truncated"), "message: {message}");
            }
            other => panic!("expected an integrity error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.fog");
        std::fs::write(&path, b"definitely not a weight archive").unwrap();
        assert!(matches!(
            load_weights(&path),
            Err(Error::ArchiveIntegrity { .. })
        ));
    }

    #[test]
    fn tampered_manifest_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.fog");
        let (model, params) = build_fog_transformer(1, 9).unwrap();
        save_weights(&model, &params, 9, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Flip the stored n_prev inside the manifest JSON; the spec hash no
        // longer matches.
        let json_start = 12;
        let json_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let text = String::from_utf8(bytes[json_start..json_start + json_len].to_vec()).unwrap();
        let pos = text.find("\"n_prev\":1").expect("manifest mentions n_prev");
        bytes[json_start + pos + 9] = b'2';
        std::fs::write(&path, &bytes).unwrap();
        match load_weights(&path) {
            Err(Error::ArchiveIntegrity { message, .. }) => {
                assert!(
                    message.contains("hash") || message.contains("bytes"),
                    "message: {message}"
                );
            }
            other => panic!("expected an integrity error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_weight_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.fog");
        let (model, params) = build_fog_transformer(1, 9).unwrap();
        save_weights(&model, &params, 9, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        // Overwrite the last float with a NaN pattern.
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match load_weights(&path) {
            Err(Error::ArchiveIntegrity { message, .. }) => {
                assert!(message.contains("non-finite"), "message: {message}");
            }
            other => panic!("expected an integrity error, got {other:?}"),
        }
    }

    #[test]
    fn io_failure_is_an_io_error() {
        let missing = Path::new("/nonexistent/dir/weights.fog");
        assert!(matches!(load_weights(missing), Err(Error::Io { .. })));
    }
}
