//! The on-disk capture format.
//!
//! A capture directory holds `manifest.json` plus one raw tensor file per
//! prompt per role under `prompts/<id>/{q,k,v}.bin`. Tensors are raw
//! little-endian 32-bit floats in `[layer][head][token][dim]` order, so any
//! ML framework can export them with a few lines and any systems language
//! can read them back without dependencies. The manifest is versioned and
//! every declared byte length must match the file on disk exactly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use blindsight_core::attention::HeadTensor;
use blindsight_core::layout::TokenLayout;
use blindsight_core::PromptCapture;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CAPTURE_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid manifest: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("manifest version {found}, this reader supports {CAPTURE_VERSION}")]
    VersionMismatch { found: u32 },
    #[error("prompt {prompt}: unsupported dtype {found:?}, expected \"f32\"")]
    UnsupportedDtype { prompt: String, found: String },
    #[error("prompt {prompt}: unsupported byte order {found:?}, expected \"little\"")]
    UnsupportedByteOrder { prompt: String, found: String },
    #[error("prompt {prompt}: {detail}")]
    ShapeMismatch { prompt: String, detail: String },
    #[error("{path}: truncated tensor file: {actual} bytes on disk, {expected} declared")]
    Truncated { path: PathBuf, expected: u64, actual: u64 },
    #[error("{path}: tensor file has {actual} bytes, {expected} declared")]
    LengthMismatch { path: PathBuf, expected: u64, actual: u64 },
    #[error("prompt {prompt}: non-finite value in {role}.bin at element {index}")]
    NonFinite { prompt: String, role: &'static str, index: usize },
    #[error("refusing to overwrite existing capture at {path} (pass --force to allow)")]
    AlreadyExists { path: PathBuf },
    #[error("prompt {prompt}: {detail}")]
    InvalidPrompt { prompt: String, detail: String },
}

impl CaptureError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CaptureError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub name: String,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorFiles {
    pub q: String,
    pub k: String,
    pub v: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub id: String,
    pub layout: TokenLayout,
    /// `[layers, heads, seq_len, head_dim]`.
    pub shape: [usize; 4],
    pub dtype: String,
    pub byte_order: String,
    pub files: TensorFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureManifest {
    pub version: u32,
    pub model: ModelMeta,
    pub prompts: Vec<PromptEntry>,
}

/// Streaming reader: the manifest is parsed up front, tensors load one
/// prompt at a time.
#[derive(Debug)]
pub struct CaptureReader {
    dir: PathBuf,
    manifest: CaptureManifest,
}

impl CaptureReader {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, CaptureError> {
        let dir = dir.as_ref().to_path_buf();
        let manifest_path = dir.join(MANIFEST_NAME);
        let raw = fs::read_to_string(&manifest_path)
            .map_err(|e| CaptureError::io(&manifest_path, e))?;
        let manifest: CaptureManifest = serde_json::from_str(&raw)
            .map_err(|e| CaptureError::Manifest { path: manifest_path, source: e })?;
        if manifest.version != CAPTURE_VERSION {
            return Err(CaptureError::VersionMismatch { found: manifest.version });
        }
        Ok(CaptureReader { dir, manifest })
    }

    pub fn manifest(&self) -> &CaptureManifest {
        &self.manifest
    }

    pub fn model(&self) -> &ModelMeta {
        &self.manifest.model
    }

    pub fn prompt_count(&self) -> usize {
        self.manifest.prompts.len()
    }

    /// Layouts without touching tensor data.
    pub fn layouts(&self) -> Vec<(String, TokenLayout)> {
        self.manifest
            .prompts
            .iter()
            .map(|p| (p.id.clone(), p.layout.clone()))
            .collect()
    }

    pub fn prompts(&self) -> impl Iterator<Item = Result<PromptCapture, CaptureError>> + '_ {
        self.manifest.prompts.iter().map(move |entry| self.load_prompt(entry))
    }

    fn load_prompt(&self, entry: &PromptEntry) -> Result<PromptCapture, CaptureError> {
        let model = &self.manifest.model;
        let [layers, heads, seq_len, head_dim] = entry.shape;
        if entry.dtype != "f32" {
            return Err(CaptureError::UnsupportedDtype {
                prompt: entry.id.clone(),
                found: entry.dtype.clone(),
            });
        }
        if entry.byte_order != "little" {
            return Err(CaptureError::UnsupportedByteOrder {
                prompt: entry.id.clone(),
                found: entry.byte_order.clone(),
            });
        }
        if layers != model.layers || heads != model.heads || head_dim != model.head_dim {
            return Err(CaptureError::ShapeMismatch {
                prompt: entry.id.clone(),
                detail: format!(
                    "shape [{layers}, {heads}, {seq_len}, {head_dim}] disagrees with model \
                     ({} layers, {} heads, head_dim {})",
                    model.layers, model.heads, model.head_dim
                ),
            });
        }
        if seq_len != entry.layout.seq_len() {
            return Err(CaptureError::ShapeMismatch {
                prompt: entry.id.clone(),
                detail: format!(
                    "shape seq_len {seq_len} disagrees with layout seq_len {}",
                    entry.layout.seq_len()
                ),
            });
        }
        let roles = [("q", &entry.files.q), ("k", &entry.files.k), ("v", &entry.files.v)];
        let mut tensors: Vec<Vec<HeadTensor>> = Vec::with_capacity(3);
        for (role, rel) in roles {
            let path = self.dir.join(rel);
            let values = read_f32_file(&path, entry, role)?;
            tensors.push(split_heads(values, entry, role, layers, heads, seq_len, head_dim)?);
        }
        let v = tensors.pop().unwrap();
        let k = tensors.pop().unwrap();
        let q = tensors.pop().unwrap();
        PromptCapture::new(
            entry.id.clone(),
            entry.layout.clone(),
            layers,
            heads,
            head_dim,
            q,
            k,
            v,
        )
        .map_err(|e| CaptureError::InvalidPrompt {
            prompt: entry.id.clone(),
            detail: e.to_string(),
        })
    }
}

fn read_f32_file(
    path: &Path,
    entry: &PromptEntry,
    role: &'static str,
) -> Result<Vec<f32>, CaptureError> {
    let [layers, heads, seq_len, head_dim] = entry.shape;
    let expected = 4 * (layers * heads * seq_len * head_dim) as u64;
    let bytes = fs::read(path).map_err(|e| CaptureError::io(path, e))?;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(CaptureError::Truncated { path: path.to_path_buf(), expected, actual });
    }
    if actual > expected {
        return Err(CaptureError::LengthMismatch { path: path.to_path_buf(), expected, actual });
    }
    let mut values = Vec::with_capacity(bytes.len() / 4);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let x = f32::from_le_bytes(chunk.try_into().unwrap());
        if !x.is_finite() {
            return Err(CaptureError::NonFinite { prompt: entry.id.clone(), role, index: i });
        }
        values.push(x);
    }
    Ok(values)
}

fn split_heads(
    values: Vec<f32>,
    entry: &PromptEntry,
    role: &'static str,
    layers: usize,
    heads: usize,
    seq_len: usize,
    head_dim: usize,
) -> Result<Vec<HeadTensor>, CaptureError> {
    let per_head = seq_len * head_dim;
    let mut out = Vec::with_capacity(layers * heads);
    for i in 0..layers * heads {
        let slice = values[i * per_head..(i + 1) * per_head].to_vec();
        let tensor = HeadTensor::new(seq_len, head_dim, slice).map_err(|e| {
            CaptureError::InvalidPrompt {
                prompt: entry.id.clone(),
                detail: format!("{role} head {i}: {e}"),
            }
        })?;
        out.push(tensor);
    }
    Ok(out)
}

/// Incremental capture writer; prompts stream to disk as they are added.
pub struct CaptureWriter {
    dir: PathBuf,
    model: ModelMeta,
    prompts: Vec<PromptEntry>,
}

impl CaptureWriter {
    /// Refuses a directory that already contains a manifest unless
    /// `overwrite` is set.
    pub fn create(
        dir: impl AsRef<Path>,
        model: ModelMeta,
        overwrite: bool,
    ) -> Result<Self, CaptureError> {
        let dir = dir.as_ref().to_path_buf();
        let manifest_path = dir.join(MANIFEST_NAME);
        if manifest_path.exists() && !overwrite {
            return Err(CaptureError::AlreadyExists { path: manifest_path });
        }
        fs::create_dir_all(&dir).map_err(|e| CaptureError::io(&dir, e))?;
        Ok(CaptureWriter { dir, model, prompts: Vec::new() })
    }

    pub fn add_prompt(&mut self, capture: &PromptCapture) -> Result<(), CaptureError> {
        let model = &self.model;
        if capture.layers() != model.layers
            || capture.heads() != model.heads
            || capture.head_dim() != model.head_dim
        {
            return Err(CaptureError::ShapeMismatch {
                prompt: capture.prompt_id.clone(),
                detail: format!(
                    "capture is {}x{} head_dim {}, writer expects {}x{} head_dim {}",
                    capture.layers(),
                    capture.heads(),
                    capture.head_dim(),
                    model.layers,
                    model.heads,
                    model.head_dim
                ),
            });
        }
        let rel_dir = Path::new("prompts").join(&capture.prompt_id);
        let abs_dir = self.dir.join(&rel_dir);
        fs::create_dir_all(&abs_dir).map_err(|e| CaptureError::io(&abs_dir, e))?;

        let mut files = Vec::with_capacity(3);
        for role in ["q", "k", "v"] {
            let rel = rel_dir.join(format!("{role}.bin"));
            let abs = self.dir.join(&rel);
            let mut file = fs::File::create(&abs).map_err(|e| CaptureError::io(&abs, e))?;
            for layer in 0..capture.layers() {
                for head in 0..capture.heads() {
                    let (q, k, v) = capture.head(layer, head);
                    let tensor = match role {
                        "q" => q,
                        "k" => k,
                        _ => v,
                    };
                    let mut bytes = Vec::with_capacity(tensor.data().len() * 4);
                    for x in tensor.data() {
                        bytes.extend_from_slice(&x.to_le_bytes());
                    }
                    file.write_all(&bytes).map_err(|e| CaptureError::io(&abs, e))?;
                }
            }
            files.push(rel.to_string_lossy().replace('\\', "/"));
        }
        self.prompts.push(PromptEntry {
            id: capture.prompt_id.clone(),
            layout: capture.layout.clone(),
            shape: [
                capture.layers(),
                capture.heads(),
                capture.seq_len(),
                capture.head_dim(),
            ],
            dtype: "f32".into(),
            byte_order: "little".into(),
            files: TensorFiles {
                q: files[0].clone(),
                k: files[1].clone(),
                v: files[2].clone(),
            },
        });
        Ok(())
    }

    pub fn finish(self) -> Result<CaptureManifest, CaptureError> {
        let manifest = CaptureManifest {
            version: CAPTURE_VERSION,
            model: self.model,
            prompts: self.prompts,
        };
        let path = self.dir.join(MANIFEST_NAME);
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(|e| CaptureError::io(&path, e))?;
        Ok(manifest)
    }
}

/// Write a whole capture set at once.
pub fn save_capture(
    prompts: &[PromptCapture],
    model_name: &str,
    dir: impl AsRef<Path>,
    overwrite: bool,
) -> Result<CaptureManifest, CaptureError> {
    let model = match prompts.first() {
        Some(p) => ModelMeta {
            name: model_name.into(),
            layers: p.layers(),
            heads: p.heads(),
            head_dim: p.head_dim(),
        },
        None => ModelMeta { name: model_name.into(), layers: 0, heads: 0, head_dim: 0 },
    };
    let mut writer = CaptureWriter::create(dir, model, overwrite)?;
    for prompt in prompts {
        writer.add_prompt(prompt)?;
    }
    writer.finish()
}
