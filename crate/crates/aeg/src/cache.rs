//! Content-addressed response cache: one file per request digest.

use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use aeg_core::PromptRequest;
use sha2::{Digest, Sha256};

/// SHA-256 over the template, both prompt texts, the image digest and the
/// model id. Temperature is not part of the key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn new(request: &PromptRequest, image_digest: Option<&[u8; 32]>) -> Self {
        let mut h = Sha256::new();
        let mut field = |bytes: &[u8]| {
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        field(request.template.code().as_bytes());
        field(request.system_text.as_bytes());
        field(request.user_text.as_bytes());
        field(image_digest.map(|d| d.as_slice()).unwrap_or_default());
        field(request.model_id.as_bytes());
        Self(hex::encode(h.finalize()))
    }

    pub fn hex(&self) -> &str {
        &self.0
    }
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(key.hex())
    }

    pub fn get(&self, key: &CacheKey) -> Option<String> {
        match fs::read_to_string(self.path(key)) {
            Ok(text) => Some(text),
            Err(e) if e.kind() == ErrorKind::NotFound => None,
            Err(e) => {
                log::warn!("cache read {} failed: {e}", key.hex());
                None
            }
        }
    }

    /// Writes via rename so concurrent writers of one key never leave a
    /// torn file; the last writer wins.
    pub fn put(&self, key: &CacheKey, response: &str) -> std::io::Result<()> {
        fs::create_dir_all(&self.dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(response.as_bytes())?;
        tmp.persist(self.path(key)).map_err(|e| e.error)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use aeg_core::llm::{render_prompt, slots};
    use aeg_core::TemplateId;

    fn req(desc: &str) -> PromptRequest {
        render_prompt(TemplateId::LocalAffordance, &slots(&[("description", desc)]), None).unwrap()
    }

    #[test]
    fn key_depends_on_content_not_temperature() {
        let a = req("a table");
        let mut hot = a.clone();
        hot.temperature = 0.9;
        assert_eq!(CacheKey::new(&a, None), CacheKey::new(&hot, None));
        assert_ne!(CacheKey::new(&a, None), CacheKey::new(&req("a chair"), None));
        assert_ne!(CacheKey::new(&a, None), CacheKey::new(&a, Some(&sha256(b"img"))));
        let mut other_model = a.clone();
        other_model.model_id = "m2".into();
        assert_ne!(CacheKey::new(&a, None), CacheKey::new(&other_model, None));
        assert_eq!(CacheKey::new(&a, None).hex().len(), 64);
    }

    #[test]
    fn put_then_get() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path().join("c"));
        let k = CacheKey::new(&req("x"), None);
        assert_eq!(cache.get(&k), None);
        cache.put(&k, "first").unwrap();
        cache.put(&k, "second").unwrap();
        assert_eq!(cache.get(&k).as_deref(), Some("second"));
        assert_eq!(fs::read_dir(cache.dir()).unwrap().count(), 1);
    }
}
