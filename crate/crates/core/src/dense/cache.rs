use std::collections::HashMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use super::TokenEmbeddings;

pub const DEFAULT_CACHE_BUDGET_BYTES: usize = 512 << 20;

const MAGIC: &[u8; 4] = b"REMB";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey {
    pub id: String,
    pub model_id: String,
    pub dim: u32,
}

#[derive(Debug)]
struct Entry {
    emb: Arc<TokenEmbeddings>,
    last_used: AtomicU64,
    bytes: usize,
}

#[derive(Debug, Default)]
struct Inner {
    map: HashMap<CacheKey, Entry>,
    bytes: usize,
}

/// Shared embedding cache with LRU eviction by byte budget.
///
/// Lookups take the read lock and bump an atomic recency stamp; inserts
/// and evictions take the write lock.
#[derive(Debug)]
pub struct EmbeddingCache {
    inner: RwLock<Inner>,
    clock: AtomicU64,
    budget: usize,
}

impl Default for EmbeddingCache {
    fn default() -> Self {
        Self::new(DEFAULT_CACHE_BUDGET_BYTES)
    }
}

impl EmbeddingCache {
    pub fn new(budget_bytes: usize) -> Self {
        Self {
            inner: RwLock::new(Inner::default()),
            clock: AtomicU64::new(0),
            budget: budget_bytes,
        }
    }

    fn tick(&self) -> u64 {
        self.clock.fetch_add(1, Ordering::Relaxed) + 1
    }

    pub fn get(&self, key: &CacheKey) -> Option<Arc<TokenEmbeddings>> {
        let inner = self.inner.read().expect("cache lock");
        inner.map.get(key).map(|e| {
            e.last_used.store(self.tick(), Ordering::Relaxed);
            Arc::clone(&e.emb)
        })
    }

    pub fn insert(&self, key: CacheKey, emb: Arc<TokenEmbeddings>) {
        let bytes = emb.byte_size() + key.model_id.len() + key.id.len();
        let mut inner = self.inner.write().expect("cache lock");
        let stamp = self.tick();
        if let Some(old) = inner.map.insert(
            key,
            Entry {
                emb,
                last_used: AtomicU64::new(stamp),
                bytes,
            },
        ) {
            inner.bytes -= old.bytes;
        }
        inner.bytes += bytes;
        if inner.bytes > self.budget {
            Self::evict(&mut inner, self.budget - self.budget / 10);
        }
    }

    fn evict(inner: &mut Inner, target: usize) {
        let mut order: Vec<(u64, CacheKey)> = inner
            .map
            .iter()
            .map(|(k, e)| (e.last_used.load(Ordering::Relaxed), k.clone()))
            .collect();
        order.sort();
        for (_, k) in order {
            if inner.bytes <= target || inner.map.len() <= 1 {
                break;
            }
            if let Some(e) = inner.map.remove(&k) {
                inner.bytes -= e.bytes;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("cache lock").map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bytes(&self) -> usize {
        self.inner.read().expect("cache lock").bytes
    }

    /// Writes the binary sidecar, entries ordered by key.
    ///
    /// Layout (little endian): `REMB`, u32 version, u64 count, then per entry
    /// u32-length-prefixed id and model id, u32 dim, u32 n_tokens, and
    /// `n_tokens * dim` f64 values.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let inner = self.inner.read().expect("cache lock");
        let mut keys: Vec<&CacheKey> = inner.map.keys().collect();
        keys.sort();
        let tmp = path.with_extension("tmp");
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(keys.len() as u64).to_le_bytes())?;
        for k in keys {
            let emb = &inner.map[k].emb;
            for s in [&k.id, &k.model_id] {
                w.write_all(&(s.len() as u32).to_le_bytes())?;
                w.write_all(s.as_bytes())?;
            }
            w.write_all(&k.dim.to_le_bytes())?;
            w.write_all(&(emb.n_tokens() as u32).to_le_bytes())?;
            for x in emb.raw() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        drop(w);
        fs::rename(tmp, path)
    }

    /// Loads a sidecar written by [`Self::save`].
    pub fn load(path: &Path, budget_bytes: usize) -> std::io::Result<Self> {
        let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
        let mut r = BufReader::new(fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not an embedding cache"));
        }
        if read_u32(&mut r)? != VERSION {
            return Err(bad("unsupported embedding cache version"));
        }
        let count = read_u64(&mut r)?;
        let cache = Self::new(budget_bytes);
        for _ in 0..count {
            let id = read_string(&mut r)?;
            let model_id = read_string(&mut r)?;
            let dim = read_u32(&mut r)?;
            let n = read_u32(&mut r)? as usize;
            if dim == 0 || n == 0 {
                return Err(bad("empty embedding entry"));
            }
            let mut data = vec![0f64; n * dim as usize];
            let mut buf = [0u8; 8];
            for x in &mut data {
                r.read_exact(&mut buf)?;
                *x = f64::from_le_bytes(buf);
            }
            let emb = TokenEmbeddings::from_normalized(id.clone(), dim as usize, data);
            cache.insert(CacheKey { id, model_id, dim }, Arc::new(emb));
        }
        Ok(cache)
    }

    /// Loads `path` if it exists, else starts empty.
    pub fn open(path: &Path, budget_bytes: usize) -> std::io::Result<Self> {
        if path.exists() {
            Self::load(path, budget_bytes)
        } else {
            Ok(Self::new(budget_bytes))
        }
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string(r: &mut impl Read) -> std::io::Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(id: &str) -> CacheKey {
        CacheKey {
            id: id.into(),
            model_id: "m".into(),
            dim: 2,
        }
    }

    fn emb(id: &str) -> Arc<TokenEmbeddings> {
        Arc::new(TokenEmbeddings::from_rows(id, &[[1.0, 2.0], [3.0, -1.0]]).unwrap())
    }

    #[test]
    fn evicts_least_recently_used() {
        let one = emb("a").byte_size() + 2;
        let cache = EmbeddingCache::new(one * 3);
        cache.insert(key("a"), emb("a"));
        cache.insert(key("b"), emb("b"));
        cache.insert(key("c"), emb("c"));
        assert!(cache.get(&key("a")).is_some());
        cache.insert(key("d"), emb("d"));
        assert!(cache.get(&key("b")).is_none(), "b was least recently used");
        assert!(cache.get(&key("a")).is_some());
        assert!(cache.get(&key("d")).is_some());
        assert!(cache.bytes() <= one * 3);
    }

    #[test]
    fn sidecar_round_trip() {
        let cache = EmbeddingCache::default();
        cache.insert(key("x#0"), emb("x#0"));
        cache.insert(key("query:ab"), emb("query:ab"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.bin");
        cache.save(&p).unwrap();
        let back = EmbeddingCache::load(&p, DEFAULT_CACHE_BUDGET_BYTES).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(*back.get(&key("x#0")).unwrap(), *emb("x#0"));
        let again = dir.path().join("emb2.bin");
        back.save(&again).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.bin");
        fs::write(&p, b"nope").unwrap();
        assert!(EmbeddingCache::load(&p, 1 << 20).is_err());
    }
}
