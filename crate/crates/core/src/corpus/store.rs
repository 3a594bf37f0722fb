use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{CorpusError, Document, MaskedDocument, DEFAULT_PLACEHOLDER};

/// Shared, immutable corpus.
pub type CorpusHandle = Arc<Corpus>;

const STORE_VERSION: u32 = 1;
const STORE_DATA: &str = "corpus.jsonl";
const STORE_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
}

impl FromStr for CorpusFormat {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            _ => Err(CorpusError::UnsupportedFormat(s.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Placeholder assumed for spans whose record omits one.
    pub placeholder: String,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            placeholder: DEFAULT_PLACEHOLDER.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub version: u32,
    pub documents: usize,
    pub masked_documents: usize,
    pub spans: usize,
    pub content_hash: String,
}

/// Validated documents and masked documents, keyed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    documents: BTreeMap<String, Document>,
    masked: BTreeMap<String, MaskedDocument>,
    originals: BTreeMap<String, Vec<String>>,
}

/// Ingests a single corpus file with default options.
pub fn ingest_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<CorpusHandle, CorpusError> {
    Corpus::ingest(&[path.as_ref().to_path_buf()], format, &IngestOptions::default()).map(Arc::new)
}

impl Corpus {
    pub fn ingest(paths: &[PathBuf], format: CorpusFormat, opts: &IngestOptions) -> Result<Self, CorpusError> {
        let CorpusFormat::Jsonl = format;
        let mut builder = CorpusBuilder::default();
        for path in paths {
            let file = fs::File::open(path).map_err(|source| CorpusError::Io {
                path: path.clone(),
                source,
            })?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|source| CorpusError::Io {
                    path: path.clone(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                builder.push_line(&line, path, i + 1, opts)?;
            }
        }
        builder.finish()
    }

    /// Builds a corpus from in-memory records, applying the same validation as ingest.
    pub fn from_records(
        documents: impl IntoIterator<Item = Document>,
        masked: impl IntoIterator<Item = MaskedDocument>,
    ) -> Result<Self, CorpusError> {
        let mut builder = CorpusBuilder::default();
        for d in documents {
            builder.add_document(d)?;
        }
        for m in masked {
            builder.add_masked(m)?;
        }
        builder.finish()
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.documents.values()
    }

    pub fn masked_documents(&self) -> impl Iterator<Item = &MaskedDocument> {
        self.masked.values()
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents.get(doc_id)
    }

    pub fn masked(&self, doc_id: &str) -> Option<&MaskedDocument> {
        self.masked.get(doc_id)
    }

    /// Ids of documents that are the unmasked original of `target`.
    pub fn originals_of(&self, target: &str) -> &[String] {
        self.originals.get(target).map_or(&[], Vec::as_slice)
    }

    pub fn has_originals(&self) -> bool {
        !self.originals.is_empty()
    }

    /// Total record count (documents plus masked documents).
    pub fn len(&self) -> usize {
        self.documents.len() + self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn document_count(&self) -> usize {
        self.documents.len()
    }

    pub fn masked_count(&self) -> usize {
        self.masked.len()
    }

    /// Dataset of a masked document: its own tag, else its original's.
    pub fn dataset_of(&self, target: &str) -> super::Dataset {
        if let Some(d) = self.masked.get(target).and_then(|m| m.dataset) {
            return d;
        }
        self.originals_of(target)
            .first()
            .and_then(|o| self.documents.get(o))
            .map(|d| d.dataset)
            .unwrap_or_default()
    }

    /// Canonical JSONL: documents sorted by id, then masked documents sorted by id.
    pub fn normalized_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for d in self.documents.values() {
            serde_json::to_writer(&mut out, d).expect("documents serialize");
            out.push(b'\n');
        }
        for m in self.masked.values() {
            serde_json::to_writer(&mut out, m).expect("masked documents serialize");
            out.push(b'\n');
        }
        out
    }

    /// SHA-256 of [`Self::normalized_jsonl`], hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.normalized_jsonl()))
    }

    pub fn manifest(&self) -> StoreManifest {
        StoreManifest {
            version: STORE_VERSION,
            documents: self.documents.len(),
            masked_documents: self.masked.len(),
            spans: self.masked.values().map(|m| m.spans.len()).sum(),
            content_hash: self.content_hash(),
        }
    }

    /// Writes the store directory (`manifest.json` + `corpus.jsonl`).
    pub fn persist(&self, dir: &Path) -> Result<StoreManifest, CorpusError> {
        let io = |source| CorpusError::Io {
            path: dir.to_path_buf(),
            source,
        };
        fs::create_dir_all(dir).map_err(io)?;
        let data = self.normalized_jsonl();
        fs::write(dir.join(STORE_DATA), &data).map_err(io)?;
        let manifest = self.manifest();
        let mut f = fs::File::create(dir.join(STORE_MANIFEST)).map_err(io)?;
        serde_json::to_writer_pretty(&mut f, &manifest).expect("manifest serializes");
        f.write_all(b"\n").map_err(io)?;
        Ok(manifest)
    }

    /// Loads a store directory and verifies its content hash.
    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let store_err = |message: String| CorpusError::Store {
            path: dir.to_path_buf(),
            message,
        };
        let raw = fs::read(dir.join(STORE_MANIFEST)).map_err(|source| CorpusError::Io {
            path: dir.join(STORE_MANIFEST),
            source,
        })?;
        let manifest: StoreManifest =
            serde_json::from_slice(&raw).map_err(|e| store_err(format!("bad manifest: {e}")))?;
        if manifest.version != STORE_VERSION {
            return Err(store_err(format!("unsupported store version {}", manifest.version)));
        }
        let corpus = Corpus::ingest(&[dir.join(STORE_DATA)], CorpusFormat::Jsonl, &IngestOptions::default())?;
        let actual = corpus.content_hash();
        if actual != manifest.content_hash {
            return Err(store_err(format!(
                "content hash mismatch: manifest {} vs data {actual}",
                manifest.content_hash
            )));
        }
        Ok(corpus)
    }
}

#[derive(Default)]
struct CorpusBuilder {
    documents: BTreeMap<String, Document>,
    masked: BTreeMap<String, MaskedDocument>,
}

impl CorpusBuilder {
    fn push_line(&mut self, line: &str, path: &Path, lineno: usize, opts: &IngestOptions) -> Result<(), CorpusError> {
        let malformed = |message: String| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let value: Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        if !value.is_object() {
            return Err(malformed("expected a JSON object".into()));
        }
        if value.get("masked_text").is_some() {
            let mut md: MaskedDocument = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
            for span in &mut md.spans {
                if span.placeholder.is_empty() {
                    span.placeholder = opts.placeholder.clone();
                }
            }
            self.add_masked(md)
        } else {
            let doc: Document = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
            self.add_document(doc)
        }
    }

    fn check_unique(&self, id: &str) -> Result<(), CorpusError> {
        if self.documents.contains_key(id) || self.masked.contains_key(id) {
            return Err(CorpusError::DuplicateId(id.to_string()));
        }
        Ok(())
    }

    fn add_document(&mut self, doc: Document) -> Result<(), CorpusError> {
        self.check_unique(&doc.doc_id)?;
        if doc.text.is_empty() {
            return Err(CorpusError::EmptyText(doc.doc_id));
        }
        self.documents.insert(doc.doc_id.clone(), doc);
        Ok(())
    }

    fn add_masked(&mut self, md: MaskedDocument) -> Result<(), CorpusError> {
        self.check_unique(&md.doc_id)?;
        if md.masked_text.is_empty() {
            return Err(CorpusError::EmptyText(md.doc_id));
        }
        md.validate()?;
        self.masked.insert(md.doc_id.clone(), md);
        Ok(())
    }

    fn finish(self) -> Result<Corpus, CorpusError> {
        let mut originals: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for d in self.documents.values() {
            if let Some(target) = &d.is_original_of {
                if !self.masked.contains_key(target) {
                    return Err(CorpusError::DanglingOriginal {
                        doc_id: d.doc_id.clone(),
                        target: target.clone(),
                    });
                }
                originals.entry(target.clone()).or_default().push(d.doc_id.clone());
            }
        }
        Ok(Corpus {
            documents: self.documents,
            masked: self.masked,
            originals,
        })
    }
}
