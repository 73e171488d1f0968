//! On-disk index format.
//!
//! An index directory holds one little-endian binary file per table plus
//! `manifest.json`. Every binary file starts with an 8-byte magic and a
//! `u32` format version. Strings live in `strings.bin` and are referenced by
//! `(u64 offset, u32 length)`; a length of `u32::MAX` encodes "absent".
//!
//! | file | record |
//! |------|--------|
//! | `nodes.bin` | kind u8, 3 pad, 3 string refs, raw-form start u32, raw-form count u32 (48 bytes) |
//! | `raw_forms.bin` | string ref (12 bytes) |
//! | `triples.bin` | subject u32, object u32, passage u32, relation string ref (24 bytes) |
//! | `edges.bin` | a u32, b u32, kind u8, 3 pad, weight f64 (20 bytes) |
//! | `{kind}.emb` | dim u32, count u64, then `count * dim` f32 |
//! | `{kind}.ids` | count u64, then `count` u32 |
//!
//! The manifest records SHA-256 checksums of every file; loading verifies
//! them before parsing anything.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{StoreKind, VectorStore};
use crate::error::{Error, Result};
use crate::indexer::{Index, IndexMeta};
use crate::kg::{Edge, EdgeKind, KgConfig, Node, NodeId, OpenKG, Triple, TripleId};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

const NODE_RECORD: usize = 48;
const EDGE_RECORD: usize = 20;
const TRIPLE_RECORD: usize = 24;
const RAW_RECORD: usize = 12;
const ABSENT: u32 = u32::MAX;

const KIND_PHRASE: u8 = 0;
const KIND_PASSAGE: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Providers {
    pub embedder: String,
    pub extractor: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub nodes: usize,
    pub phrases: usize,
    pub passages: usize,
    pub triples: usize,
    pub edges: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub embedding_dim: usize,
    pub synonym_threshold: f64,
    pub collapse_relation_edges: bool,
    pub damping: f64,
    pub passage_weight_factor: f64,
    pub providers: Providers,
    pub passage_embedding_text: String,
    pub triple_embedding_text: String,
    pub counts: Counts,
    /// File name → SHA-256 hex digest.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    /// Short digest identifying the index contents and settings.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn meta(&self) -> IndexMeta {
        IndexMeta {
            embedding_dim: self.embedding_dim,
            synonym_threshold: self.synonym_threshold,
            collapse_relation_edges: self.collapse_relation_edges,
            damping: self.damping,
            passage_weight_factor: self.passage_weight_factor,
            embedder: self.providers.embedder.clone(),
            extractor: self.providers.extractor.clone(),
            passage_embedding_text: self.passage_embedding_text.clone(),
            triple_embedding_text: self.triple_embedding_text.clone(),
        }
    }
}

fn magic(file: &str) -> [u8; 8] {
    let tag: &[u8; 4] = match file {
        "strings.bin" => b"STRS",
        "nodes.bin" => b"NODE",
        "raw_forms.bin" => b"RAWF",
        "triples.bin" => b"TRPL",
        "edges.bin" => b"EDGE",
        f if f.ends_with(".emb") => b"EMBD",
        _ => b"IDSX",
    };
    let mut m = *b"GMEM\0\0\0\0";
    m[4..].copy_from_slice(tag);
    m
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(file: &str) -> Self {
        let mut buf = magic(file).to_vec();
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        Writer { buf }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn pad(&mut self, n: usize) {
        self.buf.extend(std::iter::repeat(0).take(n));
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str_ref(&mut self, r: (u64, u32)) {
        self.u64(r.0);
        self.u32(r.1);
    }
}

#[derive(Default)]
struct StringTable {
    bytes: Vec<u8>,
}

impl StringTable {
    fn add(&mut self, s: &str) -> (u64, u32) {
        let off = self.bytes.len() as u64;
        self.bytes.extend_from_slice(s.as_bytes());
        (off, s.len() as u32)
    }
    fn add_opt(&mut self, s: Option<&str>) -> (u64, u32) {
        s.map_or((0, ABSENT), |s| self.add(s))
    }
}

fn u32_id(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Validation(format!("too many {what} for the index format")))
}

/// Writes `index` to `dir` (created if needed). Output bytes depend only on
/// the index contents.
pub fn save_index(index: &Index, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let kg: &OpenKG = &index.kg;
    let mut strings = StringTable::default();
    let mut nodes = Writer::new("nodes.bin");
    let mut raw = Writer::new("raw_forms.bin");
    let mut raw_count = 0u32;
    for node in kg.nodes() {
        match node {
            Node::Phrase(p) => {
                nodes.u8(KIND_PHRASE);
                nodes.pad(3);
                nodes.str_ref(strings.add(&p.text));
                nodes.str_ref((0, ABSENT));
                nodes.str_ref((0, ABSENT));
                nodes.u32(raw_count);
                nodes.u32(u32_id(p.raw_forms.len(), "raw forms")?);
                for form in &p.raw_forms {
                    raw.str_ref(strings.add(form));
                    raw_count += 1;
                }
            }
            Node::Passage(p) => {
                nodes.u8(KIND_PASSAGE);
                nodes.pad(3);
                nodes.str_ref(strings.add(&p.doc_id));
                nodes.str_ref(strings.add_opt(p.title.as_deref()));
                nodes.str_ref(strings.add(&p.text));
                nodes.u32(0);
                nodes.u32(0);
            }
        }
    }
    let mut triples = Writer::new("triples.bin");
    for t in kg.triples() {
        triples.u32(t.subject.0);
        triples.u32(t.object.0);
        triples.u32(t.source_passage.0);
        triples.str_ref(strings.add(&t.relation));
    }
    let mut edges = Writer::new("edges.bin");
    for e in kg.edges() {
        edges.u32(e.a.0);
        edges.u32(e.b.0);
        edges.u8(e.kind.code());
        edges.pad(3);
        edges.f64(e.weight);
    }
    let mut str_file = Writer::new("strings.bin");
    str_file.buf.extend_from_slice(&strings.bytes);

    let mut files: Vec<(String, Vec<u8>)> = vec![
        ("strings.bin".into(), str_file.buf),
        ("nodes.bin".into(), nodes.buf),
        ("raw_forms.bin".into(), raw.buf),
        ("triples.bin".into(), triples.buf),
        ("edges.bin".into(), edges.buf),
    ];
    for store in [&index.phrases, &index.passages, &index.triples] {
        let name = store.kind().name();
        let emb_name = format!("{name}.emb");
        let mut emb = Writer::new(&emb_name);
        emb.u32(u32_id(store.dim(), "dimensions")?);
        emb.u64(store.len() as u64);
        for &v in store.raw_data() {
            emb.f32(v);
        }
        let ids_name = format!("{name}.ids");
        let mut ids = Writer::new(&ids_name);
        ids.u64(store.len() as u64);
        for &id in store.ids() {
            ids.u32(id);
        }
        files.push((emb_name, emb.buf));
        files.push((ids_name, ids.buf));
    }

    let mut checksums = BTreeMap::new();
    for (name, bytes) in &files {
        fs::write(dir.join(name), bytes)?;
        checksums.insert(name.clone(), hex::encode(Sha256::digest(bytes)));
    }
    let stats = kg.stats();
    let meta = &index.meta;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        embedding_dim: meta.embedding_dim,
        synonym_threshold: meta.synonym_threshold,
        collapse_relation_edges: meta.collapse_relation_edges,
        damping: meta.damping,
        passage_weight_factor: meta.passage_weight_factor,
        providers: Providers {
            embedder: meta.embedder.clone(),
            extractor: meta.extractor.clone(),
        },
        passage_embedding_text: meta.passage_embedding_text.clone(),
        triple_embedding_text: meta.triple_embedding_text.clone(),
        counts: Counts {
            nodes: stats.total_nodes,
            phrases: stats.phrase_nodes,
            passages: stats.passage_nodes,
            triples: stats.triples,
            edges: stats.total_edges,
        },
        files: checksums,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    fs::write(dir.join(MANIFEST), json)?;
    Ok(manifest)
}

struct Reader<'a> {
    file: &'a str,
    dir: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(dir: &'a Path, file: &'a str, bytes: &'a [u8]) -> Result<Self> {
        let mut r = Reader { file, dir, bytes, pos: 0 };
        let m = r.take(8)?;
        if m != magic(file) {
            return Err(r.err("bad magic"));
        }
        let v = r.u32()?;
        if v != FORMAT_VERSION {
            return Err(r.err(&format!("format version {v}, expected {FORMAT_VERSION}")));
        }
        Ok(r)
    }
    fn err(&self, reason: &str) -> Error {
        Error::format(self.dir.join(self.file), reason)
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| self.err("truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str_ref(&mut self) -> Result<(u64, u32)> {
        Ok((self.u64()?, self.u32()?))
    }
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
    fn records(&self, size: usize) -> Result<usize> {
        if self.remaining() % size != 0 {
            return Err(self.err("record area is not a whole number of records"));
        }
        Ok(self.remaining() / size)
    }
    fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.err("trailing bytes"));
        }
        Ok(())
    }
}

struct Strings<'a> {
    dir: &'a Path,
    bytes: &'a [u8],
}

impl<'a> Strings<'a> {
    fn get(&self, r: (u64, u32)) -> Result<&'a str> {
        let bad = || Error::format(self.dir.join("strings.bin"), "string reference out of range");
        let start = usize::try_from(r.0).map_err(|_| bad())?;
        let end = start.checked_add(r.1 as usize).ok_or_else(bad)?;
        let bytes = self.bytes.get(start..end).ok_or_else(bad)?;
        std::str::from_utf8(bytes).map_err(|_| Error::format(self.dir.join("strings.bin"), "invalid UTF-8"))
    }
    fn get_opt(&self, r: (u64, u32)) -> Result<Option<&'a str>> {
        if r.1 == ABSENT {
            Ok(None)
        } else {
            self.get(r).map(Some)
        }
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(|e| Error::format(&path, format!("cannot read manifest: {e}")))?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, format!("invalid manifest: {e}")))?;
    let version = value.get("format_version").and_then(|v| v.as_u64());
    if version != Some(FORMAT_VERSION as u64) {
        return Err(Error::format(
            &path,
            format!("format version {version:?}, expected {FORMAT_VERSION}"),
        ));
    }
    serde_json::from_value(value).map_err(|e| Error::format(&path, format!("invalid manifest: {e}")))
}

/// Loads an index written by [`save_index`], verifying checksums, versions
/// and structural invariants. Never returns a partially loaded index.
pub fn load_index(dir: &Path) -> Result<(Index, Manifest)> {
    let manifest = read_manifest(dir)?;
    let mut blobs: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    let required = [
        "strings.bin",
        "nodes.bin",
        "raw_forms.bin",
        "triples.bin",
        "edges.bin",
        "phrase.emb",
        "phrase.ids",
        "passage.emb",
        "passage.ids",
        "triple.emb",
        "triple.ids",
    ];
    for name in required {
        let path = dir.join(name);
        let expected = manifest
            .files
            .get(name)
            .ok_or_else(|| Error::format(dir.join(MANIFEST), format!("no checksum for {name}")))?;
        let bytes = fs::read(&path).map_err(|e| Error::format(&path, format!("cannot read: {e}")))?;
        if &hex::encode(Sha256::digest(&bytes)) != expected {
            return Err(Error::format(&path, "checksum mismatch"));
        }
        blobs.insert(name, bytes);
    }

    let mut sr = Reader::open(dir, "strings.bin", &blobs["strings.bin"])?;
    let strings = Strings {
        dir,
        bytes: sr.take(sr.remaining())?,
    };

    let mut raw = Reader::open(dir, "raw_forms.bin", &blobs["raw_forms.bin"])?;
    let raw_forms: Vec<&str> = (0..raw.records(RAW_RECORD)?)
        .map(|_| raw.str_ref().and_then(|r| strings.get(r)))
        .collect::<Result<_>>()?;

    let config = KgConfig {
        synonym_threshold: manifest.synonym_threshold,
        collapse_relation_edges: manifest.collapse_relation_edges,
    };
    let mut kg = OpenKG::new(config);
    let mut nr = Reader::open(dir, "nodes.bin", &blobs["nodes.bin"])?;
    let n_nodes = nr.records(NODE_RECORD)?;
    let bad_record = |file: &str, reason: String| Error::format(dir.join(file), reason);
    for i in 0..n_nodes {
        let kind = nr.u8()?;
        nr.take(3)?;
        let (s0, s1, s2) = (nr.str_ref()?, nr.str_ref()?, nr.str_ref()?);
        let (raw_start, raw_len) = (nr.u32()? as usize, nr.u32()? as usize);
        let id = match kind {
            KIND_PHRASE => {
                let forms = raw_forms
                    .get(raw_start..raw_start + raw_len)
                    .ok_or_else(|| bad_record("nodes.bin", format!("node {i}: raw forms out of range")))?;
                let forms: BTreeSet<String> = forms.iter().map(|s| s.to_string()).collect();
                kg.restore_phrase(strings.get(s0)?, forms)
            }
            KIND_PASSAGE => kg.add_passage(strings.get(s0)?, strings.get_opt(s1)?, strings.get(s2)?),
            k => return Err(bad_record("nodes.bin", format!("node {i}: unknown kind {k}"))),
        }
        .map_err(|e| bad_record("nodes.bin", format!("node {i}: {e}")))?;
        if id.index() != i {
            return Err(bad_record("nodes.bin", format!("node {i} restored as {id}")));
        }
    }
    nr.finish()?;

    let mut tr = Reader::open(dir, "triples.bin", &blobs["triples.bin"])?;
    for i in 0..tr.records(TRIPLE_RECORD)? {
        let (s, o, p) = (tr.u32()?, tr.u32()?, tr.u32()?);
        let relation = strings.get(tr.str_ref()?)?.to_string();
        kg.restore_triple(Triple {
            id: TripleId(i as u32),
            subject: NodeId(s),
            relation,
            object: NodeId(o),
            source_passage: NodeId(p),
        })
        .map_err(|e| bad_record("triples.bin", format!("triple {i}: {e}")))?;
    }

    let mut er = Reader::open(dir, "edges.bin", &blobs["edges.bin"])?;
    for i in 0..er.records(EDGE_RECORD)? {
        let (a, b) = (er.u32()?, er.u32()?);
        let code = er.u8()?;
        er.take(3)?;
        let weight = er.f64()?;
        let kind = EdgeKind::from_code(code).ok_or_else(|| bad_record("edges.bin", format!("edge {i}: kind {code}")))?;
        kg.restore_edge(Edge {
            a: NodeId(a),
            b: NodeId(b),
            kind,
            weight,
        })
        .map_err(|e| bad_record("edges.bin", format!("edge {i}: {e}")))?;
    }

    let stats = kg.stats();
    let c = &manifest.counts;
    if (stats.total_nodes, stats.phrase_nodes, stats.passage_nodes, stats.triples, stats.total_edges)
        != (c.nodes, c.phrases, c.passages, c.triples, c.edges)
    {
        return Err(Error::format(dir.join(MANIFEST), "counts do not match the tables"));
    }

    let load_store = |kind: StoreKind, expected: usize| -> Result<VectorStore> {
        let emb_name = format!("{}.emb", kind.name());
        let ids_name = format!("{}.ids", kind.name());
        let mut er = Reader::open(dir, &emb_name, &blobs[emb_name.as_str()])?;
        let dim = er.u32()? as usize;
        let count = er.u64()? as usize;
        if dim != manifest.embedding_dim {
            return Err(er.err(&format!("dimension {dim}, manifest says {}", manifest.embedding_dim)));
        }
        if count != expected || er.remaining() != count * dim * 4 {
            return Err(er.err("row count mismatch"));
        }
        let data: Vec<f32> = er
            .take(count * dim * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut ir = Reader::open(dir, &ids_name, &blobs[ids_name.as_str()])?;
        if ir.u64()? as usize != count {
            return Err(ir.err("id count mismatch"));
        }
        let ids: Vec<u32> = (0..count).map(|_| ir.u32()).collect::<Result<_>>()?;
        ir.finish()?;
        VectorStore::from_parts(kind, dim, ids, data).map_err(|e| Error::format(dir.join(&emb_name), e.to_string()))
    };
    let phrases = load_store(StoreKind::Phrase, stats.phrase_nodes)?;
    let passages = load_store(StoreKind::Passage, stats.passage_nodes)?;
    let triples = load_store(StoreKind::Triple, stats.triples)?;
    for (store, is_phrase) in [(&phrases, Some(true)), (&passages, Some(false)), (&triples, None)] {
        let ok = store.ids().iter().all(|&id| match is_phrase {
            Some(true) => kg.phrase(NodeId(id)).is_some(),
            Some(false) => kg.passage(NodeId(id)).is_some(),
            None => kg.triple(TripleId(id)).is_some(),
        });
        if !ok {
            return Err(Error::format(
                dir.join(format!("{}.ids", store.kind().name())),
                "id does not reference an item of the right kind",
            ));
        }
    }

    let index = Index {
        kg: kg.freeze(),
        phrases,
        passages,
        triples,
        meta: manifest.meta(),
    };
    Ok((index, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::MockEmbedder;
    use crate::extract::MockExtractor;
    use crate::indexer::{build_index, IndexConfig};
    use crate::synthetic::toy_corpus;
    use std::sync::Arc;

    fn toy_index() -> Index {
        build_index(&toy_corpus(), &IndexConfig::default(), Arc::new(MockEmbedder::default()), Arc::new(MockExtractor))
            .unwrap()
            .0
    }

    #[test]
    fn round_trip_preserves_everything() {
        let index = toy_index();
        let dir = tempfile::tempdir().unwrap();
        let saved = save_index(&index, dir.path()).unwrap();
        let (loaded, manifest) = load_index(dir.path()).unwrap();
        assert_eq!(saved, manifest);
        assert_eq!(loaded.stats(), index.stats());
        assert_eq!(loaded.meta, index.meta);
        assert_eq!(loaded.kg.nodes(), index.kg.nodes());
        assert_eq!(loaded.kg.edges(), index.kg.edges());
        assert_eq!(loaded.kg.triples(), index.kg.triples());
        assert_eq!(loaded.kg.adjacency(), index.kg.adjacency());
        assert_eq!(loaded.phrases, index.phrases);
        assert_eq!(loaded.passages, index.passages);
        assert_eq!(loaded.triples, index.triples);
    }

    #[test]
    fn empty_directory_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_index(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn corruption_and_version_mismatch_are_rejected() {
        let index = toy_index();
        let dir = tempfile::tempdir().unwrap();
        save_index(&index, dir.path()).unwrap();
        let edges = dir.path().join("edges.bin");
        let mut bytes = fs::read(&edges).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        fs::write(&edges, &bytes).unwrap();
        let err = load_index(dir.path()).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");

        save_index(&index, dir.path()).unwrap();
        let m = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&m).unwrap().replace("\"format_version\": 1", "\"format_version\": 99");
        fs::write(&m, text).unwrap();
        let err = load_index(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn deleted_table_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_index(&toy_index(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("triple.ids")).unwrap();
        assert!(matches!(load_index(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn manifest_has_no_volatile_fields() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = save_index(&toy_index(), d1.path()).unwrap();
        let b = save_index(&toy_index(), d2.path()).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(fs::read(d1.path().join(MANIFEST)).unwrap(), fs::read(d2.path().join(MANIFEST)).unwrap());
    }
}
