//! Versioned text snapshots of a whole hierarchy.
//!
//! Layout: a JSON header line, then the sections NODES, EDGES, REPLICAS,
//! REDGES, LABELS and PSI, each introduced by `#SECTION <name> <count>` and
//! holding one JSON record per line in id order, then a `#SHA256 <hex>`
//! trailer over every preceding byte. Floats are written in scientific
//! notation with 17 significant digits, which reads back to the same bits,
//! so load followed by save reproduces the file byte for byte.
//!
//! LABELS starts with one `{"level", "next_label"}` record per level (this is
//! also where the level count comes from), followed by the replica labels.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::cluster::ClusterRegistry;
use crate::config::EngineConfig;
use crate::ego_split::{Replica, ReplicaNetwork};
use crate::embedding::Embedding;
use crate::error::{IntegrityError, SnapshotError};
use crate::graph::{MemoryNode, NodeKind};
use crate::hierarchy::{Level, MemoryHierarchy};
use crate::ids::{ClusterLabel, NodeId, ReplicaId};

pub const FORMAT_VERSION: u64 = 1;

const SECTIONS: [&str; 6] = ["NODES", "EDGES", "REPLICAS", "REDGES", "LABELS", "PSI"];
const TRAILER: &str = "#SHA256 ";

fn num(x: f64) -> Result<String, IntegrityError> {
    if !x.is_finite() {
        return Err(IntegrityError(format!("cannot store non-finite value {x}")));
    }
    Ok(format!("{x:.16e}"))
}

fn string(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

fn id_list<T: ToString>(ids: impl IntoIterator<Item = T>) -> String {
    let items: Vec<String> = ids.into_iter().map(|i| string(&i.to_string())).collect();
    format!("[{}]", items.join(","))
}

fn node_record(n: &MemoryNode) -> Result<String, IntegrityError> {
    let mut out = format!("{{\"id\":{}", string(&n.id.to_string()));
    match &n.kind {
        NodeKind::Chunk { doc_id, seq_index } => {
            write!(out, ",\"kind\":\"chunk\",\"doc_id\":{},\"seq_index\":{seq_index}", string(doc_id)).unwrap();
        }
        NodeKind::Abstraction { members } => {
            write!(out, ",\"kind\":\"abstraction\",\"members\":{}", id_list(members)).unwrap();
        }
    }
    let values: Vec<String> = n.embedding.iter().map(|x| num(*x)).collect::<Result<_, _>>()?;
    write!(out, ",\"text\":{},\"embedding\":[{}]}}", string(&n.text), values.join(",")).unwrap();
    Ok(out)
}

/// Serializes `h` after checking it.
pub fn to_bytes(h: &MemoryHierarchy) -> Result<Vec<u8>, SnapshotError> {
    h.check_consistency()?;
    let mut sections: Vec<Vec<String>> = vec![Vec::new(); SECTIONS.len()];
    for lvl in h.levels() {
        for n in lvl.nodes.values() {
            sections[0].push(node_record(n)?);
        }
        for (u, v, w) in lvl.graph.edges() {
            sections[1].push(format!("{{\"u\":{},\"v\":{},\"w\":{}}}", string(&u.to_string()), string(&v.to_string()), num(w)?));
        }
        for r in lvl.replicas.replicas.values().flatten() {
            sections[2].push(format!("{{\"id\":{},\"component\":{}}}", string(&r.id.to_string()), id_list(&r.component)));
        }
        for (a, b) in lvl.replicas.edges() {
            sections[3].push(format!("{{\"a\":{},\"b\":{}}}", string(&a.to_string()), string(&b.to_string())));
        }
        sections[4].push(format!("{{\"level\":{},\"next_label\":{}}}", lvl.index(), lvl.registry.next_label));
    }
    for lvl in h.levels() {
        for (r, l) in &lvl.replicas.labels {
            sections[4].push(format!("{{\"replica\":{},\"label\":{}}}", string(&r.to_string()), l.0));
        }
    }
    for lvl in h.levels() {
        let psi = h.upward(lvl.index()).map_err(|e| IntegrityError(e.to_string()))?;
        for (v, parents) in &psi.map {
            sections[5].push(format!("{{\"node\":{},\"parents\":{}}}", string(&v.to_string()), id_list(parents)));
        }
    }

    let config = serde_json::to_string(h.config()).expect("config always serializes");
    let mut body = format!("{{\"format_version\":{FORMAT_VERSION},\"config\":{config}}}\n");
    for (name, records) in SECTIONS.iter().zip(&sections) {
        writeln!(body, "#SECTION {name} {}", records.len()).unwrap();
        for r in records {
            body.push_str(r);
            body.push('\n');
        }
    }
    let digest = hex::encode(Sha256::digest(body.as_bytes()));
    body.push_str(TRAILER);
    body.push_str(&digest);
    body.push('\n');
    Ok(body.into_bytes())
}

/// Writes a snapshot next to `path` and renames it into place, so readers
/// never see a partial file.
pub fn save(h: &MemoryHierarchy, path: &Path) -> Result<(), SnapshotError> {
    let bytes = to_bytes(h)?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "snapshot".into());
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let written = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if written.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(written?)
}

pub fn load(path: &Path) -> Result<MemoryHierarchy, SnapshotError> {
    from_bytes(&fs::read(path)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u64,
    config: serde_json::Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: NodeId,
    kind: String,
    #[serde(default)]
    doc_id: Option<String>,
    #[serde(default)]
    seq_index: Option<u64>,
    #[serde(default)]
    members: Option<BTreeSet<NodeId>>,
    text: String,
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeRecord {
    u: NodeId,
    v: NodeId,
    w: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReplicaRecord {
    id: ReplicaId,
    component: BTreeSet<NodeId>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReplicaEdgeRecord {
    a: ReplicaId,
    b: ReplicaId,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LabelRecord {
    Counter { level: u32, next_label: u64 },
    Label { replica: ReplicaId, label: u64 },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PsiRecord {
    node: NodeId,
    parents: BTreeSet<NodeId>,
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str), SnapshotError> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| IntegrityError("snapshot ends early".into()).into())
    }

    fn section<T: for<'de> Deserialize<'de>>(&mut self, name: &str) -> Result<Vec<T>, SnapshotError> {
        let (line, head) = self.next()?;
        let bad = |message: String| SnapshotError::Format { line, message };
        let count: usize = head
            .strip_prefix("#SECTION ")
            .and_then(|rest| rest.strip_prefix(name))
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| bad(format!("expected section {name}")))?
            .parse()
            .map_err(|_| bad("bad record count".into()))?;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let (line, text) = self.next()?;
            out.push(serde_json::from_str(text).map_err(|e| SnapshotError::Format { line, message: e.to_string() })?);
        }
        Ok(out)
    }
}

fn dangling(what: &str, id: impl std::fmt::Display) -> SnapshotError {
    IntegrityError(format!("{what} refers to unknown {id}")).into()
}

pub fn from_bytes(bytes: &[u8]) -> Result<MemoryHierarchy, SnapshotError> {
    let text = std::str::from_utf8(bytes).map_err(|e| SnapshotError::Format { line: 0, message: e.to_string() })?;
    let first = text.lines().next().unwrap_or("");
    let header: Result<Header, _> = serde_json::from_str(first);
    if let Ok(h) = &header {
        if h.format_version != FORMAT_VERSION {
            return Err(SnapshotError::Version { found: h.format_version, supported: FORMAT_VERSION });
        }
    }

    let trimmed = text.strip_suffix('\n').unwrap_or(text);
    let cut = trimmed.rfind('\n').map_or(0, |i| i + 1);
    let expected = trimmed[cut..]
        .strip_prefix(TRAILER)
        .ok_or_else(|| IntegrityError("missing checksum trailer; the file is truncated".into()))?;
    let body = &text[..cut];
    let actual = hex::encode(Sha256::digest(body.as_bytes()));
    if expected != actual {
        return Err(SnapshotError::Checksum { expected: expected.to_string(), actual });
    }
    let header = header.map_err(|e| SnapshotError::Format { line: 1, message: e.to_string() })?;

    let config: EngineConfig =
        serde_json::from_value(header.config).map_err(|e| SnapshotError::Format { line: 1, message: e.to_string() })?;
    config.validate()?;

    let mut lines = Lines { inner: body.lines().enumerate() };
    lines.next()?;
    let nodes: Vec<NodeRecord> = lines.section("NODES")?;
    let edges: Vec<EdgeRecord> = lines.section("EDGES")?;
    let replicas: Vec<ReplicaRecord> = lines.section("REPLICAS")?;
    let redges: Vec<ReplicaEdgeRecord> = lines.section("REDGES")?;
    let labels: Vec<LabelRecord> = lines.section("LABELS")?;
    let psi: Vec<PsiRecord> = lines.section("PSI")?;
    if let Ok((line, _)) = lines.next() {
        return Err(SnapshotError::Format { line, message: "unexpected content after PSI".into() });
    }

    let mut levels: Vec<Level> = Vec::new();
    for rec in &labels {
        if let LabelRecord::Counter { level, next_label } = rec {
            if *level as usize != levels.len() {
                return Err(IntegrityError(format!("level counter {level} out of order")).into());
            }
            let mut lvl = Level::new(*level);
            lvl.registry = ClusterRegistry { next_label: *next_label, ..ClusterRegistry::new(*level) };
            levels.push(lvl);
        }
    }
    let depth = levels.len();
    let level_of = |id: NodeId| -> Result<usize, SnapshotError> {
        let l = id.level as usize;
        if l < depth {
            Ok(l)
        } else {
            Err(dangling("record", format!("level {}", id.level)))
        }
    };

    for n in nodes {
        let l = level_of(n.id)?;
        let kind = match (n.kind.as_str(), n.doc_id, n.seq_index, n.members) {
            ("chunk", Some(doc_id), Some(seq_index), None) => NodeKind::Chunk { doc_id, seq_index },
            ("abstraction", None, None, Some(members)) => NodeKind::Abstraction { members },
            _ => return Err(IntegrityError(format!("node {} has inconsistent fields", n.id)).into()),
        };
        let node = MemoryNode { id: n.id, kind, text: n.text, embedding: Embedding::from(n.embedding) };
        levels[l].graph.add_node(n.id);
        if levels[l].nodes.insert(n.id, node).is_some() {
            return Err(IntegrityError(format!("node {} stored twice", n.id)).into());
        }
    }
    for e in edges {
        let l = level_of(e.u)?;
        for end in [e.u, e.v] {
            if !levels[l].nodes.contains_key(&end) {
                return Err(dangling("edge", end));
            }
        }
        levels[l].graph.upsert_edge(e.u, e.v, e.w);
    }
    for r in replicas {
        let l = level_of(r.id.node)?;
        if !levels[l].nodes.contains_key(&r.id.node) {
            return Err(dangling("replica", r.id.node));
        }
        let rn: &mut ReplicaNetwork = &mut levels[l].replicas;
        rn.adjacency.entry(r.id).or_default();
        rn.replicas.entry(r.id.node).or_default().push(Replica { id: r.id, component: r.component });
    }
    for e in redges {
        let l = level_of(e.a.node)?;
        let rn = &mut levels[l].replicas;
        for end in [e.a, e.b] {
            if !rn.adjacency.contains_key(&end) {
                return Err(dangling("replica edge", end));
            }
        }
        rn.adjacency.get_mut(&e.a).unwrap().insert(e.b);
        rn.adjacency.get_mut(&e.b).unwrap().insert(e.a);
    }
    for rec in labels {
        if let LabelRecord::Label { replica, label } = rec {
            let l = level_of(replica.node)?;
            let lvl = &mut levels[l];
            if !lvl.replicas.adjacency.contains_key(&replica) {
                return Err(dangling("label", replica));
            }
            lvl.replicas.labels.insert(replica, ClusterLabel(label));
            lvl.registry.members.entry(ClusterLabel(label)).or_default().insert(replica);
        }
    }

    let h = MemoryHierarchy::from_levels(config, levels).map_err(|e| match e {
        crate::error::CamError::Integrity(i) => SnapshotError::Integrity(i),
        crate::error::CamError::Config(c) => SnapshotError::Config(c),
        other => IntegrityError(other.to_string()).into(),
    })?;

    let mut stored: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for p in psi {
        stored.insert(p.node, p.parents);
    }
    let mut computed = BTreeMap::new();
    for lvl in h.levels() {
        computed.extend(h.upward(lvl.index()).map_err(|e| IntegrityError(e.to_string()))?.map);
    }
    if stored != computed {
        return Err(IntegrityError("stored upward mapping disagrees with the cluster labels".into()).into());
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Chunk;
    use crate::providers::{StubEmbedder, StubLanguageModel};
    use crate::synthetic;

    fn built(chunks: &[Chunk], cfg: EngineConfig) -> MemoryHierarchy {
        let mut h = MemoryHierarchy::new(cfg).unwrap();
        h.integrate_batch(chunks, &StubEmbedder::default(), &StubLanguageModel::default()).unwrap();
        h
    }

    fn butterfly() -> MemoryHierarchy {
        let texts = ["apple orchard", "orchard apple", "apple orchard river delta", "river delta", "delta river"];
        let chunks: Vec<Chunk> = texts.iter().enumerate().map(|(i, t)| Chunk::new("bf", i as u64, *t)).collect();
        built(&chunks, EngineConfig { min_level_size: 1, ..Default::default() })
    }

    #[test]
    fn empty_hierarchy_has_header_sections_and_trailer() {
        let h = MemoryHierarchy::new(EngineConfig::default()).unwrap();
        let text = String::from_utf8(to_bytes(&h).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("{\"format_version\":1,\"config\":{"));
        assert_eq!(lines[1], "#SECTION NODES 0");
        assert_eq!(lines[5], "#SECTION LABELS 1");
        assert_eq!(lines[7], "#SECTION PSI 0");
        assert!(lines[8].starts_with("#SHA256 ") && lines[8].len() == 8 + 64);
        assert_eq!(from_bytes(text.as_bytes()).unwrap(), h);
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let h = built(&synthetic::topic_blocks(4, 20, 3), EngineConfig::default());
        let bytes = to_bytes(&h).unwrap();
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, h);
        assert_eq!(to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn butterfly_keeps_two_parents() {
        let h = from_bytes(&to_bytes(&butterfly()).unwrap()).unwrap();
        assert_eq!(h.psi(0, NodeId::chunk(2)).unwrap().len(), 2);
    }

    #[test]
    fn corruption_is_reported_with_both_digests() {
        let mut bytes = to_bytes(&butterfly()).unwrap();
        let i = bytes.iter().position(|b| *b == b'o').unwrap();
        bytes[i] = b'0';
        match from_bytes(&bytes) {
            Err(SnapshotError::Checksum { expected, actual }) => {
                assert_ne!(expected, actual);
                assert_eq!(actual.len(), 64);
            }
            other => panic!("expected a checksum error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_and_version_errors() {
        let bytes = to_bytes(&butterfly()).unwrap();
        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(from_bytes(cut), Err(SnapshotError::Integrity(_))));
        let text = String::from_utf8(bytes).unwrap().replacen("\"format_version\":1", "\"format_version\":999", 1);
        assert!(matches!(from_bytes(text.as_bytes()), Err(SnapshotError::Version { found: 999, supported: 1 })));
    }

    #[test]
    fn dangling_edges_are_rejected_even_with_a_valid_checksum() {
        let text = String::from_utf8(to_bytes(&butterfly()).unwrap()).unwrap();
        let body = &text[..text.rfind(TRAILER).unwrap()];
        let body = body.replacen("{\"u\":\"L0:0\",\"v\":\"L0:1\"", "{\"u\":\"L0:0\",\"v\":\"L0:9\"", 1);
        let resealed = format!("{body}{TRAILER}{}\n", hex::encode(Sha256::digest(body.as_bytes())));
        assert!(matches!(from_bytes(resealed.as_bytes()), Err(SnapshotError::Integrity(_))));
    }

    #[test]
    fn save_replaces_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mem.snap");
        let h = butterfly();
        save(&h, &path).unwrap();
        save(&h, &path).unwrap();
        assert_eq!(load(&path).unwrap(), h);
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("mem.snap")]);
    }
}
