//! Canonical JSONL interchange: one event object per line, with a sidecar
//! `<stem>.nodes.jsonl` carrying the node table (and stream epoch) so that
//! feature vectors and node index order survive a round trip. See
//! docs/formats.md for the exact field layout.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_graph::{EventStream, Label, StreamBuilder, TypeVocab};

#[derive(Debug, Serialize, Deserialize)]
struct EventLine {
    src_id: String,
    src_type: String,
    dst_id: String,
    dst_type: String,
    edge_type: String,
    attrs: Vec<f64>,
    ts: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeLine {
    id: String,
    #[serde(rename = "type")]
    node_type: String,
    features: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaLine {
    meta: Meta,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    epoch: f64,
}

/// Sidecar path: `events.jsonl` -> `events.nodes.jsonl`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
    path.with_file_name(format!("{stem}.nodes.jsonl"))
}

/// Reads an event stream from JSONL. Nodes named only by events get
/// zero-vector features of the declared dimension; the sidecar, when
/// present, supplies explicit features and fixes node index order.
pub fn ingest_jsonl(path: &Path, schema: &TypeVocab) -> Result<EventStream> {
    let mut builder = StreamBuilder::new(schema.clone())?;

    let sidecar = sidecar_path(path);
    let mut epoch = None;
    if sidecar.exists() {
        let file = File::open(&sidecar).map_err(|e| Error::io(sidecar.display().to_string(), e))?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(sidecar.display().to_string(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            if let Ok(m) = serde_json::from_str::<MetaLine>(&line) {
                epoch = Some(m.meta.epoch);
                continue;
            }
            let node: NodeLine = serde_json::from_str(&line)
                .map_err(|e| Error::MalformedLine { line: i + 1, msg: e.to_string() })?;
            if node.features.iter().any(|f| !f.is_finite()) {
                return Err(Error::NonFiniteAttr { line: i + 1 });
            }
            builder.add_node(&node.id, &node.node_type, node.features)?;
        }
    }

    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: EventLine = serde_json::from_str(&line)
            .map_err(|e| Error::MalformedLine { line: lineno, msg: e.to_string() })?;
        if ev.attrs.iter().any(|a| !a.is_finite()) || !ev.ts.is_finite() {
            return Err(Error::NonFiniteAttr { line: lineno });
        }
        let src = builder.add_node(&ev.src_id, &ev.src_type, vec![])?;
        let dst = builder.add_node(&ev.dst_id, &ev.dst_type, vec![])?;
        let label = ev.label.map(Label::from_bit).transpose()?;
        builder
            .add_event(src, dst, &ev.edge_type, ev.attrs, ev.ts, label)
            .map_err(|e| Error::MalformedLine { line: lineno, msg: e.to_string() })?;
    }

    let mut stream = builder.finish()?;
    if let Some(epoch) = epoch {
        stream.epoch = epoch;
    }
    Ok(stream)
}

/// Writes the stream as events JSONL plus the node sidecar.
pub fn write_jsonl(stream: &EventStream, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for e in stream.events() {
        let line = EventLine {
            src_id: stream.node(e.src).id.clone(),
            src_type: stream.node_type_name(e.src).to_string(),
            dst_id: stream.node(e.dst).id.clone(),
            dst_type: stream.node_type_name(e.dst).to_string(),
            edge_type: stream.edge_type_name(e).to_string(),
            attrs: e.edge_attrs.clone(),
            ts: e.timestamp,
            label: e.label.map(Label::bit),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| Error::other(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;

    let sidecar = sidecar_path(path);
    let file = File::create(&sidecar).map_err(|e| Error::io(sidecar.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let meta = MetaLine { meta: Meta { epoch: stream.epoch } };
    serde_json::to_writer(&mut w, &meta).map_err(|e| Error::other(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(sidecar.display().to_string(), e))?;
    for n in stream.nodes() {
        let line = NodeLine {
            id: n.id.clone(),
            node_type: stream.vocab().node_types[n.node_type].name.clone(),
            features: n.features.clone(),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| Error::other(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(sidecar.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(sidecar.display().to_string(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_graph::{AttrDecl, EdgeTypeDecl, NodeTypeDecl};

    fn schema() -> TypeVocab {
        TypeVocab {
            node_types: vec![
                NodeTypeDecl {
                    name: "user".into(),
                    attrs: vec![AttrDecl { name: "dept".into(), values: vec!["a".into(), "b".into()] }],
                },
                NodeTypeDecl { name: "pc".into(), attrs: vec![] },
            ],
            edge_types: vec![EdgeTypeDecl {
                name: "logon".into(),
                src: "user".into(),
                dst: "pc".into(),
                attr_dim: 1,
                attr_names: vec![],
            }],
        }
    }

    fn write_lines(path: &Path, lines: &[&str]) {
        std::fs::write(path, lines.join("\n")).unwrap();
    }

    #[test]
    fn empty_file_gives_empty_stream() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let s = ingest_jsonl(&path, &schema()).unwrap();
        assert_eq!(s.n_events(), 0);
        assert_eq!(s.n_nodes(), 0);
    }

    #[test]
    fn ties_keep_input_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let l = |id: &str, ts: f64| {
            format!(
                r#"{{"src_id":"{id}","src_type":"user","dst_id":"p","dst_type":"pc","edge_type":"logon","attrs":[0.0],"ts":{ts}}}"#
            )
        };
        write_lines(&path, &[&l("u1", 5.0), &l("u2", 2.0), &l("u3", 2.0)]);
        let s = ingest_jsonl(&path, &schema()).unwrap();
        let order: Vec<&str> =
            s.events().iter().map(|e| s.node(e.src).id.as_str()).collect();
        assert_eq!(order, vec!["u2", "u3", "u1"]);
    }

    #[test]
    fn malformed_line_reports_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        write_lines(
            &path,
            &[
                r#"{"src_id":"u","src_type":"user","dst_id":"p","dst_type":"pc","edge_type":"logon","attrs":[0.0],"ts":1.0}"#,
                "not json",
            ],
        );
        match ingest_jsonl(&path, &schema()) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed-line error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_type_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.jsonl");
        write_lines(
            &path,
            &[r#"{"src_id":"u","src_type":"ghost","dst_id":"p","dst_type":"pc","edge_type":"logon","attrs":[0.0],"ts":1.0}"#],
        );
        match ingest_jsonl(&path, &schema()) {
            Err(Error::UnknownType { label, .. }) => assert_eq!(label, "ghost"),
            other => panic!("expected unknown-type error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_attr_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nf.jsonl");
        write_lines(
            &path,
            &[r#"{"src_id":"u","src_type":"user","dst_id":"p","dst_type":"pc","edge_type":"logon","attrs":[null],"ts":1.0}"#],
        );
        assert!(ingest_jsonl(&path, &schema()).is_err());
    }

    #[test]
    fn ten_line_fixture_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fx.jsonl");
        // 4 distinct nodes of 2 types, 10 events
        let mut lines = Vec::new();
        for i in 0..10 {
            let u = if i % 2 == 0 { "u1" } else { "u2" };
            let p = if i % 3 == 0 { "p1" } else { "p2" };
            lines.push(format!(
                r#"{{"src_id":"{u}","src_type":"user","dst_id":"{p}","dst_type":"pc","edge_type":"logon","attrs":[1.0],"ts":{}.0}}"#,
                i
            ));
        }
        let refs: Vec<&str> = lines.iter().map(|s| s.as_str()).collect();
        write_lines(&path, &refs);
        let s = ingest_jsonl(&path, &schema()).unwrap();
        assert_eq!(s.n_events(), 10);
        assert_eq!(s.n_nodes(), 4);
        assert_eq!(s.events().last().unwrap().ordinal, 10);
    }

    #[test]
    fn round_trip_reproduces_stream() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.jsonl");
        let mut b = StreamBuilder::new(schema()).unwrap();
        let u = b.add_node("u1", "user", vec![0.0, 1.0]).unwrap();
        let p = b.add_node("p1", "pc", vec![]).unwrap();
        // an isolated node must survive the round trip too
        b.add_node("lonely", "pc", vec![]).unwrap();
        b.add_event(u, p, "logon", vec![1.0], 3.5, Some(Label::Attack)).unwrap();
        b.add_event(u, p, "logon", vec![0.0], 9.0, None).unwrap();
        let s = b.finish().unwrap();

        write_jsonl(&s, &path).unwrap();
        let s2 = ingest_jsonl(&path, &schema()).unwrap();
        assert_eq!(s, s2);
    }
}
