//! CERT insider-threat dataset (V6.2) adapter: the five activity CSVs
//! become one event per row. Column mapping and node typing are documented
//! in docs/formats.md.
//!
//! User metadata is optional: when `ldap_vocab.json` (a list of attribute
//! declarations) and `ldap.csv` are present in the directory, user nodes get
//! one-hot features for the declared categorical attributes; otherwise user
//! features are zero vectors.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::event_graph::{
    AttrDecl, EdgeTypeDecl, EventStream, Label, NodeTypeDecl, StreamBuilder, TypeVocab,
};

const ACTIVITY_FILES: [&str; 5] = ["logon.csv", "device.csv", "http.csv", "email.csv", "file.csv"];

/// Node and edge types for CERT streams.
pub fn cert_vocab(user_attrs: Vec<AttrDecl>) -> TypeVocab {
    TypeVocab {
        node_types: vec![
            NodeTypeDecl { name: "user".into(), attrs: user_attrs },
            NodeTypeDecl { name: "pc".into(), attrs: vec![] },
            NodeTypeDecl { name: "url-domain".into(), attrs: vec![] },
            NodeTypeDecl { name: "email-address".into(), attrs: vec![] },
            NodeTypeDecl { name: "file".into(), attrs: vec![] },
            NodeTypeDecl { name: "device".into(), attrs: vec![] },
        ],
        edge_types: vec![
            EdgeTypeDecl {
                name: "logon".into(),
                src: "user".into(),
                dst: "pc".into(),
                attr_dim: 1,
                attr_names: vec!["is_logon".into()],
            },
            EdgeTypeDecl {
                name: "http".into(),
                src: "pc".into(),
                dst: "url-domain".into(),
                attr_dim: 3,
                attr_names: vec!["visit".into(), "download".into(), "upload".into()],
            },
            EdgeTypeDecl {
                name: "email".into(),
                src: "user".into(),
                dst: "email-address".into(),
                attr_dim: 3,
                attr_names: vec!["is_send".into(), "size".into(), "attachments".into()],
            },
            EdgeTypeDecl {
                name: "file".into(),
                src: "pc".into(),
                dst: "file".into(),
                attr_dim: 6,
                attr_names: vec![
                    "open".into(),
                    "write".into(),
                    "copy".into(),
                    "delete".into(),
                    "to_removable".into(),
                    "from_removable".into(),
                ],
            },
            EdgeTypeDecl {
                name: "device".into(),
                src: "pc".into(),
                dst: "device".into(),
                attr_dim: 1,
                attr_names: vec!["is_connect".into()],
            },
        ],
    }
}

/// Parses "MM/DD/YYYY HH:MM:SS" into Unix-style seconds.
fn parse_timestamp(s: &str, row: usize) -> Result<f64> {
    let bad = || Error::BadTimestamp { row, value: s.to_string() };
    let (date, time) = s.trim().split_once(' ').ok_or_else(bad)?;
    let d: Vec<&str> = date.split('/').collect();
    let t: Vec<&str> = time.split(':').collect();
    if d.len() != 3 || t.len() != 3 {
        return Err(bad());
    }
    let month: i64 = d[0].parse().map_err(|_| bad())?;
    let day: i64 = d[1].parse().map_err(|_| bad())?;
    let year: i64 = d[2].parse().map_err(|_| bad())?;
    let hh: i64 = t[0].parse().map_err(|_| bad())?;
    let mm: i64 = t[1].parse().map_err(|_| bad())?;
    let ss: i64 = t[2].parse().map_err(|_| bad())?;
    if !(1..=12).contains(&month) || !(1..=31).contains(&day) || hh > 23 || mm > 59 || ss > 60 {
        return Err(bad());
    }
    // days-from-civil (Howard Hinnant), valid for the Gregorian calendar
    let y = if month <= 2 { year - 1 } else { year };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = (month + 9) % 12;
    let doy = (153 * mp + 2) / 5 + day - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    let days = era * 146_097 + doe - 719_468;
    Ok((days * 86_400 + hh * 3600 + mm * 60 + ss) as f64)
}

fn domain_of(url: &str) -> String {
    let rest = url.trim();
    let rest = rest.strip_prefix("http://").or_else(|| rest.strip_prefix("https://")).unwrap_or(rest);
    let rest = rest.strip_prefix("www.").unwrap_or(rest);
    rest.split('/').next().unwrap_or(rest).to_string()
}

struct CsvFile {
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl CsvFile {
    fn open(dir: &Path, name: &str) -> Result<CsvFile> {
        let path = dir.join(name);
        if !path.exists() {
            return Err(Error::MissingFile(path.display().to_string()));
        }
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .from_path(&path)
            .map_err(|e| Error::other(format!("{}: {e}", path.display())))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::other(format!("{}: {e}", path.display())))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            rows.push(rec.map_err(|e| Error::other(format!("{}: {e}", path.display())))?);
        }
        Ok(CsvFile { headers, rows })
    }

    fn col(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h.eq_ignore_ascii_case(name))
    }

    fn need(&self, name: &str, file: &str) -> Result<usize> {
        self.col(name)
            .ok_or_else(|| Error::other(format!("{file}: missing required column `{name}`")))
    }
}

fn read_user_attrs(dir: &Path) -> Result<(Vec<AttrDecl>, Vec<(String, Vec<(String, String)>)>)> {
    let vocab_path = dir.join("ldap_vocab.json");
    if !vocab_path.exists() {
        return Ok((vec![], vec![]));
    }
    let text = std::fs::read_to_string(&vocab_path)
        .map_err(|e| Error::io(vocab_path.display().to_string(), e))?;
    let attrs: Vec<AttrDecl> =
        serde_json::from_str(&text).map_err(|e| Error::other(format!("ldap_vocab.json: {e}")))?;
    let ldap = CsvFile::open(dir, "ldap.csv")?;
    let uid = ldap.need("user_id", "ldap.csv")?;
    let mut users = Vec::new();
    for row in &ldap.rows {
        let user = row.get(uid).unwrap_or("").trim().to_string();
        let mut pairs = Vec::new();
        for a in &attrs {
            if let Some(c) = ldap.col(&a.name) {
                if let Some(v) = row.get(c) {
                    pairs.push((a.name.clone(), v.trim().to_string()));
                }
            }
        }
        users.push((user, pairs));
    }
    Ok((attrs, users))
}

/// Loads the five CERT activity files into one stream. `user_filter`
/// restricts rows to the named users; `answer_key` is a text file whose
/// comma- or whitespace-separated tokens name malicious event ids.
pub fn ingest_cert_csv(
    dir: &Path,
    user_filter: Option<&[String]>,
    answer_key: Option<&Path>,
) -> Result<EventStream> {
    for name in ACTIVITY_FILES {
        if !dir.join(name).exists() {
            return Err(Error::MissingFile(dir.join(name).display().to_string()));
        }
    }

    let (attr_decls, user_rows) = read_user_attrs(dir)?;
    let vocab = cert_vocab(attr_decls.clone());
    let mut b = StreamBuilder::new(vocab)?;

    // pre-register users that have metadata so their features are attached
    for (user, pairs) in &user_rows {
        if let Some(filter) = user_filter {
            if !filter.iter().any(|f| f == user) {
                continue;
            }
        }
        let refs: Vec<(&str, &str)> =
            pairs.iter().map(|(a, v)| (a.as_str(), v.as_str())).collect();
        // unknown values fall back to all-zero one-hots
        if b.add_node_with_attrs(user, "user", &refs).is_err() {
            b.add_node(user, "user", vec![])?;
        }
    }

    let malicious: HashSet<String> = match answer_key {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            text.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| t.trim_matches('"').to_string())
                .collect()
        }
        None => HashSet::new(),
    };

    let mut seen_users: HashSet<String> = HashSet::new();
    let keep =
        |user: &str| user_filter.map_or(true, |f| f.iter().any(|u| u == user));
    let label_of = |id: &str| {
        if malicious.contains(id) {
            Some(Label::Attack)
        } else if malicious.is_empty() {
            None
        } else {
            Some(Label::Normal)
        }
    };

    // logon.csv: id,date,user,pc,activity (Logon/Logoff)
    {
        let f = CsvFile::open(dir, "logon.csv")?;
        let (ci, cd, cu, cp, ca) = (
            f.need("id", "logon.csv")?,
            f.need("date", "logon.csv")?,
            f.need("user", "logon.csv")?,
            f.need("pc", "logon.csv")?,
            f.need("activity", "logon.csv")?,
        );
        for (r, row) in f.rows.iter().enumerate() {
            let user = row.get(cu).unwrap_or("").trim();
            if !keep(user) {
                continue;
            }
            seen_users.insert(user.to_string());
            let ts = parse_timestamp(row.get(cd).unwrap_or(""), r + 2)?;
            let id = row.get(ci).unwrap_or("").trim();
            let is_logon = row.get(ca).unwrap_or("").trim().eq_ignore_ascii_case("logon");
            let u = b.add_node(user, "user", vec![])?;
            let p = b.add_node(row.get(cp).unwrap_or("").trim(), "pc", vec![])?;
            b.add_event(u, p, "logon", vec![if is_logon { 1.0 } else { 0.0 }], ts, label_of(id))?;
        }
    }

    // device.csv: id,date,user,pc,activity (Connect/Disconnect)
    {
        let f = CsvFile::open(dir, "device.csv")?;
        let (ci, cd, cu, cp, ca) = (
            f.need("id", "device.csv")?,
            f.need("date", "device.csv")?,
            f.need("user", "device.csv")?,
            f.need("pc", "device.csv")?,
            f.need("activity", "device.csv")?,
        );
        for (r, row) in f.rows.iter().enumerate() {
            let user = row.get(cu).unwrap_or("").trim();
            if !keep(user) {
                continue;
            }
            seen_users.insert(user.to_string());
            let ts = parse_timestamp(row.get(cd).unwrap_or(""), r + 2)?;
            let id = row.get(ci).unwrap_or("").trim();
            let connect = row.get(ca).unwrap_or("").trim().eq_ignore_ascii_case("connect");
            let p = b.add_node(row.get(cp).unwrap_or("").trim(), "pc", vec![])?;
            let dev = b.add_node(&format!("usb:{user}"), "device", vec![])?;
            b.add_event(p, dev, "device", vec![if connect { 1.0 } else { 0.0 }], ts, label_of(id))?;
        }
    }

    // http.csv: id,date,user,pc,url[,activity]
    {
        let f = CsvFile::open(dir, "http.csv")?;
        let (ci, cd, cu, cp, curl) = (
            f.need("id", "http.csv")?,
            f.need("date", "http.csv")?,
            f.need("user", "http.csv")?,
            f.need("pc", "http.csv")?,
            f.need("url", "http.csv")?,
        );
        let cact = f.col("activity");
        for (r, row) in f.rows.iter().enumerate() {
            let user = row.get(cu).unwrap_or("").trim();
            if !keep(user) {
                continue;
            }
            seen_users.insert(user.to_string());
            let ts = parse_timestamp(row.get(cd).unwrap_or(""), r + 2)?;
            let id = row.get(ci).unwrap_or("").trim();
            let act = cact.and_then(|c| row.get(c)).unwrap_or("visit").to_lowercase();
            let attrs = vec![
                if act.contains("visit") || (!act.contains("download") && !act.contains("upload")) { 1.0 } else { 0.0 },
                if act.contains("download") { 1.0 } else { 0.0 },
                if act.contains("upload") { 1.0 } else { 0.0 },
            ];
            let p = b.add_node(row.get(cp).unwrap_or("").trim(), "pc", vec![])?;
            let d = b.add_node(&domain_of(row.get(curl).unwrap_or("")), "url-domain", vec![])?;
            b.add_event(p, d, "http", attrs, ts, label_of(id))?;
        }
    }

    // email.csv: id,date,user,pc,to,...,activity,size,attachments
    {
        let f = CsvFile::open(dir, "email.csv")?;
        let (ci, cd, cu, cto) = (
            f.need("id", "email.csv")?,
            f.need("date", "email.csv")?,
            f.need("user", "email.csv")?,
            f.need("to", "email.csv")?,
        );
        let (ca, cs, catt) = (f.col("activity"), f.col("size"), f.col("attachments"));
        for (r, row) in f.rows.iter().enumerate() {
            let user = row.get(cu).unwrap_or("").trim();
            if !keep(user) {
                continue;
            }
            seen_users.insert(user.to_string());
            let ts = parse_timestamp(row.get(cd).unwrap_or(""), r + 2)?;
            let id = row.get(ci).unwrap_or("").trim();
            let first_to = row
                .get(cto)
                .unwrap_or("")
                .split(';')
                .next()
                .unwrap_or("")
                .trim()
                .to_string();
            let is_send = ca
                .and_then(|c| row.get(c))
                .map_or(true, |a| a.trim().eq_ignore_ascii_case("send"));
            let size: f64 = cs
                .and_then(|c| row.get(c))
                .and_then(|v| v.trim().parse().ok())
                .unwrap_or(0.0);
            let natt: f64 = catt
                .and_then(|c| row.get(c))
                .map(|v| v.split(';').filter(|s| !s.trim().is_empty()).count() as f64)
                .unwrap_or(0.0);
            let u = b.add_node(user, "user", vec![])?;
            let addr = if first_to.is_empty() { "unknown@unknown" } else { &first_to };
            let a = b.add_node(addr, "email-address", vec![])?;
            // log-scale size to keep attrs O(1)
            let attrs = vec![if is_send { 1.0 } else { 0.0 }, (1.0 + size).ln() / 20.0, natt];
            b.add_event(u, a, "email", attrs, ts, label_of(id))?;
        }
    }

    // file.csv: id,date,user,pc,filename[,activity,to_removable_media,from_removable_media]
    {
        let f = CsvFile::open(dir, "file.csv")?;
        let (ci, cd, cu, cp, cf) = (
            f.need("id", "file.csv")?,
            f.need("date", "file.csv")?,
            f.need("user", "file.csv")?,
            f.need("pc", "file.csv")?,
            f.need("filename", "file.csv")?,
        );
        let (ca, cto, cfrom) =
            (f.col("activity"), f.col("to_removable_media"), f.col("from_removable_media"));
        for (r, row) in f.rows.iter().enumerate() {
            let user = row.get(cu).unwrap_or("").trim();
            if !keep(user) {
                continue;
            }
            seen_users.insert(user.to_string());
            let ts = parse_timestamp(row.get(cd).unwrap_or(""), r + 2)?;
            let id = row.get(ci).unwrap_or("").trim();
            let act = ca.and_then(|c| row.get(c)).unwrap_or("open").to_lowercase();
            let flag = |c: Option<usize>| {
                c.and_then(|c| row.get(c))
                    .map_or(0.0, |v| if v.trim().eq_ignore_ascii_case("true") { 1.0 } else { 0.0 })
            };
            let attrs = vec![
                if act.contains("open") { 1.0 } else { 0.0 },
                if act.contains("write") { 1.0 } else { 0.0 },
                if act.contains("copy") { 1.0 } else { 0.0 },
                if act.contains("delete") { 1.0 } else { 0.0 },
                flag(cto),
                flag(cfrom),
            ];
            let p = b.add_node(row.get(cp).unwrap_or("").trim(), "pc", vec![])?;
            let file = b.add_node(row.get(cf).unwrap_or("").trim(), "file", vec![])?;
            b.add_event(p, file, "file", attrs, ts, label_of(id))?;
        }
    }

    if let Some(filter) = user_filter {
        for u in filter {
            if !seen_users.contains(u) {
                log::warn!("user filter id `{u}` matched no rows");
            }
        }
    }

    b.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, content: &str) {
        std::fs::write(dir.join(name), content).unwrap();
    }

    fn fixture(dir: &Path) {
        write(
            dir,
            "logon.csv",
            "id,date,user,pc,activity\n\
             {L1},01/02/2010 07:11:45,U1,PC-1,Logon\n\
             {L2},01/02/2010 17:30:00,U1,PC-1,Logoff\n\
             {L3},01/02/2010 08:00:00,U2,PC-2,Logon\n",
        );
        write(dir, "device.csv", "id,date,user,pc,activity\n{D1},01/02/2010 09:00:00,U1,PC-1,Connect\n");
        write(
            dir,
            "http.csv",
            "id,date,user,pc,url,activity\n{H1},01/02/2010 09:15:00,U1,PC-1,http://www.example.org/page,WWW Visit\n",
        );
        write(
            dir,
            "email.csv",
            "id,date,user,pc,to,from,activity,size,attachments\n\
             {E1},01/02/2010 10:00:00,U1,PC-1,bob@corp.com,u1@corp.com,Send,2048,\n",
        );
        write(
            dir,
            "file.csv",
            "id,date,user,pc,filename,activity,to_removable_media,from_removable_media\n\
             {F1},01/02/2010 11:00:00,U1,PC-1,doc.pdf,File Copy,True,False\n",
        );
    }

    #[test]
    fn logon_row_maps_to_user_pc_edge() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let s = ingest_cert_csv(dir.path(), None, None).unwrap();
        assert_eq!(s.n_events(), 7);
        let first = s.event(1);
        assert_eq!(s.node(first.src).id, "U1");
        assert_eq!(s.node_type_name(first.src), "user");
        assert_eq!(s.node_type_name(first.dst), "pc");
        assert_eq!(s.edge_type_name(first), "logon");
        assert_eq!(first.edge_attrs, vec![1.0]);
        // timestamps are epoch-relative and ordered
        assert_eq!(first.timestamp, 0.0);
        for w in s.events().windows(2) {
            assert!(w[0].timestamp <= w[1].timestamp);
        }
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        std::fs::remove_file(dir.path().join("email.csv")).unwrap();
        match ingest_cert_csv(dir.path(), None, None) {
            Err(Error::MissingFile(name)) => assert!(name.contains("email.csv")),
            other => panic!("expected missing-file error, got {other:?}"),
        }
    }

    #[test]
    fn bad_timestamp_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        write(dir.path(), "device.csv", "id,date,user,pc,activity\n{D1},garbage,U1,PC-1,Connect\n");
        match ingest_cert_csv(dir.path(), None, None) {
            Err(Error::BadTimestamp { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected timestamp error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_filter_user_gives_empty_stream() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let filter = vec!["NOBODY".to_string()];
        let s = ingest_cert_csv(dir.path(), Some(&filter), None).unwrap();
        assert_eq!(s.n_events(), 0);
    }

    #[test]
    fn answer_key_labels_events() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let key = dir.path().join("answers.txt");
        std::fs::write(&key, "{F1},{E1}\n").unwrap();
        let s = ingest_cert_csv(dir.path(), None, Some(&key)).unwrap();
        let attacks = s.attack_ordinals();
        assert_eq!(attacks.len(), 2);
        for e in s.events() {
            assert!(e.label.is_some());
        }
    }

    #[test]
    fn ldap_metadata_attaches_user_features() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        write(
            dir.path(),
            "ldap_vocab.json",
            r#"[{"name":"role","values":["staff","admin"]}]"#,
        );
        write(dir.path(), "ldap.csv", "user_id,role\nU1,admin\n");
        let s = ingest_cert_csv(dir.path(), None, None).unwrap();
        let u1 = s.node_by_name("U1").unwrap();
        assert_eq!(s.node(u1).features, vec![0.0, 1.0]);
    }

    #[test]
    fn timestamp_parser_handles_epoch_math() {
        // 01/01/1970 00:00:00 is zero; one day later is 86400
        assert_eq!(parse_timestamp("01/01/1970 00:00:00", 1).unwrap(), 0.0);
        assert_eq!(parse_timestamp("01/02/1970 00:00:10", 1).unwrap(), 86410.0);
        assert!(parse_timestamp("13/01/2010 00:00:00", 1).is_err());
    }
}
