//! Synthetic multi-step-attack scenario generator used for desk-scale
//! validation: background logon/browsing/email/file traffic for a small
//! organization, plus one scripted attacker whose steps are the only
//! attack-labeled events.
//!
//! Background is generated at a constant rate per user, so stretching the
//! attack's inter-step idle time (`gap_scale`) proportionally increases the
//! number of background events between attack steps.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_graph::{
    AttrDecl, EdgeTypeDecl, EventStream, Label, NodeId, NodeTypeDecl, StreamBuilder, TypeVocab,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackStepKind {
    LoginOtherHost,
    AccessSensitiveFile,
    CopySensitiveFile,
    ExfilEmail,
    UsbExfil,
    LogoffOtherHost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackStep {
    pub kind: AttackStepKind,
    /// Idle seconds before this step, multiplied by `gap_scale`.
    #[serde(default = "default_idle")]
    pub idle_before: f64,
}

fn default_idle() -> f64 {
    600.0
}

fn default_session_gap() -> f64 {
    14_400.0
}

fn default_attack_start_frac() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub num_users: usize,
    /// Background time span in seconds (extended if the attack runs longer).
    pub duration: f64,
    pub attack_script: Vec<AttackStep>,
    pub gap_scale: f64,
    pub rng_seed: u64,
    /// Mean seconds between one user's sessions.
    #[serde(default = "default_session_gap")]
    pub session_gap_mean: f64,
    #[serde(default = "default_attack_start_frac")]
    pub attack_start_frac: f64,
}

/// The default 5-step exfiltration script: log into another host, read and
/// copy a sensitive file, mail it out, log off.
pub fn default_attack_script() -> Vec<AttackStep> {
    use AttackStepKind::*;
    [LoginOtherHost, AccessSensitiveFile, CopySensitiveFile, ExfilEmail, LogoffOtherHost]
        .into_iter()
        .map(|kind| AttackStep { kind, idle_before: 600.0 })
        .collect()
}

/// Node and edge types for synthetic streams.
pub fn synthetic_vocab() -> TypeVocab {
    let cat = |name: &str, values: &[&str]| AttrDecl {
        name: name.into(),
        values: values.iter().map(|v| v.to_string()).collect(),
    };
    TypeVocab {
        node_types: vec![
            NodeTypeDecl {
                name: "user".into(),
                attrs: vec![cat("dept", &["eng", "sales", "rnd"]), cat("role", &["staff", "admin"])],
            },
            NodeTypeDecl { name: "pc".into(), attrs: vec![cat("zone", &["office", "lab"])] },
            NodeTypeDecl {
                name: "file".into(),
                attrs: vec![cat("sensitivity", &["normal", "sensitive"])],
            },
            NodeTypeDecl {
                name: "url-domain".into(),
                attrs: vec![cat("category", &["work", "news", "social"])],
            },
            NodeTypeDecl {
                name: "email-address".into(),
                attrs: vec![cat("scope", &["internal", "external"])],
            },
            NodeTypeDecl { name: "device".into(), attrs: vec![cat("kind", &["usb"])] },
        ],
        edge_types: vec![
            EdgeTypeDecl {
                name: "logon".into(),
                src: "user".into(),
                dst: "pc".into(),
                attr_dim: 2,
                attr_names: vec!["own_host".into(), "off_hours".into()],
            },
            EdgeTypeDecl {
                name: "logoff".into(),
                src: "user".into(),
                dst: "pc".into(),
                attr_dim: 2,
                attr_names: vec!["own_host".into(), "off_hours".into()],
            },
            EdgeTypeDecl {
                name: "http_visit".into(),
                src: "pc".into(),
                dst: "url-domain".into(),
                attr_dim: 1,
                attr_names: vec!["bytes".into()],
            },
            EdgeTypeDecl {
                name: "email_send".into(),
                src: "user".into(),
                dst: "email-address".into(),
                attr_dim: 2,
                attr_names: vec!["size".into(), "attachment".into()],
            },
            EdgeTypeDecl {
                name: "file_access".into(),
                src: "pc".into(),
                dst: "file".into(),
                attr_dim: 4,
                attr_names: vec!["read".into(), "write".into(), "copy".into(), "off_hours".into()],
            },
            EdgeTypeDecl {
                name: "device_use".into(),
                src: "pc".into(),
                dst: "device".into(),
                attr_dim: 2,
                attr_names: vec!["duration".into(), "off_hours".into()],
            },
        ],
    }
}

struct World {
    users: Vec<NodeId>,
    pcs: Vec<NodeId>,
    own_files: Vec<Vec<NodeId>>,
    sensitive: Vec<NodeId>,
    urls: Vec<NodeId>,
    internal_mail: Vec<NodeId>,
    external_mail: Vec<NodeId>,
    usb: NodeId,
}

fn build_world(b: &mut StreamBuilder, cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<World> {
    let n = cfg.num_users;
    let attacker = n - 1;
    let admin = 1usize.min(n - 1);
    let depts = ["eng", "sales", "rnd"];

    let mut users = Vec::new();
    let mut pcs = Vec::new();
    let mut own_files = Vec::new();
    let mut internal_mail = Vec::new();
    for u in 0..n {
        let dept = if u == attacker { "rnd" } else { depts[rng.gen_range(0..3)] };
        let role = if u == admin && u != attacker { "admin" } else { "staff" };
        users.push(b.add_node_with_attrs(
            &format!("u{u:02}"),
            "user",
            &[("dept", dept), ("role", role)],
        )?);
        let zone = if u % 5 == 4 { "lab" } else { "office" };
        pcs.push(b.add_node_with_attrs(&format!("pc{u:02}"), "pc", &[("zone", zone)])?);
        let mut files = Vec::new();
        for f in 0..2 {
            files.push(b.add_node_with_attrs(
                &format!("f-{u:02}-{f}"),
                "file",
                &[("sensitivity", "normal")],
            )?);
        }
        own_files.push(files);
        internal_mail.push(b.add_node_with_attrs(
            &format!("u{u:02}@corp"),
            "email-address",
            &[("scope", "internal")],
        )?);
    }

    let mut sensitive = Vec::new();
    for s in 0..2 {
        sensitive.push(b.add_node_with_attrs(
            &format!("s-{s}"),
            "file",
            &[("sensitivity", "sensitive")],
        )?);
    }

    let url_decl =
        [("work.tools", "work"), ("wiki.corp", "work"), ("news.site", "news"), ("social.net", "social")];
    let mut urls = Vec::new();
    for (name, cat) in url_decl {
        urls.push(b.add_node_with_attrs(name, "url-domain", &[("category", cat)])?);
    }

    let mut external_mail = Vec::new();
    for name in ["drop@ext", "partner@ext", "list@ext"] {
        external_mail.push(b.add_node_with_attrs(name, "email-address", &[("scope", "external")])?);
    }

    let usb = b.add_node_with_attrs("usb-0", "device", &[("kind", "usb")])?;

    Ok(World { users, pcs, own_files, sensitive, urls, internal_mail, external_mail, usb })
}

/// Deterministic labeled stream: exactly the scripted steps carry the
/// attack label; everything else is background.
pub fn generate_synthetic(cfg: &ScenarioConfig) -> Result<EventStream> {
    if cfg.attack_script.is_empty() {
        return Err(Error::InvalidScenario("attack_script is empty".into()));
    }
    if cfg.gap_scale < 1.0 {
        return Err(Error::InvalidScenario(format!("gap_scale {} < 1", cfg.gap_scale)));
    }
    if cfg.num_users < 2 {
        return Err(Error::InvalidScenario("need at least 2 users".into()));
    }
    if !(cfg.duration > 0.0) {
        return Err(Error::InvalidScenario("duration must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut b = StreamBuilder::new(synthetic_vocab())?;
    let w = build_world(&mut b, cfg, &mut rng)?;

    let attacker = cfg.num_users - 1;
    let admin = 1usize.min(cfg.num_users - 1);
    let victim = 0usize;

    // attack step times are exact (no jitter) so gap scaling is exact
    let attack_start = cfg.attack_start_frac * cfg.duration;
    let mut attack_times = Vec::new();
    let mut t = attack_start;
    for step in &cfg.attack_script {
        t += step.idle_before * cfg.gap_scale;
        attack_times.push(t);
    }
    let span = cfg.duration.max(t + 1800.0);

    // background sessions, one user at a time
    for u in 0..cfg.num_users {
        let mut t = rng.gen_range(0.2..1.0) * cfg.session_gap_mean;
        while t < span {
            let off = if rng.gen_range(0.0..1.0) < 0.08 { 1.0 } else { 0.0 };
            let mut cursor = t;
            b.add_event(w.users[u], w.pcs[u], "logon", vec![1.0, off], cursor, Some(Label::Normal))?;
            for _ in 0..rng.gen_range(1..=4usize) {
                cursor += rng.gen_range(30.0..300.0);
                let url = w.urls[rng.gen_range(0..w.urls.len())];
                let bytes = rng.gen_range(0.1..0.5);
                b.add_event(w.pcs[u], url, "http_visit", vec![bytes], cursor, Some(Label::Normal))?;
            }
            if rng.gen_range(0.0..1.0) < 0.5 {
                cursor += rng.gen_range(30.0..300.0);
                let external = rng.gen_range(0.0..1.0) < 0.2;
                let addr = if external {
                    w.external_mail[rng.gen_range(0..w.external_mail.len())]
                } else {
                    w.internal_mail[rng.gen_range(0..w.internal_mail.len())]
                };
                let size = rng.gen_range(0.05..0.5);
                let attach = if rng.gen_range(0.0..1.0) < 0.15 { 1.0 } else { 0.0 };
                b.add_event(w.users[u], addr, "email_send", vec![size, attach], cursor, Some(Label::Normal))?;
            }
            if rng.gen_range(0.0..1.0) < 0.6 {
                cursor += rng.gen_range(30.0..300.0);
                let file = w.own_files[u][rng.gen_range(0..w.own_files[u].len())];
                let op = rng.gen_range(0..3usize);
                let mut attrs = vec![0.0, 0.0, 0.0, off];
                attrs[op] = 1.0;
                b.add_event(w.pcs[u], file, "file_access", attrs, cursor, Some(Label::Normal))?;
            }
            // the victim legitimately reads (never copies) sensitive files
            if u == victim && rng.gen_range(0.0..1.0) < 0.3 {
                cursor += rng.gen_range(30.0..300.0);
                let file = w.sensitive[rng.gen_range(0..w.sensitive.len())];
                b.add_event(
                    w.pcs[u],
                    file,
                    "file_access",
                    vec![1.0, 0.0, 0.0, off],
                    cursor,
                    Some(Label::Normal),
                )?;
            }
            // admins log into other hosts benignly, during work hours
            if u == admin && u != attacker && rng.gen_range(0.0..1.0) < 0.25 {
                cursor += rng.gen_range(30.0..300.0);
                let other = (u + 1 + rng.gen_range(0..cfg.num_users - 1)) % cfg.num_users;
                b.add_event(w.users[u], w.pcs[other], "logon", vec![0.0, 0.0], cursor, Some(Label::Normal))?;
                cursor += rng.gen_range(30.0..120.0);
                b.add_event(w.users[u], w.pcs[other], "logoff", vec![0.0, 0.0], cursor, Some(Label::Normal))?;
            }
            cursor += rng.gen_range(30.0..300.0);
            b.add_event(w.users[u], w.pcs[u], "logoff", vec![1.0, off], cursor, Some(Label::Normal))?;
            t += rng.gen_range(0.5..1.5) * cfg.session_gap_mean;
        }
    }

    for (step, &ts) in cfg.attack_script.iter().zip(&attack_times) {
        let label = Some(Label::Attack);
        match step.kind {
            AttackStepKind::LoginOtherHost => {
                b.add_event(w.users[attacker], w.pcs[victim], "logon", vec![0.0, 1.0], ts, label)?;
            }
            AttackStepKind::AccessSensitiveFile => {
                b.add_event(
                    w.pcs[victim],
                    w.sensitive[0],
                    "file_access",
                    vec![1.0, 0.0, 0.0, 1.0],
                    ts,
                    label,
                )?;
            }
            AttackStepKind::CopySensitiveFile => {
                b.add_event(
                    w.pcs[victim],
                    w.sensitive[0],
                    "file_access",
                    vec![0.0, 0.0, 1.0, 1.0],
                    ts,
                    label,
                )?;
            }
            AttackStepKind::ExfilEmail => {
                b.add_event(w.users[attacker], w.external_mail[0], "email_send", vec![0.95, 1.0], ts, label)?;
            }
            AttackStepKind::UsbExfil => {
                b.add_event(w.pcs[victim], w.usb, "device_use", vec![0.95, 1.0], ts, label)?;
            }
            AttackStepKind::LogoffOtherHost => {
                b.add_event(w.users[attacker], w.pcs[victim], "logoff", vec![0.0, 1.0], ts, label)?;
            }
        }
    }

    b.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64, gap_scale: f64) -> ScenarioConfig {
        ScenarioConfig {
            num_users: 6,
            duration: 86_400.0,
            attack_script: default_attack_script(),
            gap_scale,
            rng_seed: seed,
            session_gap_mean: default_session_gap(),
            attack_start_frac: default_attack_start_frac(),
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_synthetic(&cfg(7, 1.0)).unwrap();
        let b = generate_synthetic(&cfg(7, 1.0)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&cfg(8, 1.0)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn label_count_equals_script_length() {
        for seed in 0..5 {
            let s = generate_synthetic(&cfg(seed, 1.0)).unwrap();
            assert_eq!(s.attack_ordinals().len(), 5, "seed {seed}");
        }
    }

    #[test]
    fn gap_scale_stretches_attack_gaps_exactly() {
        let s1 = generate_synthetic(&cfg(3, 1.0)).unwrap();
        let s10 = generate_synthetic(&cfg(3, 10.0)).unwrap();
        assert_eq!(s1.attack_ordinals().len(), s10.attack_ordinals().len());

        let gaps = |s: &EventStream| -> Vec<f64> {
            let ts: Vec<f64> =
                s.attack_ordinals().iter().map(|&k| s.event(k).timestamp).collect();
            ts.windows(2).map(|w| w[1] - w[0]).collect()
        };
        let g1 = gaps(&s1);
        let g10 = gaps(&s10);
        let max1 = g1.iter().cloned().fold(0.0, f64::max);
        let max10 = g10.iter().cloned().fold(0.0, f64::max);
        assert!((max10 - 10.0 * max1).abs() < 1e-6, "max gap {max10} vs 10x{max1}");
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = cfg(1, 1.0);
        c.attack_script.clear();
        assert!(generate_synthetic(&c).is_err());
        let c = cfg(1, 0.5);
        assert!(generate_synthetic(&c).is_err());
    }

    #[test]
    fn timestamps_monotone_and_epoch_relative() {
        let s = generate_synthetic(&cfg(11, 1.0)).unwrap();
        assert!(s.n_events() > 50);
        assert_eq!(s.event(1).timestamp, 0.0);
        for w in s.events().windows(2) {
            assert!(w[0].timestamp <= w[1].timestamp);
        }
    }
}
