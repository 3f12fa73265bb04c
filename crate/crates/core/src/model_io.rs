//! Versioned binary artifacts for trained parameters: a magic + JSON header
//! (dims, vocabulary hash) followed by the raw little-endian f64 blob.
//! Loading refuses artifacts whose vocabulary hash disagrees with the
//! stream's, and sniffers refuse detectors they were not trained against.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{DetectorHead, HeadDims};
use crate::encoder::{EncoderDims, EncoderLayout, EncoderParams};
use crate::error::{Error, Result};
use crate::event_graph::TypeVocab;
use crate::sniffer::SnifferNet;

const MAGIC: &[u8; 4] = b"ELNZ";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Header {
    Encoder {
        dims: EncoderDims,
        vocab_hash: String,
        len: usize,
    },
    Detector {
        dims: EncoderDims,
        head_dims: HeadDims,
        d_emb: usize,
        edge_attr_dims: Vec<usize>,
        vocab_hash: String,
        tau: f64,
        enc_len: usize,
        head_len: usize,
    },
    Sniffer {
        vocab_hash: String,
        detector_hash: String,
        d_hidden: usize,
        vec_dim: usize,
        d_time: usize,
        max_node_feat: usize,
        max_edge_attr: usize,
        time_len: usize,
        len: usize,
    },
}

fn write_artifact(path: &Path, header: &Header, blobs: &[&[f64]]) -> Result<()> {
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
    );
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    let hjson = serde_json::to_vec(header).map_err(|e| Error::other(e.to_string()))?;
    w.write_all(&(hjson.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&hjson).map_err(io_err)?;
    for blob in blobs {
        for v in *blob {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

fn read_artifact(path: &Path) -> Result<(Header, Vec<f64>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() < 12 || &bytes[0..4] != MAGIC {
        return Err(Error::ArtifactMismatch(format!("{}: not a model artifact", path.display())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::ArtifactMismatch(format!("unsupported artifact version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + hlen {
        return Err(Error::ArtifactMismatch("truncated artifact header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + hlen])
        .map_err(|e| Error::ArtifactMismatch(format!("bad artifact header: {e}")))?;
    let body = &bytes[12 + hlen..];
    if body.len() % 8 != 0 {
        return Err(Error::ArtifactMismatch("truncated artifact body".into()));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, data))
}

pub fn save_encoder(params: &EncoderParams, path: &Path) -> Result<()> {
    let header = Header::Encoder {
        dims: params.dims,
        vocab_hash: params.vocab_hash.clone(),
        len: params.data.len(),
    };
    write_artifact(path, &header, &[&params.data])
}

pub fn load_encoder(path: &Path, vocab: &TypeVocab) -> Result<EncoderParams> {
    let (header, data) = read_artifact(path)?;
    let Header::Encoder { dims, vocab_hash, len } = header else {
        return Err(Error::ArtifactMismatch(format!("{} is not an encoder artifact", path.display())));
    };
    if vocab_hash != vocab.hash() {
        return Err(Error::ArtifactMismatch("encoder was built for a different vocabulary".into()));
    }
    if data.len() != len {
        return Err(Error::ArtifactMismatch("encoder blob length mismatch".into()));
    }
    let mut params = EncoderParams::init(vocab, dims, 0);
    if params.data.len() != len {
        return Err(Error::ArtifactMismatch("encoder layout length mismatch".into()));
    }
    params.data = data;
    Ok(params)
}

/// Hash binding a sniffer to the exact detector it was trained against.
pub fn detector_hash(params: &EncoderParams, head: &DetectorHead) -> String {
    let mut hasher = Sha256::new();
    for v in params.data.iter().chain(head.data.iter()) {
        hasher.update(v.to_le_bytes());
    }
    hasher.update(params.vocab_hash.as_bytes());
    let digest = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

pub fn save_detector(params: &EncoderParams, head: &DetectorHead, path: &Path) -> Result<()> {
    let header = Header::Detector {
        dims: params.dims,
        head_dims: head.dims,
        d_emb: head.d_emb,
        edge_attr_dims: head.edge_attr_dims.clone(),
        vocab_hash: params.vocab_hash.clone(),
        tau: head.tau,
        enc_len: params.data.len(),
        head_len: head.data.len(),
    };
    write_artifact(path, &header, &[&params.data, &head.data])
}

pub fn load_detector(path: &Path, vocab: &TypeVocab) -> Result<(EncoderParams, DetectorHead)> {
    let (header, data) = read_artifact(path)?;
    let Header::Detector { dims, head_dims, d_emb, edge_attr_dims, vocab_hash, tau, enc_len, head_len } =
        header
    else {
        return Err(Error::ArtifactMismatch(format!("{} is not a detector artifact", path.display())));
    };
    if vocab_hash != vocab.hash() {
        return Err(Error::ArtifactMismatch("detector was built for a different vocabulary".into()));
    }
    if data.len() != enc_len + head_len {
        return Err(Error::ArtifactMismatch("detector blob length mismatch".into()));
    }
    let layout = EncoderLayout::new(vocab, dims, 0);
    if layout.total != enc_len {
        return Err(Error::ArtifactMismatch("encoder layout length mismatch".into()));
    }
    let mut params = EncoderParams::init(vocab, dims, 0);
    params.data = data[..enc_len].to_vec();
    let mut head = DetectorHead::init(vocab, d_emb, head_dims, 0);
    if head.data.len() != head_len || head.edge_attr_dims != edge_attr_dims {
        return Err(Error::ArtifactMismatch("head layout mismatch".into()));
    }
    head.data = data[enc_len..].to_vec();
    head.tau = tau;
    head.trained = true;
    Ok((params, head))
}

pub fn save_sniffer(net: &SnifferNet, path: &Path) -> Result<()> {
    let header = Header::Sniffer {
        vocab_hash: net.vocab_hash.clone(),
        detector_hash: net.detector_hash.clone(),
        d_hidden: net.d_hidden,
        vec_dim: net.vec_dim,
        d_time: net.d_time,
        max_node_feat: net.max_node_feat,
        max_edge_attr: net.max_edge_attr,
        time_len: net.time_linear.len(),
        len: net.data.len(),
    };
    write_artifact(path, &header, &[&net.time_linear, &net.data])
}

/// Loads a sniffer and checks it was trained against `expected_detector`.
pub fn load_sniffer(path: &Path, vocab: &TypeVocab, expected_detector: &str) -> Result<SnifferNet> {
    let (header, data) = read_artifact(path)?;
    let Header::Sniffer {
        vocab_hash,
        detector_hash,
        d_hidden,
        vec_dim,
        d_time,
        max_node_feat,
        max_edge_attr,
        time_len,
        len,
    } = header
    else {
        return Err(Error::ArtifactMismatch(format!("{} is not a sniffer artifact", path.display())));
    };
    if vocab_hash != vocab.hash() {
        return Err(Error::ArtifactMismatch("sniffer was built for a different vocabulary".into()));
    }
    if detector_hash != expected_detector {
        return Err(Error::ArtifactMismatch(
            "sniffer refuses to load against a different detector".into(),
        ));
    }
    if data.len() != time_len + len {
        return Err(Error::ArtifactMismatch("sniffer blob length mismatch".into()));
    }
    Ok(SnifferNet {
        vocab_hash,
        detector_hash,
        d_hidden,
        vec_dim,
        d_time,
        time_linear: data[..time_len].to_vec(),
        max_node_feat,
        max_edge_attr,
        data: data[time_len..].to_vec(),
        trained: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_graph::synth::synthetic_vocab;

    #[test]
    fn encoder_round_trip_and_vocab_guard() {
        let vocab = synthetic_vocab();
        let dims = EncoderDims { d_time: 4, d_mem: 8, d_emb: 8 };
        let params = EncoderParams::init(&vocab, dims, 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.bin");
        save_encoder(&params, &path).unwrap();
        let loaded = load_encoder(&path, &vocab).unwrap();
        assert_eq!(params.data, loaded.data);
        assert_eq!(params.dims, loaded.dims);

        let other = crate::event_graph::cert::cert_vocab(vec![]);
        assert!(load_encoder(&path, &other).is_err());
    }

    #[test]
    fn detector_round_trip_preserves_tau() {
        let vocab = synthetic_vocab();
        let dims = EncoderDims { d_time: 4, d_mem: 8, d_emb: 8 };
        let params = EncoderParams::init(&vocab, dims, 7);
        let mut head = DetectorHead::init(&vocab, 8, HeadDims { d_hidden: 8 }, 3);
        head.tau = 0.7;
        head.trained = true;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.bin");
        save_detector(&params, &head, &path).unwrap();
        let (p2, h2) = load_detector(&path, &vocab).unwrap();
        assert_eq!(params.data, p2.data);
        assert_eq!(head.data, h2.data);
        assert_eq!(h2.tau, 0.7);
        assert_eq!(detector_hash(&params, &head), detector_hash(&p2, &h2));
    }

    #[test]
    fn sniffer_refuses_foreign_detector() {
        let vocab = synthetic_vocab();
        let dims = EncoderDims { d_time: 4, d_mem: 8, d_emb: 8 };
        let params = EncoderParams::init(&vocab, dims, 7);
        let mut b = crate::event_graph::StreamBuilder::new(vocab.clone()).unwrap();
        let u = b.add_node("u", "user", vec![]).unwrap();
        let p = b.add_node("p", "pc", vec![]).unwrap();
        b.add_event(u, p, "logon", vec![1.0, 0.0], 0.0, None).unwrap();
        let stream = b.finish().unwrap();
        let mut net = SnifferNet::zeroed(&stream, &params);
        net.detector_hash = "abc".into();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sniffer.bin");
        save_sniffer(&net, &path).unwrap();
        assert!(load_sniffer(&path, &vocab, "abc").is_ok());
        assert!(load_sniffer(&path, &vocab, "different").is_err());
    }
}
