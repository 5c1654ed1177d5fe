//! Single-file checkpoints.
//!
//! Layout: one line of compact JSON (the header) terminated by `\n`, then the
//! payload of little-endian `f64` values. The header records the format
//! version, the configuration, the vocabulary, optimizer scalars, the epoch,
//! the generator state and a manifest of every array (name, kind, shape and
//! byte offset into the payload). Serialisation is deterministic, so loading
//! and saving again reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::TrainState;
use crate::config::TrainConfig;
use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::numerics::{ModelParams, Moments, OptimizerState, Tensor};

pub const FORMAT: &str = "ecan-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    config: TrainConfig,
    vocab: VocabHeader,
    epoch: usize,
    rng: RngHeader,
    optimizer: OptimizerHeader,
    arrays: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabHeader {
    tokens: Vec<String>,
    categories: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngHeader {
    seed: String,
    stream: u64,
    /// Decimal, since it does not fit a JSON number.
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerHeader {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    /// Per-parameter update counts, for the parameters that have moments.
    steps: BTreeMap<String, u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ArrayKind {
    Param,
    AdamM,
    AdamV,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    kind: ArrayKind,
    shape: [usize; 2],
    offset: usize,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<[u8; 32]> {
    let bad = || Error::Checkpoint(format!("bad rng seed {s:?}"));
    if s.len() != 64 || !s.is_ascii() {
        return Err(bad());
    }
    let mut out = [0u8; 32];
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(out)
}

pub fn to_bytes(state: &TrainState) -> Vec<u8> {
    let mut arrays = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut push = |name: &str, kind: ArrayKind, t: &Tensor| {
        arrays.push(ArrayEntry {
            name: name.to_string(),
            kind,
            shape: t.shape(),
            offset: payload.len(),
        });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (name, t) in state.params.iter() {
        push(name, ArrayKind::Param, t);
    }
    for (name, m) in &state.optimizer.moments {
        push(name, ArrayKind::AdamM, &m.first);
        push(name, ArrayKind::AdamV, &m.second);
    }
    let opt = &state.optimizer;
    let header = Header {
        format: FORMAT.to_string(),
        version: VERSION,
        config: state.config.clone(),
        vocab: VocabHeader {
            tokens: state.vocab.tokens().to_vec(),
            categories: state.vocab.categories().to_vec(),
        },
        epoch: state.epoch,
        rng: RngHeader {
            seed: hex(&state.rng.get_seed()),
            stream: state.rng.get_stream(),
            word_pos: state.rng.get_word_pos().to_string(),
        },
        optimizer: OptimizerHeader {
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            weight_decay: opt.weight_decay,
            step: opt.step,
            steps: opt.moments.iter().map(|(k, m)| (k.clone(), m.steps)).collect(),
        },
        arrays,
    };
    let mut out = serde_json::to_vec(&header).expect("header serialises");
    out.push(b'\n');
    out.extend_from_slice(&payload);
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<TrainState> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header".into()))?;
    let (head, payload) = (&bytes[..nl], &bytes[nl + 1..]);
    let raw: serde_json::Value =
        serde_json::from_slice(head).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    if raw.get("format").and_then(|v| v.as_str()) != Some(FORMAT) {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Checkpoint("header has no version".into()))?;
    if version != u64::from(VERSION) {
        return Err(Error::CheckpointVersion {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: VERSION,
        });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;

    let mut params = ModelParams::new();
    let mut first = BTreeMap::new();
    let mut second = BTreeMap::new();
    let mut expected_offset = 0;
    for a in &header.arrays {
        let [r, c] = a.shape;
        let nbytes = r * c * 8;
        if r == 0 || c == 0 || a.offset != expected_offset || a.offset + nbytes > payload.len() {
            return Err(Error::Checkpoint(format!("array `{}` has a bad extent", a.name)));
        }
        expected_offset += nbytes;
        let data = payload[a.offset..a.offset + nbytes]
            .chunks_exact(8)
            .map(|ch| f64::from_le_bytes(ch.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(r, c, data);
        let dup = match a.kind {
            ArrayKind::Param => params.contains(&a.name) || {
                params.insert(a.name.clone(), t);
                false
            },
            ArrayKind::AdamM => first.insert(a.name.clone(), t).is_some(),
            ArrayKind::AdamV => second.insert(a.name.clone(), t).is_some(),
        };
        if dup {
            return Err(Error::Checkpoint(format!("duplicate array `{}`", a.name)));
        }
    }
    if expected_offset != payload.len() {
        return Err(Error::Checkpoint("trailing payload bytes".into()));
    }

    let oh = header.optimizer;
    let mut moments = BTreeMap::new();
    for (name, steps) in oh.steps {
        let (Some(m), Some(v)) = (first.remove(&name), second.remove(&name)) else {
            return Err(Error::Checkpoint(format!("incomplete moments for `{name}`")));
        };
        if !params.contains(&name) || params.tensor(&name).shape() != m.shape() || m.shape() != v.shape() {
            return Err(Error::Checkpoint(format!("moments for `{name}` do not match a parameter")));
        }
        moments.insert(
            name,
            Moments {
                first: m,
                second: v,
                steps,
            },
        );
    }
    if let Some(name) = first.keys().chain(second.keys()).next() {
        return Err(Error::Checkpoint(format!("moments for `{name}` lack a step count")));
    }

    let vocab = Vocab::from_parts(header.vocab.tokens, header.vocab.categories)?;
    let mut rng = ChaCha8Rng::from_seed(unhex(&header.rng.seed)?);
    rng.set_stream(header.rng.stream);
    let word_pos: u128 = header
        .rng
        .word_pos
        .parse()
        .map_err(|_| Error::Checkpoint("bad rng position".into()))?;
    rng.set_word_pos(word_pos);

    let state = TrainState {
        config: header.config,
        vocab,
        params,
        optimizer: OptimizerState {
            beta1: oh.beta1,
            beta2: oh.beta2,
            eps: oh.eps,
            weight_decay: oh.weight_decay,
            step: oh.step,
            moments,
        },
        epoch: header.epoch,
        rng,
    };
    check_layout(&state)?;
    Ok(state)
}

/// The stored parameters must be exactly those the stored configuration
/// builds, with the same shapes.
fn check_layout(state: &TrainState) -> Result<()> {
    state.config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let fresh = crate::model::init_params(
        &state.config,
        state.vocab.len(),
        state.vocab.num_categories(),
        &mut rng,
    );
    for (name, t) in fresh.iter() {
        match state.params.get(name) {
            Some(p) if p.shape() == t.shape() => {}
            Some(p) => {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    p.shape(),
                    t.shape()
                )))
            }
            None => return Err(Error::Checkpoint(format!("missing parameter `{name}`"))),
        }
    }
    if state.params.len() != fresh.len() {
        return Err(Error::Checkpoint("unexpected extra parameters".into()));
    }
    Ok(())
}

/// Writes to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn save(path: impl AsRef<Path>, state: &TrainState) -> Result<()> {
    write_atomic(path.as_ref(), &to_bytes(state))
}

pub fn load(path: impl AsRef<Path>) -> Result<TrainState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;
    use crate::corpus::synth::{generate, SynthOptions};
    use crate::trainer::train_step;

    fn trained_state() -> TrainState {
        let (cats, docs) = generate(&SynthOptions {
            reviews: 4,
            categories: 3,
            ..SynthOptions::default()
        });
        let vocab = build_vocab(&docs, 1, cats).unwrap();
        let mut st = TrainState::new(TrainConfig::tiny(), vocab);
        for d in &docs {
            train_step(&mut st, d).unwrap();
        }
        st.epoch = 1;
        st
    }

    #[test]
    fn round_trip_is_exact() {
        let st = trained_state();
        let bytes = to_bytes(&st);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, st);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn rng_resumes_where_it_stopped() {
        use rand::RngCore;
        let mut st = trained_state();
        let mut back = from_bytes(&to_bytes(&st)).unwrap();
        assert_eq!(st.rng.next_u64(), back.rng.next_u64());
    }

    #[test]
    fn version_mismatch() {
        let bytes = to_bytes(&trained_state());
        let text = String::from_utf8_lossy(&bytes);
        let patched = text.replacen("\"version\":1", "\"version\":7", 1);
        let mut raw = patched.as_bytes()[..patched.find('\n').unwrap() + 1].to_vec();
        raw.extend_from_slice(&bytes[bytes.iter().position(|&b| b == b'\n').unwrap() + 1..]);
        assert!(matches!(
            from_bytes(&raw),
            Err(Error::CheckpointVersion { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn truncated_payload_rejected() {
        let bytes = to_bytes(&trained_state());
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 8]), Err(Error::Checkpoint(_))));
        assert!(matches!(from_bytes(b"not json\n"), Err(Error::Checkpoint(_))));
        assert!(matches!(from_bytes(b""), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let st = trained_state();
        save(&path, &st).unwrap();
        assert_eq!(load(&path).unwrap(), st);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(matches!(load(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
