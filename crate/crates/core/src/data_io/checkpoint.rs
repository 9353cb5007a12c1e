use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{hex_digest, ParamStore, Parameter, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const DATA_FILE: &str = "tensors.bin";
const MAGIC: &str = "autogan-checkpoint";
const ADAM_M: &str = "#adam_m";
const ADAM_V: &str = "#adam_v";

/// One tensor's place in the data file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the data file.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointManifest {
    pub version: u32,
    pub config_hash: String,
    pub data_sha256: String,
    pub rngs: BTreeMap<String, RngState>,
    pub meta: BTreeMap<String, String>,
    pub entries: Vec<ManifestEntry>,
}

/// Named tensors plus small metadata, persisted as a text manifest and one
/// little-endian `f32` data file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub tensors: BTreeMap<String, Tensor>,
    pub rngs: BTreeMap<String, RngState>,
    pub meta: BTreeMap<String, String>,
}

fn check_token(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(Error::Input(format!("{kind} `{s}` must be non-empty and contain no whitespace")));
    }
    Ok(())
}

impl Checkpoint {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Checkpoint { config_hash: config_hash.into(), ..Default::default() }
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta.get(key).map(String::as_str).ok_or_else(|| Error::Corruption(format!("missing metadata `{key}`")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.meta(key)?.parse().map_err(|_| Error::Corruption(format!("malformed metadata `{key}`")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::Corruption(format!("missing tensor `{name}`")))
    }

    /// Store every parameter under `prefix` with its Adam moments and step.
    pub fn put_store(&mut self, prefix: &str, store: &ParamStore) {
        for (name, p) in store.iter() {
            let key = format!("{prefix}{name}");
            self.tensors.insert(key.clone(), p.value.clone());
            self.tensors.insert(format!("{key}{ADAM_M}"), p.adam_m.clone());
            self.tensors.insert(format!("{key}{ADAM_V}"), p.adam_v.clone());
            self.meta.insert(format!("step:{key}"), p.step_count.to_string());
        }
    }

    /// Inverse of [`Checkpoint::put_store`].
    pub fn take_store(&self, prefix: &str) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for (key, value) in self.tensors.range(prefix.to_string()..) {
            let Some(name) = key.strip_prefix(prefix) else { break };
            if name.contains('#') {
                continue;
            }
            let m = self.tensor(&format!("{key}{ADAM_M}"))?.clone();
            let v = self.tensor(&format!("{key}{ADAM_V}"))?.clone();
            let step_count = self.meta_parse(&format!("step:{key}"))?;
            let grad = Tensor::zeros(value.shape());
            store.insert_param(name, Parameter { value: value.clone(), grad, adam_m: m, adam_v: v, step_count });
        }
        Ok(store)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Write `ckpt` into `dir` (created if needed). The data file is written
/// first, then the manifest, each through a temporary file and a rename.
pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    check_token("config hash", &ckpt.config_hash)?;
    let mut data = Vec::new();
    let mut entries = Vec::new();
    for (name, t) in &ckpt.tensors {
        check_token("tensor name", name)?;
        entries.push(ManifestEntry { name: name.clone(), shape: t.shape().to_vec(), offset: data.len() as u64 });
        for v in t.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        config_hash: ckpt.config_hash.clone(),
        data_sha256: hex_digest(Sha256::digest(&data).as_slice()),
        rngs: ckpt.rngs.clone(),
        meta: ckpt.meta.clone(),
        entries,
    };
    let mut text = format!("{MAGIC} {}\nconfig_hash {}\ndata_sha256 {}\n", manifest.version, manifest.config_hash, manifest.data_sha256);
    for (name, r) in &manifest.rngs {
        check_token("rng name", name)?;
        text += &format!("rng {name} {} {} {}\n", hex_digest(&r.seed), r.stream, r.word_pos);
    }
    for (k, v) in &manifest.meta {
        check_token("metadata key", k)?;
        if v.contains('\n') {
            return Err(Error::Input(format!("metadata `{k}` contains a newline")));
        }
        text += &format!("meta {k} {v}\n");
    }
    for e in &manifest.entries {
        let shape: Vec<String> = e.shape.iter().map(usize::to_string).collect();
        text += &format!("tensor {} {} {}\n", e.name, if shape.is_empty() { "-".into() } else { shape.join(",") }, e.offset);
    }
    write_atomic(&dir.join(DATA_FILE), &data)?;
    write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(manifest)
}

fn corrupt(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Corruption(format!("manifest line {line}: {msg}"))
}

fn parse_seed(hex: &str, line: usize) -> Result<[u8; 32]> {
    if hex.len() != 64 {
        return Err(corrupt(line, "rng seed must be 64 hex digits"));
    }
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| corrupt(line, "bad hex in rng seed"))?;
    }
    Ok(seed)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| corrupt(1, "empty manifest"))?;
    let version = header
        .strip_prefix(MAGIC)
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| corrupt(1, "not an autogan checkpoint manifest"))?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(1, format!("unsupported version {version}")));
    }
    let mut m = CheckpointManifest {
        version,
        config_hash: String::new(),
        data_sha256: String::new(),
        rngs: BTreeMap::new(),
        meta: BTreeMap::new(),
        entries: Vec::new(),
    };
    for (ln, line) in lines {
        let (kind, rest) = line.split_once(' ').ok_or_else(|| corrupt(ln, "malformed line"))?;
        match kind {
            "config_hash" => m.config_hash = rest.to_string(),
            "data_sha256" => m.data_sha256 = rest.to_string(),
            "meta" => {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                m.meta.insert(k.to_string(), v.to_string());
            }
            "rng" => {
                let f: Vec<&str> = rest.split(' ').collect();
                let [name, seed, stream, pos] = f[..] else { return Err(corrupt(ln, "rng line needs 4 fields")) };
                let state = RngState {
                    seed: parse_seed(seed, ln)?,
                    stream: stream.parse().map_err(|_| corrupt(ln, "bad rng stream"))?,
                    word_pos: pos.parse().map_err(|_| corrupt(ln, "bad rng position"))?,
                };
                m.rngs.insert(name.to_string(), state);
            }
            "tensor" => {
                let f: Vec<&str> = rest.split(' ').collect();
                let [name, shape, offset] = f[..] else { return Err(corrupt(ln, "tensor line needs 3 fields")) };
                let shape = if shape == "-" {
                    Vec::new()
                } else {
                    shape.split(',').map(|d| d.parse().map_err(|_| corrupt(ln, "bad shape"))).collect::<Result<_>>()?
                };
                let offset = offset.parse().map_err(|_| corrupt(ln, "bad offset"))?;
                m.entries.push(ManifestEntry { name: name.to_string(), shape, offset });
            }
            other => return Err(corrupt(ln, format!("unknown record `{other}`"))),
        }
    }
    Ok(m)
}

/// Load and verify a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(dir)?;
    let path = dir.join(DATA_FILE);
    let data = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let digest = hex_digest(Sha256::digest(&data).as_slice());
    if digest != manifest.data_sha256 {
        return Err(Error::Corruption(format!("data file hash {digest} does not match manifest {}", manifest.data_sha256)));
    }
    let mut ckpt = Checkpoint::new(manifest.config_hash.clone());
    ckpt.rngs = manifest.rngs.clone();
    ckpt.meta = manifest.meta.clone();
    let mut expected = 0u64;
    for e in &manifest.entries {
        if e.offset != expected {
            return Err(Error::Corruption(format!("tensor `{}` at offset {} but expected {expected}", e.name, e.offset)));
        }
        let numel: usize = e.shape.iter().product();
        let end = e.offset + 4 * numel as u64;
        if end > data.len() as u64 {
            return Err(Error::Corruption(format!("tensor `{}` runs past the end of the data file", e.name)));
        }
        let values =
            data[e.offset as usize..end as usize].chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        ckpt.tensors.insert(e.name.clone(), Tensor::new(e.shape.clone(), values)?);
        expected = end;
    }
    if expected != data.len() as u64 {
        return Err(Error::Corruption(format!("{} trailing bytes in data file", data.len() as u64 - expected)));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        store.insert("a.weight", Tensor::randn(&[2, 3], 1.0, &mut rng));
        store.insert("b", Tensor::scalar(-0.0));
        store.get_mut("a.weight").unwrap().adam_m = Tensor::full(&[2, 3], 1e-30);
        store.get_mut("a.weight").unwrap().step_count = 7;
        let mut ckpt = Checkpoint::new("abc123");
        ckpt.put_store("gen/", &store);
        ckpt.tensors.insert("nan_is_fine".into(), Tensor::new(vec![1], vec![f32::from_bits(0x7fc0_0001)]).unwrap());
        rng.next_u64();
        ckpt.rngs.insert("main".into(), RngState::capture(&rng));
        ckpt.meta.insert("iter".into(), "4".into());
        ckpt
    }

    fn bits(t: &Tensor) -> Vec<u32> {
        t.data().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = sample();
        let manifest = save_checkpoint(&ckpt, dir.path()).unwrap();
        assert_eq!(manifest.entries.len(), ckpt.tensors.len());
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.tensors.keys().collect::<Vec<_>>(), ckpt.tensors.keys().collect::<Vec<_>>());
        for (k, t) in &ckpt.tensors {
            assert_eq!(bits(t), bits(&back.tensors[k]), "{k}");
            assert_eq!(t.shape(), back.tensors[k].shape());
        }
        assert_eq!(back.meta, ckpt.meta);
        assert_eq!(back.rngs, ckpt.rngs);
        let mut a = ckpt.rngs["main"].restore();
        let mut b = back.rngs["main"].restore();
        assert_eq!(a.next_u64(), b.next_u64());
        let store = back.take_store("gen/").unwrap();
        assert_eq!(store.get("a.weight").unwrap().step_count, 7);
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn flipped_byte_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&sample(), dir.path()).unwrap();
        let path = dir.path().join(DATA_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes[5] ^= 0x01;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Corruption(_))));
    }

    #[test]
    fn offsets_are_contiguous() {
        let dir = tempfile::tempdir().unwrap();
        let m = save_checkpoint(&sample(), dir.path()).unwrap();
        let mut expected = 0;
        for e in &m.entries {
            assert_eq!(e.offset, expected);
            expected += 4 * e.shape.iter().product::<usize>() as u64;
        }
    }
}
