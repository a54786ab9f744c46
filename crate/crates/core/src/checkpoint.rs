//! Versioned single-file checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            8 bytes  "LDRLCKPT"
//! format version   u32
//! config digest    32 bytes
//! env digest       32 bytes
//! timesteps        u64
//! updates          u64
//! config text      u32 length + UTF-8 canonical config
//! distribution     u16 length + UTF-8 name
//! rng streams      u32 count, each: u16 name length + name, seed[32], stream u64, word position u128
//! arrays           u32 count, each: u16 name length + name, u8 rank, rank x u64 dims, f64 data
//! checksum         32 bytes sha256 of everything above
//! ```

use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{Mlp, RunningMeanStd};
use crate::policy::ActorCritic;

pub const MAGIC: &[u8; 8] = b"LDRLCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSnapshot {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngSnapshot {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: ActorCritic,
    pub rng_states: Vec<(String, RngSnapshot)>,
    pub timesteps: u64,
    pub updates: u64,
}

impl Checkpoint {
    pub fn config_digest(&self) -> String {
        self.config.digest()
    }

    pub fn env_digest(&self) -> String {
        self.config.env_digest()
    }

    /// Describes an environment mismatch between this checkpoint and `run`, if any.
    pub fn env_mismatch(&self, run: &RunConfig) -> Option<String> {
        let (ours, theirs) = (self.env_digest(), run.env_digest());
        (ours != theirs).then(|| {
            format!(
                "checkpoint was trained with env digest {} but the run uses {}",
                &ours[..12],
                &theirs[..12]
            )
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(FORMAT_VERSION);
        w.bytes(&hex_to_32(&self.config.digest()));
        w.bytes(&hex_to_32(&self.config.env_digest()));
        w.u64(self.timesteps);
        w.u64(self.updates);
        let text = self.config.to_canonical_string();
        w.u32(text.len() as u32);
        w.bytes(text.as_bytes());
        w.name(&self.params.distribution);

        w.u32(self.rng_states.len() as u32);
        for (name, snap) in &self.rng_states {
            w.name(name);
            w.bytes(&snap.seed);
            w.u64(snap.stream);
            w.bytes(&snap.word_pos.to_le_bytes());
        }

        let arrays = arrays_of(&self.params);
        w.u32(arrays.len() as u32);
        for (name, dims, data) in &arrays {
            w.name(name);
            w.buf.push(dims.len() as u8);
            for d in dims {
                w.u64(*d as u64);
            }
            for v in data.iter() {
                w.bytes(&v.to_le_bytes());
            }
        }
        let checksum = Sha256::digest(&w.buf);
        w.bytes(&checksum);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 {
            return Err(Error::format("checkpoint is truncated"));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::format("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::format(format!(
                "unsupported checkpoint format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(Error::format("checkpoint checksum mismatch (truncated or corrupt)"));
        }

        let mut r = Reader { buf: body, pos: 12 };
        let config_digest = hex::encode(r.take(32)?);
        let env_digest = hex::encode(r.take(32)?);
        let timesteps = r.u64()?;
        let updates = r.u64()?;
        let text_len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(text_len)?)
            .map_err(|_| Error::format("checkpoint config is not UTF-8"))?;
        let config = RunConfig::parse(text).map_err(|e| Error::format(format!("checkpoint config: {e}")))?;
        if config.digest() != config_digest || config.env_digest() != env_digest {
            return Err(Error::format("checkpoint digests do not match its embedded config"));
        }
        let distribution = r.name()?;

        let rng_count = r.u32()? as usize;
        let mut rng_states = Vec::with_capacity(rng_count.min(64));
        for _ in 0..rng_count {
            let name = r.name()?;
            let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
            let stream = r.u64()?;
            let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
            rng_states.push((name, RngSnapshot { seed, stream, word_pos }));
        }

        let array_count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(array_count.min(64));
        for _ in 0..array_count {
            let name = r.name()?;
            let rank = r.take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(usize::try_from(r.u64()?).map_err(|_| Error::format("array dimension overflow"))?);
            }
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::format("array size overflow"))?;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::format("array size overflow"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            arrays.push((name, dims, data));
        }
        if r.pos != body.len() {
            return Err(Error::format("trailing bytes after checkpoint arrays"));
        }
        let params = params_from_arrays(arrays, distribution)?;
        Ok(Self {
            config,
            params,
            rng_states,
            timesteps,
            updates,
        })
    }
}

type Array = (String, Vec<usize>, Vec<f64>);

fn mlp_arrays(prefix: &str, net: &Mlp, out: &mut Vec<Array>) {
    let sizes = net.sizes();
    let mut offset = 0;
    for (k, w) in sizes.windows(2).enumerate() {
        let (inputs, outputs) = (w[0], w[1]);
        let params = net.params();
        out.push((
            format!("{prefix}.l{k}.weight"),
            vec![outputs, inputs],
            params[offset..offset + outputs * inputs].to_vec(),
        ));
        offset += outputs * inputs;
        out.push((format!("{prefix}.l{k}.bias"), vec![outputs], params[offset..offset + outputs].to_vec()));
        offset += outputs;
    }
}

fn arrays_of(p: &ActorCritic) -> Vec<Array> {
    let mut out = Vec::new();
    mlp_arrays("actor", &p.actor, &mut out);
    mlp_arrays("critic", &p.critic, &mut out);
    out.push(("dist.extra".into(), vec![p.extra.len()], p.extra.clone()));
    out.push(("obs.mean".into(), vec![p.normalizer.mean.len()], p.normalizer.mean.clone()));
    out.push(("obs.var".into(), vec![p.normalizer.var.len()], p.normalizer.var.clone()));
    out.push(("obs.count".into(), vec![1], vec![p.normalizer.count]));
    out
}

fn mlp_from_arrays(prefix: &str, arrays: &mut Vec<Array>) -> Result<Mlp> {
    let mut sizes: Vec<usize> = Vec::new();
    let mut params = Vec::new();
    for k in 0.. {
        let weight_name = format!("{prefix}.l{k}.weight");
        let Some(pos) = arrays.iter().position(|(n, _, _)| *n == weight_name) else {
            break;
        };
        let (_, dims, data) = arrays.remove(pos);
        let [outputs, inputs] = dims[..] else {
            return Err(Error::format(format!("{weight_name} must be rank 2")));
        };
        match sizes.last() {
            None => sizes.push(inputs),
            Some(&prev) if prev == inputs => {}
            Some(_) => return Err(Error::format(format!("{weight_name} does not chain with the previous layer"))),
        }
        sizes.push(outputs);
        params.extend(data);
        let bias_name = format!("{prefix}.l{k}.bias");
        let pos = arrays
            .iter()
            .position(|(n, _, _)| *n == bias_name)
            .ok_or_else(|| Error::format(format!("missing {bias_name}")))?;
        let (_, dims, data) = arrays.remove(pos);
        if dims != [outputs] {
            return Err(Error::format(format!("{bias_name} has shape {dims:?}")));
        }
        params.extend(data);
    }
    if sizes.len() < 2 {
        return Err(Error::format(format!("checkpoint has no {prefix} network")));
    }
    Mlp::from_params(&sizes, params).ok_or_else(|| Error::format(format!("{prefix} parameter count mismatch")))
}

fn take_vector(arrays: &mut Vec<Array>, name: &str) -> Result<Vec<f64>> {
    let pos = arrays
        .iter()
        .position(|(n, _, _)| n == name)
        .ok_or_else(|| Error::format(format!("missing array {name}")))?;
    let (_, dims, data) = arrays.remove(pos);
    if dims.len() != 1 {
        return Err(Error::format(format!("{name} must be rank 1")));
    }
    Ok(data)
}

fn params_from_arrays(mut arrays: Vec<Array>, distribution: String) -> Result<ActorCritic> {
    let actor = mlp_from_arrays("actor", &mut arrays)?;
    let critic = mlp_from_arrays("critic", &mut arrays)?;
    let extra = take_vector(&mut arrays, "dist.extra")?;
    let mean = take_vector(&mut arrays, "obs.mean")?;
    let var = take_vector(&mut arrays, "obs.var")?;
    let count = take_vector(&mut arrays, "obs.count")?;
    if let Some((name, _, _)) = arrays.first() {
        return Err(Error::format(format!("unexpected array {name}")));
    }
    if mean.len() != actor.input_dim() || var.len() != mean.len() || count.len() != 1 {
        return Err(Error::format("observation normalizer shape mismatch"));
    }
    if critic.input_dim() != actor.input_dim() || critic.output_dim() != 1 {
        return Err(Error::format("critic shape mismatch"));
    }
    Ok(ActorCritic {
        actor,
        critic,
        extra,
        normalizer: RunningMeanStd {
            mean,
            var,
            count: count[0],
        },
        distribution,
    })
}

fn hex_to_32(digest: &str) -> [u8; 32] {
    let bytes = hex::decode(digest).expect("digests are hex sha256");
    bytes.try_into().expect("sha256 is 32 bytes")
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn name(&mut self, s: &str) {
        self.bytes(&(s.len() as u16).to_le_bytes());
        self.bytes(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format("checkpoint is truncated"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn name(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::format("name is not UTF-8"))
    }
}
