//! Binary wire form of particle populations.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "DCSMCENV" | version u8 | model tag u8 | node u64 | N u64
//! | master seed u64 | path length u32 | path u32 × len | stage u64
//! | log_z_hat f64 | log-weights f64 × N | state bytes u64 | states
//! | checksum (first 8 bytes of SHA-256 over everything before it)
//! ```

use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{DcError, Result};
use crate::models::gsm::GaussianSquaredLattice;
use crate::models::hier::{HierState, HierarchicalBinomial};
use crate::models::ising::IsingLattice;
use crate::models::lattice::{LatticeTree, SiteModel};
use crate::particle::{ParticlePopulation, SeedPath};
use crate::tree::{NodeId, TreeModel};

pub const MAGIC: &[u8; 8] = b"DCSMCENV";
pub const WIRE_VERSION: u8 = 1;
const CHECKSUM_LEN: usize = 8;

pub const TAG_ISING: u8 = 1;
pub const TAG_GSM: u8 = 2;
pub const TAG_HIER: u8 = 3;

/// Cursor over a byte slice that reports how much was missing.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(DcError::TruncatedPayload { needed: usize::MAX })?;
        if end > self.buf.len() {
            return Err(DcError::TruncatedPayload { needed: end - self.buf.len() });
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const K: usize>(&mut self) -> Result<[u8; K]> {
        Ok(self.take(K)?.try_into().expect("exact length"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Models whose node states can be written to and read from bytes.
pub trait WireModel: TreeModel {
    const MODEL_TAG: u8;

    fn encode_state(&self, node: NodeId, state: &Self::State, out: &mut Vec<u8>);

    fn decode_state(&self, node: NodeId, input: &mut Reader<'_>) -> Result<Self::State>;
}

/// Fixed-width encoding of one lattice site value.
pub trait WireValue: Sized {
    fn put(&self, out: &mut Vec<u8>);
    fn get(input: &mut Reader<'_>) -> Result<Self>;
}

impl WireValue for i8 {
    fn put(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(input: &mut Reader<'_>) -> Result<Self> {
        Ok(input.u8()? as i8)
    }
}

impl WireValue for f64 {
    fn put(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(input: &mut Reader<'_>) -> Result<Self> {
        input.f64()
    }
}

/// Tag identifying a site model on the wire.
pub trait SiteModelTag {
    const TAG: u8;
}

impl SiteModelTag for IsingLattice {
    const TAG: u8 = TAG_ISING;
}

impl SiteModelTag for GaussianSquaredLattice {
    const TAG: u8 = TAG_GSM;
}

impl<K> WireModel for LatticeTree<K>
where
    K: SiteModel + SiteModelTag,
    K::Value: WireValue,
{
    const MODEL_TAG: u8 = K::TAG;

    fn encode_state(&self, _node: NodeId, state: &Self::State, out: &mut Vec<u8>) {
        for v in state {
            v.put(out);
        }
    }

    fn decode_state(&self, node: NodeId, input: &mut Reader<'_>) -> Result<Self::State> {
        (0..self.node(node).sites.len()).map(|_| K::Value::get(input)).collect()
    }
}

impl WireModel for HierarchicalBinomial {
    const MODEL_TAG: u8 = TAG_HIER;

    /// Sampled values of the subtree in pre-order; messages are recomputed
    /// on decode.
    fn encode_state(&self, _node: NodeId, state: &Self::State, out: &mut Vec<u8>) {
        let mut stack: Vec<&HierState> = vec![state];
        while let Some(s) = stack.pop() {
            out.extend_from_slice(&s.value.to_le_bytes());
            stack.extend(s.children.iter().rev().map(|c| c.as_ref()));
        }
    }

    fn decode_state(&self, node: NodeId, input: &mut Reader<'_>) -> Result<Self::State> {
        let topo = self.topology();
        let mut values = vec![0.0; topo.len()];
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            values[v] = input.f64()?;
            stack.extend(topo.children(v).iter().rev());
        }
        let mut built: Vec<Option<Arc<HierState>>> = vec![None; topo.len()];
        for v in topo.subtree(node) {
            let kids = topo.children(v).iter().map(|&c| built[c].take().expect("children first")).collect();
            built[v] = Some(Arc::new(self.assemble(v, values[v], kids)?));
        }
        Ok(built[node].take().expect("node built"))
    }
}

/// A population in transit.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationEnvelope {
    pub model_tag: u8,
    pub node: NodeId,
    pub n: usize,
    pub seed: SeedPath,
    pub log_z_hat: f64,
    pub log_weights: Vec<f64>,
    pub state_bytes: Vec<u8>,
}

impl PopulationEnvelope {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.push(WIRE_VERSION);
        out.push(self.model_tag);
        out.extend_from_slice(&(self.node as u64).to_le_bytes());
        out.extend_from_slice(&(self.n as u64).to_le_bytes());
        out.extend_from_slice(&self.seed.master_seed.to_le_bytes());
        out.extend_from_slice(&(self.seed.path.len() as u32).to_le_bytes());
        for p in &self.seed.path {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out.extend_from_slice(&self.seed.stage.to_le_bytes());
        out.extend_from_slice(&self.log_z_hat.to_le_bytes());
        for w in &self.log_weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.extend_from_slice(&(self.state_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.state_bytes);
        let sum = checksum(&out);
        out.extend_from_slice(&sum);
        out
    }

    /// Size of [`to_bytes`](Self::to_bytes) output.
    pub fn encoded_len(&self) -> usize {
        8 + 1 + 1 + 8 + 8 + 8 + 4 + 4 * self.seed.path.len() + 8 + 8 + 8 * self.n + 8 + self.state_bytes.len() + CHECKSUM_LEN
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKSUM_LEN {
            return Err(DcError::TruncatedPayload { needed: CHECKSUM_LEN - bytes.len() });
        }
        let (body, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if checksum(body) != sum {
            return Err(DcError::ChecksumMismatch);
        }
        let mut r = Reader::new(body);
        if r.take(8)? != MAGIC {
            return Err(DcError::MalformedEnvelope("bad magic".into()));
        }
        let version = r.u8()?;
        if version != WIRE_VERSION {
            return Err(DcError::MalformedEnvelope(format!("unsupported version {version}")));
        }
        let model_tag = r.u8()?;
        let node = r.u64()? as usize;
        let n = r.u64()? as usize;
        let master_seed = r.u64()?;
        let path_len = r.u32()? as usize;
        let path = (0..path_len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let stage = r.u64()?;
        let log_z_hat = r.f64()?;
        if n.checked_mul(8).map_or(true, |b| b > r.remaining()) {
            return Err(DcError::TruncatedPayload { needed: n.saturating_mul(8).saturating_sub(r.remaining()) });
        }
        let log_weights = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let state_len = r.u64()? as usize;
        let state_bytes = r.take(state_len)?.to_vec();
        if r.remaining() != 0 {
            return Err(DcError::MalformedEnvelope(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { model_tag, node, n, seed: SeedPath { master_seed, path, stage }, log_z_hat, log_weights, state_bytes })
    }
}

fn checksum(bytes: &[u8]) -> [u8; CHECKSUM_LEN] {
    let digest = Sha256::digest(bytes);
    digest[..CHECKSUM_LEN].try_into().expect("digest is long enough")
}

/// Packs the population of `node` for shipping.
pub fn encode_population<M: WireModel>(
    model: &M,
    node: NodeId,
    pop: &ParticlePopulation<M::State>,
    master_seed: u64,
) -> PopulationEnvelope {
    let mut state_bytes = Vec::new();
    for s in &pop.states {
        model.encode_state(node, s, &mut state_bytes);
    }
    PopulationEnvelope {
        model_tag: M::MODEL_TAG,
        node,
        n: pop.len(),
        seed: model.topology().seed_path(master_seed, node),
        log_z_hat: pop.log_z_hat,
        log_weights: pop.log_weights.clone(),
        state_bytes,
    }
}

/// Unpacks an envelope produced by [`encode_population`] for the same model.
pub fn decode_population<M: WireModel>(model: &M, env: &PopulationEnvelope) -> Result<ParticlePopulation<M::State>> {
    if env.model_tag != M::MODEL_TAG {
        return Err(DcError::UnknownModelTag(env.model_tag));
    }
    if env.node >= model.topology().len() {
        return Err(DcError::MalformedEnvelope(format!("node {} outside the tree", env.node)));
    }
    if env.log_weights.len() != env.n {
        return Err(DcError::PopulationSizeMismatch { expected: env.n, found: env.log_weights.len() });
    }
    let mut r = Reader::new(&env.state_bytes);
    let states = (0..env.n).map(|_| model.decode_state(env.node, &mut r)).collect::<Result<Vec<_>>>()?;
    if r.remaining() != 0 {
        return Err(DcError::MalformedEnvelope(format!("{} unread state bytes", r.remaining())));
    }
    ParticlePopulation::new(states, env.log_weights.clone(), env.log_z_hat)
}
