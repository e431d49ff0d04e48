//! Binary agent checkpoints.
//!
//! Layout: 8-byte magic, format version (u32 LE), header length (u64 LE), a
//! JSON header describing the agent, its networks and the environment, then
//! every network's parameters as f64 LE in header order, then the normalizer
//! mean and variance as f64 LE.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::CurriculumConfig;
use crate::agents::{DdpgAgent, DdpgParams, PggdAgent, PggdParams};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::neural::{Mlp, OutputKind, RunningNormalizer};
use crate::task::Layout;

pub const MAGIC: &[u8; 8] = b"CBLKCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetDescriptor {
    pub name: String,
    pub widths: Vec<usize>,
    pub output: OutputKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerMeta {
    pub dim: usize,
    pub count: f64,
    pub clip_range: f64,
    pub obs_clip: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// `ddpg` or `pggd`.
    pub agent: String,
    pub layout: Layout,
    pub env: EnvConfig,
    pub curriculum: CurriculumConfig,
    pub nets: Vec<NetDescriptor>,
    pub ddpg: Option<DdpgParams>,
    pub pggd: Option<PggdParams>,
    pub normalizer: NormalizerMeta,
    /// Epochs completed when the checkpoint was taken.
    pub epoch: usize,
    pub level: usize,
}

#[derive(Debug, Clone)]
pub enum AgentSnapshot {
    Ddpg(DdpgAgent),
    Pggd(PggdAgent),
}

impl AgentSnapshot {
    pub fn normalizer(&self) -> &RunningNormalizer {
        match self {
            AgentSnapshot::Ddpg(a) => &a.normalizer,
            AgentSnapshot::Pggd(a) => &a.normalizer,
        }
    }

    fn nets(&self) -> Vec<(&'static str, &Mlp)> {
        match self {
            AgentSnapshot::Ddpg(a) => vec![
                ("actor", &a.actor),
                ("critic", &a.critic),
                ("target_actor", &a.target_actor),
                ("target_critic", &a.target_critic),
            ],
            AgentSnapshot::Pggd(a) => vec![("policy", &a.policy)],
        }
    }

    pub fn policy(&self) -> &dyn crate::policy::Policy {
        match self {
            AgentSnapshot::Ddpg(a) => a,
            AgentSnapshot::Pggd(a) => a,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub env: EnvConfig,
    pub curriculum: CurriculumConfig,
    pub epoch: usize,
    pub level: usize,
    pub agent: AgentSnapshot,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn header(&self) -> CheckpointHeader {
        let n = self.agent.normalizer();
        CheckpointHeader {
            agent: match self.agent {
                AgentSnapshot::Ddpg(_) => "ddpg".into(),
                AgentSnapshot::Pggd(_) => "pggd".into(),
            },
            layout: self.env.kind.layout(),
            env: self.env.clone(),
            curriculum: self.curriculum.clone(),
            nets: self
                .agent
                .nets()
                .into_iter()
                .map(|(name, net)| NetDescriptor { name: name.into(), widths: net.widths().to_vec(), output: net.output_kind() })
                .collect(),
            ddpg: match &self.agent {
                AgentSnapshot::Ddpg(a) => Some(a.params.clone()),
                _ => None,
            },
            pggd: match &self.agent {
                AgentSnapshot::Pggd(a) => Some(a.params.clone()),
                _ => None,
            },
            normalizer: NormalizerMeta { dim: n.dim(), count: n.count, clip_range: n.clip_range, obs_clip: n.obs_clip, eps: n.eps },
            epoch: self.epoch,
            level: self.level,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header())?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let mut floats = |xs: &[f64]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        for (_, net) in self.agent.nets() {
            floats(net.params());
        }
        let n = self.agent.normalizer();
        floats(&n.mean);
        floats(&n.var);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
        let header: CheckpointHeader =
            serde_json::from_slice(r.take(len)?).map_err(|e| bad(format!("bad checkpoint header: {e}")))?;
        if header.layout != header.env.kind.layout() {
            return Err(bad("layout does not match the environment"));
        }

        let mut nets = Vec::new();
        for d in &header.nets {
            let count: usize = d.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
            let params = r.floats(count)?;
            let net = Mlp::from_params(&d.widths, d.output, params).map_err(|e| bad(format!("network {}: {e}", d.name)))?;
            nets.push(net);
        }
        let meta = &header.normalizer;
        let mut normalizer = RunningNormalizer::new(meta.dim);
        normalizer.mean = r.floats(meta.dim)?;
        normalizer.var = r.floats(meta.dim)?;
        normalizer.count = meta.count;
        normalizer.clip_range = meta.clip_range;
        normalizer.obs_clip = meta.obs_clip;
        normalizer.eps = meta.eps;
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after checkpoint payload"));
        }
        if meta.dim != header.layout.len() {
            return Err(bad("normalizer width does not match the layout"));
        }

        let agent = match (header.agent.as_str(), nets.len()) {
            ("ddpg", 4) => {
                let params = header.ddpg.clone().ok_or_else(|| bad("ddpg checkpoint without hyperparameters"))?;
                let mut it = nets.into_iter();
                let (actor, critic) = (it.next().expect("4 nets"), it.next().expect("4 nets"));
                let mut agent = DdpgAgent::from_networks(params, actor, critic, normalizer).map_err(|e| bad(e.to_string()))?;
                agent.target_actor = it.next().expect("4 nets");
                agent.target_critic = it.next().expect("4 nets");
                if !agent.target_actor.same_shape(&agent.actor) || !agent.target_critic.same_shape(&agent.critic) {
                    return Err(bad("target networks differ in shape from the online networks"));
                }
                AgentSnapshot::Ddpg(agent)
            }
            ("pggd", 1) => {
                let params = header.pggd.clone().ok_or_else(|| bad("pggd checkpoint without hyperparameters"))?;
                let policy = nets.into_iter().next().expect("1 net");
                AgentSnapshot::Pggd(PggdAgent::from_network(params, policy, normalizer).map_err(|e| bad(e.to_string()))?)
            }
            (tag, n) => return Err(bad(format!("unknown agent '{tag}' with {n} networks"))),
        };
        Ok(Checkpoint { env: header.env, curriculum: header.curriculum, epoch: header.epoch, level: header.level, agent })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| bad("oversized network"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::EnvKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ddpg_checkpoint() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let env = EnvConfig::new(EnvKind::BlocksTouch);
        let params = DdpgParams { hidden: 8, layers: 2, ..DdpgParams::default() };
        let mut agent = DdpgAgent::new(env.kind.obs_dim(), params, &mut rng).unwrap();
        agent.normalizer.update(&[vec![0.3; 32], vec![-0.1; 32]]).unwrap();
        agent.target_actor.update_params(|p| p[0] += 0.5);
        Checkpoint { curriculum: CurriculumConfig::default_for(&env), env, epoch: 3, level: 1, agent: AgentSnapshot::Ddpg(agent) }
    }

    #[test]
    fn ddpg_round_trip_is_exact() {
        let ck = ddpg_checkpoint();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.header(), ck.header());
        let (AgentSnapshot::Ddpg(a), AgentSnapshot::Ddpg(b)) = (&ck.agent, &back.agent) else { panic!() };
        assert_eq!(a.actor.params(), b.actor.params());
        assert_eq!(a.critic.params(), b.critic.params());
        assert_eq!(a.target_actor.params(), b.target_actor.params());
        assert_eq!(a.normalizer, b.normalizer);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn pggd_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let env = EnvConfig::new(EnvKind::BlocksChoose);
        let params = PggdParams { hidden: 8, layers: 1, ..PggdParams::default() };
        let agent = PggdAgent::new(env.kind.obs_dim(), params, &mut rng).unwrap();
        let ck = Checkpoint { curriculum: CurriculumConfig::default_for(&env), env, epoch: 0, level: 0, agent: AgentSnapshot::Pggd(agent) };
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corruption_is_a_checkpoint_error() {
        let bytes = ddpg_checkpoint().to_bytes().unwrap();
        for broken in [&bytes[..bytes.len() - 3], &bytes[1..]] {
            let err = Checkpoint::from_bytes(broken).unwrap_err();
            assert!(matches!(err, Error::Checkpoint(_)), "{err:?}");
            assert_eq!(err.exit_code(), 2);
        }
    }
}
