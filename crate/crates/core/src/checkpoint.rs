//! Versioned binary snapshot of the agent and consolidation memory.
//!
//! Layout (little-endian): magic `TRQLCKPT`, format version `u32`, then the
//! completed period label, the next period index, online and target networks
//! (shape + parameters), optimizer state, update counter and the memory.
//! Floats are stored as raw bits, so a round trip is exact.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::env::{ActionClass, StateVector};
use crate::error::{Error, Result};
use crate::qnet::{OptimizerKind, OptimizerState, QNetwork};
use crate::replay::{ConsolidationMemory, Experience};
use crate::trainer::Agent;

const MAGIC: &[u8; 8] = b"TRQLCKPT";
pub const FORMAT_VERSION: u32 = 1;
/// Upper bound on any stored length, to reject corrupt headers before allocating.
const MAX_LEN: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Label of the last completed period.
    pub period: i64,
    /// Index the next period will run under.
    pub next_index: usize,
    pub agent: Agent,
    pub memory: ConsolidationMemory,
}

struct Enc<W: Write> {
    w: W,
}

impl<W: Write> Enc<W> {
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.w.write_all(b)
    }
    fn u8(&mut self, x: u8) -> std::io::Result<()> {
        self.bytes(&[x])
    }
    fn u32(&mut self, x: u32) -> std::io::Result<()> {
        self.bytes(&x.to_le_bytes())
    }
    fn u64(&mut self, x: u64) -> std::io::Result<()> {
        self.bytes(&x.to_le_bytes())
    }
    fn i64(&mut self, x: i64) -> std::io::Result<()> {
        self.bytes(&x.to_le_bytes())
    }
    fn f64(&mut self, x: f64) -> std::io::Result<()> {
        self.u64(x.to_bits())
    }
    fn f64s(&mut self, xs: &[f64]) -> std::io::Result<()> {
        self.u64(xs.len() as u64)?;
        xs.iter().try_for_each(|&x| self.f64(x))
    }
    fn str(&mut self, s: &str) -> std::io::Result<()> {
        self.u64(s.len() as u64)?;
        self.bytes(s.as_bytes())
    }

    fn net(&mut self, n: &QNetwork) -> std::io::Result<()> {
        self.u64(n.input_dim() as u64)?;
        self.u64(n.hidden() as u64)?;
        self.u64(n.num_actions() as u64)?;
        self.u8(n.is_dueling() as u8)?;
        self.f64s(n.params())
    }

    fn opt(&mut self, o: &OptimizerState) -> std::io::Result<()> {
        self.u8(match o.kind {
            OptimizerKind::Adam => 0,
            OptimizerKind::Sgd => 1,
        })?;
        for x in [o.learning_rate, o.beta1, o.beta2, o.epsilon] {
            self.f64(x)?;
        }
        self.u64(o.step)?;
        self.f64s(&o.m)?;
        self.f64s(&o.v)
    }

    fn experience(&mut self, e: &Experience) -> std::io::Result<()> {
        self.f64s(e.state.as_slice())?;
        self.u8(e.action.index() as u8)?;
        self.f64(e.reward)?;
        self.f64s(e.next_state.as_slice())?;
        self.u8(e.terminal as u8)?;
        self.str(&e.node)?;
        self.i64(e.period)?;
        self.u64(e.time as u64)?;
        self.f64(e.priority)
    }
}

struct Dec<R: Read> {
    r: R,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl<R: Read> Dec<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.r
            .read_exact(&mut buf)
            .map_err(|e| corrupt(format!("truncated: {e}")))?;
        Ok(buf)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0; N];
        self.r
            .read_exact(&mut buf)
            .map_err(|e| corrupt(format!("truncated: {e}")))?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }
    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(corrupt(format!("bad flag byte {b}"))),
        }
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        if n > MAX_LEN {
            return Err(corrupt(format!("implausible length {n}")));
        }
        Ok(n as usize)
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.bytes(n)?).map_err(|_| corrupt("node id is not UTF-8"))
    }

    fn net(&mut self) -> Result<QNetwork> {
        let input = self.len()?;
        let hidden = self.len()?;
        let actions = self.len()?;
        let dueling = self.bool()?;
        let params = self.f64s()?;
        QNetwork::from_params(input, hidden, actions, dueling, params)
            .map_err(|e| corrupt(format!("network: {e}")))
    }

    fn opt(&mut self) -> Result<OptimizerState> {
        let kind = match self.u8()? {
            0 => OptimizerKind::Adam,
            1 => OptimizerKind::Sgd,
            k => return Err(corrupt(format!("unknown optimizer tag {k}"))),
        };
        let mut o = OptimizerState::new(kind, self.f64()?, 0);
        o.beta1 = self.f64()?;
        o.beta2 = self.f64()?;
        o.epsilon = self.f64()?;
        o.step = self.u64()?;
        o.m = self.f64s()?;
        o.v = self.f64s()?;
        Ok(o)
    }

    fn experience(&mut self) -> Result<Experience> {
        let state = StateVector::new(self.f64s()?);
        let action = ActionClass::new(self.u8()? as usize).map_err(|e| corrupt(e.to_string()))?;
        let reward = self.f64()?;
        let next_state = StateVector::new(self.f64s()?);
        let terminal = self.bool()?;
        let node: Arc<str> = Arc::from(self.str()?);
        let period = self.i64()?;
        let time = self.len()?;
        let priority = self.f64()?;
        Ok(Experience {
            state,
            action,
            reward,
            next_state,
            terminal,
            node,
            period,
            time,
            priority,
        })
    }
}

impl Checkpoint {
    pub fn write_to(&self, w: impl Write) -> Result<()> {
        self.encode(&mut Enc { w })
            .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
    }

    fn encode<W: Write>(&self, e: &mut Enc<W>) -> std::io::Result<()> {
        e.bytes(MAGIC)?;
        e.u32(FORMAT_VERSION)?;
        e.i64(self.period)?;
        e.u64(self.next_index as u64)?;
        e.net(&self.agent.net)?;
        e.net(&self.agent.target)?;
        e.opt(&self.agent.opt)?;
        e.u64(self.agent.updates)?;
        let periods: Vec<(i64, &[Experience])> = self.memory.periods().collect();
        e.u64(periods.len() as u64)?;
        for (p, items) in periods {
            e.i64(p)?;
            e.u64(items.len() as u64)?;
            for x in items {
                e.experience(x)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut d = Dec { r };
        if d.bytes(MAGIC.len())? != MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let version = d.u32()?;
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let period = d.i64()?;
        let next_index = d.len()?;
        let net = d.net()?;
        let target = d.net()?;
        let opt = d.opt()?;
        if opt.m.len() != net.num_params() || opt.v.len() != net.num_params() {
            return Err(corrupt("optimizer moments do not match the network"));
        }
        if target.params().len() != net.num_params() {
            return Err(corrupt("target network does not match the online network"));
        }
        let updates = d.u64()?;
        let mut memory = ConsolidationMemory::new();
        for _ in 0..d.len()? {
            let p = d.i64()?;
            let n = d.len()?;
            let items = (0..n).map(|_| d.experience()).collect::<Result<Vec<_>>>()?;
            memory.insert(p, items);
        }
        let mut probe = [0u8; 1];
        if d.r.read(&mut probe).map_err(|e| corrupt(e.to_string()))? != 0 {
            return Err(corrupt("trailing bytes after checkpoint"));
        }
        Ok(Self {
            period,
            next_index,
            agent: Agent {
                net,
                target,
                opt,
                updates,
            },
            memory,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f)).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
