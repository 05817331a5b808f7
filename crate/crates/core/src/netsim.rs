//! Round-synchronous message-passing replay of consensus ADMM.
//!
//! Each clique and coordinator becomes an agent holding only its own model
//! shard. Agents exchange iterate values through a bus that logs every
//! message; the payload type has no variant able to carry model data, and
//! [`audit_privacy`] re-checks exported transcripts against the closed tag set.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::admm::{
    self, build_layout, x_update, y_update, y_update_edge, AdmmOptions, CliqueShard, ConsensusLayout,
    Coordinator, CopyKind, EdgeShard, NodeOwner, NodeShard, NodeValues, ResidualRecord,
};
use crate::error::{Error, Result};
use crate::graph::ChordalStructure;
use crate::linalg::{Mat, SymMat};
use crate::synth::{SynthesisResult, SynthesisStatus};
use crate::system::{mat_to_rows, InterconnectedSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AgentId {
    Clique(usize),
    NodeCoordinator(usize),
    /// `(i, j)` with `i < j`.
    EdgeCoordinator(usize, usize),
}

impl AgentId {
    fn of(c: Coordinator) -> AgentId {
        match c {
            Coordinator::Node(i) => AgentId::NodeCoordinator(i),
            Coordinator::Edge(i, j) => AgentId::EdgeCoordinator(i, j),
        }
    }
}

/// 1-based: `clique:1`, `node:2`, `edge:2-4`.
impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            AgentId::Clique(k) => write!(f, "clique:{}", k + 1),
            AgentId::NodeCoordinator(i) => write!(f, "node:{}", i + 1),
            AgentId::EdgeCoordinator(i, j) => write!(f, "edge:{}-{}", i + 1, j + 1),
        }
    }
}

fn parse_agent(s: &str) -> Option<AgentId> {
    let (kind, rest) = s.split_once(':')?;
    let idx = |t: &str| t.parse::<usize>().ok().filter(|&v| v >= 1).map(|v| v - 1);
    match kind {
        "clique" => Some(AgentId::Clique(idx(rest)?)),
        "node" => Some(AgentId::NodeCoordinator(idx(rest)?)),
        "edge" => {
            let (a, b) = rest.split_once('-')?;
            Some(AgentId::EdgeCoordinator(idx(a)?, idx(b)?))
        }
        _ => None,
    }
}

/// Model data an agent is entitled to.
#[derive(Debug, Clone)]
pub enum ModelShard {
    Clique(CliqueShard),
    Node(NodeShard),
    Edge(EdgeShard),
}

/// Payload tags. The set is closed over iterate kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    /// Clique-local copy after the x-update.
    Copy(CopyKind),
    /// Coordinator-side consensus value.
    Consensus(CopyKind),
    /// Scaled multiplier of one consensus equation.
    Multiplier(CopyKind),
    Continue,
    Stop,
}

fn copy_name(c: CopyKind) -> String {
    match c {
        CopyKind::X(i) => format!("X[{}]", i + 1),
        CopyKind::J(i, j) => format!("J[{},{}]", i + 1, j + 1),
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Tag::Copy(c) => write!(f, "copy:{}", copy_name(c)),
            Tag::Consensus(c) => write!(f, "consensus:{}", copy_name(c)),
            Tag::Multiplier(c) => write!(f, "multiplier:{}", copy_name(c)),
            Tag::Continue => f.write_str("control:continue"),
            Tag::Stop => f.write_str("control:stop"),
        }
    }
}

fn parse_copy(s: &str) -> Option<CopyKind> {
    let idx = |t: &str| t.trim().parse::<usize>().ok().filter(|&v| v >= 1).map(|v| v - 1);
    if let Some(body) = s.strip_prefix("X[").and_then(|r| r.strip_suffix(']')) {
        return Some(CopyKind::X(idx(body)?));
    }
    let body = s.strip_prefix("J[")?.strip_suffix(']')?;
    let (a, b) = body.split_once(',')?;
    Some(CopyKind::J(idx(a)?, idx(b)?))
}

/// Inverse of the `Display` form; `None` outside the closed tag set.
pub fn parse_tag(s: &str) -> Option<Tag> {
    match s {
        "control:continue" => return Some(Tag::Continue),
        "control:stop" => return Some(Tag::Stop),
        _ => {}
    }
    let (kind, rest) = s.split_once(':')?;
    let c = parse_copy(rest)?;
    match kind {
        "copy" => Some(Tag::Copy(c)),
        "consensus" => Some(Tag::Consensus(c)),
        "multiplier" => Some(Tag::Multiplier(c)),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct Message {
    pub round: usize,
    pub from: AgentId,
    pub to: AgentId,
    /// Control tags carry a `0 × 0` value.
    pub payload: Vec<(Tag, Mat)>,
}

/// Append-only message log; read-only once a run returns it.
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    messages: Vec<Message>,
}

/// One exported `(message, tag)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub round: usize,
    pub from: String,
    pub to: String,
    pub tag: String,
    pub shape: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Vec<Vec<f64>>>,
}

impl Transcript {
    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn round(&self, r: usize) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(move |m| m.round == r)
    }

    /// One entry per payload item, in send order.
    pub fn entries(&self, include_values: bool) -> Vec<TranscriptEntry> {
        self.messages
            .iter()
            .flat_map(|m| {
                m.payload.iter().map(move |(tag, v)| TranscriptEntry {
                    round: m.round,
                    from: m.from.to_string(),
                    to: m.to.to_string(),
                    tag: tag.to_string(),
                    shape: [v.nrows(), v.ncols()],
                    value: include_values.then(|| mat_to_rows(v)),
                })
            })
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W, include_values: bool) -> Result<()> {
        for e in self.entries(include_values) {
            serde_json::to_writer(&mut out, &e)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn read_jsonl(text: &str) -> Result<Vec<TranscriptEntry>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// One consensus equation as seen by its coordinator.
#[derive(Debug, Clone)]
struct Slot {
    clique: usize,
    copy: CopyKind,
    y: Mat,
    lambda: Mat,
    xhat: Mat,
}

#[derive(Debug, Clone)]
struct CliqueAgent {
    shard: CliqueShard,
    /// Shared copies in equation order with the coordinator holding each.
    ports: Vec<(CopyKind, AgentId)>,
    exclusive: BTreeMap<usize, NodeValues>,
}

#[derive(Debug, Clone)]
struct CoordinatorAgent {
    id: AgentId,
    shard: ModelShard,
    slots: Vec<Slot>,
    node: Option<NodeValues>,
}

impl CoordinatorAgent {
    fn fan_out(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.slots.iter().map(|s| s.clique).collect();
        set.into_iter().collect()
    }
}

/// Agents with their shards. Holds no global model object.
#[derive(Debug, Clone)]
pub struct Deployment {
    cliques: Vec<CliqueAgent>,
    coordinators: Vec<CoordinatorAgent>,
    node_owner: Vec<NodeOwner>,
    consensus_dim: usize,
}

fn identity_values(n: usize, m: usize) -> NodeValues {
    NodeValues {
        x: SymMat::identity(n),
        y: SymMat::identity(m),
        z: Mat::zeros(m, n),
    }
}

/// Splits `sys` into agent shards following `structure`.
pub fn deploy(sys: &InterconnectedSystem, structure: &ChordalStructure) -> Result<Deployment> {
    let layout = build_layout(sys, structure)?;
    let p = sys.partition();
    let init = admm::initialize(&layout, sys, 1.0);
    let cliques = (0..layout.cliques.len())
        .map(|k| {
            let ports = layout
                .clique_equations(k)
                .into_iter()
                .map(|e| (layout.equations[e].copy, AgentId::of(layout.equations[e].coordinator)))
                .collect();
            let exclusive = layout.cliques[k]
                .exclusive_nodes
                .iter()
                .map(|&i| (i, identity_values(p.n[i], p.m[i])))
                .collect();
            CliqueAgent {
                shard: layout.clique_shard(sys, k),
                ports,
                exclusive,
            }
        })
        .collect();
    let coordinators = layout
        .coordinators()
        .into_iter()
        .map(|c| {
            let slots = layout
                .coordinator_equations(c)
                .into_iter()
                .map(|e| Slot {
                    clique: layout.equations[e].clique,
                    copy: layout.equations[e].copy,
                    y: init.y[e].clone(),
                    lambda: init.lambda[e].clone(),
                    xhat: init.xhat[e].clone(),
                })
                .collect();
            let (shard, node) = match c {
                Coordinator::Node(i) => (
                    ModelShard::Node(layout.node_shard(sys, i)),
                    Some(identity_values(p.n[i], p.m[i])),
                ),
                Coordinator::Edge(i, j) => (ModelShard::Edge(layout.edge_shard(sys, (i, j))), None),
            };
            CoordinatorAgent {
                id: AgentId::of(c),
                shard,
                slots,
                node,
            }
        })
        .collect();
    Ok(Deployment {
        cliques,
        coordinators,
        node_owner: (0..sys.len()).map(|i| layout.node_owner(i)).collect(),
        consensus_dim: layout.consensus_dim(),
    })
}

impl Deployment {
    pub fn agents(&self) -> Vec<AgentId> {
        (0..self.cliques.len())
            .map(AgentId::Clique)
            .chain(self.coordinators.iter().map(|c| c.id))
            .collect()
    }

    pub fn shard(&self, id: AgentId) -> Option<ModelShard> {
        match id {
            AgentId::Clique(k) => self.cliques.get(k).map(|c| ModelShard::Clique(c.shard.clone())),
            _ => self.coordinators.iter().find(|c| c.id == id).map(|c| c.shard.clone()),
        }
    }

    /// Messages sent in one full round.
    pub fn messages_per_round(&self) -> usize {
        let copies: usize = self.cliques.iter().map(|c| c.ports.len()).sum();
        let fan_out: usize = self.coordinators.iter().map(|c| c.fan_out().len()).sum();
        2 * copies + fan_out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FailureKind {
    Infeasible,
    NumericalLimit,
}

#[derive(Debug, Clone)]
pub struct DistributedRun {
    pub history: Vec<ResidualRecord>,
    pub transcript: Transcript,
    pub converged: bool,
    pub iterations: usize,
    pub sdp_iterations: usize,
    /// Node values gathered from their owners at the end of the run.
    pub nodes: Vec<NodeValues>,
    pub failure: Option<(FailureKind, String)>,
    pub max_iter: usize,
}

impl DistributedRun {
    /// Recovers and certifies the gains against the plant, outside the agents.
    pub fn certify(&self, sys: &InterconnectedSystem) -> SynthesisResult {
        let objective = self.history.last().map(|r| r.objective);
        let mut r = admm::certify(
            sys,
            &self.nodes,
            objective,
            self.sdp_iterations,
            self.converged,
            self.max_iter,
        );
        match &self.failure {
            Some((FailureKind::Infeasible, m)) => {
                r.status = SynthesisStatus::Infeasible;
                r.controller = None;
                r.h2 = None;
                r.message = Some(m.clone());
            }
            Some((FailureKind::NumericalLimit, m)) => {
                r.status = SynthesisStatus::NumericalLimit;
                r.message = Some(m.clone());
            }
            None => {}
        }
        r
    }
}

struct Bus {
    log: Vec<Message>,
}

impl Bus {
    fn send(&mut self, m: Message) {
        self.log.push(m);
    }

    /// Messages of `round` addressed to `to`, in send order.
    fn inbox(&self, round: usize, to: AgentId) -> impl Iterator<Item = &Message> {
        self.log.iter().filter(move |m| m.round == round && m.to == to)
    }
}

fn find_value<'a>(inbox: &[&'a Message], from: AgentId, tag: Tag) -> Result<&'a Mat> {
    inbox
        .iter()
        .filter(|m| m.from == from)
        .flat_map(|m| m.payload.iter())
        .find(|(t, _)| *t == tag)
        .map(|(_, v)| v)
        .ok_or_else(|| Error::Numerical(format!("missing {tag} from {from}")))
}

fn tag_error(agent: AgentId, e: Error) -> Error {
    match e {
        Error::Infeasible(m) => Error::Infeasible(format!("{agent}: {m}")),
        Error::NumericalLimit(m) => Error::NumericalLimit(format!("{agent}: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("{agent}: {m}")),
        e => e,
    }
}

fn clique_phase(agent: &CliqueAgent, k: usize, inbox: &[&Message], rho: f64) -> Result<admm::CliqueUpdate> {
    let id = AgentId::Clique(k);
    let mut inputs = Vec::with_capacity(agent.ports.len());
    for &(copy, from) in &agent.ports {
        let y = find_value(inbox, from, Tag::Consensus(copy))?;
        let l = find_value(inbox, from, Tag::Multiplier(copy))?;
        inputs.push((copy, y - l));
    }
    x_update(&agent.shard, &inputs, rho).map_err(|e| tag_error(id, e))
}

/// Runs the agents round by round until the coordinators' joint stop signal
/// or `opts.max_iter` rounds.
pub fn run_distributed(mut dep: Deployment, opts: &AdmmOptions) -> Result<DistributedRun> {
    opts.validate()?;
    let rho = opts.rho;
    let thr = opts.tol * (dep.consensus_dim as f64).sqrt();
    let mut bus = Bus { log: Vec::new() };
    let mut history = Vec::new();
    let mut sdp_iterations = 0usize;
    let mut converged = false;
    let mut failure = None;
    let mut round = 0usize;
    while round < opts.max_iter {
        round += 1;
        // Phase A: coordinators send consensus values and multipliers.
        for c in &dep.coordinators {
            for s in &c.slots {
                bus.send(Message {
                    round,
                    from: c.id,
                    to: AgentId::Clique(s.clique),
                    payload: vec![(Tag::Consensus(s.copy), s.y.clone()), (Tag::Multiplier(s.copy), s.lambda.clone())],
                });
            }
        }
        // Phase B: clique x-updates on local data, copies sent back.
        let inboxes: Vec<Vec<&Message>> = (0..dep.cliques.len())
            .map(|k| bus.inbox(round, AgentId::Clique(k)).collect())
            .collect();
        let updates: Vec<Result<admm::CliqueUpdate>> = if opts.parallel && dep.cliques.len() > 1 {
            std::thread::scope(|scope| {
                let handles: Vec<_> = dep
                    .cliques
                    .iter()
                    .zip(&inboxes)
                    .enumerate()
                    .map(|(k, (a, inbox))| scope.spawn(move || clique_phase(a, k, inbox, rho)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("clique agent thread panicked"))
                    .collect()
            })
        } else {
            dep.cliques
                .iter()
                .zip(&inboxes)
                .enumerate()
                .map(|(k, (a, inbox))| clique_phase(a, k, inbox, rho))
                .collect()
        };
        drop(inboxes);
        let mut objective = 0.0;
        let mut outgoing = Vec::new();
        let mut abort = None;
        for (k, u) in updates.into_iter().enumerate() {
            let u = match u {
                Ok(u) => u,
                Err(e) => {
                    abort = Some(e);
                    break;
                }
            };
            let agent = &mut dep.cliques[k];
            for (&(copy, to), v) in agent.ports.iter().zip(u.copies) {
                outgoing.push(Message {
                    round,
                    from: AgentId::Clique(k),
                    to,
                    payload: vec![(Tag::Copy(copy), v)],
                });
            }
            for (i, nv) in u.exclusive {
                agent.exclusive.insert(i, nv);
            }
            objective += u.objective;
            sdp_iterations += u.sdp_iterations;
        }
        if let Some(e) = abort {
            failure = Some(classify_failure(e, round)?);
            break;
        }
        for m in outgoing {
            bus.send(m);
        }
        // Phase C: coordinator y-updates and multiplier updates.
        let mut partial = Vec::with_capacity(dep.coordinators.len());
        for c in dep.coordinators.iter_mut() {
            let inbox: Vec<&Message> = bus.inbox(round, c.id).collect();
            for s in c.slots.iter_mut() {
                s.xhat = find_value(&inbox, AgentId::Clique(s.clique), Tag::Copy(s.copy))?.clone();
            }
            let inputs: Vec<(CopyKind, Mat)> = c.slots.iter().map(|s| (s.copy, &s.xhat + &s.lambda)).collect();
            let u = match &c.shard {
                ModelShard::Node(sh) => y_update(sh, &inputs, rho),
                ModelShard::Edge(sh) => y_update_edge(sh, &inputs, rho),
                ModelShard::Clique(_) => unreachable!("coordinators hold node or edge shards"),
            };
            let u = match u {
                Ok(u) => u,
                Err(e) => {
                    abort = Some(tag_error(c.id, e));
                    break;
                }
            };
            let mut gaps = Vec::with_capacity(c.slots.len());
            for (s, v) in c.slots.iter_mut().zip(u.values) {
                let y_prev = std::mem::replace(&mut s.y, v);
                s.lambda += &s.xhat - &s.y;
                gaps.push(((&s.xhat - &s.y).norm_squared(), (&s.y - &y_prev).norm_squared()));
            }
            if let Some(nv) = u.node {
                c.node = Some(nv);
            }
            partial.push((gaps, u.objective, u.sdp_iterations));
        }
        if let Some(e) = abort {
            failure = Some(classify_failure(e, round)?);
            break;
        }
        // Joint stop decision: residual terms accumulated coordinator by
        // coordinator in equation order.
        let (mut primal, mut dual) = (0.0f64, 0.0f64);
        for (gaps, _, _) in &partial {
            for &(p, _) in gaps {
                primal += p;
            }
        }
        for (gaps, _, _) in &partial {
            for &(_, d) in gaps {
                dual += d;
            }
        }
        for (_, obj, it) in &partial {
            objective += obj;
            sdp_iterations += it;
        }
        let (primal, dual) = (primal.sqrt(), rho * dual.sqrt());
        history.push(ResidualRecord {
            iteration: round,
            primal,
            dual,
            objective,
        });
        let stop = primal <= thr && dual <= thr;
        for c in &dep.coordinators {
            for k in c.fan_out() {
                bus.send(Message {
                    round,
                    from: c.id,
                    to: AgentId::Clique(k),
                    payload: vec![(if stop { Tag::Stop } else { Tag::Continue }, Mat::zeros(0, 0))],
                });
            }
        }
        if stop {
            converged = true;
            break;
        }
    }
    let iterations = history.len();
    let nodes = dep
        .node_owner
        .iter()
        .enumerate()
        .map(|(i, owner)| match *owner {
            NodeOwner::Clique(k) => dep.cliques[k].exclusive[&i].clone(),
            NodeOwner::Coordinator => dep
                .coordinators
                .iter()
                .find(|c| c.id == AgentId::NodeCoordinator(i))
                .and_then(|c| c.node.clone())
                .expect("node coordinator exists for every shared node"),
        })
        .collect();
    Ok(DistributedRun {
        history,
        transcript: Transcript { messages: bus.log },
        converged,
        iterations,
        sdp_iterations,
        nodes,
        failure,
        max_iter: opts.max_iter,
    })
}

fn classify_failure(e: Error, round: usize) -> Result<(FailureKind, String)> {
    match e {
        Error::Infeasible(m) if round == 1 => Ok((
            FailureKind::Infeasible,
            format!("{m} at the first iteration; the instance is not certified by the restriction"),
        )),
        Error::Infeasible(m) => Ok((FailureKind::Infeasible, m)),
        Error::NumericalLimit(m) => Ok((FailureKind::NumericalLimit, format!("aborted at iteration {round}: {m}"))),
        e => Err(e),
    }
}

/// Deploys, runs and certifies in one call.
pub fn synthesize_distributed(
    sys: &InterconnectedSystem,
    structure: &ChordalStructure,
    opts: &AdmmOptions,
) -> Result<(SynthesisResult, DistributedRun)> {
    let run = run_distributed(deploy(sys, structure)?, opts)?;
    Ok((run.certify(sys), run))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditViolation {
    pub round: usize,
    pub from: String,
    pub to: String,
    pub tag: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub pass: bool,
    /// `(round, from, to, tag)` for every logged payload item.
    pub entries: Vec<(usize, String, String, String)>,
    pub violations: Vec<AuditViolation>,
}

impl AuditReport {
    /// Whether any payload references node `i` (0-based).
    pub fn mentions_node(&self, i: usize) -> bool {
        self.entries.iter().any(|(_, _, _, tag)| match parse_tag(tag) {
            Some(Tag::Copy(c) | Tag::Consensus(c) | Tag::Multiplier(c)) => copy_nodes(c).contains(&i),
            _ => false,
        })
    }
}

fn copy_nodes(c: CopyKind) -> Vec<usize> {
    match c {
        CopyKind::X(i) => vec![i],
        CopyKind::J(i, j) => vec![i, j],
    }
}

/// Checks a transcript against the closed tag set and the layout's
/// clique/coordinator entitlements.
pub fn audit_privacy(entries: &[TranscriptEntry], layout: &ConsensusLayout) -> AuditReport {
    let mut violations = Vec::new();
    let links: BTreeSet<(AgentId, AgentId)> = layout
        .equations
        .iter()
        .flat_map(|e| {
            let a = AgentId::Clique(e.clique);
            let b = AgentId::of(e.coordinator);
            [(a, b), (b, a)]
        })
        .collect();
    let scope = |a: AgentId| -> Option<BTreeSet<usize>> {
        match a {
            AgentId::Clique(k) => layout.cliques.get(k).map(|c| c.nodes.iter().copied().collect()),
            AgentId::NodeCoordinator(i) => layout.node_coordinators.contains(&i).then(|| [i].into()),
            AgentId::EdgeCoordinator(i, j) => layout.edge_coordinators.contains(&(i, j)).then(|| [i, j].into()),
        }
    };
    for e in entries {
        let mut fail = |reason: String| {
            violations.push(AuditViolation {
                round: e.round,
                from: e.from.clone(),
                to: e.to.clone(),
                tag: e.tag.clone(),
                reason,
            })
        };
        let Some(tag) = parse_tag(&e.tag) else {
            fail("tag outside the iterate kinds".into());
            continue;
        };
        let (Some(from), Some(to)) = (parse_agent(&e.from), parse_agent(&e.to)) else {
            fail("unknown agent".into());
            continue;
        };
        if !links.contains(&(from, to)) {
            fail("agents are not linked by a consensus equation".into());
            continue;
        }
        if let Tag::Copy(c) | Tag::Consensus(c) | Tag::Multiplier(c) = tag {
            for end in [from, to] {
                let allowed = scope(end).unwrap_or_default();
                if let Some(&v) = copy_nodes(c).iter().find(|v| !allowed.contains(v)) {
                    fail(format!("{end} is not entitled to node {}", v + 1));
                }
            }
        }
    }
    AuditReport {
        pass: violations.is_empty(),
        entries: entries
            .iter()
            .map(|e| (e.round, e.from.clone(), e.to.clone(), e.tag.clone()))
            .collect(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admm::run;
    use crate::graph::UndirectedGraph;
    use crate::system::{four_node_example, scalar_network};

    fn structure(sys: &InterconnectedSystem) -> ChordalStructure {
        ChordalStructure::from_graph(&sys.undirected_graph())
    }

    fn line() -> InterconnectedSystem {
        scalar_network(&[[-1.0, 0.5, 0.0], [0.5, 1.0, 0.5], [0.0, 0.5, -1.0]], &[1.0, 1.0, 1.0])
    }

    #[test]
    fn line_deployment() {
        let sys = line();
        let dep = deploy(&sys, &structure(&sys)).unwrap();
        assert_eq!(
            dep.agents(),
            vec![AgentId::Clique(0), AgentId::Clique(1), AgentId::NodeCoordinator(1)]
        );
        match dep.shard(AgentId::NodeCoordinator(1)).unwrap() {
            ModelShard::Node(s) => {
                assert_eq!(s.node, 1);
                assert_eq!(s.model.a[(0, 0)], 1.0);
            }
            other => panic!("{other:?}"),
        }
        // 4 copies each way plus one control message per clique.
        assert_eq!(dep.messages_per_round(), 2 * 4 + 2);
    }

    #[test]
    fn four_node_deployment() {
        let sys = four_node_example();
        let dep = deploy(&sys, &structure(&sys)).unwrap();
        assert_eq!(
            dep.agents(),
            vec![
                AgentId::Clique(0),
                AgentId::Clique(1),
                AgentId::NodeCoordinator(1),
                AgentId::NodeCoordinator(3),
                AgentId::EdgeCoordinator(1, 3),
            ]
        );
        match dep.shard(AgentId::EdgeCoordinator(1, 3)).unwrap() {
            ModelShard::Edge(s) => assert_eq!(s.a_ji[(0, 0)], 2.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn disjoint_cliques_have_no_coordinators() {
        let sys = scalar_network(&[[1.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 1.0]], &[1.0, 1.0, 1.0]);
        let dep = deploy(&sys, &structure(&sys)).unwrap();
        assert_eq!(dep.agents(), vec![AgentId::Clique(0), AgentId::Clique(1)]);
        let run = run_distributed(dep, &AdmmOptions::default()).unwrap();
        assert!(run.converged);
        assert_eq!(run.iterations, 1);
        assert!(run.transcript.is_empty());
    }

    #[test]
    fn line_matches_monolithic_and_counts_messages() {
        let sys = line();
        let s = structure(&sys);
        let opts = AdmmOptions::default();
        let mono = run(&sys, &s, &opts).unwrap();
        let dep = deploy(&sys, &s).unwrap();
        let per_round = dep.messages_per_round();
        let (res, dist) = synthesize_distributed(&sys, &s, &opts).unwrap();
        assert_eq!(dist.history, mono.state.history);
        assert_eq!(dist.nodes, mono.state.nodes);
        assert_eq!(res.controller, mono.synthesis.controller);
        for r in 1..=dist.iterations {
            assert_eq!(dist.transcript.round(r).count(), per_round);
        }
    }

    #[test]
    fn zero_rounds_log_nothing() {
        let sys = line();
        let opts = AdmmOptions {
            max_iter: 0,
            ..AdmmOptions::default()
        };
        let run = run_distributed(deploy(&sys, &structure(&sys)).unwrap(), &opts).unwrap();
        assert!(run.transcript.is_empty());
        assert!(run.history.is_empty());
    }

    #[test]
    fn parallel_agents_match_serial() {
        let sys = line();
        let s = structure(&sys);
        let serial = run_distributed(deploy(&sys, &s).unwrap(), &AdmmOptions::default()).unwrap();
        let par = run_distributed(
            deploy(&sys, &s).unwrap(),
            &AdmmOptions {
                parallel: true,
                ..AdmmOptions::default()
            },
        )
        .unwrap();
        assert_eq!(serial.history, par.history);
    }

    #[test]
    fn audit_passes_on_run_and_jsonl_roundtrip() {
        let sys = line();
        let s = structure(&sys);
        let layout = build_layout(&sys, &s).unwrap();
        let (_, run) = synthesize_distributed(&sys, &s, &AdmmOptions::default()).unwrap();
        let mut buf = Vec::new();
        run.transcript.write_jsonl(&mut buf, true).unwrap();
        let entries = read_jsonl(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(entries, run.transcript.entries(true));
        let report = audit_privacy(&entries, &layout);
        assert!(report.pass, "{:?}", report.violations);
        assert!(!report.mentions_node(0));
        assert!(report.mentions_node(1));
    }

    #[test]
    fn audit_rejects_forged_tags_and_links() {
        let sys = line();
        let layout = build_layout(&sys, &structure(&sys)).unwrap();
        let entry = |from: &str, to: &str, tag: &str| TranscriptEntry {
            round: 1,
            from: from.into(),
            to: to.into(),
            tag: tag.into(),
            shape: [1, 1],
            value: None,
        };
        let forged = audit_privacy(&[entry("clique:1", "node:2", "A_11")], &layout);
        assert!(!forged.pass);
        assert_eq!(forged.violations[0].tag, "A_11");
        let unlinked = audit_privacy(&[entry("clique:1", "clique:2", "copy:X[2]")], &layout);
        assert!(!unlinked.pass);
        let foreign = audit_privacy(&[entry("node:2", "clique:1", "consensus:X[3]")], &layout);
        assert!(!foreign.pass);
        assert!(audit_privacy(&[], &layout).pass);
    }

    #[test]
    fn tags_roundtrip() {
        for t in [
            Tag::Copy(CopyKind::X(0)),
            Tag::Consensus(CopyKind::J(1, 3)),
            Tag::Multiplier(CopyKind::J(2, 2)),
            Tag::Continue,
            Tag::Stop,
        ] {
            assert_eq!(parse_tag(&t.to_string()), Some(t));
        }
        assert_eq!(parse_tag("copy:X[0]"), None);
        assert_eq!(parse_tag("B_2"), None);
        for a in [AgentId::Clique(0), AgentId::NodeCoordinator(3), AgentId::EdgeCoordinator(1, 3)] {
            assert_eq!(parse_agent(&a.to_string()), Some(a));
        }
    }

    #[test]
    fn infeasible_first_round_names_agent() {
        // Unstable node with no actuation: the clique subproblem is infeasible.
        let sys = scalar_network(&[[1.0, 0.5, 0.0], [0.5, 1.0, 0.5], [0.0, 0.5, 1.0]], &[0.0, 1.0, 1.0]);
        let s = ChordalStructure::from_graph(&UndirectedGraph::new(3, [(0, 1), (1, 2)]).unwrap());
        let (res, run) = synthesize_distributed(&sys, &s, &AdmmOptions::default()).unwrap();
        assert_eq!(res.status, SynthesisStatus::Infeasible);
        let (kind, msg) = run.failure.unwrap();
        assert_eq!(kind, FailureKind::Infeasible);
        assert!(msg.contains("clique:1"), "{msg}");
    }
}
