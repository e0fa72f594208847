//! A simulated network of processes driven step by step.

use std::collections::{BTreeMap, BTreeSet};

use crate::batch::ReqKind;
use crate::kernel::{EventKind, Kernel, LivenessFailure, LogLevel, OpKind, SchedulerPolicy, TraceEvent};
use crate::label::{Hashing, Kind, VirtualNodeId};
use crate::node::{Node, Status};
use crate::protocol::{Env, ProtocolConfig, ReqRef, Sink};
use crate::topology::{audit_cycle, CycleError, Ring};

#[derive(Clone, Debug)]
pub struct WorldConfig {
    pub protocol: ProtocolConfig,
    pub scheduler: SchedulerPolicy,
    /// Seed for the label and key hash salts.
    pub hash_seed: u64,
    pub log_level: LogLevel,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            protocol: ProtocolConfig::default(),
            scheduler: SchedulerPolicy::synchronous(),
            hash_seed: 0,
            log_level: LogLevel::Requests,
        }
    }
}

pub struct World {
    pub kernel: Kernel<Node>,
    next_pid: u64,
    /// Integrated processes that have not been asked to leave.
    members: BTreeSet<u64>,
    joining: BTreeSet<u64>,
    leaving: BTreeSet<u64>,
    /// Pending joins keyed by their entry process.
    entries: BTreeMap<u64, BTreeSet<u64>>,
    gone: BTreeMap<u64, u8>,
    departed_seen: usize,
}

impl World {
    /// A network of processes `0..n` on an already sorted cycle.
    pub fn new(n: usize, cfg: WorldConfig) -> World {
        assert!(n >= 1, "at least one process");
        let hashing = Hashing::seeded(cfg.hash_seed);
        let mode = cfg.protocol.mode;
        let env = Env::new(cfg.protocol, hashing);
        let mut kernel = Kernel::new(cfg.scheduler, env, cfg.log_level);
        let ring = Ring::of_processes(&hashing, 0..n as u64);
        for r in ring.nodes() {
            kernel.insert(r.id, r.order_key(), Node::bootstrap(*r, ring.neighbors(r.id), mode));
        }
        let mut w = World {
            kernel,
            next_pid: n as u64,
            members: (0..n as u64).collect(),
            joining: BTreeSet::new(),
            leaving: BTreeSet::new(),
            entries: BTreeMap::new(),
            gone: BTreeMap::new(),
            departed_seen: 0,
        };
        w.refresh_counts();
        w
    }

    pub fn now(&self) -> u64 {
        self.kernel.now()
    }

    pub fn env(&self) -> &Env {
        &self.kernel.env
    }

    pub fn sink(&self) -> std::cell::Ref<'_, Sink> {
        self.kernel.env.sink.borrow()
    }

    pub fn trace(&self) -> &[TraceEvent] {
        self.kernel.log()
    }

    /// Integrated processes not asked to leave, in pid order.
    pub fn members(&self) -> Vec<u64> {
        self.members.iter().copied().collect()
    }

    /// Processes that may issue requests: members and joiners.
    pub fn issuers(&self) -> Vec<u64> {
        self.members.union(&self.joining).copied().collect()
    }

    /// Members that currently serve as entry point of no pending join.
    pub fn free_members(&self) -> Vec<u64> {
        self.members
            .iter()
            .filter(|p| self.entries.get(p).is_none_or(|s| s.is_empty()))
            .copied()
            .collect()
    }

    pub fn is_member(&self, pid: u64) -> bool {
        self.members.contains(&pid)
    }

    /// Issues a request at process `pid` at the current step.
    pub fn issue(&mut self, pid: u64, kind: ReqKind) -> ReqRef {
        assert!(
            self.members.contains(&pid) || self.joining.contains(&pid),
            "process {pid} cannot issue requests"
        );
        self.kernel
            .with_node(VirtualNodeId::new(pid, Kind::Middle), |n, cx| n.issue(kind, cx))
    }

    /// Adds a new process that joins through member `entry`. Returns its pid.
    pub fn join(&mut self, entry: u64) -> u64 {
        assert!(self.members.contains(&entry), "entry {entry} is not a member");
        let pid = self.next_pid;
        self.next_pid += 1;
        let hashing = self.kernel.env.hashing;
        let mode = self.kernel.env.cfg.mode;
        for k in Kind::ALL {
            let r = hashing.node_ref(VirtualNodeId::new(pid, k));
            self.kernel.insert(r.id, r.order_key(), Node::joiner(r, mode));
        }
        let to = VirtualNodeId::new(entry, Kind::Middle);
        // Middle first so the join is logged before any sibling traffic.
        for k in [Kind::Middle, Kind::Left, Kind::Right] {
            self.kernel
                .with_node(VirtualNodeId::new(pid, k), |n, cx| n.start_join(to, cx));
        }
        self.joining.insert(pid);
        self.entries.entry(entry).or_default().insert(pid);
        pid
    }

    /// Asks member `pid` to leave. It must not be the entry of a pending join.
    pub fn leave(&mut self, pid: u64) {
        assert!(self.members.contains(&pid), "process {pid} is not a member");
        assert!(
            self.entries.get(&pid).is_none_or(|s| s.is_empty()),
            "process {pid} is the entry of a pending join"
        );
        assert!(self.members.len() > 1, "the last process cannot leave");
        self.members.remove(&pid);
        self.leaving.insert(pid);
        self.kernel
            .with_node(VirtualNodeId::new(pid, Kind::Middle), |n, cx| n.request_leave(cx));
    }

    /// One synchronous round: `inject` runs at the new time, before any
    /// delivery.
    pub fn step_with(&mut self, inject: impl FnOnce(&mut World)) {
        self.kernel.begin_step();
        inject(self);
        self.kernel.finish_step();
        self.after_step();
    }

    pub fn step(&mut self) {
        self.step_with(|_| {});
    }

    fn after_step(&mut self) {
        let churn = !self.joining.is_empty() || !self.leaving.is_empty();
        let departed = self.kernel.departed()[self.departed_seen..].to_vec();
        self.departed_seen += departed.len();
        for id in departed {
            let c = self.gone.entry(id.pid).or_insert(0);
            *c += 1;
            if *c == 3 {
                self.leaving.remove(&id.pid);
                let now = self.kernel.now();
                self.kernel.record(TraceEvent {
                    time: now,
                    kind: EventKind::RequestCompleted,
                    process: id.pid,
                    op_kind: Some(OpKind::Leave),
                    op_index: 0,
                    element: None,
                    result: None,
                });
            }
        }
        let done: Vec<u64> = self
            .joining
            .iter()
            .copied()
            .filter(|&pid| {
                let m = self.kernel.get(VirtualNodeId::new(pid, Kind::Middle)).unwrap();
                m.status == Status::Active && !m.in_update()
            })
            .collect();
        for pid in done {
            self.joining.remove(&pid);
            self.members.insert(pid);
            for s in self.entries.values_mut() {
                s.remove(&pid);
            }
        }
        if churn {
            self.refresh_counts();
        }
    }

    /// Ground-truth sizes used for routing budgets and the update trigger.
    fn refresh_counts(&mut self) {
        let vnodes = self.kernel.actors().filter(|(_, n)| n.is_integrated()).count();
        self.kernel.env.n_est.set(vnodes.div_ceil(3).max(1));
        self.kernel.env.vnodes.set(vnodes.max(1));
    }

    /// Whether every request and membership change has completed.
    pub fn is_drained(&self) -> bool {
        self.joining.is_empty() && self.leaving.is_empty() && self.kernel.actors().all(|(_, n)| n.is_settled())
    }

    /// Steps until drained; returns the final step.
    pub fn run_until_drained(&mut self, limit: u64) -> Result<u64, LivenessFailure> {
        let start = self.now();
        while !self.is_drained() {
            if self.now() - start >= limit {
                return Err(LivenessFailure {
                    step: self.now(),
                    pending: self.kernel.pending_envelopes(),
                    busy: self.kernel.actors().filter(|(_, n)| !n.is_settled()).count(),
                });
            }
            self.step();
        }
        Ok(self.now())
    }

    /// Answers every parked get with bottom so a run can terminate.
    pub fn flush_parked(&mut self) -> usize {
        let ids: Vec<VirtualNodeId> = self
            .kernel
            .actors()
            .filter(|(_, n)| n.parked_gets() > 0)
            .map(|(id, _)| *id)
            .collect();
        let mut total = 0;
        for id in ids {
            total += self.kernel.with_node(id, |n, cx| {
                let k = n.parked_gets();
                n.flush_parked(cx);
                k
            });
        }
        total
    }

    /// Checks the sorted-cycle invariant over the integrated nodes.
    pub fn audit(&self) -> Result<(), CycleError> {
        let map = self
            .kernel
            .actors()
            .filter(|(_, n)| n.is_integrated())
            .map(|(id, n)| (*id, (n.me, n.nb)))
            .collect();
        audit_cycle(&map)
    }

    /// Stored elements per integrated virtual node.
    pub fn loads(&self) -> Vec<(VirtualNodeId, usize)> {
        self.kernel
            .actors()
            .filter(|(_, n)| n.is_integrated())
            .map(|(id, n)| (*id, n.load()))
            .collect()
    }

    /// The node currently holding the anchor variables.
    pub fn anchor(&self) -> Option<&Node> {
        self.kernel.actors().map(|(_, n)| n).find(|n| n.anchor.is_some())
    }
}
