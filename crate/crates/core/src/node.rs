//! The virtual node actor: aggregation stages and request bookkeeping.
//!
//! DHT storage lives in `dht.rs` and join/leave handling in `membership.rs`;
//! both are further `impl Node` blocks.

use std::collections::{BTreeMap, VecDeque};

use crate::batch::{Batch, BatchKind, ReqKind};
use crate::kernel::{Actor, Cx, EventKind, OpKind, Outcome, TraceEvent};
use crate::label::{Kind, NodeRef, VirtualNodeId};
use crate::membership::Membership;
use crate::protocol::{
    AnchorRecord, AnchorSnapshot, BatchRecord, BatchUid, Count, DhtOp, Env, Interval, Msg, Origin, PartRecord,
    RequestMeta, StoredElement,
};
use crate::queue::{assign_queue, assign_stack, decompose, slot};
use crate::stack::{Frozen, LocalStream, Pending};
use crate::topology::{NeighborState, RouteState};
use crate::tree;

pub type NodeCx<'a> = Cx<'a, Msg, Env>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    /// Waiting for a responsible node to accept the join.
    Joining,
    /// Accepted but not yet part of the cycle.
    Ward {
        responsible: VirtualNodeId,
    },
    Active,
}

/// Variables kept by the minimum node only.
pub type AnchorState = AnchorSnapshot;

impl AnchorSnapshot {
    pub fn initial() -> Self {
        AnchorSnapshot {
            first: 1,
            last: 0,
            ticket: 0,
            c: 1,
            pending: 0,
            phase: 0,
        }
    }
}

#[derive(Debug)]
pub(crate) enum Part {
    Child(VirtualNodeId, BatchUid, Batch),
    Local(Origin, Frozen),
}

impl Part {
    fn ops(&self) -> &[u64] {
        match self {
            Part::Child(_, _, b) => &b.ops,
            Part::Local(_, f) => &f.ops,
        }
    }
}

#[derive(Debug)]
pub(crate) struct InFlight {
    uid: BatchUid,
    parts: Vec<Part>,
    counts: Vec<Count>,
}

/// A DHT operation whose reply this node awaits.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Awaiting {
    pub origin: Origin,
    pub p: Pending,
}

/// Per-process request state, kept at the process's middle node.
#[derive(Clone, Debug, Default)]
pub struct ProcState {
    pub next_index: u64,
    /// Issued and not yet completed requests.
    pub incomplete: u64,
    /// Requests waiting to be relayed or recorded.
    pub(crate) held: VecDeque<Pending>,
    /// Requests relayed to the responsible node and not yet answered.
    pub(crate) relayed: BTreeMap<crate::protocol::ReqRef, Pending>,
}

pub struct Node {
    pub me: NodeRef,
    pub status: Status,
    pub nb: NeighborState,
    pub(crate) kind: BatchKind,
    pub(crate) streams: BTreeMap<Origin, LocalStream>,
    pub(crate) from_children: BTreeMap<VirtualNodeId, (BatchUid, Batch)>,
    pub(crate) inflight: Option<InFlight>,
    seq: u64,
    pub anchor: Option<AnchorState>,
    pub store: BTreeMap<u64, Vec<StoredElement>>,
    pub(crate) parked: BTreeMap<u64, Vec<DhtOp>>,
    pub(crate) awaiting: BTreeMap<crate::protocol::ReqRef, Awaiting>,
    pub proc: Option<ProcState>,
    pub(crate) ms: Membership,
}

impl Node {
    fn blank(me: NodeRef, kind: BatchKind, status: Status) -> Node {
        Node {
            me,
            status,
            nb: NeighborState { pred: me, succ: me },
            kind,
            streams: BTreeMap::new(),
            from_children: BTreeMap::new(),
            inflight: None,
            seq: 0,
            anchor: None,
            store: BTreeMap::new(),
            parked: BTreeMap::new(),
            awaiting: BTreeMap::new(),
            proc: (me.id.kind == Kind::Middle).then(ProcState::default),
            ms: Membership::default(),
        }
    }

    /// A member of the initial, already sorted cycle.
    pub fn bootstrap(me: NodeRef, nb: NeighborState, kind: BatchKind) -> Node {
        let mut n = Node::blank(me, kind, Status::Active);
        n.nb = nb;
        if tree::is_anchor(&me, &nb) {
            n.anchor = Some(AnchorState::initial());
        }
        n
    }

    /// A virtual node of a joining process; `start_join` sends the request.
    pub fn joiner(me: NodeRef, kind: BatchKind) -> Node {
        Node::blank(me, kind, Status::Joining)
    }

    pub fn is_integrated(&self) -> bool {
        self.status == Status::Active
    }

    pub fn in_update(&self) -> bool {
        self.ms.upd.is_some()
    }

    /// Nodes that currently consider this node's batch part of their own.
    pub fn tree_links(&self) -> tree::TreeLinks {
        tree::links(&self.me, &self.nb)
    }

    /// Issues a queue or stack request on behalf of this node's process.
    /// Must be called on a middle node.
    pub fn issue(&mut self, kind: ReqKind, cx: &mut NodeCx<'_>) -> crate::protocol::ReqRef {
        let proc = self.proc.as_mut().expect("requests are issued at middle nodes");
        proc.next_index += 1;
        proc.incomplete += 1;
        let req = crate::protocol::ReqRef {
            pid: self.me.id.pid,
            index: proc.next_index,
        };
        cx.log(TraceEvent {
            time: cx.now,
            kind: EventKind::RequestIssued,
            process: req.pid,
            op_kind: Some(kind.into()),
            op_index: req.index,
            element: kind.is_insert().then(|| req.element()),
            result: None,
        });
        let p = Pending {
            req,
            kind,
            issued: cx.now,
        };
        let proc = self.proc.as_mut().unwrap();
        proc.held.push_back(p);
        self.flush_held(cx);
        req
    }

    /// Moves held requests into the own stream or relays them, depending on
    /// how far the process has come in joining.
    pub(crate) fn flush_held(&mut self, cx: &mut NodeCx<'_>) {
        loop {
            let Some(proc) = self.proc.as_mut() else { return };
            let relay_to = match self.status {
                Status::Joining => return,
                Status::Ward { responsible } => Some(responsible),
                Status::Active if !proc.relayed.is_empty() || self.ms.relaying_to.is_some() => return,
                Status::Active => None,
            };
            let Some(p) = proc.held.pop_front() else { return };
            match relay_to {
                Some(u) => {
                    proc.relayed.insert(p.req, p);
                    cx.send(
                        u,
                        Msg::Relay {
                            req: p.req,
                            kind: p.kind,
                            issued: p.issued,
                        },
                    );
                }
                None => self.record_local(Origin::Own, p, cx),
            }
        }
    }

    /// Adds a request to a local stream, answering stack pairs on the spot.
    pub(crate) fn record_local(&mut self, origin: Origin, p: Pending, cx: &mut NodeCx<'_>) {
        let kind = self.kind;
        let stream = self.streams.entry(origin).or_insert_with(|| LocalStream::new(kind));
        if let Some((push, pop)) = stream.record(p) {
            self.finish(origin, push, None, cx);
            self.finish(origin, pop, Some(Outcome::Element(push.req.element())), cx);
        }
    }

    /// Reports a finished request to whoever issued it.
    pub(crate) fn finish(&mut self, origin: Origin, p: Pending, outcome: Option<Outcome>, cx: &mut NodeCx<'_>) {
        match origin {
            Origin::Own => self.complete_own(p, outcome, cx),
            Origin::Ward(w) => {
                cx.send(w, Msg::RelayDone { req: p.req, outcome });
            }
        }
    }

    pub(crate) fn complete_own(&mut self, p: Pending, outcome: Option<Outcome>, cx: &mut NodeCx<'_>) {
        let proc = self.proc.as_mut().expect("completion at a middle node");
        proc.incomplete -= 1;
        cx.log(TraceEvent {
            time: cx.now,
            kind: EventKind::RequestCompleted,
            process: p.req.pid,
            op_kind: Some(OpKind::from(p.kind)),
            op_index: p.req.index,
            element: p.kind.is_insert().then(|| p.req.element()),
            result: if p.kind.is_insert() { None } else { outcome },
        });
        cx.env.sink.borrow_mut().latencies.push((p.kind, p.issued, cx.now));
    }

    /// Stage 1: once every child has reported, combine and send upward.
    fn try_aggregate(&mut self, cx: &mut NodeCx<'_>) {
        if self.status != Status::Active || self.in_update() || self.inflight.is_some() {
            return;
        }
        if self.kind == BatchKind::Stack && cx.env.cfg.stage4_barrier && !self.awaiting.is_empty() {
            return;
        }
        let kids = tree::children_of(&self.me, &self.nb);
        if !kids.iter().all(|c| self.from_children.contains_key(c)) {
            return;
        }
        let mut parts = Vec::with_capacity(kids.len() + 2);
        for c in kids {
            let (uid, b) = self.from_children.remove(&c).unwrap();
            parts.push(Part::Child(c, uid, b));
        }
        for (origin, stream) in std::mem::take(&mut self.streams) {
            if !stream.is_empty() {
                parts.push(Part::Local(origin, stream.freeze()));
            }
        }
        let mut total = parts.iter().fold(Batch::empty(self.kind), |acc, p| match p {
            Part::Child(_, _, b) => acc.combine(b),
            Part::Local(_, f) => acc.combine(&Batch {
                kind: self.kind,
                ops: f.ops.clone(),
                j: 0,
                l: 0,
            }),
        });
        total.j += std::mem::take(&mut self.ms.w_j);
        total.l += std::mem::take(&mut self.ms.w_l);
        self.seq += 1;
        let uid = BatchUid {
            node: self.me.id,
            seq: self.seq,
        };
        if cx.env.cfg.lineage {
            let rec = BatchRecord {
                uid,
                parts: parts
                    .iter()
                    .map(|p| match p {
                        Part::Child(_, cu, b) => PartRecord::Child {
                            uid: *cu,
                            ops: b.ops.clone(),
                        },
                        Part::Local(_, f) => PartRecord::Local(f.record.clone()),
                    })
                    .collect(),
            };
            cx.env.sink.borrow_mut().batches.push(rec);
        }
        self.inflight = Some(InFlight {
            uid,
            parts,
            counts: std::mem::take(&mut self.ms.counts_unsent),
        });
        match tree::parent_of(&self.me, &self.nb) {
            Some(parent) => {
                cx.send(parent, Msg::Aggregate { uid, batch: total });
            }
            None => {
                let (intervals, update) = self.assign(uid, &total, cx);
                self.on_serve(intervals, update, cx);
            }
        }
    }

    /// Stage 2 at the anchor.
    fn assign(&mut self, uid: BatchUid, total: &Batch, cx: &mut NodeCx<'_>) -> (Vec<Interval>, bool) {
        let a = self.anchor.as_mut().expect("root without anchor state");
        let c_before = a.c;
        let (intervals, after_run) = match self.kind {
            BatchKind::Queue => assign_queue(&mut a.first, &mut a.last, &total.ops),
            BatchKind::Stack => {
                let iv = assign_stack(&mut a.last, &mut a.ticket, &total.ops);
                (iv, vec![(a.first, a.last); 2])
            }
        };
        a.c += total.requests();
        a.pending += total.j + total.l;
        let vnodes = cx.env.vnodes.get() as f64;
        let threshold = ((cx.env.cfg.update_alpha * vnodes).ceil() as u64).max(1);
        let update = a.pending >= threshold;
        let mut sink = cx.env.sink.borrow_mut();
        if update {
            a.pending = 0;
            a.phase += 1;
            sink.update_phases.push((cx.now, cx.now));
        }
        sink.max_batch_len = sink.max_batch_len.max(total.len());
        sink.batch_lens.push(total.len());
        if cx.env.cfg.lineage {
            sink.anchors.push(AnchorRecord {
                uid,
                kind: self.kind,
                ops: total.ops.clone(),
                c_before,
                after_run,
                intervals: intervals.clone(),
                phase: a.phase,
            });
        }
        drop(sink);
        if update {
            cx.log(TraceEvent {
                time: cx.now,
                kind: EventKind::PhaseChange,
                process: self.me.id.pid,
                op_kind: None,
                op_index: self.anchor.unwrap().phase,
                element: None,
                result: None,
            });
        }
        (intervals, update)
    }

    /// Stage 3: split intervals among the memorized parts; stage 4 for the
    /// local ones.
    pub(crate) fn on_serve(&mut self, intervals: Vec<Interval>, update: bool, cx: &mut NodeCx<'_>) {
        let fl = self.inflight.take().expect("serve without a batch in flight");
        let ops: Vec<&[u64]> = fl.parts.iter().map(|p| p.ops()).collect();
        let subs = decompose(self.kind, &intervals, &ops);
        for (part, sub) in fl.parts.into_iter().zip(subs) {
            match part {
                Part::Child(id, _, _) => {
                    cx.send(id, Msg::Serve { intervals: sub, update });
                }
                Part::Local(origin, frozen) => self.serve_local(fl.uid, origin, frozen, &sub, cx),
            }
        }
        self.ms.counts_sent.extend(fl.counts);
        if update {
            self.enter_update(cx);
        }
    }

    fn serve_local(&mut self, uid: BatchUid, origin: Origin, frozen: Frozen, sub: &[Interval], cx: &mut NodeCx<'_>) {
        let n_est = cx.env.n_est.get();
        for (run, reqs) in frozen.runs.into_iter().enumerate() {
            for (k, p) in reqs.into_iter().enumerate() {
                let s = slot(self.kind, run, &sub[run], k);
                if cx.env.cfg.lineage {
                    cx.env.sink.borrow_mut().meta.push(RequestMeta {
                        req: p.req,
                        kind: p.kind,
                        position: s.map(|(pos, _)| pos),
                        ticket: s.map(|(_, t)| t),
                        batch: Some(uid),
                        run,
                    });
                }
                let Some((position, ticket)) = s else {
                    self.finish(origin, p, Some(Outcome::Bottom), cx);
                    continue;
                };
                let op = if p.kind.is_insert() {
                    DhtOp::Put {
                        item: StoredElement {
                            position,
                            ticket,
                            element: p.req.element(),
                        },
                        initiator: self.me.id,
                        req: p.req,
                    }
                } else {
                    DhtOp::Get {
                        position,
                        ticket_bound: (self.kind == BatchKind::Stack).then_some(ticket),
                        initiator: self.me.id,
                        req: p.req,
                    }
                };
                self.awaiting.insert(p.req, Awaiting { origin, p });
                let key = cx.env.hashing.key(position);
                self.route_dht(op, key, RouteState::new(n_est), cx);
            }
        }
    }

    /// Whether this node holds no unfinished local work. A batch in flight
    /// with local parts counts as unfinished even when all its requests were
    /// answered locally, so that its lineage reaches the anchor.
    pub fn is_settled(&self) -> bool {
        self.streams.values().all(|s| s.is_empty())
            && self
                .inflight
                .as_ref()
                .is_none_or(|f| f.parts.iter().all(|p| matches!(p, Part::Child(..))))
            && self.awaiting.is_empty()
            && self.proc.as_ref().is_none_or(|p| p.incomplete == 0)
            && self.ms.is_settled()
            && self.status == Status::Active
    }
}

impl Actor for Node {
    type Msg = Msg;
    type Env = Env;

    fn on_message(&mut self, from: VirtualNodeId, msg: Msg, cx: &mut NodeCx<'_>) {
        match msg {
            Msg::Aggregate { uid, batch } => {
                let prev = self.from_children.insert(from, (uid, batch));
                debug_assert!(prev.is_none(), "{} sent two batches to {}", from, self.me.id);
            }
            Msg::Serve { intervals, update } => self.on_serve(intervals, update, cx),
            Msg::Dht { op, key, route } => self.route_dht(op, key, route, cx),
            Msg::PutDone { req } => self.on_put_done(req, cx),
            Msg::GetReply { req, element } => self.on_get_reply(req, element, cx),
            other => self.on_membership(from, other, cx),
        }
    }

    fn on_timeout(&mut self, cx: &mut NodeCx<'_>) {
        self.membership_tick(cx);
        if self.ms.departed {
            return;
        }
        self.try_aggregate(cx);
    }

    fn is_idle(&self) -> bool {
        self.is_settled()
    }
}
