//! Joins, leaves and the update phase.
//!
//! Joining virtual nodes become wards of a responsible node that relays
//! their process's requests. Leaving processes ask their predecessors for
//! permission; the lower identifier wins between adjacent leavers. Once the
//! anchor sees enough pending joins and leaves it flags a phase, and the
//! network restructures in three waves over the old tree:
//!
//! 1. quiesce: every node finishes its DHT operations and marks the wards
//!    and leavers counted so far;
//! 2. place: every marked ward is routed to its owner on the frozen cycle;
//! 3. splice: each maximal run of leavers and placed wards is rebuilt by the
//!    nearest surviving nodes on both sides, moving the stored elements.
//!
//! The anchor then hands its variables to the new minimum node if needed,
//! which ends the phase by broadcasting over the new tree. Leavers depart
//! once every neighbor confirms it will not send to them again.

use std::collections::{BTreeMap, BTreeSet};

use crate::kernel::{EventKind, OpKind, Outcome, TraceEvent};
use crate::label::{Kind, NodeRef, VirtualNodeId};
use crate::node::{Node, NodeCx, Status};
use crate::protocol::{Collect, Count, Introduce, Msg, ReqRef, StoredElement};
use crate::stack::Pending;
use crate::topology::{next_hop, Hop, NeighborState, RouteState};
use crate::tree;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Leave {
    #[default]
    None,
    /// Waiting until the node has no wards and no open requests.
    Waiting,
    Asking,
    RetryAt(u64),
    Granted,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Ward {
    pub node: NodeRef,
    pub marked: bool,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct RelayInbox {
    next: u64,
    buf: BTreeMap<u64, Pending>,
}

#[derive(Clone, Debug)]
pub(crate) struct Finalize {
    head: VirtualNodeId,
    targets: Vec<VirtualNodeId>,
    new_min: Option<NodeRef>,
}

#[derive(Clone, Debug)]
pub(crate) struct Update {
    p_old: Option<VirtualNodeId>,
    c_old: Vec<VirtualNodeId>,
    old_pred: NodeRef,
    old_succ: NodeRef,
    /// Wave being worked on; 4 means waiting for the phase end.
    wave: u8,
    acks: [usize; 4],
    /// Whether this wave's acknowledgment went up already.
    up_sent: bool,
    marks_pending: usize,
    placed_pending: usize,
    new_min: Option<NodeRef>,
    segment_open: bool,
    finalize: Option<Finalize>,
}

impl Update {
    fn new(p_old: Option<VirtualNodeId>, c_old: Vec<VirtualNodeId>, nb: NeighborState) -> Self {
        Update {
            p_old,
            c_old,
            old_pred: nb.pred,
            old_succ: nb.succ,
            wave: 1,
            acks: [0; 4],
            up_sent: false,
            marks_pending: 0,
            placed_pending: 0,
            new_min: None,
            segment_open: false,
            finalize: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub(crate) struct Membership {
    // Responsible-node side.
    pub wards: BTreeMap<VirtualNodeId, Ward>,
    /// Integrated middles whose relayed requests may still be open here.
    pub former_wards: BTreeSet<VirtualNodeId>,
    pub inbox: BTreeMap<VirtualNodeId, RelayInbox>,
    pub w_j: u64,
    pub w_l: u64,
    pub counts_unsent: Vec<Count>,
    pub counts_sent: Vec<Count>,
    pub placed: Vec<NodeRef>,
    // Joining side.
    pub relaying_to: Option<VirtualNodeId>,
    sib_accepted: BTreeMap<Kind, VirtualNodeId>,
    join_counted: bool,
    join_pending_end: bool,
    // Leaving side.
    pub leave: Leave,
    sib_granted: u8,
    leave_counted: bool,
    pub dissolving: bool,
    marked_reply: Option<VirtualNodeId>,
    /// A dissolve order that overtook this node's own flagged serve.
    early_dissolve: Option<VirtualNodeId>,
    pred_dissolving: bool,
    succ_dissolving: bool,
    expected_releases: BTreeSet<VirtualNodeId>,
    releases: BTreeSet<VirtualNodeId>,
    release_todo: Vec<VirtualNodeId>,
    collect_done: bool,
    /// Surviving node that took over after this node dissolved.
    head: Option<VirtualNodeId>,
    pub upd: Option<Update>,
    pub departed: bool,
}

impl Membership {
    pub fn is_settled(&self) -> bool {
        self.upd.is_none() && self.leave == Leave::None && !self.dissolving
    }

    fn is_leaving(&self) -> bool {
        self.leave != Leave::None || self.dissolving
    }
}

impl Node {
    /// Starts a join through `entry`, an integrated node.
    pub fn start_join(&mut self, entry: VirtualNodeId, cx: &mut NodeCx<'_>) {
        assert_eq!(self.status, Status::Joining);
        if self.me.id.kind == Kind::Middle {
            cx.log(TraceEvent {
                time: cx.now,
                kind: EventKind::RequestIssued,
                process: self.me.id.pid,
                op_kind: Some(OpKind::Join),
                op_index: 0,
                element: None,
                result: None,
            });
        }
        let route = RouteState::new(cx.env.n_est.get());
        cx.send(
            entry,
            Msg::JoinRoute {
                joiner: self.me,
                route,
                from_leaver: false,
            },
        );
    }

    /// Asks this process (called on its middle node) to leave.
    pub fn request_leave(&mut self, cx: &mut NodeCx<'_>) {
        assert_eq!(self.me.id.kind, Kind::Middle);
        assert!(self.is_integrated() && self.ms.leave == Leave::None);
        cx.log(TraceEvent {
            time: cx.now,
            kind: EventKind::RequestIssued,
            process: self.me.id.pid,
            op_kind: Some(OpKind::Leave),
            op_index: 0,
            element: None,
            result: None,
        });
        self.ms.leave = Leave::Waiting;
        for k in [Kind::Left, Kind::Right] {
            cx.send(self.me.id.sibling(k), Msg::LeaveStart);
        }
    }

    pub fn is_leaving(&self) -> bool {
        self.ms.is_leaving()
    }

    pub fn ward_count(&self) -> usize {
        self.ms.wards.len()
    }

    pub(crate) fn on_membership(&mut self, from: VirtualNodeId, msg: Msg, cx: &mut NodeCx<'_>) {
        match msg {
            Msg::Relay { req, kind, issued } => self.on_relay(from, Pending { req, kind, issued }, cx),
            Msg::RelayDone { req, outcome } => self.on_relay_done(req, outcome, cx),
            Msg::RelaysDone => {
                self.ms.former_wards.remove(&from);
                let inbox = self.ms.inbox.remove(&from);
                debug_assert!(inbox.is_none_or(|i| i.buf.is_empty()));
            }
            Msg::JoinRoute {
                joiner,
                route,
                from_leaver,
            } => self.on_join_route(joiner, route, from_leaver, cx),
            Msg::JoinAccept { responsible } => self.on_join_accept(responsible.id, cx),
            Msg::SiblingAccepted { kind_responsible } => {
                self.ms.sib_accepted.insert(kind_responsible.0, kind_responsible.1);
                self.check_join_count(cx);
            }
            Msg::CountJoin { pid, responsible } => {
                assert!(
                    !self.ms.dissolving && self.ms.head.is_none(),
                    "join counted at a dissolving node"
                );
                self.ms.w_j += 1;
                self.ms.counts_unsent.push(Count::Join { pid, responsible });
            }
            Msg::LeaveStart => {
                if self.ms.leave == Leave::None {
                    self.ms.leave = Leave::Waiting;
                }
            }
            Msg::LeaveAsk { pid } => {
                let deny = pid != self.me.id.pid && self.ms.is_leaving() && self.me.id.pid < pid;
                cx.send(from, if deny { Msg::LeaveDeny } else { Msg::LeaveGrant });
            }
            Msg::LeaveDeny => {
                self.ms.leave = Leave::RetryAt(cx.now + cx.env.cfg.leave_retry);
            }
            Msg::LeaveGrant => {
                self.ms.leave = Leave::Granted;
                if self.me.id.kind == Kind::Middle {
                    self.ms.sib_granted += 1;
                } else {
                    cx.send(self.me.id.sibling(Kind::Middle), Msg::SiblingGranted);
                }
            }
            Msg::SiblingGranted => self.ms.sib_granted += 1,
            Msg::CountLeave { pid } => match self.ms.head {
                Some(h) => {
                    cx.send(h, Msg::CountLeave { pid });
                }
                None => {
                    self.ms.w_l += 1;
                    self.ms.counts_unsent.push(Count::Leave { pid });
                }
            },
            Msg::MarkIntegrate { ward } => {
                self.ms.wards.get_mut(&ward).expect("mark for unknown ward").marked = true;
                cx.send(from, Msg::Marked);
            }
            Msg::MarkDissolve => self.on_mark_dissolve(from, cx),
            Msg::DissolveNotice => {
                if from == self.nb.pred.id {
                    self.ms.pred_dissolving = true;
                }
                if from == self.nb.succ.id {
                    self.ms.succ_dissolving = true;
                }
            }
            Msg::Marked => self.upd().marks_pending -= 1,
            Msg::WaveDown { wave } => self.start_wave(wave, cx),
            Msg::WaveUp { wave, new_min } => {
                let u = self.upd();
                u.acks[wave as usize] += 1;
                u.new_min = u.new_min.or(new_min);
            }
            Msg::Place { ward, origin, route } => self.on_place(ward, origin, route, cx),
            Msg::Placed => self.upd().placed_pending -= 1,
            Msg::Collect(c) => self.on_collect(*c, cx),
            Msg::Introduce(i) => self.on_introduce(from, *i, cx),
            Msg::SegmentClosed { new_min } => {
                let u = self.upd();
                u.segment_open = false;
                u.new_min = u.new_min.or(new_min);
            }
            Msg::AnchorTransfer(snap) => {
                assert!(self.anchor.is_none());
                assert!(
                    tree::is_anchor(&self.me, &self.nb),
                    "anchor handed to a non-minimum node"
                );
                self.anchor = Some(snap);
                self.phase_end(cx);
            }
            Msg::PhaseEnd => self.phase_end(cx),
            Msg::Release => {
                self.ms.releases.insert(from);
            }
            m => unreachable!("unexpected message {m:?}"),
        }
    }

    fn upd(&mut self) -> &mut Update {
        self.ms
            .upd
            .as_mut()
            .expect("update-phase message outside an update phase")
    }

    // ---- requests of joining processes ----

    fn on_relay(&mut self, ward: VirtualNodeId, p: Pending, cx: &mut NodeCx<'_>) {
        let inbox = self.ms.inbox.get_mut(&ward).expect("relay from unknown ward");
        inbox.buf.insert(p.req.index, p);
        let mut ready = Vec::new();
        while let Some(p) = inbox.buf.remove(&inbox.next) {
            inbox.next += 1;
            ready.push(p);
        }
        for p in ready {
            self.record_local(crate::protocol::Origin::Ward(ward), p, cx);
        }
    }

    fn on_relay_done(&mut self, req: ReqRef, outcome: Option<Outcome>, cx: &mut NodeCx<'_>) {
        let proc = self.proc.as_mut().expect("relay answer at a middle node");
        let p = proc.relayed.remove(&req).expect("answer for an unrelayed request");
        self.complete_own(p, outcome, cx);
        self.check_relays_done(cx);
    }

    /// After integration, switches from relaying to local recording once
    /// every relayed request is answered.
    fn check_relays_done(&mut self, cx: &mut NodeCx<'_>) {
        if self.status != Status::Active {
            return;
        }
        let Some(u) = self.ms.relaying_to else { return };
        if self.proc.as_ref().is_some_and(|p| p.relayed.is_empty()) {
            self.ms.relaying_to = None;
            cx.send(u, Msg::RelaysDone);
            self.flush_held(cx);
        }
    }

    // ---- joins ----

    fn on_join_route(&mut self, joiner: NodeRef, route: RouteState, from_leaver: bool, cx: &mut NodeCx<'_>) {
        assert_eq!(self.status, Status::Active, "join routed through a non-member");
        if self.ms.is_leaving() {
            let to = self.ms.head.unwrap_or(self.nb.pred.id);
            cx.send(
                to,
                Msg::JoinRoute {
                    joiner,
                    route,
                    from_leaver: true,
                },
            );
            return;
        }
        // Placement happens by routing at integration time, so any surviving
        // node may take responsibility; routing only spreads the load.
        if from_leaver || self.in_update() {
            self.accept(joiner, cx);
            return;
        }
        match next_hop(&self.me, &self.nb, joiner.label, route) {
            Hop::Arrived => self.accept(joiner, cx),
            Hop::Forward(next, st) => {
                cx.send(
                    next,
                    Msg::JoinRoute {
                        joiner,
                        route: st,
                        from_leaver,
                    },
                );
            }
        }
    }

    fn accept(&mut self, joiner: NodeRef, cx: &mut NodeCx<'_>) {
        self.ms.wards.insert(
            joiner.id,
            Ward {
                node: joiner,
                marked: false,
            },
        );
        if joiner.id.kind == Kind::Middle {
            self.ms.inbox.insert(
                joiner.id,
                RelayInbox {
                    next: 1,
                    buf: BTreeMap::new(),
                },
            );
        }
        cx.send(joiner.id, Msg::JoinAccept { responsible: self.me });
    }

    fn on_join_accept(&mut self, u: VirtualNodeId, cx: &mut NodeCx<'_>) {
        assert_eq!(self.status, Status::Joining);
        self.status = Status::Ward { responsible: u };
        if self.me.id.kind == Kind::Middle {
            self.ms.sib_accepted.insert(Kind::Middle, u);
            self.flush_held(cx);
            self.check_join_count(cx);
        } else {
            cx.send(
                self.me.id.sibling(Kind::Middle),
                Msg::SiblingAccepted {
                    kind_responsible: (self.me.id.kind, u),
                },
            );
        }
    }

    fn check_join_count(&mut self, cx: &mut NodeCx<'_>) {
        if self.ms.join_counted || self.ms.sib_accepted.len() < 3 || !matches!(self.status, Status::Ward { .. }) {
            return;
        }
        self.ms.join_counted = true;
        let r = |k| self.ms.sib_accepted[&k];
        let responsible = [r(Kind::Left), r(Kind::Middle), r(Kind::Right)];
        cx.send(
            responsible[1],
            Msg::CountJoin {
                pid: self.me.id.pid,
                responsible,
            },
        );
    }

    // ---- leaves ----

    fn leave_tick(&mut self, cx: &mut NodeCx<'_>) {
        match self.ms.leave {
            Leave::RetryAt(t) if cx.now >= t => self.ms.leave = Leave::Waiting,
            Leave::Waiting => {
                let quiet = self.ms.wards.is_empty()
                    && self.ms.former_wards.is_empty()
                    && self.ms.inbox.is_empty()
                    && self
                        .proc
                        .as_ref()
                        .is_none_or(|p| p.incomplete == 0 && p.held.is_empty());
                if quiet && self.status == Status::Active && !self.in_update() {
                    self.ms.leave = Leave::Asking;
                    cx.send(self.nb.pred.id, Msg::LeaveAsk { pid: self.me.id.pid });
                }
            }
            _ => {}
        }
        if self.me.id.kind == Kind::Middle && self.ms.sib_granted == 3 && !self.ms.leave_counted {
            self.ms.leave_counted = true;
            cx.send(self.nb.pred.id, Msg::CountLeave { pid: self.me.id.pid });
        }
    }

    fn on_mark_dissolve(&mut self, orderer: VirtualNodeId, cx: &mut NodeCx<'_>) {
        if !self.in_update() {
            self.ms.early_dissolve = Some(orderer);
            return;
        }
        assert!(!self.ms.dissolving);
        self.ms.dissolving = true;
        let mut expect: BTreeSet<VirtualNodeId> = [self.nb.pred.id, self.nb.succ.id].into();
        for k in Kind::ALL {
            expect.insert(self.me.id.sibling(k));
        }
        expect.remove(&self.me.id);
        self.ms.expected_releases = expect;
        for to in [self.nb.pred.id, self.nb.succ.id] {
            cx.send(to, Msg::DissolveNotice);
        }
        self.ms.marked_reply = Some(orderer);
    }

    // ---- update phase ----

    /// Entered on a flagged serve: wave 1 begins.
    pub(crate) fn enter_update(&mut self, cx: &mut NodeCx<'_>) {
        let links = tree::links(&self.me, &self.nb);
        let mut u = Update::new(links.parent, links.children, self.nb);
        for count in std::mem::take(&mut self.ms.counts_sent) {
            match count {
                Count::Join { pid, responsible } => {
                    for (k, r) in Kind::ALL.into_iter().zip(responsible) {
                        cx.send(
                            r,
                            Msg::MarkIntegrate {
                                ward: VirtualNodeId::new(pid, k),
                            },
                        );
                    }
                }
                Count::Leave { pid } => {
                    for k in Kind::ALL {
                        cx.send(VirtualNodeId::new(pid, k), Msg::MarkDissolve);
                    }
                }
            }
            u.marks_pending += 3;
        }
        self.ms.upd = Some(u);
        if let Some(orderer) = self.ms.early_dissolve.take() {
            self.on_mark_dissolve(orderer, cx);
        }
    }

    fn start_wave(&mut self, wave: u8, cx: &mut NodeCx<'_>) {
        let n_est = cx.env.n_est.get();
        let me = self.me;
        let u = self.upd();
        assert_eq!(u.wave + 1, wave, "waves out of order at {}", me.id);
        u.wave = wave;
        u.up_sent = false;
        for c in u.c_old.clone() {
            cx.send(c, Msg::WaveDown { wave });
        }
        match wave {
            2 => {
                let marked: Vec<VirtualNodeId> = self
                    .ms
                    .wards
                    .iter()
                    .filter(|(_, w)| w.marked)
                    .map(|(id, _)| *id)
                    .collect();
                for id in marked {
                    let w = self.ms.wards.remove(&id).unwrap();
                    if id.kind == Kind::Middle {
                        self.ms.former_wards.insert(id);
                    }
                    self.upd().placed_pending += 1;
                    self.on_place(w.node, me.id, RouteState::new(n_est), cx);
                }
            }
            3 => {
                if !self.ms.dissolving && (!self.ms.placed.is_empty() || self.ms.succ_dissolving) {
                    let mut wards = std::mem::take(&mut self.ms.placed);
                    wards.sort();
                    let c = Collect {
                        head: self.me,
                        wards,
                        items: self.drain_store(),
                        j: 0,
                        l: 0,
                        counts: Vec::new(),
                    };
                    self.upd().segment_open = true;
                    cx.send(self.nb.succ.id, Msg::Collect(Box::new(c)));
                }
            }
            _ => unreachable!(),
        }
    }

    fn drain_store(&mut self) -> Vec<StoredElement> {
        assert!(self.parked.is_empty(), "parked gets during restructuring");
        std::mem::take(&mut self.store).into_values().flatten().collect()
    }

    fn on_place(&mut self, ward: NodeRef, origin: VirtualNodeId, route: RouteState, cx: &mut NodeCx<'_>) {
        match next_hop(&self.me, &self.nb, ward.label, route) {
            Hop::Arrived => {
                self.ms.placed.push(ward);
                if origin == self.me.id {
                    self.upd().placed_pending -= 1;
                } else {
                    cx.send(origin, Msg::Placed);
                }
            }
            Hop::Forward(next, st) => {
                cx.send(
                    next,
                    Msg::Place {
                        ward,
                        origin,
                        route: st,
                    },
                );
            }
        }
    }

    fn on_collect(&mut self, mut c: Collect, cx: &mut NodeCx<'_>) {
        assert!(self.in_update());
        if self.ms.dissolving {
            c.wards.append(&mut self.ms.placed);
            c.items.extend(self.drain_store());
            c.j += std::mem::take(&mut self.ms.w_j);
            c.l += std::mem::take(&mut self.ms.w_l);
            c.counts.append(&mut self.ms.counts_unsent);
            self.ms.head = Some(c.head.id);
            self.ms.collect_done = true;
            cx.send(self.nb.succ.id, Msg::Collect(Box::new(c)));
            return;
        }
        // This node ends the segment: rebuild it.
        let head = c.head;
        let mut mid = c.wards;
        mid.sort_by_key(|w| (head.label.dist_to(w.label), w.order_key()));
        let mut chain = Vec::with_capacity(mid.len() + 2);
        chain.push(head);
        chain.extend(mid);
        chain.push(self.me);
        let new_min = (1..chain.len()).find(|&i| chain[i] < chain[i - 1]).map(|i| chain[i]);
        let last = chain.len() - 1;
        let mut items: Vec<Vec<StoredElement>> = vec![Vec::new(); last];
        for item in c.items {
            let d = head.label.dist_to(cx.env.hashing.key(item.position));
            let owner = chain[..last].partition_point(|n| head.label.dist_to(n.label) <= d) - 1;
            items[owner].push(item);
        }
        let mut targets = Vec::with_capacity(last);
        for (i, items) in items.into_iter().enumerate() {
            let intro = if i == 0 {
                Introduce {
                    pred: None,
                    succ: Some(chain[1]),
                    items,
                    j: c.j,
                    l: c.l,
                    counts: std::mem::take(&mut c.counts),
                }
            } else {
                Introduce {
                    pred: Some(chain[i - 1]),
                    succ: Some(chain[i + 1]),
                    items,
                    j: 0,
                    l: 0,
                    counts: Vec::new(),
                }
            };
            cx.send(chain[i].id, Msg::Introduce(Box::new(intro)));
            targets.push(chain[i].id);
        }
        self.nb.pred = chain[last - 1];
        let u = self.upd();
        assert!(u.finalize.is_none(), "two segments end at one node");
        u.finalize = Some(Finalize {
            head: head.id,
            targets,
            new_min,
        });
    }

    fn on_introduce(&mut self, from: VirtualNodeId, i: Introduce, cx: &mut NodeCx<'_>) {
        for item in i.items {
            self.store.entry(item.position).or_default().push(item);
        }
        self.ms.w_j += i.j;
        self.ms.w_l += i.l;
        self.ms.counts_unsent.extend(i.counts);
        if let Status::Ward { responsible } = self.status {
            let _ = from;
            self.status = Status::Active;
            self.nb = NeighborState {
                pred: i.pred.expect("ward without pred"),
                succ: i.succ.expect("ward without succ"),
            };
            let mut u = Update::new(None, Vec::new(), self.nb);
            u.wave = 4;
            self.ms.upd = Some(u);
            self.ms.join_pending_end = true;
            if self.me.id.kind == Kind::Middle {
                self.ms.relaying_to = Some(responsible);
            }
            self.check_relays_done(cx);
        } else {
            if let Some(p) = i.pred {
                self.nb.pred = p;
            }
            if let Some(s) = i.succ {
                self.nb.succ = s;
            }
        }
    }

    fn phase_end(&mut self, cx: &mut NodeCx<'_>) {
        assert!(!self.ms.dissolving);
        let u = self.ms.upd.take().expect("phase end outside an update phase");
        debug_assert!(u.finalize.is_none());
        self.ms.placed.clear();
        for c in tree::children_of(&self.me, &self.nb) {
            cx.send(c, Msg::PhaseEnd);
        }
        if let Some(last) = cx.env.sink.borrow_mut().update_phases.last_mut() {
            last.1 = last.1.max(cx.now);
        }
        if std::mem::take(&mut self.ms.join_pending_end) && self.me.id.kind == Kind::Middle {
            cx.log(TraceEvent {
                time: cx.now,
                kind: EventKind::RequestCompleted,
                process: self.me.id.pid,
                op_kind: Some(OpKind::Join),
                op_index: 0,
                element: None,
                result: None,
            });
        }
        self.check_relays_done(cx);
        self.flush_held(cx);
    }

    /// Progress that does not depend on a particular message.
    pub(crate) fn membership_tick(&mut self, cx: &mut NodeCx<'_>) {
        self.leave_tick(cx);
        if let Some(orderer) = self.ms.marked_reply {
            if cx.outstanding(self.nb.pred.id) == 0 && cx.outstanding(self.nb.succ.id) == 0 {
                self.ms.marked_reply = None;
                cx.send(orderer, Msg::Marked);
            }
        }
        if let Some(u) = self.ms.upd.as_mut() {
            if let Some(f) = &u.finalize {
                if f.targets.iter().all(|t| cx.outstanding(*t) == 0) {
                    let f = u.finalize.take().unwrap();
                    cx.send(f.head, Msg::SegmentClosed { new_min: f.new_min });
                }
            }
        }
        self.wave_tick(cx);
        self.release_tick(cx);
    }

    fn wave_tick(&mut self, cx: &mut NodeCx<'_>) {
        let dissolving = self.ms.dissolving;
        let collect_done = self.ms.collect_done;
        let settled = self.awaiting.is_empty() && self.ms.marked_reply.is_none();
        let Some(u) = self.ms.upd.as_mut() else { return };
        let w = u.wave as usize;
        if w > 3 || u.up_sent || u.acks[w] < u.c_old.len() {
            return;
        }
        let done = match w {
            1 => u.marks_pending == 0 && settled,
            2 => u.placed_pending == 0,
            _ => !u.segment_open && (!dissolving || collect_done) && u.finalize.is_none(),
        };
        if !done {
            return;
        }
        let new_min = u.new_min;
        match u.p_old {
            Some(p) => {
                cx.send(p, Msg::WaveUp { wave: w as u8, new_min });
                u.up_sent = true;
                if w == 3 {
                    u.wave = 4;
                    self.after_wave3();
                }
            }
            None if w < 3 => self.start_wave(w as u8 + 1, cx),
            None => {
                u.wave = 4;
                let target = new_min.unwrap_or(self.me);
                assert!(
                    !dissolving || target.id != self.me.id,
                    "dissolving anchor without successor"
                );
                self.after_wave3();
                if target.id == self.me.id {
                    self.phase_end(cx);
                } else {
                    let snap = self.anchor.take().expect("root without anchor state");
                    cx.send(target.id, Msg::AnchorTransfer(snap));
                }
            }
        }
    }

    fn after_wave3(&mut self) {
        let u = self.ms.upd.as_ref().unwrap();
        let mut todo = Vec::new();
        if self.ms.pred_dissolving {
            todo.push(u.old_pred.id);
        }
        if self.ms.succ_dissolving {
            todo.push(u.old_succ.id);
        }
        if self.ms.dissolving {
            for k in Kind::ALL {
                todo.push(self.me.id.sibling(k));
            }
        }
        todo.sort();
        todo.dedup();
        todo.retain(|x| *x != self.me.id);
        self.ms.release_todo = todo;
        self.ms.pred_dissolving = false;
        self.ms.succ_dissolving = false;
    }

    fn release_tick(&mut self, cx: &mut NodeCx<'_>) {
        let dissolving = self.ms.dissolving;
        let nb = self.nb;
        let mut sent = Vec::new();
        for &x in &self.ms.release_todo {
            let pointed = !dissolving && (nb.pred.id == x || nb.succ.id == x);
            if !pointed && cx.outstanding(x) == 0 {
                cx.send(x, Msg::Release);
                sent.push(x);
            }
        }
        self.ms.release_todo.retain(|x| !sent.contains(x));
        if dissolving
            && self.ms.upd.as_ref().is_some_and(|u| u.wave == 4)
            && self.ms.collect_done
            && self.ms.release_todo.is_empty()
            && self.ms.expected_releases.is_subset(&self.ms.releases)
            && !cx.any_outstanding()
        {
            assert!(self.store.is_empty() && self.parked.is_empty() && self.awaiting.is_empty());
            self.ms.departed = true;
            cx.depart();
        }
    }
}
