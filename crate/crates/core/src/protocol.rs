//! Protocol messages and the shared simulation environment.

use std::cell::{Cell, RefCell};

use crate::batch::{Batch, BatchKind, ReqKind};
use crate::kernel::Outcome;
use crate::label::{Hashing, Label, NodeRef, VirtualNodeId};
use crate::topology::RouteState;

/// `op(v, i)`: the `index`-th request issued by process `pid` (1-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReqRef {
    pub pid: u64,
    pub index: u64,
}

impl ReqRef {
    /// Element id carried by an enqueue or push: unique per request.
    pub fn element(self) -> u64 {
        (self.pid << 32) | self.index
    }

    pub fn from_element(e: u64) -> ReqRef {
        ReqRef {
            pid: e >> 32,
            index: e & 0xffff_ffff,
        }
    }
}

/// Globally unique batch identity: the sending node and its local sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BatchUid {
    pub node: VirtualNodeId,
    pub seq: u64,
}

/// Inclusive position range `[x, y]`; empty when `x = y + 1`.
///
/// For stack pop runs `ticket` is the retrieval bound; for push runs it is
/// the ticket of position `x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interval {
    pub x: i64,
    pub y: i64,
    pub ticket: u64,
}

impl Interval {
    pub fn new(x: i64, y: i64) -> Self {
        Interval { x, y, ticket: 0 }
    }

    pub fn width(&self) -> u64 {
        (self.y - self.x + 1).max(0) as u64
    }
}

/// A DHT element together with its position and (stack) ticket.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StoredElement {
    pub position: u64,
    pub ticket: u64,
    pub element: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DhtOp {
    Put {
        item: StoredElement,
        initiator: VirtualNodeId,
        req: ReqRef,
    },
    Get {
        position: u64,
        ticket_bound: Option<u64>,
        initiator: VirtualNodeId,
        req: ReqRef,
    },
}

impl DhtOp {
    pub fn position(&self) -> u64 {
        match self {
            DhtOp::Put { item, .. } => item.position,
            DhtOp::Get { position, .. } => *position,
        }
    }

    pub fn initiator(&self) -> VirtualNodeId {
        match self {
            DhtOp::Put { initiator, .. } | DhtOp::Get { initiator, .. } => *initiator,
        }
    }

    pub fn req(&self) -> ReqRef {
        match self {
            DhtOp::Put { req, .. } | DhtOp::Get { req, .. } => *req,
        }
    }
}

/// Membership bookkeeping carried in batches: one entry per process.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Count {
    /// A joining process; its three wards and their responsible nodes.
    Join {
        pid: u64,
        responsible: [VirtualNodeId; 3],
    },
    Leave {
        pid: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Msg {
    // Stages 1 and 3.
    Aggregate {
        uid: BatchUid,
        batch: Batch,
    },
    Serve {
        intervals: Vec<Interval>,
        update: bool,
    },
    // DHT.
    Dht {
        op: DhtOp,
        key: Label,
        route: RouteState,
    },
    PutDone {
        req: ReqRef,
    },
    GetReply {
        req: ReqRef,
        element: Option<u64>,
    },
    // Requests relayed by a joining process through its responsible node.
    Relay {
        req: ReqRef,
        kind: ReqKind,
        issued: u64,
    },
    RelayDone {
        req: ReqRef,
        outcome: Option<Outcome>,
    },
    RelaysDone,
    // Join.
    JoinRoute {
        joiner: NodeRef,
        route: RouteState,
        from_leaver: bool,
    },
    JoinAccept {
        responsible: NodeRef,
    },
    SiblingAccepted {
        kind_responsible: (crate::label::Kind, VirtualNodeId),
    },
    CountJoin {
        pid: u64,
        responsible: [VirtualNodeId; 3],
    },
    // Leave.
    LeaveStart,
    LeaveAsk {
        pid: u64,
    },
    LeaveGrant,
    LeaveDeny,
    SiblingGranted,
    CountLeave {
        pid: u64,
    },
    // Update phase. Wave 1 (quiesce and mark) starts with a flagged Serve;
    // wave 2 places marked wards at their owners; wave 3 splices segments.
    MarkIntegrate {
        ward: VirtualNodeId,
    },
    MarkDissolve,
    DissolveNotice,
    Marked,
    WaveDown {
        wave: u8,
    },
    WaveUp {
        wave: u8,
        new_min: Option<NodeRef>,
    },
    Place {
        ward: NodeRef,
        origin: VirtualNodeId,
        route: RouteState,
    },
    Placed,
    Collect(Box<Collect>),
    Introduce(Box<Introduce>),
    SegmentClosed {
        new_min: Option<NodeRef>,
    },
    AnchorTransfer(AnchorSnapshot),
    PhaseEnd,
    Release,
}

/// State gathered along a run of dissolving nodes during restructuring.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Collect {
    pub head: NodeRef,
    pub wards: Vec<NodeRef>,
    pub items: Vec<StoredElement>,
    pub j: u64,
    pub l: u64,
    pub counts: Vec<Count>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Introduce {
    pub pred: Option<NodeRef>,
    pub succ: Option<NodeRef>,
    pub items: Vec<StoredElement>,
    pub j: u64,
    pub l: u64,
    pub counts: Vec<Count>,
}

/// Anchor variables handed to a new minimum node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnchorSnapshot {
    pub first: i64,
    pub last: i64,
    pub ticket: u64,
    pub c: u64,
    pub pending: u64,
    pub phase: u64,
}

/// Protocol switches shared by every node.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolConfig {
    pub mode: BatchKind,
    /// Update-phase trigger: enter when pending joins plus leaves reach
    /// `max(1, ceil(alpha * virtual node count))`.
    pub update_alpha: f64,
    /// Stack only: wait for all DHT operations of the previous phase before
    /// starting stage 1 again. Disabling it is only meant for fault tests.
    pub stage4_barrier: bool,
    /// Steps a refused leaver waits before asking again.
    pub leave_retry: u64,
    /// Record per-request lineage for the consistency checker.
    pub lineage: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            mode: BatchKind::Queue,
            update_alpha: 0.0,
            stage4_barrier: true,
            leave_retry: 4,
            lineage: true,
        }
    }
}

/// Where a request's batch part came from inside a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Origin {
    /// Requests relayed for a joining process (its middle node).
    Ward(VirtualNodeId),
    /// The node's own requests.
    Own,
}

/// One memorized sub-batch, as recorded for the checker.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PartRecord {
    Child { uid: BatchUid, ops: Vec<u64> },
    Local(LocalRecord),
}

impl PartRecord {
    pub fn ops(&self) -> &[u64] {
        match self {
            PartRecord::Child { ops, .. } => ops,
            PartRecord::Local(l) => &l.ops,
        }
    }
}

/// Requests recorded in one local stream of a batch.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct LocalRecord {
    pub ops: Vec<u64>,
    /// Residual requests per run, in issue order.
    pub runs: Vec<Vec<ReqRef>>,
    /// Stack only: locally matched push/pop blocks, each placed after the
    /// given number of residual requests (in issue order).
    pub blocks: Vec<(usize, Vec<ReqRef>)>,
    /// Residual requests in issue order with their run index.
    pub residual_order: Vec<(usize, ReqRef)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchRecord {
    pub uid: BatchUid,
    pub parts: Vec<PartRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnchorRecord {
    pub uid: BatchUid,
    pub kind: BatchKind,
    pub ops: Vec<u64>,
    pub c_before: u64,
    /// Anchor `(first, last)` after each run was processed.
    pub after_run: Vec<(i64, i64)>,
    pub intervals: Vec<Interval>,
    pub phase: u64,
}

/// Positions handed to one request at decomposition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RequestMeta {
    pub req: ReqRef,
    pub kind: ReqKind,
    pub position: Option<u64>,
    pub ticket: Option<u64>,
    pub batch: Option<BatchUid>,
    pub run: usize,
}

/// Protocol-internal facts collected for checking and statistics.
#[derive(Clone, Debug, Default)]
pub struct Sink {
    pub batches: Vec<BatchRecord>,
    pub anchors: Vec<AnchorRecord>,
    pub meta: Vec<RequestMeta>,
    /// `(kind, issue time, completion time)` per completed request.
    pub latencies: Vec<(ReqKind, u64, u64)>,
    pub max_batch_len: usize,
    /// Lengths of every batch sent upward.
    pub batch_lens: Vec<usize>,
    /// `(start, end)` step of every update phase.
    pub update_phases: Vec<(u64, u64)>,
    pub dht_hops: Vec<u32>,
}

/// Read-only configuration plus interior-mutable collectors.
pub struct Env {
    pub cfg: ProtocolConfig,
    pub hashing: Hashing,
    /// Ground-truth process count used for routing budgets.
    pub n_est: Cell<usize>,
    /// Ground-truth virtual node count used by the update trigger.
    pub vnodes: Cell<usize>,
    pub sink: RefCell<Sink>,
}

impl Env {
    pub fn new(cfg: ProtocolConfig, hashing: Hashing) -> Self {
        Env {
            cfg,
            hashing,
            n_est: Cell::new(1),
            vnodes: Cell::new(3),
            sink: RefCell::new(Sink::default()),
        }
    }
}
