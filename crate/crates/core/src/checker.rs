//! Sequential-consistency checking.
//!
//! The protocol realizes a total order on all requests: every request gets a
//! value from its offset inside its run, shifted by the sizes of the
//! sub-batches combined before it at each tree level, and finally by the
//! anchor counter. [`assign_values`] rebuilds that order from the recorded
//! batch lineage and [`verify`] checks the four consistency properties
//! against it. [`brute_force_exists`] is an independent, exhaustive oracle for
//! small histories.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::batch::{BatchKind, ReqKind};
use crate::kernel::{EventKind, OpKind, Outcome, TraceEvent};
use crate::protocol::{AnchorRecord, BatchUid, PartRecord, ReqRef, Sink};

/// Minor component of residual requests; locally combined stack pairs sort
/// just before or after them.
const RESIDUAL: u64 = 1 << 31;

/// One completed queue or stack request as observed in the trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Request {
    pub req: ReqRef,
    pub kind: ReqKind,
    /// Removal outcome; `None` for inserts.
    pub result: Option<Outcome>,
    pub issued: u64,
    pub completed: u64,
}

impl Request {
    /// The insert whose element this removal returned.
    pub fn matched_insert(&self) -> Option<ReqRef> {
        match self.result {
            Some(Outcome::Element(e)) => Some(ReqRef::from_element(e)),
            _ => None,
        }
    }

    pub fn is_bottom(&self) -> bool {
        self.result == Some(Outcome::Bottom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CheckError {
    #[error("request {0:?} was issued but never completed")]
    Incomplete(ReqRef),
    #[error("request {0:?} completed without being issued")]
    Unissued(ReqRef),
    #[error("history mixes queue and stack requests")]
    MixedKinds,
    #[error("no lineage for request {0:?}")]
    LineageGap(ReqRef),
    #[error("batch {0:?} never reached the anchor")]
    Unanchored(BatchUid),
    #[error("requests {0:?} and {1:?} received the same value")]
    DuplicateValue(ReqRef, ReqRef),
}

/// All completed queue or stack requests of a run, sorted by `(pid, index)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct History {
    pub requests: Vec<Request>,
}

impl History {
    /// Collects request events. Join and leave events are ignored.
    pub fn from_trace(events: &[TraceEvent]) -> Result<History, CheckError> {
        let mut open: BTreeMap<ReqRef, (ReqKind, u64)> = BTreeMap::new();
        let mut done = Vec::new();
        for ev in events {
            let kind = match ev.op_kind {
                Some(OpKind::Enq) => ReqKind::Enq,
                Some(OpKind::Deq) => ReqKind::Deq,
                Some(OpKind::Push) => ReqKind::Push,
                Some(OpKind::Pop) => ReqKind::Pop,
                _ => continue,
            };
            let req = ReqRef {
                pid: ev.process,
                index: ev.op_index,
            };
            match ev.kind {
                EventKind::RequestIssued => {
                    open.insert(req, (kind, ev.time));
                }
                EventKind::RequestCompleted => {
                    let (kind, issued) = open.remove(&req).ok_or(CheckError::Unissued(req))?;
                    done.push(Request {
                        req,
                        kind,
                        result: if kind.is_insert() { None } else { ev.result },
                        issued,
                        completed: ev.time,
                    });
                }
                _ => {}
            }
        }
        if let Some((&req, _)) = open.iter().next() {
            return Err(CheckError::Incomplete(req));
        }
        done.sort_by_key(|r| r.req);
        let h = History { requests: done };
        h.kind()?;
        Ok(h)
    }

    /// Queue or stack, by the kinds present. Empty histories count as queues.
    pub fn kind(&self) -> Result<BatchKind, CheckError> {
        let queue = self
            .requests
            .iter()
            .any(|r| matches!(r.kind, ReqKind::Enq | ReqKind::Deq));
        let stack = self
            .requests
            .iter()
            .any(|r| matches!(r.kind, ReqKind::Push | ReqKind::Pop));
        match (queue, stack) {
            (true, true) => Err(CheckError::MixedKinds),
            (false, true) => Ok(BatchKind::Stack),
            _ => Ok(BatchKind::Queue),
        }
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }
}

/// Position of a request in the constructed order. Residual requests have
/// `group == 2^31`, `minor == 0` and a major component unique among them.
/// Locally combined stack pairs share the major component of a neighbouring
/// residual and sort as one contiguous block before or after it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Value {
    pub major: u64,
    pub group: u64,
    pub minor: u64,
}

impl Value {
    fn residual(major: u64) -> Value {
        Value {
            major,
            group: RESIDUAL,
            minor: 0,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.group == RESIDUAL {
            write!(f, "{}", self.major)
        } else {
            write!(f, "{}.{}.{}", self.major, self.group, self.minor)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValuedRequest {
    pub req: ReqRef,
    pub kind: ReqKind,
    pub value: Value,
    pub position: Option<u64>,
    pub ticket: Option<u64>,
    pub result: Option<Outcome>,
    /// The insert this removal returned, or the removal that returned this
    /// insert.
    pub matched_with: Option<ReqRef>,
    /// Batch processed by the anchor and run index inside it. `None` for
    /// locally combined stack pairs.
    pub anchor_run: Option<(BatchUid, usize)>,
}

struct Lineage<'a> {
    parent: HashMap<BatchUid, (BatchUid, Vec<u64>)>,
    anchors: HashMap<BatchUid, &'a AnchorRecord>,
}

impl Lineage<'_> {
    /// Lifts an offset inside run `run` of batch `uid` to its anchor value.
    fn lift(&self, mut uid: BatchUid, run: usize, mut off: u64) -> Result<(BatchUid, u64), CheckError> {
        loop {
            if let Some(a) = self.anchors.get(&uid) {
                let before: u64 = a.ops.iter().take(run).sum();
                return Ok((uid, a.c_before + before + off));
            }
            let (p, prefix) = self.parent.get(&uid).ok_or(CheckError::Unanchored(uid))?;
            off += prefix.get(run).copied().unwrap_or(0);
            uid = *p;
        }
    }
}

fn prefixes(parts: &[PartRecord]) -> Vec<Vec<u64>> {
    let width = parts.iter().map(|p| p.ops().len()).max().unwrap_or(0);
    let mut acc = vec![0u64; width];
    let mut out = Vec::with_capacity(parts.len());
    for p in parts {
        out.push(acc.clone());
        for (i, &k) in p.ops().iter().enumerate() {
            acc[i] += k;
        }
    }
    out
}

/// Rebuilds the total order the protocol realized. Returns the requests of
/// `history` sorted by value.
pub fn assign_values(sink: &Sink, history: &History) -> Result<Vec<ValuedRequest>, CheckError> {
    let mut lin = Lineage {
        parent: HashMap::new(),
        anchors: sink.anchors.iter().map(|a| (a.uid, a)).collect(),
    };
    for b in &sink.batches {
        for (part, prefix) in b.parts.iter().zip(prefixes(&b.parts)) {
            if let PartRecord::Child { uid, .. } = part {
                lin.parent.insert(*uid, (b.uid, prefix));
            }
        }
    }

    let mut values: HashMap<ReqRef, (Value, Option<(BatchUid, usize)>)> = HashMap::new();
    // Blocks of a stream without residual requests sit right after the last
    // request of the previous anchor batch, one after another.
    let mut detached = 0u64;
    for b in &sink.batches {
        for (part, prefix) in b.parts.iter().zip(prefixes(&b.parts)) {
            let PartRecord::Local(rec) = part else { continue };
            let mut residual: HashMap<ReqRef, u64> = HashMap::new();
            for (run, reqs) in rec.runs.iter().enumerate() {
                for (k, r) in reqs.iter().enumerate() {
                    let (root, v) = lin.lift(b.uid, run, prefix[run] + k as u64 + 1)?;
                    residual.insert(*r, v);
                    values.insert(*r, (Value::residual(v), Some((root, run))));
                }
            }
            for (after, block) in &rec.blocks {
                let (major, group) = match (*after, rec.residual_order.first()) {
                    (0, Some((_, first))) => (residual[first], 0),
                    (0, None) => {
                        detached += 1;
                        (lin.lift(b.uid, 0, 0)?.1, RESIDUAL + 1 + detached)
                    }
                    (a, _) => (residual[&rec.residual_order[a - 1].1], RESIDUAL + 1),
                };
                for (j, r) in block.iter().enumerate() {
                    let v = Value {
                        major,
                        group,
                        minor: j as u64,
                    };
                    values.insert(*r, (v, None));
                }
            }
        }
    }

    let meta: HashMap<ReqRef, _> = sink.meta.iter().map(|m| (m.req, m)).collect();
    let mut removed_by: HashMap<ReqRef, ReqRef> = HashMap::new();
    for r in &history.requests {
        if let Some(e) = r.matched_insert() {
            removed_by.insert(e, r.req);
        }
    }
    let mut out = Vec::with_capacity(history.len());
    for r in &history.requests {
        let &(value, anchor_run) = values.get(&r.req).ok_or(CheckError::LineageGap(r.req))?;
        let m = meta.get(&r.req);
        out.push(ValuedRequest {
            req: r.req,
            kind: r.kind,
            value,
            position: m.and_then(|m| m.position),
            ticket: m.and_then(|m| m.ticket),
            result: r.result,
            matched_with: if r.kind.is_insert() {
                removed_by.get(&r.req).copied()
            } else {
                r.matched_insert()
            },
            anchor_run,
        });
    }
    out.sort_by_key(|v| v.value);
    if let Some(w) = out.windows(2).find(|w| w[0].value == w[1].value) {
        return Err(CheckError::DuplicateValue(w[0].req, w[1].req));
    }
    Ok(out)
}

/// The clause of the consistency definition a violation breaks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Property {
    /// The matching itself is malformed: an unknown element or one removed
    /// twice.
    Matching,
    /// An insert precedes the removal that returns its element.
    InsertFirst,
    /// No bottom removal or unmatched insert where the definition forbids it.
    NoGaps,
    /// FIFO (queue) or LIFO (stack) order among matched pairs.
    Order,
    /// Per-process issue order.
    Local,
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Property::Matching => "matching",
            Property::InsertFirst => "P1",
            Property::NoGaps => "P2",
            Property::Order => "P3",
            Property::Local => "P4",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub property: Property,
    pub first: ReqRef,
    pub second: Option<ReqRef>,
    pub detail: String,
}

impl Violation {
    fn new(property: Property, first: ReqRef, second: Option<ReqRef>, detail: impl Into<String>) -> Self {
        Violation {
            property,
            first,
            second,
            detail: detail.into(),
        }
    }

    /// Machine-readable form: property, both requests as `pid:index`, detail.
    pub fn to_tsv(&self) -> String {
        let r = |x: ReqRef| format!("{}:{}", x.pid, x.index);
        format!(
            "{}\t{}\t{}\t{}",
            self.property,
            r(self.first),
            self.second.map_or("-".to_string(), r),
            self.detail
        )
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} violated at op({}, {})",
            self.property, self.first.pid, self.first.index
        )?;
        if let Some(s) = self.second {
            write!(f, " and op({}, {})", s.pid, s.index)?;
        }
        write!(f, ": {}", self.detail)
    }
}

/// Matched `(insert, removal)` pairs keyed by removal, or the first malformed
/// match.
pub fn matching(requests: &[Request]) -> Result<BTreeMap<ReqRef, ReqRef>, Violation> {
    let inserts: HashMap<ReqRef, ReqKind> = requests
        .iter()
        .filter(|r| r.kind.is_insert())
        .map(|r| (r.req, r.kind))
        .collect();
    let mut seen: HashMap<ReqRef, ReqRef> = HashMap::new();
    let mut m = BTreeMap::new();
    for r in requests {
        let Some(e) = r.matched_insert() else { continue };
        if !inserts.contains_key(&e) {
            return Err(Violation::new(
                Property::Matching,
                r.req,
                Some(e),
                "returned an element never inserted",
            ));
        }
        if let Some(prev) = seen.insert(e, r.req) {
            return Err(Violation::new(
                Property::Matching,
                r.req,
                Some(prev),
                "element returned twice",
            ));
        }
        m.insert(r.req, e);
    }
    Ok(m)
}

/// Checks the four consistency properties of `order` (sorted by value).
pub fn verify(kind: BatchKind, order: &[ValuedRequest]) -> Result<(), Violation> {
    let reqs: Vec<Request> = order
        .iter()
        .map(|v| Request {
            req: v.req,
            kind: v.kind,
            result: v.result,
            issued: 0,
            completed: 0,
        })
        .collect();
    let m = matching(&reqs)?;
    let rank: HashMap<ReqRef, usize> = order.iter().enumerate().map(|(i, v)| (v.req, i)).collect();

    // (1) insert before its removal.
    for (&d, &e) in &m {
        if rank[&e] > rank[&d] {
            return Err(Violation::new(
                Property::InsertFirst,
                e,
                Some(d),
                "removal ordered before its insert",
            ));
        }
    }

    // (4) per-process order.
    let mut last: HashMap<u64, ReqRef> = HashMap::new();
    for v in order {
        if let Some(prev) = last.insert(v.req.pid, v.req) {
            if prev.index > v.req.index {
                return Err(Violation::new(
                    Property::Local,
                    prev,
                    Some(v.req),
                    "later request ordered first",
                ));
            }
        }
    }

    let is_matched_insert = |v: &ValuedRequest| v.kind.is_insert() && v.matched_with.is_some();
    match kind {
        BatchKind::Queue => {
            // (2) no bottom dequeue inside a matched pair.
            let bottoms: Vec<usize> = order
                .iter()
                .enumerate()
                .filter(|(_, v)| v.result == Some(Outcome::Bottom))
                .map(|(i, _)| i)
                .collect();
            for (&d, &e) in &m {
                let (lo, hi) = (rank[&e], rank[&d]);
                let i = bottoms.partition_point(|&b| b <= lo);
                if i < bottoms.len() && bottoms[i] < hi {
                    let b = order[bottoms[i]].req;
                    return Err(Violation::new(
                        Property::NoGaps,
                        b,
                        Some(e),
                        "bottom dequeue inside a matched pair",
                    ));
                }
            }
            // (2) no unmatched enqueue before a matched one.
            if let Some(u) = order
                .iter()
                .position(|v| v.kind.is_insert() && v.matched_with.is_none())
            {
                if let Some(e) = order[u..].iter().find(|v| is_matched_insert(v)) {
                    return Err(Violation::new(
                        Property::NoGaps,
                        order[u].req,
                        Some(e.req),
                        "unmatched enqueue before a matched one",
                    ));
                }
            }
            // (3) dequeue order follows enqueue order.
            let mut prev: Option<(ReqRef, usize)> = None;
            for v in order.iter().filter(|v| is_matched_insert(v)) {
                let d = v.matched_with.unwrap();
                if let Some((pe, pd)) = prev {
                    if rank[&d] < pd {
                        return Err(Violation::new(Property::Order, pe, Some(v.req), "FIFO order crossed"));
                    }
                }
                prev = Some((v.req, rank[&d]));
            }
        }
        BatchKind::Stack => {
            // Open pushes must be closed innermost first; neither a bottom
            // pop nor an unmatched push may sit inside a matched pair.
            let mut open: Vec<&ValuedRequest> = Vec::new();
            let mut open_matched = 0usize;
            for v in order {
                if v.kind.is_insert() {
                    if v.matched_with.is_some() {
                        open_matched += 1;
                    }
                    open.push(v);
                } else if let Some(e) = v.matched_with {
                    let top = open.pop().expect("insert ranks checked above");
                    if top.req != e {
                        if top.matched_with.is_some() {
                            return Err(Violation::new(Property::Order, top.req, Some(e), "LIFO order crossed"));
                        }
                        return Err(Violation::new(
                            Property::NoGaps,
                            top.req,
                            Some(e),
                            "unmatched push inside a matched pair",
                        ));
                    }
                    open_matched -= 1;
                } else if v.result == Some(Outcome::Bottom) && open_matched > 0 {
                    let e = open.iter().rev().find(|o| o.matched_with.is_some()).unwrap();
                    return Err(Violation::new(
                        Property::NoGaps,
                        v.req,
                        Some(e.req),
                        "bottom pop inside a matched pair",
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Reads the definition literally on a complete order of `requests`.
fn satisfies(kind: BatchKind, order: &[Request], m: &BTreeMap<ReqRef, ReqRef>) -> bool {
    let pos: HashMap<ReqRef, usize> = order.iter().enumerate().map(|(i, r)| (r.req, i)).collect();
    let matched_inserts: std::collections::HashSet<ReqRef> = m.values().copied().collect();
    let pairs: Vec<(usize, usize)> = m.iter().map(|(d, e)| (pos[e], pos[d])).collect();
    let lt = |a: usize, b: usize| a < b;
    for &(e, d) in &pairs {
        if !lt(e, d) {
            return false;
        }
        for r in order {
            let p = pos[&r.req];
            let unmatched_insert = r.kind.is_insert() && !matched_inserts.contains(&r.req);
            let bottom = r.is_bottom();
            if bottom && lt(e, p) && lt(p, d) {
                return false;
            }
            let boxed = match kind {
                BatchKind::Queue => lt(p, e) && lt(e, d),
                BatchKind::Stack => lt(e, p) && lt(p, d),
            };
            if unmatched_insert && boxed {
                return false;
            }
        }
    }
    for &(e1, d1) in &pairs {
        for &(e2, d2) in &pairs {
            if (e1, d1) == (e2, d2) {
                continue;
            }
            let bad = match kind {
                BatchKind::Queue => lt(e1, e2) && lt(e2, d2) && lt(d2, d1) || lt(e2, e1) && lt(e1, d1) && lt(d1, d2),
                BatchKind::Stack => lt(e1, e2) && lt(e2, d1) && lt(d1, d2),
            };
            if bad {
                return false;
            }
        }
    }
    order.iter().all(|a| {
        order
            .iter()
            .all(|b| a.req.pid != b.req.pid || a.req.index >= b.req.index || pos[&a.req] < pos[&b.req])
    })
}

/// Whether any interleaving of the per-process sequences satisfies the
/// definition. Exponential; meant for histories of about ten requests.
pub fn brute_force_exists(kind: BatchKind, history: &History) -> bool {
    let Ok(m) = matching(&history.requests) else {
        return false;
    };
    let mut procs: BTreeMap<u64, Vec<Request>> = BTreeMap::new();
    for r in &history.requests {
        procs.entry(r.req.pid).or_default().push(*r);
    }
    let seqs: Vec<Vec<Request>> = procs
        .into_values()
        .map(|mut v| {
            v.sort_by_key(|r| r.req.index);
            v
        })
        .collect();
    let insert_of: HashMap<ReqRef, ReqRef> = m.iter().map(|(d, e)| (*d, *e)).collect();
    let removal_of: HashMap<ReqRef, ReqRef> = m.iter().map(|(d, e)| (*e, *d)).collect();
    let mut s = Search {
        kind,
        seqs: &seqs,
        m: &m,
        insert_of,
        removal_of,
        next: vec![0; seqs.len()],
        placed: HashMap::new(),
        order: Vec::new(),
    };
    s.dfs()
}

struct Search<'a> {
    kind: BatchKind,
    seqs: &'a [Vec<Request>],
    m: &'a BTreeMap<ReqRef, ReqRef>,
    insert_of: HashMap<ReqRef, ReqRef>,
    removal_of: HashMap<ReqRef, ReqRef>,
    next: Vec<usize>,
    placed: HashMap<ReqRef, usize>,
    order: Vec<Request>,
}

impl Search<'_> {
    fn dfs(&mut self) -> bool {
        if self.order.len() == self.seqs.iter().map(Vec::len).sum::<usize>() {
            return satisfies(self.kind, &self.order, self.m);
        }
        for p in 0..self.seqs.len() {
            let Some(&r) = self.seqs[p].get(self.next[p]) else {
                continue;
            };
            if !self.may_place(&r) {
                continue;
            }
            self.placed.insert(r.req, self.order.len());
            self.order.push(r);
            self.next[p] += 1;
            if self.dfs() {
                return true;
            }
            self.next[p] -= 1;
            self.order.pop();
            self.placed.remove(&r.req);
        }
        false
    }

    /// Pair `(insert, removal)` is open when the insert is placed and the
    /// removal is not.
    fn open_pairs(&self) -> impl Iterator<Item = (ReqRef, ReqRef)> + '_ {
        self.m
            .iter()
            .filter(|(d, e)| self.placed.contains_key(e) && !self.placed.contains_key(d))
            .map(|(d, e)| (*e, *d))
    }

    /// Necessary conditions for appending `r`; the leaf check is exact.
    fn may_place(&self, r: &Request) -> bool {
        let at = |x: &ReqRef| self.placed.get(x).copied().unwrap_or(usize::MAX);
        if r.is_bottom() {
            return self.open_pairs().next().is_none();
        }
        if r.kind.is_insert() {
            let matched = self.removal_of.contains_key(&r.req);
            return match (self.kind, matched) {
                (BatchKind::Queue, true) => !self
                    .order
                    .iter()
                    .any(|o| o.kind.is_insert() && !self.removal_of.contains_key(&o.req)),
                (BatchKind::Stack, false) => self.open_pairs().next().is_none(),
                _ => true,
            };
        }
        let Some(e) = self.insert_of.get(&r.req) else {
            return true;
        };
        let pe = at(e);
        if pe == usize::MAX {
            return false;
        }
        match self.kind {
            BatchKind::Queue => !self.open_pairs().any(|(e2, _)| at(&e2) < pe),
            BatchKind::Stack => !self.open_pairs().any(|(e2, d2)| d2 != r.req && at(&e2) > pe),
        }
    }
}

/// A failed protocol lemma on a recorded run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LemmaViolation {
    pub lemma: &'static str,
    pub first: ReqRef,
    pub second: Option<ReqRef>,
}

impl fmt::Display for LemmaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} fails at {:?}", self.lemma, self.first)?;
        if let Some(s) = self.second {
            write!(f, " / {s:?}")?;
        }
        Ok(())
    }
}

/// Checks the position lemmas of the queue protocol on a valued order.
/// Stack orders are not covered and yield no violations.
pub fn check_queue_lemmas(sink: &Sink, order: &[ValuedRequest]) -> Vec<LemmaViolation> {
    let mut out = Vec::new();
    if order.iter().any(|v| !matches!(v.kind, ReqKind::Enq | ReqKind::Deq)) {
        return out;
    }
    let v = |lemma, first, second| LemmaViolation { lemma, first, second };

    // Dequeue and enqueue positions grow with value.
    for (kind, lemma) in [(ReqKind::Deq, "dequeue-monotone"), (ReqKind::Enq, "enqueue-monotone")] {
        let mut prev: Option<(ReqRef, u64)> = None;
        for r in order.iter().filter(|r| r.kind == kind) {
            let Some(p) = r.position else { continue };
            if let Some((q, pp)) = prev {
                if pp >= p {
                    out.push(v(lemma, q, Some(r.req)));
                }
            }
            prev = Some((r.req, p));
        }
    }

    // Every dequeue valued before an enqueue has a smaller position.
    let mut max_deq: Option<(ReqRef, u64)> = None;
    for r in order {
        match (r.kind, r.position) {
            (ReqKind::Deq, Some(p)) if max_deq.is_none_or(|(_, m)| p > m) => max_deq = Some((r.req, p)),
            (ReqKind::Enq, Some(p)) => {
                if let Some((d, m)) = max_deq {
                    if m >= p {
                        out.push(v("cross-position", d, Some(r.req)));
                    }
                }
            }
            _ => {}
        }
    }

    // Within one anchor run, bottom is a suffix and exhausts the queue.
    let anchors: HashMap<BatchUid, &AnchorRecord> = sink.anchors.iter().map(|a| (a.uid, a)).collect();
    let mut runs: BTreeMap<(BatchUid, usize), Vec<&ValuedRequest>> = BTreeMap::new();
    for r in order.iter().filter(|r| r.kind == ReqKind::Deq) {
        if let Some(k) = r.anchor_run {
            runs.entry(k).or_default().push(r);
        }
    }
    for ((uid, run), deqs) in &runs {
        if let Some(i) = deqs.iter().position(|d| d.result == Some(Outcome::Bottom)) {
            if let Some(late) = deqs[i..].iter().find(|d| d.result != Some(Outcome::Bottom)) {
                out.push(v("bottom-suffix", deqs[i].req, Some(late.req)));
            }
            let (first, last) = anchors[uid].after_run[*run];
            if first <= last {
                out.push(v("bottom-exhausts", deqs[i].req, None));
            }
        }
    }

    // No dequeue after a bottom returns an element enqueued before it.
    let rank: HashMap<ReqRef, usize> = order.iter().enumerate().map(|(i, r)| (r.req, i)).collect();
    let bottoms: Vec<usize> = order
        .iter()
        .enumerate()
        .filter(|(_, r)| r.kind == ReqKind::Deq && r.result == Some(Outcome::Bottom))
        .map(|(i, _)| i)
        .collect();
    for (i, r) in order.iter().enumerate() {
        let (ReqKind::Deq, Some(e)) = (r.kind, r.matched_with) else {
            continue;
        };
        let Some(&pe) = rank.get(&e) else { continue };
        let j = bottoms.partition_point(|&b| b <= pe);
        if j < bottoms.len() && bottoms[j] < i {
            out.push(v("bottom-stale", order[bottoms[j]].req, Some(r.req)));
        }
    }

    // Every enqueue below a dequeue's position was taken by an earlier
    // dequeue.
    let mut enqs: Vec<(u64, usize)> = order
        .iter()
        .filter(|r| r.kind == ReqKind::Enq)
        .filter_map(|r| {
            let p = r.position?;
            let taken = r.matched_with.and_then(|d| rank.get(&d).copied()).unwrap_or(usize::MAX);
            Some((p, taken))
        })
        .collect();
    enqs.sort_unstable();
    let mut prefix_max = Vec::with_capacity(enqs.len());
    let mut acc = 0usize;
    for &(_, t) in &enqs {
        acc = acc.max(t);
        prefix_max.push(acc);
    }
    for (i, r) in order.iter().enumerate() {
        let (ReqKind::Deq, Some(p)) = (r.kind, r.position) else {
            continue;
        };
        let below = enqs.partition_point(|&(q, _)| q < p);
        if below > 0 && prefix_max[below - 1] >= i {
            out.push(v("dequeue-lowest", r.req, None));
        }
    }
    out
}
