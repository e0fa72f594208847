//! DHT storage at the owner of `K(position)`, plus routing of put and get.
//!
//! A get that arrives before its matching put is parked at the owner and
//! answered when the put lands. Stack gets only take elements whose ticket
//! does not exceed the bound fixed at assignment time.

use crate::kernel::Outcome;
use crate::label::Label;
use crate::node::{Node, NodeCx};
use crate::protocol::{DhtOp, Msg, ReqRef, StoredElement};
use crate::topology::{next_hop, Hop, RouteState};

impl Node {
    pub(crate) fn route_dht(&mut self, op: DhtOp, key: Label, route: RouteState, cx: &mut NodeCx<'_>) {
        match next_hop(&self.me, &self.nb, key, route) {
            Hop::Arrived => {
                cx.env.sink.borrow_mut().dht_hops.push(route.hops);
                self.apply(op, cx);
            }
            Hop::Forward(next, st) => {
                cx.send(next, Msg::Dht { op, key, route: st });
            }
        }
    }

    fn apply(&mut self, op: DhtOp, cx: &mut NodeCx<'_>) {
        match op {
            DhtOp::Put { item, initiator, req } => {
                let waiting = self.parked.get_mut(&item.position).and_then(|gets| {
                    let i = gets.iter().position(|g| match g {
                        DhtOp::Get { ticket_bound, .. } => ticket_bound.is_none_or(|b| item.ticket <= b),
                        DhtOp::Put { .. } => false,
                    })?;
                    Some(gets.remove(i))
                });
                match waiting {
                    Some(DhtOp::Get {
                        initiator: gi, req: gr, ..
                    }) => {
                        self.reply(
                            gi,
                            Msg::GetReply {
                                req: gr,
                                element: Some(item.element),
                            },
                            cx,
                        );
                    }
                    _ => self.store.entry(item.position).or_default().push(item),
                }
                self.parked.retain(|_, v| !v.is_empty());
                self.reply(initiator, Msg::PutDone { req }, cx);
            }
            DhtOp::Get {
                position,
                ticket_bound,
                initiator,
                req,
            } => match self.take(position, ticket_bound) {
                Some(item) => self.reply(
                    initiator,
                    Msg::GetReply {
                        req,
                        element: Some(item.element),
                    },
                    cx,
                ),
                None => self.parked.entry(position).or_default().push(op),
            },
        }
    }

    /// Removes the element at `position` with the largest ticket not above
    /// `bound` (any element when unbounded).
    fn take(&mut self, position: u64, bound: Option<u64>) -> Option<StoredElement> {
        let items = self.store.get_mut(&position)?;
        let i = items
            .iter()
            .enumerate()
            .filter(|(_, e)| bound.is_none_or(|b| e.ticket <= b))
            .max_by_key(|(_, e)| e.ticket)
            .map(|(i, _)| i)?;
        let item = items.swap_remove(i);
        if items.is_empty() {
            self.store.remove(&position);
        }
        Some(item)
    }

    fn reply(&mut self, to: crate::label::VirtualNodeId, msg: Msg, cx: &mut NodeCx<'_>) {
        if to == self.me.id {
            match msg {
                Msg::PutDone { req } => self.on_put_done(req, cx),
                Msg::GetReply { req, element } => self.on_get_reply(req, element, cx),
                _ => unreachable!(),
            }
        } else {
            cx.send(to, msg);
        }
    }

    pub(crate) fn on_put_done(&mut self, req: ReqRef, cx: &mut NodeCx<'_>) {
        let a = self.awaiting.remove(&req).expect("put reply for unknown request");
        self.finish(a.origin, a.p, None, cx);
    }

    pub(crate) fn on_get_reply(&mut self, req: ReqRef, element: Option<u64>, cx: &mut NodeCx<'_>) {
        let a = self.awaiting.remove(&req).expect("get reply for unknown request");
        let outcome = element.map_or(Outcome::Bottom, Outcome::Element);
        self.finish(a.origin, a.p, Some(outcome), cx);
    }

    /// Answers every parked get with bottom. Only used to terminate runs whose
    /// ordering guarantees were deliberately switched off.
    pub fn flush_parked(&mut self, cx: &mut NodeCx<'_>) {
        for (_, gets) in std::mem::take(&mut self.parked) {
            for g in gets {
                if let DhtOp::Get { initiator, req, .. } = g {
                    self.reply(initiator, Msg::GetReply { req, element: None }, cx);
                }
            }
        }
    }

    /// Number of stored elements.
    pub fn load(&self) -> usize {
        self.store.values().map(Vec::len).sum()
    }

    pub fn parked_gets(&self) -> usize {
        self.parked.values().map(Vec::len).sum()
    }
}
