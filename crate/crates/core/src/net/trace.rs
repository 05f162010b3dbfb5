//! Ordered record of everything the fabric did, with a bit-exact text
//! export for golden-file comparisons.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::frame::{Frame, FrameKind, Link};
use crate::types::MacAddr;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceEntry {
    Frame { frame: Frame, delivered: bool, action: String },
    Event { seq: u64, actor: String, kind: String, detail: String },
}

impl TraceEntry {
    pub fn seq(&self) -> u64 {
        match self {
            TraceEntry::Frame { frame, .. } => frame.seq,
            TraceEntry::Event { seq, .. } => *seq,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
    pub truncated: bool,
}

fn clean(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

impl Trace {
    pub fn frames(&self) -> impl Iterator<Item = (&Frame, bool, &str)> {
        self.entries.iter().filter_map(|e| match e {
            TraceEntry::Frame { frame, delivered, action } => Some((frame, *delivered, action.as_str())),
            TraceEntry::Event { .. } => None,
        })
    }

    pub fn events(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.entries.iter().filter_map(|e| match e {
            TraceEntry::Event { actor, kind, detail, .. } => Some((actor.as_str(), kind.as_str(), detail.as_str())),
            TraceEntry::Frame { .. } => None,
        })
    }

    pub fn has_event(&self, actor: &str, kind: &str) -> bool {
        self.events().any(|(a, k, _)| a == actor && k == kind)
    }

    /// One line per entry:
    /// `seq  link  src  dst  kind  body-hex  action`, tab-separated.
    /// Events use `event` as link, the actor as src, `-` as dst, and their
    /// detail text in the body column.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            match e {
                TraceEntry::Frame { frame, action, .. } => {
                    let _ = writeln!(
                        out,
                        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                        frame.seq,
                        frame.link,
                        frame.src,
                        frame.dst,
                        frame.kind,
                        hex::encode(&frame.body),
                        action
                    );
                }
                TraceEntry::Event { seq, actor, kind, detail } => {
                    let _ = writeln!(out, "{seq}\tevent\t{}\t-\t{}\t{}\t-", clean(actor), clean(kind), clean(detail));
                }
            }
        }
        if self.truncated {
            out.push_str("# truncated\n");
        }
        out
    }

    /// True if any frame body (delivered or not) contains `needle`.
    pub fn contains_bytes(&self, needle: &[u8]) -> bool {
        self.frames().any(|(f, _, _)| f.contains(needle))
    }
}

/// Projection predicate for [`record_transcript`]. Unset fields match all.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TranscriptFilter {
    pub kind: Option<FrameKind>,
    pub link: Option<Link>,
    /// Frames exchanged between these two addresses, in either direction.
    pub between: Option<(MacAddr, MacAddr)>,
    pub delivered_only: bool,
}

impl TranscriptFilter {
    pub fn matches(&self, frame: &Frame, delivered: bool) -> bool {
        self.kind.is_none_or(|k| frame.kind == k)
            && self.link.as_ref().is_none_or(|l| &frame.link == l)
            && self
                .between
                .is_none_or(|(a, b)| (frame.src == a && frame.dst == b) || (frame.src == b && frame.dst == a))
            && (delivered || !self.delivered_only)
    }
}

pub fn record_transcript(trace: &Trace, filter: &TranscriptFilter) -> Vec<Frame> {
    trace.frames().filter(|(f, d, _)| filter.matches(f, *d)).map(|(f, _, _)| f.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(seq: u64, kind: FrameKind, src: u8, dst: u8) -> Frame {
        let mut f = Frame::new(Link::DomainAp, MacAddr([src; 6]), MacAddr([dst; 6]), kind, vec![seq as u8, 0xab]);
        f.seq = seq;
        f
    }

    #[test]
    fn empty_trace_projects_to_nothing() {
        assert!(record_transcript(&Trace::default(), &TranscriptFilter::default()).is_empty());
    }

    #[test]
    fn projection_keeps_order() {
        let mut t = Trace::default();
        t.entries.push(TraceEntry::Frame { frame: frame(1, FrameKind::PakeBlob, 1, 2), delivered: true, action: "pass".into() });
        t.entries.push(TraceEntry::Event { seq: 2, actor: "g".into(), kind: "k".into(), detail: "d\te".into() });
        t.entries.push(TraceEntry::Frame { frame: frame(3, FrameKind::Command, 1, 2), delivered: true, action: "pass".into() });
        t.entries.push(TraceEntry::Frame { frame: frame(4, FrameKind::PakeBlob, 2, 1), delivered: false, action: "drop:x".into() });
        t.entries.push(TraceEntry::Frame { frame: frame(5, FrameKind::PakeBlob, 3, 1), delivered: true, action: "pass".into() });
        let f = TranscriptFilter {
            kind: Some(FrameKind::PakeBlob),
            between: Some((MacAddr([1; 6]), MacAddr([2; 6]))),
            ..Default::default()
        };
        let seqs: Vec<u64> = record_transcript(&t, &f).iter().map(|f| f.seq).collect();
        assert_eq!(seqs, vec![1, 4]);
        let delivered = TranscriptFilter { delivered_only: true, ..f };
        assert_eq!(record_transcript(&t, &delivered).len(), 1);
        let text = t.export();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().all(|l| l.split('\t').count() == 7));
        assert!(text.starts_with("1\tdomain-ap\t01:01:01:01:01:01\t02:02:02:02:02:02\tpake\t01ab\tpass\n"));
    }
}
