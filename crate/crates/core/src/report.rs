//! Violation reports: claims (unprovable assertions) and proofs
//! (self-certifying signed evidence).

use std::fmt;

use serde::Serialize;

use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};
use crate::crypto::{HashKind, PublicKey};
use crate::ledger::Block;
use crate::outqueue::{PartialTree, QueueSummary};
use crate::owac::{Confirmation, OwacMessage};
use crate::proposal::SignedProposal;

/// Every rule a report can name. The first twelve are the channel rules;
/// the rest come from queue audits and proposal verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    InvalidSignature,
    InvalidConnectionId,
    ConfirmationOutOfSequence,
    CannotConfirmUnsent,
    IncorrectHashConfirmation,
    AcknowledgementOutOfSequence,
    InvalidAcknowledgement,
    SkippedMessage,
    DuplicateMessage,
    ConflictingMessages,
    TooFarAhead,
    RulesViolated,
    LostTx,
    ReorderedTx,
    BadPrefix,
    BadOrdering,
    /// A receiver stopped confirming while the sender had data outstanding.
    ChannelStall,
}

impl Rule {
    pub const ALL: [Rule; 17] = [
        Rule::InvalidSignature,
        Rule::InvalidConnectionId,
        Rule::ConfirmationOutOfSequence,
        Rule::CannotConfirmUnsent,
        Rule::IncorrectHashConfirmation,
        Rule::AcknowledgementOutOfSequence,
        Rule::InvalidAcknowledgement,
        Rule::SkippedMessage,
        Rule::DuplicateMessage,
        Rule::ConflictingMessages,
        Rule::TooFarAhead,
        Rule::RulesViolated,
        Rule::LostTx,
        Rule::ReorderedTx,
        Rule::BadPrefix,
        Rule::BadOrdering,
        Rule::ChannelStall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::InvalidSignature => "invalid signature",
            Rule::InvalidConnectionId => "invalid connection ID",
            Rule::ConfirmationOutOfSequence => "confirmation out of sequence",
            Rule::CannotConfirmUnsent => "cannot confirm unsent values",
            Rule::IncorrectHashConfirmation => "incorrect hash confirmation",
            Rule::AcknowledgementOutOfSequence => "acknowledgement out of sequence",
            Rule::InvalidAcknowledgement => "invalid acknowledgement",
            Rule::SkippedMessage => "skipped message",
            Rule::DuplicateMessage => "duplicate message",
            Rule::ConflictingMessages => "conflicting messages",
            Rule::TooFarAhead => "too far ahead",
            Rule::RulesViolated => "rules violated",
            Rule::LostTx => "LostTx",
            Rule::ReorderedTx => "ReorderedTx",
            Rule::BadPrefix => "BadPrefix",
            Rule::BadOrdering => "BadOrdering",
            Rule::ChannelStall => "channel stall",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }

    fn code(self) -> u8 {
        Self::ALL.iter().position(|r| *r == self).unwrap() as u8
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReportKind {
    Claim,
    Proof,
}

impl ReportKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ReportKind::Claim => "claim",
            ReportKind::Proof => "proof",
        }
    }
}

/// One signed artifact supporting a report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Evidence {
    Message(OwacMessage),
    Confirmation(Confirmation),
    Summary(QueueSummary),
    /// Disclosure of the queue behind the summary that precedes it.
    Disclosure(PartialTree),
    Block(Block),
    Proposal(SignedProposal),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViolationReport {
    pub kind: ReportKind,
    pub rule: Rule,
    pub reporter: PublicKey,
    pub accused: PublicKey,
    pub evidence: Vec<Evidence>,
}

impl ViolationReport {
    pub fn claim(rule: Rule, reporter: PublicKey, accused: PublicKey, evidence: Vec<Evidence>) -> Self {
        Self {
            kind: ReportKind::Claim,
            rule,
            reporter,
            accused,
            evidence,
        }
    }

    pub fn proof(rule: Rule, reporter: PublicKey, accused: PublicKey, evidence: Vec<Evidence>) -> Self {
        Self {
            kind: ReportKind::Proof,
            rule,
            reporter,
            accused,
            evidence,
        }
    }

    pub fn is_proof(&self) -> bool {
        self.kind == ReportKind::Proof
    }

    pub fn evidence_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.list(&self.evidence);
        w.finish()
    }

    pub fn evidence_digest(&self, kind: HashKind) -> crate::crypto::Digest {
        kind.hash(&self.evidence_bytes())
    }

    /// Flat record for line-delimited report output.
    pub fn record(&self, kind: HashKind) -> ReportRecord {
        ReportRecord {
            kind: self.kind.as_str(),
            rule: self.rule.as_str(),
            reporter: self.reporter.to_hex(),
            accused: self.accused.to_hex(),
            evidence: self.evidence_digest(kind).to_hex(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportRecord {
    pub kind: &'static str,
    pub rule: &'static str,
    pub reporter: String,
    pub accused: String,
    pub evidence: String,
}

impl Encode for Evidence {
    fn encode_to(&self, w: &mut Writer) {
        match self {
            Evidence::Message(m) => w.u8(0).value(m),
            Evidence::Confirmation(c) => w.u8(1).value(c),
            Evidence::Summary(s) => w.u8(2).value(s),
            Evidence::Disclosure(d) => w.u8(3).value(d),
            Evidence::Block(b) => w.u8(4).value(b),
            Evidence::Proposal(p) => w.u8(5).value(p),
        };
    }
}

impl Decode for Evidence {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match r.u8()? {
            0 => Evidence::Message(r.value()?),
            1 => Evidence::Confirmation(r.value()?),
            2 => Evidence::Summary(r.value()?),
            3 => Evidence::Disclosure(r.value()?),
            4 => Evidence::Block(r.value()?),
            5 => Evidence::Proposal(r.value()?),
            tag => return Err(DecodeError::BadTag { what: "evidence", tag }),
        })
    }
}

impl Encode for ViolationReport {
    fn encode_to(&self, w: &mut Writer) {
        w.u8(self.kind as u8)
            .u8(self.rule.code())
            .value(&self.reporter)
            .value(&self.accused)
            .list(&self.evidence);
    }
}

impl Decode for ViolationReport {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let kind = match r.u8()? {
            0 => ReportKind::Claim,
            1 => ReportKind::Proof,
            tag => return Err(DecodeError::BadTag { what: "report kind", tag }),
        };
        let tag = r.u8()?;
        let rule = *Rule::ALL
            .get(tag as usize)
            .ok_or(DecodeError::BadTag { what: "rule", tag })?;
        Ok(Self {
            kind,
            rule,
            reporter: r.value()?,
            accused: r.value()?,
            evidence: r.list()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_names_round_trip() {
        for r in Rule::ALL {
            assert_eq!(Rule::from_name(r.as_str()), Some(r));
        }
        assert_eq!(Rule::ALL.len(), 17);
    }

    #[test]
    fn report_codec_round_trip() {
        let a = PublicKey([1; 32]);
        let b = PublicKey([2; 32]);
        let rep = ViolationReport::claim(Rule::SkippedMessage, a, b, vec![]);
        assert_eq!(ViolationReport::decode(&rep.encode()).unwrap(), rep);
    }
}
