//! The simulated coordination network and its privacy audit.
//!
//! Agents never touch shared state: everything one agent learns from another
//! arrives as a [`Message`], and every message is serialized to its JSON wire
//! form and recorded in a [`BusLog`] as it is sent. The payload schema can
//! carry ids, a round number, prices, and power quantities — nothing else —
//! so cost coefficients and demands cannot cross agent boundaries by
//! construction. [`audit_privacy`] re-checks that claim dynamically against
//! the recorded wire bytes rather than trusting the type system.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// One directed purchase entry in an exchange report: `kw` of power bought
/// from `seller` (a 1-based MG id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Purchase {
    pub seller: usize,
    pub kw: f64,
}

/// What a message may carry. Exactly one variant per message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    /// The sender's current selling price [$/kW].
    PriceAnnouncement { lambda: f64 },
    /// The sender's optimal purchases from every other MG [kW] and the total
    /// power it offered for sale [kW], at the announced prices.
    ExchangeReport {
        purchases: Vec<Purchase>,
        eps_offer: f64,
    },
}

/// A single bus message. `sender` is the 1-based MG id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub sender: usize,
    pub round: usize,
    pub payload: Payload,
}

impl Message {
    /// The JSON wire form, as recorded by the bus tap.
    pub fn to_wire(&self) -> String {
        serde_json::to_string(self).expect("message serializes")
    }
}

/// Recorded wire traffic of one run: every serialized message, in send order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BusLog {
    lines: Vec<String>,
}

impl BusLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    /// Appends a raw wire line without going through [`Message`]. Exists so
    /// tests can inject malformed traffic at the audit.
    pub fn push_raw(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }
}

/// The in-process network: records every message on the wire tap and hands
/// back parsed messages for delivery within the round.
#[derive(Debug, Default)]
pub struct MessageBus {
    log: BusLog,
}

impl MessageBus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records and "transmits" a message. Returns it for delivery.
    pub fn send(&mut self, msg: Message) -> Message {
        self.log.push_raw(msg.to_wire());
        msg
    }

    pub fn log(&self) -> &BusLog {
        &self.log
    }

    pub fn into_log(self) -> BusLog {
        self.log
    }
}

/// Result of walking a bus log field by field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrivacyAudit {
    pub message_count: usize,
    /// Occurrences of any field outside the allowed wire schema (plus one
    /// per unparseable line). Zero on every honest run.
    pub leak_count: usize,
    /// The offending field names, in encounter order.
    pub leaked_fields: Vec<String>,
    /// Every field name observed, grouped by payload type.
    pub fields_by_type: BTreeMap<String, BTreeSet<String>>,
}

const ALLOWED_FIELDS: [&str; 9] = [
    "sender",
    "round",
    "payload",
    "price_announcement",
    "exchange_report",
    "lambda",
    "purchases",
    "seller",
    "kw",
];

fn collect_keys(value: &serde_json::Value, keys: &mut Vec<String>) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                keys.push(k.clone());
                collect_keys(v, keys);
            }
        }
        serde_json::Value::Array(items) => {
            for v in items {
                collect_keys(v, keys);
            }
        }
        _ => {}
    }
}

/// Walks every recorded wire line and counts fields that fall outside the
/// allowed schema `{sender, round, payload, price_announcement,
/// exchange_report, lambda, purchases, seller, kw, eps_offer}`.
pub fn audit_privacy(log: &BusLog) -> PrivacyAudit {
    let allowed: BTreeSet<&str> = ALLOWED_FIELDS.iter().copied().chain(["eps_offer"]).collect();
    let mut leak_count = 0;
    let mut leaked_fields = Vec::new();
    let mut fields_by_type: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for line in log.lines() {
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(_) => {
                leak_count += 1;
                leaked_fields.push("<unparseable line>".to_owned());
                continue;
            }
        };
        let msg_type = value
            .get("payload")
            .and_then(|p| p.as_object())
            .and_then(|o| o.keys().next().cloned())
            .unwrap_or_else(|| "<unknown>".to_owned());
        let mut keys = Vec::new();
        collect_keys(&value, &mut keys);
        let seen = fields_by_type.entry(msg_type).or_default();
        for key in keys {
            seen.insert(key.clone());
            if !allowed.contains(key.as_str()) {
                leak_count += 1;
                leaked_fields.push(key);
            }
        }
    }
    PrivacyAudit {
        message_count: log.len(),
        leak_count,
        leaked_fields,
        fields_by_type,
    }
}
