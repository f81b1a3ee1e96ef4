//! Narrative themes: entity-name pools and per-gate rule templates.
//!
//! Each theme owns a disjoint name pool built as modifier × base × suffix,
//! a fixed target-entity name, and status words for observed facts. Rule
//! phrasings keep one recognizable connective per gate across themes
//! ("AND ... are present", "OR", "contradicts", "ruled out (False) only if
//! both ... are True", "is absent").

use super::BoolGate;

pub struct Theme {
    pub name: &'static str,
    pub target_name: &'static str,
    pub observed_tag: &'static str,
    pub true_status: &'static str,
    pub false_status: &'static str,
    bases: &'static [&'static str],
    modifiers: &'static [&'static str],
    suffixes: &'static [&'static str],
}

impl Theme {
    pub fn pool_size(&self) -> usize {
        self.bases.len() * self.modifiers.len() * self.suffixes.len()
    }

    /// The idx-th entity name of the pool (idx < pool_size).
    pub fn entity_name(&self, idx: usize) -> String {
        let nb = self.bases.len();
        let nm = self.modifiers.len();
        let b = idx % nb;
        let m = (idx / nb) % nm;
        let s = idx / (nb * nm);
        format!("{}{}{}", self.modifiers[m], self.bases[b], self.suffixes[s])
    }

    pub fn observed_line(&self, name: &str, value: bool) -> String {
        let status = if value { self.true_status } else { self.false_status };
        format!("[{}] '{}': {}.", self.observed_tag, name, status)
    }

    pub fn rule_line(&self, gate: BoolGate, out: &str, inputs: &[&str]) -> String {
        match gate {
            BoolGate::And => format!(
                "- Protocol: Confirm '{}' only if '{}' AND '{}' are present.",
                out, inputs[0], inputs[1]
            ),
            BoolGate::Or => format!(
                "- {}: Suspect '{}' if {} shows '{}' OR '{}'.",
                self.or_prefix(),
                out,
                self.subject(),
                inputs[0],
                inputs[1]
            ),
            BoolGate::Xor => format!(
                "- Differential: '{}' is indicated if '{}' contradicts '{}'.",
                out, inputs[0], inputs[1]
            ),
            BoolGate::Nand => format!(
                "- Exclusion: '{}' is ruled out (False) only if both '{}' and '{}' are True.",
                out, inputs[0], inputs[1]
            ),
            BoolGate::Not => format!(
                "- Inversion: '{}' is present when '{}' is absent.",
                out, inputs[0]
            ),
        }
    }

    fn or_prefix(&self) -> &'static str {
        match self.name {
            "Medical Diagnosis" => "Symptom Check",
            "Logistics Control" => "Dispatch Check",
            _ => "Signal Check",
        }
    }

    fn subject(&self) -> &'static str {
        match self.name {
            "Medical Diagnosis" => "patient",
            "Logistics Control" => "shipment",
            _ => "session",
        }
    }
}

pub const MEDICAL: Theme = Theme {
    name: "Medical Diagnosis",
    target_name: "Urgent Surgery Needed",
    observed_tag: "Lab Report",
    true_status: "DETECTED/HIGH",
    false_status: "NOT DETECTED/NORMAL",
    bases: &[
        "Viral Load",
        "Genetic Marker",
        "Blood Test A",
        "Blood Test B",
        "Enzyme Level",
        "Immune Response",
        "Cell Regeneration",
        "Neural Activity",
        "Patient Fever",
        "MRI Scan",
        "Antibody Count",
        "Protein Synthesis",
        "Tissue Sample",
        "Bone Density",
        "Cardiac Rhythm",
        "Oxygen Saturation",
    ],
    modifiers: &[
        "",
        "Critical ",
        "Secondary ",
        "Elevated ",
        "Suppressed ",
        "Routine ",
        "Abnormal ",
        "Latent ",
    ],
    suffixes: &["", " Type-1", " Type-2", " Variant-X", " Variant-Z"],
};

pub const LOGISTICS: Theme = Theme {
    name: "Logistics Control",
    target_name: "Expedited Dispatch Required",
    observed_tag: "Sensor Log",
    true_status: "CONFIRMED/ACTIVE",
    false_status: "NOT CONFIRMED/IDLE",
    bases: &[
        "Cargo Manifest",
        "Customs Clearance",
        "Fuel Reserve",
        "Route Beacon",
        "Container Seal",
        "Dock Sensor",
        "Transit Permit",
        "Weight Scan",
        "Cold Chain",
        "Driver Log",
        "Port Congestion",
        "Warehouse Slot",
        "Pallet Tag",
        "Convoy Escort",
        "Border Check",
        "Freight Quota",
    ],
    modifiers: &[
        "",
        "Primary ",
        "Backup ",
        "Expired ",
        "Verified ",
        "Delayed ",
        "Flagged ",
        "Remote ",
    ],
    suffixes: &["", " Zone-1", " Zone-2", " Lane-X", " Lane-Z"],
};

pub const ACCESS_CONTROL: Theme = Theme {
    name: "Access Control",
    target_name: "Root Access Granted",
    observed_tag: "Access Log",
    true_status: "PRESENT/VALID",
    false_status: "NOT PRESENT/INVALID",
    bases: &[
        "Badge Scan",
        "Retina Match",
        "PIN Entry",
        "Security Token",
        "Guard Approval",
        "Camera Feed",
        "Door Sensor",
        "Visitor Pass",
        "Clearance Record",
        "Audit Flag",
        "Biometric Hash",
        "Session Key",
        "Vault Timer",
        "Alarm Circuit",
        "Proxy Grant",
        "Shift Roster",
    ],
    modifiers: &[
        "",
        "Master ",
        "Temporary ",
        "Revoked ",
        "Escalated ",
        "Standby ",
        "External ",
        "Shadow ",
    ],
    suffixes: &["", " Level-1", " Level-2", " Node-X", " Node-Z"],
};

pub const ALL_THEMES: [&Theme; 3] = [&MEDICAL, &LOGISTICS, &ACCESS_CONTROL];

pub fn theme_by_name(name: &str) -> Option<&'static Theme> {
    ALL_THEMES.iter().copied().find(|t| t.name == name)
}
