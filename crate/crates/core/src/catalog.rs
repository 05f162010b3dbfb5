//! Model table used to auto-populate registry entries from a scanned
//! serial number.

pub struct ModelInfo {
    pub model: &'static str,
    pub vendor_id: &'static str,
    pub description: &'static str,
    pub class: crate::types::DeviceClass,
}

use crate::types::DeviceClass::{HighEnd, LowEnd, MidLevel};

pub const MODELS: &[ModelInfo] = &[
    ModelInfo { model: "SP-100", vendor_id: "acme", description: "smart plug", class: LowEnd },
    ModelInfo { model: "LB-20", vendor_id: "acme", description: "lightbulb type LB-20", class: LowEnd },
    ModelInfo { model: "DL-7", vendor_id: "lockwell", description: "door-lock", class: MidLevel },
    ModelInfo { model: "CAM-3", vendor_id: "viewtek", description: "IP camera", class: HighEnd },
    ModelInfo { model: "TH-1", vendor_id: "acme", description: "thermostat", class: MidLevel },
];

pub fn lookup(model: &str) -> Option<&'static ModelInfo> {
    MODELS.iter().find(|m| m.model == model)
}

/// Serials are `<MODEL>-<unit>`; the longest matching model prefix wins.
pub fn infer_from_serial(serial: &str) -> Option<&'static ModelInfo> {
    MODELS
        .iter()
        .filter(|m| serial.strip_prefix(m.model).is_some_and(|rest| rest.starts_with('-')))
        .max_by_key(|m| m.model.len())
}
