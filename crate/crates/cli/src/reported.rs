//! Published figures shown next to computed results for reference. None of
//! these are recomputed by this tool.

pub const PROVENANCE: &str = "(reported, not computed)";

/// Turn-level and dialog-level Spearman correlations of prior metrics on
/// the FED data, as published.
pub const BASELINES: [(&str, f64, f64); 12] = [
    ("QuestEval", 0.09, 0.08),
    ("MAUDE", -0.09, -0.28),
    ("DEB", 0.19, -0.01),
    ("GRADE", 0.12, -0.06),
    ("DynaEval", 0.32, 0.55),
    ("USR", 0.12, 0.06),
    ("USL-H", 0.19, 0.15),
    ("DialoRPT", -0.09, -0.21),
    ("HolisticEval", 0.12, -0.30),
    ("PredictiveEngage", 0.09, 0.15),
    ("FED", 0.09, 0.32),
    ("FlowScore", -0.05, -0.0),
];

/// The published FULL row, for comparison with a computed one.
pub const FULL_ROW: (&str, f64, f64) = ("FULL", 0.51, 0.69);

/// Mean absolute per-follow-up correlation by language model, in percent.
pub const MODEL_COMPARISON: [(&str, f64, f64); 9] = [
    ("Blender-400M", 33.6, 40.6),
    ("Blender-3B", 33.4, 43.1),
    ("DialoGPT-small", 16.4, 24.6),
    ("DialoGPT-medium", 15.9, 19.8),
    ("DialoGPT-large", 15.3, 19.5),
    ("GPT-2-small", 17.2, 25.9),
    ("GPT-2-medium", 20.3, 32.5),
    ("GPT-2-large", 20.0, 30.5),
    ("GPT-2-XL", 20.0, 33.4),
];
