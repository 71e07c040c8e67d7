//! Structured-output recovery, label normalization and validity classification.

mod extract;
mod labelset;
mod normalize;
mod record;

pub use extract::{extract_structured, Extraction, RepairLevel};
pub use labelset::{
    classify_validity, is_grade_label, parse_output, resolve_labelset, ParsedOutput,
    DIMENSION_KEYS, LABELS_KEY, METADATA_KEY, OTHER_KEY,
};
pub use normalize::{
    is_explicit_other, normalize_label, normalize_text, other_specification, similarity,
    Normalizer, Resolution, ResolutionKind, DEFAULT_FUZZY_THRESHOLD,
};
pub use record::{
    load_records, read_records_jsonl, save_records, write_records_jsonl, AiResponseType,
    AnnotationRecord, LabelMetadata, LabelSet, OtherEntry, ParseStatus, RawLabel,
};
