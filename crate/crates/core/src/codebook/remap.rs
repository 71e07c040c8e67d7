use std::collections::BTreeSet;

use super::{Codebook, CodebookError, OTHER_DOMAIN};
use crate::parser::{AnnotationRecord, OtherEntry};

/// Carries records labeled under `from` forward to `to`.
///
/// Merged codes are replaced by their full target set; retired codes become
/// Other entries whose specification is the retired item label. Records
/// already at `to` pass through, so remapping twice is a no-op.
pub fn remap_annotations(
    records: &[AnnotationRecord],
    from: &Codebook,
    to: &Codebook,
) -> Result<Vec<AnnotationRecord>, CodebookError> {
    if to.version_id < from.version_id || from.codes().iter().any(|c| to.get(&c.code_id).is_none()) {
        return Err(CodebookError::NotDescendant {
            from: from.version_id,
            to: to.version_id,
        });
    }
    records
        .iter()
        .map(|r| {
            if r.codebook_version != from.version_id && r.codebook_version != to.version_id {
                return Err(CodebookError::LineageMismatch {
                    unit_id: r.unit_id.clone(),
                    found: r.codebook_version,
                    expected: from.version_id,
                });
            }
            let mut out = r.clone();
            out.codebook_version = to.version_id;
            let mut resolved = BTreeSet::new();
            for id in &r.labels.resolved {
                let image = to.resolve_active(id)?;
                if image.is_empty() {
                    let label = to.get(id).map(|c| c.item.clone()).unwrap_or_else(|| id.clone());
                    let entry = OtherEntry {
                        category: OTHER_DOMAIN.to_string(),
                        specification: label,
                        missing_justification: false,
                    };
                    if !out.labels.other_entries.contains(&entry) {
                        out.labels.other_entries.push(entry);
                    }
                }
                resolved.extend(image);
            }
            out.labels.resolved = resolved;
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::seed_codebook;
    use crate::parser::LabelSet;

    const GW: &str = "ip.collaborative-learning.gallery-walk";
    const GROUP: &str = "ip.collaborative-learning.group-work";
    const DISC: &str = "ip.collaborative-learning.student-discourse";

    fn rec(unit: &str, codes: &[&str]) -> AnnotationRecord {
        AnnotationRecord::manual(unit, "model", 1, LabelSet::from_codes(codes.iter().copied()))
    }

    fn resolved(r: &AnnotationRecord) -> Vec<&str> {
        r.labels.resolved.iter().map(String::as_str).collect()
    }

    #[test]
    fn merge_expands_and_collapses() {
        let v1 = seed_codebook();
        let v2 = v1.merge_codes(GW, &[GROUP, DISC]).unwrap();
        let out = remap_annotations(&[rec("u1", &[GW]), rec("u2", &[GW, GROUP]), rec("u3", &[GROUP])], &v1, &v2)
            .unwrap();
        assert_eq!(resolved(&out[0]), [GROUP, DISC]);
        assert_eq!(resolved(&out[1]), [GROUP, DISC]);
        assert_eq!(resolved(&out[2]), [GROUP]);
        assert!(out.iter().all(|r| r.codebook_version == 2));
    }

    #[test]
    fn retired_codes_go_to_other() {
        let v1 = seed_codebook();
        let v2 = v1.retire_code(GW).unwrap();
        let mut r = rec("u1", &[GW, GROUP]);
        r.raw_output = "{\"labels\":[\"Gallery Walk\"]}".into();
        let out = remap_annotations(&[r.clone()], &v1, &v2).unwrap();
        assert_eq!(resolved(&out[0]), [GROUP]);
        assert_eq!(out[0].labels.other_entries[0].specification, "Gallery Walk");
        assert_eq!(out[0].raw_output, r.raw_output);
    }

    #[test]
    fn idempotent() {
        let v1 = seed_codebook();
        let v2 = v1.merge_codes(GW, &[GROUP, DISC]).unwrap();
        let once = remap_annotations(&[rec("u1", &[GW])], &v1, &v2).unwrap();
        let twice = remap_annotations(&once, &v1, &v2).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn lineage_errors() {
        let v1 = seed_codebook();
        let v2 = v1.merge_codes(GW, &[GROUP]).unwrap();
        assert!(matches!(
            remap_annotations(&[rec("u1", &[GROUP])], &v2, &v1),
            Err(CodebookError::NotDescendant { .. })
        ));
        let mut stale = rec("u1", &[GROUP]);
        stale.codebook_version = 7;
        assert!(matches!(
            remap_annotations(&[stale], &v1, &v2),
            Err(CodebookError::LineageMismatch { .. })
        ));
    }
}
