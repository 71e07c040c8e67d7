use serde::{Deserialize, Serialize};

use super::{Code, CodeStatus, Codebook, CodebookError};

/// On-disk codebook layout: domains → groups → items, in document order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookFile {
    pub version: u64,
    pub predecessor: Option<u64>,
    #[serde(default)]
    pub provenance_note: String,
    pub domains: Vec<DomainEntry>,
    #[serde(default)]
    pub metadata_fields: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainEntry {
    pub name: String,
    #[serde(default)]
    pub groups: Vec<GroupEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub name: String,
    pub items: Vec<ItemEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemEntry {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub definition: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub cross_listed_domains: Vec<String>,
    #[serde(default = "active")]
    pub status: CodeStatus,
    #[serde(default)]
    pub merge_targets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

fn active() -> CodeStatus {
    CodeStatus::Active
}

impl CodebookFile {
    pub fn into_codebook(self) -> Result<Codebook, CodebookError> {
        let domains = self.domains.iter().map(|d| d.name.clone()).collect();
        let mut codes = Vec::new();
        for d in self.domains {
            for g in d.groups {
                for it in g.items {
                    codes.push(Code {
                        code_id: it.id,
                        domain: d.name.clone(),
                        group: g.name.clone(),
                        item: it.label,
                        definition: it.definition,
                        aliases: it.aliases,
                        cross_listed_domains: it.cross_listed_domains,
                        status: it.status,
                        merge_targets: it.merge_targets,
                        provenance: it.provenance,
                    });
                }
            }
        }
        Codebook::new(
            self.version,
            self.predecessor,
            self.provenance_note,
            self.metadata_fields,
            domains,
            codes,
        )
    }

    pub fn from_codebook(cb: &Codebook) -> Self {
        let domains = cb
            .domains()
            .iter()
            .map(|d| DomainEntry {
                name: d.clone(),
                groups: cb
                    .groups_of(d)
                    .into_iter()
                    .map(|g| GroupEntry {
                        name: g.to_string(),
                        items: cb
                            .codes()
                            .iter()
                            .filter(|c| &c.domain == d && c.group == g)
                            .map(|c| ItemEntry {
                                id: c.code_id.clone(),
                                label: c.item.clone(),
                                definition: c.definition.clone(),
                                aliases: c.aliases.clone(),
                                cross_listed_domains: c.cross_listed_domains.clone(),
                                status: c.status,
                                merge_targets: c.merge_targets.clone(),
                                provenance: c.provenance.clone(),
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        CodebookFile {
            version: cb.version_id,
            predecessor: cb.predecessor,
            provenance_note: cb.provenance_note.clone(),
            domains,
            metadata_fields: cb.metadata_fields.clone(),
        }
    }
}
