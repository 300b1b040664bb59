//! Friendly views over compound datatypes.
//!
//! Stored member names come from the original producer and can carry
//! units, bracketed remarks, or arbitrary spacing. A view renames each
//! member to something a function body can use as an identifier and makes
//! the record layout total: every byte of the stored record is covered by
//! either a member or a synthetic `_padK` filler, so generated accessors
//! can walk records without consulting the original offsets.

use crate::dtype::{CompoundType, DType};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ViewMember {
    Field {
        name: String,
        offset: usize,
        dtype: DType,
    },
    Pad {
        name: String,
        offset: usize,
        len: usize,
    },
}

impl ViewMember {
    pub fn name(&self) -> &str {
        match self {
            ViewMember::Field { name, .. } | ViewMember::Pad { name, .. } => name,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ViewMember::Field { dtype, .. } => dtype.size(),
            ViewMember::Pad { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompoundView {
    pub members: Vec<ViewMember>,
    pub record_size: usize,
}

/// Rewrites a stored member name into an identifier.
///
/// The name is truncated at the first `(`, `[`, or `{`, then trimmed,
/// lowercased, and spaces and dashes become underscores. Truncation runs
/// first so a trailing unit like `"Temperature (F)"` becomes
/// `"temperature"` rather than `"temperature_"`. The function is
/// idempotent: applying it to its own output changes nothing.
pub fn sanitize_member_name(raw: &str) -> String {
    let cut = raw.find(['(', '[', '{']).unwrap_or(raw.len());
    raw[..cut]
        .trim()
        .to_lowercase()
        .replace([' ', '-'], "_")
}

/// Builds the total view of a compound datatype.
pub fn build_compound_view(dtype: &DType) -> Result<CompoundView> {
    let DType::Compound(compound) = dtype else {
        return Err(Error::InvalidDType(format!(
            "compound view requires a compound datatype, got {dtype}"
        )));
    };
    build(compound)
}

fn build(compound: &CompoundType) -> Result<CompoundView> {
    let mut members = Vec::new();
    let mut at = 0usize;
    let mut pads = 0usize;
    for member in &compound.members {
        let offset = member.offset as usize;
        if offset > at {
            members.push(ViewMember::Pad {
                name: format!("_pad{pads}"),
                offset: at,
                len: offset - at,
            });
            pads += 1;
        }
        let name = sanitize_member_name(&member.raw_name);
        if name.is_empty() {
            return Err(Error::InvalidDType(format!(
                "member name {:?} sanitizes to nothing",
                member.raw_name
            )));
        }
        members.push(ViewMember::Field {
            name,
            offset,
            dtype: member.dtype.clone(),
        });
        at = offset + member.dtype.size();
    }
    let record_size = compound.size as usize;
    if record_size > at {
        members.push(ViewMember::Pad {
            name: format!("_pad{pads}"),
            offset: at,
            len: record_size - at,
        });
    }
    for (n, member) in members.iter().enumerate() {
        if members[..n].iter().any(|m| m.name() == member.name()) {
            return Err(Error::NameCollision(member.name().to_string()));
        }
    }
    Ok(CompoundView {
        members,
        record_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtype::CompoundMember;

    fn member(raw: &str, offset: usize, dtype: DType) -> CompoundMember {
        CompoundMember {
            raw_name: raw.to_string(),
            dtype,
            offset,
        }
    }

    fn compound(size: usize, members: Vec<CompoundMember>) -> DType {
        DType::Compound(CompoundType { members, size })
    }

    #[test]
    fn sanitize_rule_chain() {
        assert_eq!(sanitize_member_name("Temperature (F)"), "temperature");
        assert_eq!(sanitize_member_name("Pressure (inHg)"), "pressure");
        assert_eq!(sanitize_member_name("Serial number"), "serial_number");
        assert_eq!(sanitize_member_name("well-mixed ratio"), "well_mixed_ratio");
        assert_eq!(sanitize_member_name("plain"), "plain");
        assert_eq!(sanitize_member_name("  padded  "), "padded");
        // Truncation happens before the space rules, so no trailing
        // underscore survives.
        assert!(!sanitize_member_name("Temperature (F)").ends_with('_'));
    }

    #[test]
    fn sanitize_is_idempotent() {
        for raw in [
            "Temperature (F)",
            "Serial number",
            "A [x]",
            "MiXeD-CaSe {note}",
            "    ",
            "_pad0",
        ] {
            let once = sanitize_member_name(raw);
            assert_eq!(sanitize_member_name(&once), once);
        }
    }

    #[test]
    fn gaps_become_pads() {
        // Int64 at 0, then a 16-byte hole, then two Float64s.
        let view = build_compound_view(&compound(
            40,
            vec![
                member("Serial number", 0, DType::Int64),
                member("Temperature (F)", 24, DType::Float64),
                member("Pressure (inHg)", 32, DType::Float64),
            ],
        ))
        .unwrap();
        assert_eq!(view.record_size, 40);
        assert_eq!(
            view.members,
            vec![
                ViewMember::Field {
                    name: "serial_number".into(),
                    offset: 0,
                    dtype: DType::Int64
                },
                ViewMember::Pad { name: "_pad0".into(), offset: 8, len: 16 },
                ViewMember::Field {
                    name: "temperature".into(),
                    offset: 24,
                    dtype: DType::Float64
                },
                ViewMember::Field {
                    name: "pressure".into(),
                    offset: 32,
                    dtype: DType::Float64
                },
            ]
        );
    }

    #[test]
    fn trailing_gap_becomes_a_pad() {
        let view = build_compound_view(&compound(
            16,
            vec![member("a", 0, DType::Int32)],
        ))
        .unwrap();
        assert_eq!(view.members.len(), 2);
        assert_eq!(
            view.members[1],
            ViewMember::Pad { name: "_pad0".into(), offset: 4, len: 12 }
        );
    }

    #[test]
    fn collisions_and_empty_names_are_rejected() {
        let err = build_compound_view(&compound(
            16,
            vec![
                member("A(x)", 0, DType::Float64),
                member("A[y]", 8, DType::Float64),
            ],
        ))
        .unwrap_err();
        assert!(matches!(err, Error::NameCollision(name) if name == "a"));

        let err = build_compound_view(&compound(
            8,
            vec![member("(unnamed)", 0, DType::Float64)],
        ))
        .unwrap_err();
        assert!(matches!(err, Error::InvalidDType(_)));

        // A stored member that sanitizes to a pad's synthetic name.
        let err = build_compound_view(&compound(
            24,
            vec![
                member("a", 0, DType::Int32),
                member("_pad0", 16, DType::Int64),
            ],
        ))
        .unwrap_err();
        assert!(matches!(err, Error::NameCollision(_)));
    }

    #[test]
    fn non_compound_is_rejected() {
        assert!(matches!(
            build_compound_view(&DType::Int32),
            Err(Error::InvalidDType(_))
        ));
    }

    mod prop {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Members plus pads tile the record exactly.
            #[test]
            fn views_are_total(
                gaps in proptest::collection::vec(0usize..9, 1..6),
                tail in 0usize..9,
            ) {
                let scalar_options = [
                    DType::Int8, DType::Int16, DType::Int32, DType::Int64,
                    DType::UInt8, DType::Float32, DType::Float64,
                ];
                let mut members = Vec::new();
                let mut at = 0usize;
                for (n, gap) in gaps.iter().enumerate() {
                    at += gap;
                    let dtype = scalar_options[(n + gap) % scalar_options.len()].clone();
                    let size = dtype.size();
                    members.push(member(&format!("m {n}"), at, dtype));
                    at += size;
                }
                let total = at + tail;
                let view = build_compound_view(&compound(total, members)).unwrap();
                prop_assert_eq!(view.record_size, total);

                let mut covered = 0usize;
                let mut cursor = 0usize;
                for m in &view.members {
                    let offset = match m {
                        ViewMember::Field { offset, .. } | ViewMember::Pad { offset, .. } => *offset,
                    };
                    prop_assert_eq!(offset, cursor, "gap before {}", m.name());
                    covered += m.len();
                    cursor = offset + m.len();
                }
                prop_assert_eq!(covered, total as usize);
                prop_assert_eq!(cursor, view.record_size);
            }
        }
    }
}
