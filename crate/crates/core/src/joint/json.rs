use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::group::Group;

use super::{bits_to_outputs, outputs_to_bits, EcosystemModel, JointPmf, ModelError, MAX_LENDERS};

/// JSON form of an [`EcosystemModel`]:
///
/// ```json
/// {"n": 2, "base_rates": [0.5, 0.5],
///  "pmf": {"g0y1": {"00": 0.1, "11": 0.9}, "g0y0": {...}, "g1y1": {...}, "g1y0": {...}}}
/// ```
///
/// Output vectors are bitstrings with lender 1 first; omitted cells are 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub n: usize,
    pub base_rates: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_shares: Option<[f64; 2]>,
    pub pmf: BTreeMap<String, BTreeMap<String, f64>>,
}

fn stratum_key(g: Group, label: bool) -> String {
    format!("g{}y{}", g.index(), u8::from(label))
}

impl From<&EcosystemModel<f64>> for ModelDocument {
    fn from(model: &EcosystemModel<f64>) -> Self {
        let n = model.n();
        let mut pmf = BTreeMap::new();
        for g in Group::BOTH {
            for label in [true, false] {
                let cells = model
                    .pmf(g, label)
                    .iter()
                    .map(|(o, p)| (outputs_to_bits(n, o), p))
                    .collect();
                pmf.insert(stratum_key(g, label), cells);
            }
        }
        let shares = model.group_shares();
        Self {
            n,
            base_rates: model.base_rates(),
            group_shares: (shares != [0.5, 0.5]).then_some(shares),
            pmf,
        }
    }
}

impl TryFrom<ModelDocument> for EcosystemModel<f64> {
    type Error = ModelError;

    fn try_from(doc: ModelDocument) -> Result<Self, ModelError> {
        let n = doc.n;
        if n == 0 || n > MAX_LENDERS {
            return Err(ModelError::TooManyLenders(n));
        }
        for key in doc.pmf.keys() {
            if !matches!(key.as_str(), "g0y0" | "g0y1" | "g1y0" | "g1y1") {
                return Err(ModelError::Document(format!("unknown stratum {key:?}")));
            }
        }
        let build = |g: Group, label: bool| -> Result<JointPmf<f64>, ModelError> {
            let key = stratum_key(g, label);
            let cells = doc
                .pmf
                .get(&key)
                .ok_or_else(|| ModelError::Document(format!("missing stratum {key:?}")))?;
            let mut probs = vec![0.0; 1 << n];
            for (bits, &p) in cells {
                let o = bits_to_outputs(bits)
                    .filter(|_| bits.len() == n)
                    .ok_or_else(|| {
                        ModelError::Document(format!("bad output vector {bits:?} in {key}"))
                    })?;
                probs[o as usize] = p;
            }
            JointPmf::from_cells(n, probs)
        };
        let model = EcosystemModel::new(
            build(Group::Zero, true)?,
            build(Group::One, true)?,
            build(Group::Zero, false)?,
            build(Group::One, false)?,
            doc.base_rates,
        )?;
        match doc.group_shares {
            Some(s) => model.with_group_shares(s),
            None => Ok(model),
        }
    }
}

impl EcosystemModel<f64> {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelDocument::from(self)).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let doc: ModelDocument =
            serde_json::from_str(s).map_err(|e| ModelError::Document(e.to_string()))?;
        doc.try_into()
    }
}
