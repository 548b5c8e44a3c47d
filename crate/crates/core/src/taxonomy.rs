//! Closed legal vocabularies and the validity filter applied to every
//! generated indicator.
//!
//! Terms are canonicalized (Unicode NFC, surrounding whitespace trimmed) and
//! then matched by exact string equality. There is deliberately no fuzzy or
//! synonym matching: a term outside the vocabulary is dropped.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Canonical form used for every vocabulary comparison.
pub fn canonical(term: &str) -> String {
    term.trim().nfc().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    charges: BTreeSet<String>,
    elements: BTreeSet<String>,
    /// Elements admissible under each charge, when the vocabulary is
    /// charge-conditioned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    element_index: Option<BTreeMap<String, BTreeSet<String>>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawElements {
    Flat(Vec<String>),
    ByCharge(BTreeMap<String, Vec<String>>),
}

#[derive(Deserialize)]
struct RawTaxonomy {
    charges: Vec<String>,
    elements: RawElements,
}

impl Taxonomy {
    /// Flat taxonomy: element validity does not depend on the charge.
    pub fn new<C, E>(charges: C, elements: E) -> Result<Self>
    where
        C: IntoIterator,
        C::Item: AsRef<str>,
        E: IntoIterator,
        E::Item: AsRef<str>,
    {
        let tax = Self {
            charges: charges.into_iter().map(|c| canonical(c.as_ref())).collect(),
            elements: elements.into_iter().map(|e| canonical(e.as_ref())).collect(),
            element_index: None,
        };
        tax.validate()?;
        Ok(tax)
    }

    /// Charge-conditioned taxonomy. Every key of `index` must be one of
    /// `charges`; the element vocabulary is the union of the index values.
    pub fn with_index<C>(charges: C, index: BTreeMap<String, Vec<String>>) -> Result<Self>
    where
        C: IntoIterator,
        C::Item: AsRef<str>,
    {
        let charges: BTreeSet<String> = charges.into_iter().map(|c| canonical(c.as_ref())).collect();
        let mut element_index: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (charge, elems) in index {
            let charge = canonical(&charge);
            if !charges.contains(&charge) {
                return Err(Error::invalid(format!("element index lists unknown charge `{charge}`")));
            }
            element_index.entry(charge).or_default().extend(elems.iter().map(|e| canonical(e)));
        }
        let elements = element_index.values().flatten().cloned().collect();
        let tax = Self { charges, elements, element_index: Some(element_index) };
        tax.validate()?;
        Ok(tax)
    }

    fn validate(&self) -> Result<()> {
        if self.charges.is_empty() {
            return Err(Error::invalid("taxonomy has no charges"));
        }
        if self.elements.is_empty() {
            return Err(Error::invalid("taxonomy has no elements"));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawTaxonomy = serde_json::from_str(text)?;
        match raw.elements {
            RawElements::Flat(elements) => Self::new(raw.charges, elements),
            RawElements::ByCharge(index) => Self::with_index(raw.charges, index),
        }
    }

    /// Serializes in the same shape `load` accepts.
    pub fn to_json(&self) -> String {
        let value = match &self.element_index {
            None => serde_json::json!({ "charges": self.charges, "elements": self.elements }),
            Some(index) => serde_json::json!({ "charges": self.charges, "elements": index }),
        };
        serde_json::to_string_pretty(&value).expect("taxonomy serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn charges(&self) -> &BTreeSet<String> {
        &self.charges
    }

    pub fn elements(&self) -> &BTreeSet<String> {
        &self.elements
    }

    pub fn element_index(&self) -> Option<&BTreeMap<String, BTreeSet<String>>> {
        self.element_index.as_ref()
    }

    pub fn is_charge(&self, term: &str) -> bool {
        self.charges.contains(&canonical(term))
    }

    pub fn is_element(&self, term: &str) -> bool {
        self.elements.contains(&canonical(term))
    }

    /// Keeps only vocabulary terms.
    ///
    /// Returns `(raw_charges ∩ K_charge, raw_elements ∩ K_element)`. With a
    /// charge-conditioned index the elements are further restricted to those
    /// admissible under at least one surviving charge. Empty outputs are valid.
    pub fn filter_valid<C, E>(&self, raw_charges: C, raw_elements: E) -> (BTreeSet<String>, BTreeSet<String>)
    where
        C: IntoIterator,
        C::Item: AsRef<str>,
        E: IntoIterator,
        E::Item: AsRef<str>,
    {
        let charges: BTreeSet<String> =
            raw_charges.into_iter().map(|c| canonical(c.as_ref())).filter(|c| self.charges.contains(c)).collect();
        let mut elements: BTreeSet<String> =
            raw_elements.into_iter().map(|e| canonical(e.as_ref())).filter(|e| self.elements.contains(e)).collect();
        if let Some(index) = &self.element_index {
            let admissible: BTreeSet<&String> = charges.iter().filter_map(|c| index.get(c)).flatten().collect();
            elements.retain(|e| admissible.contains(e));
        }
        (charges, elements)
    }
}
