//! Train/test provenance for fitted artifacts.
//!
//! Anything fitted inside a cross-validation fold (atlas, tangent reference,
//! group-confound coefficients, scaler, hyperparameters) is wrapped in a
//! [`Tagged`] value recording which subjects it was fitted on. [`audit`]
//! checks those records against the fold before a score is accepted.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training and test subject ids of one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldRoles {
    pub fold_id: usize,
    train: BTreeSet<usize>,
    test: BTreeSet<usize>,
}

impl FoldRoles {
    pub fn new(
        fold_id: usize,
        train: impl IntoIterator<Item = usize>,
        test: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let train: BTreeSet<usize> = train.into_iter().collect();
        let test: BTreeSet<usize> = test.into_iter().collect();
        if let Some(id) = train.intersection(&test).next() {
            return Err(Error::Leakage(format!(
                "subject {id} is in both train and test of fold {fold_id}"
            )));
        }
        Ok(Self {
            fold_id,
            train,
            test,
        })
    }

    pub fn train(&self) -> &BTreeSet<usize> {
        &self.train
    }

    pub fn test(&self) -> &BTreeSet<usize> {
        &self.test
    }

    /// Accepts `ids` as fitting data only if all are training subjects.
    pub fn ensure_train_only(
        &self,
        artifact: &str,
        ids: impl IntoIterator<Item = usize>,
    ) -> Result<Provenance> {
        let mut fit: Vec<usize> = ids.into_iter().collect();
        fit.sort_unstable();
        fit.dedup();
        if let Some(id) = fit.iter().find(|id| self.test.contains(id)) {
            return Err(Error::Leakage(format!(
                "{artifact} of fold {} would be fitted on test subject {id}",
                self.fold_id
            )));
        }
        if let Some(id) = fit.iter().find(|id| !self.train.contains(id)) {
            return Err(Error::Leakage(format!(
                "{artifact} of fold {} uses subject {id}, which is not in the training set",
                self.fold_id
            )));
        }
        Ok(Provenance {
            artifact: artifact.to_string(),
            fold_id: self.fold_id,
            fit_subjects: fit,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub artifact: String,
    pub fold_id: usize,
    pub fit_subjects: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tagged<T> {
    pub value: T,
    pub provenance: Provenance,
}

impl<T> Tagged<T> {
    pub fn new(value: T, provenance: Provenance) -> Self {
        Self { value, provenance }
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> Tagged<U> {
        Tagged {
            value: f(self.value),
            provenance: self.provenance,
        }
    }
}

/// Verifies every record belongs to `roles`' fold and was fitted on
/// training subjects only.
pub fn audit(roles: &FoldRoles, records: &[&Provenance]) -> Result<()> {
    for rec in records {
        if rec.fold_id != roles.fold_id {
            return Err(Error::Leakage(format!(
                "{} was fitted for fold {} but scored in fold {}",
                rec.artifact, rec.fold_id, roles.fold_id
            )));
        }
        roles.ensure_train_only(&rec.artifact, rec.fit_subjects.iter().copied())?;
    }
    Ok(())
}
