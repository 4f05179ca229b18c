use crate::error::{Error, Result};
use crate::model::{Catalog, HelperSet, MobilityModel, RequestModel};

/// Everything that defines one allocation problem.
#[derive(Debug, Clone)]
pub struct Instance {
    pub model: MobilityModel,
    pub requests: RequestModel,
    pub helpers: HelperSet,
    pub catalog: Catalog,
    /// Deadline in slots.
    pub deadline: usize,
}

impl Instance {
    pub fn new(
        model: MobilityModel,
        requests: RequestModel,
        helpers: HelperSet,
        catalog: Catalog,
        deadline: usize,
    ) -> Result<Self> {
        let n = model.n();
        if requests.num_helpers() != n || helpers.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "mobility model has {n} helpers, request model {}, helper set {}",
                requests.num_helpers(),
                helpers.len()
            )));
        }
        if requests.num_files() != catalog.len() {
            return Err(Error::DimensionMismatch(format!(
                "request model covers {} files, catalog has {}",
                requests.num_files(),
                catalog.len()
            )));
        }
        if deadline == 0 {
            return Err(Error::InvalidParameter("deadline must be at least 1 slot".into()));
        }
        Ok(Self {
            model,
            requests,
            helpers,
            catalog,
            deadline,
        })
    }

    pub fn n(&self) -> usize {
        self.model.n()
    }

    pub fn num_files(&self) -> usize {
        self.catalog.len()
    }

    /// Same instance with different cache capacities.
    pub fn with_helpers(&self, helpers: HelperSet) -> Result<Self> {
        Self::new(
            self.model.clone(),
            self.requests.clone(),
            helpers,
            self.catalog.clone(),
            self.deadline,
        )
    }
}
