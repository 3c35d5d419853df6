use std::sync::Arc;

use crate::error::Result;
use crate::geometry::{Chart, ChartRef};
use crate::potentials::Potential;

/// A chart together with the artificial potential defined on it.
#[derive(Debug, Clone)]
pub struct Model {
    chart: ChartRef,
    potential: Potential,
}

impl Model {
    pub fn new(chart: ChartRef, potential: Potential) -> Result<Self> {
        potential.validate(chart.as_ref())?;
        Ok(Self { chart, potential })
    }

    pub fn from_chart<C: Chart + 'static>(chart: C, potential: Potential) -> Result<Self> {
        Self::new(Arc::new(chart), potential)
    }

    pub fn chart(&self) -> &dyn Chart {
        self.chart.as_ref()
    }

    pub fn chart_ref(&self) -> ChartRef {
        self.chart.clone()
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn with_potential(&self, potential: Potential) -> Result<Self> {
        Self::new(self.chart.clone(), potential)
    }
}
