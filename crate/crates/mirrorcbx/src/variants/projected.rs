//! Greedy projection variant: move in primal space, then snap every
//! particle back onto the constraint set.
//!
//! The ensemble is assumed to start on the set. Resampling kicks land in
//! primal space and are only re-projected by the next step's projection.

use nalgebra::DVector;

use crate::constraints::ConstraintSet;
use crate::dynamics::{begin_step, post_step, OptimizerParams, OptimizerState};
use crate::error::Result;
use crate::objective::Objective;

pub(super) fn step(
    set: &ConstraintSet,
    state: &mut OptimizerState,
    objective: &dyn Objective,
    params: &OptimizerParams,
) -> Result<()> {
    let point = begin_step(state, objective, params)?;
    super::primal_move(state, &point, params, |_, x| {
        let projected = set.project(&DVector::from_column_slice(x))?;
        x.copy_from_slice(projected.as_slice());
        Ok(())
    })?;
    post_step(state, None, objective, params)
}
