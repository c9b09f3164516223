//! Plain consensus dynamic in primal coordinates.

use crate::dynamics::{begin_step, post_step, OptimizerParams, OptimizerState};
use crate::error::Result;
use crate::objective::Objective;

pub(super) fn step(
    state: &mut OptimizerState,
    objective: &dyn Objective,
    params: &OptimizerParams,
) -> Result<()> {
    let point = begin_step(state, objective, params)?;
    super::primal_move(state, &point, params, |_, _| Ok(()))?;
    post_step(state, None, objective, params)
}
