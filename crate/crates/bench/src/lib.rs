//! Fixtures shared by the benchmarks.

use loggas::equilibrium::{solve_equilibrium, SolverOptions};
use loggas::models::build;
use loggas::{EquilibriumMeasure, ModelPreset, StateSpaceSpec, WeightModel};

pub fn krawtchouk(m: f64, n: usize) -> (StateSpaceSpec, WeightModel) {
    build(&ModelPreset::krawtchouk(m), n).expect("krawtchouk preset builds")
}

pub fn convex(n: usize) -> (StateSpaceSpec, WeightModel) {
    build(&ModelPreset::convex(vec![0.0, 0.0, 1.0]), n).expect("convex preset builds")
}

pub fn equilibrium(model: &WeightModel, grid: usize) -> EquilibriumMeasure {
    solve_equilibrium(model, model.fillings_hat(), &SolverOptions::with_grid(grid)).expect("solver converges")
}
