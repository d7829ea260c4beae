//! Shared setup for the solver benchmarks.

use pbng::coloring::{color_nodes, ColorPartition};
use pbng::constraints::ConstraintIncidence;
use pbng::scene::{builtin_with_resolution, Scene, SceneAny};
use pbng::SimState;

/// Stretch-block scene at the given cell resolution with its node
/// partition, empty-constraint incidence, and initial state.
pub fn block_setup(res: usize) -> (Scene<3>, ColorPartition, ConstraintIncidence, SimState<3>) {
    let SceneAny::D3(scene) = builtin_with_resolution("stretch_block", Some(res)).unwrap() else {
        unreachable!("stretch_block is 3d");
    };
    let partition = color_nodes(&scene.mesh, &scene.static_constraints);
    let incidence =
        ConstraintIncidence::build(scene.mesh.num_vertices(), &scene.static_constraints);
    let state = scene.initial_state().unwrap();
    (scene, partition, incidence, state)
}
