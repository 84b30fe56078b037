/// Per-iteration solver metrics. Entries that a solver does not track are 0;
/// MSE columns are `None` when no reference state was supplied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub mean_reproj_err: f64,
    pub max_primal_x: f64,
    pub max_primal_y: f64,
    pub camera_mse: Option<f64>,
    pub point_mse: Option<f64>,
    pub wall_ms: f64,
    pub comm_floats: u64,
}
