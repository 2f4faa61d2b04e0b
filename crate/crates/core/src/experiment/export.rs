use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::ocp::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

/// Column names, units included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLabels {
    pub state: Vec<String>,
    pub control: Vec<String>,
}

fn owned(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Labels for the bundled models, picked by dimension; generic otherwise.
pub fn labels_for(n_x: usize, n_u: usize) -> TrajectoryLabels {
    match (n_x, n_u) {
        (13, 4) => TrajectoryLabels {
            state: owned(&[
                "px_m", "py_m", "pz_m", "vx_m_s", "vy_m_s", "vz_m_s", "qw", "qx", "qy", "qz", "wx_rad_s", "wy_rad_s",
                "wz_rad_s",
            ]),
            control: owned(&["thrust_N", "tau_x_Nm", "tau_y_Nm", "tau_z_Nm"]),
        },
        // nondimensional descent units
        (14, 3) => TrajectoryLabels {
            state: owned(&[
                "mass_nd", "r_up_nd", "r_east_nd", "r_north_nd", "v_up_nd", "v_east_nd", "v_north_nd", "qw", "qx", "qy",
                "qz", "w_x_nd", "w_y_nd", "w_z_nd",
            ]),
            control: owned(&["thrust_x_nd", "thrust_y_nd", "thrust_z_nd"]),
        },
        _ => TrajectoryLabels {
            state: (0..n_x).map(|i| format!("x{i}")).collect(),
            control: (0..n_u).map(|i| format!("u{i}")).collect(),
        },
    }
}

#[derive(Serialize, Deserialize)]
struct TrajectoryFile {
    dt: f64,
    labels: TrajectoryLabels,
    trajectory: Trajectory,
}

/// One row per node: `node, time_s`, the state, then the control (empty on
/// the terminal node).
pub fn export_trajectory(traj: &Trajectory, dt: f64, format: ExportFormat, path: &Path) -> Result<(), ExperimentError> {
    let io = |source| ExperimentError::Io { path: path.to_path_buf(), source };
    match format {
        ExportFormat::Json => {
            let n_x = traj.states.first().map_or(0, Vec::len);
            let n_u = traj.controls.first().map_or(0, Vec::len);
            let file = TrajectoryFile { dt, labels: labels_for(n_x, n_u), trajectory: traj.clone() };
            fs::write(path, serde_json::to_string(&file)?).map_err(io)
        }
        ExportFormat::Csv => {
            let t = trajectory_table("trajectory", traj, dt);
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(&t.header)?;
            for r in &t.rows {
                w.write_record(r)?;
            }
            w.flush().map_err(io)
        }
    }
}

/// Reads a JSON export back; `(trajectory, dt)`.
pub fn import_trajectory_json(path: &Path) -> Result<(Trajectory, f64), ExperimentError> {
    let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })?;
    let file: TrajectoryFile = serde_json::from_str(&text)?;
    Ok((file.trajectory, file.dt))
}

/// Same layout as the CSV export, as an in-memory table.
pub(crate) fn trajectory_table(name: &str, traj: &Trajectory, dt: f64) -> super::Table {
    let n_x = traj.states.first().map_or(0, Vec::len);
    let n_u = traj.controls.first().map_or(0, Vec::len);
    let labels = labels_for(n_x, n_u);
    let mut header = vec!["node".to_string(), "time_s".to_string()];
    header.extend(labels.state);
    header.extend(labels.control);
    let mut t = super::Table { name: name.to_string(), header, rows: Vec::new() };
    for (i, x) in traj.states.iter().enumerate() {
        let mut row = vec![i.to_string(), (i as f64 * dt).to_string()];
        row.extend(x.iter().map(f64::to_string));
        match traj.controls.get(i) {
            Some(u) => row.extend(u.iter().map(f64::to_string)),
            None => row.extend(std::iter::repeat_n(String::new(), n_u)),
        }
        t.rows.push(row);
    }
    t
}
