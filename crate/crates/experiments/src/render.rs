//! SVG frames of a trajectory.
//!
//! Skeleton edges are grey, actuators red while extended and blue while
//! contracted, void edges are left out. The ground and the head node's path
//! so far are drawn on every frame.

use std::fmt::Write as _;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use trussbot::design::{DesignMatrix, ACTUATOR, SKELETON};
use trussbot::lattice::{LatticeSpec, Vec2};
use trussbot::sim::{GroundModel, RolloutRecord};

use crate::{ExperimentError, Result};

/// Node positions per recorded step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<usize>,
    pub positions: Vec<Vec<Vec2>>,
}

impl Trajectory {
    pub fn from_record(record: &RolloutRecord) -> Self {
        Self {
            steps: (0..record.states.len()).map(|k| k * record.stride).collect(),
            positions: record.states.iter().map(|s| s.x.clone()).collect(),
        }
    }

    /// Reads the `step,time,node_id,x,y,vx,vy` CSV written by a run.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut steps: Vec<usize> = Vec::new();
        let mut positions: Vec<Vec<Vec2>> = Vec::new();
        let bad = |line: usize, what: &str| ExperimentError::Config(format!("{}:{line}: {what}", path.display()));
        for (i, line) in file.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != "step,time,node_id,x,y,vx,vy" {
                    return Err(bad(1, "unexpected header"));
                }
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(i + 1, "expected 7 fields"));
            }
            let step: usize = f[0].parse().map_err(|_| bad(i + 1, "bad step"))?;
            let node: usize = f[2].parse().map_err(|_| bad(i + 1, "bad node id"))?;
            let x: f64 = f[3].parse().map_err(|_| bad(i + 1, "bad x"))?;
            let y: f64 = f[4].parse().map_err(|_| bad(i + 1, "bad y"))?;
            if steps.last() != Some(&step) {
                steps.push(step);
                positions.push(Vec::new());
            }
            let frame = positions.last_mut().unwrap();
            if node != frame.len() {
                return Err(bad(i + 1, "node ids must be listed in order"));
            }
            frame.push(Vec2::new(x, y));
        }
        if steps.is_empty() {
            return Err(bad(1, "no rows"));
        }
        Ok(Self { steps, positions })
    }

    /// Indices of the recorded states sampled every `stride` steps, always
    /// including the first and last.
    pub fn sample(&self, stride: usize) -> Vec<usize> {
        let stride = stride.max(1);
        let last = self.steps.len() - 1;
        if last == 0 {
            return vec![0];
        }
        let mut out: Vec<usize> = (0..last).filter(|&k| self.steps[k].is_multiple_of(stride)).collect();
        if out.is_empty() || out[0] != 0 {
            out.insert(0, 0);
        }
        out.push(last);
        out
    }
}

fn bounds(traj: &Trajectory) -> (Vec2, Vec2) {
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = -lo;
    for p in traj.positions.iter().flatten() {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

fn strain_color(strain: f64) -> &'static str {
    if strain > 0.0 {
        "#d62728"
    } else if strain < 0.0 {
        "#1f77b4"
    } else {
        "#7f7f7f"
    }
}

/// Writes `frame_<step>.svg` files into `out_dir` and returns their paths.
pub fn render_frames(
    traj: &Trajectory,
    design: &DesignMatrix,
    lattice: &LatticeSpec,
    ground: &GroundModel,
    out_dir: &Path,
    stride: usize,
) -> Result<Vec<PathBuf>> {
    if design.len() != lattice.num_edges() || traj.positions.iter().any(|p| p.len() != lattice.num_nodes()) {
        return Err(ExperimentError::Config("trajectory, design and lattice sizes disagree".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let state = design.argmax_rows();
    let (mut lo, mut hi) = bounds(traj);
    let pad = 2.0 * lattice.spacing;
    lo -= Vec2::new(pad, pad);
    hi += Vec2::new(pad, pad);
    lo.y = lo.y.min(ground.surface_y(lo.x).min(ground.surface_y(hi.x)) - pad);
    let scale = 400.0 / (hi.y - lo.y).max(hi.x - lo.x).max(1e-9);
    let px = |p: &Vec2| ((p.x - lo.x) * scale, (hi.y - p.y) * scale);
    let (w, h) = ((hi.x - lo.x) * scale, (hi.y - lo.y) * scale);
    let head = lattice.head_index;

    let mut paths = Vec::new();
    for k in traj.sample(stride) {
        let pos = &traj.positions[k];
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1}" height="{h:.1}" viewBox="0 0 {w:.1} {h:.1}">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let (g0, g1) = (Vec2::new(lo.x, ground.surface_y(lo.x)), Vec2::new(hi.x, ground.surface_y(hi.x)));
        let mut ground_pts = vec![g0];
        if ground.kind == trussbot::sim::GroundKind::Incline && ground.pivot.x > lo.x && ground.pivot.x < hi.x {
            ground_pts.push(Vec2::new(ground.pivot.x, ground.surface_y(ground.pivot.x)));
        }
        ground_pts.push(g1);
        let gp: Vec<String> = ground_pts.iter().map(&px).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ =
            writeln!(svg, r##"<polyline points="{}" fill="none" stroke="#000000" stroke-width="2"/>"##, gp.join(" "));
        for (e, &(i, j)) in lattice.edges.iter().enumerate() {
            let color = match state[e] {
                SKELETON => "#9e9e9e",
                ACTUATOR => {
                    let l = (pos[j] - pos[i]).norm();
                    strain_color((l - lattice.rest_lengths[e]) / lattice.rest_lengths[e])
                }
                _ => continue,
            };
            let (a, b) = (px(&pos[i]), px(&pos[j]));
            let _ = writeln!(
                svg,
                r#"<line class="edge" data-edge="{e}" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="3"/>"#,
                a.0, a.1, b.0, b.1
            );
        }
        let trail: Vec<String> =
            traj.positions[..=k].iter().map(|p| px(&p[head])).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            svg,
            r##"<polyline class="head" points="{}" fill="none" stroke="#2ca02c" stroke-width="1.5"/>"##,
            trail.join(" ")
        );
        let (hx, hy) = px(&pos[head]);
        let _ = writeln!(svg, r##"<circle cx="{hx:.2}" cy="{hy:.2}" r="4" fill="#2ca02c"/>"##);
        let _ =
            writeln!(svg, r#"<text x="8" y="16" font-family="monospace" font-size="12">step {}</text>"#, traj.steps[k]);
        svg.push_str("</svg>\n");
        let path = out_dir.join(format!("frame_{:06}.svg", traj.steps[k]));
        std::fs::write(&path, svg)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use trussbot::lattice::build_grid;

    fn fixture(steps: usize) -> (Trajectory, LatticeSpec) {
        let lat = build_grid(2, 2, 0.1, Vec2::new(0.1, 0.0)).unwrap();
        let positions = (0..=steps)
            .map(|k| {
                let s = 1.0 + 0.1 * (k as f64).sin();
                lat.nodes.iter().map(|p| Vec2::new(p.x * s, p.y * s)).collect()
            })
            .collect();
        (Trajectory { steps: (0..=steps).collect(), positions }, lat)
    }

    #[test]
    fn stride_equal_to_length_gives_endpoints() {
        let (traj, _) = fixture(64);
        assert_eq!(traj.sample(64), vec![0, 64]);
        assert_eq!(traj.sample(30), vec![0, 30, 60, 64]);
        assert_eq!(traj.sample(1).len(), 65);
    }

    #[test]
    fn void_edges_are_omitted_and_actuators_colored_by_sign() {
        let (traj, lat) = fixture(8);
        // edge 0 void, edge 1 skeleton, the rest actuators
        let mut rows = vec![[0.0, 0.0, 1.0]; lat.num_edges()];
        rows[0] = [1.0, 0.0, 0.0];
        rows[1] = [0.0, 1.0, 0.0];
        let dir = tempfile::tempdir().unwrap();
        let frames =
            render_frames(&traj, &DesignMatrix::new(rows), &lat, &GroundModel::flat(0.0), dir.path(), 8).unwrap();
        assert_eq!(frames.len(), 2);
        for f in &frames {
            let s = std::fs::read_to_string(f).unwrap();
            assert!(!s.contains(r#"data-edge="0""#));
            assert!(s.contains(r#"data-edge="1""#));
            assert_eq!(s.matches(r#"class="edge""#).count(), lat.num_edges() - 1);
        }
        // at step 8 the grid is scaled by 1 + 0.1 sin 8 > 1: all actuators extended
        let last = std::fs::read_to_string(&frames[1]).unwrap();
        assert!(last.contains("#d62728") && !last.contains("#1f77b4"));
        // at step 0 nothing is strained
        let first = std::fs::read_to_string(&frames[0]).unwrap();
        assert!(!first.contains("#d62728") && !first.contains("#1f77b4"));
    }

    #[test]
    fn strain_sign_threshold() {
        assert_eq!(strain_color(1e-12), "#d62728");
        assert_eq!(strain_color(-1e-12), "#1f77b4");
        assert_eq!(strain_color(0.0), "#7f7f7f");
    }

    #[test]
    fn csv_round_trip() {
        use trussbot::sim::{rollout, Scene, SimConfig};
        let lat = build_grid(2, 3, 0.1, Vec2::new(0.1, 0.0)).unwrap();
        let scene = Scene::new(lat.clone(), SimConfig { total_steps: 5, grad_steps: 5, ..SimConfig::default() });
        let theta = trussbot::controller::xavier_init(1, scene.controller_dims(4)).unwrap();
        let rec = rollout(&scene, &vec![[0.0, 1.0, 0.0]; lat.num_edges()], &theta).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        trussbot::sim::write_trajectory_csv(&rec, 0.002, std::fs::File::create(&path).unwrap()).unwrap();
        let back = Trajectory::read_csv(&path).unwrap();
        assert_eq!(back, Trajectory::from_record(&rec));
    }
}
