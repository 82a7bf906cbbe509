//! CSV readers and writers for fields, snapshots, trajectories and ladders.
//!
//! Floats are written with `{:e}`, the shortest representation that parses back
//! to the same value, so outputs are byte-identical across identical runs.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::energy::EnergyBreakdown;
use crate::error::{Result, VkError};
use crate::field::{BoundaryData, GridSpec, PlateState};
use crate::flow::Trajectory;
use crate::thin::LadderRow;

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Data rows of a CSV file: `#` lines and blank lines skipped, a non-numeric first row
/// treated as a header. Returns `(line number, values)`.
fn numeric_rows(src: &str, key: &str) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut rows = Vec::new();
    let mut seen_data = false;
    for (k, line) in src.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = t.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> = cells.iter().map(|c| c.parse::<f64>()).collect();
        match parsed {
            Ok(v) => {
                seen_data = true;
                rows.push((k + 1, v));
            }
            Err(_) if !seen_data && rows.is_empty() => {}
            Err(e) => {
                return Err(VkError::Parse {
                    line: k + 1,
                    msg: format!("{key}: {e}"),
                })
            }
        }
    }
    Ok(rows)
}

fn locate(x: f64, dx: f64, n: usize, l: f64) -> Option<usize> {
    let i = (x / dx).round();
    if i < 0.0 || i as usize >= n || (x - i * dx).abs() > 1e-9 * (1.0 + l) {
        return None;
    }
    Some(i as usize)
}

/// Read `x1,x2,c_1..c_m` rows covering every node of `grid` exactly once.
/// Returns `m` nodal arrays indexed `j * n1 + i`.
pub fn read_node_csv(path: &Path, grid: &GridSpec, m: usize, key: &str) -> Result<Vec<Vec<f64>>> {
    let src = std::fs::read_to_string(path)?;
    let n = grid.n_nodes();
    let mut out = vec![vec![0.0; n]; m];
    let mut seen = vec![false; n];
    for (line, row) in numeric_rows(&src, key)? {
        if row.len() != m + 2 {
            return Err(VkError::Parse {
                line,
                msg: format!("{key}: expected {} columns, got {}", m + 2, row.len()),
            });
        }
        let (Some(i), Some(j)) = (locate(row[0], grid.dx1(), grid.n1, grid.l1), locate(row[1], grid.dx2(), grid.n2, grid.l2)) else {
            return Err(VkError::Parse {
                line,
                msg: format!("{key}: ({}, {}) is not a grid node", row[0], row[1]),
            });
        };
        let k = grid.node(i, j);
        if seen[k] {
            return Err(VkError::Parse {
                line,
                msg: format!("{key}: node ({i}, {j}) given twice"),
            });
        }
        seen[k] = true;
        for c in 0..m {
            out[c][k] = row[c + 2];
        }
    }
    let missing = seen.iter().filter(|s| !**s).count();
    if missing > 0 {
        return Err(VkError::config(key, format!("{} misses {missing} of {n} grid nodes", path.display())));
    }
    Ok(out)
}

/// Read `x1,x2,f` rows at cell centers; returns values in cell order `cj * c1 + ci`.
pub fn read_cell_csv(path: &Path, grid: &GridSpec, key: &str) -> Result<Vec<f64>> {
    let src = std::fs::read_to_string(path)?;
    let mut out = vec![0.0; grid.n_cells()];
    let mut seen = vec![false; grid.n_cells()];
    let (dx1, dx2) = (grid.dx1(), grid.dx2());
    for (line, row) in numeric_rows(&src, key)? {
        if row.len() != 3 {
            return Err(VkError::Parse {
                line,
                msg: format!("{key}: expected 3 columns, got {}", row.len()),
            });
        }
        let ci = locate(row[0] - 0.5 * dx1, dx1, grid.c1(), grid.l1);
        let cj = locate(row[1] - 0.5 * dx2, dx2, grid.c2(), grid.l2);
        let (Some(ci), Some(cj)) = (ci, cj) else {
            return Err(VkError::Parse {
                line,
                msg: format!("{key}: ({}, {}) is not a cell center", row[0], row[1]),
            });
        };
        let k = cj * grid.c1() + ci;
        if seen[k] {
            return Err(VkError::Parse {
                line,
                msg: format!("{key}: cell ({ci}, {cj}) given twice"),
            });
        }
        seen[k] = true;
        out[k] = row[2];
    }
    if seen.iter().any(|s| !s) {
        return Err(VkError::config(key, format!("{} does not cover every cell", path.display())));
    }
    Ok(out)
}

const SNAPSHOT_COLUMNS: &str = "x1,x2,u1,u2,v,gv1_hat,gv2_hat";

/// Plate state as CSV: a `# field=state` header with the grid, then one row per node.
pub fn snapshot_to_string(s: &PlateState) -> String {
    let g = &s.grid;
    let v = s.v_nodal();
    let mut out = format!("# field=state n1={} n2={} l1={} l2={}\n{SNAPSHOT_COLUMNS}\n", g.n1, g.n2, num(g.l1), num(g.l2));
    for j in 0..g.n2 {
        for i in 0..g.n1 {
            let k = g.node(i, j);
            let x = g.node_x(i, j);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                num(x[0]),
                num(x[1]),
                num(s.u[0][k]),
                num(s.u[1][k]),
                num(v[k]),
                num(s.bc.grad_v_hat[0][k]),
                num(s.bc.grad_v_hat[1][k])
            );
        }
    }
    out
}

pub fn write_snapshot(path: &Path, s: &PlateState) -> Result<()> {
    std::fs::write(path, snapshot_to_string(s))?;
    Ok(())
}

/// Rebuild a state from a snapshot. Boundary data are the boundary rows.
pub fn read_snapshot(path: &Path) -> Result<PlateState> {
    let src = std::fs::read_to_string(path)?;
    let header = src
        .lines()
        .find(|l| l.trim_start().starts_with("# field="))
        .ok_or_else(|| VkError::Parse {
            line: 1,
            msg: "snapshot lacks a `# field=state` header".into(),
        })?;
    let mut n1 = None;
    let mut n2 = None;
    let mut l1 = 1.0;
    let mut l2 = 1.0;
    for tok in header.trim_start_matches('#').split_whitespace() {
        let Some((k, v)) = tok.split_once('=') else { continue };
        let bad = || VkError::Parse {
            line: 1,
            msg: format!("bad header entry `{tok}`"),
        };
        match k {
            "field" if v != "state" => {
                return Err(VkError::Parse {
                    line: 1,
                    msg: format!("expected field=state, got `{v}`"),
                })
            }
            "n1" => n1 = Some(v.parse().map_err(|_| bad())?),
            "n2" => n2 = Some(v.parse().map_err(|_| bad())?),
            "l1" => l1 = v.parse().map_err(|_| bad())?,
            "l2" => l2 = v.parse().map_err(|_| bad())?,
            _ => {}
        }
    }
    let (Some(n1), Some(n2)) = (n1, n2) else {
        return Err(VkError::Parse {
            line: 1,
            msg: "snapshot header needs n1 and n2".into(),
        });
    };
    let grid = GridSpec::new(l1, l2, n1, n2)?;
    let mut cols = read_node_csv(path, &grid, 5, "snapshot")?.into_iter();
    let mut next = || cols.next().expect("five columns");
    let (u1, u2, v, g1, g2) = (next(), next(), next(), next(), next());
    let bc = BoundaryData::from_arrays(&grid, [u1.clone(), u2.clone()], v.clone(), [g1, g2])?;
    PlateState::make_state(grid, Arc::new(bc), [u1, u2], v)
}

/// Per-step table `n,t,phi0,d_n,speed,slope,inner_iters,grad_norm`; step 0 leaves
/// step quantities empty.
pub fn run_csv<T>(traj: &Trajectory<T>) -> String {
    let mut out = String::from("n,t,phi0,d_n,speed,slope,inner_iters,grad_norm\n");
    let slope = |n: usize| traj.slopes.as_ref().map(|s| s[n]);
    let _ = writeln!(out, "0,{},{},,,{},,", num(0.0), num(traj.energies[0]), opt(slope(0)));
    for n in 1..traj.states.len() {
        let d = traj.increments[n - 1];
        let st = &traj.stats[n - 1];
        let _ = writeln!(
            out,
            "{n},{},{},{},{},{},{},{}",
            num(n as f64 * traj.tau),
            num(traj.energies[n]),
            num(d),
            num(d / traj.tau),
            opt(slope(n)),
            st.iterations,
            num(st.grad_norm)
        );
    }
    out
}

/// Energy parts over time: `t,phi0_total,phi0_membrane,phi0_bending,phi0_load`.
pub fn energy_csv(tau: f64, parts: &[EnergyBreakdown]) -> String {
    let mut out = String::from("t,phi0_total,phi0_membrane,phi0_bending,phi0_load\n");
    for (n, e) in parts.iter().enumerate() {
        let _ = writeln!(out, "{},{},{},{},{}", num(n as f64 * tau), num(e.total), num(e.membrane), num(e.bending), num(e.load));
    }
    out
}

pub const LADDER_COLUMNS: &str = "h,phi_h,w_part,p_part,f_part,phi0,gap,gap_ratio,p_ratio,d_h,d0,d_gap,d_gap_ratio,cells";

pub fn ladder_csv(rows: &[LadderRow]) -> String {
    let mut out = format!("{LADDER_COLUMNS}\n");
    for r in rows {
        let e = &r.energy;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            num(r.h),
            num(e.total),
            num(e.w_part),
            num(e.p_part),
            num(e.f_part),
            num(r.phi0),
            num(r.gap),
            opt(r.gap_ratio),
            opt(r.p_ratio),
            opt(r.dh),
            opt(r.d0),
            opt(r.d_gap),
            opt(r.d_gap_ratio),
            e.cells
        );
    }
    out
}

/// Read the header and rows of a CSV written by this module.
pub fn read_table(src: &str) -> Result<(Vec<String>, Vec<Vec<Option<f64>>>)> {
    let mut lines = src.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let header: Vec<String> = lines
        .next()
        .map(|(_, l)| l.split(',').map(|s| s.trim().to_string()).collect())
        .unwrap_or_default();
    let mut rows = Vec::new();
    for (k, l) in lines {
        let row = l
            .split(',')
            .map(|c| {
                let c = c.trim();
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>().map(Some).map_err(|e| VkError::Parse {
                        line: k + 1,
                        msg: e.to_string(),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != header.len() {
            return Err(VkError::Parse {
                line: k + 1,
                msg: format!("expected {} columns, got {}", header.len(), row.len()),
            });
        }
        rows.push(row);
    }
    Ok((header, rows))
}
