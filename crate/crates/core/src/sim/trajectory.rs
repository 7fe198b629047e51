use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

/// One row of a simulated trajectory, taken at a sample boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: DVector<f64>,
    pub xi: DVector<f64>,
    pub xi_m: DVector<f64>,
    pub theta: DMatrix<f64>,
    pub v: DVector<f64>,
    pub v_s: DVector<f64>,
    pub u_cmd: DVector<f64>,
    pub u_applied: DVector<f64>,
    pub f_max: f64,
    pub h_max: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn header(n: usize, r: usize, m: usize) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((1..=n).map(|i| format!("x{i}")));
        h.extend((1..=r).map(|i| format!("xi{i}")));
        h.extend((1..=r).map(|i| format!("xim{i}")));
        for i in 1..=r {
            h.extend((1..=m).map(|j| format!("th_{i}_{j}")));
        }
        h.extend((1..=r).map(|i| format!("v{i}")));
        h.extend((1..=r).map(|i| format!("vs{i}")));
        h.extend((1..=m).map(|j| format!("ucmd{j}")));
        h.extend((1..=m).map(|j| format!("uapp{j}")));
        h.push("f_max".into());
        h.push("h_max".into());
        h
    }

    /// Writes the trajectory as CSV; floats use the shortest representation
    /// that round-trips exactly.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let Some(first) = self.samples.first() else {
            return Ok(());
        };
        let (r, m) = first.theta.shape();
        writeln!(w, "{}", Self::header(first.x.len(), r, m).join(","))?;
        let mut line = String::new();
        for s in &self.samples {
            line.clear();
            push(&mut line, s.t);
            let rows_theta = (0..r).flat_map(|i| (0..m).map(move |j| (i, j)));
            for v in s.x.iter().chain(&s.xi).chain(&s.xi_m) {
                push(&mut line, *v);
            }
            for (i, j) in rows_theta {
                push(&mut line, s.theta[(i, j)]);
            }
            for v in s.v.iter().chain(&s.v_s).chain(&s.u_cmd).chain(&s.u_applied) {
                push(&mut line, *v);
            }
            push(&mut line, s.f_max);
            push(&mut line, s.h_max);
            writeln!(w, "{}", &line[1..])?;
        }
        Ok(())
    }
}

fn push(line: &mut String, v: f64) {
    use std::fmt::Write as _;
    let _ = write!(line, ",{v:?}");
}
