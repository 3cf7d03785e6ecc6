//! Alternating best response versus simultaneous gradient ascent-descent
//! on `f(x, y) = y^2 - x^2 + alpha x y`, maximized in `x` and minimized in
//! `y`. The saddle point is the origin.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Alternating,
    SimultaneousGda,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Alternating => "ALTERNATING",
            Method::SimultaneousGda => "SIMULTANEOUS_GDA",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Diverged,
    Converged,
    Undecided,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Diverged => "DIVERGED",
            Verdict::Converged => "CONVERGED",
            Verdict::Undecided => "UNDECIDED",
        })
    }
}

pub const DIVERGED_NORM: f64 = 1e6;
pub const CONVERGED_NORM: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleTrajectory {
    pub method: Method,
    pub alpha: f64,
    /// Step size (simultaneous method only).
    pub eta: Option<f64>,
    /// Iterates, starting with the initial point.
    pub points: Vec<(f64, f64)>,
}

impl SaddleTrajectory {
    pub fn final_norm(&self) -> f64 {
        let (x, y) = *self.points.last().expect("trajectory holds the initial point");
        x.hypot(y)
    }

    /// Final norm above 1e6 (or not finite) diverged, below 1e-6 converged.
    pub fn verdict(&self) -> Verdict {
        let n = self.final_norm();
        if !n.is_finite() || n > DIVERGED_NORM {
            Verdict::Diverged
        } else if n < CONVERGED_NORM {
            Verdict::Converged
        } else {
            Verdict::Undecided
        }
    }

    /// CSV with header `iter,x,y`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,x,y\n");
        for (i, (x, y)) in self.points.iter().enumerate() {
            out.push_str(&format!("{i},{x},{y}\n"));
        }
        out
    }
}

/// Each round: `x <- (alpha/2) y`, then `y <- -(alpha/2) x` with the new `x`.
pub fn alternating_best_response(alpha: f64, init: (f64, f64), iters: usize) -> SaddleTrajectory {
    let h = alpha / 2.0;
    let mut points = Vec::with_capacity(iters + 1);
    let (mut x, mut y) = init;
    points.push((x, y));
    for _ in 0..iters {
        x = h * y;
        y = -h * x;
        points.push((x, y));
    }
    SaddleTrajectory {
        method: Method::Alternating,
        alpha,
        eta: None,
        points,
    }
}

/// Each iteration, from the same point: `x <- x + eta (-2x + alpha y)`,
/// `y <- y - eta (2y + alpha x)`.
pub fn simultaneous_gda(alpha: f64, eta: f64, init: (f64, f64), iters: usize) -> SaddleTrajectory {
    assert!(eta > 0.0, "step size must be positive");
    let mut points = Vec::with_capacity(iters + 1);
    let (mut x, mut y) = init;
    points.push((x, y));
    for _ in 0..iters {
        let gx = -2.0 * x + alpha * y;
        let gy = 2.0 * y + alpha * x;
        x += eta * gx;
        y -= eta * gy;
        points.push((x, y));
    }
    SaddleTrajectory {
        method: Method::SimultaneousGda,
        alpha,
        eta: Some(eta),
        points,
    }
}

/// Iteration matrix of the simultaneous update: `[[1-2eta, eta alpha], [-eta alpha, 1-2eta]]`.
pub fn gda_matrix(alpha: f64, eta: f64) -> [[f64; 2]; 2] {
    [[1.0 - 2.0 * eta, eta * alpha], [-eta * alpha, 1.0 - 2.0 * eta]]
}

/// Largest eigenvalue modulus of a real 2x2 matrix.
pub fn spectral_radius(m: [[f64; 2]; 2]) -> f64 {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        (tr / 2.0 + s).abs().max((tr / 2.0 - s).abs())
    } else {
        det.sqrt()
    }
}
