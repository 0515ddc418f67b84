use serde::{Deserialize, Serialize};

/// A 2-D affine map `p ↦ M·p + t`, stored as `[[m00, m01, tx], [m10, m11, ty]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine2(pub [[f64; 3]; 2]);

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);

    pub fn translation(tx: f64, ty: f64) -> Self {
        Affine2([[1.0, 0.0, tx], [0.0, 1.0, ty]])
    }

    pub fn scaling(sx: f64, sy: f64) -> Self {
        Affine2([[sx, 0.0, 0.0], [0.0, sy, 0.0]])
    }

    /// Rotation by `theta` radians about the origin in image coordinates (y down),
    /// so a positive angle turns +x towards +y.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Affine2([[c, -s, 0.0], [s, c, 0.0]])
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let m = &self.0;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2],
        ]
    }

    /// `self ∘ other`: applies `other` first.
    pub fn then_after(&self, other: &Affine2) -> Affine2 {
        let a = &self.0;
        let b = &other.0;
        let mut out = [[0.0; 3]; 2];
        for (r, row) in out.iter_mut().enumerate() {
            for c in 0..3 {
                row[c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
            row[2] += a[r][2];
        }
        Affine2(out)
    }

    pub fn linear(&self) -> [[f64; 2]; 2] {
        let m = &self.0;
        [[m[0][0], m[0][1]], [m[1][0], m[1][1]]]
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    /// Panics if the map is singular; every map built by this crate is invertible.
    pub fn inverse(&self) -> Affine2 {
        let m = &self.0;
        let det = self.determinant();
        assert!(det != 0.0, "singular affine map");
        let i00 = m[1][1] / det;
        let i01 = -m[0][1] / det;
        let i10 = -m[1][0] / det;
        let i11 = m[0][0] / det;
        Affine2([
            [i00, i01, -(i00 * m[0][2] + i01 * m[1][2])],
            [i10, i11, -(i10 * m[0][2] + i11 * m[1][2])],
        ])
    }
}

/// `J·Σ·Jᵀ` for a 2×2 linear map `J`.
pub fn transform_covariance(j: [[f64; 2]; 2], s: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut js = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            js[r][c] = j[r][0] * s[0][c] + j[r][1] * s[1][c];
        }
    }
    let mut out = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            out[r][c] = js[r][0] * j[c][0] + js[r][1] * j[c][1];
        }
    }
    out
}
