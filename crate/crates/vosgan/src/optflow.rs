//! Dense two-frame optical flow via polynomial expansion, plus flow
//! utilities (whole-clip flow, [0,1] normalization, color rendering).
//!
//! Each frame is approximated per pixel by a local quadratic
//! f(x) ~ x'Ax + b'x + c fitted by Gaussian-weighted least squares; the
//! displacement field is then solved coarse-to-fine from coefficient
//! differences, refined over a uniform window. All internal arithmetic is
//! f64; planes convert at the API boundary.

use thiserror::Error;

use crate::clips::{FlowClip, VideoClip};
use crate::plane::Plane;

/// Default cap used when mapping signed flow into [0,1].
pub const DEFAULT_FLOW_MAX: f64 = 8.0;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("bad flow parameters: {0}")]
    BadParams(String),
    #[error("frame shapes differ: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("image {0}x{1} smaller than polynomial neighborhood {2}")]
    TooSmall(usize, usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FarnebackParams {
    pub pyramid_levels: usize,
    pub pyramid_scale: f64,
    /// Side of the uniform averaging window for the displacement solve; odd.
    pub window_size: usize,
    pub iterations: usize,
    /// Side of the Gaussian-weighted fitting neighborhood; odd.
    pub poly_n: usize,
    pub poly_sigma: f64,
}

impl Default for FarnebackParams {
    fn default() -> Self {
        FarnebackParams {
            pyramid_levels: 3,
            pyramid_scale: 0.5,
            window_size: 15,
            iterations: 3,
            poly_n: 5,
            poly_sigma: 1.1,
        }
    }
}

impl FarnebackParams {
    pub fn validate(&self) -> Result<(), FlowError> {
        if self.pyramid_levels == 0 {
            return Err(FlowError::BadParams("pyramid_levels must be >= 1".into()));
        }
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return Err(FlowError::BadParams("pyramid_scale must lie in (0,1)".into()));
        }
        if self.window_size < 3 || self.window_size % 2 == 0 {
            return Err(FlowError::BadParams("window_size must be odd and >= 3".into()));
        }
        if self.iterations == 0 {
            return Err(FlowError::BadParams("iterations must be >= 1".into()));
        }
        if self.poly_n < 3 || self.poly_n % 2 == 0 {
            return Err(FlowError::BadParams("poly_n must be odd and >= 3".into()));
        }
        if self.poly_sigma <= 0.0 {
            return Err(FlowError::BadParams("poly_sigma must be positive".into()));
        }
        Ok(())
    }
}

/// f64 image buffer used internally; replicate border semantics throughout.
#[derive(Debug, Clone)]
struct Grid {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Grid {
    fn zeros(h: usize, w: usize) -> Self {
        Grid { h, w, v: vec![0.0; h * w] }
    }

    fn from_plane(p: &Plane) -> Self {
        Grid { h: p.height, w: p.width, v: p.data.iter().map(|&x| x as f64).collect() }
    }

    fn get(&self, y: usize, x: usize) -> f64 {
        self.v[y * self.w + x]
    }

    /// Clamp-to-edge integer fetch for signed coordinates.
    fn at(&self, y: isize, x: isize) -> f64 {
        let yy = y.clamp(0, self.h as isize - 1) as usize;
        let xx = x.clamp(0, self.w as isize - 1) as usize;
        self.v[yy * self.w + xx]
    }

    /// Clamp-to-edge bilinear sample at fractional (x, y).
    fn sample(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.w - 1);
        let y1 = (y0 + 1).min(self.h - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(y0, x0) * (1.0 - fx) + self.get(y0, x1) * fx;
        let bot = self.get(y1, x0) * (1.0 - fx) + self.get(y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    /// Bilinear resize with half-pixel centers.
    fn resize(&self, h: usize, w: usize) -> Grid {
        let mut out = Grid::zeros(h, w);
        let sy = self.h as f64 / h as f64;
        let sx = self.w as f64 / w as f64;
        for y in 0..h {
            for x in 0..w {
                let src_x = (x as f64 + 0.5) * sx - 0.5;
                let src_y = (y as f64 + 0.5) * sy - 0.5;
                out.v[y * w + x] = self.sample(src_x, src_y);
            }
        }
        out
    }

    /// Separable Gaussian blur; replicate borders.
    fn blur(&self, sigma: f64) -> Grid {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (4.0 * sigma).round().max(1.0) as isize;
        let mut k = Vec::with_capacity((2 * radius + 1) as usize);
        for i in -radius..=radius {
            k.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
        }
        let sum: f64 = k.iter().sum();
        for v in &mut k {
            *v /= sum;
        }
        let mut tmp = Grid::zeros(self.h, self.w);
        for y in 0..self.h {
            for x in 0..self.w {
                let mut acc = 0.0;
                for (j, &kv) in k.iter().enumerate() {
                    acc += kv * self.at(y as isize, x as isize + j as isize - radius);
                }
                tmp.v[y * self.w + x] = acc;
            }
        }
        let mut out = Grid::zeros(self.h, self.w);
        for y in 0..self.h {
            for x in 0..self.w {
                let mut acc = 0.0;
                for (j, &kv) in k.iter().enumerate() {
                    acc += kv * tmp.at(y as isize + j as isize - radius, x as isize);
                }
                out.v[y * self.w + x] = acc;
            }
        }
        out
    }

    /// Mean over a clipped (2r+1)-square window via an integral image.
    fn box_mean(&self, radius: usize) -> Grid {
        let (h, w) = (self.h, self.w);
        let mut integral = vec![0.0f64; (h + 1) * (w + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += self.v[y * w + x];
                integral[(y + 1) * (w + 1) + (x + 1)] = integral[y * (w + 1) + (x + 1)] + row;
            }
        }
        let r = radius as isize;
        let mut out = Grid::zeros(h, w);
        for y in 0..h {
            let y0 = (y as isize - r).max(0) as usize;
            let y1 = ((y as isize + r + 1).min(h as isize)) as usize;
            for x in 0..w {
                let x0 = (x as isize - r).max(0) as usize;
                let x1 = ((x as isize + r + 1).min(w as isize)) as usize;
                let s = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1]
                    - integral[y1 * (w + 1) + x0]
                    + integral[y0 * (w + 1) + x0];
                out.v[y * w + x] = s / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
        out
    }

    fn to_plane(&self) -> Plane {
        Plane::new(self.h, self.w, self.v.iter().map(|&x| x as f32).collect())
    }
}

/// Per-pixel quadratic coefficients: f(x) ~ x'Ax + b'x + c with x = (dx, dy)
/// in pixel offsets (dx horizontal, dy vertical) and A symmetric.
pub struct PolyCoeffs {
    pub height: usize,
    pub width: usize,
    a11: Grid,
    a12: Grid,
    a22: Grid,
    bx: Grid,
    by: Grid,
    c: Grid,
}

impl PolyCoeffs {
    /// (A row-major [[a11,a12],[a12,a22]], b = (bx,by), c) at a pixel.
    pub fn at(&self, y: usize, x: usize) -> ([[f64; 2]; 2], [f64; 2], f64) {
        let a11 = self.a11.get(y, x);
        let a12 = self.a12.get(y, x);
        let a22 = self.a22.get(y, x);
        (
            [[a11, a12], [a12, a22]],
            [self.bx.get(y, x), self.by.get(y, x)],
            self.c.get(y, x),
        )
    }
}

/// Normalized 1-d Gaussian taps over [-m, m].
fn gauss_taps(m: isize, sigma: f64) -> Vec<f64> {
    let mut g = Vec::with_capacity((2 * m + 1) as usize);
    for i in -m..=m {
        g.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = g.iter().sum();
    for v in &mut g {
        *v /= sum;
    }
    g
}

/// Inverse of a symmetric 3x3 via the adjugate.
fn inv3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    assert!(det.abs() > 1e-300, "singular moment matrix");
    let id = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    out[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * id;
    out[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * id;
    out[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * id;
    out[1][0] = out[0][1];
    out[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * id;
    out[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * id;
    out[2][0] = out[0][2];
    out[2][1] = out[1][2];
    out[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * id;
    out
}

fn expand_grid(f: &Grid, params: &FarnebackParams) -> Result<PolyCoeffs, FlowError> {
    params.validate()?;
    let (h, w) = (f.h, f.w);
    if h < params.poly_n || w < params.poly_n {
        return Err(FlowError::TooSmall(h, w, params.poly_n));
    }
    let m = (params.poly_n as isize - 1) / 2;
    let g = gauss_taps(m, params.poly_sigma);
    let xg: Vec<f64> = g.iter().enumerate().map(|(j, &v)| (j as isize - m) as f64 * v).collect();
    let xxg: Vec<f64> =
        g.iter().enumerate().map(|(j, &v)| ((j as isize - m) * (j as isize - m)) as f64 * v).collect();

    // Separable correlations: s{pq} holds sum of a * dx^p * dy^q * f.
    let mut r0 = Grid::zeros(h, w);
    let mut r1 = Grid::zeros(h, w);
    let mut r2 = Grid::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
            for j in 0..g.len() {
                let v = f.at(y as isize, x as isize + j as isize - m);
                s0 += g[j] * v;
                s1 += xg[j] * v;
                s2 += xxg[j] * v;
            }
            r0.v[y * w + x] = s0;
            r1.v[y * w + x] = s1;
            r2.v[y * w + x] = s2;
        }
    }
    let mut s00 = Grid::zeros(h, w);
    let mut s10 = Grid::zeros(h, w);
    let mut s01 = Grid::zeros(h, w);
    let mut s20 = Grid::zeros(h, w);
    let mut s02 = Grid::zeros(h, w);
    let mut s11 = Grid::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let (mut b1, mut by, mut byy, mut bx, mut bxy, mut bxx) =
                (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for j in 0..g.len() {
                let yy = y as isize + j as isize - m;
                let v0 = r0.at(yy, x as isize);
                let v1 = r1.at(yy, x as isize);
                let v2 = r2.at(yy, x as isize);
                b1 += g[j] * v0;
                by += xg[j] * v0;
                byy += xxg[j] * v0;
                bx += g[j] * v1;
                bxy += xg[j] * v1;
                bxx += g[j] * v2;
            }
            let i = y * w + x;
            s00.v[i] = b1;
            s10.v[i] = bx;
            s01.v[i] = by;
            s20.v[i] = bxx;
            s02.v[i] = byy;
            s11.v[i] = bxy;
        }
    }

    // The weighted Gram matrix is constant across pixels. With normalized
    // taps its distinct entries are the pure moments m2 = sum a*dx^2,
    // m4 = sum a*dx^4 and the cross moment m2^2; (1, dx^2, dy^2) couple
    // through a 3x3 block while dx, dy, dx*dy stay diagonal.
    let m2: f64 = g.iter().enumerate().map(|(j, &v)| ((j as isize - m) * (j as isize - m)) as f64 * v).sum();
    let m4: f64 = g
        .iter()
        .enumerate()
        .map(|(j, &v)| (((j as isize - m) * (j as isize - m)) as f64).powi(2) * v)
        .sum();
    let binv = inv3([[1.0, m2, m2], [m2, m4, m2 * m2], [m2, m2 * m2, m4]]);

    let mut out = PolyCoeffs {
        height: h,
        width: w,
        a11: Grid::zeros(h, w),
        a12: Grid::zeros(h, w),
        a22: Grid::zeros(h, w),
        bx: Grid::zeros(h, w),
        by: Grid::zeros(h, w),
        c: Grid::zeros(h, w),
    };
    for i in 0..h * w {
        let (v1, vxx, vyy) = (s00.v[i], s20.v[i], s02.v[i]);
        out.c.v[i] = binv[0][0] * v1 + binv[0][1] * vxx + binv[0][2] * vyy;
        out.a11.v[i] = binv[1][0] * v1 + binv[1][1] * vxx + binv[1][2] * vyy;
        out.a22.v[i] = binv[2][0] * v1 + binv[2][1] * vxx + binv[2][2] * vyy;
        out.bx.v[i] = s10.v[i] / m2;
        out.by.v[i] = s01.v[i] / m2;
        // Fitted coefficient on dx*dy equals 2*A12.
        out.a12.v[i] = s11.v[i] / (m2 * m2) / 2.0;
    }
    Ok(out)
}

/// Gaussian-weighted least-squares quadratic fit around every pixel.
pub fn polynomial_expansion(frame: &Plane, params: &FarnebackParams) -> Result<PolyCoeffs, FlowError> {
    expand_grid(&Grid::from_plane(frame), params)
}

/// One refinement pass: rebuild the per-pixel 2x2 systems from the two
/// expansions under the current displacement, average them over the window,
/// and solve.
fn update_flow(
    e1: &PolyCoeffs,
    e2: &PolyCoeffs,
    du: &mut Grid,
    dv: &mut Grid,
    window: usize,
) {
    let (h, w) = (e1.height, e1.width);
    let mut t11 = Grid::zeros(h, w);
    let mut t12 = Grid::zeros(h, w);
    let mut t22 = Grid::zeros(h, w);
    let mut h1 = Grid::zeros(h, w);
    let mut h2 = Grid::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let fx = (x as f64 + du.v[i]).clamp(0.0, (w - 1) as f64);
            let fy = (y as f64 + dv.v[i]).clamp(0.0, (h - 1) as f64);
            // Effective displacement after clamping keeps the linearization
            // consistent with the coefficients actually fetched.
            let ue = fx - x as f64;
            let ve = fy - y as f64;
            let a11 = 0.5 * (e1.a11.v[i] + e2.a11.sample(fx, fy));
            let a12 = 0.5 * (e1.a12.v[i] + e2.a12.sample(fx, fy));
            let a22 = 0.5 * (e1.a22.v[i] + e2.a22.sample(fx, fy));
            let db1 = -0.5 * (e2.bx.sample(fx, fy) - e1.bx.v[i]) + a11 * ue + a12 * ve;
            let db2 = -0.5 * (e2.by.sample(fx, fy) - e1.by.v[i]) + a12 * ue + a22 * ve;
            t11.v[i] = a11 * a11 + a12 * a12;
            t12.v[i] = a12 * (a11 + a22);
            t22.v[i] = a12 * a12 + a22 * a22;
            h1.v[i] = a11 * db1 + a12 * db2;
            h2.v[i] = a12 * db1 + a22 * db2;
        }
    }
    let r = (window - 1) / 2;
    let g11 = t11.box_mean(r);
    let g12 = t12.box_mean(r);
    let g22 = t22.box_mean(r);
    let m1 = h1.box_mean(r);
    let m2 = h2.box_mean(r);
    let cap_u = w as f64;
    let cap_v = h as f64;
    for i in 0..h * w {
        let det = g11.v[i] * g22.v[i] - g12.v[i] * g12.v[i];
        if det > 1e-12 {
            du.v[i] = ((g22.v[i] * m1.v[i] - g12.v[i] * m2.v[i]) / det).clamp(-cap_u, cap_u);
            dv.v[i] = ((g11.v[i] * m2.v[i] - g12.v[i] * m1.v[i]) / det).clamp(-cap_v, cap_v);
        } else {
            du.v[i] = 0.0;
            dv.v[i] = 0.0;
        }
    }
}

fn flow_grids(a: &Grid, b: &Grid, params: &FarnebackParams) -> Result<(Grid, Grid), FlowError> {
    params.validate()?;
    if a.h != b.h || a.w != b.w {
        return Err(FlowError::ShapeMismatch(a.h, a.w, b.h, b.w));
    }
    if a.h < params.poly_n || a.w < params.poly_n {
        return Err(FlowError::TooSmall(a.h, a.w, params.poly_n));
    }

    // Each level is built from the originals so resampling error does not
    // cascade; levels too small for the fit are dropped.
    let mut sizes = Vec::new();
    for l in 0..params.pyramid_levels {
        let s = params.pyramid_scale.powi(l as i32);
        let h = (a.h as f64 * s).round() as usize;
        let w = (a.w as f64 * s).round() as usize;
        if h < params.poly_n || w < params.poly_n {
            break;
        }
        sizes.push((h, w));
    }
    if sizes.is_empty() {
        sizes.push((a.h, a.w));
    }

    let mut du = Grid::zeros(sizes[sizes.len() - 1].0, sizes[sizes.len() - 1].1);
    let mut dv = du.clone();
    for &(h, w) in sizes.iter().rev() {
        let sigma = 0.5 * ((a.h as f64 / h as f64) - 1.0);
        let al = if (h, w) == (a.h, a.w) { a.clone() } else { a.blur(sigma).resize(h, w) };
        let bl = if (h, w) == (b.h, b.w) { b.clone() } else { b.blur(sigma).resize(h, w) };
        if (du.h, du.w) != (h, w) {
            let (ph, pw) = (du.h, du.w);
            let mut nu = du.resize(h, w);
            let mut nv = dv.resize(h, w);
            let ku = w as f64 / pw as f64;
            let kv = h as f64 / ph as f64;
            for v in &mut nu.v {
                *v *= ku;
            }
            for v in &mut nv.v {
                *v *= kv;
            }
            du = nu;
            dv = nv;
        }
        let e1 = expand_grid(&al, params)?;
        let e2 = expand_grid(&bl, params)?;
        for _ in 0..params.iterations {
            update_flow(&e1, &e2, &mut du, &mut dv, params.window_size);
        }
    }
    Ok((du, dv))
}

/// Signed displacement field mapping `a` onto `b`: a pixel at p in `a`
/// appears at p + (u(p), v(p)) in `b`. Returns the (u, v) planes.
pub fn farneback_flow(a: &Plane, b: &Plane, params: &FarnebackParams) -> Result<(Plane, Plane), FlowError> {
    let (du, dv) = flow_grids(&Grid::from_plane(a), &Grid::from_plane(b), params)?;
    Ok((du.to_plane(), dv.to_plane()))
}

/// Flow over consecutive frame pairs of a clip; entry t maps frame t to
/// frame t+1 and the final entry duplicates the last computed pair.
pub fn clip_flow(video: &VideoClip, params: &FarnebackParams) -> Result<FlowClip, FlowError> {
    let t_total = video.frames;
    let (h, w) = (video.height, video.width);
    let mut out = FlowClip::zeros(t_total, h, w);
    if t_total < 2 {
        return Ok(out);
    }
    let mut prev = Grid { h, w, v: video.luma01(0).iter().map(|&x| x as f64).collect() };
    for t in 0..t_total - 1 {
        let next = Grid { h, w, v: video.luma01(t + 1).iter().map(|&x| x as f64).collect() };
        let (du, dv) = flow_grids(&prev, &next, params)?;
        for y in 0..h {
            for x in 0..w {
                out.set(0, t, y, x, du.get(y, x) as f32);
                out.set(1, t, y, x, dv.get(y, x) as f32);
            }
        }
        prev = next;
    }
    for y in 0..h {
        for x in 0..w {
            out.set(0, t_total - 1, y, x, out.get(0, t_total - 2, y, x));
            out.set(1, t_total - 1, y, x, out.get(1, t_total - 2, y, x));
        }
    }
    Ok(out)
}

/// clamp(v / (2 flow_max) + 1/2, 0, 1).
pub fn normalize_flow_value(v: f64, flow_max: f64) -> f64 {
    (v / (2.0 * flow_max) + 0.5).clamp(0.0, 1.0)
}

/// Exact inverse of the normalization on the open interval.
pub fn denormalize_flow_value(n: f64, flow_max: f64) -> f64 {
    (n - 0.5) * 2.0 * flow_max
}

/// Maps a signed FlowClip into [0,1]; values beyond +-flow_max saturate.
pub fn flow_normalize(flow: &FlowClip, flow_max: f64) -> FlowClip {
    let data = flow.data().iter().map(|&v| normalize_flow_value(v as f64, flow_max) as f32).collect();
    FlowClip::new(flow.frames, flow.height, flow.width, data).expect("normalized flow is finite")
}

/// Inverse of flow_normalize for values that did not saturate.
pub fn flow_denormalize(flow: &FlowClip, flow_max: f64) -> FlowClip {
    let data = flow.data().iter().map(|&v| denormalize_flow_value(v as f64, flow_max) as f32).collect();
    FlowClip::new(flow.frames, flow.height, flow.width, data).expect("denormalized flow is finite")
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [(r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8]
}

/// Renders one flow frame as row-major RGB bytes: hue encodes direction,
/// saturation encodes magnitude relative to `max_mag` (field maximum when
/// None), full value everywhere.
pub fn flow_to_color(flow: &FlowClip, t: usize, max_mag: Option<f64>) -> Vec<u8> {
    let (h, w) = (flow.height, flow.width);
    let mut cap = max_mag.unwrap_or_else(|| {
        let mut m = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                let u = flow.get(0, t, y, x) as f64;
                let v = flow.get(1, t, y, x) as f64;
                m = m.max((u * u + v * v).sqrt());
            }
        }
        m
    });
    if cap <= 0.0 {
        cap = 1.0;
    }
    let mut out = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let u = flow.get(0, t, y, x) as f64;
            let v = flow.get(1, t, y, x) as f64;
            let mag = (u * u + v * v).sqrt();
            let ang = v.atan2(u);
            let hue = (ang + std::f64::consts::PI) / (2.0 * std::f64::consts::PI);
            let rgb = hsv_to_rgb(hue, (mag / cap).clamp(0.0, 1.0), 1.0);
            out.extend_from_slice(&rgb);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Lcg(u64);

    impl Lcg {
        fn next_f64(&mut self) -> f64 {
            self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((self.0 >> 11) as f64) / ((1u64 << 53) as f64)
        }
    }

    fn plane_from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Plane {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x) as f32);
            }
        }
        Plane::new(h, w, data)
    }

    /// Smooth random texture in [0,1]; blurred white noise.
    fn smooth_texture(h: usize, w: usize, seed: u64) -> Grid {
        let mut rng = Lcg(seed);
        let mut g = Grid::zeros(h, w);
        for v in &mut g.v {
            *v = rng.next_f64();
        }
        let b = g.blur(1.2);
        let lo = b.v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = b.v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut out = b;
        for v in &mut out.v {
            *v = (*v - lo) / (hi - lo + 1e-12);
        }
        out
    }

    /// Crops a window from a larger texture so (a, b) differ by an exact
    /// integer translation: content of a moves by (dx, dy) in b.
    fn shifted_pair(big: &Grid, h: usize, w: usize, oy: usize, ox: usize, dy: i32, dx: i32) -> (Plane, Plane) {
        let a = plane_from_fn(h, w, |y, x| big.get(oy + y, ox + x));
        let b = plane_from_fn(h, w, |y, x| {
            let yy = (oy + y) as i64 - dy as i64;
            let xx = (ox + x) as i64 - dx as i64;
            big.get(yy as usize, xx as usize)
        });
        (a, b)
    }

    /// Exhaustive block matching at integer shifts; minimal SSD, ties to the
    /// smaller displacement. Used as the independent accuracy reference.
    fn block_match(a: &Plane, b: &Plane, max_shift: i32, radius: i32) -> (Vec<f64>, Vec<f64>) {
        let (h, w) = (a.height as i32, a.width as i32);
        let mut shifts = Vec::new();
        for dy in -max_shift..=max_shift {
            for dx in -max_shift..=max_shift {
                shifts.push((dx, dy));
            }
        }
        shifts.sort_by_key(|&(dx, dy)| dx * dx + dy * dy);
        let fetch = |p: &Plane, y: i32, x: i32| -> f64 {
            p.get(y.clamp(0, h - 1) as usize, x.clamp(0, w - 1) as usize) as f64
        };
        let mut u = vec![0.0; (h * w) as usize];
        let mut v = vec![0.0; (h * w) as usize];
        for y in 0..h {
            for x in 0..w {
                let mut best = f64::INFINITY;
                let mut arg = (0, 0);
                for &(dx, dy) in &shifts {
                    let mut ssd = 0.0;
                    for qy in -radius..=radius {
                        for qx in -radius..=radius {
                            let d = fetch(a, y + qy, x + qx) - fetch(b, y + dy + qy, x + dx + qx);
                            ssd += d * d;
                        }
                    }
                    if ssd < best {
                        best = ssd;
                        arg = (dx, dy);
                    }
                }
                u[(y * w + x) as usize] = arg.0 as f64;
                v[(y * w + x) as usize] = arg.1 as f64;
            }
        }
        (u, v)
    }

    fn median(mut xs: Vec<f64>) -> f64 {
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs[xs.len() / 2]
    }

    #[test]
    fn params_validation_rejects_bad_values() {
        let ok = FarnebackParams::default();
        assert!(ok.validate().is_ok());
        assert!(FarnebackParams { window_size: 14, ..ok }.validate().is_err());
        assert!(FarnebackParams { pyramid_scale: 1.0, ..ok }.validate().is_err());
        assert!(FarnebackParams { poly_n: 4, ..ok }.validate().is_err());
        assert!(FarnebackParams { iterations: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn expansion_of_constant_image_is_pure_offset() {
        let p = FarnebackParams::default();
        let k = 0.37;
        let frame = plane_from_fn(16, 16, |_, _| k);
        let e = polynomial_expansion(&frame, &p).unwrap();
        for y in 3..13 {
            for x in 3..13 {
                let (a, b, c) = e.at(y, x);
                assert!((c - k).abs() < 1e-6, "c at ({y},{x}) = {c}");
                for row in a {
                    for v in row {
                        assert!(v.abs() < 1e-6);
                    }
                }
                assert!(b[0].abs() < 1e-6 && b[1].abs() < 1e-6);
            }
        }
    }

    /// Direct dense weighted normal-equations fit at one pixel; shares only
    /// the weight and basis definitions with the implementation.
    fn dense_fit(frame: &Plane, y: usize, x: usize, n: usize, sigma: f64) -> [f64; 6] {
        let m = (n as isize - 1) / 2;
        let mut taps = Vec::new();
        for i in -m..=m {
            taps.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
        }
        let s: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= s;
        }
        let fetch = |yy: isize, xx: isize| -> f64 {
            frame.get(
                yy.clamp(0, frame.height as isize - 1) as usize,
                xx.clamp(0, frame.width as isize - 1) as usize,
            ) as f64
        };
        // Basis (1, dx, dy, dx^2, dy^2, dx*dy).
        let mut ata = [[0.0f64; 6]; 6];
        let mut atb = [0.0f64; 6];
        for j in -m..=m {
            for i in -m..=m {
                let a = taps[(i + m) as usize] * taps[(j + m) as usize];
                let (dx, dy) = (i as f64, j as f64);
                let phi = [1.0, dx, dy, dx * dx, dy * dy, dx * dy];
                let f = fetch(y as isize + j, x as isize + i);
                for r in 0..6 {
                    for c in 0..6 {
                        ata[r][c] += a * phi[r] * phi[c];
                    }
                    atb[r] += a * phi[r] * f;
                }
            }
        }
        // Gaussian elimination with partial pivoting.
        for col in 0..6 {
            let mut piv = col;
            for r in col + 1..6 {
                if ata[r][col].abs() > ata[piv][col].abs() {
                    piv = r;
                }
            }
            ata.swap(col, piv);
            atb.swap(col, piv);
            let d = ata[col][col];
            for r in col + 1..6 {
                let f = ata[r][col] / d;
                for c in col..6 {
                    ata[r][c] -= f * ata[col][c];
                }
                atb[r] -= f * atb[col];
            }
        }
        let mut sol = [0.0f64; 6];
        for r in (0..6).rev() {
            let mut acc = atb[r];
            for c in r + 1..6 {
                acc -= ata[r][c] * sol[c];
            }
            sol[r] = acc / ata[r][r];
        }
        sol
    }

    #[test]
    fn expansion_matches_dense_normal_equations_on_ramp_and_quadratic() {
        let p = FarnebackParams::default();
        let ramp = plane_from_fn(20, 20, |_, x| 2.0 * x as f64);
        let quad = plane_from_fn(20, 20, |_, x| (x * x) as f64);
        for (frame, label) in [(&ramp, "ramp"), (&quad, "quad")] {
            let e = polynomial_expansion(frame, &p).unwrap();
            for &(y, x) in &[(5usize, 5usize), (10, 9), (14, 12), (7, 13)] {
                let (a, b, c) = e.at(y, x);
                let sol = dense_fit(frame, y, x, p.poly_n, p.poly_sigma);
                assert!((c - sol[0]).abs() < 1e-6, "{label} c");
                assert!((b[0] - sol[1]).abs() < 1e-6, "{label} bx");
                assert!((b[1] - sol[2]).abs() < 1e-6, "{label} by");
                assert!((a[0][0] - sol[3]).abs() < 1e-6, "{label} a11");
                assert!((a[1][1] - sol[4]).abs() < 1e-6, "{label} a22");
                assert!((a[0][1] - sol[5] / 2.0).abs() < 1e-6, "{label} a12");
            }
        }
        // Analytic truth: the ramp and quadratic lie in the basis span, so
        // interior fits are exact up to arithmetic noise.
        let er = polynomial_expansion(&ramp, &p).unwrap();
        let (a, b, _) = er.at(10, 10);
        assert!((b[0] - 2.0).abs() < 1e-3 && b[1].abs() < 1e-3);
        assert!(a[0][0].abs() < 1e-3 && a[1][1].abs() < 1e-3);
        let eq = polynomial_expansion(&quad, &p).unwrap();
        let (aq, _, _) = eq.at(10, 10);
        assert!((aq[0][0] - 1.0).abs() < 1e-2, "a11 = {}", aq[0][0]);
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let tex = smooth_texture(32, 32, 7);
        let a = tex.to_plane();
        let (u, v) = farneback_flow(&a, &a, &FarnebackParams::default()).unwrap();
        for i in 0..u.data.len() {
            assert!(u.data[i].abs() < 1e-3 && v.data[i].abs() < 1e-3);
        }
    }

    #[test]
    fn constant_images_give_exactly_zero_flow() {
        let a = plane_from_fn(24, 24, |_, _| 0.5);
        let (u, v) = farneback_flow(&a, &a, &FarnebackParams::default()).unwrap();
        assert!(u.data.iter().all(|&x| x == 0.0));
        assert!(v.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn translations_recovered_against_block_matching() {
        let big = smooth_texture(64, 64, 11);
        for &(dx, dy) in &[(2i32, 0i32), (-3, 1)] {
            let (a, b) = shifted_pair(&big, 36, 36, 14, 14, dy, dx);
            let (u, v) = farneback_flow(&a, &b, &FarnebackParams::default()).unwrap();
            let (ou, ov) = block_match(&a, &b, 4, 3);
            let margin = 4usize;
            let (mut us, mut vs, mut epes) = (Vec::new(), Vec::new(), Vec::new());
            for y in margin..36 - margin {
                for x in margin..36 - margin {
                    let i = y * 36 + x;
                    us.push(u.data[i] as f64);
                    vs.push(v.data[i] as f64);
                    let du = u.data[i] as f64 - ou[i];
                    let dv = v.data[i] as f64 - ov[i];
                    epes.push((du * du + dv * dv).sqrt());
                }
            }
            let mu = median(us);
            let mv = median(vs);
            assert!((mu - dx as f64).abs() < 0.25, "median u {mu} vs {dx}");
            assert!((mv - dy as f64).abs() < 0.25, "median v {mv} vs {dy}");
            let mean_epe = epes.iter().sum::<f64>() / epes.len() as f64;
            assert!(mean_epe < 0.25, "mean epe {mean_epe} for shift ({dx},{dy})");
        }
    }

    #[test]
    fn flow_is_approximately_antisymmetric() {
        let big = smooth_texture(64, 64, 23);
        let (a, b) = shifted_pair(&big, 36, 36, 14, 14, 1, 2);
        let p = FarnebackParams::default();
        let (uab, vab) = farneback_flow(&a, &b, &p).unwrap();
        let (uba, vba) = farneback_flow(&b, &a, &p).unwrap();
        let mut sums = Vec::new();
        for y in 4..32 {
            for x in 4..32 {
                let i = y * 36 + x;
                let du = uab.data[i] as f64 + uba.data[i] as f64;
                let dv = vab.data[i] as f64 + vba.data[i] as f64;
                sums.push((du * du + dv * dv).sqrt());
            }
        }
        assert!(median(sums) < 0.5);
    }

    #[test]
    fn clip_flow_static_video_is_zero_and_last_frame_duplicates() {
        let (c, t, h, w) = (3, 4, 16, 16);
        let mut data = vec![0.0f32; c * t * h * w];
        let tex = smooth_texture(h, w, 3);
        for ch in 0..c {
            for f in 0..t {
                for y in 0..h {
                    for x in 0..w {
                        data[((ch * t + f) * h + y) * w + x] = (tex.get(y, x) * 2.0 - 1.0) as f32;
                    }
                }
            }
        }
        let video = VideoClip::new(c, t, h, w, data).unwrap();
        let flow = clip_flow(&video, &FarnebackParams::default()).unwrap();
        assert_eq!(flow.frames, t);
        for v in flow.data() {
            assert!(v.abs() < 1e-3);
        }
    }

    #[test]
    fn clip_flow_tracks_moving_square_and_duplicates_last_entry() {
        let (t, h, w) = (4usize, 24usize, 24usize);
        let bg = smooth_texture(h, w, 5);
        let mut video = VideoClip::zeros(1, t, h, w);
        for f in 0..t {
            for y in 0..h {
                for x in 0..w {
                    // 8x8 bright square on a dim textured background, moving
                    // one pixel right per frame.
                    let inside = y >= 8 && y < 16 && x >= 4 + f && x < 12 + f;
                    let val = if inside { 0.9 } else { 0.25 * bg.get(y, x) as f64 };
                    video.set(0, f, y, x, (val * 2.0 - 1.0) as f32);
                }
            }
        }
        let flow = clip_flow(&video, &FarnebackParams::default()).unwrap();
        let mut inside_err = Vec::new();
        for f in 0..t - 1 {
            for y in 10..14 {
                for x in (7 + f)..(9 + f) {
                    let du = flow.get(0, f, y, x) as f64 - 1.0;
                    let dv = flow.get(1, f, y, x) as f64;
                    inside_err.push((du * du + dv * dv).sqrt());
                }
            }
        }
        let mean = inside_err.iter().sum::<f64>() / inside_err.len() as f64;
        assert!(mean < 0.5, "epe inside sprite {mean}");
        for y in 0..h {
            for x in 0..w {
                assert_eq!(flow.get(0, t - 1, y, x), flow.get(0, t - 2, y, x));
                assert_eq!(flow.get(1, t - 1, y, x), flow.get(1, t - 2, y, x));
            }
        }
    }

    #[test]
    fn normalize_round_trips_inside_the_cap() {
        let mut rng = Lcg(99);
        let mut data = Vec::new();
        for _ in 0..2 * 3 * 4 * 4 {
            data.push(((rng.next_f64() * 2.0 - 1.0) * 7.9) as f32);
        }
        let flow = FlowClip::new(3, 4, 4, data.clone()).unwrap();
        let norm = flow_normalize(&flow, DEFAULT_FLOW_MAX);
        for v in norm.data() {
            assert!((0.0..=1.0).contains(v));
        }
        let back = flow_denormalize(&norm, DEFAULT_FLOW_MAX);
        for (a, b) in flow.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        // Values past the cap saturate.
        assert_eq!(normalize_flow_value(9.5, 8.0), 1.0);
        assert_eq!(normalize_flow_value(-9.5, 8.0), 0.0);
    }

    #[test]
    fn flow_color_encodes_direction() {
        let mut flow = FlowClip::zeros(1, 2, 2);
        flow.set(0, 0, 0, 0, 3.0);
        flow.set(0, 0, 0, 1, -3.0);
        let img = flow_to_color(&flow, 0, Some(4.0));
        assert_eq!(img.len(), 2 * 2 * 3);
        let right = &img[0..3];
        let left = &img[3..6];
        assert_ne!(right, left);
        // Zero flow renders as white (zero saturation).
        assert_eq!(&img[6..9], &[255, 255, 255]);
    }
}
