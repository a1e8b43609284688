//! Single-channel f32 image planes shared by optical flow, metrics and data
//! ingestion: bilinear sampling/resizing and Gaussian smoothing.

/// Dense H x W grid of f32 values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width);
        Plane { height, width, data }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Plane { height, width, data: vec![0.0; height * width] }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample with clamp-to-edge semantics; coordinates are pixel
    /// centers (0, 0) .. (W-1, H-1).
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let xc = x.clamp(0.0, (self.width - 1) as f32);
        let yc = y.clamp(0.0, (self.height - 1) as f32);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xc - x0 as f32;
        let fy = yc - y0 as f32;
        let top = self.get(y0, x0) * (1.0 - fx) + self.get(y0, x1) * fx;
        let bot = self.get(y1, x0) * (1.0 - fx) + self.get(y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    /// Bilinear resize using half-pixel-centre alignment.
    pub fn resize(&self, height: usize, width: usize) -> Plane {
        assert!(height > 0 && width > 0);
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = self.height as f32 / height as f32;
        let sx = self.width as f32 / width as f32;
        let mut out = Plane::zeros(height, width);
        for y in 0..height {
            let src_y = (y as f32 + 0.5) * sy - 0.5;
            for x in 0..width {
                let src_x = (x as f32 + 0.5) * sx - 0.5;
                out.set(y, x, self.sample(src_x, src_y));
            }
        }
        out
    }

    /// Separable Gaussian blur with a kernel truncated at round(4*sigma).
    /// Borders renormalize over the in-bounds taps so flat images stay flat.
    pub fn gaussian_blur(&self, sigma: f32) -> Plane {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (sigma * 4.0).round().max(1.0) as isize;
        let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
        for i in -radius..=radius {
            kernel.push((-((i * i) as f32) / (2.0 * sigma * sigma)).exp());
        }
        let horizontal = convolve_1d(&self.data, self.height, self.width, &kernel, true);
        let data = convolve_1d(&horizontal, self.height, self.width, &kernel, false);
        Plane { height: self.height, width: self.width, data }
    }
}

fn convolve_1d(src: &[f32], h: usize, w: usize, kernel: &[f32], along_x: bool) -> Vec<f32> {
    let radius = (kernel.len() / 2) as isize;
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0f32;
            let mut wsum = 0.0f32;
            for (ki, &kv) in kernel.iter().enumerate() {
                let o = ki as isize - radius;
                let (sy, sx) = if along_x { (y, x + o) } else { (y + o, x) };
                if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                    continue;
                }
                acc += kv * src[(sy * w as isize + sx) as usize];
                wsum += kv;
            }
            out[(y * w as isize + x) as usize] = acc / wsum;
        }
    }
    out
}
