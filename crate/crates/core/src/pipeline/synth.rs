//! Procedural training data: piecewise-smooth colour images and layered
//! optical flow with matching guidance images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Image;

fn stream(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// A filled shape with an anti-aliased edge.
struct Shape {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    ellipse: bool,
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Self {
        let m = h.min(w) as f64;
        Self {
            cy: rng.gen_range(0.0..h as f64),
            cx: rng.gen_range(0.0..w as f64),
            ry: rng.gen_range(0.08 * m..0.35 * m),
            rx: rng.gen_range(0.08 * m..0.35 * m),
            ellipse: rng.gen_bool(0.5),
        }
    }

    /// Coverage in `[0, 1]` of pixel `(y, x)`.
    fn coverage(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = ((y - self.cy) / self.ry, (x - self.cx) / self.rx);
        // approximate signed distance in pixels, positive inside
        let dist = if self.ellipse {
            (1.0 - (dy * dy + dx * dx).sqrt()) * self.ry.min(self.rx)
        } else {
            ((1.0 - dy.abs()) * self.ry).min((1.0 - dx.abs()) * self.rx)
        };
        smoothstep(dist + 0.5)
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn colour_layer(rng: &mut ChaCha8Rng, h: usize, w: usize) -> impl Fn(usize, usize, usize) -> f64 {
    let base: [f64; 3] = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
    let gy: [f64; 3] = [rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)];
    let gx: [f64; 3] = [rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)];
    let (h, w) = (h as f64, w as f64);
    move |y, x, c| base[c] + gy[c] * (y as f64 / h - 0.5) + gx[c] * (x as f64 / w - 0.5)
}

type Layer = Box<dyn Fn(usize, usize, usize) -> f64>;

/// Random RGB image in `[0, 1]` (8-bit quantized): a shaded background with
/// overlapping shaded ellipses and rectangles and a faint texture.
pub fn synthetic_color_image(height: usize, width: usize, rng: &mut ChaCha8Rng) -> Image {
    let background = colour_layer(rng, height, width);
    let count = rng.gen_range(6..=10);
    let shapes: Vec<(Shape, Layer)> = (0..count)
        .map(|_| (Shape::random(rng, height, width), Box::new(colour_layer(rng, height, width)) as Layer))
        .collect();
    let (fy, fx, amp) = (rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.0..0.03));
    let mut img = Image::from_fn(height, width, 3, background);
    for (shape, colour) in &shapes {
        for y in 0..height {
            for x in 0..width {
                let a = shape.coverage(y as f64, x as f64);
                if a > 0.0 {
                    for c in 0..3 {
                        let v = img.get(y, x, c);
                        img.set(y, x, c, (1.0 - a) * v + a * colour(y, x, c));
                    }
                }
            }
        }
    }
    img.as_mut_slice().chunks_mut(3).enumerate().for_each(|(i, px)| {
        let (y, x) = ((i / width) as f64, (i % width) as f64);
        let t = amp * (fy * y).sin() * (fx * x).cos();
        px.iter_mut().for_each(|v| *v = quantize(*v + t));
    });
    img
}

/// `n` independent colour images; image `i` depends only on `(seed, i)`.
pub fn synthetic_color_images(n: usize, height: usize, width: usize, seed: u64) -> Vec<Image> {
    (0..n).map(|i| synthetic_color_image(height, width, &mut stream(seed, i))).collect()
}

/// Guidance image and ground-truth flow of one synthetic scene.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    pub image: Image,
    pub flow: Image,
}

/// Layered scene: a slowly varying background motion plus several objects
/// translating rigidly, each with its own colour.
pub fn synthetic_flow_sample(height: usize, width: usize, rng: &mut ChaCha8Rng) -> FlowSample {
    let background = colour_layer(rng, height, width);
    let bg_flow = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
    let bg_grad = [rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02)];
    let mut image = Image::from_fn(height, width, 3, background);
    let mut flow =
        Image::from_fn(height, width, 2, |y, x, c| bg_flow[c] + bg_grad[c] * if c == 0 { x as f64 } else { y as f64 });
    for _ in 0..rng.gen_range(2..=5) {
        let shape = Shape::random(rng, height, width);
        let colour = colour_layer(rng, height, width);
        let motion = [rng.gen_range(-12.0..12.0), rng.gen_range(-12.0..12.0)];
        for y in 0..height {
            for x in 0..width {
                let a = shape.coverage(y as f64, x as f64);
                if a > 0.0 {
                    for c in 0..3 {
                        let v = image.get(y, x, c);
                        image.set(y, x, c, (1.0 - a) * v + a * colour(y, x, c));
                    }
                }
                if a >= 0.5 {
                    flow.set(y, x, 0, motion[0]);
                    flow.set(y, x, 1, motion[1]);
                }
            }
        }
    }
    FlowSample { image: image.map(quantize), flow: flow.map(|v| v as f32 as f64) }
}

pub fn synthetic_flow_samples(n: usize, height: usize, width: usize, seed: u64) -> Vec<FlowSample> {
    (0..n).map(|i| synthetic_flow_sample(height, width, &mut stream(seed, i))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_and_in_range() {
        let a = synthetic_color_images(2, 16, 20, 7);
        assert_eq!(a, synthetic_color_images(2, 16, 20, 7));
        assert_ne!(a[0], a[1]);
        assert!(a[0].as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        let f = synthetic_flow_samples(1, 16, 16, 3);
        assert_eq!(f[0].flow.channels(), 2);
        assert_eq!(f, synthetic_flow_samples(1, 16, 16, 3));
    }
}
