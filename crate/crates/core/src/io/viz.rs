use super::image::Rgb8;
use crate::motion::FlowField;

/// Segment lengths of the Middlebury colour wheel: red-yellow,
/// yellow-green, green-cyan, cyan-blue, blue-magenta, magenta-red.
const SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];

/// The 55 wheel colours, channels in `[0, 1]`.
fn wheel() -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    // Each segment ramps one channel while the other two stay fixed.
    let ramps: [(usize, bool, [f64; 3]); 6] = [
        (1, true, [1.0, 0.0, 0.0]),
        (0, false, [1.0, 1.0, 0.0]),
        (2, true, [0.0, 1.0, 0.0]),
        (1, false, [0.0, 1.0, 1.0]),
        (0, true, [0.0, 0.0, 1.0]),
        (2, false, [1.0, 0.0, 1.0]),
    ];
    for (&n, &(ch, rising, base)) in SEGMENTS.iter().zip(&ramps) {
        for i in 0..n {
            let mut c = base;
            let f = i as f64 / n as f64;
            c[ch] = if rising { f } else { 1.0 - f };
            out.push(c);
        }
    }
    out
}

/// Position on the wheel in `[0, 55)` for a flow direction.
pub fn wheel_position(u: f64, v: f64) -> f64 {
    let n = SEGMENTS.iter().sum::<usize>() as f64;
    let a = (-v).atan2(-u) / std::f64::consts::PI;
    (a + 1.0) / 2.0 * (n - 1.0)
}

/// Middlebury colour coding: hue from direction, saturation from
/// magnitude normalised by the largest finite magnitude in the image.
/// Zero flow is white; non-finite vectors are black.
pub fn flow_viz(flow: &FlowField<f32>) -> Rgb8 {
    let colors = wheel();
    let n = colors.len();
    let max = flow
        .data()
        .chunks_exact(2)
        .map(|d| (d[0] as f64).hypot(d[1] as f64))
        .filter(|m| m.is_finite())
        .fold(0.0, f64::max);
    let mut data = Vec::with_capacity(3 * flow.data().len() / 2);
    for d in flow.data().chunks_exact(2) {
        let (u, v) = (d[0] as f64, d[1] as f64);
        if !(u.is_finite() && v.is_finite()) {
            data.extend_from_slice(&[0, 0, 0]);
            continue;
        }
        let rad = if max > 0.0 { u.hypot(v) / max } else { 0.0 };
        let fk = wheel_position(u, v);
        let k0 = (fk.floor() as usize).min(n - 1);
        let k1 = (k0 + 1) % n;
        let f = fk - k0 as f64;
        for (&a, &b) in colors[k0].iter().zip(&colors[k1]) {
            let c = (1.0 - f) * a + f * b;
            let c = if rad <= 1.0 { 1.0 - rad * (1.0 - c) } else { 0.75 * c };
            data.push((255.0 * c).round() as u8);
        }
    }
    Rgb8 {
        width: flow.width(),
        height: flow.height(),
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wheel_has_55_colours_starting_red() {
        let w = wheel();
        assert_eq!(w.len(), 55);
        assert_eq!(w[0], [1.0, 0.0, 0.0]);
    }
}
