use rand::Rng;

use super::params::{Bound, Conv, Params};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Var};

/// Parallel resolution streams laid out as `rows x columns` nodes. Row `r`
/// runs at `1 / 2^r` resolution with `widths[r]` channels. Consecutive
/// nodes in a row are joined by residual blocks; the first half of the
/// columns feed each row from the one above through downsampling blocks,
/// the second half feed it from the one below through upsampling blocks.
/// Incoming edges are summed.
#[derive(Clone, Debug)]
pub(crate) struct Grid {
    rows: usize,
    columns: usize,
    slope: f64,
    lateral: Vec<Vec<[Conv; 2]>>,
    down: Vec<Vec<Conv>>,
    up: Vec<Vec<[Conv; 2]>>,
}

impl Grid {
    pub fn new<T: Real, R: Rng + ?Sized>(
        params: &mut Params<T>,
        prefix: &str,
        widths: &[usize],
        columns: usize,
        slope: f64,
        planar: bool,
        rng: &mut R,
    ) -> Self {
        let rows = widths.len();
        let half = columns / 2;
        let mut lateral = Vec::with_capacity(rows);
        for (r, &c) in widths.iter().enumerate() {
            let row = (1..columns)
                .map(|col| {
                    let n = format!("{prefix}.lat{r}_{col}");
                    [
                        Conv::same(params, &format!("{n}a"), c, c, planar, rng),
                        Conv::same(params, &format!("{n}b"), c, c, planar, rng),
                    ]
                })
                .collect();
            lateral.push(row);
        }
        let down = (0..half)
            .map(|col| {
                (1..rows)
                    .map(|r| {
                        let n = format!("{prefix}.down{r}_{col}");
                        Conv::same(params, &n, widths[r - 1], widths[r], planar, rng)
                    })
                    .collect()
            })
            .collect();
        let up = (half..columns)
            .map(|col| {
                (0..rows - 1)
                    .map(|r| {
                        let n = format!("{prefix}.up{r}_{col}");
                        [
                            Conv::same(params, &format!("{n}a"), widths[r + 1], widths[r], planar, rng),
                            Conv::same(params, &format!("{n}b"), widths[r], widths[r], planar, rng),
                        ]
                    })
                    .collect()
            })
            .collect();
        Grid {
            rows,
            columns,
            slope,
            lateral,
            down,
            up,
        }
    }

    /// Spatial sizes must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << (self.rows - 1)
    }

    fn act<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        g.leaky_relu(x, T::of(self.slope))
    }

    /// Pre-activation double convolution.
    fn double<T: Real>(&self, g: &mut Graph<T>, p: &Bound, convs: &[Conv; 2], x: Var) -> Result<Var> {
        let h = self.act(g, x);
        let h = convs[0].forward(g, p, h)?;
        let h = self.act(g, h);
        convs[1].forward(g, p, h)
    }

    fn sum<T: Real>(g: &mut Graph<T>, a: Option<Var>, b: Var) -> Result<Var> {
        match a {
            Some(a) => g.add(a, b),
            None => Ok(b),
        }
    }

    /// Runs the grid on `x` (already at `widths[0]` channels) and returns
    /// the last node of the top row.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let shape = g.value(x).shape().to_vec();
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let d = self.divisor();
        if h % d != 0 || w % d != 0 {
            return Err(Error::dim("grid network", format!("H and W must be divisible by {d}, got {h}x{w}")));
        }
        let half = self.columns / 2;
        let mut cur: Vec<Var> = Vec::with_capacity(self.rows);
        for col in 0..self.columns {
            let mut next: Vec<Option<Var>> = vec![None; self.rows];
            if col < half {
                for r in 0..self.rows {
                    let mut acc = if col == 0 && r == 0 { Some(x) } else { None };
                    if col > 0 {
                        let l = self.double(g, p, &self.lateral[r][col - 1], cur[r])?;
                        let l = g.add(cur[r], l)?;
                        acc = Some(l);
                    }
                    if r > 0 {
                        let above = next[r - 1].expect("row above computed first");
                        let h = g.maxpool_spatial(above)?;
                        let h = self.act(g, h);
                        let h = self.down[col][r - 1].forward(g, p, h)?;
                        acc = Some(Self::sum(g, acc, h)?);
                    }
                    next[r] = acc;
                }
            } else {
                for r in (0..self.rows).rev() {
                    let l = self.double(g, p, &self.lateral[r][col - 1], cur[r])?;
                    let mut acc = g.add(cur[r], l)?;
                    if r + 1 < self.rows {
                        let below = next[r + 1].expect("row below computed first");
                        let h = g.resize_bilinear(below, 2)?;
                        let h = self.double(g, p, &self.up[col - half][r], h)?;
                        acc = g.add(acc, h)?;
                    }
                    next[r] = Some(acc);
                }
            }
            cur = next.into_iter().map(|v| v.expect("every node is reached")).collect();
        }
        Ok(cur[0])
    }
}
