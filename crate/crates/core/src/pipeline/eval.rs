use serde::Serialize;

use crate::error::Result;
use crate::losses::{psnr, ssim};
use crate::tensor::Tensor;

/// Scores of one quad.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub index: usize,
    pub t: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl EvalRow {
    pub fn score(index: usize, t: f64, pred: &Tensor<f32>, gt: &Tensor<f32>) -> Result<Self> {
        Ok(EvalRow {
            index,
            t,
            psnr: psnr(pred, gt, 1.0)?,
            ssim: ssim(pred, gt, 1.0)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn new(rows: Vec<EvalRow>) -> Self {
        let n = rows.len().max(1) as f64;
        EvalReport {
            mean_psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            mean_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
            rows,
        }
    }

    /// Tab-separated table with a header and a trailing `mean` row.
    pub fn to_table(&self) -> String {
        let mut s = String::from("index\tt\tpsnr\tssim\n");
        for r in &self.rows {
            s.push_str(&format!("{}\t{}\t{:.4}\t{:.6}\n", r.index, r.t, r.psnr, r.ssim));
        }
        s.push_str(&format!("mean\t-\t{:.4}\t{:.6}\n", self.mean_psnr, self.mean_ssim));
        s
    }

    /// The full report as TOML, one `[[rows]]` table per quad.
    pub fn to_records(&self) -> String {
        toml::to_string(self).expect("report fields serialise")
    }
}

/// Scores prediction/target pairs directly.
pub fn evaluate_frames(pairs: &[(&Tensor<f32>, &Tensor<f32>)], t: f64) -> Result<EvalReport> {
    let rows = pairs
        .iter()
        .enumerate()
        .map(|(i, (p, g))| EvalRow::score(i, t, p, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::new(rows))
}

/// Worker threads for evaluation: `VFIKIT_THREADS` when set to a positive
/// integer, otherwise the available parallelism.
pub fn thread_count() -> usize {
    std::env::var("VFIKIT_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Applies `f` to every item on up to `threads` scoped threads and returns
/// the results in input order. The error of the lowest failing index wins.
pub(crate) fn par_map<I: Sync, O: Send>(
    items: &[I],
    threads: usize,
    f: impl Fn(usize, &I) -> Result<O> + Sync,
) -> Result<Vec<O>> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let parts: Vec<Vec<Result<O>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                let f = &f;
                s.spawn(move || part.iter().enumerate().map(|(j, x)| f(c * chunk + j, x)).collect())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    parts.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_keeps_order() {
        let items: Vec<usize> = (0..23).collect();
        for threads in [1, 2, 4, 50] {
            let out = par_map(&items, threads, |i, &x| Ok(i * 100 + x)).unwrap();
            assert_eq!(out, items.iter().map(|&x| x * 101).collect::<Vec<_>>());
        }
        let err = par_map(&items, 3, |i, _| {
            if i == 5 || i == 17 {
                Err(crate::Error::Contract(format!("{i}")))
            } else {
                Ok(i)
            }
        });
        assert_eq!(err.unwrap_err().to_string(), "contract violated: 5");
    }

    #[test]
    fn table_and_records() {
        let r = EvalReport::new(vec![
            EvalRow {
                index: 0,
                t: 0.5,
                psnr: 30.0,
                ssim: 0.9,
            },
            EvalRow {
                index: 1,
                t: 0.5,
                psnr: 40.0,
                ssim: 1.0,
            },
        ]);
        assert_eq!(r.mean_psnr, 35.0);
        let table = r.to_table();
        assert_eq!(table.lines().count(), 4);
        assert!(table.ends_with("mean\t-\t35.0000\t0.950000\n"));
        assert!(r.to_records().contains("[[rows]]"));
    }
}
