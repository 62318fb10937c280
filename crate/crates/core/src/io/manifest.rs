use std::fs;
use std::path::{Path, PathBuf};

use super::flo::{read_flo, write_flo};
use super::image::{read_image, read_occlusion, write_image, write_occlusion};
use super::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::motion::check_t;
use crate::synth::{Quad, QuadSource, LINKS};

/// Column names, in order. Flow and occlusion columns follow
/// [`LINKS`]; `m1` stands for frame `-1`.
pub const MANIFEST_COLUMNS: [&str; 18] = [
    "t", "frame_m1", "frame_0", "frame_1", "frame_2", "target", "flow_m1_0", "flow_0_m1", "flow_0_1", "flow_1_0",
    "flow_1_2", "flow_2_1", "occ_m1_0", "occ_0_m1", "occ_0_1", "occ_1_0", "occ_1_2", "occ_2_1",
];

/// One quad on disk. Relative paths in a manifest file resolve against the
/// manifest's directory; `target` is `-` when unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub t: f64,
    pub frames: [PathBuf; 4],
    pub target: Option<PathBuf>,
    pub flows: [PathBuf; 6],
    pub occlusions: [PathBuf; 6],
}

impl ManifestRow {
    fn paths(&self) -> impl Iterator<Item = &PathBuf> {
        self.frames.iter().chain(&self.target).chain(&self.flows).chain(&self.occlusions)
    }
}

/// Parses manifest text: tab-separated, one quad per line, `#` comments
/// and blank lines ignored.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != MANIFEST_COLUMNS.len() {
            return Err(Error::format(
                "manifest",
                format!("line {}: {} fields, expected {}", i + 1, f.len(), MANIFEST_COLUMNS.len()),
            ));
        }
        let t: f64 = f[0]
            .parse()
            .map_err(|_| Error::format("manifest", format!("line {}: bad t {:?}", i + 1, f[0])))?;
        check_t(t)?;
        let p = |s: &str| base.join(s);
        rows.push(ManifestRow {
            t,
            frames: std::array::from_fn(|k| p(f[1 + k])),
            target: (f[5] != "-").then(|| p(f[5])),
            flows: std::array::from_fn(|k| p(f[6 + k])),
            occlusions: std::array::from_fn(|k| p(f[12 + k])),
        });
    }
    Ok(rows)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format("manifest", "not UTF-8"))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new("")))
}

/// Renders rows with paths relative to `base` where possible.
pub fn format_manifest(rows: &[ManifestRow], base: &Path) -> String {
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    let mut out = format!("# {}\n", MANIFEST_COLUMNS.join("\t"));
    for r in rows {
        let mut f = vec![format!("{}", r.t)];
        f.extend(r.frames.iter().map(|p| rel(p)));
        f.push(r.target.as_deref().map_or("-".into(), rel));
        f.extend(r.flows.iter().chain(&r.occlusions).map(|p| rel(p)));
        out.push_str(&f.join("\t"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(rows: &[ManifestRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = format_manifest(rows, path.parent().unwrap_or(Path::new("")));
    write_atomic(path, text.as_bytes())
}

/// Loads every raster a row names. A missing file is an I/O error naming
/// its path.
pub fn load_quad(row: &ManifestRow) -> Result<Quad> {
    let frames = [0, 1, 2, 3].map(|k| read_image(&row.frames[k]));
    let [a, b, c, d] = frames;
    let flows = [0, 1, 2, 3, 4, 5].map(|k| read_flo(&row.flows[k]));
    let occs = [0, 1, 2, 3, 4, 5].map(|k| read_occlusion(&row.occlusions[k]));
    let q = Quad {
        frames: [a?, b?, c?, d?],
        flows: collect6(flows)?,
        occlusions: collect6(occs)?,
        t: row.t,
        target: row.target.as_ref().map(read_image).transpose()?,
        gt_coeffs: None,
        gt_intermediate: None,
        source: QuadSource::Files(row.paths().cloned().collect()),
    };
    q.validate()?;
    Ok(q)
}

fn collect6<V>(v: [Result<V>; 6]) -> Result<[V; 6]> {
    let v: Vec<V> = v.into_iter().collect::<Result<_>>()?;
    Ok(v.try_into().unwrap_or_else(|_| unreachable!("six elements in, six out")))
}

fn time_tag(k: i32) -> String {
    if k < 0 { format!("m{}", -k) } else { k.to_string() }
}

/// Paths of the standard quad directory layout written by [`save_quads`].
fn dir_layout(sub: &Path) -> ([PathBuf; 4], [PathBuf; 6], [PathBuf; 6]) {
    let frames = std::array::from_fn(|k| sub.join(format!("frame_{}.png", time_tag(k as i32 - 1))));
    let link = |k: usize| format!("{}_{}", time_tag(LINKS[k].0), time_tag(LINKS[k].1));
    let flows = std::array::from_fn(|k| sub.join(format!("flow_{}.flo", link(k))));
    let occlusions = std::array::from_fn(|k| sub.join(format!("occ_{}.png", link(k))));
    (frames, flows, occlusions)
}

impl ManifestRow {
    /// Row for a quad directory in the [`save_quads`] layout; `target.png`
    /// is used when present.
    pub fn from_dir(dir: impl AsRef<Path>, t: f64) -> Result<Self> {
        check_t(t)?;
        let dir = dir.as_ref();
        let (frames, flows, occlusions) = dir_layout(dir);
        let target = Some(dir.join("target.png")).filter(|p| p.is_file());
        Ok(ManifestRow {
            t,
            frames,
            target,
            flows,
            occlusions,
        })
    }
}

/// Writes each quad's rasters under `dir/quad_NNNN/` (PNG frames and
/// occlusions, `.flo` flows) plus `dir/manifest.tsv`, and returns the
/// manifest path.
pub fn save_quads(quads: &[Quad], dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let mut rows = Vec::with_capacity(quads.len());
    for (i, q) in quads.iter().enumerate() {
        let sub = dir.join(format!("quad_{i:04}"));
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let (frames, flows, occlusions) = dir_layout(&sub);
        let target = q.target.as_ref().map(|_| sub.join("target.png"));
        for (f, p) in q.frames.iter().zip(&frames) {
            write_image(f, p)?;
        }
        if let (Some(t), Some(p)) = (&q.target, &target) {
            write_image(t, p)?;
        }
        for (f, p) in q.flows.iter().zip(&flows) {
            write_flo(f, p)?;
        }
        for (o, p) in q.occlusions.iter().zip(&occlusions) {
            write_occlusion(o, p)?;
        }
        rows.push(ManifestRow {
            t: q.t,
            frames,
            target,
            flows,
            occlusions,
        });
    }
    let path = dir.join("manifest.tsv");
    write_manifest(&rows, &path)?;
    Ok(path)
}
