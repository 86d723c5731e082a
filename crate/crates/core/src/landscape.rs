//! Loss-surface probing: the 2-D plane spanned by three modes, per-mode
//! random-direction slices with layer-wise norm matching, and feature
//! trajectory dumps for external projection tools.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{write_tensor, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::{forward, mean_cross_entropy, ModeCheckpoint};
use crate::numkit::stable::logsumexp_slice;
use crate::numkit::{Rng, Tensor};

/// Axes of a 2-D affine slice of parameter space: point(a, b) =
/// origin + a*u + b*v, all over the flattened parameter vector.
#[derive(Debug, Clone)]
pub struct PlaneAxes {
    pub origin: Vec<f32>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridCoords {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub resolution: usize,
}

impl GridCoords {
    pub fn x_at(&self, col: usize) -> f64 {
        self.x_min + (self.x_max - self.x_min) * col as f64 / (self.resolution - 1) as f64
    }

    pub fn y_at(&self, row: usize) -> f64 {
        self.y_min + (self.y_max - self.y_min) * row as f64 / (self.resolution - 1) as f64
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Mean-loss values over a 2-D parameter-space grid, with the anchor modes'
/// plane coordinates and directly evaluated losses.
#[derive(Debug, Clone)]
pub struct LossGrid {
    pub axes: PlaneAxes,
    pub coords: GridCoords,
    /// [g, g] grid; values[row][col] is the loss at (x_at(col), y_at(row)).
    pub values: Tensor,
    pub mode_markers: Vec<(f64, f64)>,
    /// Loss of each anchor checkpoint on the dataset, aligned with markers.
    pub anchor_losses: Vec<f64>,
    pub dataset_id: String,
}

/// Sidecar metadata serialized next to the values tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossGridSidecar {
    pub dataset_id: String,
    pub coords: GridCoords,
    pub mode_markers: Vec<(f64, f64)>,
    pub anchor_losses: Vec<f64>,
    pub u_norm: f64,
    pub v_norm: f64,
    pub origin_norm: f64,
    pub values_file: PathBuf,
}

fn checkpoint_loss(
    template: &ModeCheckpoint,
    params: &[f32],
    dataset: &LabeledDataset,
) -> Result<f64> {
    let ckpt = template.with_flat_params(params)?;
    // Inline mean CE to avoid re-validating labels per cell.
    let dump = forward(&ckpt, &dataset.x)?;
    let mut total = 0.0f64;
    for i in 0..dump.sample_count() {
        let row = dump.logits.row(i);
        total += logsumexp_slice(row) - row[dataset.y[i]] as f64;
    }
    Ok(total / dump.sample_count().max(1) as f64)
}

/// Loss at plane coordinates (a, b): origin + a*u + b*v evaluated on the
/// dataset. Axis arithmetic runs in f64 so anchors reproduce exactly.
pub fn loss_at_plane_coords(
    template: &ModeCheckpoint,
    axes: &PlaneAxes,
    dataset: &LabeledDataset,
    a: f64,
    b: f64,
) -> Result<f64> {
    let params: Vec<f32> = axes
        .origin
        .iter()
        .zip(axes.u.iter().zip(&axes.v))
        .map(|(&w, (&du, &dv))| (w as f64 + a * du + b * dv) as f32)
        .collect();
    checkpoint_loss(template, &params, dataset)
}

fn evaluate_grid(
    template: &ModeCheckpoint,
    axes: &PlaneAxes,
    coords: &GridCoords,
    dataset: &LabeledDataset,
) -> Result<Tensor> {
    let g = coords.resolution;
    let cells: Vec<f64> = (0..g * g)
        .into_par_iter()
        .map(|idx| {
            let (row, col) = (idx / g, idx % g);
            loss_at_plane_coords(template, axes, dataset, coords.x_at(col), coords.y_at(row))
        })
        .collect::<Result<_>>()?;
    if cells.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("loss grid"));
    }
    Tensor::new(vec![g, g], cells.iter().map(|&v| v as f32).collect())
}

/// Plane through exactly three modes: origin w1, u = w2 - w1, and v the
/// component of w3 - w1 orthogonal to u. The grid spans
/// [-margin, 1 + margin]^2 in (u, v) coordinates, widened along x when the
/// third mode's coordinate falls outside.
pub fn plane_grid(
    ckpts: &[ModeCheckpoint; 3],
    dataset: &LabeledDataset,
    resolution: usize,
    margin: f64,
) -> Result<LossGrid> {
    if resolution < 2 {
        return Err(Error::InvalidArgument("resolution must be >= 2".into()));
    }
    let arch = &ckpts[0].arch;
    for c in &ckpts[1..] {
        if &c.arch != arch {
            return Err(Error::InvalidArgument(
                "plane_grid: architectures differ".into(),
            ));
        }
    }
    let w1 = ckpts[0].flatten_params();
    let w2 = ckpts[1].flatten_params();
    let w3 = ckpts[2].flatten_params();
    let u: Vec<f64> = w2
        .iter()
        .zip(&w1)
        .map(|(&a, &b)| a as f64 - b as f64)
        .collect();
    let d3: Vec<f64> = w3
        .iter()
        .zip(&w1)
        .map(|(&a, &b)| a as f64 - b as f64)
        .collect();
    let uu: f64 = u.iter().map(|v| v * v).sum();
    if uu == 0.0 {
        return Err(Error::DegenerateEnsemble(
            "plane_grid: first two modes coincide",
        ));
    }
    let t = u.iter().zip(&d3).map(|(a, b)| a * b).sum::<f64>() / uu;
    let v: Vec<f64> = d3.iter().zip(&u).map(|(&d, &uv)| d - t * uv).collect();
    if v.iter().map(|e| e * e).sum::<f64>() == 0.0 {
        return Err(Error::DegenerateEnsemble(
            "plane_grid: third mode lies on the u axis",
        ));
    }

    let markers = vec![(0.0, 0.0), (1.0, 0.0), (t, 1.0)];
    let coords = GridCoords {
        x_min: (-margin).min(t - margin),
        x_max: (1.0 + margin).max(t + margin),
        y_min: -margin,
        y_max: 1.0 + margin,
        resolution,
    };
    let axes = PlaneAxes { origin: w1, u, v };
    let values = evaluate_grid(&ckpts[0], &axes, &coords, dataset)?;
    let anchor_losses = ckpts
        .iter()
        .map(|c| direct_loss(c, dataset))
        .collect::<Result<_>>()?;
    Ok(LossGrid {
        axes,
        coords,
        values,
        mode_markers: markers,
        anchor_losses,
        dataset_id: dataset.name.clone(),
    })
}

/// Per-mode 2-D slice along two random Gaussian directions. Each direction is
/// rescaled per layer (the W and b block of a layer as one unit) so its
/// layer norm matches the checkpoint's, the layer-granularity analogue of
/// filter normalization. The grid spans [-radius, radius]^2; with an odd
/// resolution the center cell is the unperturbed mode.
pub fn slice_grid(
    ckpt: &ModeCheckpoint,
    dataset: &LabeledDataset,
    resolution: usize,
    radius: f64,
    rng: &mut Rng,
) -> Result<LossGrid> {
    if resolution < 2 {
        return Err(Error::InvalidArgument("resolution must be >= 2".into()));
    }
    if radius <= 0.0 {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    let origin = ckpt.flatten_params();
    let total = origin.len();
    let draw_direction = |rng: &mut Rng| -> Vec<f64> {
        let mut dir: Vec<f64> = (0..total).map(|_| rng.next_gaussian()).collect();
        let mut off = 0usize;
        for layer in &ckpt.layers {
            let len = layer.w.len() + layer.b.len();
            let block = &mut dir[off..off + len];
            let wnorm = origin[off..off + len]
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt();
            let dnorm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = if dnorm > 0.0 { wnorm / dnorm } else { 0.0 };
            for e in block.iter_mut() {
                *e *= scale;
            }
            off += len;
        }
        dir
    };
    let u = draw_direction(rng);
    let v = draw_direction(rng);
    let axes = PlaneAxes { origin, u, v };
    let coords = GridCoords {
        x_min: -radius,
        x_max: radius,
        y_min: -radius,
        y_max: radius,
        resolution,
    };
    let values = evaluate_grid(ckpt, &axes, &coords, dataset)?;
    let anchor_losses = vec![direct_loss(ckpt, dataset)?];
    Ok(LossGrid {
        axes,
        coords,
        values,
        mode_markers: vec![(0.0, 0.0)],
        anchor_losses,
        dataset_id: dataset.name.clone(),
    })
}

impl LossGrid {
    /// Serializes the grid as a JSON sidecar, an MTEN values tensor and a
    /// flat CSV (row, col, x, y, loss) for plotting tools.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let values_file = PathBuf::from(format!("{stem}_values.mten"));
        write_tensor(dir.join(&values_file), &self.values)?;

        let sidecar = LossGridSidecar {
            dataset_id: self.dataset_id.clone(),
            coords: self.coords.clone(),
            mode_markers: self.mode_markers.clone(),
            anchor_losses: self.anchor_losses.clone(),
            u_norm: self.axes.u.iter().map(|v| v * v).sum::<f64>().sqrt(),
            v_norm: self.axes.v.iter().map(|v| v * v).sum::<f64>().sqrt(),
            origin_norm: self
                .axes
                .origin
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt(),
            values_file,
        };
        let json_tmp = dir.join(format!("{stem}.json.tmp"));
        std::fs::write(&json_tmp, serde_json::to_string_pretty(&sidecar)?)?;
        std::fs::rename(json_tmp, dir.join(format!("{stem}.json")))?;

        let mut csv = String::from("row,col,x,y,loss\n");
        let g = self.coords.resolution;
        for row in 0..g {
            for col in 0..g {
                csv.push_str(&format!(
                    "{},{},{:.6},{:.6},{:.6}\n",
                    row,
                    col,
                    self.coords.x_at(col),
                    self.coords.y_at(row),
                    self.values.row(row)[col],
                ));
            }
        }
        let csv_tmp = dir.join(format!("{stem}.csv.tmp"));
        std::fs::write(&csv_tmp, csv)?;
        std::fs::rename(csv_tmp, dir.join(format!("{stem}.csv")))?;
        Ok(())
    }
}

/// Writes per-checkpoint penultimate features for each dataset so external
/// tools can project training trajectories. Files land under `out_dir` as
/// `traj_<index>_<dataset>.mten` with shape [n, h].
pub fn dump_feature_trajectory(
    series: &[ModeCheckpoint],
    datasets: &[&LabeledDataset],
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    if series.is_empty() {
        return Err(Error::EmptyInput("dump_feature_trajectory"));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (idx, ckpt) in series.iter().enumerate() {
        for ds in datasets {
            let dump = forward(ckpt, &ds.x)?;
            let path = out_dir.join(format!("traj_{idx:03}_{}.mten", ds.name));
            write_tensor(&path, &dump.penultimate)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Direct loss evaluation used by anchor-consistency checks.
pub fn direct_loss(ckpt: &ModeCheckpoint, dataset: &LabeledDataset) -> Result<f64> {
    mean_cross_entropy(ckpt, &dataset.x, &dataset.y)
}
