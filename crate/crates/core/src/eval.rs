//! Ground-truth evaluation, the held-out false-positive probe, the ablation
//! grid runner, reconstruction reports and plots.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use gameirl_nn::ParamSet;
use plotters::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoenc::AEParams;
use crate::envs::{block_mask, CatcherConfig, Environment, FrameCorpus, RawFrame, FRAME_H, FRAME_PIXELS, FRAME_W};
use crate::error::{Error, Result};
use crate::irl::{
    discriminator_output, policy_log_probs, DatasetMode, DemoSet, DiscInput, Discriminator, IrlConfig, IrlHistoryRow, IRL_CONFIG_FILE, IRL_HISTORY_HEADER,
    Trajectory, VariantInput,
};
use crate::nets::{greedy_action, sample_action, PolicyNet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_return: f64,
    pub std_return: f64,
    pub episodes: usize,
    pub seed: u64,
}

/// Plays one full episode and records it, rewards included.
pub fn play_episode<E: Environment, R: Rng>(
    net: &PolicyNet,
    params: &ParamSet<f32>,
    env: &mut E,
    episode_seed: u64,
    greedy: bool,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut obs = env.reset(episode_seed);
    let mut t = Trajectory { observations: Vec::new(), actions: Vec::new(), rewards: Some(Vec::new()), seed: episode_seed };
    let mut input = Vec::with_capacity(net.input_len());
    loop {
        input.clear();
        obs.write_scalars(&mut input);
        let out = net.forward(params, &input, 1)?;
        let a = if greedy { greedy_action(out.logits(0)) } else { sample_action(out.logits(0), rng)?.0 };
        let step = env.step(a)?;
        t.observations.push(std::mem::replace(&mut obs, step.obs));
        t.actions.push(a);
        t.rewards.as_mut().expect("set above").push(step.reward);
        if step.done {
            return Ok(t);
        }
    }
}

/// Ground-truth return over `episodes` full episodes. Episode `i` resets with
/// a seed drawn from `seed`; actions are sampled unless `greedy`.
pub fn evaluate_policy<E, F>(
    net: &PolicyNet,
    params: &ParamSet<f32>,
    mut env_factory: F,
    episodes: usize,
    seed: u64,
    greedy: bool,
) -> Result<EvalReport>
where
    E: Environment,
    F: FnMut() -> E,
{
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = env_factory();
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let ep_seed = rng.random();
        let t = play_episode(net, params, &mut env, ep_seed, greedy, &mut rng)?;
        returns.push(t.rewards.unwrap_or_default().iter().map(|&r| r as f64).sum::<f64>());
    }
    Ok(EvalReport {
        mean_return: gameirl_nn::ops::mean(&returns),
        std_return: gameirl_nn::ops::pop_std(&returns),
        episodes,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FPRReport {
    pub fpr: f64,
    pub n_samples: usize,
    pub dataset_size: usize,
    pub variant: VariantInput,
}

/// Share of discriminator outputs strictly below one half.
pub fn fpr_from_outputs(d: &[f64]) -> f64 {
    d.iter().filter(|&&v| v < 0.5).count() as f64 / d.len() as f64
}

/// Scores every held-out expert transition; `dataset_size` is the
/// discriminator's negative-pool size in frames, recorded for the sweep plot.
pub fn probe_fpr(
    disc: &Discriminator,
    policy: (&PolicyNet, &ParamSet<f32>),
    heldout: &DemoSet,
    dataset_size: usize,
) -> Result<FPRReport> {
    let index = heldout.index();
    if index.is_empty() {
        return Err(Error::InvalidArgument("held-out demonstration set is empty".into()));
    }
    let obs: Vec<_> = index.iter().map(|&(t, s)| &heldout.trajectories[t].observations[s]).collect();
    let actions: Vec<usize> = index.iter().map(|&(t, s)| heldout.trajectories[t].actions[s]).collect();
    let lp = policy_log_probs(policy.0, policy.1, &obs, &actions)?;
    let f = disc.rewards(&obs, &actions)?;
    let d: Vec<f64> = f.iter().zip(&lp).map(|(&f, &l)| discriminator_output(f as f64, l as f64)).collect();
    let variant = if disc.ae.is_some() { VariantInput::Encoded } else { VariantInput::Raw };
    Ok(FPRReport { fpr: fpr_from_outputs(&d), n_samples: d.len(), dataset_size, variant })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCell {
    pub variant_input: VariantInput,
    pub dataset_mode: DatasetMode,
    pub disc_input: DiscInput,
}

impl GridCell {
    pub fn apply(&self, base: &IrlConfig, seed: u64) -> IrlConfig {
        let mode = IrlConfig::for_mode(self.dataset_mode);
        IrlConfig {
            variant: self.variant_input,
            disc_input: self.disc_input,
            dataset_mode: self.dataset_mode,
            k: mode.k,
            samples_per_label: mode.samples_per_label,
            seed,
            ..*base
        }
    }

    pub fn label(&self) -> String {
        format!("{}-{}-{}", self.variant_input, self.dataset_mode, self.disc_input)
    }

    /// Every combination of the three grid axes.
    pub fn all() -> Vec<GridCell> {
        let mut out = Vec::new();
        for variant_input in [VariantInput::Raw, VariantInput::Encoded] {
            for dataset_mode in [DatasetMode::Small, DatasetMode::Large] {
                for disc_input in [DiscInput::State, DiscInput::StateAction] {
                    out.push(GridCell { variant_input, dataset_mode, disc_input });
                }
            }
        }
        out
    }
}

pub const STATUS_OK: &str = "ok";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub variant_input: VariantInput,
    pub dataset_mode: DatasetMode,
    pub disc_input: DiscInput,
    pub seed: u64,
    pub mean_gt_return: f64,
    pub std_gt_return: f64,
    pub final_fpr: f64,
    pub rounds_completed: usize,
    pub status: String,
}

impl GridRow {
    pub fn cell(&self) -> GridCell {
        GridCell { variant_input: self.variant_input, dataset_mode: self.dataset_mode, disc_input: self.disc_input }
    }

    pub fn failed(cell: GridCell, seed: u64, rounds_completed: usize, status: String) -> Self {
        Self {
            variant_input: cell.variant_input,
            dataset_mode: cell.dataset_mode,
            disc_input: cell.disc_input,
            seed,
            mean_gt_return: f64::NAN,
            std_gt_return: f64::NAN,
            final_fpr: f64::NAN,
            rounds_completed,
            status,
        }
    }
}

pub fn read_grid_csv(path: &Path) -> Result<Vec<GridRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Csv(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn write_grid_csv(path: &Path, rows: &[GridRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Runs `run_cell` for every (cell, seed) pair that has no successful row in
/// `csv_path` yet, rewriting the CSV after each cell. Existing successful rows
/// are kept as they are, so reruns only retry missing or failed cells. A cell
/// error is recorded in its row's status rather than aborting the grid.
pub fn run_ablation_grid<F>(csv_path: &Path, cells: &[GridCell], seeds: &[u64], mut run_cell: F) -> Result<Vec<GridRow>>
where
    F: FnMut(GridCell, u64) -> Result<GridRow>,
{
    let mut rows: BTreeMap<(GridCell, u64), GridRow> =
        read_grid_csv(csv_path)?.into_iter().map(|r| ((r.cell(), r.seed), r)).collect();
    let flush = |rows: &BTreeMap<(GridCell, u64), GridRow>| -> Result<()> {
        let v: Vec<GridRow> = rows.values().cloned().collect();
        write_grid_csv(csv_path, &v)
    };
    for &cell in cells {
        for &seed in seeds {
            if rows.get(&(cell, seed)).is_some_and(|r| r.status == STATUS_OK) {
                continue;
            }
            let row = match run_cell(cell, seed) {
                Ok(row) => row,
                Err(e) => {
                    let kind = if e.is_divergence() { "diverged" } else { "failed" };
                    GridRow::failed(cell, seed, 0, format!("{kind}: {e}"))
                }
            };
            rows.insert((cell, seed), row);
            flush(&rows)?;
        }
    }
    flush(&rows)?;
    let wanted: Vec<GridRow> = cells
        .iter()
        .flat_map(|&c| seeds.iter().map(move |&s| (c, s)))
        .filter_map(|k| rows.get(&k).cloned())
        .collect();
    Ok(wanted)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelReconstruction {
    pub corpus_mse: f64,
    /// Mean absolute error over the block's pixels only.
    pub block_mae: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub frames: usize,
    pub pixel_class: ModelReconstruction,
    pub conventional: ModelReconstruction,
}

const RECON_CHUNK: usize = 64;

pub fn reconstruction_errors(ae: &AEParams<f32>, frames: &FrameCorpus, env: &CatcherConfig) -> Result<ModelReconstruction> {
    if frames.count() == 0 {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let (mut sq, mut abs_block, mut n_block) = (0.0f64, 0.0f64, 0usize);
    for start in (0..frames.count()).step_by(RECON_CHUNK) {
        let end = (start + RECON_CHUNK).min(frames.count());
        let x: Vec<f32> = frames.frames[start..end].iter().flat_map(|f| f.to_scalars::<f32>()).collect();
        let y = ae.reconstruct_batch(&x, end - start)?;
        for (i, pos) in frames.positions[start..end].iter().enumerate() {
            let mask = block_mask(pos, env);
            let off = i * FRAME_PIXELS;
            for p in 0..FRAME_PIXELS {
                let d = (x[off + p] - y[off + p]) as f64;
                sq += d * d;
                if mask[p] {
                    abs_block += d.abs();
                    n_block += 1;
                }
            }
        }
    }
    Ok(ModelReconstruction {
        corpus_mse: sq / (frames.count() * FRAME_PIXELS) as f64,
        block_mae: abs_block / n_block.max(1) as f64,
    })
}

/// Corpus MSE and block-region error for both models, plus an image grid
/// (rows: original, pixel-class, conventional) of the first `grid_frames`
/// frames when `out_dir` is given.
pub fn compare_reconstructions(
    pixel_ae: &AEParams<f32>,
    mse_ae: &AEParams<f32>,
    frames: &FrameCorpus,
    env: &CatcherConfig,
    out_dir: Option<&Path>,
    grid_frames: usize,
) -> Result<ReconstructionReport> {
    let report = ReconstructionReport {
        frames: frames.count(),
        pixel_class: reconstruction_errors(pixel_ae, frames, env)?,
        conventional: reconstruction_errors(mse_ae, frames, env)?,
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("reconstruction.json"), serde_json::to_string_pretty(&report)?)?;
        let n = grid_frames.min(frames.count());
        if n > 0 {
            let shown = frames.slice(0..n);
            let x: Vec<f32> = shown.frames.iter().flat_map(|f| f.to_scalars::<f32>()).collect();
            let rows = [x.clone(), pixel_ae.reconstruct_batch(&x, n)?, mse_ae.reconstruct_batch(&x, n)?];
            write_image_grid(&dir.join("reconstructions.png"), &rows, n)?;
        }
    }
    Ok(report)
}

/// Tiles frames into a grayscale PNG, one row per slice in `rows`.
pub fn write_image_grid(path: &Path, rows: &[Vec<f32>], per_row: usize) -> Result<()> {
    const GAP: u32 = 2;
    let w = per_row as u32 * (FRAME_W as u32 + GAP) + GAP;
    let h = rows.len() as u32 * (FRAME_H as u32 + GAP) + GAP;
    let mut img = image::GrayImage::from_pixel(w, h, image::Luma([64]));
    for (r, row) in rows.iter().enumerate() {
        for c in 0..per_row {
            let frame = RawFrame::from_luminance(&row[c * FRAME_PIXELS..(c + 1) * FRAME_PIXELS])?;
            let (ox, oy) = (GAP + c as u32 * (FRAME_W as u32 + GAP), GAP + r as u32 * (FRAME_H as u32 + GAP));
            for (i, &v) in frame.bytes().iter().enumerate() {
                img.put_pixel(ox + (i % FRAME_W) as u32, oy + (i / FRAME_W) as u32, image::Luma([v]));
            }
        }
    }
    img.save(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Dataset sizes (discriminator negative-pool frames) on the FPR plot's x-axis.
pub const FPR_SWEEP_FRAMES: [usize; 5] = [1024, 2048, 4096, 8192, 16384];

pub fn read_irl_history(path: &Path) -> Result<Vec<IrlHistoryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Csv(format!("{}: {e}", path.display()))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FprPoint {
    pub run: String,
    pub dataset_frames: usize,
    pub fpr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotOutputs {
    pub learning_curves: Vec<PathBuf>,
    pub merged_csv: PathBuf,
    pub fpr_plot: Option<PathBuf>,
    pub fpr_csv: Option<PathBuf>,
}

fn run_name(dir: &Path) -> String {
    dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string())
}

/// Registers a system sans-serif font for plot text; plots are drawn without
/// labels when none is found.
fn plot_font() -> bool {
    static FONT: OnceLock<bool> = OnceLock::new();
    *FONT.get_or_init(|| {
        let mut candidates: Vec<PathBuf> = std::env::var_os("GAMEIRL_FONT").map(PathBuf::from).into_iter().collect();
        candidates.extend(
            ["/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf", "/usr/share/fonts/TTF/DejaVuSans.ttf", "/Library/Fonts/Arial.ttf"]
                .map(PathBuf::from),
        );
        for p in candidates {
            if let Ok(bytes) = fs::read(&p) {
                let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if plotters::style::register_font("sans-serif", FontStyle::Normal, bytes).is_ok() {
                    return true;
                }
            }
        }
        false
    })
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Image(format!("plot: {e}"))
}

fn line_plot(path: &Path, title: &str, x_desc: &str, y_desc: &str, series: &[(String, Vec<(f64, f64)>)], x_range: (f64, f64), log_x: bool) -> Result<()> {
    let text = plot_font();
    let root = BitMapBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let pts = series.iter().flat_map(|s| s.1.iter().map(|p| p.1)).filter(|v| v.is_finite());
    let (lo, hi) = pts.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, if hi > lo { hi } else { lo + 1.0 }) } else { (0.0, 1.0) };
    let pad = 0.05 * (hi - lo);
    let mut builder = ChartBuilder::on(&root);
    builder.margin(15).x_label_area_size(if text { 40 } else { 0 }).y_label_area_size(if text { 60 } else { 0 });
    if text {
        builder.caption(title, ("sans-serif", 22));
    }
    let colors = [BLUE, RED, GREEN, MAGENTA, CYAN, BLACK];
    macro_rules! draw {
        ($chart:expr, $map:expr) => {{
            let mut chart = $chart;
            if text {
                chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw().map_err(plot_err)?;
            } else {
                chart.configure_mesh().x_labels(0).y_labels(0).draw().map_err(plot_err)?;
            }
            for (i, (name, s)) in series.iter().enumerate() {
                let c = colors[i % colors.len()];
                let pts: Vec<_> = s.iter().filter(|p| p.1.is_finite()).map($map).collect();
                let drawn = chart.draw_series(LineSeries::new(pts.clone(), c.stroke_width(2))).map_err(plot_err)?;
                if text {
                    drawn.label(name.as_str()).legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], c));
                }
                chart.draw_series(pts.into_iter().map(|p| Circle::new(p, 3, c.filled()))).map_err(plot_err)?;
            }
            if text && series.len() > 1 {
                chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
            }
        }};
    }
    if log_x {
        let chart = builder
            .build_cartesian_2d((x_range.0..x_range.1).log_scale(), (lo - pad)..(hi + pad))
            .map_err(plot_err)?;
        draw!(chart, |p: &(f64, f64)| (p.0, p.1));
    } else {
        let chart = builder.build_cartesian_2d(x_range.0..x_range.1, (lo - pad)..(hi + pad)).map_err(plot_err)?;
        draw!(chart, |p: &(f64, f64)| (p.0, p.1));
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Learning curves for each run, a merged history CSV, and (when any run has
/// a held-out FPR) FPR against the discriminator's dataset size.
pub fn emit_plots(run_dirs: &[PathBuf], out_dir: &Path) -> Result<PlotOutputs> {
    let missing: Vec<PathBuf> = run_dirs.iter().map(|d| d.join("history.csv")).filter(|p| !p.exists()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    fs::create_dir_all(out_dir)?;
    let mut out = PlotOutputs { merged_csv: out_dir.join("history_merged.csv"), ..Default::default() };
    let mut merged = format!("run,{IRL_HISTORY_HEADER}\n");
    let mut fpr_points = Vec::new();
    for dir in run_dirs {
        let name = run_name(dir);
        let hist = read_irl_history(&dir.join("history.csv"))?;
        for row in &hist {
            merged.push_str(&format!("{name},{}\n", row.csv_line()));
        }
        let curve: Vec<(f64, f64)> = hist.iter().map(|r| (r.env_steps as f64, r.mean_gt_return)).collect();
        let max_x = curve.last().map_or(1.0, |p| p.0.max(1.0));
        let path = out_dir.join(format!("{name}_learning_curve.png"));
        line_plot(&path, &name, "environment steps", "mean ground-truth return", &[(name.clone(), curve)], (0.0, max_x), false)?;
        out.learning_curves.push(path);
        if let (Some(last), Ok(cfg)) = (hist.iter().rev().find(|r| r.fpr_heldout.is_finite()), read_run_irl_config(dir)) {
            fpr_points.push(FprPoint { run: name, dataset_frames: cfg.k * cfg.rollout_length, fpr: last.fpr_heldout });
        }
    }
    fs::write(&out.merged_csv, merged)?;
    if !fpr_points.is_empty() {
        fpr_points.sort_by_key(|p| p.dataset_frames);
        let csv_path = out_dir.join("fpr_vs_dataset.csv");
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Csv(e.to_string()))?;
        for p in &fpr_points {
            w.serialize(p).map_err(|e| Error::Csv(e.to_string()))?;
        }
        w.flush()?;
        let mut by_size: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for p in &fpr_points {
            by_size.entry(p.dataset_frames).or_default().push(p.fpr);
        }
        let curve: Vec<(f64, f64)> = by_size.iter().map(|(&k, v)| (k as f64, gameirl_nn::ops::mean(v))).collect();
        let lo = curve.first().map_or(FPR_SWEEP_FRAMES[0] as f64, |p| p.0).min(FPR_SWEEP_FRAMES[0] as f64);
        let hi = curve.last().map_or(FPR_SWEEP_FRAMES[4] as f64, |p| p.0).max(FPR_SWEEP_FRAMES[4] as f64);
        let plot = out_dir.join("fpr_vs_dataset.png");
        line_plot(&plot, "held-out false positive rate", "discriminator dataset (frames)", "FPR", &[("mean FPR".into(), curve)], (lo * 0.9, hi * 1.1), true)?;
        out.fpr_plot = Some(plot);
        out.fpr_csv = Some(csv_path);
    }
    Ok(out)
}

pub fn read_run_irl_config(dir: &Path) -> Result<IrlConfig> {
    let s = fs::read_to_string(dir.join(IRL_CONFIG_FILE))?;
    Ok(serde_json::from_str(&s)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_boundary_and_counting() {
        assert_eq!(fpr_from_outputs(&[0.5; 10]), 0.0);
        let d: Vec<f64> = (0..100).map(|i| if i < 73 { 0.2 } else { 0.9 }).collect();
        assert!((fpr_from_outputs(&d) - 0.73).abs() < 1e-15);
    }

    #[test]
    fn grid_has_eight_cells() {
        let all = GridCell::all();
        assert_eq!(all.len(), 8);
        let base = IrlConfig::for_mode(DatasetMode::Small);
        let large = all.iter().find(|c| c.dataset_mode == DatasetMode::Large).unwrap().apply(&base, 3);
        assert_eq!((large.k, large.samples_per_label, large.seed), (8, 2048, 3));
        assert!(large.validate().is_ok());
    }
}
