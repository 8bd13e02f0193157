//! End-to-end pipelines behind the command line: each experiment kind reads
//! an [`ExperimentConfig`], writes its artifacts under the output directory
//! and returns a [`RunReport`].
//!
//! All randomness is keyed by `(seed, job)` so results do not depend on the
//! worker count or on scheduling.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::{compute_ntk, loss_landscape, ntk_energy_curve};
use crate::config::{ExperimentConfig, ExperimentKind, Method};
use crate::error::{Error, Result};
use crate::grid::{make_coord_grid, ImageGrid};
use crate::inverse::{add_poisson_noise, denoise_fit, has_inversion, noisy_input_psnr, tradeoff_report, MethodResults, TradeoffRow};
use crate::io::{fitting_plotdata, load_image_dir, ntk_plotdata, save_image, write_text};
use crate::metrics::{psnr, ssim};
use crate::model::{init_siren, load_checkpoint, save_checkpoint, SineMlpParams};
use crate::noise::{gen_corpus, NoiseFamily, NoiseSpec};
use crate::photos::pseudo_photo_set;
use crate::rng::{stream_id, Rng};
use crate::spectrum::radial_power_spectrum;
use crate::training::{fit, make_test_model, mean_trace, pretrain, render, FitTrace, SnpModel};
use crate::video::{build_resfield, denoise_video, fit_video, mean_final_psnr, synthetic_video, with_time_input, VideoGrid};

const TAG_PRETRAIN: u32 = 2;
const TAG_TEST_INIT: u32 = 3;
const TAG_NOISY: u32 = 4;
const TAG_FACTORS: u32 = 5;
const TAG_VIDEO_NOISY: u32 = 6;
const TAG_LANDSCAPE: u32 = 8;
const TAG_VIDEO_INIT: u32 = 9;
/// Pseudo-photo index offset for video scenes, keeping them apart from
/// still test images.
const VIDEO_SCENE_OFFSET: u64 = 1 << 20;

pub const SENTINEL: &str = "FAILED";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub image: String,
    pub task: String,
    pub metric: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_iteration: Option<usize>,
    /// Not written to disk, so output trees stay byte-identical.
    #[serde(skip)]
    pub wall_seconds: f64,
}

/// Equality ignores `wall_seconds`.
impl PartialEq for ReportRow {
    fn eq(&self, o: &Self) -> bool {
        (&self.method, &self.image, &self.task, &self.metric, self.value, self.ssim, self.iterations, self.best_iteration)
            == (&o.method, &o.image, &o.task, &o.metric, o.value, o.ssim, o.iterations, o.best_iteration)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub task: String,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single row.
    pub std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_best_iteration: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<Aggregate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tradeoff: Option<Vec<TradeoffRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inversion: Option<bool>,
}

/// Means and standard deviations per `(method, task, metric)`, in order of
/// first appearance.
pub fn aggregate_rows(rows: &[ReportRow]) -> Vec<Aggregate> {
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String, String), Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.method.clone(), r.task.clone(), r.metric.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let n = g.len() as f64;
            let mean = g.iter().map(|r| r.value).sum::<f64>() / n;
            let std = if g.len() > 1 {
                (g.iter().map(|r| (r.value - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let best: Vec<f64> = g.iter().filter_map(|r| r.best_iteration.map(|b| b as f64)).collect();
            let mean_best_iteration = (best.len() == g.len()).then(|| best.iter().sum::<f64>() / n);
            Aggregate {
                method: key.0,
                task: key.1,
                metric: key.2,
                count: g.len(),
                mean,
                std,
                mean_best_iteration,
            }
        })
        .collect()
}

impl RunReport {
    fn new(kind: ExperimentKind, seed: u64, rows: Vec<ReportRow>) -> Self {
        let aggregates = aggregate_rows(&rows);
        Self {
            kind,
            seed,
            rows,
            aggregates,
            tradeoff: None,
            inversion: None,
        }
    }

    pub fn aggregate(&self, method: &str, task: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method && a.task == task)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::invalid(format!("report: {e}")))
    }

    /// Largest gap between the stored aggregates and a recomputation from
    /// the rows; `None` when the groups themselves differ.
    pub fn aggregate_drift(&self) -> Option<f64> {
        let again = aggregate_rows(&self.rows);
        if again.len() != self.aggregates.len() {
            return None;
        }
        let mut worst = 0.0f64;
        for (a, b) in again.iter().zip(&self.aggregates) {
            if (&a.method, &a.task, &a.metric, a.count) != (&b.method, &b.task, &b.metric, b.count) {
                return None;
            }
            worst = worst.max((a.mean - b.mean).abs()).max((a.std - b.std).abs());
        }
        Some(worst)
    }

    pub fn summary_table(&self) -> String {
        let mut s = format!(
            "{:<22} {:<14} {:<12} {:>5} {:>12} {:>10} {:>10}\n",
            "method", "task", "metric", "n", "mean", "std", "best_it"
        );
        for a in &self.aggregates {
            let best = a.mean_best_iteration.map_or("-".to_string(), |b| format!("{b:.1}"));
            s.push_str(&format!(
                "{:<22} {:<14} {:<12} {:>5} {:>12.4} {:>10.4} {:>10}\n",
                a.method, a.task, a.metric, a.count, a.mean, a.std, best
            ));
        }
        if let Some(inv) = self.inversion {
            s.push_str(&format!("fit/denoise inversion: {}\n", if inv { "yes" } else { "no" }));
        }
        s
    }
}

/// Process exit status for an error: 2 configuration, 4 I/O, 3 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Stage { source, .. } => exit_code(source),
        Error::Config { .. } => 2,
        Error::Io { .. } | Error::UnsupportedImage { .. } => 4,
        _ => 3,
    }
}

/// Applies `f` to every item on up to `jobs` threads; results keep the
/// input order and the first error (by index) wins.
pub fn par_map<T, R, F>(jobs: usize, items: Vec<T>, f: F) -> Result<Vec<R>>
where
    T: Send,
    R: Send,
    F: Fn(T) -> Result<R> + Sync,
{
    let n = items.len();
    if jobs <= 1 || n <= 1 {
        return items.into_iter().map(f).collect();
    }
    let slots: Vec<Mutex<Option<T>>> = items.into_iter().map(|t| Mutex::new(Some(t))).collect();
    let results: Vec<Mutex<Option<Result<R>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.min(n) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let item = slots[i].lock().unwrap().take().expect("each job runs once");
                let r = f(item);
                *results[i].lock().unwrap() = Some(r);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every job ran"))
        .collect()
}

type Progress<'a> = &'a (dyn Fn(&str) + Sync);

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    methods: Vec<Method>,
    snp: BTreeMap<String, SnpModel>,
    progress: Progress<'a>,
}

fn row(method: &str, image: &str, task: &str, metric: &str, value: f64, iterations: usize) -> ReportRow {
    ReportRow {
        method: method.into(),
        image: image.into(),
        task: task.into(),
        metric: metric.into(),
        value,
        ssim: None,
        iterations,
        best_iteration: None,
        wall_seconds: 0.0,
    }
}

impl Run<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn write(&self, rel: &str, text: &str) -> Result<()> {
        write_text(&self.path(rel), text)
    }

    fn image(&self, rel: &str, img: &ImageGrid) -> Result<()> {
        save_image(img, &self.path(rel))
    }

    fn log(&self, msg: &str) {
        (self.progress)(msg);
    }

    /// Encoder pretrained on `family` for the given geometry, loaded from the
    /// configured checkpoint directory or trained (once per run) and saved
    /// under `scope`.
    fn snp_model(&mut self, scope: &str, family: NoiseFamily, layout: &[usize], height: usize, width: usize, channels: usize) -> Result<SnpModel> {
        let name = format!("snp-{}", family.name());
        let key = format!("{scope}{name}");
        if let Some(m) = self.snp.get(&key) {
            return Ok(m.clone());
        }
        let cfg = self.cfg;
        let model = if let Some(dir) = &cfg.pretrain.checkpoints {
            let path = dir.join(format!("{scope}{name}.ckpt"));
            let m = SnpModel::from_checkpoint(load_checkpoint(&path)?)?;
            if m.layout() != layout {
                return Err(Error::invalid(format!(
                    "checkpoint {} has layout {:?}, run needs {layout:?}",
                    path.display(),
                    m.layout()
                )));
            }
            m
        } else {
            self.log(&format!("pretraining {scope}{name} on {} signals", cfg.pretrain.signals));
            let spec = NoiseSpec {
                params: cfg.noise.params(height, width),
                ..NoiseSpec::new(family, height, width, channels, cfg.seed)
            };
            let corpus = gen_corpus(&spec, cfg.pretrain.signals)?;
            let family_index = NoiseFamily::ALL.iter().position(|f| *f == family).unwrap_or(0) as u64;
            let mut rng = Rng::new(cfg.seed, stream_id(TAG_PRETRAIN, family_index));
            let (m, traces) = pretrain(&corpus.images, layout, cfg.model.activation(), &cfg.pretrain.fit_config(), &mut rng)?;
            let dir = format!("pretrain/{scope}");
            self.write(&format!("{dir}{name}-corpus.json"), &(corpus.manifest.to_json() + "\n"))?;
            self.write(&format!("{dir}{name}-trace.csv"), &mean_trace(&traces).to_csv())?;
            save_checkpoint(&m.to_checkpoint(cfg.seed), &self.path(&format!("{dir}{name}.ckpt")))?;
            m
        };
        self.snp.insert(key, model.clone());
        Ok(model)
    }

    /// Pretrained models for every SNP method, keyed by method name.
    fn snp_models(&mut self, scope: &str, layout: &[usize], h: usize, w: usize, ch: usize) -> Result<BTreeMap<String, SnpModel>> {
        let mut out = BTreeMap::new();
        for m in self.methods.clone() {
            if let Method::Snp(f) = m {
                let model = self.snp_model(scope, f, layout, h, w, ch)?;
                out.insert(m.name(), model);
            }
        }
        Ok(out)
    }

    fn test_images(&self) -> Result<Vec<(String, ImageGrid)>> {
        let d = &self.cfg.data;
        let imgs = match &d.images {
            Some(dir) => {
                let mut imgs = load_image_dir(dir)?;
                imgs.truncate(d.count);
                if imgs.iter().any(|(_, i)| !i.same_shape(&imgs[0].1)) {
                    return Err(Error::invalid("test images must share one shape"));
                }
                imgs
            }
            None => pseudo_photo_set(d.count, d.height, d.width, d.channels, self.cfg.seed)?
                .into_iter()
                .enumerate()
                .map(|(i, img)| (format!("photo-{i:02}"), img))
                .collect(),
        };
        Ok(imgs)
    }

    fn videos(&self) -> Result<Vec<(String, VideoGrid)>> {
        let v = &self.cfg.video;
        match &v.videos {
            Some(dir) => {
                let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
                    .map_err(|e| Error::io(dir, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.is_dir())
                    .collect();
                subdirs.sort();
                subdirs.truncate(v.count);
                subdirs
                    .iter()
                    .map(|p| {
                        let frames = load_image_dir(p)?.into_iter().map(|(_, f)| f).collect();
                        let name = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                        Ok((name, VideoGrid::new(frames)?))
                    })
                    .collect()
            }
            None => (0..v.count)
                .map(|i| {
                    let video = synthetic_video(v.frames, v.height, v.width, v.channels, self.cfg.seed, VIDEO_SCENE_OFFSET + i as u64)?;
                    Ok((format!("video-{i:02}"), video))
                })
                .collect(),
        }
    }

    fn test_init(&self, method: Method, snp: &BTreeMap<String, SnpModel>, layout: &[usize], index: usize) -> Result<SineMlpParams> {
        let mut rng = Rng::new(self.cfg.seed, stream_id(TAG_TEST_INIT, index as u64));
        match method {
            Method::Siren => init_siren(layout, self.cfg.model.activation(), &mut rng),
            Method::Snp(_) => make_test_model(&snp[&method.name()], &mut rng),
        }
    }
}

/// Runs the configured experiment, writing into `config.out` (required).
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    run_experiment_with(config, &|_| {})
}

/// As [`run_experiment`], reporting coarse progress through `progress`.
pub fn run_experiment_with(config: &ExperimentConfig, progress: Progress<'_>) -> Result<RunReport> {
    config.validate()?;
    let out = config.out.clone().ok_or_else(|| Error::Config {
        key: "out".into(),
        line: 0,
        message: "an output directory is required".into(),
    })?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let sentinel = out.join(SENTINEL);
    if sentinel.exists() {
        fs::remove_file(&sentinel).map_err(|e| Error::io(&sentinel, e))?;
    }
    let result = execute(config, &out, progress);
    if let Err(e) = &result {
        // Best effort; the original error is what matters.
        let _ = fs::write(&sentinel, format!("{e}\n"));
    }
    result
}

fn execute(config: &ExperimentConfig, out: &Path, progress: Progress<'_>) -> Result<RunReport> {
    let mut run = Run {
        cfg: config,
        out: out.to_path_buf(),
        methods: config.methods()?,
        snp: BTreeMap::new(),
        progress,
    };
    run.write("config.toml", &config.resolved().to_toml())?;
    let report = match config.kind {
        ExperimentKind::GenNoise => gen_noise(&run).map_err(|e| e.in_stage("gen-noise"))?,
        ExperimentKind::Pretrain => pretrain_stage(&mut run).map_err(|e| e.in_stage("pretrain"))?,
        ExperimentKind::Fit => image_tasks(&mut run, true, false)?,
        ExperimentKind::Denoise => image_tasks(&mut run, false, true)?,
        ExperimentKind::Tradeoff => image_tasks(&mut run, true, true)?,
        ExperimentKind::VideoFit => video_tasks(&mut run, false)?,
        ExperimentKind::VideoDenoise => video_tasks(&mut run, true)?,
        ExperimentKind::Ntk => ntk_stage(&mut run)?,
        ExperimentKind::Landscape => landscape_stage(&mut run)?,
    };
    run.write("report.json", &report.to_json())?;
    write_file_list(out)?;
    Ok(report)
}

/// `manifest.txt`: every output file, sorted, one per line.
fn write_file_list(out: &Path) -> Result<()> {
    fn walk(dir: &Path, root: &Path, acc: &mut Vec<String>) -> Result<()> {
        for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let p = e.map_err(|e| Error::io(dir, e))?.path();
            if p.is_dir() {
                walk(&p, root, acc)?;
            } else if let Ok(rel) = p.strip_prefix(root) {
                acc.push(rel.to_string_lossy().replace('\\', "/"));
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(out, out, &mut files)?;
    files.retain(|f| f != "manifest.txt" && f != SENTINEL);
    files.sort();
    write_text(&out.join("manifest.txt"), &(files.join("\n") + "\n"))
}

fn gen_noise(run: &Run) -> Result<RunReport> {
    let cfg = run.cfg;
    let d = &cfg.data;
    let spec = NoiseSpec {
        params: cfg.noise.params(d.height, d.width),
        ..NoiseSpec::new(cfg.noise.family, d.height, d.width, d.channels, cfg.seed)
    };
    let corpus = gen_corpus(&spec, cfg.noise.count)?;
    let mut rows = Vec::new();
    for (img, entry) in corpus.images.iter().zip(&corpus.manifest.entries) {
        run.image(&format!("noise/{}", entry.file), img)?;
        let slope = radial_power_spectrum(img)?.slope;
        rows.push(row(cfg.noise.family.name(), &entry.file, "gen-noise", "spectral_slope", slope, 0));
    }
    run.write("noise/manifest.json", &(corpus.manifest.to_json() + "\n"))?;
    Ok(RunReport::new(cfg.kind, cfg.seed, rows))
}

fn pretrain_stage(run: &mut Run) -> Result<RunReport> {
    let cfg = run.cfg;
    let d = &cfg.data;
    let layout = cfg.model.layout(2, d.channels);
    let mut rows = Vec::new();
    for m in run.methods.clone() {
        let Method::Snp(f) = m else { continue };
        let t = Instant::now();
        let model = run.snp_model("", f, &layout, d.height, d.width, d.channels)?;
        // Report each head's reconstruction of its own signal.
        let spec = NoiseSpec {
            params: cfg.noise.params(d.height, d.width),
            ..NoiseSpec::new(f, d.height, d.width, d.channels, cfg.seed)
        };
        let corpus = gen_corpus(&spec, cfg.pretrain.signals)?;
        for (i, img) in corpus.images.iter().enumerate() {
            let net = model.head_network(i)?;
            let p = psnr(&render(&net, d.height, d.width)?, img, 1.0)?;
            let mut r = row(&m.name(), &corpus.manifest.entries[i].file, "pretrain", "psnr", p, cfg.pretrain.iterations);
            r.wall_seconds = t.elapsed().as_secs_f64();
            rows.push(r);
        }
    }
    Ok(RunReport::new(cfg.kind, cfg.seed, rows))
}

struct ImageJob {
    method: Method,
    index: usize,
    denoise: bool,
}

struct ImageOutcome {
    row: ReportRow,
    trace: FitTrace,
    image: ImageGrid,
}

fn image_tasks(run: &mut Run, do_fit: bool, do_denoise: bool) -> Result<RunReport> {
    let cfg = run.cfg;
    let images = run.test_images().map_err(|e| e.in_stage("load images"))?;
    let (h, w, ch) = (images[0].1.height(), images[0].1.width(), images[0].1.channels());
    let layout = cfg.model.layout(2, ch);
    let snp = run.snp_models("", &layout, h, w, ch).map_err(|e| e.in_stage("pretrain"))?;
    let fit_cfg = cfg.fit.fit_config();
    let mut rows = Vec::new();

    let noisy: Vec<ImageGrid> = if do_denoise {
        let model = cfg.denoise.noise_model();
        let mut noisy = Vec::new();
        for (i, (name, clean)) in images.iter().enumerate() {
            let n = add_poisson_noise(clean, &model, &mut Rng::new(cfg.seed, stream_id(TAG_NOISY, i as u64)))?;
            run.image(&format!("noisy/{name}.png"), &n)?;
            rows.push(row("noisy-input", name, "denoise", "psnr", noisy_input_psnr(&n, clean)?, 0));
            noisy.push(n);
        }
        noisy
    } else {
        Vec::new()
    };

    let mut jobs = Vec::new();
    for &method in &run.methods {
        for index in 0..images.len() {
            if do_fit {
                jobs.push(ImageJob { method, index, denoise: false });
            }
            if do_denoise {
                jobs.push(ImageJob { method, index, denoise: true });
            }
        }
    }
    let total = jobs.len();
    let done = AtomicUsize::new(0);
    let runner = &*run;
    let outcomes = par_map(cfg.jobs, jobs, |job| {
        let t = Instant::now();
        let (name, clean) = &images[job.index];
        let init = runner.test_init(job.method, &snp, &layout, job.index)?;
        let mname = job.method.name();
        let outcome = if job.denoise {
            let d = denoise_fit(init, &noisy[job.index], clean, &fit_cfg)?;
            let image = d.denoised.clone().expect("denoise keeps its best image");
            let mut r = row(&mname, name, "denoise", "psnr", d.best_psnr, fit_cfg.iterations);
            r.best_iteration = Some(d.best_iteration);
            r.ssim = Some(ssim(&image, clean)?);
            ImageOutcome { row: r, trace: d.trace, image }
        } else {
            let (params, trace) = fit(init, clean, &fit_cfg)?;
            let image = render(&params, h, w)?;
            let mut r = row(&mname, name, "fit", "psnr", trace.final_psnr(), fit_cfg.iterations);
            r.ssim = Some(ssim(&image, clean)?);
            ImageOutcome { row: r, trace, image }
        };
        let n = done.fetch_add(1, Ordering::Relaxed) + 1;
        runner.log(&format!("[{n}/{total}] {} {} {name}: {:.2} dB", outcome.row.task, mname, outcome.row.value));
        let mut outcome = outcome;
        outcome.row.wall_seconds = t.elapsed().as_secs_f64();
        Ok(outcome)
    })
    .map_err(|e| e.in_stage(if do_fit && !do_denoise { "fit" } else { "denoise" }))?;

    let mut curves: BTreeMap<&str, Vec<(String, FitTrace)>> = BTreeMap::new();
    for method in &run.methods {
        for task in ["fit", "denoise"] {
            let traces: Vec<FitTrace> = outcomes
                .iter()
                .filter(|o| o.row.method == method.name() && o.row.task == task)
                .map(|o| o.trace.clone())
                .collect();
            if !traces.is_empty() {
                curves.entry(task).or_default().push((method.name(), mean_trace(&traces)));
            }
        }
    }
    for o in &outcomes {
        let dir = if o.row.task == "fit" { "fit" } else { "denoise" };
        run.write(&format!("{dir}/{}/{}.csv", o.row.method, o.row.image), &o.trace.to_csv())?;
        run.image(&format!("{dir}/{}/{}.png", o.row.method, o.row.image), &o.image)?;
    }
    for (task, c) in &curves {
        let file = if *task == "fit" { "fitting" } else { "denoising" };
        run.write(&format!("plotdata/{file}.csv"), &fitting_plotdata(c)?)?;
    }
    rows.extend(outcomes.into_iter().map(|o| o.row));

    let mut report = RunReport::new(cfg.kind, cfg.seed, rows);
    if do_fit && do_denoise {
        let ids: Vec<String> = images.iter().map(|(n, _)| n.clone()).collect();
        let per_method: Vec<MethodResults> = run
            .methods
            .iter()
            .map(|m| {
                let pick = |task: &str| -> Vec<f64> {
                    report
                        .rows
                        .iter()
                        .filter(|r| r.method == m.name() && r.task == task)
                        .map(|r| r.value)
                        .collect()
                };
                MethodResults {
                    method: m.name(),
                    image_ids: ids.clone(),
                    fit_psnr: pick("fit"),
                    denoise_psnr: pick("denoise"),
                }
            })
            .collect();
        let table = tradeoff_report(&per_method)?;
        report.inversion = Some(has_inversion(&table));
        report.tradeoff = Some(table);
    }
    Ok(report)
}

fn video_tasks(run: &mut Run, denoise: bool) -> Result<RunReport> {
    let cfg = run.cfg;
    let v = &cfg.video;
    let videos = run.videos().map_err(|e| e.in_stage("load videos"))?;
    let (h, w, ch) = (videos[0].1.height(), videos[0].1.width(), videos[0].1.channels());
    let layout = v.layout();
    if *layout.last().unwrap() != ch {
        return Err(Error::invalid("video.channels does not match the loaded frames"));
    }
    let snp = run.snp_models("video/", &layout, h, w, ch).map_err(|e| e.in_stage("pretrain"))?;
    let fit_cfg = v.fit_config();
    let task = if denoise { "video-denoise" } else { "video-fit" };
    let stage = task;

    let noisy: Vec<Option<VideoGrid>> = videos
        .iter()
        .enumerate()
        .map(|(i, (name, clean))| {
            if !denoise {
                return Ok(None);
            }
            let model = cfg.denoise.noise_model();
            let frames = clean
                .frames()
                .iter()
                .enumerate()
                .map(|(t, f)| {
                    let stream = stream_id(TAG_VIDEO_NOISY, ((i as u64) << 20) | t as u64);
                    let n = add_poisson_noise(f, &model, &mut Rng::new(cfg.seed, stream))?;
                    run.image(&format!("noisy/{name}/{t:03}.png"), &n)?;
                    Ok(n)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Some(VideoGrid::new(frames)?))
        })
        .collect::<Result<_>>()?;

    let mut jobs = Vec::new();
    for &m in &run.methods {
        for i in 0..videos.len() {
            jobs.push((m, i));
        }
    }
    let total = jobs.len();
    let done = AtomicUsize::new(0);
    let runner = &*run;
    let outcomes = par_map(cfg.jobs, jobs, |(method, i)| {
        let t = Instant::now();
        let (name, clean) = &videos[i];
        let mut rng = Rng::new(cfg.seed, stream_id(TAG_VIDEO_INIT, i as u64));
        let shared = match method {
            Method::Siren => {
                let mut l = layout.clone();
                if v.time_input {
                    l[0] = 3;
                }
                init_siren(&l, cfg.model.activation(), &mut rng)?
            }
            Method::Snp(_) => {
                let net = make_test_model(&snp[&method.name()], &mut rng)?;
                if v.time_input {
                    with_time_input(&net)?
                } else {
                    net
                }
            }
        };
        let rf = build_resfield(shared, v.rank, clean.len(), v.sigma, &mut Rng::new(cfg.seed, stream_id(TAG_FACTORS, i as u64)))?;
        let mname = method.name();
        let (r, traces, frames) = if let Some(noisy) = &noisy[i] {
            let d = denoise_video(rf, noisy, clean, &fit_cfg)?;
            let mut r = row(&mname, name, task, "psnr", d.best_mean_psnr, fit_cfg.iterations);
            r.best_iteration = Some(d.best_iteration);
            let frames: Vec<ImageGrid> = d.frames.iter().map(|f| f.denoised.clone().expect("kept")).collect();
            (r, d.frames.into_iter().map(|f| f.trace).collect::<Vec<_>>(), frames)
        } else {
            let (fitted, traces) = fit_video(rf, clean, &fit_cfg)?;
            let frames = (0..clean.len())
                .map(|t| ImageGrid::from_matrix(h, w, fitted.predict_frame(t, h, w)?.view()))
                .collect::<Result<Vec<_>>>()?;
            let r = row(&mname, name, task, "psnr", mean_final_psnr(&traces), fit_cfg.iterations);
            (r, traces, frames)
        };
        let n = done.fetch_add(1, Ordering::Relaxed) + 1;
        runner.log(&format!("[{n}/{total}] {task} {mname} {name}: {:.2} dB", r.value));
        let mut r = r;
        r.wall_seconds = t.elapsed().as_secs_f64();
        Ok((r, traces, frames))
    })
    .map_err(|e| e.in_stage(stage))?;

    let mut curves = Vec::new();
    for m in &run.methods {
        let all: Vec<FitTrace> = outcomes
            .iter()
            .filter(|(r, _, _)| r.method == m.name())
            .flat_map(|(_, t, _)| t.iter().cloned())
            .collect();
        curves.push((m.name(), mean_trace(&all)));
    }
    for (r, traces, frames) in &outcomes {
        for (t, (trace, frame)) in traces.iter().zip(frames).enumerate() {
            run.write(&format!("{task}/{}/{}/{t:03}.csv", r.method, r.image), &trace.to_csv())?;
            run.image(&format!("{task}/{}/{}/{t:03}.png", r.method, r.image), frame)?;
        }
    }
    run.write(&format!("plotdata/{task}.csv"), &fitting_plotdata(&curves)?)?;
    Ok(RunReport::new(cfg.kind, cfg.seed, outcomes.into_iter().map(|(r, _, _)| r).collect()))
}

fn analysis_targets(run: &Run) -> Result<Vec<(String, ImageGrid)>> {
    let a = &run.cfg.analysis;
    Ok(pseudo_photo_set(a.targets, a.size, a.size, a.channels, run.cfg.seed)?
        .into_iter()
        .enumerate()
        .map(|(i, img)| (format!("target-{i:02}"), img))
        .collect())
}

fn ntk_stage(run: &mut Run) -> Result<RunReport> {
    let cfg = run.cfg;
    let a = &cfg.analysis;
    let layout = a.layout();
    let targets = analysis_targets(run)?;
    let snp = run
        .snp_models("analysis/", &layout, a.size, a.size, a.channels)
        .map_err(|e| e.in_stage("pretrain"))?;
    let grid = make_coord_grid(a.size, a.size)?;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for &method in &run.methods.clone() {
        let mname = method.name();
        let mut mean_curve: Vec<(f64, f64)> = Vec::new();
        for (i, (name, target)) in targets.iter().enumerate() {
            let init = run.test_init(method, &snp, &layout, i)?;
            let k = compute_ntk(&init, grid.points()).map_err(|e| e.in_stage("ntk"))?;
            let s = ntk_energy_curve(k, target.data()).map_err(|e| e.in_stage("ntk"))?;
            let curve = s.percentile_curve();
            let dir = format!("ntk/{mname}/{name}");
            let eig: String = std::iter::once("index,eigenvalue,energy".to_string())
                .chain(s.eigenvalues.iter().zip(&s.target_energy).enumerate().map(|(j, (l, e))| format!("{j},{l:e},{e}")))
                .map(|l| l + "\n")
                .collect();
            run.write(&format!("{dir}-spectrum.csv"), &eig)?;
            let top: Vec<Vec<f64>> = (0..s.len().min(4)).map(|c| s.eigenvectors.column(c).to_vec()).collect();
            let meta = serde_json::json!({
                "method": mname,
                "target": name,
                "outputs": s.len(),
                "layout": layout,
                "percentile": a.percentile,
                "energy_at_percentile": s.energy_at_percentile(a.percentile),
                "top_eigenvectors": top,
            });
            run.write(&format!("{dir}.json"), &(serde_json::to_string_pretty(&meta).expect("json") + "\n"))?;
            if mean_curve.is_empty() {
                mean_curve = curve.iter().map(|(p, _)| (*p, 0.0)).collect();
            }
            for (m, (_, e)) in mean_curve.iter_mut().zip(&curve) {
                m.1 += e / targets.len() as f64;
            }
            let pct = format!("energy@{}", a.percentile);
            rows.push(row(&mname, name, "ntk", &pct, s.energy_at_percentile(a.percentile), 0));
        }
        run.log(&format!("ntk {mname} done"));
        curves.push((mname, mean_curve));
    }
    run.write("plotdata/ntk.csv", &ntk_plotdata(&curves)?)?;
    Ok(RunReport::new(cfg.kind, cfg.seed, rows))
}

fn landscape_stage(run: &mut Run) -> Result<RunReport> {
    let cfg = run.cfg;
    let a = &cfg.analysis;
    let layout = a.layout();
    let targets = analysis_targets(run)?;
    let (tname, target) = &targets[0];
    let snp = run
        .snp_models("analysis/", &layout, a.size, a.size, a.channels)
        .map_err(|e| e.in_stage("pretrain"))?;
    let mut rows = Vec::new();
    for &method in &run.methods.clone() {
        let mname = method.name();
        let init = run.test_init(method, &snp, &layout, 0)?;
        let (fitted, _) = fit(init, target, &cfg.fit.fit_config()).map_err(|e| e.in_stage("fit"))?;
        for k in 0..a.seeds {
            let mut rng = Rng::new(cfg.seed, stream_id(TAG_LANDSCAPE, k as u64));
            let slice = loss_landscape(&fitted, target, a.resolution, a.span, &mut rng).map_err(|e| e.in_stage("landscape"))?;
            let c = (a.resolution - 1) / 2;
            let (i, j) = slice.argmin();
            let dist = i.abs_diff(c).max(j.abs_diff(c));
            let dir = format!("landscape/{mname}/seed-{k:02}");
            run.write(&format!("{dir}.csv"), &slice.to_csv())?;
            let meta = serde_json::json!({
                "method": mname,
                "target": tname,
                "resolution": slice.resolution,
                "span": slice.span,
                "axis": slice.axis,
                "directions": slice.directions,
                "center_loss": slice.center(),
                "argmin": [i, j],
            });
            run.write(&format!("{dir}.json"), &(serde_json::to_string_pretty(&meta).expect("json") + "\n"))?;
            rows.push(row(&mname, &format!("seed-{k:02}"), "landscape", "argmin_offset", dist as f64, cfg.fit.iterations));
        }
        run.log(&format!("landscape {mname} done"));
    }
    Ok(RunReport::new(cfg.kind, cfg.seed, rows))
}
