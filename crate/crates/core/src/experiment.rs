//! Study plumbing shared by the command-line runner and the acceptance suite:
//! configuration, dataset simulation and persistence, evaluation and reports.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classic::{back_projection, bim_reconstruct, BimConfig};
use crate::error::{Error, Result};
use crate::forward::{add_awgn, incident_field, simulate, FieldRole, FieldSet, GreensOperators, ScatteringScene, SolverBackend};
use crate::glyph::{read_idx_images, Glyph};
use crate::forward::mie_reference;
use crate::grid::{austria_phantom_scaled, disk_phantom, make_grid, ContrastMap, GridSpec, PhantomKind, PhantomRecipe, PolygonParams};
use crate::loss::{LossVariant, TrainingSample};
use crate::metrics::{MetricReport, CONTRAST_RANGE};
use crate::net::{predict, train, NetConfig, NetParams, TrainConfig, TrainLog};
use crate::store::{self, ArrayRole, DatasetManifest, ManifestEntry, SampleRecord};

/// SNR tag used for noise-free arrays.
pub const CLEAN: f64 = f64::INFINITY;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic child seed for `(master, tags...)`.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix(master), |acc, t| splitmix(acc ^ splitmix(*t)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub nx: usize,
    pub ny: usize,
    /// DOI side in free-space wavelengths.
    pub side_wavelengths: f64,
    pub lambda0: f64,
    pub n_tx: usize,
    pub n_rx: usize,
    /// Radius of the antenna circle in wavelengths.
    pub antenna_radius_wavelengths: f64,
    pub solver: SolverBackend,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            nx: 32,
            ny: 32,
            side_wavelengths: 2.0,
            lambda0: 0.075,
            n_tx: 16,
            n_rx: 16,
            antenna_radius_wavelengths: 4.0,
            solver: SolverBackend::default(),
        }
    }
}

impl SceneConfig {
    pub fn build(&self) -> Result<ScatteringScene> {
        let side = self.side_wavelengths * self.lambda0;
        let grid = make_grid(self.nx, self.ny, side, side, self.lambda0)?;
        ScatteringScene::circular(grid, self.n_tx, self.n_rx, self.antenna_radius_wavelengths * self.lambda0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Digits,
    Polygons,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub train_count: usize,
    pub test_count: usize,
    pub eps_range: [f64; 2],
    pub seed: u64,
    pub snr_db: Vec<f64>,
    /// IDX image file for digit glyphs; procedural strokes are used when absent.
    pub glyph_file: Option<PathBuf>,
    pub polygon: PolygonParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::Digits,
            train_count: 200,
            test_count: 100,
            eps_range: [1.0, 5.0],
            seed: 1,
            snr_db: vec![20.0, 5.0],
            glyph_file: None,
            polygon: PolygonParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub test_snr: Vec<f64>,
    /// Number of test samples that also get a BIM reconstruction (0 disables BIM).
    pub bim_samples: usize,
    pub bim: BimConfig,
    /// Number of samples rendered as image panels.
    pub panels: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            test_snr: vec![20.0, 5.0],
            bim_samples: 0,
            bim: BimConfig::default(),
            panels: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub variants: Vec<LossVariant>,
    pub train_snr: Vec<f64>,
    pub test_snr: Vec<f64>,
    pub austria: bool,
    /// SNR used for training and testing in the Austria sweep.
    pub austria_snr: f64,
    pub austria_eps: Vec<f64>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            variants: LossVariant::ALL.to_vec(),
            train_snr: vec![20.0, 5.0],
            test_snr: vec![20.0, 5.0],
            austria: true,
            austria_snr: 20.0,
            austria_eps: vec![1.1, 1.2, 2.0, 3.0, 5.0],
        }
    }
}

/// Complete study description; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    pub dataset: DatasetConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub report: ReportConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Uses one seed for data, initialization and shuffling.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.dataset.seed = seed;
        self.net.rng_seed = seed;
        self.train.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.scene.build().map_err(cfg_err)?;
        if (self.net.height, self.net.width) != (self.scene.ny, self.scene.nx) {
            return Err(Error::Config(format!(
                "net input {}x{} differs from the scene grid {}x{}",
                self.net.height, self.net.width, self.scene.ny, self.scene.nx
            )));
        }
        self.net.validate().map_err(cfg_err)?;
        self.train.validate().map_err(cfg_err)?;
        let [lo, hi] = self.dataset.eps_range;
        if !(lo >= 1.0 && hi >= lo && hi <= 5.0) {
            return Err(Error::Config(format!("eps_range must lie in [1, 5], got [{lo}, {hi}]")));
        }
        let snrs = self
            .dataset
            .snr_db
            .iter()
            .chain(&self.eval.test_snr)
            .chain(&self.report.train_snr)
            .chain(&self.report.test_snr);
        for s in snrs {
            if !s.is_finite() {
                return Err(Error::Config(format!("SNR values must be finite dB numbers, got {s}")));
            }
        }
        for s in self.eval.test_snr.iter().chain(self.train.input_snr.iter()).chain(self.train.target_snr.iter()) {
            if !self.dataset.snr_db.contains(s) {
                return Err(Error::Config(format!("SNR {s} dB is not generated by the dataset block")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Scene plus the operators and incident fields derived from it.
pub struct SimContext {
    pub scene: ScatteringScene,
    pub ops: GreensOperators,
    pub einc: FieldSet,
    pub backend: SolverBackend,
}

impl SimContext {
    pub fn new(cfg: &SceneConfig) -> Result<Self> {
        let scene = cfg.build()?;
        let ops = GreensOperators::build(&scene)?;
        let einc = incident_field(&scene)?;
        Ok(SimContext {
            scene,
            ops,
            einc,
            backend: cfg.solver,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.scene.grid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Glyph source for digit phantoms.
pub enum GlyphSource {
    Procedural,
    Raster(Vec<Glyph>),
}

impl GlyphSource {
    pub fn from_config(cfg: &DatasetConfig) -> Result<Self> {
        match &cfg.glyph_file {
            Some(p) => {
                let g = read_idx_images(p)?;
                if g.is_empty() {
                    return Err(Error::Config(format!("{} holds no images", p.display())));
                }
                Ok(GlyphSource::Raster(g))
            }
            None => Ok(GlyphSource::Procedural),
        }
    }

    fn glyph(&self, split: Split, index: usize, seed: u64) -> Glyph {
        match self {
            GlyphSource::Procedural => Glyph::procedural((index % 10) as u8, seed),
            GlyphSource::Raster(g) => {
                // Train and test draw from disjoint halves of the file when it is large enough.
                let half = (g.len() / 2).max(1);
                let offset = if split == Split::Test && g.len() > 1 { half } else { 0 };
                g[(offset + index % half) % g.len()].clone()
            }
        }
    }
}

/// Phantom number `index` of a split.
pub fn phantom_for(cfg: &DatasetConfig, glyphs: &GlyphSource, split: Split, index: usize, grid: &GridSpec) -> Result<ContrastMap> {
    let seed = derive_seed(cfg.seed, &[split.tag(), index as u64]);
    let kind = match cfg.kind {
        DatasetKind::Digits => PhantomKind::Digit {
            glyph: glyphs.glyph(split, index, seed),
        },
        DatasetKind::Polygons => PhantomKind::Polygon(cfg.polygon),
    };
    PhantomRecipe {
        kind,
        eps_range: cfg.eps_range,
        rng_seed: seed,
    }
    .generate(grid)
}

/// Simulates every array a sample record holds: truth, clean and noisy BP
/// inputs, fields, and noisy copies of the scattered fields at each SNR.
pub fn simulate_record(ctx: &SimContext, chi: &ContrastMap, index: u64, seed: u64, snrs: &[f64]) -> Result<SampleRecord> {
    let sim = simulate(&ctx.ops, &ctx.einc, chi, ctx.backend)?;
    let grid = ctx.grid();
    let mut rec = SampleRecord::new(index, grid.ny, grid.nx);
    rec.put(ArrayRole::ChiTrue, CLEAN, chi.chi.clone());
    let bp = back_projection(&sim.measured, &ctx.ops, &ctx.einc)?;
    rec.put(ArrayRole::ChiBp, CLEAN, bp.chi);
    rec.put(ArrayRole::Current, CLEAN, sim.current.values.clone());
    rec.put(ArrayRole::TotalDoi, CLEAN, sim.total.values.clone());
    rec.put(ArrayRole::ScatteredDoi, CLEAN, sim.scattered_doi.values.clone());
    rec.put(ArrayRole::ScatteredMea, CLEAN, sim.measured.values.clone());
    for &snr in snrs {
        let mea = add_awgn(&sim.measured, snr, derive_seed(seed, &[1, snr.to_bits()]))?;
        let bp = back_projection(&mea, &ctx.ops, &ctx.einc)?;
        let doi = add_awgn(&sim.scattered_doi, snr, derive_seed(seed, &[2, snr.to_bits()]))?;
        rec.put(ArrayRole::ChiBp, snr, bp.chi);
        rec.put(ArrayRole::ScatteredMea, snr, mea.values);
        rec.put(ArrayRole::ScatteredDoi, snr, doi.values);
    }
    Ok(rec)
}

/// Simulates `count` samples of a split in parallel; output order is by index.
pub fn generate_records(ctx: &SimContext, cfg: &DatasetConfig, split: Split, count: usize) -> Result<Vec<SampleRecord>> {
    let glyphs = GlyphSource::from_config(cfg)?;
    let grid = ctx.grid();
    (0..count)
        .into_par_iter()
        .map(|i| {
            let chi = phantom_for(cfg, &glyphs, split, i, &grid)?;
            let seed = derive_seed(cfg.seed, &[split.tag(), i as u64, 7]);
            simulate_record(ctx, &chi, i as u64, seed, &cfg.snr_db)
        })
        .collect()
}

fn snr_tag(snr: Option<f64>) -> f64 {
    snr.unwrap_or(CLEAN)
}

pub fn contrast_map(rec: &SampleRecord, grid: GridSpec, role: ArrayRole, snr: Option<f64>) -> Result<ContrastMap> {
    ContrastMap::from_vec(grid, rec.get(role, snr_tag(snr))?.iter().copied().collect())
}

/// Network input at the given SNR (`None` for noise-free).
pub fn bp_input(rec: &SampleRecord, grid: GridSpec, snr: Option<f64>) -> Result<ContrastMap> {
    contrast_map(rec, grid, ArrayRole::ChiBp, snr)
}

/// Training sample as seen by a variant with the given input and target noise.
pub fn training_sample(rec: &SampleRecord, grid: GridSpec, input_snr: Option<f64>, target_snr: Option<f64>) -> Result<TrainingSample> {
    let field = |role: FieldRole, array: ArrayRole, snr: Option<f64>| -> Result<FieldSet> {
        Ok(FieldSet::new(role, rec.get(array, snr_tag(snr))?.clone()))
    };
    let s = TrainingSample {
        chi_true: contrast_map(rec, grid, ArrayRole::ChiTrue, None)?,
        chi_bp: bp_input(rec, grid, input_snr)?,
        j_true: field(FieldRole::Current, ArrayRole::Current, None)?,
        etot_true: field(FieldRole::TotalDoi, ArrayRole::TotalDoi, None)?,
        esca_doi: field(FieldRole::ScatteredDoi, ArrayRole::ScatteredDoi, target_snr)?,
        scene_ref: format!("sample-{}", rec.index),
    };
    s.validate()?;
    Ok(s)
}

pub fn training_samples(records: &[SampleRecord], grid: GridSpec, cfg: &TrainConfig) -> Result<Vec<TrainingSample>> {
    records
        .iter()
        .map(|r| training_sample(r, grid, cfg.input_snr, cfg.target_snr))
        .collect()
}

fn sample_file(index: usize) -> String {
    format!("sample_{index:05}.isct")
}

/// Writes records plus a checksummed manifest into `dir`.
pub fn write_dataset(dir: &Path, scene: &ScatteringScene, cfg: &DatasetConfig, split: Split, records: &[SampleRecord]) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let name = sample_file(i);
        let bytes = r.to_bytes();
        let path = dir.join(&name);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        files.push(ManifestEntry {
            file: name,
            sha256: store::sha256_hex(&bytes),
        });
    }
    let mut recipe = serde_json::to_value(cfg)?;
    if let Some(obj) = recipe.as_object_mut() {
        obj.insert("split".into(), serde_json::to_value(split)?);
    }
    let manifest = DatasetManifest {
        format_version: store::MANIFEST_VERSION,
        scene: scene.clone(),
        sample_count: records.len(),
        recipe,
        snr_variants: cfg.snr_db.clone(),
        master_seed: cfg.seed,
        created_by: format!("iscat {}", env!("CARGO_PKG_VERSION")),
        files,
    };
    store::write_manifest(dir, &manifest)?;
    Ok(manifest)
}

/// Reads a dataset directory, verifying checksums and grid dimensions.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<SampleRecord>)> {
    let m = store::read_manifest(dir)?;
    let grid = m.scene.grid;
    let records = m
        .files
        .iter()
        .map(|f| {
            let r = store::read_sample(&dir.join(&f.file))?;
            if (r.ny as usize, r.nx as usize) != (grid.ny, grid.nx) {
                return Err(Error::ShapeMismatch(format!("{} does not match the manifest grid", f.file)));
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((m, records))
}

/// Metrics of BP inputs at one SNR.
pub fn bp_report(records: &[SampleRecord], grid: GridSpec, snr: Option<f64>) -> Result<(MetricReport, Vec<ContrastMap>)> {
    let preds = records.iter().map(|r| bp_input(r, grid, snr)).collect::<Result<Vec<_>>>()?;
    let truths = truths(records, grid)?;
    Ok((MetricReport::from_pairs(format!("bp@{}", snr_label(snr)), &preds, &truths)?, preds))
}

pub fn truths(records: &[SampleRecord], grid: GridSpec) -> Result<Vec<ContrastMap>> {
    records.iter().map(|r| contrast_map(r, grid, ArrayRole::ChiTrue, None)).collect()
}

/// BIM reconstructions of the first `count` records from their noisy measurements.
pub fn bim_report(ctx: &SimContext, records: &[SampleRecord], snr: Option<f64>, cfg: &BimConfig) -> Result<(MetricReport, Vec<ContrastMap>)> {
    let grid = ctx.grid();
    let preds = records
        .iter()
        .map(|r| {
            let mea = FieldSet::new(FieldRole::ScatteredMea, r.get(ArrayRole::ScatteredMea, snr_tag(snr))?.clone());
            Ok(bim_reconstruct(&mea, &ctx.ops, &ctx.einc, cfg)?.chi)
        })
        .collect::<Result<Vec<_>>>()?;
    let truths = truths(records, grid)?;
    Ok((MetricReport::from_pairs(format!("bim@{}", snr_label(snr)), &preds, &truths)?, preds))
}

/// Network predictions and metrics for inputs at one SNR.
pub fn model_report(label: &str, params: &NetParams, records: &[SampleRecord], grid: GridSpec, snr: Option<f64>) -> Result<(MetricReport, Vec<ContrastMap>)> {
    let inputs = records.iter().map(|r| bp_input(r, grid, snr)).collect::<Result<Vec<_>>>()?;
    let preds = predict(params, &inputs)?;
    let truths = truths(records, grid)?;
    Ok((MetricReport::from_pairs(format!("{label}@{}", snr_label(snr)), &preds, &truths)?, preds))
}

pub fn snr_label(snr: Option<f64>) -> String {
    match snr {
        Some(s) => format!("{s}dB"),
        None => "clean".into(),
    }
}

/// Side-by-side `Re χ` panels: truth first, then each reconstruction.
pub fn export_row(path: &Path, truth: &ContrastMap, others: &[&ContrastMap]) -> Result<()> {
    let mut maps: Vec<Array2<f64>> = vec![truth.real_part()];
    maps.extend(others.iter().map(|m| m.real_part()));
    let refs: Vec<&Array2<f64>> = maps.iter().collect();
    store::export_panels(&refs, path, 0.0, CONTRAST_RANGE)
}

/// Train config for one `(variant, train SNR)` cell of the mismatch study.
///
/// The noise enters where each variant can see it: the network input for
/// `contrast-noisy`, the scattered-field target for `field`. `contrast-clean`
/// and `current` train on noise-free data regardless of the cell.
pub fn variant_config(base: &TrainConfig, variant: LossVariant, train_snr: f64) -> TrainConfig {
    let (input_snr, target_snr) = match variant {
        LossVariant::ContrastClean | LossVariant::Current => (None, None),
        LossVariant::ContrastNoisy => (Some(train_snr), None),
        LossVariant::Field => (None, Some(train_snr)),
    };
    TrainConfig {
        variant,
        input_snr,
        target_snr,
        ..*base
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub variant: LossVariant,
    pub train_snr: f64,
    pub test_snr: f64,
    pub mse_mean: f64,
    pub mse_median: f64,
    pub mse_std: f64,
    pub ssim_mean: f64,
    pub ssim_median: f64,
    pub ssim_std: f64,
}

pub struct TrainedModel {
    pub config: TrainConfig,
    pub params: NetParams,
    pub log: TrainLog,
}

/// Trains one model per distinct effective configuration and evaluates every
/// `(variant, train SNR, test SNR)` cell.
pub fn snr_grid_study(
    ctx: &SimContext,
    train_records: &[SampleRecord],
    test_records: &[SampleRecord],
    net: &NetConfig,
    base: &TrainConfig,
    report: &ReportConfig,
) -> Result<(Vec<GridRow>, Vec<TrainedModel>)> {
    let grid = ctx.grid();
    let mut models: Vec<TrainedModel> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows = Vec::new();
    for &variant in &report.variants {
        for &train_snr in &report.train_snr {
            let cfg = variant_config(base, variant, train_snr);
            let key = format!("{:?}|{:?}|{:?}", cfg.variant, cfg.input_snr, cfg.target_snr);
            let m = match index.get(&key) {
                Some(&m) => m,
                None => {
                    let samples = training_samples(train_records, grid, &cfg)?;
                    let (params, log) = train(&samples, None, net, &cfg, &ctx.ops)?;
                    models.push(TrainedModel { config: cfg, params, log });
                    index.insert(key, models.len() - 1);
                    models.len() - 1
                }
            };
            for &test_snr in &report.test_snr {
                let (r, _) = model_report(variant.label(), &models[m].params, test_records, grid, Some(test_snr))?;
                rows.push(GridRow {
                    variant,
                    train_snr,
                    test_snr,
                    mse_mean: r.mse_summary.mean,
                    mse_median: r.mse_summary.median,
                    mse_std: r.mse_summary.std,
                    ssim_mean: r.ssim_summary.mean,
                    ssim_median: r.ssim_summary.median,
                    ssim_std: r.ssim_summary.std,
                });
            }
        }
    }
    Ok((rows, models))
}

pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut s = String::from("variant,train_snr_db,test_snr_db,mse_mean,mse_median,mse_std,ssim_mean,ssim_median,ssim_std\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6e},{:.6e},{:.6e},{:.6},{:.6},{:.6}",
            r.variant, r.train_snr, r.test_snr, r.mse_mean, r.mse_median, r.mse_std, r.ssim_mean, r.ssim_median, r.ssim_std
        );
    }
    s
}

/// Which part of the Austria profile a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AustriaSet {
    /// Whole profile.
    A,
    /// Annulus only; disks stay at 2.
    B,
    /// Left disk only; the rest stays at 2.
    C,
}

impl AustriaSet {
    pub const ALL: [AustriaSet; 3] = [AustriaSet::A, AustriaSet::B, AustriaSet::C];

    /// `(eps_disk_left, eps_disk_right, eps_ring)`.
    pub fn permittivities(self, eps: f64) -> (f64, f64, f64) {
        match self {
            AustriaSet::A => (eps, eps, eps),
            AustriaSet::B => (2.0, 2.0, eps),
            AustriaSet::C => (eps, 2.0, 2.0),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AustriaSet::A => "a",
            AustriaSet::B => "b",
            AustriaSet::C => "c",
        }
    }
}

/// Profile scale that keeps the nominal layout's proportion to a 5.6-wavelength DOI.
pub fn austria_scale(grid: &GridSpec) -> f64 {
    grid.side_x.min(grid.side_y) / (5.6 * grid.lambda0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AustriaRow {
    pub set: String,
    pub eps: f64,
    pub solver: String,
    pub mse: f64,
    pub ssim: f64,
}

/// Evaluates BP and each model on the Austria permittivity sweeps.
pub fn austria_study(ctx: &SimContext, models: &[(String, &NetParams)], eps_values: &[f64], snr: f64, seed: u64) -> Result<Vec<AustriaRow>> {
    let grid = ctx.grid();
    let scale = austria_scale(&grid);
    let mut rows = Vec::new();
    for set in AustriaSet::ALL {
        for (k, &eps) in eps_values.iter().enumerate() {
            let (l, r, ring) = set.permittivities(eps);
            let chi = austria_phantom_scaled(l, r, ring, scale, &grid)?;
            let rec = simulate_record(ctx, &chi, k as u64, derive_seed(seed, &[set as u64, k as u64]), &[snr])?;
            let recs = std::slice::from_ref(&rec);
            let (bp, _) = bp_report(recs, grid, Some(snr))?;
            rows.push(AustriaRow {
                set: set.label().into(),
                eps,
                solver: "bp".into(),
                mse: bp.mse[0],
                ssim: bp.ssim[0],
            });
            for (name, params) in models {
                let (m, _) = model_report(name, params, recs, grid, Some(snr))?;
                rows.push(AustriaRow {
                    set: set.label().into(),
                    eps,
                    solver: name.clone(),
                    mse: m.mse[0],
                    ssim: m.ssim[0],
                });
            }
        }
    }
    Ok(rows)
}

pub fn austria_csv(rows: &[AustriaRow]) -> String {
    let mut s = String::from("set,eps,solver,mse,ssim\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:.6e},{:.6}", r.set, r.eps, r.solver, r.mse, r.ssim);
    }
    s
}

/// Outcome of comparing the mean test MSE of two solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    pub test_snr: f64,
    pub challenger: LossVariant,
    pub challenger_mse: f64,
    pub baseline_mse: f64,
    pub holds: bool,
}

/// Compares each physics-guided variant with `contrast-clean` at its test SNR.
pub fn trend_checks(rows: &[GridRow], pairs: &[(LossVariant, f64)]) -> Vec<TrendCheck> {
    pairs
        .iter()
        .filter_map(|&(challenger, test_snr)| {
            let find = |v: LossVariant| {
                rows.iter()
                    .filter(|r| r.variant == v && r.test_snr == test_snr)
                    .map(|r| r.mse_mean)
                    .reduce(f64::min)
            };
            let c = find(challenger)?;
            let b = find(LossVariant::ContrastClean)?;
            Some(TrendCheck {
                test_snr,
                challenger,
                challenger_mse: c,
                baseline_mse: b,
                holds: c <= b,
            })
        })
        .collect()
}

/// Mean of `|χ|` over a map, handy in summaries.
pub fn mean_abs(map: &ContrastMap) -> f64 {
    map.chi.iter().map(|c| c.norm()).sum::<f64>() / map.chi.len() as f64
}

/// Setup of the analytic cylinder comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MieCheckConfig {
    pub eps_r: f64,
    pub radius_wavelengths: f64,
    /// Cells per side of the square DOI.
    pub cells: usize,
    pub side_wavelengths: f64,
    pub n_tx: usize,
    pub n_rx: usize,
    pub antenna_radius_wavelengths: f64,
    pub lambda0: f64,
    pub solver: SolverBackend,
}

impl Default for MieCheckConfig {
    fn default() -> Self {
        MieCheckConfig {
            eps_r: 2.0,
            radius_wavelengths: 0.5,
            cells: 64,
            side_wavelengths: 1.2,
            n_tx: 16,
            n_rx: 16,
            antenna_radius_wavelengths: 4.0,
            lambda0: 0.075,
            solver: SolverBackend::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MieCheck {
    /// Relative L2 error of the receiver field, one entry per transmitter.
    pub per_tx: Vec<f64>,
    pub max_error: f64,
    pub cells_per_medium_wavelength: f64,
    pub series_order: usize,
}

/// Compares the discretized forward solver with the cylinder series.
pub fn mie_check(cfg: &MieCheckConfig) -> Result<MieCheck> {
    let side = cfg.side_wavelengths * cfg.lambda0;
    let grid = make_grid(cfg.cells, cfg.cells, side, side, cfg.lambda0)?;
    let scene = ScatteringScene::circular(grid, cfg.n_tx, cfg.n_rx, cfg.antenna_radius_wavelengths * cfg.lambda0)?;
    let radius = cfg.radius_wavelengths * cfg.lambda0;
    let (reference, series) = mie_reference(cfg.eps_r, radius, &scene)?;
    let ops = GreensOperators::build(&scene)?;
    let einc = incident_field(&scene)?;
    let chi = disk_phantom(cfg.eps_r, radius, grid.center, &grid)?;
    let sim = simulate(&ops, &einc, &chi, cfg.solver)?;
    let per_tx: Vec<f64> = sim
        .measured
        .values
        .outer_iter()
        .zip(reference.values.outer_iter())
        .map(|(m, r)| {
            let num: f64 = m.iter().zip(r.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
            let den: f64 = r.iter().map(|b| b.norm_sqr()).sum();
            (num / den).sqrt()
        })
        .collect();
    Ok(MieCheck {
        max_error: per_tx.iter().copied().fold(0.0, f64::max),
        per_tx,
        cells_per_medium_wavelength: cfg.lambda0 / cfg.eps_r.sqrt() / grid.dx(),
        series_order: series.order(),
    })
}
