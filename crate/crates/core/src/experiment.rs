//! Compression-sweep experiment runner.
//!
//! Builds a uniform-linear-array scenario from a JSON config, sweeps the
//! number of compressed samples `N_y` over a nested family of Gaussian
//! measurement matrices, computes `CRB(Omega)` at each point, and emits a
//! CSV table, an SVG line plot, and a JSON run manifest. Identical configs
//! produce byte-identical outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doa::{build_doa_family, UlaConfig};
use crate::error::CrbError;
use crate::fim::crb_omega_closed_form;
use crate::model::{MeasurementScheme, ModelInstance, SnapshotSet};
use crate::plot;
use crate::singularity::{classify_fim, VerdictKind};
use crate::tolerances;

fn default_out_dir() -> PathBuf {
    PathBuf::from("crb_sweep_out")
}

/// Full description of one sweep run. Every field except `out_dir` is
/// required in the JSON config; unknown fields are rejected.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Array elements `N_x`.
    pub n_elements: usize,
    /// Element spacing in wavelengths (`d/lambda`).
    pub spacing_ratio: f64,
    /// Source directions in degrees; also fixes `K = P`.
    pub source_angles_deg: Vec<f64>,
    /// Snapshot count `N`.
    pub n_snapshots: usize,
    /// `10 log10(source_power / noise_power)`.
    pub snr_db: f64,
    /// Per-source signal power `sigma_s^2`.
    pub source_power: f64,
    /// Seed for the nested Gaussian measurement matrix.
    pub seed_phi: u64,
    /// Seed for the one-time draw of the source amplitudes.
    pub seed_sources: u64,
    /// `N_y` values to sweep, conventionally descending.
    pub ny_range: Vec<usize>,
    /// 1-based parameter index plotted in the SVG output.
    pub target_param_index: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// The bundled demonstration scenario: a 50-element half-wavelength
    /// ULA, 11 sources at 20..50 degrees in 3-degree steps, 10 snapshots,
    /// 10 dB SNR, sweeping `N_y` from 50 down to 11 and plotting the bound
    /// for the center source at 35 degrees.
    pub fn default_scenario() -> Self {
        ExperimentConfig {
            n_elements: 50,
            spacing_ratio: 0.5,
            source_angles_deg: (0..11).map(|i| 20.0 + 3.0 * i as f64).collect(),
            n_snapshots: 10,
            snr_db: 10.0,
            source_power: 1.0,
            seed_phi: 101,
            seed_sources: 202,
            ny_range: (11..=50).rev().collect(),
            target_param_index: 6,
            out_dir: default_out_dir(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self, CrbError> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Returns advisory warnings; errors on anything that would make the
    /// sweep ill-defined.
    pub fn validate(&self) -> Result<Vec<String>, CrbError> {
        if self.n_elements == 0 {
            return Err(CrbError::InvalidConfig(
                "n_elements must be positive".into(),
            ));
        }
        if self.source_angles_deg.is_empty() {
            return Err(CrbError::InvalidConfig(
                "need at least one source angle".into(),
            ));
        }
        if self.n_snapshots == 0 {
            return Err(CrbError::InvalidConfig(
                "n_snapshots must be positive".into(),
            ));
        }
        if !(self.spacing_ratio.is_finite() && self.spacing_ratio > 0.0) {
            return Err(CrbError::InvalidConfig(
                "spacing_ratio must be positive".into(),
            ));
        }
        if !(self.source_power.is_finite() && self.source_power > 0.0) {
            return Err(CrbError::InvalidConfig(
                "source_power must be positive".into(),
            ));
        }
        if !self.snr_db.is_finite() {
            return Err(CrbError::InvalidConfig("snr_db must be finite".into()));
        }
        if self.ny_range.is_empty() {
            return Err(CrbError::InvalidConfig("ny_range must be nonempty".into()));
        }
        if let Some(&bad) = self
            .ny_range
            .iter()
            .find(|&&ny| ny == 0 || ny > self.n_elements)
        {
            return Err(CrbError::InvalidConfig(format!(
                "ny_range entry {bad} outside [1, {}]",
                self.n_elements
            )));
        }
        let k = self.source_angles_deg.len();
        if self.target_param_index == 0 || self.target_param_index > k {
            return Err(CrbError::InvalidConfig(format!(
                "target_param_index {} outside [1, {k}]",
                self.target_param_index
            )));
        }
        let mut warnings = Vec::new();
        if self.source_angles_deg.windows(2).any(|w| w[0] >= w[1]) {
            warnings.push("source angles are not strictly increasing".to_string());
        }
        Ok(warnings)
    }

    /// `sigma^2 = sigma_s^2 * 10^(-SNR/10)`.
    pub fn noise_power(&self) -> f64 {
        self.source_power * 10f64.powf(-self.snr_db / 10.0)
    }

    pub fn source_angles_rad(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.source_angles_deg.len(),
            self.source_angles_deg.iter().map(|a| a.to_radians()),
        )
    }

    pub fn n_sources(&self) -> usize {
        self.source_angles_deg.len()
    }
}

/// Measurement matrix for the nested compression sweep.
///
/// At full size (`n_y == n_x`) the matrix is the identity. For any smaller
/// `n_y`, one `(n_x - 1) x n_x` matrix with i.i.d. `N(0, 1/(n_x - 1))`
/// entries is drawn from `seed_phi` (row-major order) and the first `n_y`
/// rows are scaled by `sqrt((n_x - 1) / n_y)`. The initial matrix depends
/// only on the seed, so sweep points share nested rows.
pub fn nested_gaussian_phi(
    seed_phi: u64,
    n_y: usize,
    n_x: usize,
) -> Result<DMatrix<f64>, CrbError> {
    if n_y == 0 || n_y > n_x {
        return Err(CrbError::DimensionMismatch {
            context: "nested_gaussian_phi",
            expected: format!("1 <= n_y <= {n_x}"),
            actual: format!("n_y = {n_y}"),
        });
    }
    if n_y == n_x {
        return Ok(DMatrix::identity(n_x, n_x));
    }
    let rows = n_x - 1;
    let sd = (rows as f64).recip().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed_phi);
    let mut initial = DMatrix::zeros(rows, n_x);
    for i in 0..rows {
        for j in 0..n_x {
            let g: f64 = StandardNormal.sample(&mut rng);
            initial[(i, j)] = sd * g;
        }
    }
    let scale = ((rows as f64) / (n_y as f64)).sqrt();
    Ok(initial.view((0, 0), (n_y, n_x)).into_owned().scale(scale))
}

/// One-time draw of `d(t) ~ CN(0, sigma_s^2 I_K)`: snapshot-by-snapshot,
/// entry-by-entry, real part then imaginary part.
pub fn draw_sources(seed_sources: u64, k: usize, n: usize, source_power: f64) -> SnapshotSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_sources);
    let scale = (source_power / 2.0).sqrt();
    let mut amplitudes = DMatrix::zeros(k, n);
    for t in 0..n {
        for s in 0..k {
            let g_re: f64 = StandardNormal.sample(&mut rng);
            let g_im: f64 = StandardNormal.sample(&mut rng);
            amplitudes[(s, t)] = Complex64::new(scale * g_re, scale * g_im);
        }
    }
    SnapshotSet::new(amplitudes).expect("k, n >= 1")
}

/// Builds the scenario's model instance at a given `N_y`.
pub fn build_model_at(config: &ExperimentConfig, n_y: usize) -> Result<ModelInstance, CrbError> {
    let ula = UlaConfig::new(config.n_elements, config.spacing_ratio)?;
    let family = build_doa_family(&ula, config.n_sources());
    let snapshots = draw_sources(
        config.seed_sources,
        config.n_sources(),
        config.n_snapshots,
        config.source_power,
    );
    let phi = nested_gaussian_phi(config.seed_phi, n_y, config.n_elements)?;
    let scheme = MeasurementScheme::new(phi, config.noise_power())?;
    ModelInstance::new(family, config.source_angles_rad(), snapshots, scheme)
}

/// One sweep point: the singularity verdict and, when the bound is finite,
/// the per-parameter CRB diagonal in dB (`10 log10` of the variance).
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub n_y: usize,
    pub verdict: VerdictKind,
    pub crb_db: Option<DVector<f64>>,
}

/// Runs the sweep. Source amplitudes are drawn once and shared by all
/// points; sweep points are independent and evaluated in parallel.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>, CrbError> {
    config.validate()?;
    let ula = UlaConfig::new(config.n_elements, config.spacing_ratio)?;
    let family = build_doa_family(&ula, config.n_sources());
    let omega = config.source_angles_rad();
    let snapshots = draw_sources(
        config.seed_sources,
        config.n_sources(),
        config.n_snapshots,
        config.source_power,
    );
    let noise_power = config.noise_power();

    config
        .ny_range
        .par_iter()
        .map(|&n_y| -> Result<SweepRow, CrbError> {
            let phi = nested_gaussian_phi(config.seed_phi, n_y, config.n_elements)?;
            let scheme = MeasurementScheme::new(phi, noise_power)?;
            let model =
                ModelInstance::new(family.clone(), omega.clone(), snapshots.clone(), scheme)?;
            let verdict = classify_fim(&model)?;
            let crb_db = if verdict.kind == VerdictKind::NonsingularCandidate {
                crb_omega_closed_form(&model)?
                    .per_param_variance
                    .map(|vars| vars.map(|v| 10.0 * v.log10()))
            } else {
                None
            };
            Ok(SweepRow {
                n_y,
                verdict: verdict.kind,
                crb_db,
            })
        })
        .collect()
}

/// Paths written by [`emit_outputs`].
#[derive(Clone, Debug)]
pub struct EmittedFiles {
    pub csv: PathBuf,
    pub plot: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    library: &'static str,
    library_version: &'static str,
    config: &'a ExperimentConfig,
    derived: ManifestDerived,
    conventions: ManifestConventions,
    tolerances: BTreeMap<&'static str, f64>,
    outputs: ManifestOutputs,
}

#[derive(Serialize)]
struct ManifestDerived {
    n_sources: usize,
    n_params: usize,
    noise_power: f64,
    theta_len: usize,
}

#[derive(Serialize)]
struct ManifestConventions {
    crb_db: &'static str,
    angles: &'static str,
    rng: &'static str,
    phi_draw_order: &'static str,
    source_draw_order: &'static str,
    csv_float_format: &'static str,
    target_param_index: &'static str,
}

#[derive(Serialize)]
struct ManifestOutputs {
    csv: String,
    plot: String,
    manifest: String,
}

const CSV_NAME: &str = "sweep.csv";
const PLOT_NAME: &str = "crb_vs_ny.svg";
const MANIFEST_NAME: &str = "manifest.json";

fn format_db(v: f64) -> String {
    format!("{v:.16e}")
}

/// Renders the CSV table (header plus one line per row, `N_y` descending;
/// singular rows carry empty dB fields).
pub fn render_csv(rows: &[SweepRow], n_params: usize) -> String {
    let mut ordered: Vec<&SweepRow> = rows.iter().collect();
    ordered.sort_by_key(|r| std::cmp::Reverse(r.n_y));

    let mut out = String::from("n_y,verdict");
    for p in 1..=n_params {
        let _ = write!(out, ",crb_db_param_{p}");
    }
    out.push('\n');
    for row in ordered {
        let _ = write!(out, "{},{}", row.n_y, row.verdict);
        match &row.crb_db {
            Some(db) => {
                for p in 0..n_params {
                    let _ = write!(out, ",{}", format_db(db[p]));
                }
            }
            None => {
                for _ in 0..n_params {
                    out.push(',');
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Writes the CSV, the SVG plot of the configured target parameter, and
/// the JSON run manifest into `config.out_dir`.
pub fn emit_outputs(
    rows: &[SweepRow],
    config: &ExperimentConfig,
) -> Result<EmittedFiles, CrbError> {
    if rows.is_empty() {
        return Err(CrbError::InvalidConfig("no sweep rows to emit".into()));
    }
    fs::create_dir_all(&config.out_dir)?;
    let csv_path = config.out_dir.join(CSV_NAME);
    let plot_path = config.out_dir.join(PLOT_NAME);
    let manifest_path = config.out_dir.join(MANIFEST_NAME);

    fs::write(&csv_path, render_csv(rows, config.n_sources()))?;

    let target = config.target_param_index - 1;
    let mut points: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.crb_db.as_ref().map(|db| (r.n_y as f64, db[target])))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let title = format!(
        "CRB for parameter {} ({}°) vs compressed sample count",
        config.target_param_index, config.source_angles_deg[target]
    );
    let svg = plot::render_line_plot(
        &points,
        "Number of compressed samples (N_y)",
        "CRB (dB)",
        &title,
    );
    fs::write(&plot_path, svg)?;

    let manifest = RunManifest {
        library: "lowrank-crb",
        library_version: env!("CARGO_PKG_VERSION"),
        config,
        derived: ManifestDerived {
            n_sources: config.n_sources(),
            n_params: config.n_sources(),
            noise_power: config.noise_power(),
            theta_len: 2 * config.n_snapshots * config.n_sources() + config.n_sources(),
        },
        conventions: ManifestConventions {
            crb_db: "10*log10(CRB diagonal entry, variance in rad^2)",
            angles: "config angles in degrees; converted to radians at the boundary",
            rng: "ChaCha8Rng seeded with seed_from_u64",
            phi_draw_order: "initial (n_x-1) x n_x Gaussian matrix drawn row-major; first n_y rows scaled by sqrt((n_x-1)/n_y); identity at n_y = n_x",
            source_draw_order: "snapshot-by-snapshot, source-by-source, real then imaginary",
            csv_float_format: "17 significant digits, scientific notation",
            target_param_index: "1-based index into source_angles_deg",
        },
        tolerances: tolerances::tolerance_table(),
        outputs: ManifestOutputs {
            csv: CSV_NAME.to_string(),
            plot: PLOT_NAME.to_string(),
            manifest: MANIFEST_NAME.to_string(),
        },
    };
    let mut manifest_text = serde_json::to_string_pretty(&manifest)?;
    manifest_text.push('\n');
    fs::write(&manifest_path, manifest_text)?;

    Ok(EmittedFiles {
        csv: csv_path,
        plot: plot_path,
        manifest: manifest_path,
    })
}
