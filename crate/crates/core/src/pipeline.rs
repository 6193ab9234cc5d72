//! Stage orchestration. Each stage reads earlier stages' files from the
//! artifact directory, writes only into its own subdirectory, and appends a
//! record with content hashes to `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::decoherence::{asymptotic_rates, cumulant_gamma_phi, exact_decoherence, fit_decay_rate, FIT_WINDOW};
use crate::error::{Error, Result};
use crate::eth::{self, SliceConfig, Symmetry};
use crate::hilbert::BasisSector;
use crate::hydro::{self, ModeSet, Regime};
use crate::io::{read_json, read_state, sha256_file, sha256_hex, sidecar_path, write_json, write_state, CsvTable};
use crate::kpm::{self, KpmExpansion};
use crate::metrology::{error_budget, thermometry_table, Derivative, ThermometryCurve, ThermometryRow};
use crate::operators::{build_probe_observable, build_static_hamiltonian, ground_state};
use crate::par::*;
use crate::propagator::{self, CorrelationSeries, EvolutionConfig};
use crate::sparse::SparseOperator;
use crate::spectral::{self, OmegaGrid, SpectralData};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Prepare,
    Evolve,
    Correlate,
    Spectra,
    Kpm,
    Eth,
    Decohere,
    Fisher,
    Hydro,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Prepare,
        Stage::Evolve,
        Stage::Correlate,
        Stage::Spectra,
        Stage::Kpm,
        Stage::Eth,
        Stage::Decohere,
        Stage::Fisher,
        Stage::Hydro,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::Evolve => "evolve",
            Stage::Correlate => "correlate",
            Stage::Spectra => "spectra",
            Stage::Kpm => "kpm",
            Stage::Eth => "eth",
            Stage::Decohere => "decohere",
            Stage::Fisher => "fisher",
            Stage::Hydro => "hydro",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the artifact directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: String,
    pub artifacts: Vec<Artifact>,
    pub notes: Vec<String>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn artifact_count(&self) -> usize {
        self.stages.iter().map(|s| s.artifacts.len()).sum()
    }

    /// Hash of everything except wall times, so identical runs compare equal.
    pub fn content_hash(&self) -> String {
        let stages: Vec<_> = self
            .stages
            .iter()
            .map(|s| json!({"stage": s.stage, "status": s.status, "artifacts": s.artifacts, "notes": s.notes}))
            .collect();
        let v = json!({"run_id": self.run_id, "config_hash": self.config_hash, "seed": self.seed, "version": self.version, "stages": stages});
        sha256_hex(v.to_string().as_bytes())
    }
}

/// Per-job seed split deterministically from the master seed.
pub fn job_seed(master: u64, label: &str) -> u64 {
    let h = sha256_hex(format!("{master}:{label}").as_bytes());
    u64::from_str_radix(&h[..16], 16).expect("hex digest")
}

/// A validated configuration bound to an artifact directory, with the
/// chain operators built once.
pub struct Context {
    pub cfg: RunConfig,
    pub dir: PathBuf,
    pub seed: u64,
    pub run_id: String,
    pub sector: BasisSector,
    pub h: SparseOperator,
    pub a: SparseOperator,
}

impl Context {
    pub fn new(cfg: RunConfig, dir: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed()?;
        let run_id = cfg.run_id()?;
        let sector = BasisSector::half_filling(cfg.chain.sites)?;
        let h = build_static_hamiltonian(&cfg.chain, &sector)?;
        let a = build_probe_observable(&cfg.probe()?, &sector)?;
        Ok(Self { cfg, dir: dir.into(), seed, run_id, sector, h, a })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Path of an input produced by `stage`, which must already exist.
    fn require(&self, stage: Stage, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingStage { stage: stage.name(), path: p })
        }
    }

    fn meta(&self, t: CsvTable) -> CsvTable {
        t.meta("run_id", &self.run_id).meta("seed", self.seed).meta("sites", self.cfg.chain.sites)
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let p = self.path(MANIFEST);
        if p.exists() {
            let m: Manifest = read_json(&p)?;
            if m.run_id != self.run_id {
                return Err(Error::InvalidParameter(format!(
                    "{} belongs to run {}, not {}; use a fresh output directory",
                    p.display(),
                    m.run_id,
                    self.run_id
                )));
            }
            return Ok(m);
        }
        Ok(Manifest {
            run_id: self.run_id.clone(),
            config_hash: self.cfg.hash()?,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            stages: Vec::new(),
        })
    }

    fn stage_artifacts(&self, stage: Stage) -> Result<Vec<Artifact>> {
        let dir = self.path(stage.name());
        let mut files = Vec::new();
        if dir.exists() {
            for e in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
                let p = e.map_err(|e| Error::io(&dir, e))?.path();
                if p.is_file() && p.extension().and_then(|x| x.to_str()) != Some("tmp") {
                    files.push(p);
                }
            }
        }
        files.sort();
        files
            .iter()
            .map(|p| {
                let bytes = fs::metadata(p).map_err(|e| Error::io(p, e))?.len();
                let rel = p.strip_prefix(&self.dir).unwrap_or(p).to_string_lossy().replace('\\', "/");
                Ok(Artifact { path: rel, sha256: sha256_file(p)?, bytes })
            })
            .collect()
    }

    /// Runs one stage and appends its record to the manifest, including
    /// when the stage fails part-way.
    pub fn run_stage(&self, stage: Stage) -> Result<StageRecord> {
        let start = Instant::now();
        let dir = self.path(stage.name());
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let outcome = match stage {
            Stage::Prepare => self.prepare(),
            Stage::Evolve => self.evolve(),
            Stage::Correlate => self.correlate(),
            Stage::Spectra => self.spectra(),
            Stage::Kpm => self.kpm(),
            Stage::Eth => self.eth(),
            Stage::Decohere => self.decohere(),
            Stage::Fisher => self.fisher(),
            Stage::Hydro => self.hydro(),
        };
        let (status, notes, err) = match outcome {
            Ok(notes) => ("ok".to_string(), notes, None),
            Err(e) => ("failed".to_string(), vec![e.to_string()], Some(e)),
        };
        let record = StageRecord {
            stage,
            status,
            artifacts: self.stage_artifacts(stage)?,
            notes,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        let mut m = self.manifest()?;
        m.stages.push(record.clone());
        write_json(&self.path(MANIFEST), &m)?;
        match err {
            Some(e) => Err(e),
            None => Ok(record),
        }
    }

    fn state_indices(&self) -> Result<Vec<usize>> {
        let t = CsvTable::read(&self.require(Stage::Prepare, "prepare/prepare.csv")?)?;
        Ok(t.column("index")?.iter().map(|&k| k as usize).collect())
    }

    fn load_state(&self, k: usize) -> Result<crate::hilbert::StateVector> {
        let s = read_state(&self.require(Stage::Prepare, &format!("prepare/state_{k:02}.bin"))?)?;
        s.check_dim(self.sector.dim())?;
        Ok(s)
    }

    fn prepare(&self) -> Result<Vec<String>> {
        let cfg = &self.cfg;
        let ground = ground_state(&self.h)?;
        let evo = cfg.evolution;
        let p = &cfg.preparation;
        let jobs: Vec<(Option<f64>, Option<f64>)> = p
            .t_prep
            .iter()
            .map(|&t| (Some(t), None))
            .chain(p.target_energy.iter().map(|&e| (None, Some(e))))
            .collect();
        let prepared: Vec<(propagator::PreparedState, f64)> = jobs
            .par_iter()
            .map(|&(t, target)| {
                let mut drive = cfg.drive();
                let mut st = match (t, target) {
                    (Some(t), _) => {
                        drive.t_prep = t;
                        propagator::prepare_driven_state(&self.h, &self.sector, &ground, &drive, &evo)?
                    }
                    (None, Some(e)) => propagator::t_prep_for_energy(&self.h, &self.sector, &ground, &drive, &evo, e, p.t_max)?,
                    _ => unreachable!(),
                };
                propagator::relax(&self.h, &mut st.state, p.relax, &evo)?;
                Ok((st, target.unwrap_or(f64::NAN)))
            })
            .collect::<Result<_>>()?;
        let mut table = self
            .meta(CsvTable::new(&["index", "t_prep", "E_bar", "delta_E", "E0", "target_E"]))
            .meta("relax", p.relax)
            .meta("dt", evo.dt);
        for (k, (st, target)) in prepared.iter().enumerate() {
            write_state(&self.path(&format!("prepare/state_{k:02}.bin")), &st.state)?;
            let m = &st.moments;
            table.push(vec![k as f64, st.t_prep, m.e_bar, m.delta_e(), ground.energy, *target]);
        }
        let out = self.path("prepare/prepare.csv");
        table.write(&out)?;
        write_json(
            &sidecar_path(&out),
            &json!({"run_id": self.run_id, "seed": self.seed, "chain": cfg.chain, "drive": cfg.drive(),
                    "evolution": evo, "ground_energy": ground.energy, "ground_residual": ground.residual}),
        )?;
        Ok(vec![format!("{} states prepared", prepared.len())])
    }

    fn evolve(&self) -> Result<Vec<String>> {
        let ks = self.state_indices()?;
        let evo = self.cfg.evolution;
        ks.par_iter()
            .map(|&k| {
                let psi = self.load_state(k)?;
                let tr = propagator::evolve(&self.h, &self.a, &psi, &evo)?;
                let mut t = self.meta(CsvTable::new(&["t", "Re_A", "E_bar", "norm"])).meta("dt", evo.dt).meta("state", k);
                for s in &tr.samples {
                    t.push(vec![s.t, s.a_mean, s.e_bar, s.norm]);
                }
                let out = self.path(&format!("evolve/trajectory_{k:02}.csv"));
                t.write(&out)?;
                write_json(&sidecar_path(&out), &json!({"run_id": self.run_id, "seed": self.seed, "state": k, "evolution": evo}))
            })
            .collect::<Result<Vec<()>>>()?;
        Ok(vec![])
    }

    fn correlate(&self) -> Result<Vec<String>> {
        let ks = self.state_indices()?;
        let c = &self.cfg.correlation;
        let evo = self.cfg.evolution;
        ks.par_iter()
            .map(|&k| {
                let psi = self.load_state(k)?;
                let series = propagator::two_point_correlation(&self.h, &psi, &self.a, 0.0, c.tau_star, c.stride, &evo, false)?;
                let mut t = self
                    .meta(CsvTable::new(&["tau", "Re_C", "Im_C"]))
                    .meta("state", k)
                    .meta("a_reference", series.a_reference)
                    .meta("mean_a", series.mean_a)
                    .meta("t_reference", series.t_reference);
                for (tau, v) in series.tau.iter().zip(&series.values) {
                    t.push(vec![*tau, v.re, v.im]);
                }
                t.write(&self.path(&format!("correlate/correlation_{k:02}.csv")))
            })
            .collect::<Result<Vec<()>>>()?;
        Ok(vec![])
    }

    fn load_correlation(&self, k: usize) -> Result<CorrelationSeries> {
        let t = CsvTable::read(&self.require(Stage::Correlate, &format!("correlate/correlation_{k:02}.csv"))?)?;
        let num = |key: &str| -> Result<f64> {
            t.metadata_value(key)
                .ok_or_else(|| Error::parse("correlation", format!("missing {key}")))?
                .parse()
                .map_err(|e| Error::parse("correlation", e))
        };
        let (re, im) = (t.column("Re_C")?, t.column("Im_C")?);
        Ok(CorrelationSeries {
            tau: t.column("tau")?,
            values: re.iter().zip(&im).map(|(a, b)| Complex64::new(*a, *b)).collect(),
            t_reference: num("t_reference")?,
            a_reference: num("a_reference")?,
            mean_a: num("mean_a")?,
        })
    }

    fn spectra(&self) -> Result<Vec<String>> {
        let ks = self.state_indices()?;
        let c = &self.cfg.correlation;
        let notes = ks
            .par_iter()
            .map(|&k| {
                let series = self.load_correlation(k)?;
                let grid = OmegaGrid { max: c.omega_max, step: c.omega_step };
                let spec = spectral::fourier_noise_response(&series, c.tau_star, grid)?;
                let fit = spectral::fit_beta_fdt(&spec, c.beta_fit_omega)?;
                let ratio = spec.ratio();
                let mut t = self.meta(CsvTable::new(&["omega", "S_tilde", "chi_tilde", "ratio"])).meta("state", k);
                for i in 0..spec.omega.len() {
                    t.push(vec![spec.omega[i], spec.s_tilde[i], spec.chi_tilde[i], ratio[i]]);
                }
                let out = self.path(&format!("spectra/spectral_{k:02}.csv"));
                t.write(&out)?;
                write_json(
                    &sidecar_path(&out),
                    &SpectraSidecar {
                        state: k,
                        tau_star: spec.tau_star,
                        zero_frequency: spec.zero_frequency,
                        susceptibility_time: spec.susceptibility_time,
                        susceptibility: spectral::thermodynamic_susceptibility(&spec),
                        mean_a: series.mean_a,
                        beta_fdt: fit.beta,
                        beta_fit_omega: fit.omega_max,
                        beta_fit_shrunk: fit.shrunk,
                    },
                )?;
                Ok(fit.shrunk.then(|| format!("state {k}: FDT fit window shrunk to {}", fit.omega_max)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(notes.into_iter().flatten().collect())
    }

    fn load_spectrum(&self, k: usize) -> Result<(SpectralData, SpectraSidecar)> {
        let p = self.require(Stage::Spectra, &format!("spectra/spectral_{k:02}.csv"))?;
        let t = CsvTable::read(&p)?;
        let side: SpectraSidecar = read_json(&sidecar_path(&p))?;
        let spec = SpectralData {
            omega: t.column("omega")?,
            s_tilde: t.column("S_tilde")?,
            chi_tilde: t.column("chi_tilde")?,
            tau_star: side.tau_star,
            zero_frequency: side.zero_frequency,
            susceptibility_time: side.susceptibility_time,
        };
        Ok((spec, side))
    }

    fn kpm(&self) -> Result<Vec<String>> {
        let k = &self.cfg.kpm;
        let seed = job_seed(self.seed, "kpm");
        let rescale = kpm::rescale_spectrum(&self.h, k.margin)?;
        let m = kpm::stochastic_moments(&self.h, &rescale, k.moments, k.random_vectors, Some(seed), Some(&self.a))?;
        let dos = KpmExpansion::new(m.trace.clone(), rescale);
        let meta = |t: CsvTable| {
            self.meta(t)
                .meta("moments", k.moments)
                .meta("random_vectors", k.random_vectors)
                .meta("kpm_seed", seed)
                .meta("rescale_a", rescale.a)
                .meta("rescale_b", rescale.b)
        };
        let mut mt = meta(CsvTable::new(&["m", "mu", "mu_A"]));
        let obs = m.observable.as_ref().expect("requested");
        for i in 0..k.moments {
            mt.push(vec![i as f64, m.trace[i], obs[i]]);
        }
        mt.write(&self.path("kpm/moments.csv"))?;
        let curve = dos.reconstruct(k.grid_points, true);
        let mut ct = meta(CsvTable::new(&["E", "value"]));
        for (e, v) in curve.energy.iter().zip(&curve.values) {
            ct.push(vec![*e, *v]);
        }
        ct.write(&self.path("kpm/dos.csv"))?;
        write_json(
            &self.path("kpm/kpm.json"),
            &json!({"run_id": self.run_id, "config": k, "seed": seed, "rescale": rescale, "raw_mu0": m.raw_mu0,
                    "integral": dos.integral(4 * k.moments) / m.dim as f64, "undershoot": curve.undershoot}),
        )?;
        let prep = CsvTable::read(&self.require(Stage::Prepare, "prepare/prepare.csv")?)?;
        let mut tt = meta(CsvTable::new(&["index", "E_bar", "beta", "T"]));
        let mut notes = Vec::new();
        for (idx, e) in prep.column("index")?.iter().zip(prep.column("E_bar")?) {
            let beta = kpm::microcanonical_beta(&dos, e).unwrap_or_else(|err| {
                notes.push(format!("state {idx}: {err}"));
                f64::NAN
            });
            tt.push(vec![*idx, e, beta, 1.0 / beta]);
        }
        tt.write(&self.path("kpm/temperatures.csv"))?;
        Ok(notes)
    }

    fn temperatures(&self) -> Result<Vec<(usize, f64)>> {
        let t = CsvTable::read(&self.require(Stage::Kpm, "kpm/temperatures.csv")?)?;
        Ok(t.column("index")?.iter().zip(t.column("T")?).map(|(k, tt)| (*k as usize, tt)).collect())
    }

    fn eth(&self) -> Result<Vec<String>> {
        let e = &self.cfg.eth;
        let eig = eth::exact_eigensystem(&self.h, &self.sector, Symmetry::Auto)?;
        let proj = eig.project(&self.a)?;
        let diag = eig.diagonal_elements(&proj);
        let stats = eth::diagonal_statistics(&eig.energies, &diag, e.window, e.central_fraction)?;
        let mut dt = self.meta(CsvTable::new(&["E", "eps", "A_nn"])).meta("central_variance", stats.central_variance);
        for ((en, eps), a) in eig.energies.iter().zip(eig.scaled_energies()).zip(&diag) {
            dt.push(vec![*en, eps, *a]);
        }
        dt.write(&self.path("eth/diagonal.csv"))?;
        write_json(
            &self.path("eth/diagonal.json"),
            &json!({"dim": stats.dim, "window": stats.window, "central_variance": stats.central_variance,
                    "central_count": stats.central_count, "empty_windows": stats.empty_windows,
                    "max_jump_ratio": stats.max_jump_ratio(), "blocks": eig.blocks.len()}),
        )?;
        let dos = eig.density_of_states(self.cfg.kpm.moments, self.cfg.kpm.margin)?;
        let mut notes = Vec::new();
        if self.path("kpm/temperatures.csv").exists() {
            for (k, temp) in self.temperatures()? {
                if !temp.is_finite() {
                    continue;
                }
                let slice = SliceConfig { temperature: temp, beta_tolerance: e.beta_tolerance, omega_bin: e.omega_bin, omega_max: e.omega_max };
                match eth::offdiagonal_spectral_function(&eig, &proj, &dos, &slice) {
                    Ok(grid) => {
                        let mut t = self
                            .meta(CsvTable::new(&["omega", "count", "mean", "mean_abs", "raw_variance", "f_squared"]))
                            .meta("temperature", temp)
                            .meta("pairs", grid.pairs)
                            .meta("degenerate", grid.degenerate);
                        for b in &grid.bins {
                            t.push(vec![b.omega, b.count as f64, b.mean, b.mean_abs, b.raw_variance, b.f_squared]);
                        }
                        t.write(&self.path(&format!("eth/offdiagonal_{k:02}.csv")))?;
                    }
                    Err(err) => notes.push(format!("state {k}: {err}")),
                }
            }
        } else {
            notes.push("no KPM temperatures; off-diagonal slices skipped".into());
        }
        Ok(notes)
    }

    fn decohere(&self) -> Result<Vec<String>> {
        let ks = self.state_indices()?;
        let temps = self.temperatures()?;
        let d = &self.cfg.decoherence;
        let evo = EvolutionConfig { record_stride: d.record_stride, ..self.cfg.evolution };
        let jobs: Vec<(usize, usize, f64)> =
            ks.iter().flat_map(|&k| d.couplings.iter().enumerate().map(move |(i, &g)| (k, i, g))).collect();
        let rows = jobs
            .par_iter()
            .map(|&(k, i, g)| {
                let psi = self.load_state(k)?;
                let (spec, side) = self.load_spectrum(k)?;
                let trace = exact_decoherence(&self.h, &self.a, g, &psi, d.duration, &evo)?;
                trace.check()?;
                let entropy = trace.entropy()?;
                let mut t = self
                    .meta(CsvTable::new(&["t", "Re_v", "Im_v", "abs_v2", "S_entropy"]))
                    .meta("state", k)
                    .meta("g", g);
                for ((tt, v), s) in trace.t.iter().zip(&trace.v).zip(&entropy) {
                    t.push(vec![*tt, v.re, v.im, v.norm_sqr(), *s]);
                }
                t.write(&self.path(&format!("decohere/trace_{k:02}_{i:02}.csv")))?;
                let cum = cumulant_gamma_phi(&spec, side.mean_a, g, &trace.t)?;
                let mut c = self.meta(CsvTable::new(&["t", "Gamma", "Phi"])).meta("state", k).meta("g", g);
                for j in 0..cum.t.len() {
                    c.push(vec![cum.t[j], cum.gamma[j], cum.phi[j]]);
                }
                c.write(&self.path(&format!("decohere/cumulant_{k:02}_{i:02}.csv")))?;
                let rates = asymptotic_rates(&spec, side.mean_a, g);
                let (fit, note) = match fit_decay_rate(&trace, FIT_WINDOW) {
                    Ok(f) => (f.rate, None),
                    Err(e) => (f64::NAN, Some(format!("state {k}, g = {g}: {e}"))),
                };
                let temp = temps.iter().find(|(j, _)| *j == k).map_or(f64::NAN, |x| x.1);
                Ok((vec![k as f64, g, temp, fit, rates.gamma, rates.phi_dot, rates.susceptibility], note))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut t = self.meta(CsvTable::new(&["index", "g", "T", "gamma_fit", "gamma_weak", "phi_dot_weak", "chi_A"]));
        let mut notes = Vec::new();
        for (row, note) in rows {
            t.push(row);
            notes.extend(note);
        }
        t.write(&self.path("decohere/rates.csv"))?;
        Ok(notes)
    }

    fn fisher(&self) -> Result<Vec<String>> {
        let m = &self.cfg.metrology;
        let rates = CsvTable::read(&self.require(Stage::Decohere, "decohere/rates.csv")?)?;
        let g0 = self.cfg.decoherence.couplings[0];
        let mut pts: Vec<(f64, f64, f64)> = rates
            .rows
            .iter()
            .filter(|r| r[1] == g0 && r[2].is_finite())
            .map(|r| (r[2], r[4], r[5]))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let temps: Vec<f64> = pts.iter().map(|p| p.0).collect();
        if let Some(w) = temps.windows(2).find(|w| w[1] - w[0] < m.delta_t) {
            return Err(Error::Domain(format!(
                "temperatures {} and {} are closer than delta_t = {}; the temperature derivative is undefined at that spacing",
                w[0], w[1], m.delta_t
            )));
        }
        if temps.len() < 3 {
            return Err(Error::Domain(format!("need decoherence rates at three or more temperatures, found {}", temps.len())));
        }
        let curve = ThermometryCurve::new(temps.clone(), pts.iter().map(|p| p.1).collect(), pts.iter().map(|p| p.2).collect())?;
        let times: Vec<f64> = (1..=m.time_points).map(|i| m.t_max * i as f64 / m.time_points as f64).collect();
        let spline = thermometry_table(&curve, &temps, &times, Derivative::Spline, m.delta_t)?;
        let fd = thermometry_table(&curve, &temps, &times, Derivative::FiniteDifference, m.delta_t)?;
        let mut t = self.meta(CsvTable::new(&ThermometryRow::HEADER)).meta("g", g0).meta("derivative", "spline");
        let mut budgets = Vec::new();
        let mut notes = Vec::new();
        for (s, f) in spline.iter().zip(&fd) {
            t.push(s.record().to_vec());
            let b = error_budget(s.fisher.quantum, s.temperature, m.repetitions)?;
            let agree = (s.fisher.quantum - f.fisher.quantum).abs() <= 0.1 * s.fisher.quantum.abs();
            if !agree {
                notes.push(format!("T = {}: spline and finite-difference Fisher information differ by more than 10%", s.temperature));
            }
            if s.at_boundary {
                notes.push(format!("T = {}: optimum on the time-grid boundary", s.temperature));
            }
            budgets.push(json!({"T": s.temperature, "relative_error": b.relative_error, "bounded": b.bounded,
                                "F_Q_finite_difference": f.fisher.quantum, "routes_agree": agree}));
        }
        let out = self.path("fisher/fisher.csv");
        t.write(&out)?;
        write_json(&sidecar_path(&out), &json!({"repetitions": m.repetitions, "delta_t": m.delta_t, "budgets": budgets}))?;
        Ok(notes)
    }

    fn hydro(&self) -> Result<Vec<String>> {
        run_hydro(&self.cfg, &self.path("hydro"), &self.run_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectraSidecar {
    pub state: usize,
    pub tau_star: f64,
    pub zero_frequency: f64,
    pub susceptibility_time: f64,
    pub susceptibility: f64,
    pub mean_a: f64,
    pub beta_fdt: f64,
    pub beta_fit_omega: f64,
    pub beta_fit_shrunk: bool,
}

/// Hydrodynamic tables; needs no many-body stage.
pub fn run_hydro(cfg: &RunConfig, dir: &Path, run_id: &str) -> Result<Vec<String>> {
    let hs = &cfg.hydro;
    let p = hs.params();
    let mut notes = p.validate()?;
    let meta = |t: CsvTable| t.meta("run_id", run_id).meta("dim", p.dim).meta("regime", "classical noise 2T/w");
    write_json(&dir.join("params.json"), &json!({"params": p, "sweep_lengths": hs.sweep_lengths}))?;

    let tt = p.thouless_time();
    let lo = 1e-2 * p.ell * p.ell / p.diffusion;
    let hi = 1e4 * tt;
    let points = ((hi / lo).log10() * hs.points_per_decade as f64).ceil() as usize + 1;
    let c = hydro::dephasing_crossover(&p, &hydro::log_grid(lo, hi, points))?;
    let mut t = meta(CsvTable::new(&["t", "Gamma", "slope", "regime"])).meta("thouless_time", tt).meta("rate", c.rate);
    for q in &c.points {
        let r = match q.regime {
            Regime::Ballistic => 0.0,
            Regime::Diffusive => 1.0,
            Regime::Exponential => 2.0,
        };
        t.push(vec![q.t, q.gamma, q.slope, r]);
    }
    t.write(&dir.join("crossover.csv"))?;

    let mut s = meta(CsvTable::new(&["L", "gamma"]));
    if !hs.sweep {
        notes.push("size sweep disabled".into());
    } else if p.dim < 3 {
        let sweep = hydro::size_sweep(&p, &hs.sweep_lengths)?;
        for (l, g) in sweep.length.iter().zip(&sweep.gamma) {
            s.push(vec![*l, *g]);
        }
        s = s.meta("growth_slope", sweep.fit.slope);
    } else {
        s.push(vec![f64::INFINITY, hydro::gamma_3d(&p)?]);
        notes.push("3D rate is size independent".into());
    }
    if hs.sweep {
        s.write(&dir.join("sizes.csv"))?;
    }

    let modes = ModeSet::new(&p)?;
    let mut r = meta(CsvTable::new(&["omega", "chi_modes", "chi_continuum"]));
    for w in hydro::log_grid(1e-6 * p.diffusion / (p.ell * p.ell), 10.0 * p.diffusion / (p.ell * p.ell), 15 * 7 + 1) {
        r.push(vec![w, hydro::diffusive_response_modes(&p, &modes, w), hydro::diffusive_response_continuum(&p, w)?]);
    }
    r.write(&dir.join("response.csv"))?;
    Ok(notes)
}

/// Every stage in order. The ETH stage runs only when enabled and the
/// metrology stage only with three or more temperatures; skips are noted.
pub fn run_pipeline(cfg: RunConfig, dir: impl Into<PathBuf>) -> Result<Manifest> {
    let ctx = Context::new(cfg, dir)?;
    let temperatures = ctx.cfg.preparation.t_prep.len() + ctx.cfg.preparation.target_energy.len();
    for stage in Stage::ALL {
        let skip = match stage {
            Stage::Eth if !ctx.cfg.eth.enabled => Some("disabled in the configuration"),
            Stage::Fisher if temperatures < 3 => Some("fewer than three temperatures"),
            _ => None,
        };
        if let Some(reason) = skip {
            let mut m = ctx.manifest()?;
            m.stages.push(StageRecord {
                stage,
                status: "skipped".into(),
                artifacts: vec![],
                notes: vec![reason.into()],
                wall_time_s: 0.0,
            });
            write_json(&ctx.path(MANIFEST), &m)?;
            continue;
        }
        ctx.run_stage(stage)?;
    }
    ctx.manifest()
}
