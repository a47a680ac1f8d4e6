//! Experiment orchestration: configuration, seeding, replica farming,
//! persistence and the validation suite.
//!
//! Every run writes a JSON manifest (all knobs + seed + crate version)
//! and CSV tables stamped with the manifest hash, so a run can be
//! reproduced bit-identically from its manifest.

use crate::coupling::{
    block_lattice, compare_hyperplane_decay, conditional_drift, equilibrated_start,
    run_block_coupling, CompareConfig, CouplingConfig,
};
use crate::critical::{crossing_probability, detect_arm3hp, iic_drift, CrossingConfig, IicDriftConfig};
use crate::dynamics::KernelCache;
use crate::lattice::{AngleSequence, Geometry, RectLattice};
use crate::observables::{
    convex_dual, estimate_decay, wulff_shape, DecayConfig, DecayKind,
};
use crate::sampler::{ChainState, PatchBc};
use crate::weights::WeightTable;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write as _;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "fkiso", about = "Random-cluster simulations on isoradial rectangular lattices")]
pub struct Cli {
    /// Plain-text key=value config file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root (default: env FKISO_OUT, else ./runs).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Replica parallelism degree (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Run the oracle validation suite; nonzero exit on any failure.
    Validate {
        /// Also run the exhaustive track-exchange grid (slower).
        #[arg(long)]
        full: bool,
    },
    /// Directional decay rates, anisotropy and Wulff shapes per q.
    Isotropy(IsotropyArgs),
    /// Block-coupling pipeline: traces, increments, conditional drift.
    Coupling(CouplingArgs),
    /// IIC sampling at q = 4 and the increment drift.
    IicDrift(IicArgs),
    /// q = 4 diagnostics: crossings, three-arm scaling, flower domains.
    Critical(CriticalArgs),
    /// Point-to-hyperplane decay rate for one (q, theta).
    Zeta(RateArgs),
    /// Point-to-point decay rate (correlation length) for one (q, theta).
    Xi(RateArgs),
    /// Build a Wulff polygon from a theta,radius CSV.
    Wulff(WulffArgs),
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct IsotropyArgs {
    /// Comma-separated q values (> 4).
    #[arg(long, default_value = "25,16,9,6")]
    pub q_list: String,
    #[arg(long, default_value_t = 48)]
    pub window: usize,
    #[arg(long, default_value_t = 12)]
    pub replicas: usize,
    #[arg(long, default_value_t = 300)]
    pub measurements: usize,
    #[arg(long, default_value_t = 2)]
    pub thin: u64,
    #[arg(long, default_value_t = 200)]
    pub burn_in: u64,
    /// Largest n of the fit grid (scaled down per q by the rate).
    #[arg(long, default_value_t = 24.0)]
    pub n_max: f64,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct CouplingArgs {
    #[arg(long, default_value = "pi/3", value_parser = parse_angle)]
    pub alpha: f64,
    #[arg(long, default_value = "pi/2", value_parser = parse_angle)]
    pub beta: f64,
    #[arg(long, default_value_t = 4.2)]
    pub q: f64,
    #[arg(long, default_value_t = 8)]
    pub n_block: usize,
    #[arg(long, default_value_t = 48)]
    pub width: usize,
    #[arg(long, default_value_t = 1)]
    pub periods: usize,
    #[arg(long, default_value = "pi/2", value_parser = parse_angle)]
    pub theta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub eps: f64,
    /// Near-interface radius R.
    #[arg(long, default_value_t = 8.0)]
    pub case_r: f64,
    #[arg(long, default_value_t = 200)]
    pub runs: usize,
    #[arg(long, default_value_t = 150)]
    pub burn_in: u64,
    #[arg(long, default_value_t = 10)]
    pub decorrelate: u64,
    /// Admissible-time margin delta.
    #[arg(long, default_value_t = 0.25)]
    pub delta: f64,
    #[arg(long, default_value_t = 30)]
    pub min_bin_count: usize,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct IicArgs {
    #[arg(long, default_value = "pi/3", value_parser = parse_angle)]
    pub alpha: f64,
    #[arg(long, default_value = "pi/2", value_parser = parse_angle)]
    pub beta: f64,
    #[arg(long, default_value = "pi/2", value_parser = parse_angle)]
    pub theta: f64,
    /// Conditioning distance.
    #[arg(long, default_value_t = 256.0)]
    pub n: f64,
    #[arg(long, default_value_t = 32.0)]
    pub window_radius: f64,
    #[arg(long, default_value_t = 360)]
    pub domain_cols: usize,
    #[arg(long, default_value_t = 380)]
    pub domain_rows: usize,
    #[arg(long, default_value_t = 1000)]
    pub increments: usize,
    #[arg(long, default_value_t = 12)]
    pub thin: u64,
    #[arg(long, default_value_t = 250)]
    pub burn_in: u64,
    #[arg(long, default_value_t = 8)]
    pub streams: usize,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct CriticalArgs {
    #[arg(long, default_value = "8,16,32")]
    pub n_list: String,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 32.0)]
    pub arm_big_r: f64,
    #[arg(long, default_value = "8,4,2")]
    pub arm_r_list: String,
    #[arg(long, default_value_t = 12)]
    pub replicas: usize,
    #[arg(long, default_value_t = 400)]
    pub measurements: usize,
    #[arg(long, default_value_t = 3)]
    pub thin: u64,
    #[arg(long, default_value_t = 200)]
    pub burn_in: u64,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct RateArgs {
    #[arg(long, default_value_t = 9.0)]
    pub q: f64,
    #[arg(long, default_value = "0", value_parser = parse_angle)]
    pub theta: f64,
    /// Constant lattice angle alpha of L(alpha).
    #[arg(long, default_value = "pi/2", value_parser = parse_angle)]
    pub alpha: f64,
    #[arg(long, default_value_t = 64)]
    pub window: usize,
    #[arg(long, default_value = "4,8,12,16,20,24")]
    pub n_grid: String,
    #[arg(long, default_value_t = 12)]
    pub replicas: usize,
    #[arg(long, default_value_t = 400)]
    pub measurements: usize,
    #[arg(long, default_value_t = 2)]
    pub thin: u64,
    #[arg(long, default_value_t = 150)]
    pub burn_in: u64,
    /// Use a half-plane strip (zeta^hp) instead of the full plane.
    #[arg(long)]
    pub half_plane: bool,
    /// Wired boundary (decay-rate estimation expects the free phase).
    #[arg(long)]
    pub wired: bool,
}

#[derive(Args, Debug, Clone, serde::Serialize)]
pub struct WulffArgs {
    /// CSV with theta,radius rows (inverse rates).
    #[arg(long)]
    pub input: PathBuf,
    /// Treat the input as zeta^{-1} and convex-dualize to xi^{-1} first.
    #[arg(long)]
    pub dualize: bool,
}

/// "pi", "pi/3", "2pi/3", or a plain float.
pub fn parse_angle(s: &str) -> Result<f64, String> {
    let t = s.trim().replace(' ', "");
    if let Ok(v) = t.parse::<f64>() {
        return Ok(v);
    }
    let lower = t.to_lowercase();
    if let Some(k) = lower.find("pi") {
        let (num, rest) = lower.split_at(k);
        let mult: f64 = if num.is_empty() {
            1.0
        } else {
            num.parse().map_err(|_| format!("bad angle {s}"))?
        };
        let denom_part = &rest[2..];
        let denom: f64 = if denom_part.is_empty() {
            1.0
        } else if let Some(d) = denom_part.strip_prefix('/') {
            d.parse().map_err(|_| format!("bad angle {s}"))?
        } else {
            return Err(format!("bad angle {s}"));
        };
        Ok(mult * PI / denom)
    } else {
        Err(format!("bad angle {s}"))
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().context("bad list entry"))
        .collect()
}

/// key=value config file; '#' starts a comment.
pub fn load_config_file(path: &Path) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut map = HashMap::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .with_context(|| format!("bad config line: {line}"))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// A run directory with its manifest hash.
pub struct Record {
    pub dir: PathBuf,
    pub hash: String,
}

pub fn start_record(out_root: &Path, name: &str, manifest: &serde_json::Value) -> Result<Record> {
    let text = serde_json::to_string_pretty(manifest)?;
    let hash = hex(&Sha256::digest(text.as_bytes()));
    let dir = out_root.join(format!("{name}-{}", &hash[..12]));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("manifest.json"), &text)?;
    Ok(Record { dir, hash })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Record {
    pub fn write_csv(&self, name: &str, header: &str, body: &str) -> Result<()> {
        let mut f = std::fs::File::create(self.dir.join(name))?;
        writeln!(f, "# manifest_hash={}", self.hash)?;
        writeln!(f, "{header}")?;
        f.write_all(body.as_bytes())?;
        Ok(())
    }

    pub fn write_raw(&self, name: &str, body: &str) -> Result<()> {
        std::fs::write(self.dir.join(name), body)?;
        Ok(())
    }
}

fn manifest(cmd: &str, seed: u64, args: &impl serde::Serialize) -> serde_json::Value {
    serde_json::json!({
        "tool": "fkiso",
        "version": env!("CARGO_PKG_VERSION"),
        "command": cmd,
        "seed": seed,
        "args": serde_json::to_value(args).unwrap(),
    })
}

pub fn main() -> Result<()> {
    let cli = Cli::parse();
    let file_cfg = match &cli.config {
        Some(p) => load_config_file(p)?,
        None => HashMap::new(),
    };
    let seed = cli
        .seed
        .or_else(|| file_cfg.get("seed").and_then(|s| s.parse().ok()))
        .unwrap_or(1);
    let out_root = cli
        .out
        .clone()
        .or_else(|| file_cfg.get("out").map(PathBuf::from))
        .or_else(|| std::env::var_os("FKISO_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    if let Some(n) = cli
        .threads
        .or_else(|| file_cfg.get("threads").and_then(|s| s.parse().ok()))
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    }
    match &cli.cmd {
        Cmd::Validate { full } => cmd_validate(*full),
        Cmd::Isotropy(args) => cmd_isotropy(&out_root, seed, args),
        Cmd::Coupling(args) => cmd_coupling(&out_root, seed, args),
        Cmd::IicDrift(args) => cmd_iic_drift(&out_root, seed, args),
        Cmd::Critical(args) => cmd_critical(&out_root, seed, args),
        Cmd::Zeta(args) => cmd_rate(&out_root, seed, args, false),
        Cmd::Xi(args) => cmd_rate(&out_root, seed, args, true),
        Cmd::Wulff(args) => cmd_wulff(&out_root, seed, args),
    }
}

fn check(name: &str, ok: bool, failures: &mut u32) {
    println!("{} {name}", if ok { "PASS" } else { "FAIL" });
    if !ok {
        *failures += 1;
    }
}

/// The oracle suite: weight identities, kernel feasibility and exact
/// pushforwards, sampler stationarity, q = 1 product law, cache tamper.
pub fn cmd_validate(full: bool) -> Result<()> {
    use crate::exact::{
        exact_pushforward, lattice_patch_graph, tv_distance, BoundaryCondition, ExactMeasure,
        HeatBathSweepKernel,
    };
    let mut failures = 0u32;

    // weight identities on a 50 x 5 grid
    let mut ok = true;
    for &q in &[1.0, 2.0, 4.0, 6.5, 12.0] {
        for k in 1..50 {
            let th = PI * k as f64 / 50.0;
            let p = crate::weights::isoradial_weight(th, q).unwrap();
            let pd = crate::weights::dual_weight(p, q);
            let y = p / (1.0 - p) * (pd / (1.0 - pd));
            ok &= (y - q).abs() < 1e-12 * q;
            ok &= (pd - crate::weights::isoradial_weight(PI - th, q).unwrap()).abs() < 1e-12;
        }
        let pc = crate::weights::isoradial_weight(PI / 2.0, q).unwrap();
        ok &= (pc - crate::weights::p_c(q)).abs() < 1e-12;
    }
    for k in 1..50 {
        let th = PI * k as f64 / 50.0;
        let c4 = crate::weights::isoradial_weight(th, 4.0).unwrap();
        ok &= (crate::weights::isoradial_weight(th, 4.0 + 1e-8).unwrap() - c4).abs() < 1e-6;
        ok &= (crate::weights::isoradial_weight(th, 4.0 - 1e-8).unwrap() - c4).abs() < 1e-6;
    }
    check("weight identities (duality, p_c, q=4 continuity)", ok, &mut failures);

    // sampler stationarity on small graphs
    let mut ok = true;
    for (w, h) in [(2, 1), (2, 2), (3, 2)] {
        let lat = RectLattice::build(AngleSequence::Constant(PI / 3.0), w, h, Geometry::Strip)?;
        for &q in &[1.0, 2.5, 4.0, 9.0] {
            let (g, index) = lattice_patch_graph(&lat, q);
            for wired in [false, true] {
                let bc = if wired {
                    BoundaryCondition::wired(
                        lat.boundary_vertices().iter().map(|v| index[v]).collect(),
                    )
                } else {
                    BoundaryCondition::free()
                };
                let m = ExactMeasure::new(g.clone(), q, bc.clone())?;
                let kernel = HeatBathSweepKernel {
                    graph: &g,
                    q,
                    bc: &bc,
                    edges: None,
                };
                let out = exact_pushforward(&m, &kernel)?;
                ok &= tv_distance(&out, m.probabilities()) < 1e-9;
            }
        }
    }
    check("heat-bath stationarity on oracle graphs (TV < 1e-9)", ok, &mut failures);

    // q = 1: sampler equals independent percolation per edge
    let mut ok = true;
    {
        let lat = RectLattice::build(AngleSequence::Constant(PI / 2.0), 4, 4, Geometry::Window)?;
        let weights = WeightTable::from_thetas(lat.edge_thetas(), 1.0)?;
        let mut chain = ChainState::new(&lat, &weights, PatchBc::free(&lat));
        let mut rng = crate::rng::stream(12, 1);
        let n = 20_000;
        let mut count = 0u64;
        for _ in 0..n {
            chain.sweep(&mut rng);
            count += chain.config.open.iter().filter(|&&b| b).count() as u64;
        }
        let density = count as f64 / (n as f64 * lat.n_edges() as f64);
        ok &= (density - weights.p(0)).abs() < 3e-3;
    }
    check("q = 1 reduces to independent percolation", ok, &mut failures);

    // kernel feasibility + exact pushforward on two-track strips
    let mut ok = true;
    let angles = [PI / 3.0, PI / 2.0, 2.0 * PI / 3.0];
    let qs: &[f64] = if full {
        &[1.0, 2.0, 4.0, 4.5, 9.0]
    } else {
        &[2.0, 4.5]
    };
    let widths: &[i32] = if full { &[2, 4] } else { &[2] };
    for &a in &angles {
        for &b in &angles {
            if a == b {
                continue;
            }
            for &q in qs {
                let kern = match crate::dynamics::solve_kernel(a, b, q) {
                    Ok(k) => k,
                    Err(e) => {
                        eprintln!("kernel infeasible: {e}");
                        ok = false;
                        continue;
                    }
                };
                for &w in widths {
                    for wired in [false, true] {
                        let lat = RectLattice::build_at(
                            AngleSequence::Explicit(vec![a, b]),
                            Geometry::Strip,
                            0,
                            2,
                            1,
                            1 + w,
                        )?;
                        let (g, index) = lattice_patch_graph(&lat, q);
                        let bc = if wired {
                            BoundaryCondition::wired(
                                lat.boundary_vertices().iter().map(|v| index[v]).collect(),
                            )
                        } else {
                            BoundaryCondition::free()
                        };
                        let m = ExactMeasure::new(g, q, bc.clone())?;
                        let mut out = vec![0.0; 1 << lat.n_edges()];
                        for mask in 0..m.n_states() {
                            let pm = m.prob(mask);
                            if pm == 0.0 {
                                continue;
                            }
                            let mut exec =
                                crate::dynamics::DistExec::point_mass(w as usize, mask);
                            crate::dynamics::run_cascade(&mut exec, &lat, 2, &kern);
                            for (om, &ow) in exec.strip_distribution().iter().enumerate() {
                                out[om] += pm * ow;
                            }
                        }
                        let mut swapped = lat.clone();
                        swapped.swap_tracks(2);
                        let (g2, index2) = lattice_patch_graph(&swapped, q);
                        let bc2 = if wired {
                            BoundaryCondition::wired(
                                swapped
                                    .boundary_vertices()
                                    .iter()
                                    .map(|v| index2[v])
                                    .collect(),
                            )
                        } else {
                            BoundaryCondition::free()
                        };
                        let target = ExactMeasure::new(g2, q, bc2)?;
                        ok &= tv_distance(&out, target.probabilities()) < 1e-9;
                    }
                }
            }
        }
    }
    check("track-exchange exact pushforward (TV < 1e-9)", ok, &mut failures);

    // kernel cache: round trip + loud failure on corruption
    let mut ok = true;
    {
        let mut cache = KernelCache::new();
        cache.get(PI / 3.0, PI / 2.0, 4.0).map_err(|e| anyhow::anyhow!("{e}"))?;
        let text = cache.to_text();
        ok &= KernelCache::from_text(&text).is_ok();
        let tampered = text.replacen("0.00000000000000000e0", "1.00000000000000000e-3", 1);
        ok &= KernelCache::from_text(&tampered).is_err();
    }
    check("kernel cache round-trip + tamper detection", ok, &mut failures);

    if failures > 0 {
        bail!("{failures} validation check(s) failed");
    }
    println!("all validation checks passed");
    Ok(())
}

fn cmd_rate(out_root: &Path, seed: u64, args: &RateArgs, point_to_point: bool) -> Result<()> {
    if args.wired {
        eprintln!(
            "warning: wired boundary selects the wired phase; decay-rate \
             estimation is defined for the free phase (free bc used anyway)"
        );
    }
    let kind = if point_to_point {
        DecayKind::PointToPoint
    } else if args.half_plane {
        DecayKind::HalfPlaneHyperplane
    } else {
        DecayKind::PointToHyperplane
    };
    let name = if point_to_point { "xi" } else { "zeta" };
    let rec = start_record(out_root, name, &manifest(name, seed, args))?;
    let lat = if args.half_plane {
        RectLattice::build(
            AngleSequence::Constant(args.alpha),
            args.window,
            args.window / 2,
            Geometry::Strip,
        )?
    } else {
        RectLattice::build(
            AngleSequence::Constant(args.alpha),
            args.window,
            args.window,
            Geometry::Window,
        )?
    };
    let cfg = DecayConfig {
        kind,
        theta: args.theta,
        q: args.q,
        n_grid: parse_list(&args.n_grid)?,
        replicas: args.replicas,
        measurements: args.measurements,
        thin: args.thin,
        burn_in: args.burn_in,
        seed,
        stream_base: 100,
    };
    let est = estimate_decay(&lat, &cfg);
    let body = est.to_csv();
    rec.write_csv(
        "points.csv",
        "n,p_hat,se,used",
        body.split_once('\n').map(|x| x.1).unwrap_or(""),
    )?;
    rec.write_raw("estimate.json", &serde_json::to_string_pretty(&est)?)?;
    println!(
        "{name}({:.4}) at q={}: rate = {:.4} +- {:.4}  [slope {:.5} +- {:.5}]  flags: {:?}",
        args.theta, args.q, est.rate, est.rate_se, est.slope, est.slope_se, est.flags
    );
    println!("record: {}", rec.dir.display());
    Ok(())
}

fn cmd_wulff(out_root: &Path, seed: u64, args: &WulffArgs) -> Result<()> {
    let rec = start_record(out_root, "wulff", &manifest("wulff", seed, args))?;
    let text = std::fs::read_to_string(&args.input)?;
    let mut thetas = Vec::new();
    let mut radii = Vec::new();
    for line in text.lines().skip_while(|l| l.starts_with('#')) {
        if line.starts_with("theta") || line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (Some(t), Some(r)) = (parts.next(), parts.next()) else {
            continue;
        };
        if let (Ok(t), Ok(r)) = (t.trim().parse::<f64>(), r.trim().parse::<f64>()) {
            thetas.push(t);
            radii.push(r);
        }
    }
    if thetas.len() < 3 {
        bail!("need at least 3 theta,radius rows");
    }
    let radii = if args.dualize {
        convex_dual(&thetas, &radii)
    } else {
        radii
    };
    let poly = wulff_shape(&thetas, &radii);
    rec.write_raw("wulff.svg", &poly.to_svg())?;
    let body = poly.to_csv();
    rec.write_csv(
        "wulff.csv",
        "theta,radius",
        body.split_once('\n').map(|x| x.1).unwrap_or(""),
    )?;
    println!(
        "polygon: {} vertices, area {:.4}, roundness {:.4}",
        poly.vertices.len(),
        poly.area,
        poly.roundness()
    );
    println!("record: {}", rec.dir.display());
    Ok(())
}

fn cmd_isotropy(out_root: &Path, seed: u64, args: &IsotropyArgs) -> Result<()> {
    let rec = start_record(out_root, "isotropy", &manifest("isotropy", seed, args))?;
    let qs = parse_list(&args.q_list)?;
    let mut rows = String::new();
    let mut summary = String::new();
    for (qi, &q) in qs.iter().enumerate() {
        let lat = RectLattice::build(
            AngleSequence::Constant(PI / 2.0),
            args.window,
            args.window,
            Geometry::Window,
        )?;
        // measured directions in the fundamental octant of L(pi/2)
        let dirs = [0.0, PI / 8.0, PI / 4.0];
        let mut zeta_inv = Vec::new();
        let mut zeta_inv_se = Vec::new();
        for (di, &theta) in dirs.iter().enumerate() {
            let cfg = DecayConfig {
                kind: DecayKind::PointToHyperplane,
                theta,
                q,
                n_grid: (1..=6).map(|k| k as f64 * args.n_max / 6.0).collect(),
                replicas: args.replicas,
                measurements: args.measurements,
                thin: args.thin,
                burn_in: args.burn_in,
                seed,
                stream_base: (1000 + 100 * qi + 10 * di) as u64,
            };
            let est = estimate_decay(&lat, &cfg);
            rows.push_str(&format!(
                "{q},{theta:.6},zeta,{:.6},{:.6}\n",
                est.rate, est.rate_se
            ));
            zeta_inv.push(est.slope.max(1e-9));
            zeta_inv_se.push(est.slope_se);
        }
        // extend over [0, 2pi) by the D4 symmetry of L(pi/2)
        let grid: Vec<f64> = (0..64).map(|k| k as f64 * 2.0 * PI / 64.0).collect();
        let sym_val = |t: f64| {
            let t8 = t.rem_euclid(PI / 2.0);
            let t8 = if t8 > PI / 4.0 { PI / 2.0 - t8 } else { t8 };
            // linear interpolation over the measured octant
            if t8 <= PI / 8.0 {
                let w = t8 / (PI / 8.0);
                zeta_inv[0] * (1.0 - w) + zeta_inv[1] * w
            } else {
                let w = (t8 - PI / 8.0) / (PI / 8.0);
                zeta_inv[1] * (1.0 - w) + zeta_inv[2] * w
            }
        };
        let zinv_grid: Vec<f64> = grid.iter().map(|&t| sym_val(t)).collect();
        let xi_inv = convex_dual(&grid, &zinv_grid);
        let poly = wulff_shape(&grid, &xi_inv);
        let roundness = poly.roundness();
        // crude error on roundness from the extreme measured slopes
        let rel = (zeta_inv_se[0] / zeta_inv[0]).hypot(zeta_inv_se[2] / zeta_inv[2]);
        summary.push_str(&format!("{q},{roundness:.5},{:.5}\n", roundness * rel));
        rec.write_raw(&format!("wulff-q{q}.svg"), &poly.to_svg())?;
        println!("q = {q}: roundness {roundness:.4} (+- {:.4})", roundness * rel);
    }
    rec.write_csv("rates.csv", "q,theta,kind,rate,rate_se", &rows)?;
    rec.write_csv("roundness.csv", "q,roundness,se", &summary)?;
    println!("record: {}", rec.dir.display());
    Ok(())
}

fn cmd_coupling(out_root: &Path, seed: u64, args: &CouplingArgs) -> Result<()> {
    let rec = start_record(out_root, "coupling", &manifest("coupling", seed, args))?;
    let ccfg = CouplingConfig {
        alpha: args.alpha,
        beta: args.beta,
        n_block: args.n_block,
        q: args.q,
        width: args.width,
        periods: args.periods,
        theta: args.theta,
        eps: args.eps,
        case_r: args.case_r,
        burn_in: args.burn_in,
        seed,
        stream: 7,
    };
    let lat0 = block_lattice(&ccfg);
    let mut rng = crate::rng::stream(seed, 7);
    let mut cache = KernelCache::new();
    let mut start = equilibrated_start(&ccfg, &lat0, &mut rng);
    let mut lat = lat0.clone();
    let mut all = Vec::new();
    let mut flagged = 0usize;
    let weights_a = WeightTable::from_thetas(lat0.edge_thetas(), ccfg.q)?;
    for rep in 0..args.runs {
        let run = run_block_coupling(&ccfg, start, &lat, rep as u64, &mut cache, &mut rng);
        flagged += run.trace.iter().filter(|r| r.flagged).count();
        all.extend(run.trace);
        lat = run.final_lattice;
        start = run.final_config;
        let mut chain = ChainState::new(&lat, &weights_a, PatchBc::free(&lat));
        chain.config = start;
        chain.run(args.decorrelate, &mut rng);
        start = chain.config;
    }
    let body = crate::coupling::trace_csv(&all);
    rec.write_csv(
        "trace.csv",
        "replica,t,E,delta,bin,case,flagged",
        body.split_once('\n').map(|x| x.1).unwrap_or(""),
    )?;
    let cells = conditional_drift(&all, args.n_block, args.delta, args.min_bin_count, seed);
    let mut s = String::new();
    for c in &cells {
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{}\n",
            c.t, c.bin, c.mean, c.se, c.boot_se, c.count
        ));
    }
    rec.write_csv("drift.csv", "t,bin,mean,se,boot_se,count", &s)?;
    let max_abs = all
        .iter()
        .filter(|r| !r.flagged)
        .map(|r| r.delta.abs())
        .fold(0.0f64, f64::max);
    println!(
        "{} increments ({} flagged), max |Delta E| = {:.3}, {} drift cells",
        all.len(),
        flagged,
        max_abs,
        cells.len()
    );
    // hyperplane comparison on a small n grid
    let cmp = compare_hyperplane_decay(&CompareConfig {
        coupling: ccfg,
        eta: 0.25,
        n_grid: vec![2.0, 4.0, 6.0],
        measurements: 200,
        thin: 4,
        cap_tracks: (2 * args.n_block) as i32,
    });
    let mut s = String::new();
    for p in &cmp {
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            p.n, p.eta, p.p_start, p.p_start_se, p.p_end, p.p_end_se, p.p_trunc, p.p_full
        ));
    }
    rec.write_csv(
        "hyperplane.csv",
        "n,eta,p_start,p_start_se,p_end,p_end_se,p_trunc,p_full",
        &s,
    )?;
    println!("record: {}", rec.dir.display());
    Ok(())
}

fn cmd_iic_drift(out_root: &Path, seed: u64, args: &IicArgs) -> Result<()> {
    let rec = start_record(out_root, "iic-drift", &manifest("iic-drift", seed, args))?;
    let cfg = IicDriftConfig {
        alpha: args.alpha,
        beta: args.beta,
        theta: args.theta,
        n: args.n,
        window_radius: args.window_radius,
        domain_cols: args.domain_cols,
        domain_rows: args.domain_rows,
        increments: args.increments,
        q: 4.0,
        thin: args.thin,
        burn_in: args.burn_in,
        seed,
        streams: args.streams,
        max_snapshots: args.increments * 400,
    };
    let (res, incs) = iic_drift(&cfg);
    let mut s = String::new();
    for inc in &incs {
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            inc.ext_cell.i, inc.ext_cell.j, inc.e_value, inc.depth, inc.delta
        ));
    }
    rec.write_csv("increments.csv", "cell_i,cell_j,E,depth,delta", &s)?;
    rec.write_raw("result.json", &serde_json::to_string_pretty(&res)?)?;
    rec.write_raw(
        "acceptance.log",
        &format!(
            "snapshots={} accepted={} acceptance_rate={:.5}\n",
            res.snapshots, res.count, res.acceptance
        ),
    )?;
    println!(
        "IIC drift: mean {:.5} +- {:.5} over {} increments (|mean|/se = {:.2}), \
         max |Delta| = {:.2}, acceptance {:.4}",
        res.mean,
        res.se,
        res.count,
        (res.mean / res.se).abs(),
        res.max_abs_delta,
        res.acceptance
    );
    println!("record: {}", rec.dir.display());
    Ok(())
}

fn cmd_critical(out_root: &Path, seed: u64, args: &CriticalArgs) -> Result<()> {
    let rec = start_record(out_root, "critical", &manifest("critical", seed, args))?;
    let a = PI / 3.0;
    let b = PI / 2.0;
    let ns = parse_list(&args.n_list)?;
    // RSW crossings
    let mut s = String::new();
    for &n in &ns {
        let window = ((1.5 * args.rho.max(1.0) * n).ceil() as usize).max(16);
        let lat = RectLattice::build(
            AngleSequence::Alternating { a, b },
            window,
            window,
            Geometry::Window,
        )?;
        for wired in [false, true] {
            let (est, se) = crossing_probability(
                &lat,
                &CrossingConfig {
                    q: 4.0,
                    rho: args.rho,
                    n,
                    wired,
                    replicas: args.replicas,
                    measurements: args.measurements,
                    thin: args.thin,
                    burn_in: args.burn_in,
                    seed,
                    stream_base: 300 + n as u64,
                },
            );
            s.push_str(&format!("{n},{},{est:.5},{se:.5}\n", wired as u8));
            println!("crossing n={n} wired={wired}: {est:.4} +- {se:.4}");
        }
    }
    rec.write_csv("crossings.csv", "n,wired,p_hat,se", &s)?;
    // three-arm scaling
    let rs = parse_list(&args.arm_r_list)?;
    let big_r = args.arm_big_r;
    let window = (big_r * 1.4).ceil() as usize;
    let lat = RectLattice::build(
        AngleSequence::Alternating { a, b },
        2 * window,
        2 * window,
        Geometry::Window,
    )?;
    let weights = WeightTable::from_thetas(lat.edge_thetas(), 4.0)?;
    let theta = PI / 2.0;
    use rayon::prelude::*;
    let counts: Vec<Vec<f64>> = (0..args.replicas)
        .into_par_iter()
        .map(|rep| {
            let mut rng = crate::rng::sub(seed, 400, rep as u64);
            let mut chain = ChainState::new(&lat, &weights, PatchBc::free(&lat));
            chain.run(args.burn_in, &mut rng);
            let mut hits = vec![0.0; rs.len()];
            for _ in 0..args.measurements {
                chain.run(args.thin, &mut rng);
                for (k, &r) in rs.iter().enumerate() {
                    if detect_arm3hp(&chain.config, &lat, (0.0, 0.0), r, big_r, theta).is_some() {
                        hits[k] += 1.0;
                    }
                }
            }
            hits.iter().map(|h| h / args.measurements as f64).collect()
        })
        .collect();
    let mut s = String::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    for (k, &r) in rs.iter().enumerate() {
        let samples: Vec<f64> = counts.iter().map(|c| c[k]).collect();
        let (m, se) = crate::observables::mean_se(&samples);
        s.push_str(&format!("{r},{big_r},{m:.6},{se:.6}\n"));
        if m > 0.0 {
            xs.push((r / big_r).ln());
            ys.push(m.ln());
            ws.push(1.0 / (se / m).powi(2).max(1e-12));
        }
    }
    rec.write_csv("arm3.csv", "r,R,p_hat,se", &s)?;
    if xs.len() >= 2 {
        let (slope, _, slope_se, _) = crate::observables::weighted_least_squares(&xs, &ys, &ws);
        println!("three-arm log-log slope: {slope:.3} +- {slope_se:.3}");
        rec.write_raw(
            "arm3_fit.json",
            &serde_json::json!({"slope": slope, "slope_se": slope_se}).to_string(),
        )?;
    }
    println!("record: {}", rec.dir.display());
    Ok(())
}
