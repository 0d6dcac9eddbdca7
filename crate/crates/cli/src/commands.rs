use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use anyhow::{anyhow, Context};
use patchview_core::dataset_io::{
    generate_synthetic_rig, load_correspondences, load_manifest, DatasetError, DatasetManifest,
    SyntheticRigSpec, ViewSetConfig,
};
use patchview_core::detector::{
    run_stub_server, BridgeConfig, BridgeDetector, CannedReplies, Detector, DetectorError,
    ToyDetector, ToyDetectorSpec,
};
use patchview_core::evaluation::{
    reports_from_csv, reports_to_csv, reports_to_table, run_experiment, EvalParams, ExperimentError,
};
use patchview_core::geometry::{estimate_homography, reprojection_error, Homography, Point2};
use patchview_core::imaging::{
    place_patches, project_patch, read_png, warp_image, write_png, BBox, ImagingError,
    PatchPlacement,
};
use patchview_core::loss::{LossWeights, PrintableColorSet};
use patchview_core::optimizer::{train_patch, OptimizerError, TrainConfig, TrainSample};

use crate::{
    ApplyArgs, Cli, Command, DetectorArgs, EstimateArgs, EvalArgs, PlacementArgs, ProjectArgs,
    ReportArgs, StubArgs, SynthArgs, TrainArgs, WarpArgs,
};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_DETECTOR: u8 = 3;
pub const EXIT_GEOMETRY: u8 = 4;

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

type Result<T> = std::result::Result<T, Failure>;

fn input(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_INPUT,
        error: e.into(),
    }
}

fn detector_failure(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_DETECTOR,
        error: e.into(),
    }
}

fn geometry(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_GEOMETRY,
        error: e.into(),
    }
}

fn from_dataset(e: DatasetError) -> Failure {
    match e {
        DatasetError::Homography { .. } | DatasetError::MissingCorrespondences { .. } => {
            geometry(e)
        }
        _ => input(e),
    }
}

fn from_imaging(e: ImagingError) -> Failure {
    match e {
        ImagingError::Geometry(_) | ImagingError::DegenerateQuad(_) => geometry(e),
        _ => input(e),
    }
}

fn from_experiment(e: ExperimentError) -> Failure {
    match e {
        ExperimentError::Dataset(d) => from_dataset(d),
        ExperimentError::Detector(_) => detector_failure(e),
        ExperimentError::MissingHomography { .. } | ExperimentError::Projection { .. } => {
            geometry(e)
        }
        ExperimentError::Imaging { .. } | ExperimentError::InvalidParams(_) => input(e),
    }
}

fn from_optimizer(e: OptimizerError) -> Failure {
    match e {
        OptimizerError::Detector(_) => detector_failure(e),
        _ => input(e),
    }
}

pub fn run(cli: Cli, seed_given: bool) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::EstimateH(a) => estimate_h(a),
        Command::Warp(a) => warp(a),
        Command::TrainPatch(a) => train(a, seed),
        Command::ApplyPatch(a) => apply_patch(a),
        Command::Project(a) => project(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Synth(a) => synth(a, seed_given.then_some(seed)),
        Command::Report(a) => report(a),
        Command::StubBridge(a) => stub_bridge(a),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(input)?;
    }
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(input)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(input)
}

fn format_homography(h: &Homography) -> String {
    let m = h.matrix();
    let mut out = String::new();
    for r in 0..3 {
        let _ = writeln!(out, "{} {} {}", m[3 * r], m[3 * r + 1], m[3 * r + 2]);
    }
    out
}

fn read_homography(path: &Path) -> Result<Homography> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(input)?;
    let values: Vec<f64> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace)
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| anyhow!("{}: {t:?}: {e}", path.display()))
        })
        .collect::<anyhow::Result<_>>()
        .map_err(input)?;
    let m: [f64; 9] = values.try_into().map_err(|v: Vec<f64>| {
        input(anyhow!(
            "{}: expected 9 values, found {}",
            path.display(),
            v.len()
        ))
    })?;
    Homography::from_matrix(m)
        .with_context(|| format!("homography in {}", path.display()))
        .map_err(geometry)
}

fn estimate_h(a: EstimateArgs) -> Result<()> {
    let corrs = load_correspondences(&a.points).map_err(input)?;
    // Too few or degenerate points are input problems here.
    let h = estimate_homography(&corrs)
        .with_context(|| format!("estimating from {}", a.points.display()))
        .map_err(input)?;
    let (rms, max) = reprojection_error(&h, &corrs);
    eprintln!(
        "{} correspondences, reprojection residual rms {rms:.3e} px, max {max:.3e} px",
        corrs.len()
    );
    write_file(&a.out, &format_homography(&h))
}

fn warp(a: WarpArgs) -> Result<()> {
    let img = read_png(&a.image).map_err(input)?;
    let h = read_homography(&a.homography)?;
    let w = a.width.unwrap_or(img.width());
    let hgt = a.height.unwrap_or(img.height());
    let (out, _) = warp_image(&img, &h, w, hgt).map_err(from_imaging)?;
    write_png(&a.out, &out).map_err(input)
}

fn parse_floats<const N: usize>(text: &str, what: &str) -> Result<[f64; N]> {
    let v: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| input(anyhow!("{what} {text:?}: {e}")))?;
    v.try_into().map_err(|_| {
        input(anyhow!(
            "{what} {text:?}: expected {N} comma-separated numbers"
        ))
    })
}

fn placement(p: &PlacementArgs, bbox: BBox) -> Result<PatchPlacement> {
    PatchPlacement::new(bbox, p.scale, (p.anchor_x, p.anchor_y)).map_err(input)
}

fn apply_patch(a: ApplyArgs) -> Result<()> {
    let img = read_png(&a.image).map_err(input)?;
    let patch = read_png(&a.patch).map_err(input)?;
    let placements = a
        .boxes
        .iter()
        .map(|b| {
            let [x0, y0, x1, y1] = parse_floats::<4>(b, "box")?;
            placement(&a.placement, BBox::new(x0, y0, x1, y1).map_err(input)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let composite = place_patches(&img, &patch, &placements).map_err(from_imaging)?;
    write_png(&a.out, &composite.image).map_err(input)?;
    for rec in &composite.records {
        let q = rec.quad();
        let coords: Vec<String> = q
            .iter()
            .flat_map(|p| [p.x, p.y])
            .map(|v| v.to_string())
            .collect();
        println!("{}", coords.join(","));
    }
    Ok(())
}

fn project(a: ProjectArgs) -> Result<()> {
    let dst = read_png(&a.dst).map_err(input)?;
    let src = read_png(&a.ref_patched).map_err(input)?;
    let h = read_homography(&a.homography)?;
    let mut out = dst;
    for q in &a.quad {
        let v = parse_floats::<8>(q, "quad")?;
        let quad = [0, 1, 2, 3].map(|k| Point2::new(v[2 * k], v[2 * k + 1]));
        out = project_patch(&out, &src, &quad, &h).map_err(from_imaging)?;
    }
    write_png(&a.out, &out).map_err(input)
}

fn toy_spec(d: &DetectorArgs) -> ToyDetectorSpec {
    ToyDetectorSpec::with_params(d.template_seed, d.steepness, d.bias, d.stride)
}

fn make_detector(d: &DetectorArgs) -> Result<Box<dyn Detector>> {
    if d.detector == "toy" {
        let det = ToyDetector::new(toy_spec(d)).map_err(input)?;
        return Ok(Box::new(det));
    }
    if let Some(cmd) = d.detector.strip_prefix("bridge:") {
        let det = BridgeDetector::connect(&BridgeConfig::parse(cmd))
            .map_err(|e| detector_failure(DetectorError::from(e)))?;
        return Ok(Box::new(det));
    }
    Err(input(anyhow!(
        "unknown detector {:?} (expected toy or bridge:CMD)",
        d.detector
    )))
}

fn reference_view(m: &DatasetManifest, flag: Option<u32>) -> u32 {
    flag.or(m.view_set.as_ref().map(|v| v.reference_view))
        .unwrap_or_else(|| m.views[0])
}

fn parse_view_list(list: &str, flag: &str) -> Result<Vec<u32>> {
    list.split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<u32>()
                .map_err(|e| input(anyhow!("{flag} entry {t:?}: {e}")))
        })
        .collect()
}

fn train(a: TrainArgs, seed: u64) -> Result<()> {
    if a.detector.detector != "toy" {
        if a.detector.detector.starts_with("bridge:") {
            return Err(detector_failure(DetectorError::NotGradCapable));
        }
        return Err(input(anyhow!("unknown detector {:?}", a.detector.detector)));
    }
    let cfg = TrainConfig {
        patch_width: a.patch_width,
        patch_height: a.patch_height,
        minibatch: a.minibatch,
        lr: a.lr,
        weights: LossWeights {
            alpha: a.alpha,
            beta: a.beta,
            gamma: a.gamma,
        },
        iterations: a.iterations,
        seed,
        placement_scale: a.placement.scale,
        anchor: (a.placement.anchor_x, a.placement.anchor_y),
    };
    cfg.validate().map_err(input)?;
    let detector = make_detector(&a.detector)?;
    let palette = match &a.palette {
        Some(p) => PrintableColorSet::load(p).map_err(input)?,
        None => PrintableColorSet::default(),
    };

    let manifest = load_manifest(&a.dataset).map_err(from_dataset)?;
    let ref_view = reference_view(&manifest, a.ref_view);
    if !manifest.views.contains(&ref_view) {
        return Err(input(anyhow!("view {ref_view} is not in the dataset")));
    }
    let mut pool = vec![ref_view];
    if let Some(list) = &a.extra_views {
        for v in parse_view_list(list, "--extra-views")? {
            if !manifest.views.contains(&v) {
                return Err(input(anyhow!("view {v} is not in the dataset")));
            }
            if !pool.contains(&v) {
                pool.push(v);
            }
        }
    }
    let gts = manifest.load_annotations().map_err(from_dataset)?;
    // One pool: reference frames first, then each extra view in order.
    let mut samples = Vec::new();
    for &v in &pool {
        for &f in &manifest.frames {
            let boxes: Vec<BBox> = gts
                .iter()
                .filter(|g| g.view_id == v && g.frame_id == f)
                .map(|g| g.bbox)
                .collect();
            if boxes.is_empty() {
                continue;
            }
            let frame = read_png(manifest.frame_path(v, f)).map_err(input)?;
            samples.push(TrainSample {
                frame,
                person_bboxes: boxes,
            });
        }
    }
    if samples.is_empty() {
        return Err(input(anyhow!("no annotated persons in view {ref_view}")));
    }

    let outcome =
        train_patch(&samples, detector.as_ref(), &cfg, &palette).map_err(from_optimizer)?;

    create_dir(&a.out)?;
    write_png(a.out.join("patch.png"), &outcome.patch).map_err(input)?;

    let mut hist = String::from("iteration,l_nps,l_tv,l_tv_effective,l_obj,total\n");
    for (i, b) in outcome.history.iter().enumerate() {
        let _ = writeln!(
            hist,
            "{i},{},{},{},{},{}",
            b.l_nps, b.l_tv, b.l_tv_effective, b.l_obj, b.total
        );
    }
    write_file(&a.out.join("loss_history.csv"), &hist)?;

    let first = outcome.history.first().expect("at least one iteration");
    let last = outcome.history.last().expect("at least one iteration");
    let spec = toy_spec(&a.detector);
    let meta = [
        ("patch_width", cfg.patch_width.to_string()),
        ("patch_height", cfg.patch_height.to_string()),
        ("seed", seed.to_string()),
        ("iterations", cfg.iterations.to_string()),
        ("minibatch", cfg.minibatch.to_string()),
        ("lr", cfg.lr.to_string()),
        ("alpha", cfg.weights.alpha.to_string()),
        ("beta", cfg.weights.beta.to_string()),
        ("gamma", cfg.weights.gamma.to_string()),
        ("scale", cfg.placement_scale.to_string()),
        ("anchor_x", cfg.anchor.0.to_string()),
        ("anchor_y", cfg.anchor.1.to_string()),
        ("ref_view", ref_view.to_string()),
        (
            "training_views",
            pool.iter()
                .map(u32::to_string)
                .collect::<Vec<_>>()
                .join(","),
        ),
        ("training_frames", samples.len().to_string()),
        ("detector", "toy".into()),
        ("template_seed", spec.seed.to_string()),
        ("steepness", spec.steepness.to_string()),
        ("bias", spec.bias.to_string()),
        ("stride", spec.stride.to_string()),
        ("initial_l_obj", first.l_obj.to_string()),
        ("final_l_obj", last.l_obj.to_string()),
        ("final_total", last.total.to_string()),
    ];
    let meta: String = meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    write_file(&a.out.join("patch.meta"), &meta)?;
    eprintln!(
        "trained {} iterations on {} frames: L_obj {:.4} -> {:.4}",
        cfg.iterations,
        samples.len(),
        first.l_obj,
        last.l_obj
    );
    Ok(())
}

fn evaluate(a: EvalArgs) -> Result<()> {
    let manifest = load_manifest(&a.dataset).map_err(from_dataset)?;
    let gts = manifest.load_annotations().map_err(from_dataset)?;
    let patch = read_png(&a.patch).map_err(input)?;

    let reference_view = reference_view(&manifest, a.ref_view);
    let destination_views = match &a.views {
        Some(list) => parse_view_list(list, "--views")?,
        None => match &manifest.view_set {
            Some(vs) if vs.reference_view == reference_view => vs.destination_views.clone(),
            _ => manifest
                .views
                .iter()
                .copied()
                .filter(|v| *v != reference_view)
                .collect(),
        },
    };
    let views = ViewSetConfig {
        reference_view,
        destination_views,
    };
    views.validate(&manifest.views).map_err(input)?;
    let homographies = manifest.homographies().map_err(from_dataset)?;
    let detector = make_detector(&a.detector)?;
    let params = EvalParams {
        iou_thresh: a.iou,
        conf_thresh: a.conf,
        placement_scale: a.placement.scale,
        anchor: (a.placement.anchor_x, a.placement.anchor_y),
        keep_frames: true,
    };
    placement(
        &a.placement,
        BBox::new(0.0, 0.0, 1.0, 1.0).expect("unit box"),
    )?;

    let out = run_experiment(
        &manifest,
        &gts,
        &patch,
        &views,
        &homographies,
        detector.as_ref(),
        &params,
    )
    .map_err(from_experiment)?;

    create_dir(&a.out)?;
    write_file(&a.out.join("report.csv"), &reports_to_csv(&out.reports))?;
    let table = reports_to_table(&out.reports);
    write_file(&a.out.join("report.txt"), &table)?;
    for pf in &out.patched_frames {
        let path = a
            .out
            .join("patched")
            .join(format!("view{}", pf.view))
            .join(format!("frame{}.png", pf.frame));
        if let Some(dir) = path.parent() {
            create_dir(dir)?;
        }
        write_png(&path, &pf.image).map_err(input)?;
    }
    print!("{table}");
    Ok(())
}

fn synth(a: SynthArgs, seed: Option<u64>) -> Result<()> {
    if a.print_sample {
        let text = serde_json::to_string_pretty(&SyntheticRigSpec::sample()).map_err(input)?;
        println!("{text}");
        return Ok(());
    }
    let mut spec = match &a.spec {
        Some(p) => SyntheticRigSpec::load(p).map_err(input)?,
        None => SyntheticRigSpec::sample(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let out = a.out.expect("clap requires --out");
    let m = generate_synthetic_rig(&spec, &out).map_err(input)?;
    eprintln!(
        "wrote {} views x {} frames to {}",
        m.views.len(),
        m.frames.len(),
        out.display()
    );
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))
        .map_err(input)?;
    let reports =
        reports_from_csv(&text).map_err(|e| input(anyhow!("{}: {e}", a.input.display())))?;
    if reports.is_empty() {
        return Err(input(anyhow!("{}: no report rows", a.input.display())));
    }
    print!("{}", reports_to_table(&reports));
    Ok(())
}

fn stub_bridge(a: StubArgs) -> Result<()> {
    let text = fs::read_to_string(&a.replies)
        .with_context(|| format!("reading {}", a.replies.display()))
        .map_err(input)?;
    let canned = CannedReplies::parse(&text).map_err(input)?;
    let stdin = std::io::stdin();
    run_stub_server(
        BufReader::new(stdin.lock()),
        std::io::stdout().lock(),
        &canned,
    )
    .map_err(detector_failure)
}
