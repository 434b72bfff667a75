use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;

use layered_dr::bench::{benchmark_pipeline, run_benchmark, BenchConfig, BenchReport};
use layered_dr::compositor::{self, find_preset, preset_table, BlendParams};
use layered_dr::io::{
    export_sequence, read_layers, write_gray_pgm, write_json, write_layers, write_ppm, GridInfo, LayerIndex, Manifest,
};
use layered_dr::pipeline::{background_model, process_frame};
use layered_dr::scene::{build_suite, NoiseModel, SuiteConfig};
use layered_dr::{Error, GridSpec, PipelineConfig, Vec3};

use crate::{BenchArgs, CliError, ComposeArgs, ExportArgs, GridArgs, ServeArgs, SynthesizeArgs, Toggle};

impl GridArgs {
    /// Applies the overrides on top of `base`.
    pub fn apply(&self, base: PipelineConfig) -> Result<PipelineConfig, CliError> {
        let mut c = base;
        let grid = &c.grid;
        c.grid = GridSpec::new(
            self.grid_dims.unwrap_or(grid.dims),
            self.voxel_size.unwrap_or(grid.voxel_size),
            self.grid_center.map_or(grid.origin, |[x, y, z]| Vec3::new(x, y, z)),
        )
        .map_err(|e| CliError::Usage(e.to_string()))?;
        if let Some(d) = self.delta_trunc {
            c.fusion.delta_trunc = d;
        }
        if let Some(e) = self.eta {
            c.fusion.eta = e;
        }
        if let Some(m) = self.margin {
            c.segmentation.margin = m;
        }
        if let Some(r) = self.opening_radius {
            c.segmentation.opening_radius = r;
        }
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn synthesize(args: &SynthesizeArgs) -> Result<LayerIndex, CliError> {
    let config = args.grid.apply(PipelineConfig::default())?;
    let manifest = Manifest::load(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    if manifest.init_frames.is_empty() {
        return Err(anyhow::anyhow!(
            "{}: no initialization frames for the background model",
            args.manifest.display()
        )
        .into());
    }
    create_dir(&args.out)?;
    let init = manifest
        .init_frames
        .iter()
        .map(|e| manifest.read_views(base, e))
        .collect::<layered_dr::Result<Vec<_>>>()?;
    let model = background_model(&init, &manifest.target, &config)?;
    let xray = manifest.read_xray(base)?;
    let xray_name = PathBuf::from("xray.pgm");
    write_gray_pgm(&args.out.join(&xray_name), &xray)?;

    let mut frames = Vec::with_capacity(manifest.frames.len());
    for entry in &manifest.frames {
        let at_frame = |e: Error| Error::Frame {
            frame: entry.index,
            source: Box::new(e),
        };
        let views = manifest.read_views(base, entry)?;
        let out = process_frame(&views, &manifest.target, &model, xray.clone(), &config).map_err(at_frame)?;
        frames.push(write_layers(&args.out, entry.index, &out.layers).map_err(at_frame)?);
        if args.dump_grid {
            let path = args.out.join(format!("frame{:04}_grid.bin", entry.index));
            out.grid.save_dump(&path).map_err(at_frame)?;
        }
        eprintln!(
            "frame {}: {:.1}% of {} foreground pixels recovered",
            entry.index,
            frames.last().map_or(0.0, |f| f.stats.recovery_pct),
            out.layers.mask.count()
        );
    }
    let index = LayerIndex {
        name: manifest.name.clone(),
        width: manifest.target.width(),
        height: manifest.target.height(),
        grid: GridInfo {
            dims: config.grid.dims,
            voxel_size: config.grid.voxel_size,
        },
        xray: xray_name,
        frames,
    };
    index.save(&args.out)?;
    Ok(index)
}

/// Preset by name, or the four explicit weights.
pub fn blend_params(preset: Option<&str>, weights: &[f64]) -> Result<BlendParams, CliError> {
    match (preset, weights) {
        (Some(name), []) => find_preset(name).map(|p| p.params).ok_or_else(|| {
            let names: Vec<String> = preset_table().into_iter().map(|p| p.name).collect();
            CliError::Usage(format!("unknown preset {name:?}; choose one of {}", names.join(", ")))
        }),
        (None, &[a, b, g, d]) => BlendParams::new(a, b, g, d).map_err(|e| CliError::Usage(e.to_string())),
        _ => Err(CliError::Usage("give either --preset NAME or ALPHA BETA GAMMA DELTA".into())),
    }
}

pub fn compose(args: &ComposeArgs) -> Result<(), CliError> {
    let params = blend_params(args.preset.as_deref(), &args.weights)?;
    let index = LayerIndex::load(&args.layers)?;
    let frame = index
        .frame(args.frame)
        .ok_or_else(|| anyhow::anyhow!("{}: no frame {}", args.layers.display(), args.frame))?;
    let layers = read_layers(&args.layers, &index, frame)?;
    let image = compositor::compose(&layers, &params)?;
    let is_png = args.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        let bytes = layered_dr::io::png_color(&image);
        fs::write(&args.out, bytes).with_context(|| format!("writing {}", args.out.display()))?;
    } else {
        write_ppm(&args.out, &image)?;
    }
    Ok(())
}

pub fn bench(args: &BenchArgs) -> Result<BenchReport, CliError> {
    let config = BenchConfig {
        pipeline: args.grid.apply(benchmark_pipeline())?,
        noise: (args.noise == Toggle::On).then(NoiseModel::default),
        max_frames: args.max_frames,
    };
    let mut suite = build_suite(&SuiteConfig::default())?;
    if !args.sequences.is_empty() {
        if let Some(bad) = args.sequences.iter().find(|id| !suite.iter().any(|s| s.id == **id)) {
            return Err(CliError::Usage(format!("no benchmark sequence {bad}; ids run from 1 to {}", suite.len())));
        }
        suite.retain(|s| args.sequences.contains(&s.id));
    }
    let report = run_benchmark(&suite, &config)?;
    write_json(&args.report, &report)?;
    print!("{}", report.table());
    Ok(report)
}

pub fn serve(args: &ServeArgs) -> Result<(), CliError> {
    let app = crate::service::app(&args.layers)?;
    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.bind)
            .await
            .with_context(|| format!("binding {}", args.bind))?;
        eprintln!("serving {} on http://{}", args.layers.display(), listener.local_addr()?);
        axum::serve(listener, app).await.context("serving")
    })?;
    Ok(())
}

pub fn export(args: &ExportArgs) -> Result<PathBuf, CliError> {
    let mut config = SuiteConfig::default();
    if let Some(n) = args.init_frames {
        config.init_frames = n;
    }
    let suite = build_suite(&config)?;
    let seq = suite
        .iter()
        .find(|s| s.id == args.sequence)
        .ok_or_else(|| CliError::Usage(format!("no benchmark sequence {}", args.sequence)))?;
    let noise = (args.noise == Toggle::On).then(NoiseModel::default);
    let path = export_sequence(seq, &args.out, noise.as_ref())?;
    eprintln!("wrote {}", path.display());
    Ok(path)
}
