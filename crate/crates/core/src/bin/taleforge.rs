use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use taleforge_core::bubbles::{
    draw_bubbles, get_location, place_bubble, resolve_conflicts, BuiltinFont, FontChain, GlyphAtlas, GlyphProvider,
    Heatmap,
};
use taleforge_core::hmap::Hmap;
use taleforge_core::layout::FrameLayout;
use taleforge_core::maskgen::{LatentDims, MaskSet};
use taleforge_core::narrative::{LlmBackend, StoryBundle};
use taleforge_core::pipeline::{encode_image, frame_masks, run_pipeline, write_artifacts, Engine, PipelineConfig};
use taleforge_core::raster::RgbImage;

type Result<T> = std::result::Result<T, Box<dyn Error>>;

/// Story panels from a short story and a cast list.
#[derive(Parser)]
#[command(name = "taleforge", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML config; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Expand a story skeleton into frame descriptions and dialogue.
    Expand {
        #[arg(long)]
        story: PathBuf,
    },
    /// Propose and correct the layout of one frame.
    Layout {
        #[arg(long)]
        story: PathBuf,
        #[arg(long)]
        frame: usize,
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Build the subject masks for a layout file.
    Mask {
        #[arg(long)]
        layout: PathBuf,
        #[arg(long, default_value_t = 1)]
        frame: usize,
        /// Latent size as HxW.
        #[arg(long)]
        latent: Option<LatentDims>,
    },
    /// Optimize the latents for one frame and decode the panel.
    Compose {
        /// Story whose cast defines the character bank.
        #[arg(long)]
        story: PathBuf,
        #[arg(long)]
        layout: PathBuf,
        /// Directory holding the output of `mask`.
        #[arg(long)]
        masks: PathBuf,
        #[arg(long, default_value_t = 1)]
        frame: usize,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        delta_omega: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Place and draw speech bubbles on an existing image.
    Bubbles {
        /// PPM image.
        #[arg(long)]
        image: PathBuf,
        /// Directory with one `<character_id>.hmap` per speaker.
        #[arg(long)]
        heatmaps: PathBuf,
        /// JSON list of {character_id, utterance}.
        #[arg(long)]
        dialogues: PathBuf,
        #[arg(long)]
        font_size: Option<u32>,
        #[arg(long)]
        suppression_scale: Option<f64>,
    },
    /// Every stage for every frame.
    Run {
        #[arg(long)]
        story: PathBuf,
        /// Replace mask-derived head maps with `frame_<k>_<id>.hmap` files.
        #[arg(long)]
        heatmaps: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
    },
}

struct Setup {
    config: PipelineConfig,
    base_dir: PathBuf,
}

impl Setup {
    fn new(g: &Global) -> Result<Self> {
        let (mut config, base_dir) = match &g.config {
            Some(p) => (
                PipelineConfig::load(p)?,
                p.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (PipelineConfig::default(), PathBuf::from(".")),
        };
        if let Some(s) = g.seed {
            config.seed = s;
        }
        if let Some(o) = &g.out {
            config.out = o.clone();
        }
        if let Some(w) = g.workers {
            config.workers = w;
        }
        Ok(Setup { config, base_dir })
    }

    fn backend(&self) -> Result<Box<dyn LlmBackend>> {
        Ok(self.config.backend.build(&self.base_dir)?)
    }

    fn engine(&self, story: &StoryBundle) -> Result<Engine> {
        self.config.validate()?;
        Ok(Engine::new(self.config.clone(), story, &self.base_dir)?)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.config.out)?;
        Ok(&self.config.out)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let mut setup = Setup::new(&cli.global)?;
    match cli.command {
        Command::Expand { story } => {
            let story = StoryBundle::load(&story)?;
            let expanded = setup.engine(&story)?.expand(&story, setup.backend()?.as_ref())?;
            let path = setup.out_dir()?.join("story.expanded.json");
            fs::write(&path, expanded.to_json() + "\n")?;
            println!("{}", path.display());
        }
        Command::Layout {
            story,
            frame,
            strict,
            max_iters,
        } => {
            setup.config.layout.strict |= strict;
            if let Some(n) = max_iters {
                setup.config.layout.max_iters = n;
            }
            let story = StoryBundle::load(&story)?;
            let engine = setup.engine(&story)?;
            let backend = setup.backend()?;
            let story = engine.expand(&story, backend.as_ref())?;
            let outcome = engine.layout(&story, frame, backend.as_ref())?;
            let path = setup.out_dir()?.join(format!("frame_{frame}.layout.txt"));
            fs::write(&path, outcome.layout.to_wire())?;
            for w in &outcome.warnings {
                log::warn!("{w}");
            }
            println!(
                "{} ({} iterations, {:?}, E_rec {:.4})",
                path.display(),
                outcome.iterations,
                outcome.stop,
                outcome.trace[outcome.best].e_rec
            );
        }
        Command::Mask { layout, frame, latent } => {
            if let Some(d) = latent {
                setup.config.latent = d;
            }
            let layout = FrameLayout::load(&layout)?;
            setup.config.validate()?;
            let masks = frame_masks(&setup.config, &layout, frame)?;
            write_artifacts(setup.out_dir()?, &masks.files(frame))?;
            println!("eta {:?}", masks.etas());
        }
        Command::Compose {
            story,
            layout,
            masks,
            frame,
            steps,
            delta_omega,
            lambda,
        } => {
            if let Some(s) = steps {
                setup.config.steps = s;
            }
            if let Some(d) = delta_omega {
                setup.config.foreground.delta_omega = d;
            }
            if let Some(l) = lambda {
                setup.config.lambda = l;
            }
            let story = StoryBundle::load(&story)?;
            let layout = FrameLayout::load(&layout)?;
            let masks = MaskSet::load(&masks, frame)?;
            let engine = setup.engine(&story)?;
            let comp = engine.compose(&masks, &layout, frame)?;
            let mut files = vec![
                (format!("frame_{frame}.zfg.hmap"), comp.z_fg.to_hmap().to_bytes()),
                (format!("frame_{frame}.zbg.hmap"), comp.z_bg.to_hmap().to_bytes()),
            ];
            files.extend(encode_image(&comp.image, setup.config.image_format, &format!("frame_{frame}"))?);
            write_artifacts(setup.out_dir()?, &files)?;
            if let Some(last) = comp.energy.last() {
                println!("final energy {:.6}", last.after);
            }
        }
        Command::Bubbles {
            image,
            heatmaps,
            dialogues,
            font_size,
            suppression_scale,
        } => {
            let params = &mut setup.config.bubbles;
            if let Some(f) = font_size {
                params.font_size = f;
            }
            if let Some(s) = suppression_scale {
                params.suppression_scale = s;
            }
            bubbles_command(&setup, &image, &heatmaps, &dialogues)?;
        }
        Command::Run { story, heatmaps, strict } => {
            setup.config.layout.strict |= strict;
            if heatmaps.is_some() {
                setup.config.heatmaps = heatmaps.map(|h| std::path::absolute(h)).transpose()?;
            }
            let backend = setup.backend()?;
            let summary = run_pipeline(&setup.config, &story, &setup.base_dir, backend.as_ref())?;
            for p in &summary.panels {
                println!("frame {}: {}", p.frame, p.image.display());
            }
            for (k, e) in &summary.failures {
                eprintln!("frame {k} failed: {e}");
            }
            if !summary.failures.is_empty() {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Deserialize)]
struct Line {
    character_id: String,
    utterance: String,
}

fn bubbles_command(setup: &Setup, image: &Path, heatmaps: &Path, dialogues: &Path) -> Result<()> {
    let params = &setup.config.bubbles;
    let mut img = RgbImage::load_ppm(image)?;
    let lines: Vec<Line> = serde_json::from_str(&fs::read_to_string(dialogues)?)?;
    // Speakers in order of first appearance.
    let mut speakers: Vec<(String, Vec<String>)> = Vec::new();
    for l in lines {
        match speakers.iter_mut().find(|(id, _)| *id == l.character_id) {
            Some((_, said)) => said.push(l.utterance),
            None => speakers.push((l.character_id, vec![l.utterance])),
        }
    }
    let dims = (img.width, img.height);
    let mut used = Vec::new();
    let mut placed = Vec::new();
    for (id, said) in &speakers {
        let h = Hmap::load(&heatmaps.join(format!("{id}.hmap")))?;
        let maps = Heatmap::stack_from_hmap(&h)?;
        let head = get_location(dims, &maps, &used, params.suppression_scale)?;
        used.push((head.x, head.y));
        placed.push(place_bubble(id, &head, &said.join(" "), params)?);
    }
    let res = resolve_conflicts(&placed, dims, params);
    let atlas = match &setup.config.atlas {
        Some(dir) => Some(GlyphAtlas::load(&setup.base_dir.join(dir))?),
        None => None,
    };
    let chain;
    let font: &dyn GlyphProvider = match &atlas {
        Some(a) => {
            chain = FontChain(vec![a, &BuiltinFont]);
            &chain
        }
        None => &BuiltinFont,
    };
    for w in draw_bubbles(&mut img, &res.bubbles, font, params.tail_half_angle) {
        log::warn!("{w:?}");
    }
    if res.unresolved {
        log::warn!("bubble conflicts remain after {} passes", res.passes);
    }
    let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let mut files = encode_image(&img, setup.config.image_format, &format!("{stem}.bubbled"))?;
    let json = serde_json::to_string_pretty(&res.bubbles)? + "\n";
    files.push((format!("{stem}.bubbles.json"), json.into_bytes()));
    write_artifacts(setup.out_dir()?, &files)?;
    for b in &res.bubbles {
        println!("{} bubble at ({}, {}) {}x{}", b.character_id, b.x_b, b.y_b, b.w_bubble, b.h_bubble);
    }
    Ok(())
}
