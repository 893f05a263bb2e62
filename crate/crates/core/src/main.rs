use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use specsim::eye::EyePose;
use specsim::harness::{
    calibration_grid, configure_threads, features_csv, fmt_g, run_experiment, synthesize_features, test_grid,
    write_experiment, HarnessError,
};
use specsim::render::render;
use specsim::scene::{assemble_scene, Config, Method};

#[derive(Parser, Debug)]
#[command(name = "specsim", version, about = "Eyeglass effects on eye-tracking: rendering, feature synthesis and gaze evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render one eye image and write its ground-truth features.
    Render {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        diopter: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        theta_h: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        theta_v: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ImageFormat::Pgm)]
        image_format: ImageFormat,
    },
    /// Ground-truth features over the calibration and test grids.
    Features {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Single condition instead of the configured list.
        #[arg(long, allow_hyphen_values = true)]
        diopter: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Calibrate and evaluate the gaze mappers for every condition.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        diopter: Option<f64>,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate several configurations, one output subdirectory each.
    Sweep {
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ImageFormat {
    Pgm,
    Png,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum MethodArg {
    Polynomial,
    Geometric,
    Both,
}

impl MethodArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Polynomial => vec![Method::Polynomial],
            MethodArg::Geometric => vec![Method::Geometric],
            MethodArg::Both => vec![Method::Polynomial, Method::Geometric],
        }
    }
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    Config::from_json(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn output_dir(out: Option<PathBuf>, cfg: &Config) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from(&cfg.experiment.output_dir))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Render { config, diopter, theta_h, theta_v, out, image_format } => {
            let cfg = load_config(config.as_deref())?.with_diopter(diopter);
            let pose = EyePose::new(theta_h, theta_v);
            if !pose.is_valid() {
                return Err(Failure::Validation(format!("pose ({theta_h}, {theta_v}) outside ±45°")));
            }
            let scene = assemble_scene(&cfg).map_err(|e| Failure::Validation(e.to_string()))?;
            let dir = output_dir(out, &cfg);
            std::fs::create_dir_all(&dir)?;
            let image = render(&scene, &pose, cfg.render.max_depth, cfg.render.samples_per_pixel);
            let stem = format!("img_{}_{}_{}", fmt_g(diopter), fmt_g(theta_h), fmt_g(theta_v));
            let path = match image_format {
                ImageFormat::Pgm => {
                    let p = dir.join(format!("{stem}.pgm"));
                    image.write_pgm(&p)?;
                    p
                }
                ImageFormat::Png => {
                    let p = dir.join(format!("{stem}.png"));
                    image.write_png(&p).map_err(|e| Failure::Runtime(e.to_string()))?;
                    p
                }
            };
            let rows = synthesize_features(&cfg, diopter, &[pose])?;
            std::fs::write(dir.join("features.csv"), features_csv(&rows, scene.leds.len()))?;
            eprintln!("wrote {}", path.display());
        }
        Command::Features { config, diopter, out } => {
            let cfg = load_config(config.as_deref())?;
            let diopters = diopter.map_or_else(|| cfg.experiment.diopters.clone(), |d| vec![d]);
            let poses: Vec<EyePose> = calibration_grid().into_iter().chain(test_grid()).collect();
            let mut rows = Vec::new();
            for d in diopters {
                rows.extend(synthesize_features(&cfg, d, &poses)?);
            }
            let dir = output_dir(out, &cfg);
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("features.csv"), features_csv(&rows, cfg.leds.len()))?;
        }
        Command::Evaluate { config, diopter, method, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(d) = diopter {
                cfg.experiment.diopters = vec![d];
            }
            if let Some(m) = method {
                cfg.experiment.methods = m.methods();
            }
            let result = run_experiment(&cfg)?;
            let table = write_experiment(&output_dir(out, &cfg), &cfg, &result)?;
            print!("{table}");
        }
        Command::Sweep { configs, method, out } => {
            let root = out.unwrap_or_else(|| PathBuf::from("out"));
            for path in &configs {
                let mut cfg = load_config(Some(path))?;
                if let Some(m) = method {
                    cfg.experiment.methods = m.methods();
                }
                let name = path.file_stem().map_or_else(|| "config".into(), |s| s.to_string_lossy().into_owned());
                let result = run_experiment(&cfg)?;
                let table = write_experiment(&root.join(&name), &cfg, &result)?;
                println!("== {name}");
                print!("{table}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprint!("{}", e.render());
            return ExitCode::from(1);
        }
    };
    configure_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
