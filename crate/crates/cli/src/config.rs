use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use extprof_core::classify::DEFAULT_MARGIN;
use extprof_core::ode::StepControl;
use extprof_core::profile::DEFAULT_R_MAX;
use extprof_core::psi::DEFAULT_Y_END;
use extprof_core::Params;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Classify,
    Threshold,
    Profile,
    Psi,
    Selfsim,
    Sweep,
    Validate,
}

#[derive(Debug, Parser)]
#[command(name = "extprof", version, about = "Extinction profiles of the singular p-Laplacian ODE")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the regime of a shooting parameter.
    Classify(Common),
    /// Bisect for the critical parameter.
    Threshold(Common),
    /// Radial profile r, f, f'.
    Profile(Common),
    /// Transform y, psi, phi.
    Psi(Common),
    /// Slice of the self-similar solution.
    Selfsim(Common),
    /// Labels and tail constants on a logarithmic parameter grid.
    Sweep(Common),
    /// Run the invariant suite and print a pass/fail table.
    Validate(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long, default_value_t = 1.5)]
    pub p: f64,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long, default_value_t = 1e-10)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 1e-200)]
    pub abs_tol: f64,
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: f64,
    #[arg(long)]
    pub tol_a: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_R_MAX)]
    pub r_max: f64,
    #[arg(long, default_value_t = DEFAULT_Y_END)]
    pub y_end: f64,
    /// Extinction time.
    #[arg(long = "t-ext", default_value_t = 1.0)]
    pub extinction_time: f64,
    #[arg(long, default_value_t = 0.0)]
    pub t: f64,
    #[arg(long, default_value_t = 10.0)]
    pub x_max: f64,
    #[arg(long, default_value_t = 201)]
    pub nx: usize,
    #[arg(long)]
    pub a_min: Option<f64>,
    #[arg(long)]
    pub a_max: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: CommandKind,
    pub p: f64,
    pub a: Option<f64>,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub margin: f64,
    pub tol_a: Option<f64>,
    pub r_max: f64,
    pub y_end: f64,
    pub extinction_time: f64,
    pub t: f64,
    pub x_max: f64,
    pub nx: usize,
    pub a_min: Option<f64>,
    pub a_max: Option<f64>,
    pub n: usize,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

impl RunConfig {
    pub fn from_cli(cli: Cli) -> Result<RunConfig, UsageError> {
        let (command, c) = match cli.command {
            Command::Classify(c) => (CommandKind::Classify, c),
            Command::Threshold(c) => (CommandKind::Threshold, c),
            Command::Profile(c) => (CommandKind::Profile, c),
            Command::Psi(c) => (CommandKind::Psi, c),
            Command::Selfsim(c) => (CommandKind::Selfsim, c),
            Command::Sweep(c) => (CommandKind::Sweep, c),
            Command::Validate(c) => (CommandKind::Validate, c),
        };
        let cfg = RunConfig {
            command,
            p: c.p,
            a: c.a,
            rel_tol: c.rel_tol,
            abs_tol: c.abs_tol,
            margin: c.margin,
            tol_a: c.tol_a,
            r_max: c.r_max,
            y_end: c.y_end,
            extinction_time: c.extinction_time,
            t: c.t,
            x_max: c.x_max,
            nx: c.nx,
            a_min: c.a_min,
            a_max: c.a_max,
            n: c.n,
            output: c.output,
            format: c.format,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let err = |m: String| Err(UsageError(m));
        if let Err(e) = Params::new(self.p) {
            return err(e.to_string());
        }
        let needs_a = matches!(
            self.command,
            CommandKind::Classify | CommandKind::Profile | CommandKind::Psi | CommandKind::Selfsim
        );
        match self.a {
            None if needs_a => return err("--a is required for this command".into()),
            Some(a) if !(a > 0.0 && a.is_finite()) => return err(format!("--a {a} must be positive")),
            _ => {}
        }
        if let Err(e) = self.step_control().validate() {
            return err(e.to_string());
        }
        if !(self.margin > 0.0 && self.margin < 0.5) {
            return err(format!("--margin {} not in (0, 0.5)", self.margin));
        }
        if self.command == CommandKind::Sweep && self.n < 2 {
            return err("--n must be at least 2".into());
        }
        if self.command == CommandKind::Selfsim && self.nx < 1 {
            return err("--nx must be positive".into());
        }
        if let Some(f) = self.check_finite().err() {
            return err(format!("--{} must be finite", f.replace('_', "-")));
        }
        Ok(())
    }

    pub fn params(&self) -> Params {
        Params::new(self.p).expect("validated")
    }

    pub fn step_control(&self) -> StepControl {
        StepControl { rel_tol: self.rel_tol, abs_tol: self.abs_tol, ..StepControl::default() }
    }

    /// Name of the first non-finite numeric field.
    pub fn check_finite(&self) -> Result<(), &'static str> {
        let fields = [
            ("p", Some(self.p)),
            ("a", self.a),
            ("rel_tol", Some(self.rel_tol)),
            ("abs_tol", Some(self.abs_tol)),
            ("margin", Some(self.margin)),
            ("tol_a", self.tol_a),
            ("r_max", Some(self.r_max)),
            ("y_end", Some(self.y_end)),
            ("extinction_time", Some(self.extinction_time)),
            ("t", Some(self.t)),
            ("x_max", Some(self.x_max)),
            ("a_min", self.a_min),
            ("a_max", self.a_max),
        ];
        for (name, v) in fields {
            if let Some(x) = v {
                if !x.is_finite() {
                    return Err(name);
                }
            }
        }
        Ok(())
    }
}
