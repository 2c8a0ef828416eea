//! `key = value` configuration with command-line overrides.

use std::path::{Path, PathBuf};

use super::protocol::Protocol;
use super::synth::default_domains;
use super::train::RunConfig;
use crate::blocks::{FusionKind, PriorKind};
use crate::error::{ensure, Error, Result};

/// Visualization settings.
#[derive(Clone, Debug, PartialEq)]
pub struct VizSettings {
    pub block: usize,
    pub sigma: f64,
    /// Index of the probe image within the test split of `held_out[0]`.
    pub image: usize,
}

impl Default for VizSettings {
    fn default() -> Self {
        Self {
            block: 0,
            sigma: 1.5,
            image: 0,
        }
    }
}

/// Everything a CLI verb can be configured with. Defaults to the
/// (loasp, loap) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub run: RunConfig,
    pub viz: VizSettings,
    pub out: Option<PathBuf>,
    /// Last fusion named; used when a prior is set afterwards.
    fusion: Option<FusionKind>,
}

impl Default for Settings {
    fn default() -> Self {
        let mut run = RunConfig::default();
        run.model.cell = Some((PriorKind::Loasp, FusionKind::Loap));
        Self {
            run,
            viz: VizSettings::default(),
            out: None,
            fusion: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "mode",
    "domains",
    "held_out",
    "seeds",
    "epochs",
    "batch_size",
    "lr",
    "weight_decay",
    "beta1",
    "beta2",
    "eps",
    "lr_period",
    "low_rank",
    "n_train",
    "n_test",
    "data_seed",
    "threads",
    "augment",
    "image_size",
    "widths",
    "blocks_per_stage",
    "ablation.prior",
    "ablation.fusion",
    "loasp.r",
    "loasp.c_hidden",
    "spline.p",
    "spline.u",
    "spline.domain",
    "dsconv.k",
    "dsconv.merge",
    "viz.block",
    "viz.sigma",
    "viz.image",
    "out",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let run = &mut self.run;
        let block = &mut run.model.block;
        match key {
            "mode" => run.mode = value.parse()?,
            "domains" => {
                let wanted: Vec<String> = value.split(',').map(|s| s.trim().to_string()).collect();
                let all = default_domains();
                run.domains = wanted
                    .iter()
                    .map(|id| {
                        all.iter().find(|d| &d.id == id).cloned().ok_or_else(|| {
                            Error::Config(format!("unknown domain `{id}`; built-in domains are A, B, C, D"))
                        })
                    })
                    .collect::<Result<_>>()?;
                if run.pivots.iter().any(|p| !wanted.contains(p)) {
                    run.pivots = wanted;
                }
            }
            "held_out" => {
                run.pivots = if value == "all" {
                    run.domains.iter().map(|d| d.id.clone()).collect()
                } else {
                    value.split(',').map(|s| s.trim().to_string()).collect()
                }
            }
            "seeds" => run.seeds = parse_list(key, value)?,
            "epochs" => run.epochs = parse(key, value)?,
            "batch_size" => run.batch_size = parse(key, value)?,
            "lr" => run.optim.lr = parse(key, value)?,
            "weight_decay" => run.optim.weight_decay = parse(key, value)?,
            "beta1" => run.optim.beta1 = parse(key, value)?,
            "beta2" => run.optim.beta2 = parse(key, value)?,
            "eps" => run.optim.eps = parse(key, value)?,
            "lr_period" => run.lr_period = parse(key, value)?,
            "low_rank" => run.low_rank = parse_bool(key, value)?,
            "n_train" => run.n_train = parse(key, value)?,
            "n_test" => run.n_test = parse(key, value)?,
            "data_seed" => run.data_seed = parse(key, value)?,
            "threads" => run.threads = parse(key, value)?,
            "augment" => run.augment = parse_bool(key, value)?,
            "image_size" => run.model.image_size = parse(key, value)?,
            "widths" => run.model.widths = parse_list(key, value)?,
            "blocks_per_stage" => run.model.blocks_per_stage = parse(key, value)?,
            "ablation.prior" => {
                run.model.cell = match value {
                    "none" => None,
                    p => {
                        let fusion = self.fusion.unwrap_or(FusionKind::Loap);
                        Some((p.parse::<PriorKind>()?, fusion))
                    }
                }
            }
            "ablation.fusion" => {
                let fusion: FusionKind = value.parse()?;
                if let Some(cell) = run.model.cell.as_mut() {
                    cell.1 = fusion;
                }
                self.fusion = Some(fusion);
            }
            "loasp.r" => block.r = parse(key, value)?,
            "loasp.c_hidden" => block.c_hidden = if value == "auto" { None } else { Some(parse(key, value)?) },
            "spline.p" => block.spline_p = parse(key, value)?,
            "spline.u" => block.spline_u = parse(key, value)?,
            "spline.domain" => {
                let v: Vec<f64> = parse_list(key, value)?;
                ensure!(v.len() == 2, Error::Config(format!("spline.domain needs `lo,hi`, got `{value}`")));
                block.spline_domain = (v[0], v[1]);
            }
            "dsconv.k" => block.k = parse(key, value)?,
            "dsconv.merge" => ensure!(
                value == "mean",
                Error::Config(format!("dsconv.merge supports only `mean`, got `{value}`"))
            ),
            "viz.block" => self.viz.block = parse(key, value)?,
            "viz.sigma" => {
                self.viz.sigma = parse(key, value)?;
                ensure!(self.viz.sigma > 0.0, Error::Config("viz.sigma must be positive".into()));
            }
            "viz.image" => self.viz.image = parse(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            _ => {
                return Err(Error::Config(format!(
                    "unknown key `{key}`; valid keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn apply(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        self.set(k.trim(), v)
    }

    /// Applies every `key = value` line of `text`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.apply(line)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", origin.display(), n + 1)))?;
        }
        Ok(())
    }

    /// Defaults, then the optional config file, then overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut s = Settings::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            s.apply_text(&text, path)?;
        }
        for o in overrides {
            s.apply(o)?;
        }
        Ok(s)
    }

    /// Serializes the run-relevant keys so a run directory can be reloaded.
    pub fn to_text(&self) -> String {
        let r = &self.run;
        let b = &r.model.block;
        let (prior, fusion) = match r.model.cell {
            None => ("none".to_string(), "loap".to_string()),
            Some((p, f)) => (p.to_string(), f.to_string()),
        };
        let lines = [
            ("mode", r.mode.to_string()),
            ("domains", join(&r.domain_ids())),
            ("held_out", join(&r.pivots)),
            ("seeds", join(&r.seeds)),
            ("epochs", r.epochs.to_string()),
            ("batch_size", r.batch_size.to_string()),
            ("lr", r.optim.lr.to_string()),
            ("weight_decay", r.optim.weight_decay.to_string()),
            ("beta1", r.optim.beta1.to_string()),
            ("beta2", r.optim.beta2.to_string()),
            ("eps", r.optim.eps.to_string()),
            ("lr_period", r.lr_period.to_string()),
            ("low_rank", r.low_rank.to_string()),
            ("n_train", r.n_train.to_string()),
            ("n_test", r.n_test.to_string()),
            ("data_seed", r.data_seed.to_string()),
            ("augment", r.augment.to_string()),
            ("image_size", r.model.image_size.to_string()),
            ("widths", join(&r.model.widths)),
            ("blocks_per_stage", r.model.blocks_per_stage.to_string()),
            ("ablation.prior", prior),
            ("ablation.fusion", fusion),
            ("loasp.r", b.r.to_string()),
            ("loasp.c_hidden", b.c_hidden.map_or("auto".into(), |c| c.to_string())),
            ("spline.p", b.spline_p.to_string()),
            ("spline.u", b.spline_u.to_string()),
            ("spline.domain", format!("{},{}", b.spline_domain.0, b.spline_domain.1)),
            ("dsconv.k", b.k.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// The reduced scale used by the acceptance experiment.
pub fn desk_scale() -> RunConfig {
    let mut run = RunConfig {
        mode: Protocol::Dg,
        epochs: 10,
        lr_period: 2,
        n_train: 200,
        n_test: 100,
        ..RunConfig::default()
    };
    run.model.image_size = 32;
    run.model.widths = vec![8, 16, 32, 64];
    run
}
