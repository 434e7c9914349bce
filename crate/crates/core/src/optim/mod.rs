//! Muon with Polar Express for projection matrices, AdamW for everything
//! else, both on a warmup-stable-decay schedule.

pub mod adamw;
pub mod linalg;
pub mod muon;
pub mod polar;
pub mod schedule;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use adamw::{adamw_step, AdamConfig, AdamState};
pub use muon::{muon_step, muon_update, spectral_scale, MuonConfig, MuonState};
pub use polar::{coefficient_schedule, polar_express, polar_express_with, Quintic};
pub use schedule::{wsd_multiplier, LrSchedule};

use crate::error::{Error, Result};
use crate::model::checkpoint::{self, Dtype};
use crate::model::{ModelWeights, ParamKind, Weights};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Muon,
    Adam,
}

/// Parameter names split by optimizer, each list in canonical order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Groups {
    pub muon: Vec<String>,
    pub adam: Vec<String>,
}

pub fn group_of(name: &str, shape: &[usize]) -> Result<Group> {
    match ParamKind::of(name)? {
        ParamKind::Projection if shape.len() == 2 => Ok(Group::Muon),
        ParamKind::Projection => Err(Error::Routing(format!(
            "projection {name} has shape {shape:?}"
        ))),
        _ => Ok(Group::Adam),
    }
}

pub fn assign_groups<S: Scalar>(weights: &ModelWeights<S>) -> Result<Groups> {
    assign_shape_groups(&weights.map(|_, t| t.shape().to_vec()))
}

/// [`assign_groups`] from shapes alone.
pub fn assign_shape_groups(shapes: &Weights<Vec<usize>>) -> Result<Groups> {
    let mut g = Groups::default();
    for (name, shape) in shapes.named() {
        match group_of(&name, shape)? {
            Group::Muon => g.muon.push(name),
            Group::Adam => g.adam.push(name),
        }
    }
    Ok(g)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub muon: MuonConfig,
    pub adam: AdamConfig,
    pub muon_warmup: f64,
    pub adam_warmup: f64,
    pub decay_fraction: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            muon: MuonConfig::default(),
            adam: AdamConfig::default(),
            muon_warmup: 0.0,
            adam_warmup: 0.01,
            decay_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Slot {
    Muon(MuonState),
    Adam(AdamState),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub step: usize,
    pub muon_multiplier: f64,
    pub adam_multiplier: f64,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimConfig,
    names: Vec<String>,
    slots: Vec<Slot>,
    quintics: Vec<Quintic>,
    muon_schedule: LrSchedule,
    adam_schedule: LrSchedule,
    step: usize,
}

impl Optimizer {
    pub fn new<S: Scalar>(
        config: OptimConfig,
        weights: &ModelWeights<S>,
        total_steps: usize,
    ) -> Result<Self> {
        let mut names = Vec::new();
        let mut slots = Vec::new();
        for (name, t) in weights.named() {
            let slot = match group_of(&name, t.shape())? {
                Group::Muon => Slot::Muon(MuonState::new(t.shape())),
                Group::Adam => Slot::Adam(AdamState::new(t.shape())),
            };
            names.push(name);
            slots.push(slot);
        }
        Ok(Optimizer {
            quintics: config.muon.schedule()?,
            muon_schedule: LrSchedule::with_warmup_fraction(
                total_steps,
                config.muon_warmup,
                config.decay_fraction,
            )?,
            adam_schedule: LrSchedule::with_warmup_fraction(
                total_steps,
                config.adam_warmup,
                config.decay_fraction,
            )?,
            config,
            names,
            slots,
            step: 0,
        })
    }

    /// Updates applied so far.
    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.muon_schedule.total_steps
    }

    pub fn multipliers(&self, step: usize) -> Result<(f64, f64)> {
        Ok((
            self.muon_schedule.multiplier(step)?,
            self.adam_schedule.multiplier(step)?,
        ))
    }

    /// Apply one update. Update `k` (counting from 0) uses the schedule at `k`.
    pub fn step<S: Scalar>(
        &mut self,
        weights: &mut ModelWeights<S>,
        grads: &ModelWeights<S>,
    ) -> Result<StepInfo> {
        if self.step >= self.total_steps() {
            return Err(Error::State(format!(
                "schedule of {} steps is exhausted",
                self.total_steps()
            )));
        }
        let (mm, am) = self.multipliers(self.step)?;
        let params = weights.values_mut();
        let grads = grads.named();
        if params.len() != self.slots.len() || grads.len() != self.slots.len() {
            return Err(Error::State("weights do not match optimizer state".into()));
        }
        for ((p, (name, g)), slot) in params.into_iter().zip(grads).zip(&mut self.slots) {
            match slot {
                Slot::Muon(s) => {
                    muon_step(p, g, s, &self.config.muon, &self.quintics, mm)
                        .map_err(|e| Error::State(format!("{name}: {e}")))?;
                }
                Slot::Adam(s) => adamw_step(p, g, s, &self.config.adam, am)?,
            }
        }
        self.step += 1;
        Ok(StepInfo {
            step: self.step,
            muon_multiplier: mm,
            adam_multiplier: am,
        })
    }

    /// Optimizer buffers as named tensors.
    pub fn state_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, slot) in self.names.iter().zip(&self.slots) {
            match slot {
                Slot::Muon(s) => {
                    out.push((format!("muon.{name}.momentum"), &s.momentum));
                    if let Some(v) = &s.col_v {
                        out.push((format!("normuon.{name}.v"), v));
                    }
                }
                Slot::Adam(s) => {
                    out.push((format!("adam.{name}.m"), &s.m));
                    out.push((format!("adam.{name}.v"), &s.v));
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let adam_steps: Vec<u64> = self
            .slots
            .iter()
            .filter_map(|s| match s {
                Slot::Adam(a) => Some(a.step),
                Slot::Muon(_) => None,
            })
            .collect();
        let meta = serde_json::json!({
            "step": self.step,
            "total_steps": self.total_steps(),
            "adam_steps": adam_steps,
        });
        checkpoint::write_file(path, &self.state_tensors(), Dtype::F64, meta)
    }

    /// Restore buffers written by [`Optimizer::save`] into an optimizer built
    /// for the same weights and run length.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let (tensors, meta) = checkpoint::read_file::<f64>(path)?;
        let bad = |m: String| Error::Format(format!("{}: {m}", path.display()));
        let total = meta["total_steps"]
            .as_u64()
            .ok_or_else(|| bad("no total_steps".into()))?;
        if total as usize != self.total_steps() {
            return Err(bad(format!(
                "saved for {total} steps, this run has {}",
                self.total_steps()
            )));
        }
        let step = meta["step"].as_u64().ok_or_else(|| bad("no step".into()))? as usize;
        let adam_steps: Vec<u64> = serde_json::from_value(meta["adam_steps"].clone())
            .map_err(|e| bad(format!("adam_steps: {e}")))?;
        let mut map: std::collections::HashMap<String, Tensor> = tensors.into_iter().collect();
        let mut take = |key: String, shape: &[usize]| -> Result<Tensor> {
            let t = map
                .remove(&key)
                .ok_or_else(|| bad(format!("missing {key}")))?;
            if t.shape() != shape {
                return Err(bad(format!("{key} has shape {:?}", t.shape())));
            }
            Ok(t)
        };
        let mut adam_iter = adam_steps.into_iter();
        let mut slots = self.slots.clone();
        for (name, slot) in self.names.iter().zip(&mut slots) {
            match slot {
                Slot::Muon(s) => {
                    let shape = s.momentum.shape().to_vec();
                    s.momentum = take(format!("muon.{name}.momentum"), &shape)?;
                    s.col_v = if self.config.muon.normuon {
                        Some(take(format!("normuon.{name}.v"), &[shape[1]])?)
                    } else {
                        None
                    };
                }
                Slot::Adam(s) => {
                    let shape = s.m.shape().to_vec();
                    s.m = take(format!("adam.{name}.m"), &shape)?;
                    s.v = take(format!("adam.{name}.v"), &shape)?;
                    s.step = adam_iter
                        .next()
                        .ok_or_else(|| bad("adam_steps too short".into()))?;
                }
            }
        }
        // a NorMuon run restored before its first step has no column stats yet
        map.retain(|k, _| !k.starts_with("normuon."));
        if let Some(k) = map.keys().next() {
            return Err(bad(format!("unexpected tensor {k}")));
        }
        self.slots = slots;
        self.step = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn full_config_groups() {
        let cfg = ModelConfig::full();
        let w = Weights::shapes(&cfg);
        let g = assign_shape_groups(&w).unwrap();
        assert_eq!(g.muon.len(), 24 * 5);
        assert!(g.adam.iter().any(|n| n.ends_with("lambda1")));
        assert!(g.adam.contains(&"embed".to_string()));
        assert!(g.adam.contains(&"head".to_string()));
        let mut all: Vec<_> = g.muon.iter().chain(&g.adam).cloned().collect();
        all.sort();
        let mut names = w.names();
        names.sort();
        assert_eq!(all, names);
    }

    #[test]
    fn flat_projection_is_a_routing_error() {
        assert!(matches!(
            group_of("layers.0.attn.q", &[6]),
            Err(Error::Routing(_))
        ));
        assert!(matches!(
            group_of("layers.0.bogus", &[6, 6]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn state_round_trips_through_a_file() {
        let cfg = ModelConfig::toy(1, 16);
        let mut w = ModelWeights::<f64>::init(&cfg, 0).unwrap();
        let grads = w.map(|_, t| t.map(|x| x.sin()));
        let mut opt = Optimizer::new(OptimConfig::default(), &w, 10).unwrap();
        opt.step(&mut w, &grads).unwrap();
        opt.step(&mut w, &grads).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("optim.bin");
        opt.save(&path).unwrap();
        let mut back = Optimizer::new(OptimConfig::default(), &w, 10).unwrap();
        back.load(&path).unwrap();
        assert_eq!(back.step_count(), 2);
        assert_eq!(back.slots, opt.slots);
        let mut w2 = w.clone();
        opt.step(&mut w, &grads).unwrap();
        back.step(&mut w2, &grads).unwrap();
        assert_eq!(w, w2);

        let mut short = Optimizer::new(OptimConfig::default(), &w, 11).unwrap();
        assert!(short.load(&path).is_err());
    }

    #[test]
    fn exhausted_schedule_is_an_error() {
        let cfg = ModelConfig::toy(1, 16);
        let mut w = ModelWeights::<f64>::init(&cfg, 0).unwrap();
        let grads = w.map(|_, t| Tensor::zeros(t.shape()));
        let mut opt = Optimizer::new(OptimConfig::default(), &w, 1).unwrap();
        opt.step(&mut w, &grads).unwrap();
        assert!(opt.step(&mut w, &grads).is_err());
    }
}
