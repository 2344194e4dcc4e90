use std::fmt::Write as _;

use serde::Serialize;

use crate::backbone::{self, BackboneConfig};
use crate::numcore::{ParamGroup, ParamSpec};
use crate::spkback::{self, MhfaConfig};

use super::config::PetlConfig;
use super::instrument;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupCount {
    pub name: String,
    pub count: usize,
    pub trainable: bool,
}

/// Exact parameter accounting for one backbone/PETL/back-end combination.
/// The classification head is not included: its size depends on the
/// number of training speakers and it is discarded after training.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamReport {
    pub petl: String,
    pub groups: Vec<GroupCount>,
    pub trainable_petl: usize,
    pub trainable_backend: usize,
    pub trainable_backbone: usize,
    pub frozen_backbone: usize,
    pub total: usize,
    pub trainable_total: usize,
    /// `trainable_total / total`.
    pub ratio: f64,
}

/// Rounds a count to the nearest 0.1 M.
pub fn millions(n: usize) -> f64 {
    (n as f64 / 1e5).round() / 10.0
}

impl ParamReport {
    /// Builds the report from groups, classifying each by its name prefix.
    pub fn from_groups<'a>(label: String, groups: impl IntoIterator<Item = (&'a str, usize, bool)>) -> Self {
        let mut r = ParamReport {
            petl: label,
            groups: Vec::new(),
            trainable_petl: 0,
            trainable_backend: 0,
            trainable_backbone: 0,
            frozen_backbone: 0,
            total: 0,
            trainable_total: 0,
            ratio: 0.0,
        };
        for (name, count, trainable) in groups {
            if name.starts_with("head.") {
                continue;
            }
            r.total += count;
            if trainable {
                r.trainable_total += count;
            }
            if name.starts_with("backbone.") {
                if trainable {
                    r.trainable_backbone += count;
                } else {
                    r.frozen_backbone += count;
                }
            } else if name.starts_with("petl.") {
                r.trainable_petl += count;
            } else {
                r.trainable_backend += count;
            }
            r.groups.push(GroupCount {
                name: name.to_string(),
                count,
                trainable,
            });
        }
        r.ratio = if r.total == 0 { 0.0 } else { r.trainable_total as f64 / r.total as f64 };
        r
    }

    /// Census of actually materialized groups.
    pub fn from_params(label: String, groups: &[ParamGroup]) -> Self {
        Self::from_groups(label, groups.iter().map(|g| (g.name.as_str(), g.count(), g.trainable)))
    }

    pub fn backbone_total(&self) -> usize {
        self.trainable_backbone + self.frozen_backbone
    }

    pub fn petl_millions(&self) -> f64 {
        millions(self.trainable_petl)
    }

    pub fn backend_millions(&self) -> f64 {
        millions(self.trainable_backend)
    }

    /// One line per category, then a `PETL x.xM, backend y.yM` summary.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let rows = [
            ("petl (trainable)", self.trainable_petl),
            ("backend (trainable)", self.trainable_backend),
            ("backbone (trainable)", self.trainable_backbone),
            ("backbone (frozen)", self.frozen_backbone),
            ("total", self.total),
            ("trainable", self.trainable_total),
        ];
        let _ = writeln!(s, "{:<22} {:>12} {:>8}", self.petl, "params", "M");
        for (name, n) in rows {
            let _ = writeln!(s, "{name:<22} {n:>12} {:>8.1}", millions(n));
        }
        let _ = writeln!(s, "{:<22} {:>12.4}", "trainable ratio", self.ratio);
        let _ = writeln!(
            s,
            "PETL {:.1}M, backend {:.1}M",
            self.petl_millions(),
            self.backend_millions()
        );
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v["petl_m"] = self.petl_millions().into();
        v["backend_m"] = self.backend_millions().into();
        v["total_m"] = millions(self.total).into();
        v
    }
}

/// Full layout of an instrumented model plus back-end, with trainable flags
/// under the freeze policy. Nothing is allocated.
pub fn specs(backbone_cfg: &BackboneConfig, petl_cfg: &PetlConfig, mhfa: &MhfaConfig) -> Vec<(ParamSpec, bool)> {
    let backbone_trainable = !petl_cfg.mode.freezes_backbone();
    let mut out: Vec<(ParamSpec, bool)> = backbone::layout(backbone_cfg)
        .into_iter()
        .map(|s| (s, backbone_trainable))
        .collect();
    out.extend(instrument::layout(backbone_cfg, petl_cfg).into_iter().map(|s| (s, true)));
    out.extend(spkback::layout(mhfa, backbone_cfg).into_iter().map(|s| (s, true)));
    out
}

/// Counts with the back-end sized for `backbone_cfg` by [`MhfaConfig::for_backbone`].
pub fn count_params(backbone_cfg: &BackboneConfig, petl_cfg: &PetlConfig) -> ParamReport {
    count_params_with(backbone_cfg, petl_cfg, &MhfaConfig::for_backbone(backbone_cfg))
}

pub fn count_params_with(backbone_cfg: &BackboneConfig, petl_cfg: &PetlConfig, mhfa: &MhfaConfig) -> ParamReport {
    let specs = specs(backbone_cfg, petl_cfg, mhfa);
    ParamReport::from_groups(
        petl_cfg.label(),
        specs.iter().map(|(s, t)| (s.name.as_str(), s.count(), *t)),
    )
}
