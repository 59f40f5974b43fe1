use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Tree,
    Forest,
    Mlp,
    Gcn,
    Sage,
    Gat,
    Transformer,
}

impl Architecture {
    pub const ALL: [Architecture; 7] = [
        Architecture::Tree,
        Architecture::Forest,
        Architecture::Mlp,
        Architecture::Gcn,
        Architecture::Sage,
        Architecture::Gat,
        Architecture::Transformer,
    ];

    pub fn is_gnn(self) -> bool {
        matches!(self, Architecture::Gcn | Architecture::Sage | Architecture::Gat | Architecture::Transformer)
    }

    pub fn is_neural(self) -> bool {
        self.is_gnn() || self == Architecture::Mlp
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Tree => "tree",
            Architecture::Forest => "forest",
            Architecture::Mlp => "mlp",
            Architecture::Gcn => "gcn",
            Architecture::Sage => "sage",
            Architecture::Gat => "gat",
            Architecture::Transformer => "transformer",
        }
    }

    /// Row label used in result tables.
    pub fn table_label(self) -> &'static str {
        match self {
            Architecture::Tree => "Decision tree",
            Architecture::Forest => "Random forest",
            Architecture::Mlp => "Fully connected neural network",
            Architecture::Gcn => "Graph convolutional network",
            Architecture::Sage => "GraphSAGE",
            Architecture::Gat => "Graph attention network",
            Architecture::Transformer => "Graph transformer",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s.trim().to_lowercase())
            .ok_or_else(|| Error::config(format!("unknown architecture '{s}'")))
    }
}

/// Hyperparameters of one classifier. Fields that do not apply to an
/// architecture are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    /// Width of hidden layers.
    pub hidden: usize,
    pub gnn_layers: usize,
    /// Fully connected layers after the GNN stack (all layers for the MLP).
    pub standard_layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub attention_dropout: f64,
    /// LeakyReLU slope of attention scoring.
    pub negative_slope: f64,
    /// Edge-length threshold of the edge feature.
    pub xi: f64,
    pub residual: bool,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Subgraphs per batch (rows per batch for the MLP).
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Per-layer neighbour fan-outs used on distance-based training batches.
    pub fanouts: Option<Vec<usize>>,
    pub max_depth: usize,
    pub n_trees: usize,
    /// Candidate features per split; `None` considers all.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl ModelSpec {
    /// Hyperparameters from the reference configuration of each classifier.
    pub fn reference(architecture: Architecture) -> ModelSpec {
        let base = ModelSpec {
            architecture,
            hidden: 512,
            gnn_layers: 0,
            standard_layers: 2,
            heads: 1,
            dropout: 0.25,
            attention_dropout: 0.0,
            negative_slope: 0.2,
            xi: 50.0,
            residual: false,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            batch_size: 256,
            max_epochs: 200,
            patience: 5,
            fanouts: None,
            max_depth: 0,
            n_trees: 0,
            max_features: None,
            bootstrap: false,
        };
        match architecture {
            Architecture::Tree => ModelSpec { max_depth: 19, n_trees: 1, ..base },
            Architecture::Forest => {
                ModelSpec { max_depth: 30, n_trees: 30, max_features: Some(9), bootstrap: true, ..base }
            }
            Architecture::Mlp => ModelSpec {
                hidden: 1024,
                standard_layers: 3,
                dropout: 0.35,
                weight_decay: 1e-5,
                batch_size: 1024,
                ..base
            },
            Architecture::Gcn => ModelSpec { lr: 5e-4, gnn_layers: 2, xi: 500.0, ..base },
            Architecture::Sage => ModelSpec { hidden: 1024, gnn_layers: 3, ..base },
            Architecture::Gat => ModelSpec { gnn_layers: 3, heads: 8, ..base },
            Architecture::Transformer => ModelSpec {
                lr: 5e-4,
                gnn_layers: 4,
                heads: 8,
                dropout: 0.35,
                fanouts: Some(vec![3, 3, 2, 2]),
                ..base
            },
        }
    }

    /// Reduced profile for single-machine benchmarks: narrower layers,
    /// fewer heads, smaller batches with a larger learning rate and at most
    /// 30 epochs. Layer counts, dropout, edge thresholds and tree settings
    /// are unchanged.
    pub fn desk(architecture: Architecture) -> ModelSpec {
        let base = ModelSpec::reference(architecture);
        match architecture {
            Architecture::Tree | Architecture::Forest => base,
            Architecture::Mlp => ModelSpec { hidden: 64, batch_size: 256, lr: 1e-3, max_epochs: 30, ..base },
            _ => ModelSpec {
                hidden: 32,
                heads: base.heads.min(4),
                batch_size: 16,
                lr: base.lr * 4.0,
                max_epochs: 30,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        let a = self.architecture;
        if a.is_neural() {
            if self.hidden == 0 || self.standard_layers == 0 || self.batch_size == 0 || self.max_epochs == 0 {
                return bad("hidden, standard_layers, batch_size and max_epochs must be positive".into());
            }
            if a.is_gnn() && self.gnn_layers == 0 {
                return bad("GNN architectures need at least one GNN layer".into());
            }
            if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.attention_dropout) {
                return bad("dropout rates must be in [0, 1)".into());
            }
            if !(self.lr > 0.0 && self.lr.is_finite()) || self.weight_decay < 0.0 {
                return bad("learning rate must be positive and weight decay non-negative".into());
            }
            if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
                return bad("Adam betas must be in [0, 1)".into());
            }
            if matches!(a, Architecture::Gat | Architecture::Transformer) {
                if self.heads == 0 || self.hidden % self.heads != 0 {
                    return bad(format!("hidden size {} not divisible by {} heads", self.hidden, self.heads));
                }
                if self.residual {
                    return bad("residual connections are not supported".into());
                }
            }
            if matches!(a, Architecture::Gcn | Architecture::Gat | Architecture::Transformer)
                && !(self.xi > 0.0 && self.xi.is_finite())
            {
                return bad(format!("xi must be positive, got {}", self.xi));
            }
            if let Some(f) = &self.fanouts {
                if f.len() != self.gnn_layers {
                    return bad(format!(
                        "fanouts has {} entries but the model has {} GNN layers",
                        f.len(),
                        self.gnn_layers
                    ));
                }
                if f.contains(&0) {
                    return bad("fanouts must be positive".into());
                }
            }
        } else {
            if self.max_depth == 0 || self.n_trees == 0 {
                return bad("trees need positive max_depth and n_trees".into());
            }
            if self.max_features == Some(0) {
                return bad("max_features must be positive".into());
            }
        }
        Ok(())
    }
}
