"""Regression trees for cumulative incidence functions under right censoring."""
from .censoring import (CensoringModel, PositivityError, UnitCensoring, choose_tau, fit_km,
                        ipcw_weight, ipcw_weights, martingale_integral, survival_at)
from .cif_models import (PRESETS, AalenJohansenModel, CifModel, FineGrayModel, FineGrayParams,
                         fg_true_cif, fit_aalen_johansen, y_m)
from .data import DataError, Dataset, Observation, TimeGrid, load_csv, save_csv, split_folds
from .losses import (LossKind, LossStats, NodeEstimate, node_estimate, node_loss,
                     precompute_stats, split_gain)
from .tree import (CountMode, FitConfig, PrunePath, SelectRule, TreeNode, cross_validate,
                   fit_tree, format_tree, grow, predict, prune_path, select)

__version__ = "0.1.0"
