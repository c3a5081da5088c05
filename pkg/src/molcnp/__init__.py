"""Conditional neural processes for few-shot regression on molecular property functions."""

__version__ = "0.1.0"

from molcnp.chem import Fingerprint, MolGraph, ecfp_fingerprint, parse_smiles, smiles_fingerprint, tanimoto
from molcnp.cnp import CnpConfig, CnpModel, TrainConfig, init_cnp, predict, train
from molcnp.data import TaskTable, load_task_table, make_splits, synthetic_task_family

__all__ = [
    "CnpConfig",
    "CnpModel",
    "Fingerprint",
    "MolGraph",
    "TaskTable",
    "TrainConfig",
    "ecfp_fingerprint",
    "init_cnp",
    "load_task_table",
    "make_splits",
    "parse_smiles",
    "predict",
    "smiles_fingerprint",
    "synthetic_task_family",
    "tanimoto",
    "train",
]
