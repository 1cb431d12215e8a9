"""Digital-predistortion lab: passband chain oracle, closed-form equivalent, LS compensators."""

from .chain import DemodConfig, VolterraModel, VolterraTerm, chain_S, cubic_model, identity_model, ideal_compensate
from .closed_form import closed_form_S, consolidate_LV
from .compensator import compensate, enumerate_plain, enumerate_structured, fit_S_hat, prune
from .experiments import ExperimentConfig, qam_source, run_benchmark, verify_theorem
from .frames import ChainParams, CtFrame, DtFrame
from .metrics import evm

__version__ = "0.1.0"

__all__ = [
    "ChainParams",
    "CtFrame",
    "DtFrame",
    "DemodConfig",
    "VolterraModel",
    "VolterraTerm",
    "chain_S",
    "cubic_model",
    "identity_model",
    "ideal_compensate",
    "closed_form_S",
    "consolidate_LV",
    "compensate",
    "enumerate_plain",
    "enumerate_structured",
    "fit_S_hat",
    "prune",
    "ExperimentConfig",
    "qam_source",
    "run_benchmark",
    "verify_theorem",
    "evm",
]
