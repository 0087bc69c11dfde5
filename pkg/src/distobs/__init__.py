"""Distributed observers for discrete-time LTI plants in Jordan form."""
from .model import (AgentOutputs, BlockIndex, EigenBlock, JordanSpec, ModelError,
                    SensorNetwork, SystemModel, assemble_A, ensure_valid, laplacian, validate)
from .classify import (MiniblockClassification, check_assumption1, check_assumption2,
                       classify, first_obs_index)
from .canon import (AugmentedForm, DetectabilityForm, build_augmented_form,
                    build_detectability_form, verify_form)
from .solvability import (GainInterval, SelectionStack, SolvabilityReport, assemble_error_matrix,
                          build_report, feasible_gain, laplacian_submatrix, schur_radius,
                          spectrum_split_check, strategy1_spectrum, undirected_feasibility)
from .design import (ObserverBank, build_observers, closed_loop_error_matrix, pick_gains,
                     place_luenberger)
from .sim import InputSignal, SimulationTrace, convergence_metrics, simulate

__version__ = "0.1.0"

__all__ = [
    "AgentOutputs", "AugmentedForm", "BlockIndex", "DetectabilityForm", "EigenBlock",
    "GainInterval", "InputSignal", "JordanSpec", "MiniblockClassification", "ModelError",
    "ObserverBank", "SelectionStack", "SensorNetwork", "SimulationTrace", "SolvabilityReport",
    "SystemModel", "assemble_A", "assemble_error_matrix", "build_augmented_form",
    "build_detectability_form", "build_observers", "build_report", "check_assumption1",
    "check_assumption2", "classify", "closed_loop_error_matrix", "convergence_metrics",
    "ensure_valid", "feasible_gain", "first_obs_index", "laplacian", "laplacian_submatrix",
    "pick_gains", "place_luenberger", "schur_radius", "simulate", "spectrum_split_check",
    "strategy1_spectrum", "undirected_feasibility", "validate", "verify_form",
]
