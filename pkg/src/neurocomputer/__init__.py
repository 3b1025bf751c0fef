"""Dual-memory neural computer: architecture, training, and task domains."""

from .data_modules import DataModuleSet, PhaseSignals, oracle_modules
from .domains import (
    ManipulationDomain,
    SlidingPuzzleDomain,
    SokobanDomain,
    TargetTrace,
    TaskInstance,
    make_domain,
    oracle_trace,
    sample_task,
)
from .engine import (
    ComputerEngine,
    EngineConfig,
    GenomePolicy,
    ReferenceProgram,
    build_algorithmic_modules,
)
from .evolution import MAX_FITNESS, NesConfig, fitness_plan, fitness_search, train_run
from .memory import DualMemory, InterfaceVector
from .module_training import train_data_module

__all__ = [
    "ComputerEngine",
    "DataModuleSet",
    "DualMemory",
    "EngineConfig",
    "GenomePolicy",
    "InterfaceVector",
    "MAX_FITNESS",
    "ManipulationDomain",
    "NesConfig",
    "PhaseSignals",
    "ReferenceProgram",
    "SlidingPuzzleDomain",
    "SokobanDomain",
    "TargetTrace",
    "TaskInstance",
    "build_algorithmic_modules",
    "fitness_plan",
    "fitness_search",
    "make_domain",
    "oracle_modules",
    "oracle_trace",
    "sample_task",
    "train_data_module",
    "train_run",
]
