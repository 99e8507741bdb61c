"""Multitime quantum processes of finite closed systems and their equilibration."""
from .channels import (
    ChoiMatrix,
    KrausMap,
    apply_choi,
    dephasing_channel,
    eigenpair_projection,
    kraus_to_choi,
    link_product,
    povm_norm,
    unitary_channel,
)
from .errors import BudgetExceeded, LegMismatchError, ValidationError
from .process import (
    InstrumentSet,
    ProcessTensor,
    Tester,
    build_equilibrium,
    build_process,
    build_tester,
    d_eff_min,
    effective_dimension,
    expectation,
    intermediate_state,
    sequential_expectation_oracle,
)
from .spectral import GapCensus, Hamiltonian, Spectrum, diagonalize, gap_census
from .timeavg import (
    GTensors,
    TimeWindows,
    analytic_second_moment,
    build_g_tensors,
    g_factor,
    g_norm,
    phase_average,
    quadrature_second_moment,
    s_factor,
)

__all__ = [
    "BudgetExceeded",
    "ChoiMatrix",
    "GTensors",
    "GapCensus",
    "Hamiltonian",
    "InstrumentSet",
    "KrausMap",
    "LegMismatchError",
    "ProcessTensor",
    "Spectrum",
    "Tester",
    "TimeWindows",
    "ValidationError",
    "analytic_second_moment",
    "apply_choi",
    "build_equilibrium",
    "build_g_tensors",
    "build_process",
    "build_tester",
    "d_eff_min",
    "dephasing_channel",
    "diagonalize",
    "effective_dimension",
    "eigenpair_projection",
    "expectation",
    "g_factor",
    "g_norm",
    "gap_census",
    "intermediate_state",
    "kraus_to_choi",
    "link_product",
    "phase_average",
    "povm_norm",
    "quadrature_second_moment",
    "s_factor",
    "sequential_expectation_oracle",
    "unitary_channel",
]
