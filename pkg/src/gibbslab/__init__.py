"""Mean-field Potts-type models: equilibria, Glauber dynamics and contraction checks."""

from .core import (
    CallableInteraction,
    Configuration,
    Interaction,
    LatticeDistribution,
    LatticePoint,
    ModelSpec,
    PowerInteraction,
    SimplexPoint,
    empirical_measure,
    free_energy,
    g_function,
    g_jacobian,
    gibbs_weights,
    hamiltonian,
    lattice_states,
    log_mgf,
    rate_function,
    relative_entropy,
)
from .coupling import (
    CouplingResult,
    CouplingTrial,
    expected_onestep_distance,
    greedy_coupling_step,
    greedy_joint,
    kappa,
    run_coupling,
)
from .equilibrium import (
    EquilibriumSolution,
    find_beta_c,
    find_beta_s,
    find_equilibria,
    local_ratio,
    local_threshold,
    solve_mean_field,
)
from .glauber import (
    LumpedKernel,
    MixingResult,
    RngStream,
    Trajectory,
    build_lumped_kernel,
    exact_mixing_time,
    glauber_step,
    occupation_frequencies,
    simulate,
    update_distribution,
    update_distribution_expansion,
)
from .path_coupling import (
    ConditionReport,
    aggregate_variation_closed_form,
    aggregate_variation_quadrature,
    build_monotone_path,
    check_condition_contraction,
    check_condition_local,
    check_condition_riemann,
)

__version__ = "0.1.0"
