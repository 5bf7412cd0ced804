"""Contact-network inference for epsilon-SIS epidemics via greedy tensor-train cross interpolation."""

from .epidemic import (
    AdjacencyVector,
    EpidemicParams,
    NetworkState,
    RateMatrix,
    Trajectory,
    TransitionMatrix,
    build_generator,
    chain_network,
    network_error,
    pack_adjacency,
    read_network,
    read_trajectory,
    ssa_simulate,
    step_probability,
    transition_columns,
    transition_matrix,
    unpack_adjacency,
    write_network,
    write_trajectory,
)
from .likelihood import (
    EvalCache,
    TemperConfig,
    TemperOverflowError,
    TemperedObjective,
    cache_argmax,
    evaluate_cached,
    log_likelihood,
    tempered_objective,
)
from .cross import (
    CrossConfig,
    CrossInterpolant,
    CrossResult,
    FunctionCache,
    TensorTrain,
    cross_optimize,
    load_tt_cores,
    matrix_cross_step,
    save_tt_cores,
    sweep,
    tensor_argmax,
)
from .driver import (
    CapacityError,
    ExperimentConfig,
    RunResult,
    brute_force_mle,
    run_experiment,
    run_inference,
    score_init,
    summarize_runs,
)

__version__ = "0.1.0"
