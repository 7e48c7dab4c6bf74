"""Adaptive row-action and column-action solvers for consistent linear
systems, with convergence diagnostics."""
from .engine import (
    Direction,
    Mode,
    SolveConfig,
    SolveTrace,
    UnifiedView,
    column_action_step,
    row_action_step,
    solve,
    unified_step,
)
from .strategies import (
    make_cyclic,
    make_greedy,
    make_greedy_subset_random,
    make_grouped,
    make_iid,
    make_random_subset_greedy,
    parse_strategy,
)
from .system import (
    GeneratorSpec,
    LinearSystem,
    generate_system,
    load_system,
    project_onto_solution_set,
    residual,
    write_system,
)

__version__ = "0.1.0"
