"""Worst-case rare-event probabilities over a 2-Wasserstein ball.

The package estimates sup P(X in E) over distributions within a given
2-Wasserstein distance of a standard Gaussian nominal, for convex target
sets E, via a distributionally robust importance sampler plus crude Monte
Carlo and exponential-twisting benchmarks, with quadrature oracles in low
dimension.
"""

__version__ = "0.1.0"

from .errors import (
    BracketingError,
    ConfigError,
    DegenerateSetError,
    DrisError,
    ProjectionError,
)
from .experiments import (
    CSV_HEADER,
    ExperimentConfig,
    ExperimentReport,
    ReportRow,
    build_target,
    csv_lines,
    emit_report,
    format_table,
    load_config,
    load_report,
    oracle_report,
    run_experiment,
    worker_count,
)
from .finance import (
    Greeks,
    OptionPosition,
    PortfolioSpec,
    aggregate_greeks,
    benchmark_portfolio,
    bs_greeks,
    build_loss_set,
)
from .geometry import (
    CanonicalFrame,
    ConvexTarget,
    Halfspace,
    Polyhedron,
    QuadraticSuperlevel,
    canonical_frame,
    distance,
    distance_points,
    inflate_membership,
    min_norm_point,
    project,
    with_rarity,
)
from .estimator import (
    DrisResult,
    MethodKind,
    RootBracket,
    empirical_h,
    empirical_p,
    estimate_asymptotic_variance,
    find_root,
    run_crude_mc,
    run_dris,
    run_exp_twist,
)
from .oracle import (
    BoundsCheck,
    Quadrature2D,
    QuadratureError,
    check_bounds,
    phibar,
    phibar_inv,
    quad_2d,
    quad_h_1d,
    quad_p_1d,
    solve_u_1d,
    solve_u_2d,
)
from .sampler import (
    KernelValues,
    RngStream,
    SampleBatch,
    draw_batch,
    draw_gaussian_batch,
    eval_kernels,
    likelihood,
    stream_id,
    transform,
)
