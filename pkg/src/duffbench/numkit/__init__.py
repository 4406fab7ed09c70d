"""Shared numeric substrate: autodiff tape, SPD linear algebra, seeded
random streams and quasi-random sampling."""

from .tape import (
    Tape,
    Node,
    TapeError,
    NumericError,
    grad,
    backward,
    add,
    sub,
    mul,
    div,
    neg,
    powc,
    exp,
    log,
    sqrt,
    tanh,
    sin,
    cos,
    sigmoid,
    softplus,
    matmul,
    outer,
    transpose,
    reshape,
    vsum,
    vmean,
    take,
    concat,
    stack_scalars,
)
from .linalg import (
    CholeskyFactor,
    FactorizationError,
    cholesky,
    cholesky_jittered,
    cholesky_solve,
    solve_lower,
    solve_upper,
    symmetrize,
    spd_solve,
    spd_logdet,
)
from .rng import RngStream
from .sobol import sobol_sequence, sobol_sample, sobol_indices

__all__ = [
    "Tape", "Node", "TapeError", "NumericError", "grad", "backward",
    "add", "sub", "mul", "div", "neg", "powc", "exp", "log", "sqrt",
    "tanh", "sin", "cos", "sigmoid", "softplus", "matmul", "outer",
    "transpose", "reshape", "vsum", "vmean", "take", "concat",
    "stack_scalars",
    "CholeskyFactor", "FactorizationError", "cholesky",
    "cholesky_jittered", "cholesky_solve", "solve_lower", "solve_upper",
    "symmetrize", "spd_solve", "spd_logdet",
    "RngStream", "sobol_sequence", "sobol_sample", "sobol_indices",
]
