"""Benchmark toolkit for a Duffing-oscillator ground truth.

One simulator, many learners: Bayesian filters, sparse dictionary
regression, plain/physics-informed/physics-guided networks, Gaussian
processes with physics kernels, and neural ODE / Hamiltonian flows,
all runnable and comparable through a deterministic CLI harness.
"""

__version__ = "0.1.0"
