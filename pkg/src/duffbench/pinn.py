"""Physics-informed training of the state network.

The total objective is λ_o·L_o + λ_p·L_p + λ_bc·L_bc. L_o is the mean
squared state residual over observed points (computed on the z-scored
outputs the network is trained in); L_p is the first-order equation
residual in physical units,

    r_u = u̇ − v,   r_v = v̇ − (f − c·v − k·u − k3·u³)/m,

with the time derivative obtained from tangent propagation through the
network and the chain-rule factor of the normalized input applied;
L_bc is the squared initial-state mismatch in physical units. Terms
with zero weight are skipped entirely, so a zero weight is bit-exact
equal to omitting the term.

Physical parameters are either known floats or trainable; a trainable
parameter is realized as ref·softplus(φ) with ref its initial guess,
keeping it positive while letting the optimizer move it O(1) per unit
of φ regardless of magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numkit as nk
from . import nets
from .duffing import (
    ForcingSpec,
    OscillatorParams,
    Trajectory,
    multisine_force,
    simulate,
    subsample,
)
from .metrics import percent_error, rmse

PARAM_ORDER = ("m", "c", "k", "k3")
# initial guesses for trainable parameters, used when no init is given
DEFAULT_TRAINABLE_INIT = {"c": 0.5, "k": 5.0, "k3": 30.0}

# shipped working-example network: sine activations to reach the ~30
# oscillation cycles in the 120 s record (see nets.MlpSpec)
WORKING_NET = nets.MlpSpec(widths=(1, 32, 32, 32, 2), activation="sin",
                           omega0=60.0)

_SOFTPLUS_ONE = float(np.log(np.e - 1.0))  # softplus(_SOFTPLUS_ONE) == 1


class ConfigError(Exception):
    """Mode/weight/parameter combination violates the application table."""


@dataclass(frozen=True)
class LossWeights:
    observation: float = 1.0
    physics: float = 1.0
    boundary: float = 1.0

    def __post_init__(self):
        if min(self.observation, self.physics, self.boundary) < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.observation == self.physics == self.boundary == 0:
            raise ConfigError("at least one loss weight must be nonzero")


@dataclass(frozen=True)
class BoundaryCondition:
    """Initial state (u(0), u̇(0)) imposed softly at t = 0."""

    state0: tuple = (0.0, 0.0)


@dataclass(frozen=True)
class PhysParam:
    value: float
    trainable: bool = False

    @classmethod
    def known(cls, value):
        return cls(float(value), False)

    @classmethod
    def trainable_init(cls, value):
        if value <= 0:
            raise ConfigError("trainable parameters start positive")
        return cls(float(value), True)


def default_params(trainable=(), values=None):
    """Parameter table: known true values except the trainable subset."""
    base = {"m": 10.0, "c": 1.0, "k": 15.0, "k3": 100.0}
    base.update(values or {})
    table = {}
    for name in PARAM_ORDER:
        if name in trainable:
            init = DEFAULT_TRAINABLE_INIT.get(name, base[name])
            table[name] = PhysParam.trainable_init(init)
        else:
            table[name] = PhysParam.known(base[name])
    return table


MODES = ("data-only", "equation-discovery", "informed", "forward")


@dataclass
class PinnConfig:
    mode: str
    weights: LossWeights = field(default_factory=LossWeights)
    params: dict = field(default_factory=default_params)
    net: nets.MlpSpec = WORKING_NET
    train: nets.TrainConfig = field(default_factory=nets.TrainConfig)
    bc: BoundaryCondition = None
    seed: int = 1234

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode '{self.mode}'")
        trainables = [n for n, p in self.params.items() if p.trainable]
        if "m" in trainables:
            raise ConfigError("mass is treated as known")
        if self.mode == "forward":
            if self.weights.observation != 0:
                raise ConfigError("forward mode uses no observations")
            if trainables:
                raise ConfigError("forward mode requires known parameters")
            if self.bc is None:
                raise ConfigError("forward mode is ill-posed without an "
                                  "initial condition")
        if self.mode == "equation-discovery" and not trainables:
            raise ConfigError("equation discovery needs >= 1 trainable "
                              "parameter")
        if self.mode in ("informed", "data-only") and trainables:
            raise ConfigError(f"mode '{self.mode}' expects known parameters")
        if self.mode == "data-only" and (self.weights.physics != 0
                                         or self.weights.boundary != 0):
            raise ConfigError("data-only mode uses the observation loss only")

    @property
    def trainable_names(self):
        return [n for n in PARAM_ORDER if self.params[n].trainable]


class PinnProblem:
    """One training problem: domains, data, forcing, parameter table."""

    def __init__(self, config: PinnConfig, t_col, f_col, t_obs=None,
                 z_obs=None, norm: nets.Normalization = None):
        self.config = config
        self.t_col = np.asarray(t_col, dtype=float)
        self.f_col = np.asarray(f_col, dtype=float)
        if config.weights.observation > 0:
            if t_obs is None or z_obs is None or len(t_obs) == 0:
                raise ConfigError("observation loss requires observed data")
            self.t_obs = np.asarray(t_obs, dtype=float)
            self.z_obs = np.asarray(z_obs, dtype=float)
        else:
            self.t_obs = None
            self.z_obs = None
        if norm is None:
            norm = nets.Normalization.from_data(self.t_col, self.z_obs)
        self.norm = norm

    # -- trainable vector ---------------------------------------------------

    def init_arrays(self, stream: nk.RngStream):
        arrays = nets.pairs_to_arrays(nets.init_params(self.config.net, stream))
        phi0 = np.full(len(self.config.trainable_names), _SOFTPLUS_ONE)
        arrays.append(phi0)
        return arrays

    def _split(self, leaves):
        pairs = nets.arrays_to_pairs(leaves[:-1])
        phi = leaves[-1]
        return pairs, phi

    def _phys_values(self, phi):
        """Parameter table mixing known floats and trainable nodes."""
        values = {}
        i = 0
        for name in PARAM_ORDER:
            p = self.config.params[name]
            if p.trainable:
                values[name] = p.value * nk.softplus(phi[np.array([i])])
                i += 1
            else:
                values[name] = p.value
        return values

    def physical_estimates(self, arrays):
        phi = arrays[-1]
        values = {}
        i = 0
        for name in PARAM_ORDER:
            p = self.config.params[name]
            if p.trainable:
                values[name] = float(p.value * np.logaddexp(0.0, phi[i]))
                i += 1
            else:
                values[name] = p.value
        return values

    # -- losses -------------------------------------------------------------

    def observation_term(self, tape, pairs):
        tau = self.norm.t_in(self.t_obs).reshape(-1, 1)
        z_hat = nets.mlp_apply(self.config.net, pairs, tape.constant(tau))
        target = (self.z_obs - self.norm.z_mean) / self.norm.z_std
        return nets.observation_loss(z_hat, target)

    def physics_term(self, tape, pairs, phys):
        norm = self.norm
        tau = norm.t_in(self.t_col).reshape(-1, 1)
        z_hat, dz_hat = nets.mlp_apply_tangent(self.config.net, pairs,
                                               tape.constant(tau))
        su, sv = norm.z_std[0], norm.z_std[1]
        mu_u, mu_v = norm.z_mean[0], norm.z_mean[1]
        u = z_hat[(slice(None), 0)] * su + mu_u
        v = z_hat[(slice(None), 1)] * sv + mu_v
        du = dz_hat[(slice(None), 0)] * (su / norm.t_half)
        dv = dz_hat[(slice(None), 1)] * (sv / norm.t_half)
        f = tape.constant(self.f_col)
        m, c, k, k3 = phys["m"], phys["c"], phys["k"], phys["k3"]
        r_u = du - v
        r_v = dv - (f - c * v - k * u - k3 * u * u * u) / m
        n = float(len(self.t_col))
        return (nk.vsum(r_u * r_u) + nk.vsum(r_v * r_v)) / n

    def boundary_term(self, tape, pairs):
        bc = self.config.bc
        t0 = self.t_col[0]
        tau0 = np.array([[self.norm.t_in(t0)]])
        z_hat = nets.mlp_apply(self.config.net, pairs, tape.constant(tau0))
        z0 = z_hat[(0,)] * self.norm.z_std + self.norm.z_mean
        r = z0 - np.asarray(bc.state0, dtype=float)
        return nk.vsum(r * r)

    def total_loss(self, tape, leaves):
        pairs, phi = self._split(leaves)
        w = self.config.weights
        loss = None

        def acc(term, weight):
            nonlocal loss
            term = term if weight == 1.0 else weight * term
            loss = term if loss is None else loss + term

        if w.observation != 0:
            acc(self.observation_term(tape, pairs), w.observation)
        if w.physics != 0:
            acc(self.physics_term(tape, pairs, self._phys_values(phi)),
                w.physics)
        if w.boundary != 0:
            if self.config.bc is None:
                raise ConfigError("boundary weight set but no boundary "
                                  "condition given")
            acc(self.boundary_term(tape, pairs), w.boundary)
        return loss

    # -- train / predict ----------------------------------------------------

    def fit(self):
        stream = nk.RngStream(self.config.seed).substream("pinn-init")
        arrays0 = self.init_arrays(stream)
        arrays, history = nets.fit_arrays(arrays0, self.total_loss,
                                          self.config.train)
        return arrays, history

    def predict(self, arrays, t):
        pairs = nets.arrays_to_pairs(arrays[:-1])
        tau = self.norm.t_in(np.asarray(t, dtype=float)).reshape(-1, 1)
        return self.norm.z_out(nets.mlp_predict(self.config.net, pairs, tau))


# -- the three working-example paradigms -------------------------------------


@dataclass
class DiscoveryResult:
    estimates: dict
    truth: dict
    errors_percent: dict
    problem: PinnProblem
    arrays: list
    history: list

    def prediction(self, t):
        return self.problem.predict(self.arrays, t)


def run_equation_discovery(traj: Trajectory, nonlinear=True, seed=1234,
                           truth: OscillatorParams = None,
                           net: nets.MlpSpec = None,
                           train: nets.TrainConfig = None,
                           n_obs=256) -> DiscoveryResult:
    """Sobol-subsampled joint state/parameter estimation.

    The physics domain equals the observation domain, the mass is
    known, and (c, k) or (c, k, k3) are trainable from the pinned
    initial guesses.
    """
    truth = truth or OscillatorParams()
    _, obs = subsample(traj, sobol_n=n_obs)
    trainable = ("c", "k", "k3") if nonlinear else ("c", "k")
    params = default_params(trainable=trainable, values={"m": truth.m})
    if not nonlinear:
        params["k3"] = PhysParam.known(0.0)
    config = PinnConfig(
        mode="equation-discovery",
        weights=LossWeights(1.0, 1.0, 0.0),
        params=params,
        net=net or WORKING_NET,
        train=train or nets.TrainConfig(),
        seed=seed,
    )
    z_obs = np.column_stack([obs.u, obs.v])
    problem = PinnProblem(config, t_col=obs.t, f_col=obs.f,
                          t_obs=obs.t, z_obs=z_obs)
    arrays, history = problem.fit()
    estimates = problem.physical_estimates(arrays)
    truth_map = {"m": truth.m, "c": truth.c, "k": truth.k, "k3": truth.k3}
    errors = {n: percent_error(estimates[n], truth_map[n])
              for n in config.trainable_names}
    return DiscoveryResult(estimates, truth_map, errors, problem, arrays,
                           history)


@dataclass
class EnhancedResult:
    informed_rmse: dict
    baseline_rmse: dict
    informed_pred: np.ndarray
    baseline_pred: np.ndarray
    problem: PinnProblem
    history: list


def run_enhanced_learning(traj: Trajectory, stride=16, seed=1234,
                          truth: OscillatorParams = None,
                          net: nets.MlpSpec = None,
                          train: nets.TrainConfig = None,
                          baseline_only=False) -> EnhancedResult:
    """Stride-subsampled observations, known physics, dense collocation.

    Trains the purely data-driven baseline and the physics-informed
    model on the same observations and reports dense-grid state RMSEs
    for both. `baseline_only` skips the informed model (the black-box
    benchmark row).
    """
    truth = truth or OscillatorParams()
    _, obs = subsample(traj, stride=stride)
    z_obs = np.column_stack([obs.u, obs.v])
    net = net or WORKING_NET
    train = train or nets.TrainConfig()
    norm = nets.Normalization.from_data(traj.t, z_obs)

    baseline_cfg = PinnConfig(
        mode="data-only",
        weights=LossWeights(1.0, 0.0, 0.0),
        params=default_params(),
        net=net, train=train, seed=seed,
    )
    baseline = PinnProblem(baseline_cfg, t_col=traj.t, f_col=traj.f,
                           t_obs=obs.t, z_obs=z_obs, norm=norm)
    base_arrays, base_history = baseline.fit()
    base_pred = baseline.predict(base_arrays, traj.t)
    base_rmse = {"u": rmse(base_pred[:, 0], traj.u),
                 "v": rmse(base_pred[:, 1], traj.v)}
    if baseline_only:
        return EnhancedResult(base_rmse, base_rmse, base_pred, base_pred,
                              baseline, base_history)

    params = default_params(values={"m": truth.m, "c": truth.c,
                                    "k": truth.k, "k3": truth.k3})
    informed_cfg = PinnConfig(
        mode="informed",
        weights=LossWeights(1.0, 1.0, 1.0),
        params=params,
        net=net, train=train,
        bc=BoundaryCondition((traj.u[0], traj.v[0])),
        seed=seed,
    )
    informed = PinnProblem(informed_cfg, t_col=traj.t, f_col=traj.f,
                           t_obs=obs.t, z_obs=z_obs, norm=norm)
    inf_arrays, history = informed.fit()
    inf_pred = informed.predict(inf_arrays, traj.t)

    return EnhancedResult(
        informed_rmse={"u": rmse(inf_pred[:, 0], traj.u),
                       "v": rmse(inf_pred[:, 1], traj.v)},
        baseline_rmse=base_rmse,
        informed_pred=inf_pred,
        baseline_pred=base_pred,
        problem=informed,
        history=history,
    )


@dataclass
class ForwardResult:
    rmse: dict
    pred: np.ndarray
    window_losses: list
    history: list


FORWARD_TRAIN = nets.TrainConfig(adam_iters=3000, adam_lr=2e-3,
                                 lbfgs_iters=2000)
FORWARD_BC_WEIGHT = 20.0


def run_forward_model(params: OscillatorParams = None,
                      forcing: ForcingSpec = None,
                      bc: BoundaryCondition = None, n=1024, rate=8.525,
                      seed=1234, net: nets.MlpSpec = None,
                      train: nets.TrainConfig = None,
                      reference: Trajectory = None,
                      windows=12, margin=6) -> ForwardResult:
    """No observations: solve the equation of motion from physics + IC.

    The record is solved in `windows` chained time windows: each window
    trains a fresh network against the physics residual with its
    initial state taken from the previous window's end, then hands its
    own end state to the next. A single global network cannot be
    optimized deeply enough over the whole lightly-damped record
    (residual error parks itself in the resonant mode and integrates to
    a large state error); ~10 s windows solve to ~1e-6 loss each and
    the handoff errors decay instead of compounding. Each window is
    trained on `margin` extra samples past its reporting range so the
    handoff state is read away from the fit's worst region, the domain
    edge.
    """
    params = params or OscillatorParams()
    forcing = forcing or ForcingSpec()
    bc = bc or BoundaryCondition((0.0, 0.0))
    reference = reference if reference is not None else simulate(
        params, forcing, n=n, rate=rate, z0=bc.state0)
    base_net = net or WORKING_NET
    train = train or FORWARD_TRAIN
    t_grid = reference.t
    f_grid = reference.f
    n_grid = len(t_grid)
    if not 1 <= windows <= n_grid // 8:
        raise ConfigError("window count out of range")
    table = default_params(values={"m": params.m, "c": params.c,
                                   "k": params.k, "k3": params.k3})
    edges = np.linspace(0, n_grid, windows + 1).astype(int)
    stream = nk.RngStream(seed).substream("pinn-init")
    state0 = (float(bc.state0[0]), float(bc.state0[1]))
    pred = np.empty((n_grid, 2))
    window_losses = []
    history = []
    max_freq = max(forcing.frequencies) if len(forcing.frequencies) else 1.0
    for w in range(windows):
        lo, hi = int(edges[w]), int(edges[w + 1])
        top = min(hi + margin, n_grid)
        sub_t = t_grid[lo:top]
        norm = nets.Normalization.from_data(sub_t, None)
        omega0 = max(1.3 * max_freq * 0.5 * (sub_t[-1] - sub_t[0]), 6.0)
        wnet = nets.MlpSpec(widths=base_net.widths,
                            activation=base_net.activation, omega0=omega0)
        config = PinnConfig(
            mode="forward",
            weights=LossWeights(0.0, 1.0, FORWARD_BC_WEIGHT),
            params=table, net=wnet, train=train,
            bc=BoundaryCondition(state0), seed=seed,
        )
        problem = PinnProblem(config, t_col=sub_t, f_col=f_grid[lo:top],
                              norm=norm)
        arrays, hist = nets.fit_arrays(problem.init_arrays(stream),
                                       problem.total_loss, train)
        pred[lo:hi] = problem.predict(arrays, t_grid[lo:hi])
        history.extend(hist)
        window_losses.append(hist[-1])
        if hi < n_grid:
            handoff = problem.predict(arrays, t_grid[hi:hi + 1])
            state0 = (float(handoff[0, 0]), float(handoff[0, 1]))
    return ForwardResult(
        rmse={"u": rmse(pred[:, 0], reference.u),
              "v": rmse(pred[:, 1], reference.v)},
        pred=pred, window_losses=window_losses, history=history,
    )
