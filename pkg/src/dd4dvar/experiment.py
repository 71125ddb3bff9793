"""Experiment configuration, twin-experiment construction, and estimator
factories shared by the CLI and the test harness."""

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from ._validation import ConfigError
from .assimilation import DDFourDVar, GlobalFourDVar
from .covariance import BackgroundCovariance, ObservationCovariance
from .domain import build_domain, decompose
from .models import (build_advection_model, build_swe_model, physical_nodes,
                     run_background, sample_advection_trajectory,
                     sample_swe_trajectory, stack_state)
from .observations import (build_interpolation, synthesize_observations,
                           uniform_locations)

DEFAULT_CONFIG = {
    "domain": {"x_min": 0.0, "x_max": 1.0, "t_min": 0.0, "t_max": 1.5,
               "n_p": 640, "n": 9},
    "decomposition": {"n_sub": 4, "n_t": 4, "delta": 2},
    "model": {
        "kind": "swe",
        "gravity": 0.02,
        "mean_depth": 0.01,
        "speed": 0.1,
        "boundary_value": 0.0,
        "bump_amplitude": 1.0,
        "bump_center": 0.55,
        "bump_width": 0.08,
        "perturbation_amplitude": 0.15,
        "perturbation_center": 0.45,
        "perturbation_width": 0.10,
        "reference": "model",
    },
    "observations": {"n_obs": 64, "sigma_o2": 0.5, "noise_sigma": None,
                     "seed": 2027},
    "covariance": {"sigma_m2": 0.5, "correlation_dx": 1.0},
    "solver": {"alpha": 1.0, "beta": 1.0, "n_stop": 20, "r_bar": 10,
               "cg_tol": 1e-10, "cg_max_iter": 500, "outer_tol": 1e-6,
               "window": "full", "chain_slabs": False, "monotone_guard": True},
    "output": {"directory": "out"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    x_min: float
    x_max: float
    t_min: float
    t_max: float
    n_p: int
    n: int
    n_sub: int
    n_t: int
    delta: int
    kind: str
    gravity: float
    mean_depth: float
    speed: float
    boundary_value: float
    bump_amplitude: float
    bump_center: float
    bump_width: float
    perturbation_amplitude: float
    perturbation_center: float
    perturbation_width: float
    reference: str
    n_obs: int
    sigma_o2: float
    noise_sigma: float
    seed: int
    sigma_m2: float
    correlation_dx: float
    alpha: float
    beta: float
    n_stop: int
    r_bar: int
    cg_tol: float
    cg_max_iter: int
    outer_tol: float
    window: str
    chain_slabs: bool
    monotone_guard: bool
    directory: str

    def replace(self, **kwargs):
        return dataclasses.replace(self, **kwargs)


def _section(raw, name):
    block = raw.get(name)
    if not isinstance(block, dict):
        raise ConfigError(f"config section {name!r} is missing or not a mapping")
    return block


def _get(block, section, key, default=KeyError, cast=None):
    if key in block:
        value = block[key]
    elif default is KeyError:
        raise ConfigError(f"config key {section}.{key} is required")
    else:
        value = default
    if cast is not None and value is not None:
        try:
            value = cast(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config key {section}.{key}: {exc}") from exc
    return value


def config_from_dict(raw):
    """Validate a nested config mapping into an ExperimentConfig."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    dom = _section(raw, "domain")
    dec = _section(raw, "decomposition")
    mod = _section(raw, "model")
    obs = _section(raw, "observations")
    cov = _section(raw, "covariance")
    sol = _section(raw, "solver")
    out = raw.get("output", {})

    defaults = DEFAULT_CONFIG
    kind = _get(mod, "model", "kind", "swe", str)
    if kind not in ("swe", "advection"):
        raise ConfigError(f"model.kind must be 'swe' or 'advection', got {kind!r}")
    reference = _get(mod, "model", "reference", "model", str)
    if reference not in ("model", "exact"):
        raise ConfigError(f"model.reference must be 'model' or 'exact', got {reference!r}")
    window = _get(sol, "solver", "window", "full", str)
    if window not in ("slab", "cumulative", "full"):
        raise ConfigError(f"solver.window must be slab|cumulative|full, got {window!r}")
    sigma_o2 = _get(obs, "observations", "sigma_o2", 0.5, float)
    noise_sigma = _get(obs, "observations", "noise_sigma", None, float)
    if noise_sigma is None:
        noise_sigma = float(np.sqrt(sigma_o2))
    for key in ("bump_width", "perturbation_width"):
        if _get(mod, "model", key, 0.1, float) <= 0:
            raise ConfigError(f"model.{key} must be positive")

    cfg = ExperimentConfig(
        x_min=_get(dom, "domain", "x_min", 0.0, float),
        x_max=_get(dom, "domain", "x_max", 1.0, float),
        t_min=_get(dom, "domain", "t_min", 0.0, float),
        t_max=_get(dom, "domain", "t_max", 1.5, float),
        n_p=_get(dom, "domain", "n_p", cast=int),
        n=_get(dom, "domain", "n", cast=int),
        n_sub=_get(dec, "decomposition", "n_sub", cast=int),
        n_t=_get(dec, "decomposition", "n_t", cast=int),
        delta=_get(dec, "decomposition", "delta", cast=int),
        kind=kind,
        gravity=_get(mod, "model", "gravity", defaults["model"]["gravity"], float),
        mean_depth=_get(mod, "model", "mean_depth", defaults["model"]["mean_depth"], float),
        speed=_get(mod, "model", "speed", defaults["model"]["speed"], float),
        boundary_value=_get(mod, "model", "boundary_value", 0.0, float),
        bump_amplitude=_get(mod, "model", "bump_amplitude", 1.0, float),
        bump_center=_get(mod, "model", "bump_center", 0.55, float),
        bump_width=_get(mod, "model", "bump_width", 0.08, float),
        perturbation_amplitude=_get(mod, "model", "perturbation_amplitude", 0.15, float),
        perturbation_center=_get(mod, "model", "perturbation_center", 0.45, float),
        perturbation_width=_get(mod, "model", "perturbation_width", 0.10, float),
        reference=reference,
        n_obs=_get(obs, "observations", "n_obs", 64, int),
        sigma_o2=sigma_o2,
        noise_sigma=noise_sigma,
        seed=_get(obs, "observations", "seed", 2027, int),
        sigma_m2=_get(cov, "covariance", "sigma_m2", 0.5, float),
        correlation_dx=_get(cov, "covariance", "correlation_dx", 1.0, float),
        alpha=_get(sol, "solver", "alpha", 1.0, float),
        beta=_get(sol, "solver", "beta", 1.0, float),
        n_stop=_get(sol, "solver", "n_stop", 20, int),
        r_bar=_get(sol, "solver", "r_bar", 10, int),
        cg_tol=_get(sol, "solver", "cg_tol", 1e-10, float),
        cg_max_iter=_get(sol, "solver", "cg_max_iter", 500, int),
        outer_tol=_get(sol, "solver", "outer_tol", 1e-6, float),
        window=window,
        chain_slabs=bool(_get(sol, "solver", "chain_slabs", False)),
        monotone_guard=bool(_get(sol, "solver", "monotone_guard", True)),
        directory=str(out.get("directory", "out")),
    )
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def default_config(**overrides):
    cfg = config_from_dict(DEFAULT_CONFIG)
    return cfg.replace(**overrides) if overrides else cfg


def _bump(x, amplitude, center, width):
    x = np.asarray(x)
    return amplitude * np.exp(-((x - center) / width) ** 2 / 2.0)


@dataclass(eq=False)
class Experiment:
    """Concrete problem instance assembled from a configuration."""

    config: ExperimentConfig
    domain: object
    decomposition: object
    model: object
    background_covariance: object
    observation_covariance: object
    operator: object
    truth: np.ndarray
    observations: object
    truth_initial: np.ndarray
    background_initial: np.ndarray


def build_experiment(cfg):
    """Build every module object for a configuration, validating all
    preconditions before any solve starts.

    Twin protocol: the truth trajectory propagates a smooth bump; the
    background initial state adds a second bump (reference="model").  With
    reference="exact" the truth is the analytic solution sampled on the
    grid and the background starts from the same initial state, the
    zero-initial-error protocol of the consistency analysis.
    """
    try:
        domain = build_domain(cfg.x_min, cfg.x_max, cfg.t_min, cfg.t_max,
                              cfg.n_p, cfg.n)
        decomposition = decompose(domain, cfg.n_sub, cfg.n_t, cfg.delta)
        if cfg.kind == "swe":
            model = build_swe_model(domain, cfg.gravity, cfg.mean_depth,
                                    boundary_left=(cfg.boundary_value,) * 2,
                                    boundary_right=(cfg.boundary_value,) * 2)
            xp = physical_nodes(domain)
            truth_initial = stack_state(
                _bump(xp, cfg.bump_amplitude, cfg.bump_center, cfg.bump_width),
                np.zeros_like(xp))
            perturbation = stack_state(
                _bump(xp, cfg.perturbation_amplitude, cfg.perturbation_center,
                      cfg.perturbation_width),
                np.zeros_like(xp))
            if cfg.reference == "exact":
                def height_fn(x):
                    return _bump(x, cfg.bump_amplitude, cfg.bump_center, cfg.bump_width)
                truth = sample_swe_trajectory(domain, height_fn, cfg.gravity,
                                              cfg.mean_depth)
        else:
            model = build_advection_model(domain, cfg.speed, cfg.boundary_value)
            xs = domain.nodes
            truth_initial = _bump(xs, cfg.bump_amplitude, cfg.bump_center,
                                  cfg.bump_width)
            perturbation = _bump(xs, cfg.perturbation_amplitude,
                                 cfg.perturbation_center, cfg.perturbation_width)
            if cfg.reference == "exact":
                def initial_fn(x):
                    return _bump(x, cfg.bump_amplitude, cfg.bump_center, cfg.bump_width)
                truth = sample_advection_trajectory(domain, initial_fn, cfg.speed)
        if cfg.reference == "model":
            truth = run_background(model, truth_initial)
            background_initial = truth_initial + perturbation
        else:
            background_initial = truth_initial.copy()

        if cfg.n_obs >= cfg.n_p:
            raise ConfigError(f"n_obs={cfg.n_obs} must be smaller than the "
                              f"state length n_p={cfg.n_p}")
        background_covariance = BackgroundCovariance.build(
            cfg.n_p, cfg.correlation_dx, cfg.sigma_m2)
        observation_covariance = ObservationCovariance(cfg.sigma_o2)
        operator = build_interpolation(domain, uniform_locations(domain, cfg.n_obs))
        observations = synthesize_observations(truth, operator, cfg.noise_sigma,
                                               cfg.seed)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return Experiment(
        config=cfg, domain=domain, decomposition=decomposition, model=model,
        background_covariance=background_covariance,
        observation_covariance=observation_covariance, operator=operator,
        truth=truth, observations=observations, truth_initial=truth_initial,
        background_initial=background_initial)


def global_estimator(exp):
    return GlobalFourDVar(exp.model, exp.background_covariance,
                          exp.observation_covariance, exp.operator,
                          alpha=exp.config.alpha)


def dd_estimator(exp, **overrides):
    params = dict(
        alpha=exp.config.alpha, beta=exp.config.beta, r_bar=exp.config.r_bar,
        cg_tol=exp.config.cg_tol, cg_max_iter=exp.config.cg_max_iter,
        n_stop=exp.config.n_stop, outer_tol=exp.config.outer_tol,
        window=exp.config.window, chain_slabs=exp.config.chain_slabs,
        monotone_guard=exp.config.monotone_guard)
    params.update(overrides)
    return DDFourDVar(exp.decomposition, exp.model, exp.background_covariance,
                      exp.observation_covariance, exp.operator, **params)
