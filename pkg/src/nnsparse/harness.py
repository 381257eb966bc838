"""Experiment configuration, orchestration and parameter sweeps.

A run builds a problem instance, forms ``A = C G`` stacked with the
Tikhonov block, solves it with one of the three solvers and writes
``trace.csv``, ``metrics.txt``, ``recon.pgm``, ``coeffs.pgm`` and
``config.resolved`` into the output directory.
"""
from __future__ import annotations

import dataclasses
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import problems
from .dictionary import PatchGeometry, global_dictionary_operator, load_dictionary
from .imageio import read_pgm, write_csv_matrix, write_pgm
from .linop import CompositionOperator, LinearOperator, SparseOperator, identity, tikhonov_augment
from .metrics import MetricsReport, rel_error, rel_residual, rel_sparsity
from .solvers import (
    MappingParams,
    SolverOptions,
    SolverResult,
    mrnsd,
    sp_mrnsd,
    sp_nngd,
    write_trace_csv,
)

log = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunOutcome",
    "TASK_DEFAULTS",
    "TOY_A",
    "TOY_B",
    "TOY_X0",
    "toy_problem",
    "parse_config_text",
    "load_config",
    "config_from_mapping",
    "solve_instance",
    "run_experiment",
    "run_sweep",
]

TASKS = ("deblur", "complete", "tomo", "superres", "toy")
SOLVERS = ("mrnsd", "spmrnsd", "spnngd")

# per-task defaults
TASK_DEFAULTS = {
    "deblur": {"size": 256, "lambda": 1e-8, "a": 0.1, "c": -0.75, "mu": 1e-4, "noise": 1e-4},
    "complete": {"size": 128, "lambda": 1e-3, "a": 1.0, "c": -0.5, "mu": 1e-4, "noise": 0.0},
    "tomo": {"size": 256, "lambda": 1.0, "a": 0.5, "c": -1.0, "mu": 1.0, "noise": 0.0},
    "superres": {"size": 512, "lambda": 1e-4, "a": 0.2975, "c": -0.05, "mu": 1e-2, "noise": 0.0},
    "toy": {"size": 2, "lambda": 1e-4, "a": 1.0, "c": 0.0, "mu": 0.0, "noise": 0.0},
}

TOY_A = np.array([[20.0, 5.0], [5.0, 20.0]])
TOY_B = np.array([2.0, 23.0])
TOY_X0 = np.array([0.15, 0.13])


class ConfigError(ValueError):
    pass


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    val = str(text).strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    """All knobs of one experiment; ``None`` means "use the task default"."""

    task: str = "toy"
    solver: str = "spmrnsd"
    lam: float | None = None
    a: float | None = None
    c: float | None = None
    mu: float | None = None
    iters: int = 100
    seed: int = 0
    dictionary_path: str | None = None
    image_path: str | None = None
    output_dir: str = "out"
    size: int | None = None
    noise: float | None = None
    x0: float | None = None
    z0: float | None = None
    remove_frac: float = 0.6
    factor: int = 8
    frames: int = 10
    angles: int = 100
    l1_search: bool = False
    sweep_lambda: tuple[float, ...] = ()
    sweep_a: tuple[float, ...] = ()
    sweep_c: tuple[float, ...] = ()

    def validate(self, need_dictionary: bool = True) -> "ExperimentConfig":
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {', '.join(TASKS)}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"unknown solver {self.solver!r}; choose from {', '.join(SOLVERS)}")
        if self.solver != "spmrnsd" and (self.lam is not None or self.sweep_lambda):
            raise ConfigError("lambda only applies to the spmrnsd solver")
        if self.solver != "spnngd" and (
            self.a is not None or self.c is not None or self.sweep_a or self.sweep_c
        ):
            raise ConfigError("mapping parameters a, c only apply to the spnngd solver")
        if self.iters < 1:
            raise ConfigError("iters must be at least 1")
        if self.lam is not None and self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.a is not None and not self.a > 0:
            raise ConfigError("a must be positive")
        if self.mu is not None and self.mu < 0:
            raise ConfigError("mu must be non-negative")
        if self.x0 is not None and not self.x0 > 0:
            raise ConfigError("x0 must be positive")
        if self.z0 is not None and self.solver != "spnngd":
            raise ConfigError("z0 only applies to the spnngd solver")
        if any(v <= 0 for v in self.sweep_a):
            raise ConfigError("a must be positive")
        if need_dictionary and self.task != "toy" and self.dictionary_path is None:
            raise ConfigError(f"task {self.task!r} needs a dictionary file (--dict)")
        return self

    def resolved(self) -> "ExperimentConfig":
        """Fill task defaults for every unset numeric parameter."""
        d = TASK_DEFAULTS[self.task]
        lam = self.lam if self.lam is not None else d["lambda"]
        a = self.a if self.a is not None else d["a"]
        c = self.c if self.c is not None else d["c"]
        return dataclasses.replace(
            self,
            lam=lam if self.solver == "spmrnsd" else None,
            a=a if self.solver == "spnngd" else None,
            c=c if self.solver == "spnngd" else None,
            mu=self.mu if self.mu is not None else d["mu"],
            size=self.size if self.size is not None else d["size"],
            noise=self.noise if self.noise is not None else d["noise"],
        )

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            if isinstance(val, tuple):
                val = ",".join(repr(v) for v in val)
            elif val is None:
                val = ""
            else:
                val = repr(val) if isinstance(val, float) else str(val)
            lines.append(f"{_KEY_FOR_FIELD.get(f.name, f.name)}={val}")
        return "\n".join(lines) + "\n"


_FIELD_FOR_KEY = {
    "lambda": "lam",
    "dict": "dictionary_path",
    "dictionary": "dictionary_path",
    "image": "image_path",
    "out": "output_dir",
}
_KEY_FOR_FIELD = {"lam": "lambda", "dictionary_path": "dict", "image_path": "image", "output_dir": "out"}
_CONVERTERS = {
    "lam": float,
    "a": float,
    "c": float,
    "mu": float,
    "noise": float,
    "x0": float,
    "z0": float,
    "remove_frac": float,
    "iters": int,
    "seed": int,
    "size": int,
    "factor": int,
    "frames": int,
    "angles": int,
    "l1_search": _bool,
    "sweep_lambda": _floats,
    "sweep_a": _floats,
    "sweep_c": _floats,
}


def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        out[key] = val
    return out


def load_config(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text())


def config_from_mapping(values: dict) -> ExperimentConfig:
    """Build a config from string (or typed) values keyed by config-file names."""
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    kwargs = {}
    for key, val in values.items():
        name = _FIELD_FOR_KEY.get(key, key.replace("-", "_"))
        if name not in names:
            raise ConfigError(f"unknown config key {key!r}")
        if val is None or val == "":
            continue
        try:
            kwargs[name] = _CONVERTERS.get(name, str)(val)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {val!r}") from exc
    return ExperimentConfig(**kwargs)


@dataclass
class RunOutcome:
    config: ExperimentConfig
    result: SolverResult
    metrics: MetricsReport
    output_dir: Path | None = None
    extras: dict = field(default_factory=dict)


def toy_problem() -> problems.ProblemInstance:
    """Two-variable problem whose constrained minimizer is ``[0, 470/425]``."""
    x_hat = np.array([0.0, 470.0 / 425.0])
    return problems.ProblemInstance(
        C=SparseOperator(TOY_A),
        b=TOY_B.copy(),
        y_true=x_hat,
        L=identity(2),
        mu=0.0,
        geom=PatchGeometry(2, 1, 2, 1),
        name="toy",
    )


def _build_problem(cfg: ExperimentConfig, patch) -> problems.ProblemInstance:
    image = read_pgm(cfg.image_path) if cfg.image_path else None
    size = None if image is not None else cfg.size
    if image is None and cfg.task != "tomo":
        image = problems.synthetic_image(cfg.size, seed=cfg.seed)
    if cfg.task == "deblur":
        return problems.build_deblurring(
            image, N=size, beta=cfg.noise, mu=cfg.mu, patch=patch, seed=cfg.seed
        )
    if cfg.task == "complete":
        return problems.build_completion(
            image, N=size, remove_frac=cfg.remove_frac, mu=cfg.mu, patch=patch, seed=cfg.seed
        )
    if cfg.task == "tomo":
        n = image.shape[0] if image is not None else cfg.size
        noise = problems.NoiseSpec(cfg.noise, cfg.seed) if cfg.noise else None
        return problems.build_tomography(
            n, mu=cfg.mu, n_angles=cfg.angles, image=image, noise=noise, patch=patch
        )
    if cfg.task == "superres":
        return problems.build_superresolution(
            image, N=size, n_frames=cfg.frames, factor=cfg.factor, mu=cfg.mu, patch=patch
        )
    raise ConfigError(f"task {cfg.task!r} has no problem builder")


def solve_instance(
    problem: problems.ProblemInstance,
    G: LinearOperator,
    cfg: ExperimentConfig,
    x0=None,
) -> tuple[SolverResult, MetricsReport]:
    """Solve ``min 0.5||C G x - b||^2 + mu ||L G x||^2`` (plus the solver's sparsity device)."""
    A = CompositionOperator(problem.C, G)
    mu = problem.mu if cfg.mu is None else cfg.mu
    if mu > 0:
        A_aug, pad = tikhonov_augment(A, problem.L, mu, G)
        b_aug = np.concatenate([problem.b, np.zeros(pad)])
    else:
        A_aug, b_aug = A, problem.b
    if x0 is None:
        x0 = cfg.x0 if cfg.x0 is not None else 0.1
    opts = SolverOptions(max_iters=cfg.iters, x0=x0, z0=cfg.z0, fidelity_rows=problem.b.size)
    if cfg.solver == "mrnsd":
        result = mrnsd(A_aug, b_aug, opts)
    elif cfg.solver == "spmrnsd":
        result = sp_mrnsd(A_aug, b_aug, cfg.lam, opts, l1_in_line_search=cfg.l1_search)
    else:
        result = sp_nngd(A_aug, b_aug, MappingParams(cfg.a, cfg.c), opts)
    report = MetricsReport(
        rel_residual=rel_residual(A, result.x, problem.b),
        rel_error=rel_error(problem.y_true, G, result.x),
        rel_sparsity=rel_sparsity(result.x, problem.y_true),
    )
    return result, report


def _write_outputs(out: Path, cfg, problem, G, coeff_shape, result, report) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(result.trace, out / "trace.csv")
    (out / "metrics.txt").write_text(report.as_lines())
    recon = G.apply(result.x).reshape(problem.image_shape, order="F")
    write_pgm(out / "recon.pgm", recon)
    pattern = (result.x.reshape(coeff_shape, order="F") != 0).astype(np.float64)
    write_pgm(out / "coeffs.pgm", pattern)
    (out / "config.resolved").write_text(cfg.to_text())
    if problem.name == "tomo":
        write_pgm(out / "phantom.pgm", problem.y_true.reshape(problem.image_shape, order="F"))
        n_angles = cfg.angles
        sino = problem.b.reshape(problem.b.size // n_angles, n_angles, order="F")
        peak = sino.max()
        write_pgm(out / "sinogram.pgm", sino / peak if peak > 0 else sino)
        write_csv_matrix(out / "sinogram.csv", sino)


def run_experiment(
    config: ExperimentConfig,
    problem: problems.ProblemInstance | None = None,
    dictionary=None,
    write: bool = True,
) -> RunOutcome:
    """Build, solve and report one configuration.

    ``problem`` bypasses the builders (the coefficients are then the image
    itself, ``G = I``); ``dictionary`` bypasses loading ``dictionary_path``.
    """
    config.validate(need_dictionary=problem is None and dictionary is None)
    cfg = config.resolved()
    x0 = cfg.x0
    if problem is not None:
        G = identity(problem.C.n_cols)
        coeff_shape = (problem.C.n_cols, 1)
        if config.mu is None:
            cfg = dataclasses.replace(cfg, mu=problem.mu)
    elif cfg.task == "toy":
        problem = toy_problem()
        G = identity(2)
        coeff_shape = (2, 1)
        if x0 is None:
            x0 = TOY_X0
    else:
        if dictionary is None:
            dictionary = load_dictionary(cfg.dictionary_path)
        problem = _build_problem(cfg, (dictionary.p, dictionary.q))
        cfg = dataclasses.replace(cfg, size=problem.geom.M)
        G = global_dictionary_operator(dictionary, problem.geom)
        coeff_shape = (dictionary.s, problem.geom.r)
    log.info("task=%s solver=%s size=%s", cfg.task, cfg.solver, problem.image_shape)
    result, report = solve_instance(problem, G, cfg, x0=x0)
    out = None
    if write:
        out = Path(cfg.output_dir)
        _write_outputs(out, cfg, problem, G, coeff_shape, result, report)
    return RunOutcome(cfg, result, report, out)


def _grid(cfg: ExperimentConfig) -> list[dict]:
    if cfg.solver == "spmrnsd":
        if not cfg.sweep_lambda:
            raise ConfigError("spmrnsd sweep needs sweep_lambda values")
        return [{"lam": v} for v in cfg.sweep_lambda]
    if cfg.solver == "spnngd":
        a_vals = cfg.sweep_a or ((cfg.a,) if cfg.a is not None else (TASK_DEFAULTS[cfg.task]["a"],))
        c_vals = cfg.sweep_c or ((cfg.c,) if cfg.c is not None else (TASK_DEFAULTS[cfg.task]["c"],))
        if not (cfg.sweep_a or cfg.sweep_c):
            raise ConfigError("spnngd sweep needs sweep_a and/or sweep_c values")
        return [{"a": a, "c": c} for a, c in itertools.product(a_vals, c_vals)]
    raise ConfigError("sweeps are defined for spmrnsd (lambda) and spnngd (a, c)")


def run_sweep(
    config: ExperimentConfig,
    problem: problems.ProblemInstance | None = None,
    dictionary=None,
) -> list[RunOutcome]:
    """One run per grid point in ``<out>/run_NNN``; aggregate rows in ``<out>/sweep.csv``."""
    config.validate(need_dictionary=problem is None and dictionary is None)
    grid = _grid(config)
    root = Path(config.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    if dictionary is None and problem is None and config.task != "toy":
        dictionary = load_dictionary(config.dictionary_path)
    outcomes = []
    for k, point in enumerate(grid):
        cfg = dataclasses.replace(
            config, sweep_lambda=(), sweep_a=(), sweep_c=(), output_dir=str(root / f"run_{k:03d}"), **point
        )
        outcomes.append(run_experiment(cfg, problem=problem, dictionary=dictionary))
    keys = list(grid[0])
    header = [_KEY_FOR_FIELD.get(k, k) for k in keys] + ["rel_residual", "rel_error", "rel_sparsity"]
    with open(root / "sweep.csv", "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for point, oc in zip(grid, outcomes):
            vals = [point[k] for k in keys] + [
                oc.metrics.rel_residual,
                oc.metrics.rel_error,
                oc.metrics.rel_sparsity,
            ]
            fh.write(",".join(repr(float(v)) for v in vals) + "\n")
    return outcomes
