"""
Module that loads run configuration.

A run configuration file is flat ``key = value`` text with ``#`` comments.
Values from the file are overlaid with command-line overrides and then
validated by RunConfigSchema into a RunConfig.
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path

from dotenv import dotenv_values
from environs import Env
from marshmallow import (
    EXCLUDE,
    Schema,
    ValidationError,
    fields,
    post_load,
    validate,
    validates_schema,
)

from .dictlearn import TrainConfig
from .pipeline import SUPPORTED_SCALES, SrConfig, TauMap
from .solver import SolverConfig

logger = logging.getLogger(__name__)

THREADS_VARIABLE = "MCCSR_THREADS"
IMAGE_SUFFIXES = (".png",)

_POSITIVE = validate.Range(min=0, min_inclusive=False)
_NON_NEGATIVE = validate.Range(min=0)


@dataclass(frozen=True)
class RunConfig:
    """
    Settings of one command run: paths plus training and reconstruction
    parameters.
    """

    images: tuple = ()
    dictionary: str = None
    log: str = None
    atoms: int = 512
    samples: int = 100000
    lam: float = 0.1
    tau: float = 0.01
    gamma: float = 0.5
    rho: float = 1.0
    outer_iterations: int = 20
    admm_tolerance: float = 1e-4
    admm_max_iterations: int = 100
    scale: int = 2
    patch_side: int = 5
    overlap: int = 4
    variance_threshold: float = 10.0
    seed: int = 0
    threads: int = None
    solver_max_iterations: int = 300
    solver_tolerance: float = 1e-7
    tau_max: float = 0.1
    noise_sigma: float = None
    noise_tau_scale: float = 0.5
    force_tau: float = None
    samples_per_degree: float = 23.0

    def solver_config(self):
        return SolverConfig(self.solver_max_iterations, self.solver_tolerance)

    def train_config(self):
        """TrainConfig for joint dictionary learning."""
        return TrainConfig(
            atoms=self.atoms,
            lam=self.lam,
            tau=self.tau,
            gamma=self.gamma,
            rho=self.rho,
            outer_iterations=self.outer_iterations,
            admm_tolerance=self.admm_tolerance,
            admm_max_iterations=self.admm_max_iterations,
            seed=self.seed,
            solver=self.solver_config(),
        )

    def sr_config(self):
        """SrConfig for training-pair sampling and reconstruction."""
        return SrConfig(
            scale=self.scale,
            patch_side=self.patch_side,
            overlap=self.overlap,
            lam=self.lam,
            tau_map=TauMap(tau_max=self.tau_max),
            noise_sigma=self.noise_sigma,
            noise_tau_scale=self.noise_tau_scale,
            force_tau=self.force_tau,
            solver=self.solver_config(),
        )

    def image_paths(self):
        """
        Expand ``images`` into a sorted list of files; directories
        contribute their PNG files.
        """
        paths = []
        for entry in self.images:
            path = Path(entry)
            if path.is_dir():
                paths.extend(sorted(
                    p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
                ))
            else:
                paths.append(path)
        return paths


class PathList(fields.Field):
    """Comma-separated list of paths."""

    default_error_messages = {"empty": "At least one path is required."}

    def _deserialize(self, value, attr, data, **kwargs):
        if isinstance(value, (list, tuple)):
            items = [str(v) for v in value]
        else:
            items = str(value).split(",")
        items = [item.strip() for item in items if item.strip()]
        if not items:
            raise self.make_error("empty")
        return tuple(items)


class RunConfigSchema(Schema):
    """Validates raw string values and builds a RunConfig."""

    class Meta:
        unknown = EXCLUDE

    images = PathList()
    dictionary = fields.Str()
    log = fields.Str()
    atoms = fields.Int(validate=validate.Range(min=1))
    samples = fields.Int(validate=validate.Range(min=1))
    lam = fields.Float(validate=_NON_NEGATIVE)
    tau = fields.Float(validate=_NON_NEGATIVE)
    gamma = fields.Float(validate=validate.Range(min=0, max=1))
    rho = fields.Float(validate=_POSITIVE)
    outer_iterations = fields.Int(validate=validate.Range(min=1))
    admm_tolerance = fields.Float(validate=_POSITIVE)
    admm_max_iterations = fields.Int(validate=validate.Range(min=1))
    scale = fields.Int(validate=validate.OneOf(SUPPORTED_SCALES))
    patch_side = fields.Int(validate=validate.Range(min=2))
    overlap = fields.Int(validate=_NON_NEGATIVE)
    variance_threshold = fields.Float(validate=_NON_NEGATIVE)
    seed = fields.Int(validate=_NON_NEGATIVE)
    threads = fields.Int(validate=validate.Range(min=1))
    solver_max_iterations = fields.Int(validate=validate.Range(min=1))
    solver_tolerance = fields.Float(validate=_POSITIVE)
    tau_max = fields.Float(validate=_NON_NEGATIVE)
    noise_sigma = fields.Float(validate=_NON_NEGATIVE)
    noise_tau_scale = fields.Float(validate=_NON_NEGATIVE)
    force_tau = fields.Float(validate=_NON_NEGATIVE)
    samples_per_degree = fields.Float(validate=_POSITIVE)

    @validates_schema
    def check_overlap(self, data, **kwargs):
        overlap = data.get("overlap", RunConfig.overlap)
        side = data.get("patch_side", RunConfig.patch_side)
        if overlap >= side:
            raise ValidationError(
                f"must be smaller than the patch side ({side}).", "overlap"
            )

    @post_load
    def make_run_config(self, data, **kwargs):
        return RunConfig(**data)


def load_run_config(path=None, overrides=None):
    """
    Read a configuration file and apply overrides.

    Args:
        path (str, optional): Flat key = value file. Omitted means defaults.
        overrides (dict, optional): Values that win over the file; None
            values are ignored.

    Returns:
        RunConfig: Validated configuration.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        marshmallow.ValidationError: If a value is malformed or out of range.
    """
    values = {}
    if path is not None:
        if not Path(path).is_file():
            raise FileNotFoundError(f"Configuration file {path} does not exist.")
        values.update(
            (key.strip().lower(), value)
            for key, value in dotenv_values(path).items()
            if value is not None and value != ""
        )
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    ignored = sorted(set(values) - set(RunConfigSchema().fields))
    if ignored:
        logger.warning("ignoring unknown configuration keys: %s", ", ".join(ignored))
    return RunConfigSchema().load(values)


def resolve_threads(requested=None):
    """
    Thread count for library parallelism.

    An explicit request wins; otherwise MCCSR_THREADS, otherwise the CPU
    count.
    """
    if requested is not None:
        return int(requested)
    env = Env()
    threads = env.int(THREADS_VARIABLE, os.cpu_count() or 1)
    return max(1, threads)
