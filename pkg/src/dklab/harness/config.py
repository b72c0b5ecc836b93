"""Run configuration: a single JSON document, validated against every module
precondition before anything runs.

Schema (version 1), all lengths per axis:

    {
      "schema": 1,
      "grid":         {"extents": [1.0], "cells": [64]},
      "coefficients": {"preset": "identity", "params": {},
                       "phi": {"preset": "linear", "params": {"c": 1.0}}},
      "noise":        {"pairs": [[0.5, [1]]]},
      "solver":       {"dt": 1e-4, "T": 0.01, "theta": 0.5, "scheme": "ito_em",
                       "n": 4, "nonneg_policy": "clip_renormalize",
                       "record_every": 1},
      "initial":      {"profile": "constant", "params": {"c": 1.0}},
      "bands":        [[0.0, 0.1]],          // optional
      "ensemble":     1,
      "seed":         0,
      "particles":    {"n": 1000, "dt": 1e-3, "T": 0.01,
                       "bandwidth": 0.05}    // optional, particle runs only
    }

A coupling document adds "initial2" (same shape as "initial"), optional
"slack" (default 0.05), and "shared_noise" (must be true).  The SHA-256 of
the canonical serialization identifies the configuration in metadata.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..coeffs import CoefficientSet, RegularizedSqrt, make_coeffs, make_sigma
from ..grid import Grid, build_grid
from ..noise import NoiseField, NoiseSpec
from ..solver import ConfigurationError, SolverParams

SCHEMA_VERSION = 1

PROFILES = ("constant", "bump", "two-bumps", "plateau")


def initial_profile(grid: Grid, spec: dict) -> np.ndarray:
    """Named nonnegative initial data.

    constant:  c
    bump:      base + amp * prod_k exp(-(x_k-center_k)^2 / (2 width^2))
    two-bumps: base + two such bumps (amp1/amp2, centers default L/4, 3L/4)
    plateau:   floor + (amp/2^d) prod_k (tanh((x_k-left_k)/width)
                                         - tanh((x_k-right_k)/width))
               an indicator-like profile whose off-plateau value is `floor`
               (default 1e-30, kept strictly positive so logs stay finite)

    An optional "mean" key rescales the profile to that spatial mean.
    """
    name = spec.get("profile", "constant")
    p = dict(spec.get("params", {}))
    X = grid.cell_centers()
    L = np.asarray(grid.extents, float)

    def gauss(center, width):
        out = np.ones(grid.cells)
        for ax in range(grid.dim):
            out = out * np.exp(-((X[ax] - center[ax]) ** 2) / (2.0 * width**2))
        return out

    if name == "constant":
        values = np.full(grid.cells, float(p.pop("c", 1.0)))
    elif name == "bump":
        center = np.atleast_1d(p.pop("center", L / 2.0))
        values = float(p.pop("base", 0.5)) + float(p.pop("amp", 0.5)) * gauss(
            center, float(p.pop("width", min(L) / 8.0))
        )
    elif name == "two-bumps":
        w = float(p.pop("width", min(L) / 10.0))
        c1 = np.atleast_1d(p.pop("center1", L / 4.0))
        c2 = np.atleast_1d(p.pop("center2", 3.0 * L / 4.0))
        values = (
            float(p.pop("base", 0.2))
            + float(p.pop("amp1", 0.8)) * gauss(c1, w)
            + float(p.pop("amp2", 0.8)) * gauss(c2, w)
        )
    elif name == "plateau":
        w = float(p.pop("width", min(L) / 32.0))
        left = np.atleast_1d(p.pop("left", L / 4.0))
        right = np.atleast_1d(p.pop("right", 3.0 * L / 4.0))
        amp = float(p.pop("amp", 1.0))
        floor = float(p.pop("floor", 1e-30))
        values = np.ones(grid.cells)
        for ax in range(grid.dim):
            values = values * 0.5 * (
                np.tanh((X[ax] - left[ax]) / w) - np.tanh((X[ax] - right[ax]) / w)
            )
        values = floor + amp * values
    else:
        raise ConfigurationError(f"unknown initial profile {name!r} (have {PROFILES})")

    mean = p.pop("mean", None)
    if p:
        raise ConfigurationError(f"unknown parameters for profile {name!r}: {p}")
    if mean is not None:
        current = float(values.mean())
        if current <= 0:
            raise ConfigurationError("cannot rescale a profile with nonpositive mean")
        values = values * (float(mean) / current)
    if values.min() < 0:
        raise ConfigurationError(f"profile {name!r} produced negative values")
    return values


def canonical_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def config_hash(doc: dict) -> str:
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()


@dataclass
class RunConfig:
    doc: dict
    grid: Grid = field(init=False)
    coeffs: CoefficientSet = field(init=False)
    rs: RegularizedSqrt = field(init=False)
    noise: NoiseField = field(init=False)
    params: SolverParams = field(init=False)
    rho0: np.ndarray = field(init=False)

    def __post_init__(self):
        doc = self.doc
        version = doc.get("schema", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported schema version {version}")
        try:
            g = doc["grid"]
            self.grid = build_grid(g["extents"], g["cells"])
            c = doc.get("coefficients", {})
            phi_block = c.get("phi", {})
            self.coeffs = make_coeffs(
                self.grid,
                c.get("preset", "identity"),
                phi=phi_block.get("preset", "linear"),
                phi_params=phi_block.get("params", {}),
                **c.get("params", {}),
            )
            pairs = [(a, tuple(k)) for a, k in doc.get("noise", {}).get("pairs", [])]
            spec = NoiseSpec.of(pairs, self.grid.dim)
            self.noise = NoiseField(spec, self.grid, self.coeffs)
            s = dict(doc.get("solver", {}))
            self.params = SolverParams(
                dt=float(s.get("dt", 1e-4)),
                T=float(s.get("T", 0.0)),
                theta=float(s.get("theta", 0.5)),
                scheme=s.get("scheme", "ito_em"),
                n=int(s.get("n", 4)),
                nonneg_policy=s.get("nonneg_policy", "clip_renormalize"),
                record_every=int(s.get("record_every", 1)),
            )
            self.rs = make_sigma(self.params.n)
            self.rho0 = initial_profile(self.grid, doc.get("initial", {}))
        except (KeyError, TypeError) as err:
            raise ConfigurationError(f"malformed configuration: {err}") from err
        except ValueError as err:
            raise ConfigurationError(str(err)) from err
        self.params.validate(self.coeffs, self.noise)
        if self.realizations < 1:
            raise ConfigurationError("ensemble size must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must fit in u64")

    @property
    def seed(self) -> int:
        return int(self.doc.get("seed", 0))

    @property
    def realizations(self) -> int:
        return int(self.doc.get("ensemble", 1))

    @property
    def bands(self) -> list:
        return [tuple(map(float, b)) for b in self.doc.get("bands", [])]

    @property
    def hash(self) -> str:
        return config_hash(self.doc)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))


@dataclass
class CouplingConfig:
    base: RunConfig
    rho0_second: np.ndarray = field(init=False)
    slack: float = field(init=False)

    def __post_init__(self):
        doc = self.base.doc
        if "initial2" not in doc:
            raise ConfigurationError("coupling needs a second initial profile")
        if not doc.get("shared_noise", True):
            raise ConfigurationError("the coupled experiment requires shared noise")
        self.rho0_second = initial_profile(self.base.grid, doc["initial2"])
        self.slack = float(doc.get("slack", 0.05))
        if self.slack < 0:
            raise ConfigurationError("slack must be >= 0")

    @classmethod
    def from_file(cls, path) -> "CouplingConfig":
        return cls(RunConfig.from_file(path))
