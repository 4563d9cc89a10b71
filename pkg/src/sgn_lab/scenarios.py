"""Experiment generators: sensor field, bird flight-distance regression, scaling study."""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datamodel import GroundTruth, NodeDataSpec, Problem
from .errors import ConfigurationError, DataError
from .graph import Topology, complete, edge_fraction, geometric

# sensor field


@dataclass
class MrfFieldSpec:
    """Heat-source temperature field observed by randomly placed sensors.

    Temperatures fall linearly from ``source_temp`` at ``decay_rate`` per
    metre and level off at the value reached at ``influence_radius``.
    """

    size: float = 10.0
    cells: int = 10
    sources: list = field(default_factory=lambda: [(2.0, 8.5), (8.5, 9.0)])
    source_temp: float = 255.0
    decay_rate: float = 25.0
    influence_radius: float = 5.0
    n_sensors: int = 40
    connect_radius: float = 2.5
    min_var: float = 0.01
    max_var: float = 1.0
    lambda_max: float = 0.3
    rate_per_var: float = 10.0

    def __post_init__(self):
        if self.min_var <= 0 or self.max_var < self.min_var:
            raise ConfigurationError("need 0 < min_var <= max_var")
        if self.source_temp - self.decay_rate * self.influence_radius < 0:
            raise ConfigurationError("ambient temperature would be negative")

    @property
    def ambient(self) -> float:
        return self.source_temp - self.decay_rate * self.influence_radius

    def cell_centers(self) -> np.ndarray:
        h = self.size / self.cells
        c = (np.arange(self.cells) + 0.5) * h
        xx, yy = np.meshgrid(c, c, indexing="xy")
        return np.column_stack([xx.ravel(), yy.ravel()])


def field_temperature(spec: MrfFieldSpec, points) -> np.ndarray:
    """Temperature at each point: the hottest source's linear profile, floored at ambient."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    src = np.asarray(spec.sources, dtype=float)
    d = np.linalg.norm(pts[:, None, :] - src[None, :, :], axis=-1).min(axis=1)
    return np.maximum(spec.source_temp - spec.decay_rate * np.minimum(d, spec.influence_radius),
                      spec.ambient)


def mrf_build(spec: MrfFieldSpec, rng):
    """Returns ``(problem, topology, sensor_positions)``; every ``X_i`` is the identity."""
    centers = spec.cell_centers()
    w_star = field_temperature(spec, centers)
    pos = rng.uniform(0.0, spec.size, size=(spec.n_sensors, 2))
    dist = np.linalg.norm(pos[:, None, :] - centers[None, :, :], axis=-1)
    lam = spec.lambda_max * dist / dist.max()
    var = rng.uniform(spec.min_var, spec.max_var, spec.n_sensors)
    p = centers.shape[0]
    nodes = [NodeDataSpec(i, np.eye(p), var[i], lam[i], spec.rate_per_var * var[i])
             for i in range(spec.n_sensors)]
    top = geometric(pos, spec.connect_radius)
    if not top.is_connected():
        warnings.warn("sensor network is disconnected", stacklevel=2)
    return Problem(nodes, GroundTruth(w_star)), top, pos


# flight initiation distance data

FID_COLUMNS = ("species", "fid", "start_dist", "diet", "latitude", "flock_size", "habitat")
FID_COEFFICIENTS = ("intercept", "start_dist", "diet_gi", "diet_g", "diet_i",
                    "latitude", "flock_size", "habitat")
DIETS = ("gi", "g", "i")


@dataclass
class FidSchema:
    """Column names in the CSV (``columns`` maps canonical to file names) and grouping."""

    columns: dict = field(default_factory=lambda: {c: c for c in FID_COLUMNS})
    n_nodes: int = 15
    mini_batch: int = 10
    species_to_node: dict | None = None

    @classmethod
    def from_mapping(cls, path, **kw):
        d = json.loads(Path(path).read_text())
        cols = {c: c for c in FID_COLUMNS}
        cols.update(d.get("columns", {}))
        return cls(cols, d.get("n_nodes", kw.get("n_nodes", 15)),
                   d.get("mini_batch", kw.get("mini_batch", 10)), d.get("species_to_node"))


@dataclass
class FidData:
    """Normalized design (intercept first), response and node membership of each row."""

    X: np.ndarray
    y: np.ndarray
    species: list
    node_of_row: np.ndarray
    names: tuple = FID_COEFFICIENTS
    rejected: int = 0

    @property
    def n_nodes(self) -> int:
        return int(self.node_of_row.max()) + 1

    def node_rows(self, i) -> np.ndarray:
        return np.flatnonzero(self.node_of_row == i)


def species_assignment(species, n_nodes, mapping=None) -> dict:
    """Alphabetical round-robin of species onto nodes unless ``mapping`` is given."""
    names = sorted(set(species))
    if mapping is not None:
        missing = [s for s in names if s not in mapping]
        if missing:
            raise DataError(f"species without a node in the mapping: {missing}")
        return {s: int(mapping[s]) for s in names}
    if len(names) < n_nodes:
        raise DataError(f"{len(names)} species cannot fill {n_nodes} nodes")
    return {s: k % n_nodes for k, s in enumerate(names)}


def _zscore(v):
    sd = v.std(ddof=1)
    if sd == 0:
        raise DataError("constant column cannot be normalized")
    return (v - v.mean()) / sd


def fid_ingest(csv_path, schema: FidSchema = None) -> FidData:
    """Parse, encode and normalize the flight-distance table.

    Rows with an empty field are skipped and counted; any other unparsable
    cell raises ``DataError`` with its line number.
    """
    schema = schema or FidSchema()
    cols = schema.columns
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError("empty file: header row required")
        absent = [c for c in FID_COLUMNS if cols[c] not in reader.fieldnames]
        if absent:
            raise DataError(f"missing column(s): {', '.join(cols[c] for c in absent)}")
        species, num, diet, rejected = [], [], [], 0
        for line, row in enumerate(reader, start=2):
            vals = {c: (row[cols[c]] or "").strip() for c in FID_COLUMNS}
            if any(v == "" for v in vals.values()):
                rejected += 1
                continue
            try:
                nums = [float(vals[c]) for c in ("fid", "start_dist", "latitude", "flock_size", "habitat")]
            except ValueError as exc:
                raise DataError(f"line {line}: non-numeric cell ({exc})") from None
            if nums[-1] not in (0.0, 1.0):
                raise DataError(f"line {line}: habitat must be 0 or 1")
            species.append(vals["species"])
            num.append(nums)
            diet.append(vals["diet"].lower())
    if not num:
        raise DataError("no usable rows")
    num = np.asarray(num)
    fid, start, lat, flock, habitat = num.T
    dummies = np.array([[d == k for k in DIETS] for d in diet], dtype=float)
    X = np.column_stack([np.ones(len(fid)), _zscore(start), dummies, _zscore(lat), _zscore(flock), habitat])
    assign = species_assignment(species, schema.n_nodes, schema.species_to_node)
    node_of_row = np.array([assign[s] for s in species])
    counts = np.bincount(node_of_row, minlength=max(assign.values()) + 1)
    small = np.flatnonzero(counts < schema.mini_batch)
    if small.size:
        raise DataError(f"node(s) {small.tolist()} have fewer than {schema.mini_batch} rows")
    return FidData(X, _zscore(fid), species, node_of_row, rejected=rejected)


def fid_surrogate(rng, n_rows=941, n_species=23) -> list:
    """Synthetic rows with the flight-distance schema (the real table is not bundled).

    Species differ in diet, flock size and noise level; a few species carry a
    fourth diet label so the three diet indicators are not collinear with the
    intercept.
    """
    names = [f"species_{k:02d}" for k in range(n_species)]
    diets = [("gi", "g", "i", "o")[k % 4 if k % 6 else 3] for k in range(n_species)]
    share = rng.dirichlet(np.full(n_species, 4.0))
    counts = 10 + rng.multinomial(n_rows - 10 * n_species, share)
    noise = rng.uniform(0.4, 1.6, n_species)
    effect = {"gi": -0.45, "g": -0.3, "i": -0.45, "o": 0.0}
    rows = []
    for s in range(n_species):
        for _ in range(counts[s]):
            start = rng.gamma(4.0, 15.0)
            lat = rng.uniform(40.0, 60.0)
            flock = rng.poisson(3.0 + 2 * (s % 5)) + 1
            habitat = int(rng.random() < 0.5)
            fid = (10 + 0.25 * start + 8 * effect[diets[s]] - 0.2 * (lat - 50)
                   - 0.8 * flock + 1.0 * habitat + 6 * noise[s] * rng.standard_normal())
            rows.append({"species": names[s], "fid": round(fid, 3), "start_dist": round(start, 2),
                         "diet": diets[s], "latitude": round(lat, 3), "flock_size": flock,
                         "habitat": habitat})
    return rows


def write_fid_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(FID_COLUMNS))
        w.writeheader()
        w.writerows(rows)


def fid_node_variances(data: FidData) -> np.ndarray:
    """Per-node residual variance of the pooled least-squares fit."""
    coef, *_ = np.linalg.lstsq(data.X, data.y, rcond=None)
    r = data.y - data.X @ coef
    dof = len(r) / (len(r) - data.X.shape[1])
    return np.array([dof * np.mean(r[data.node_rows(i)] ** 2) for i in range(data.n_nodes)])


# scaling study


@dataclass
class ScalingSpec:
    m: int = 10
    p: int = 5
    x_mean: float = 1.0
    x_sd: float = 0.1
    var_range: tuple = (0.001**2, 0.1**2)
    lambda_norm_range: tuple = (0.003, 0.3)
    w_range: tuple = (-10, 10)
    mu: float = 1.0
    edge_fraction: float = 0.6


def scaling_build(spec: ScalingSpec, N, rng, w_star=None):
    """Random regression network; returns ``(problem, topology)``."""
    if N < 2:
        raise ConfigurationError("scaling study needs N >= 2")
    if w_star is None:
        w_star = rng.integers(spec.w_range[0], spec.w_range[1] + 1, spec.p).astype(float)
    nodes = []
    for i in range(N):
        X = rng.normal(spec.x_mean, spec.x_sd, (spec.m, spec.p))
        var = rng.uniform(*spec.var_range)
        direction = rng.uniform(0.0, 1.0, spec.m)
        lam = direction / np.linalg.norm(direction) * rng.uniform(*spec.lambda_norm_range)
        nodes.append(NodeDataSpec(i, X, var, lam, spec.mu))
    top = edge_fraction(N, spec.edge_fraction, rng)
    return Problem(nodes, GroundTruth(w_star)), top


# small analytic instance


def toy_build(rng, N=5, m=4, p=3, equal_rates=True, uniform_weights=False, w_star=None,
              design="anchored"):
    """Small random instance used for bound and engine checks.

    ``design="anchored"`` perturbs a fixed well-conditioned design matrix;
    ``design="gaussian"`` draws every entry of ``X_i`` from a standard normal.
    """
    if design not in ("anchored", "gaussian"):
        raise ConfigurationError(f"unknown toy design {design!r}")
    base = np.vstack([np.eye(p), np.ones((m - p, p)) / p]) if m >= p else np.eye(m, p)
    if design == "gaussian":
        base = np.zeros((m, p))
    w_star = np.linspace(1.0, -1.0, p) * 2 if w_star is None else w_star
    nodes = []
    for i in range(N):
        X = base + (1.0 if design == "gaussian" else 0.3) * rng.standard_normal((m, p))
        mu = 1.0 if equal_rates else 1.0 + rng.random()
        nodes.append(NodeDataSpec(i, X, 0.5 + rng.random(), 0.3 + 0.5 * rng.random(m), mu,
                                  1.0 / N if uniform_weights else None))
    return Problem(nodes, GroundTruth(w_star)), complete(N)


def load_scenario(path) -> dict:
    d = json.loads(Path(path).read_text())
    if d.get("scenario") not in ("mrf", "fid", "scaling", "toy"):
        raise ConfigurationError(f"unknown scenario {d.get('scenario')!r}")
    return d
