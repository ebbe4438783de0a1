"""Shared anatomical graph and per-subject node signals.

The graph is built once from ROI coordinates (k nearest neighbours in
Euclidean space, symmetrized by union) and shared by every subject. Each
subject contributes an ROI time-series matrix which is z-normalized and
turned into a connectivity profile: row i of the feature matrix is the
vector of Pearson correlations between ROI i and every ROI.

A synthetic cohort generator stands in for restricted clinical data in
tests and demos.
"""

from __future__ import annotations

import csv
import hashlib
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .spectral import Adjacency

WEIGHT_MODES = ("distance", "gaussian")


@dataclass(frozen=True)
class RoiAtlas:
    """ROI centre coordinates (mm) defining the shared node set."""

    coords: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise ValidationError(f"coords must be R x 3, got {coords.shape}")
        if coords.shape[0] < 2:
            raise ValidationError("atlas needs at least two ROIs")
        if np.unique(coords, axis=0).shape[0] != coords.shape[0]:
            raise ValidationError("duplicate ROI coordinates (neighbor order undefined)")
        if self.names is not None and len(self.names) != coords.shape[0]:
            raise ValidationError("names length must match ROI count")
        object.__setattr__(self, "coords", coords)

    @property
    def r(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class SpatialGraph:
    """Anatomical k-NN graph shared by all subjects."""

    atlas: RoiAtlas
    adjacency: Adjacency
    k_neighbors: int
    weight_mode: str


@dataclass(frozen=True)
class SubjectRecord:
    """One subject: class label, acquisition site, ROI time series (T x R)."""

    subject_id: str
    label: int
    site_id: str
    timeseries: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timeseries, dtype=np.float64)
        if ts.ndim != 2 or ts.shape[0] < 2:
            raise ValidationError(
                f"subject {self.subject_id}: time series must be T x R with T >= 2"
            )
        if self.label not in (0, 1):
            raise ValidationError(f"subject {self.subject_id}: label must be 0 or 1")
        if not self.site_id:
            raise ValidationError(f"subject {self.subject_id}: site_id must be non-empty")
        object.__setattr__(self, "timeseries", ts)
        object.__setattr__(self, "label", int(self.label))


@dataclass(frozen=True)
class GraphSignal:
    """Per-subject node features: row i is ROI i's connectivity profile."""

    subject_id: str
    label: int
    site_id: str
    features: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] != f.shape[1]:
            raise ValidationError("features must be a square R x R matrix")
        if not np.allclose(f, f.T, atol=1e-9, rtol=0.0):
            raise ValidationError("features must be symmetric")
        if not np.allclose(np.diag(f), 1.0, atol=1e-9):
            raise ValidationError("features must have unit diagonal")
        if np.any(f < -1.0) or np.any(f > 1.0):
            raise ValidationError("features must lie in [-1, 1]")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "label", int(self.label))

    @property
    def r(self) -> int:
        return self.features.shape[0]


def build_spatial_graph(atlas: RoiAtlas, k: int = 10, weight_mode: str = "distance") -> SpatialGraph:
    """k-NN graph on ROI centres, symmetrized by union.

    Edge weights are the raw Euclidean distances e_ij (mode 'distance') or
    the Gaussian affinity exp(-e_ij^2 / (2 sigma^2)) with sigma the mean
    kept distance (mode 'gaussian').
    """
    if weight_mode not in WEIGHT_MODES:
        raise ValidationError(f"weight_mode must be one of {WEIGHT_MODES}")
    if not 1 <= k < atlas.r:
        raise ValidationError(f"k must satisfy 1 <= k < {atlas.r}, got {k}")
    coords = atlas.coords
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    np.fill_diagonal(dist, np.inf)
    keep = np.zeros_like(dist, dtype=bool)
    for i in range(atlas.r):
        nearest = np.argsort(dist[i], kind="stable")[:k]
        keep[i, nearest] = True
    keep = keep | keep.T  # union symmetrization
    np.fill_diagonal(dist, 0.0)

    if weight_mode == "distance":
        w = np.where(keep, dist, 0.0)
    else:
        iu, ju = np.triu_indices(atlas.r, k=1)
        kept_d = dist[iu, ju][keep[iu, ju]]
        sigma = kept_d.mean()
        w = np.where(keep, np.exp(-(dist**2) / (2.0 * sigma**2)), 0.0)
    w = np.where(keep, 0.5 * (w + w.T), 0.0)
    return SpatialGraph(
        atlas=atlas, adjacency=Adjacency(w), k_neighbors=k, weight_mode=weight_mode
    )


def graph_hash(adjacency: Adjacency) -> str:
    """Stable identity of a graph: sha256 over the weight bytes."""
    h = hashlib.sha256()
    h.update(str(adjacency.r).encode())
    h.update(adjacency.w.astype("<f8").tobytes(order="C"))
    return h.hexdigest()


def znormalize_timeseries(ts) -> np.ndarray:
    """Normalize each column to zero mean and unit sample std (ddof=1)."""
    x = np.asarray(ts, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValidationError("time series must be T x R with T >= 2")
    mu = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1)
    dead = np.flatnonzero(sd == 0.0)
    if dead.size:
        raise ValidationError(f"constant time series in ROI column(s) {dead.tolist()}")
    return (x - mu) / sd


def pearson_profiles(ts) -> np.ndarray:
    """Pearson correlation matrix of the ROI time series.

    Symmetric, unit diagonal, entries clamped to [-1, 1].
    """
    z = znormalize_timeseries(ts)
    t = z.shape[0]
    p = (z.T @ z) / (t - 1)
    p = 0.5 * (p + p.T)
    np.clip(p, -1.0, 1.0, out=p)
    np.fill_diagonal(p, 1.0)
    return p


def signal_from_record(rec: SubjectRecord) -> GraphSignal:
    """Connectivity-profile signal for one subject."""
    return GraphSignal(
        subject_id=rec.subject_id,
        label=rec.label,
        site_id=rec.site_id,
        features=pearson_profiles(rec.timeseries),
    )


def _read_numeric_csv(path: Path) -> np.ndarray:
    """Numeric CSV with an optional single header line; rejects ragged rows."""
    rows = []
    header_skipped = False
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if lineno == 1 and not header_skipped:
                    header_skipped = True
                    continue
                raise ValidationError(f"{path}:{lineno}: non-numeric value in row")
            if len(rows) > 1 and len(rows[-1]) != len(rows[0]):
                raise ValidationError(
                    f"{path}:{lineno}: ragged row ({len(rows[-1])} values, "
                    f"expected {len(rows[0])})"
                )
    if not rows:
        raise ValidationError(f"{path}: no numeric data")
    return np.asarray(rows, dtype=np.float64)


MANIFEST_COLUMNS = ("subject_id", "label", "site_id", "timeseries_path")


def load_cohort(manifest_path, expected_r: int | None = None) -> list[SubjectRecord]:
    """Load subjects listed in a manifest CSV, in manifest order.

    Manifest columns: subject_id, label, site_id, timeseries_path (paths
    resolved relative to the manifest's directory). Each time-series file
    is a T x R numeric CSV, header optional.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ValidationError(f"manifest not found: {manifest_path}")
    records = []
    with open(manifest_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            warnings.warn(f"empty manifest: {manifest_path}")
            return []
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames)
        if missing:
            raise ValidationError(
                f"{manifest_path}: missing manifest column(s) {sorted(missing)}"
            )
        for lineno, row in enumerate(reader, start=2):
            sid = (row["subject_id"] or "").strip()
            if not sid:
                raise ValidationError(f"{manifest_path}:{lineno}: empty subject_id")
            raw_label = (row["label"] or "").strip()
            if raw_label not in ("0", "1"):
                raise ValidationError(
                    f"{manifest_path}:{lineno}: unknown label {raw_label!r} (want 0 or 1)"
                )
            site = (row["site_id"] or "").strip()
            if not site:
                raise ValidationError(f"{manifest_path}:{lineno}: empty site_id")
            ts_path = manifest_path.parent / (row["timeseries_path"] or "").strip()
            if not ts_path.exists():
                raise ValidationError(
                    f"{manifest_path}:{lineno}: time series file not found: {ts_path}"
                )
            ts = _read_numeric_csv(ts_path)
            if expected_r is not None and ts.shape[1] != expected_r:
                raise ValidationError(
                    f"{manifest_path}:{lineno}: subject {sid} has {ts.shape[1]} ROI "
                    f"columns, expected {expected_r}"
                )
            records.append(
                SubjectRecord(subject_id=sid, label=int(raw_label), site_id=site, timeseries=ts)
            )
    if not records:
        warnings.warn(f"empty manifest: {manifest_path}")
    return records


def load_profile_csv(path, subject_id: str, label: int, site_id: str) -> GraphSignal:
    """Ingest a precomputed R x R connectivity profile, bypassing Pearson."""
    features = _read_numeric_csv(Path(path))
    return GraphSignal(subject_id=subject_id, label=label, site_id=site_id, features=features)


def synth_atlas(r: int, seed: int = 0) -> RoiAtlas:
    """Random ROI coordinates in a 140 mm box, collision-free."""
    rng = np.random.default_rng(seed)
    while True:
        coords = rng.uniform(-70.0, 70.0, size=(r, 3)).round(3)
        if np.unique(coords, axis=0).shape[0] == r:
            return RoiAtlas(coords=coords)


def synth_cohort(
    n_subjects: int,
    r: int,
    t: int,
    effect: float,
    seed: int = 0,
    n_sites: int = 4,
    noise_scale: float = 1.0,
) -> list[SubjectRecord]:
    """Synthetic cohort with a controllable class effect and site gains.

    All subjects share a latent factor covariance. Class-1 subjects get
    extra pairwise couplings of strength `effect` on a fixed random set of
    ROI pairs (each coupling adds one shared latent source to both ROIs of
    the pair, so the perturbed covariance stays valid). Each site applies
    a multiplicative gain to the latent signal before white measurement
    noise is added, so signal-to-noise (and therefore the correlation
    profile) differs across sites. effect = 0 makes the two classes
    identically distributed.
    """
    if n_subjects % 2 != 0:
        raise ValidationError("n_subjects must be even (balanced classes)")
    if effect < 0:
        raise ValidationError("effect must be >= 0")
    rng = np.random.default_rng(seed)

    n_factors = max(3, r // 8)
    loading = rng.standard_normal((r, n_factors)) / np.sqrt(n_factors)

    # fixed random ROI pairs carrying the class effect
    n_pairs = max(4, r)
    iu, ju = np.triu_indices(r, k=1)
    pick = rng.choice(iu.size, size=min(n_pairs, iu.size), replace=False)
    pair_nodes = np.stack([iu[pick], ju[pick]], axis=1)
    pair_signs = rng.choice([-1.0, 1.0], size=pair_nodes.shape[0])
    amp = np.sqrt(effect)

    gains = rng.uniform(0.5, 1.5, size=n_sites)

    records = []
    for i in range(n_subjects):
        label = i % 2
        site = (i // 2) % n_sites
        z = rng.standard_normal((t, n_factors))
        signal = z @ loading.T
        if label == 1 and effect > 0:
            pair_latent = rng.standard_normal((t, pair_nodes.shape[0]))
            for p, (a, b) in enumerate(pair_nodes):
                signal[:, a] += amp * pair_latent[:, p]
                signal[:, b] += amp * pair_signs[p] * pair_latent[:, p]
        obs = gains[site] * signal + noise_scale * rng.standard_normal((t, r))
        records.append(
            SubjectRecord(
                subject_id=f"sub{i:04d}",
                label=label,
                site_id=f"site{site}",
                timeseries=obs,
            )
        )
    return records
