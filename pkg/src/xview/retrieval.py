"""Distance matrices, recall@K, top-1% accuracy and geo-localization."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError, ParameterError
from .losses import DIST_EPS

EARTH_RADIUS_M = 6_371_000.0


@dataclass
class EmbeddingMatrix:
    """N embeddings with row identifiers."""

    ids: list[str]
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise DimensionError(f"embeddings must be 2-D, got shape {self.data.shape}")
        if len(self.ids) != self.data.shape[0]:
            raise DataError(
                f"{len(self.ids)} ids for {self.data.shape[0]} embedding rows")
        if len(set(self.ids)) != len(self.ids):
            dupes = sorted({i for i in self.ids if self.ids.count(i) > 1})
            raise DataError(f"duplicate embedding ids: {dupes[:5]}")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class GeoSample:
    id: str
    latitude: float
    longitude: float

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise DataError(f"latitude {self.latitude} out of range for {self.id!r}")
        if not -180.0 <= self.longitude <= 180.0:
            raise DataError(f"longitude {self.longitude} out of range for {self.id!r}")


@dataclass
class RecallReport:
    recall_at: dict[int, float] = field(default_factory=dict)
    top_one_percent: float = 0.0
    gallery_size: int = 0


def distance_matrix(queries: EmbeddingMatrix | np.ndarray,
                    references: EmbeddingMatrix | np.ndarray,
                    chunk: int = 256) -> np.ndarray:
    """Pairwise Euclidean distances (with the shared smoothing epsilon
    under the square root), N queries by M references."""
    q = queries.data if isinstance(queries, EmbeddingMatrix) else np.asarray(queries, float)
    r = references.data if isinstance(references, EmbeddingMatrix) else np.asarray(references, float)
    if q.ndim != 2 or r.ndim != 2 or q.shape[1] != r.shape[1]:
        raise DimensionError(
            f"embedding dims do not match: {q.shape} vs {r.shape}")
    out = np.empty((q.shape[0], r.shape[0]))
    for lo in range(0, q.shape[0], chunk):
        hi = min(lo + chunk, q.shape[0])
        diff = q[lo:hi, None, :] - r[None, :, :]
        out[lo:hi] = np.sqrt((diff * diff).sum(axis=2) + DIST_EPS)
    return out


def _gt_array(gt, n: int) -> np.ndarray:
    if isinstance(gt, dict):
        try:
            arr = np.array([gt[i] for i in range(n)], dtype=np.intp)
        except KeyError as exc:
            raise DataError(f"ground truth missing for query {exc.args[0]}") from exc
    else:
        arr = np.asarray(gt, dtype=np.intp)
        if arr.shape != (n,):
            raise DataError(f"ground truth must cover all {n} queries, got shape {arr.shape}")
    return arr


def _gt_ranks(dist: np.ndarray, gt) -> np.ndarray:
    """0-based rank of each query's true reference, ties broken by
    ascending reference index."""
    n, m = dist.shape
    gt = _gt_array(gt, n)
    if (gt < 0).any() or (gt >= m).any():
        raise DataError("ground-truth reference index out of range")
    d_true = dist[np.arange(n), gt]
    closer = (dist < d_true[:, None]).sum(axis=1)
    tied_before = ((dist == d_true[:, None]) &
                   (np.arange(m)[None, :] < gt[:, None])).sum(axis=1)
    return closer + tied_before


def recall_at_k(dist: np.ndarray, gt, k: int) -> float:
    """Fraction of queries whose true reference is among the k nearest."""
    dist = np.asarray(dist, dtype=np.float64)
    m = dist.shape[1]
    if not 1 <= k <= m:
        raise ParameterError(f"k must lie in [1, {m}], got {k}")
    ranks = _gt_ranks(dist, gt)
    return float((ranks < k).mean())


def top_one_percent(dist: np.ndarray, gt) -> float:
    """recall@K at K = ceil(M / 100), floored at 1."""
    dist = np.asarray(dist, dtype=np.float64)
    k = max(1, math.ceil(0.01 * dist.shape[1]))
    return recall_at_k(dist, gt, k)


def top_percent_k(gallery_size: int) -> int:
    return max(1, math.ceil(0.01 * gallery_size))


def recall_report(dist: np.ndarray, gt, ks=(1, 5, 10)) -> RecallReport:
    m = np.asarray(dist).shape[1]
    report = RecallReport(gallery_size=m)
    for k in ks:
        report.recall_at[int(k)] = recall_at_k(dist, gt, int(k))
    report.top_one_percent = top_one_percent(dist, gt)
    return report


def haversine_m(a: GeoSample, b: GeoSample) -> float:
    """Great-circle distance in meters (spherical Earth, R = 6371 km)."""
    lat1, lon1 = math.radians(a.latitude), math.radians(a.longitude)
    lat2, lon2 = math.radians(b.latitude), math.radians(b.longitude)
    s_lat = math.sin((lat2 - lat1) / 2.0)
    s_lon = math.sin((lon2 - lon1) / 2.0)
    h = s_lat * s_lat + math.cos(lat1) * math.cos(lat2) * s_lon * s_lon
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def geolocalize_curve(dist: np.ndarray, query_geos, ref_geos,
                      thresholds) -> list[tuple[float, float]]:
    """Accuracy of assigning each query the location of its top-1
    retrieved reference, per distance threshold in meters."""
    dist = np.asarray(dist, dtype=np.float64)
    n, m = dist.shape
    query_geos = list(query_geos)
    ref_geos = list(ref_geos)
    if len(query_geos) != n or len(ref_geos) != m:
        raise DataError(
            f"geo lists ({len(query_geos)}, {len(ref_geos)}) do not match "
            f"distance matrix {dist.shape}")
    for geo in query_geos + ref_geos:
        if geo is None or not isinstance(geo, GeoSample):
            raise DataError("every query and reference needs a GeoSample")
    top1 = dist.argmin(axis=1)  # first occurrence wins on ties
    err_m = np.array([haversine_m(query_geos[i], ref_geos[top1[i]]) for i in range(n)])
    return [(float(t), float((err_m <= t).mean())) for t in thresholds]


def write_recall_csv(path, report: RecallReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "recall"])
        for k in sorted(report.recall_at):
            w.writerow([k, f"{report.recall_at[k]:.6f}"])


def write_geo_csv(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold_m", "accuracy"])
        for t, acc in curve:
            w.writerow([f"{t:g}", f"{acc:.6f}"])
