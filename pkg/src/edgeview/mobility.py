"""Vehicle trajectories and short-horizon distance prediction.

Trajectories are per-vehicle planar paths sampled on a 1 Hz slot grid.
They come from three sources: inline scenario data, recorded CSV traces
(optionally geodetic, projected to meters), or a seeded random-waypoint
generator.  Distance prediction fits a small 1-D Gaussian mixture to the
per-slot distance increments of a vehicle and extrapolates the increment
of the component that best explains the most recent observation.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6371000.0

#: per-component variance floor used by the mixture fit
VAR_FLOOR = 1e-6


@dataclass(frozen=True)
class Trajectory:
    """Planar positions of one vehicle on consecutive 1 s slots."""

    start_slot: int
    xy: np.ndarray  # shape (n, 2), meters

    def __post_init__(self) -> None:
        if self.xy.ndim != 2 or self.xy.shape[1] != 2 or len(self.xy) == 0:
            raise ValueError("trajectory needs an (n, 2) array with n >= 1")

    @property
    def end_slot(self) -> int:
        """Last slot (inclusive) at which the vehicle has a position."""
        return self.start_slot + len(self.xy) - 1

    def position(self, t: int) -> tuple[float, float] | None:
        """Position at slot t, or None when the vehicle is absent."""
        i = t - self.start_slot
        if i < 0 or i >= len(self.xy):
            return None
        return float(self.xy[i, 0]), float(self.xy[i, 1])


@dataclass(frozen=True)
class TrajectoryTable:
    """Trajectories keyed by vehicle id."""

    vehicles: dict[int, Trajectory]

    def __len__(self) -> int:
        return len(self.vehicles)


def _project_equirectangular(lon: np.ndarray, lat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project lon/lat degrees to planar meters about the bounding-box centroid."""
    lat0 = math.radians((float(lat.min()) + float(lat.max())) / 2.0)
    lon0 = math.radians((float(lon.min()) + float(lon.max())) / 2.0)
    x = EARTH_RADIUS_M * (np.radians(lon) - lon0) * math.cos(lat0)
    y = EARTH_RADIUS_M * (np.radians(lat) - lat0)
    return x, y


def load_trajectories(path: str, horizon: int | None = None) -> TrajectoryTable:
    """Read per-vehicle traces from CSV and resample them to the 1 s slot grid.

    The file must carry a header with either (vehicle_id, timestamp,
    longitude, latitude) or (vehicle_id, timestamp, x, y) columns.
    Geodetic coordinates are projected to meters.  Timestamps must be
    strictly increasing per vehicle; vehicles with a single sample are
    dropped with a warning.  Slot 1 is anchored at the earliest timestamp
    in the file; slots beyond ``horizon`` are discarded when given.
    """
    rows: dict[int, list[tuple[float, float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty trajectory file") from None
        cols = [c.strip().lower() for c in header]
        geodetic = "longitude" in cols and "latitude" in cols
        planar = "x" in cols and "y" in cols
        if not (geodetic or planar) or "vehicle_id" not in cols or "timestamp" not in cols:
            raise ValueError(
                f"{path}: header must name vehicle_id, timestamp and either "
                "longitude/latitude or x/y columns"
            )
        i_id = cols.index("vehicle_id")
        i_ts = cols.index("timestamp")
        i_a = cols.index("longitude" if geodetic else "x")
        i_b = cols.index("latitude" if geodetic else "y")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vid = int(row[i_id])
                ts = float(row[i_ts])
                a = float(row[i_a])
                b = float(row[i_b])
            except (ValueError, IndexError):
                raise ValueError(f"{path}: malformed row at line {line_no}: {row!r}") from None
            rows.setdefault(vid, []).append((ts, a, b))

    if not rows:
        raise ValueError(f"{path}: no data rows")

    for vid, samples in rows.items():
        ts = [s[0] for s in samples]
        if any(t1 <= t0 for t0, t1 in zip(ts, ts[1:])):
            raise ValueError(f"{path}: non-increasing timestamps for vehicle {vid}")

    if geodetic:
        all_lon = np.array([s[1] for samples in rows.values() for s in samples])
        all_lat = np.array([s[2] for samples in rows.values() for s in samples])
        lat0 = math.radians((float(all_lat.min()) + float(all_lat.max())) / 2.0)
        lon0 = math.radians((float(all_lon.min()) + float(all_lon.max())) / 2.0)

    anchor = math.floor(min(s[0] for samples in rows.values() for s in samples))
    vehicles: dict[int, Trajectory] = {}
    for vid in sorted(rows):
        samples = rows[vid]
        if len(samples) < 2:
            log.warning("vehicle %d has a single sample; dropped", vid)
            continue
        ts = np.array([s[0] for s in samples])
        a = np.array([s[1] for s in samples])
        b = np.array([s[2] for s in samples])
        if geodetic:
            x = EARTH_RADIUS_M * (np.radians(a) - lon0) * math.cos(lat0)
            y = EARTH_RADIUS_M * (np.radians(b) - lat0)
        else:
            x, y = a, b
        t_first = math.ceil(ts[0])
        t_last = math.floor(ts[-1])
        if t_last < t_first:
            log.warning("vehicle %d spans no full second; dropped", vid)
            continue
        grid = np.arange(t_first, t_last + 1, dtype=float)
        xi = np.interp(grid, ts, x)
        yi = np.interp(grid, ts, y)
        start = t_first - anchor + 1
        xy = np.column_stack([xi, yi])
        if horizon is not None:
            keep = min(len(xy), horizon - start + 1)
            if keep < 1:
                continue
            xy = xy[:keep]
        vehicles[vid] = Trajectory(start_slot=start, xy=xy)

    if not vehicles:
        raise ValueError(f"{path}: no usable vehicles after filtering")
    return TrajectoryTable(vehicles=vehicles)


def write_trajectories_csv(table: TrajectoryTable, path: str) -> None:
    """Write a table in the planar CSV schema accepted by load_trajectories."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vehicle_id", "timestamp", "x", "y"])
        for vid in sorted(table.vehicles):
            traj = table.vehicles[vid]
            for i, (x, y) in enumerate(traj.xy):
                writer.writerow([vid, traj.start_slot + i, repr(float(x)), repr(float(y))])


def _draw_law(rng: np.random.Generator, law: dict) -> float:
    kind = law.get("law", "constant")
    if kind == "constant":
        return float(law["value"])
    if kind == "normal":
        return float(rng.normal(law["mean"], law["std"]))
    if kind == "uniform":
        return float(rng.uniform(law["low"], law["high"]))
    raise ValueError(f"unknown law kind {kind!r}")


def synth_trajectories(
    n_vehicles: int,
    area_m: float,
    speed_law: dict,
    dwell_law: dict,
    horizon: int,
    seed: int,
) -> TrajectoryTable:
    """Random-waypoint walks inside an area_m x area_m square.

    Each vehicle dwells for a number of slots drawn from ``dwell_law``
    (clipped to the horizon) starting at a random entry slot, and moves
    toward uniformly drawn waypoints with a per-slot speed drawn from
    ``speed_law``.  Deterministic for a fixed seed.
    """
    if n_vehicles < 1:
        raise ValueError("n_vehicles must be >= 1")
    if area_m <= 0:
        raise ValueError("area_m must be positive")
    vehicles: dict[int, Trajectory] = {}
    for vid in range(n_vehicles):
        rng = np.random.default_rng([seed, 101, vid])
        dwell = max(2, min(horizon, int(round(_draw_law(rng, dwell_law)))))
        if dwell >= horizon:
            entry = 1
        else:
            entry = int(rng.integers(1, horizon - dwell + 2))
        pos = rng.uniform(0.0, area_m, size=2)
        target = rng.uniform(0.0, area_m, size=2)
        points = [pos.copy()]
        for _ in range(dwell - 1):
            budget = max(0.0, _draw_law(rng, speed_law))
            while budget > 0.0:
                vec = target - pos
                dist = float(np.hypot(vec[0], vec[1]))
                if dist <= budget:
                    pos = target.copy()
                    budget -= dist
                    target = rng.uniform(0.0, area_m, size=2)
                    if dist == 0.0:
                        break
                else:
                    pos = pos + vec * (budget / dist)
                    budget = 0.0
            points.append(pos.copy())
        vehicles[vid] = Trajectory(start_slot=entry, xy=np.array(points))
    return TrajectoryTable(vehicles=vehicles)


@dataclass(frozen=True)
class MobilityModel:
    """1-D Gaussian mixture over per-slot distance increments."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihoods: tuple[float, ...]
    last_increment: float

    @property
    def log_likelihood(self) -> float:
        return self.log_likelihoods[-1]


def _log_pdf(x: np.ndarray, mean: float, var: float) -> np.ndarray:
    return -0.5 * (math.log(2.0 * math.pi * var) + (x - mean) ** 2 / var)


def _mixture_log_resp(
    x: np.ndarray, weights: np.ndarray, means: np.ndarray, variances: np.ndarray
) -> tuple[np.ndarray, float]:
    """Log responsibilities (n, k) and total log-likelihood."""
    lp = np.log(weights)[None, :] + np.stack(
        [_log_pdf(x, means[j], variances[j]) for j in range(len(means))], axis=1
    )
    top = lp.max(axis=1, keepdims=True)
    norm = top[:, 0] + np.log(np.exp(lp - top).sum(axis=1))
    return lp - norm[:, None], float(norm.sum())


def em_fit(
    increments: np.ndarray,
    k: int = 2,
    tol: float = 1e-6,
    max_iter: int = 200,
    seed: int = 0,
    init: MobilityModel | None = None,
) -> MobilityModel:
    """Fit a k-component 1-D Gaussian mixture by expectation maximization.

    Stops when the log-likelihood gain drops below ``tol`` or after
    ``max_iter`` sweeps.  Variances never fall below VAR_FLOOR.  With
    fewer than 2k samples the fit falls back to a single Gaussian.  An
    existing model may be passed as ``init`` to warm-start the sweeps.
    """
    x = np.asarray(increments, dtype=float).ravel()
    n = len(x)
    if n == 0:
        raise ValueError("em_fit needs at least one increment")
    last = float(x[-1])

    if n < 2 * k:
        mean = float(x.mean())
        var = max(float(x.var()), VAR_FLOOR)
        ll = float(_log_pdf(x, mean, var).sum())
        return MobilityModel(
            weights=np.array([1.0]),
            means=np.array([mean]),
            variances=np.array([var]),
            log_likelihoods=(ll,),
            last_increment=last,
        )

    if init is not None and len(init.means) == k:
        weights = init.weights.copy()
        means = init.means.copy()
        variances = np.maximum(init.variances, VAR_FLOOR)
    else:
        rng = np.random.default_rng(seed)
        means = x[rng.choice(n, size=k, replace=False)].astype(float)
        spread = max(float(x.var()), VAR_FLOOR)
        variances = np.full(k, spread)
        weights = np.full(k, 1.0 / k)

    lls: list[float] = []
    for _ in range(max_iter):
        log_resp, ll = _mixture_log_resp(x, weights, means, variances)
        lls.append(ll)
        if len(lls) > 1 and lls[-1] - lls[-2] < tol:
            break
        resp = np.exp(log_resp)
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        weights = nk / n
        means = (resp * x[:, None]).sum(axis=0) / nk
        variances = (resp * (x[:, None] - means[None, :]) ** 2).sum(axis=0) / nk
        variances = np.maximum(variances, VAR_FLOOR)

    return MobilityModel(
        weights=weights,
        means=means,
        variances=variances,
        log_likelihoods=tuple(lls),
        last_increment=last,
    )


def predict_avg_distance(model: MobilityModel, distance_m: float, horizon: int) -> float:
    """Average predicted distance over the next ``horizon`` slots.

    The per-slot increment is the responsibility-weighted mean of the
    mixture components evaluated at the last observed increment; the
    extrapolated distance is floored at zero.
    """
    if horizon < 1:
        raise ValueError("prediction horizon must be >= 1")
    log_resp, _ = _mixture_log_resp(
        np.array([model.last_increment]), model.weights, model.means, model.variances
    )
    resp = np.exp(log_resp[0])
    if not np.all(np.isfinite(resp)):
        resp = model.weights
    inc = float((resp * model.means).sum())
    total = 0.0
    for i in range(1, horizon + 1):
        total += max(0.0, distance_m + i * inc)
    return total / horizon


@dataclass
class DistanceTracker:
    """Incremental per-vehicle distance history with a warm-started fit.

    The edge appends one distance observation per slot; the mixture is
    refreshed with a few EM sweeps every ``refit_every`` increments,
    reusing the previous parameters as the starting point.  Between
    refits the mixture is kept but predictions extrapolate from the
    newest increment.
    """

    k: int = 2
    refit_iters: int = 2
    refit_every: int = 1
    seed: int = 0
    _distances: list[float] = field(default_factory=list)
    _increments: list[float] = field(default_factory=list)
    _model: MobilityModel | None = None
    _fit_len: int = 0

    def append(self, distance_m: float) -> None:
        if self._distances:
            self._increments.append(distance_m - self._distances[-1])
        self._distances.append(distance_m)
        if not self._increments:
            return
        n = len(self._increments)
        expected = self.k if n >= 2 * self.k else 1
        shape_changed = self._model is None or len(self._model.means) != expected
        if not shape_changed and n - self._fit_len < self.refit_every:
            self._model = replace(self._model, last_increment=self._increments[-1])
            return
        x = np.array(self._increments)
        if shape_changed:
            self._model = em_fit(x, k=self.k, seed=self.seed)
        else:
            self._model = em_fit(
                x, k=self.k, max_iter=self.refit_iters, seed=self.seed, init=self._model
            )
        self._fit_len = n

    def predict_avg(self, horizon: int) -> float:
        """Average predicted distance; the current distance when history is short."""
        if not self._distances:
            raise ValueError("no observations yet")
        if self._model is None:
            return self._distances[-1]
        return predict_avg_distance(self._model, self._distances[-1], horizon)
