"""Network geometry, large-scale fading and user-centric AP selection.

All gains in a :class:`NetworkInstance` are noise-normalised: ``beta[m, k]``
is the linear path gain divided by the receiver noise power, so a transmit
power ``p`` in watts yields an SNR of ``p * beta[m, k]`` and every SINR
denominator carries a unit noise term.

Device and AP indices are zero-based throughout the package.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = 1

L_LS_DB = 140.7
D0_KM = 0.01
D1_KM = 0.05
BOLTZMANN = 1.381e-23
NOISE_TEMPERATURE = 290.0
NOISE_FIGURE_DB = 9.0
MIN_DISTANCE_KM = 0.001

# Fixed purpose ids for RNG sub-streams; never renumber.
_STREAMS = {"positions": 0, "fading": 1, "weights": 2, "shadowing": 3, "montecarlo": 4}


def substream(seed: int, purpose: str) -> np.random.Generator:
    """Return the generator for one purpose derived from a 64-bit master seed.

    The stream for ``purpose`` is ``SeedSequence(seed, spawn_key=(id,))`` with
    ``id`` taken from a fixed table, so adding draws to one purpose never
    perturbs another.
    """
    try:
        key = _STREAMS[purpose]
    except KeyError:
        raise ValueError(f"unknown RNG purpose {purpose!r}") from None
    ss = np.random.SeedSequence(int(seed) & 0xFFFF_FFFF_FFFF_FFFF, spawn_key=(key,))
    return np.random.default_rng(ss)


def path_loss_db(d):
    """Three-slope path loss in dB for a distance ``d`` in km.

    Branches: 35 dB/decade beyond 50 m, 20 dB/decade between 10 m and 50 m,
    and flat below 10 m.  Accepts scalars or arrays.
    """
    d_arr = np.asarray(d, dtype=float)
    if np.any(~(d_arr > 0)):
        raise ValueError("path_loss_db needs strictly positive distances")
    far = L_LS_DB + 35.0 * np.log10(d_arr)
    mid = L_LS_DB + 15.0 * math.log10(D1_KM) + 20.0 * np.log10(d_arr)
    near = L_LS_DB + 15.0 * math.log10(D1_KM) + 20.0 * math.log10(D0_KM)
    out = np.where(d_arr > D1_KM, far, np.where(d_arr > D0_KM, mid, near))
    return float(out) if out.ndim == 0 else out


def noise_power_watts(bandwidth: float) -> float:
    """Thermal noise power ``B k_B T_0`` including a 9 dB noise figure."""
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    return bandwidth * BOLTZMANN * NOISE_TEMPERATURE * 10.0 ** (NOISE_FIGURE_DB / 10.0)


def select_aps(beta_column, threshold: float) -> np.ndarray:
    """Serving set for one device: the shortest strongest-first prefix of APs
    whose share of the total gain reaches ``threshold``.

    Equal gains are ordered by lower AP index.  Returns ascending AP indices.
    """
    b = np.asarray(beta_column, dtype=float)
    if b.ndim != 1 or b.size == 0:
        raise ValueError("beta_column must be a non-empty vector")
    if np.any(~(b > 0)):
        raise ValueError("gains must be positive")
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    order = np.argsort(-b, kind="stable")
    share = np.cumsum(b[order])
    share /= share[-1]
    count = int(np.searchsorted(share, threshold, side="left")) + 1
    return np.sort(order[: min(count, b.size)])


def grid_positions(M: int, area_km: float) -> np.ndarray:
    """Centre points of a sqrt(M) x sqrt(M) grid covering a square area."""
    side = math.isqrt(M)
    if M < 1 or side * side != M:
        raise ValueError(f"M={M} is not a perfect square; pass ap_positions explicitly")
    spacing = area_km / side
    ticks = (np.arange(side) + 0.5) * spacing
    xx, yy = np.meshgrid(ticks, ticks, indexing="xy")
    return np.column_stack([xx.ravel(), yy.ravel()])


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NetworkInstance:
    """Immutable AP/device layout with gains and user-centric service sets."""

    ap_positions: np.ndarray
    device_positions: np.ndarray
    N: int
    beta: np.ndarray
    serving_aps: tuple
    threshold: float
    served_devices: tuple = field(init=False)

    def __post_init__(self):
        beta = _frozen(self.beta)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "ap_positions", _frozen(self.ap_positions))
        object.__setattr__(self, "device_positions", _frozen(self.device_positions))
        M, K = beta.shape
        if K < 1:
            raise ValueError("instance needs at least one device")
        if np.any(~(beta > 0)):
            raise ValueError("all large-scale gains must be positive")
        if len(self.serving_aps) != K:
            raise ValueError("serving_aps must have one entry per device")
        serving = tuple(tuple(sorted(int(m) for m in s)) for s in self.serving_aps)
        if any(len(s) == 0 for s in serving):
            raise ValueError("every device needs at least one serving AP")
        object.__setattr__(self, "serving_aps", serving)
        served = [[] for _ in range(M)]
        for k, aps in enumerate(serving):
            for m in aps:
                served[m].append(k)
        object.__setattr__(self, "served_devices", tuple(tuple(u) for u in served))

    @property
    def M(self) -> int:
        return self.beta.shape[0]

    @property
    def K(self) -> int:
        return self.beta.shape[1]

    @property
    def service_mask(self) -> np.ndarray:
        """Boolean [M, K] matrix, True where AP m serves device k."""
        mask = np.zeros((self.M, self.K), dtype=bool)
        for k, aps in enumerate(self.serving_aps):
            mask[list(aps), k] = True
        return mask

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "ap_positions": self.ap_positions.tolist(),
            "device_positions": self.device_positions.tolist(),
            "N": self.N,
            "beta": self.beta.tolist(),
            "serving_aps": [list(s) for s in self.serving_aps],
            "served_devices": [list(u) for u in self.served_devices],
            "threshold": self.threshold,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkInstance":
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported instance schema version {version!r}")
        inst = cls(
            ap_positions=np.asarray(doc["ap_positions"], dtype=float).reshape(-1, 2),
            device_positions=np.asarray(doc["device_positions"], dtype=float).reshape(-1, 2),
            N=int(doc["N"]),
            beta=np.asarray(doc["beta"], dtype=float),
            serving_aps=tuple(tuple(s) for s in doc["serving_aps"]),
            threshold=float(doc["threshold"]),
        )
        if "served_devices" in doc:
            given = tuple(tuple(sorted(u)) for u in doc["served_devices"])
            if given != inst.served_devices:
                raise ValueError("served_devices is not the transpose of serving_aps")
        return inst

    @classmethod
    def from_json(cls, text: str) -> "NetworkInstance":
        return cls.from_dict(json.loads(text))

    def fingerprint(self) -> str:
        """Short content hash, used to check that baselines share an instance."""
        import hashlib

        h = hashlib.sha256()
        h.update(self.beta.tobytes())
        h.update(repr(self.serving_aps).encode())
        h.update(str(self.N).encode())
        return h.hexdigest()[:16]


def generate_instance(
    seed: int,
    M: int = 16,
    K: int = 20,
    N: int = 9,
    area_km: float = 0.2,
    threshold: float = 0.75,
    *,
    ap_positions=None,
    bandwidth: float = 1e6,
    shadowing_db: float | None = None,
) -> NetworkInstance:
    """Draw a random network.

    APs sit on a uniform grid (or at ``ap_positions``), devices are uniform
    over the square, and gains follow the three-slope model on horizontal
    distance.  ``shadowing_db`` adds i.i.d. log-normal shadowing with that
    standard deviation; it is off by default.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if ap_positions is None:
        aps = grid_positions(M, area_km)
    else:
        aps = np.asarray(ap_positions, dtype=float).reshape(-1, 2)
        M = aps.shape[0]
    rng = substream(seed, "positions")
    devices = rng.uniform(0.0, area_km, size=(K, 2))
    dist = np.linalg.norm(aps[:, None, :] - devices[None, :, :], axis=-1)
    dist = np.maximum(dist, MIN_DISTANCE_KM)
    pl_db = path_loss_db(dist)
    if shadowing_db:
        pl_db = pl_db + substream(seed, "shadowing").normal(0.0, shadowing_db, size=pl_db.shape)
    beta = 10.0 ** (-pl_db / 10.0) / noise_power_watts(bandwidth)
    serving = tuple(tuple(select_aps(beta[:, k], threshold)) for k in range(K))
    return NetworkInstance(aps, devices, int(N), beta, serving, float(threshold))


@dataclass(frozen=True, eq=False)
class PowerBudget:
    """Per-device pilot power caps and per-AP total downlink caps, in watts."""

    pilot_max: np.ndarray
    ap_max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pilot_max", _frozen(self.pilot_max))
        object.__setattr__(self, "ap_max", _frozen(self.ap_max))

    @classmethod
    def uniform(cls, instance: NetworkInstance, pilot_max: float = 0.1, ap_max: float = 0.2):
        return cls(np.full(instance.K, pilot_max), np.full(instance.M, ap_max))


@dataclass(frozen=True, eq=False)
class PowerProfile:
    """Pilot powers [K] and downlink powers [M, K] in watts.

    ``downlink[m, k]`` is zero unless AP ``m`` serves device ``k``.
    """

    pilot: np.ndarray
    downlink: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pilot", _frozen(self.pilot))
        object.__setattr__(self, "downlink", _frozen(self.downlink))

    def cap_slack(self, instance: NetworkInstance, budget: PowerBudget) -> tuple[float, float]:
        """Smallest relative slack of the pilot and the per-AP caps (negative if violated)."""
        pilot = float(np.min(1.0 - self.pilot / budget.pilot_max))
        ap_load = (self.downlink * instance.service_mask).sum(axis=1)
        ap = float(np.min(1.0 - ap_load / budget.ap_max))
        return pilot, ap

    def to_dict(self) -> dict:
        return {"pilot": self.pilot.tolist(), "downlink": self.downlink.tolist()}


def equal_power_profile(instance: NetworkInstance, budget: PowerBudget) -> PowerProfile:
    """Full pilot power and each AP's budget split evenly over its devices."""
    mask = instance.service_mask
    load = mask.sum(axis=1)
    share = np.divide(budget.ap_max, load, out=np.zeros(instance.M), where=load > 0)
    return PowerProfile(budget.pilot_max.copy(), mask * share[:, None])
