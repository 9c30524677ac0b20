"""Fingerprint data model and the offline feature pipeline.

A fingerprint is a fixed-order vector of event counts observed in one
monitoring window; datasets are 2-D float64 arrays with one fingerprint per
row. This module owns the schema describing feature order, z-score
normalization statistics, outlier removal, and the three-rule feature
selection (constant, unstable, highly correlated).
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError

FORMAT_VERSION = 1

FAMILIES = (
    "system_calls",
    "cpu",
    "device_drivers",
    "scheduler",
    "network",
    "file_system",
    "virtual_memory",
    "random_numbers",
)

# Synthetic 46-event default schema: plausible software/kernel tracepoint
# names spread over the eight behavioral families.
_DEFAULT_EVENTS = (
    ("raw_syscalls:sys_enter", "system_calls"),
    ("raw_syscalls:sys_exit", "system_calls"),
    ("syscalls:sys_enter_read", "system_calls"),
    ("syscalls:sys_enter_write", "system_calls"),
    ("syscalls:sys_enter_open", "system_calls"),
    ("syscalls:sys_enter_close", "system_calls"),
    ("syscalls:sys_enter_ioctl", "system_calls"),
    ("syscalls:sys_enter_mmap", "system_calls"),
    ("syscalls:sys_enter_futex", "system_calls"),
    ("syscalls:sys_enter_select", "system_calls"),
    ("cs", "cpu"),
    ("cpu-migrations", "cpu"),
    ("page-faults", "cpu"),
    ("minor-faults", "cpu"),
    ("major-faults", "cpu"),
    ("irq:irq_handler_entry", "device_drivers"),
    ("irq:irq_handler_exit", "device_drivers"),
    ("irq:softirq_entry", "device_drivers"),
    ("irq:softirq_exit", "device_drivers"),
    ("sched:sched_switch", "scheduler"),
    ("sched:sched_wakeup", "scheduler"),
    ("sched:sched_waking", "scheduler"),
    ("sched:sched_stat_runtime", "scheduler"),
    ("sched:sched_process_fork", "scheduler"),
    ("sched:sched_process_exec", "scheduler"),
    ("sched:sched_process_exit", "scheduler"),
    ("sched:sched_migrate_task", "scheduler"),
    ("net:net_dev_queue", "network"),
    ("net:net_dev_xmit", "network"),
    ("net:netif_rx", "network"),
    ("net:netif_receive_skb", "network"),
    ("sock:inet_sock_set_state", "network"),
    ("skb:consume_skb", "network"),
    ("ext4:ext4_da_write_begin", "file_system"),
    ("ext4:ext4_da_write_end", "file_system"),
    ("ext4:ext4_sync_file_enter", "file_system"),
    ("block:block_bio_queue", "file_system"),
    ("block:block_rq_issue", "file_system"),
    ("writeback:writeback_pages_written", "file_system"),
    ("kmem:kmalloc", "virtual_memory"),
    ("kmem:kfree", "virtual_memory"),
    ("kmem:mm_page_alloc", "virtual_memory"),
    ("kmem:mm_page_free", "virtual_memory"),
    ("vmscan:mm_vmscan_direct_reclaim_begin", "virtual_memory"),
    ("random:urandom_read", "random_numbers"),
    ("random:get_random_bytes", "random_numbers"),
)


@dataclass(frozen=True)
class FeatureSchema:
    """Canonical feature order, optionally tagged with behavioral families.

    Families are metadata; dataset CSV files carry names only, so schemas
    reconstructed from them have ``families=None``.
    """

    names: tuple
    families: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(set(self.names)) != len(self.names):
            raise DataError("feature names must be unique")
        if not self.names:
            raise DataError("schema must have at least one feature")
        if self.families is not None:
            object.__setattr__(self, "families", tuple(self.families))
            if len(self.families) != len(self.names):
                raise DataError("families must parallel names")
            bad = sorted(set(self.families) - set(FAMILIES))
            if bad:
                raise DataError(f"unknown behavioral families: {bad}")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def subset(self, keep_indices) -> "FeatureSchema":
        names = tuple(self.names[i] for i in keep_indices)
        families = None
        if self.families is not None:
            families = tuple(self.families[i] for i in keep_indices)
        return FeatureSchema(names, families)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "names": list(self.names),
            "families": list(self.families) if self.families is not None else None,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureSchema":
        fam = doc.get("families")
        return cls(tuple(doc["names"]), tuple(fam) if fam is not None else None)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def default_schema() -> FeatureSchema:
    """The built-in synthetic 46-feature schema."""
    names, families = zip(*_DEFAULT_EVENTS)
    return FeatureSchema(names, families)


@dataclass(frozen=True)
class NormStats:
    """Per-feature mean and sample standard deviation fit on normal data."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.ndim != 1 or std.shape != mean.shape:
            raise DataError("mean and std must be 1-D vectors of equal length")
        if np.any(std < 0):
            raise DataError("std must be non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def __len__(self) -> int:
        return self.mean.shape[0]

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NormStats":
        return cls(np.asarray(doc["mean"]), np.asarray(doc["std"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "NormStats":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _as_dataset(rows) -> np.ndarray:
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"dataset must be 2-D (rows x features), got shape {arr.shape}")
    return arr


def _check_finite(arr: np.ndarray) -> None:
    bad = np.argwhere(~np.isfinite(arr))
    if bad.size:
        i, j = bad[0]
        raise DataError(f"non-finite value at row {i}, feature {j}")


def fit_norm_stats(rows) -> NormStats:
    """Per-feature mean and sample (n-1) standard deviation of a raw dataset."""
    arr = _as_dataset(rows)
    if arr.shape[0] == 0:
        raise DataError("cannot fit normalization statistics on an empty dataset")
    _check_finite(arr)
    mean = arr.mean(axis=0)
    if arr.shape[0] == 1:
        std = np.zeros_like(mean)
    else:
        std = arr.std(axis=0, ddof=1)
    return NormStats(mean, std)


def normalize(fp, stats: NormStats):
    """Z-score a fingerprint or dataset; zero-variance features map to 0."""
    arr = np.asarray(fp, dtype=np.float64)
    if arr.shape[-1] != len(stats):
        raise DataError(
            f"fingerprint length {arr.shape[-1]} does not match stats length {len(stats)}"
        )
    centered = arr - stats.mean
    out = np.divide(
        centered,
        stats.std,
        out=np.zeros_like(centered),
        where=stats.std != 0,
    )
    return out


@dataclass(frozen=True)
class DroppedRow:
    """One row removed by outlier filtering, with its worst offending feature."""

    row: int
    feature: int
    z: float


def remove_outliers(rows, z_max: float = 3.0):
    """Drop rows whose z-score exceeds ``z_max`` in any feature.

    Z-scores are computed against the dataset's own fitted statistics, so the
    input may be raw or already normalized. Returns (kept rows, drop report).
    """
    if z_max <= 0:
        raise ValueError("z_max must be positive")
    arr = _as_dataset(rows)
    stats = fit_norm_stats(arr)
    z = normalize(arr, stats)
    offending = np.abs(z) > z_max
    dropped_mask = offending.any(axis=1)
    if dropped_mask.all():
        raise DataError(f"z_max={z_max} drops every row; filter is miscalibrated")
    report = []
    for i in np.nonzero(dropped_mask)[0]:
        j = int(np.argmax(np.abs(z[i])))
        report.append(DroppedRow(int(i), j, float(z[i, j])))
    return arr[~dropped_mask], report


@dataclass(frozen=True)
class Removal:
    """Audit entry for one feature removed by select_features."""

    name: str
    reason: str  # "constant" | "unstable" | "correlated"
    detail: str


def _coefficient_of_variation(x: np.ndarray) -> float:
    s = float(x.std(ddof=1))
    if s == 0.0:
        return 0.0
    m = abs(float(x.mean()))
    if m < 1e-12:
        return math.inf
    return s / m


def _is_unstable(col: np.ndarray, factor: float) -> bool:
    # Compares the coefficient of variation across contiguous thirds; a
    # feature whose spread drifts by more than `factor` between thirds is
    # considered unstable.
    n = col.shape[0]
    third = n // 3
    if third < 2:
        return False
    cvs = [
        _coefficient_of_variation(col[:third]),
        _coefficient_of_variation(col[third : 2 * third]),
        _coefficient_of_variation(col[2 * third :]),
    ]
    mx, mn = max(cvs), min(cvs)
    if mx == 0.0:
        return False
    if mn == 0.0:
        return True
    if math.isinf(mx):
        return not math.isinf(mn)
    return mx / mn > factor


def select_features(
    schema: FeatureSchema,
    rows,
    corr_threshold: float = 0.9,
    instability_factor: float = 5.0,
):
    """Prune constant, unstable, and highly correlated features.

    For every pair with |Pearson r| above the threshold the later-indexed
    feature is removed, so the result is deterministic and order-stable.
    Returns (reduced schema, audit list of removals).
    """
    if not 0.0 < corr_threshold < 1.0:
        raise ValueError("corr_threshold must lie in (0, 1)")
    arr = _as_dataset(rows)
    if arr.shape[1] != len(schema):
        raise DataError("dataset width does not match schema")
    if arr.shape[0] < 2:
        raise DataError("feature selection needs at least 2 rows")
    _check_finite(arr)

    d = arr.shape[1]
    keep = np.ones(d, dtype=bool)
    removals = []

    for j in range(d):
        if np.ptp(arr[:, j]) == 0.0:
            keep[j] = False
            removals.append(Removal(schema.names[j], "constant", f"value={arr[0, j]!r}"))

    for j in range(d):
        if keep[j] and _is_unstable(arr[:, j], instability_factor):
            keep[j] = False
            removals.append(
                Removal(
                    schema.names[j],
                    "unstable",
                    f"coefficient of variation drifts more than {instability_factor}x across thirds",
                )
            )

    candidates = [j for j in range(d) if keep[j]]
    if len(candidates) >= 2:
        corr = np.corrcoef(arr[:, candidates], rowvar=False)
        for a in range(len(candidates)):
            if not keep[candidates[a]]:
                continue
            for b in range(a + 1, len(candidates)):
                jb = candidates[b]
                if not keep[jb]:
                    continue
                r = corr[a, b]
                if abs(r) > corr_threshold:
                    keep[jb] = False
                    removals.append(
                        Removal(
                            schema.names[jb],
                            "correlated",
                            f"|r|={abs(r):.4f} with {schema.names[candidates[a]]}",
                        )
                    )

    kept_indices = [j for j in range(d) if keep[j]]
    if not kept_indices:
        raise DataError("feature selection removed every feature")
    return schema.subset(kept_indices), removals
