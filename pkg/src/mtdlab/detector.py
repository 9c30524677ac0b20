"""Autoencoder anomaly detector: trains on normal behavior, calibrates a
reconstruction-error threshold, and turns verdicts into rewards.

The reward rule is fixed: a fingerprint reconstructed within the threshold is
normal and worth +1, anything above it is abnormal and worth -1.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .fingerprint import (
    FeatureSchema,
    NormStats,
    fit_norm_stats,
    normalize,
    remove_outliers,
)
from .neural import Mlp, SgdMomentum, backward, mse_grad, mse_loss

FORMAT_VERSION = 1


@dataclass
class DetectorConfig:
    """Published training recipe; every field can be overridden."""

    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-4
    momentum: float = 0.9
    train_fraction: float = 0.8
    z_max: float = 3.0
    hidden_sizes: tuple = (15, 7, 15)
    threshold_std_multiplier: float = 2.5
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "train_fraction": self.train_fraction,
            "z_max": self.z_max,
            "hidden_sizes": list(self.hidden_sizes),
            "threshold_std_multiplier": self.threshold_std_multiplier,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DetectorConfig":
        doc = dict(doc)
        if "hidden_sizes" in doc:
            doc["hidden_sizes"] = tuple(doc["hidden_sizes"])
        return cls(**doc)


@dataclass
class AutoencoderModel:
    """Reconstruction network plus the statistics it was trained under.

    ``tau`` stays None until calibrate_threshold() sets it; classification on
    an uncalibrated model is an error.
    """

    net: Mlp
    norm_stats: NormStats
    schema: FeatureSchema
    tau: float = None

    @property
    def calibrated(self) -> bool:
        return self.tau is not None


@dataclass(frozen=True)
class Verdict:
    reconstruction_mse: float
    abnormal: bool

    @property
    def label(self) -> str:
        return "abnormal" if self.abnormal else "normal"


@dataclass
class TrainResult:
    model: AutoencoderModel
    heldout: np.ndarray  # raw rows reserved for threshold calibration
    losses: list  # mean reconstruction MSE per epoch
    outliers_dropped: int


def train_autoencoder(rows, schema: FeatureSchema, config: DetectorConfig = None, rng=None) -> TrainResult:
    """Train the reconstruction network on normal-behavior data.

    Pipeline: seeded shuffle and train/held-out split, z-score statistics fit
    on the training split only, outlier removal on the training split only,
    then seeded mini-batch SGD-with-momentum on reconstruction MSE.
    """
    config = config or DetectorConfig()
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != len(schema):
        raise DataError(f"dataset shape {arr.shape} does not match schema of {len(schema)} features")
    if arr.shape[0] < config.batch_size:
        raise DataError(f"need at least batch_size={config.batch_size} rows, got {arr.shape[0]}")
    if rng is None:
        rng = np.random.default_rng(config.seed)

    perm = rng.permutation(arr.shape[0])
    n_train = max(1, int(round(config.train_fraction * arr.shape[0])))
    train_raw = arr[perm[:n_train]]
    heldout_raw = arr[perm[n_train:]]

    stats = fit_norm_stats(train_raw)
    train_norm = normalize(train_raw, stats)
    train_kept, drop_report = remove_outliers(train_norm, config.z_max)

    sizes = (len(schema), *config.hidden_sizes, len(schema))
    net = Mlp.initialize(sizes, rng)
    opt = SgdMomentum(config.learning_rate, config.momentum)

    losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(train_kept.shape[0])
        batch_losses = []
        for b, start in enumerate(range(0, train_kept.shape[0], config.batch_size)):
            batch = train_kept[order[start : start + config.batch_size]]
            out, cache = net.forward(batch)
            loss = mse_loss(out, batch)
            if not np.isfinite(loss):
                raise DataError(f"non-finite training loss at epoch {epoch}, batch {b}")
            grads = backward(net, cache, mse_grad(out, batch))
            opt.step(net.parameters(), grads)
            batch_losses.append(loss)
        losses.append(float(np.mean(batch_losses)))

    model = AutoencoderModel(net, stats, schema)
    return TrainResult(model, heldout_raw, losses, len(drop_report))


def reconstruction_mses(model: AutoencoderModel, rows) -> np.ndarray:
    """Per-row reconstruction MSE of raw fingerprints."""
    z = normalize(np.atleast_2d(np.asarray(rows, dtype=np.float64)), model.norm_stats)
    recon = model.net.predict(z)
    return np.mean((recon - z) ** 2, axis=1)


def threshold_from_mses(mses, multiplier: float = 2.5) -> float:
    """mean + multiplier * sample standard deviation of the given MSEs."""
    arr = np.asarray(mses, dtype=np.float64).ravel()
    if arr.shape[0] < 2:
        raise DataError("threshold calibration needs at least 2 reconstruction losses")
    return float(arr.mean() + multiplier * arr.std(ddof=1))


def calibrate_threshold(model: AutoencoderModel, heldout, multiplier: float = 2.5) -> float:
    """Set the abnormality threshold from held-out reconstruction losses."""
    heldout = np.atleast_2d(np.asarray(heldout, dtype=np.float64))
    if heldout.shape[0] < 2:
        raise DataError("threshold calibration needs at least 2 held-out rows")
    tau = threshold_from_mses(reconstruction_mses(model, heldout), multiplier)
    model.tau = tau
    return tau


def classify(model: AutoencoderModel, fp) -> Verdict:
    """Normal/abnormal verdict for one raw fingerprint.

    A reconstruction error exactly at the threshold counts as normal; only a
    strict exceedance trips the detector.
    """
    if not model.calibrated:
        raise ValueError("model has no threshold; run calibrate_threshold first")
    mse = float(reconstruction_mses(model, fp)[0])
    return Verdict(mse, mse > model.tau)


def reward_of(verdict: Verdict) -> int:
    return -1 if verdict.abnormal else 1


def save_detector(path, model: AutoencoderModel) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "net": model.net.to_dict(),
        "norm_stats": model.norm_stats.to_dict(),
        "schema": model.schema.to_dict(),
        "tau": model.tau,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_detector(path) -> AutoencoderModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return AutoencoderModel(
        net=Mlp.from_dict(doc["net"]),
        norm_stats=NormStats.from_dict(doc["norm_stats"]),
        schema=FeatureSchema.from_dict(doc["schema"]),
        tau=doc["tau"],
    )
