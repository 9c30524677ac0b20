"""Simulated single-board-computer environment.

Behavior profiles are diagonal Gaussians in normalized fingerprint space; MTD
actions move the device between profiles. A correct action always lands on
"normal"; a wrong one lands on the "attack+action" afterstate of the base
attack (wrong MTDs do not stack). A dataset-backed twin replays recorded
fingerprints under the same reset/step contract.
"""

import json
from dataclasses import dataclass

import numpy as np

from .agent import ActionId, action_from_label, action_label
from .errors import DataError
from .fingerprint import FeatureSchema

FORMAT_VERSION = 1

NORMAL = "normal"

ATTACKS = (
    "the_tick",
    "backdoor_jakoritar",
    "backdoor_dataleak",
    "beurk",
    "bdvl",
    "ransomware_poc",
)

# C&C malware is cut off by IP shuffling, rootkits by library sanitation,
# ransomware by either of its two file-level defenses.
DEFAULT_MITIGATIONS = {
    "the_tick": frozenset({ActionId.IP_SHUFFLING}),
    "backdoor_jakoritar": frozenset({ActionId.IP_SHUFFLING}),
    "backdoor_dataleak": frozenset({ActionId.IP_SHUFFLING}),
    "beurk": frozenset({ActionId.LIBRARY_SANITATION}),
    "bdvl": frozenset({ActionId.LIBRARY_SANITATION}),
    "ransomware_poc": frozenset({ActionId.RANSOMWARE_TRAP, ActionId.FILE_RANDOMIZATION}),
}

# The passive rootkit barely perturbs the device, so its profile sits almost
# on top of normal behavior.
DEFAULT_OVERLAP = {"beurk": 0.05}

DEFAULT_ATTACK_PROB = 0.2
DEFAULT_ATTACK_DISTANCE = 14.0
DEFAULT_AFTERSTATE_DISTANCE = 2.0


def base_attack(label: str) -> str:
    return label.split("+", 1)[0]


def afterstate_label(attack: str, action) -> str:
    return f"{attack}+{action_label(action)}"


def next_label(current_label: str, action, mitigations: dict) -> str:
    """Label transition shared by the simulated and recorded environments."""
    base = base_attack(current_label)
    if base not in mitigations:
        raise DataError(f"unknown behavior label {current_label!r}")
    if ActionId(action) in mitigations[base]:
        return NORMAL
    return afterstate_label(base, action)


@dataclass(frozen=True)
class BehaviorProfile:
    """Named diagonal Gaussian over normalized fingerprints."""

    label: str
    mean: np.ndarray
    std: np.ndarray
    mitigating_actions: frozenset = frozenset()

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.ndim != 1 or std.shape != mean.shape:
            raise DataError(f"profile {self.label!r}: mean and std must be equal-length vectors")
        if np.any(std < 0):
            raise DataError(f"profile {self.label!r}: std must be non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        object.__setattr__(self, "mitigating_actions", frozenset(ActionId(a) for a in self.mitigating_actions))


@dataclass(frozen=True)
class EnvObservation:
    """A sensed fingerprint plus the ground-truth label.

    The true label exists for evaluation and for the simulator itself; the
    agent and detector only ever receive the fingerprint.
    """

    fingerprint: np.ndarray
    true_label: str


def sample_fingerprint(profile: BehaviorProfile, rng: np.random.Generator) -> np.ndarray:
    """Independent per-feature Gaussian draw from a profile."""
    return profile.mean + profile.std * rng.standard_normal(profile.mean.shape[0])


def sample_rows(world: "SimWorld", label: str, n: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorized batch of n draws from one profile, e.g. to build a
    normal-behavior training dataset."""
    try:
        profile = world.profiles[label]
    except KeyError:
        raise DataError(f"unknown behavior label {label!r}") from None
    return profile.mean + profile.std * rng.standard_normal((n, profile.mean.shape[0]))


class _EnvBase:
    """Shared reset/step semantics; subclasses provide _draw(label, rng)."""

    attacks: tuple
    attack_prob: float
    _mitigations: dict

    def mitigating(self, attack: str) -> frozenset:
        try:
            return self._mitigations[base_attack(attack)]
        except KeyError:
            raise DataError(f"unknown behavior label {attack!r}") from None

    def observe(self, label: str, rng: np.random.Generator) -> EnvObservation:
        return EnvObservation(self._draw(label, rng), label)

    def reset(self, rng: np.random.Generator) -> EnvObservation:
        """Draw an episode start: normal with probability 1 - attack_prob,
        otherwise a uniformly random attack."""
        if rng.random() < self.attack_prob:
            label = self.attacks[rng.integers(len(self.attacks))]
        else:
            label = NORMAL
        return self.observe(label, rng)

    def step(self, current_label: str, action, rng: np.random.Generator) -> EnvObservation:
        """Deploy an MTD action against the current behavior.

        Stepping from "normal" is a caller error: there is nothing to
        mitigate.
        """
        if current_label == NORMAL:
            raise DataError("cannot step from the normal state")
        return self.observe(next_label(current_label, action, self._mitigations), rng)


class SimWorld(_EnvBase):
    """Immutable generative world over {normal} + attacks + wrong-MTD afterstates."""

    def __init__(self, profiles, attack_prob: float = DEFAULT_ATTACK_PROB, schema: FeatureSchema = None, seed: int = None):
        if not 0.0 <= attack_prob <= 1.0:
            raise DataError("attack_prob must lie in [0, 1]")
        by_label = {}
        for p in profiles:
            if p.label in by_label:
                raise DataError(f"duplicate profile label {p.label!r}")
            by_label[p.label] = p
        if NORMAL not in by_label:
            raise DataError('world must contain a "normal" profile')

        attacks = tuple(l for l in by_label if l != NORMAL and "+" not in l)
        mitigations = {}
        for a in attacks:
            actions = by_label[a].mitigating_actions
            if not actions:
                raise DataError(f"attack {a!r} has no mitigating action")
            mitigations[a] = actions

        dim = len(by_label[NORMAL].mean)
        for p in by_label.values():
            if len(p.mean) != dim:
                raise DataError(f"profile {p.label!r} dimension {len(p.mean)} != {dim}")
        if schema is not None and len(schema) != dim:
            raise DataError(f"schema length {len(schema)} does not match profile dimension {dim}")

        # Closure: every wrong action from every attack must land on a profile.
        for a in attacks:
            for act in ActionId:
                if act not in mitigations[a] and afterstate_label(a, act) not in by_label:
                    raise DataError(f"missing afterstate profile {afterstate_label(a, act)!r}")

        self.profiles = by_label
        self.attacks = attacks
        self.attack_prob = attack_prob
        self.schema = schema
        self.seed = seed
        self._mitigations = mitigations

    def _draw(self, label: str, rng: np.random.Generator) -> np.ndarray:
        try:
            profile = self.profiles[label]
        except KeyError:
            raise DataError(f"unknown behavior label {label!r}") from None
        return sample_fingerprint(profile, rng)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "schema": self.schema.to_dict() if self.schema is not None else None,
            "attack_prob": self.attack_prob,
            "seed": self.seed,
            "profiles": [
                {
                    "label": p.label,
                    "mean": p.mean.tolist(),
                    "std": p.std.tolist(),
                    "mitigating_actions": sorted(action_label(a) for a in p.mitigating_actions),
                }
                for p in self.profiles.values()
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SimWorld":
        profiles = [
            BehaviorProfile(
                p["label"],
                np.asarray(p["mean"]),
                np.asarray(p["std"]),
                frozenset(action_from_label(l) for l in p["mitigating_actions"]),
            )
            for p in doc["profiles"]
        ]
        schema = FeatureSchema.from_dict(doc["schema"]) if doc.get("schema") else None
        return cls(profiles, doc.get("attack_prob", DEFAULT_ATTACK_PROB), schema, doc.get("seed"))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SimWorld":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _unit_direction(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def default_world(
    schema: FeatureSchema,
    seed: int,
    overlap: dict = None,
    attack_prob: float = DEFAULT_ATTACK_PROB,
    attack_distance: float = DEFAULT_ATTACK_DISTANCE,
    afterstate_distance: float = DEFAULT_AFTERSTATE_DISTANCE,
) -> SimWorld:
    """Build the calibrated synthetic world: 1 normal + 6 attack + 17
    wrong-MTD afterstate profiles.

    Each attack sits ``overlap * attack_distance`` away from normal along a
    seeded random direction; afterstates add a smaller action-specific offset
    scaled by the same overlap knob, so near-normal attacks stay near-normal
    after a wrong MTD.
    """
    knobs = dict(DEFAULT_OVERLAP)
    knobs.update(overlap or {})
    dim = len(schema)
    rng = np.random.default_rng(seed)
    ones = np.ones(dim)

    profiles = [BehaviorProfile(NORMAL, np.zeros(dim), ones)]
    for attack in ATTACKS:
        knob = float(knobs.get(attack, 1.0))
        if not 0.0 <= knob <= 1.0:
            raise DataError(f"overlap knob for {attack!r} must lie in [0, 1], got {knob}")
        mean = knob * attack_distance * _unit_direction(rng, dim)
        profiles.append(BehaviorProfile(attack, mean, ones, DEFAULT_MITIGATIONS[attack]))
        for act in ActionId:
            if act in DEFAULT_MITIGATIONS[attack]:
                continue
            offset = knob * afterstate_distance * _unit_direction(rng, dim)
            profiles.append(BehaviorProfile(afterstate_label(attack, act), mean + offset, ones))
    return SimWorld(profiles, attack_prob, schema, seed)


class DatasetEnv(_EnvBase):
    """Environment that replays recorded fingerprints instead of sampling
    Gaussians; reset/step label semantics are identical to SimWorld."""

    def __init__(self, datasets: dict, mitigations: dict = None, attack_prob: float = DEFAULT_ATTACK_PROB):
        if not 0.0 <= attack_prob <= 1.0:
            raise DataError("attack_prob must lie in [0, 1]")
        mitigations = {
            a: frozenset(ActionId(x) for x in acts)
            for a, acts in (mitigations or DEFAULT_MITIGATIONS).items()
        }
        for a, acts in mitigations.items():
            if not acts:
                raise DataError(f"attack {a!r} has no mitigating action")
        required = {NORMAL} | set(mitigations)
        for a, acts in mitigations.items():
            for act in ActionId:
                if act not in acts:
                    required.add(afterstate_label(a, act))
        missing = sorted(required - set(datasets))
        if missing:
            raise DataError(f"datasets missing for labels: {missing}")

        self._rows = {}
        for label, rows in datasets.items():
            arr = np.asarray(rows, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[0] == 0:
                raise DataError(f"dataset for {label!r} must be a non-empty 2-D array")
            self._rows[label] = arr

        self.attacks = tuple(mitigations)
        self.attack_prob = attack_prob
        self._mitigations = mitigations

    def _draw(self, label: str, rng: np.random.Generator) -> np.ndarray:
        try:
            rows = self._rows[label]
        except KeyError:
            raise DataError(f"unknown behavior label {label!r}") from None
        return rows[rng.integers(rows.shape[0])].copy()
