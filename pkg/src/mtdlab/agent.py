"""Deep Q-learning agent over the four MTD actions.

Epsilon-greedy selection, ring-buffer experience replay, temporal-difference
targets from a periodically synchronized target network, and Adam updates of
the online network. The loss gradient flows only through the taken action's
output head.
"""

import json
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .neural import Adam, Mlp, backward

FORMAT_VERSION = 1


class ActionId(IntEnum):
    """The four MTD techniques; the index mapping is fixed."""

    IP_SHUFFLING = 0
    RANSOMWARE_TRAP = 1
    FILE_RANDOMIZATION = 2
    LIBRARY_SANITATION = 3


N_ACTIONS = len(ActionId)

ACTION_LABELS = {
    ActionId.IP_SHUFFLING: "ip_shuffling",
    ActionId.RANSOMWARE_TRAP: "ransomware_trap",
    ActionId.FILE_RANDOMIZATION: "file_randomization",
    ActionId.LIBRARY_SANITATION: "library_sanitation",
}

_LABEL_TO_ACTION = {v: k for k, v in ACTION_LABELS.items()}


def action_label(action) -> str:
    return ACTION_LABELS[ActionId(action)]


def action_from_label(label: str) -> ActionId:
    try:
        return _LABEL_TO_ACTION[label]
    except KeyError:
        raise ValueError(f"unknown action label {label!r}") from None


@dataclass(frozen=True)
class Transition:
    """One replayed experience. An episode ends exactly when the reward is +1,
    so terminal and reward are locked together."""

    state: np.ndarray
    action: int
    reward: int
    next_state: np.ndarray
    terminal: bool

    def __post_init__(self):
        object.__setattr__(self, "state", np.asarray(self.state, dtype=np.float64))
        object.__setattr__(self, "next_state", np.asarray(self.next_state, dtype=np.float64))
        if self.reward not in (-1, 1):
            raise ValueError(f"reward must be -1 or +1, got {self.reward}")
        if self.terminal != (self.reward == 1):
            raise ValueError("terminal must hold exactly when the reward is +1")


class ReplayMemory:
    """Bounded ring of transitions; insertion beyond capacity evicts the oldest."""

    def __init__(self, capacity: int = 500):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._buf = deque(maxlen=capacity)

    def push(self, transition: Transition) -> None:
        self._buf.append(transition)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list:
        """Uniform sample without replacement within one batch."""
        if batch_size > len(self._buf):
            raise ValueError(f"cannot sample {batch_size} from {len(self._buf)} stored transitions")
        idx = rng.choice(len(self._buf), size=batch_size, replace=False)
        return [self._buf[i] for i in idx]

    def __len__(self) -> int:
        return len(self._buf)

    def __iter__(self):
        return iter(self._buf)


@dataclass
class ExplorationSchedule:
    """Epsilon after k learning updates: max(minimum, start - k*decay)."""

    start: float = 1.0
    decay: float = 1e-4
    minimum: float = 0.01
    updates: int = 0

    @property
    def epsilon(self) -> float:
        return max(self.minimum, self.start - self.updates * self.decay)

    def advance(self) -> None:
        self.updates += 1


@dataclass
class AgentConfig:
    gamma: float = 0.1
    batch_size: int = 100
    replay_capacity: int = 500
    replay_init: int = 100
    update_freq: int = 100
    max_episodes: int = 10000  # M
    max_steps: int = 10  # T, per episode
    learning_rate: float = 1e-4
    epsilon_start: float = 1.0
    epsilon_decay: float = 1e-4
    epsilon_min: float = 0.01
    state_dim: int = 46
    n_actions: int = N_ACTIONS
    hidden_sizes: tuple = (60, 30)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.batch_size > self.replay_capacity:
            raise ValueError("batch_size cannot exceed replay_capacity")
        self.hidden_sizes = tuple(self.hidden_sizes)

    def to_dict(self) -> dict:
        doc = dict(self.__dict__)
        doc["hidden_sizes"] = list(self.hidden_sizes)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "AgentConfig":
        doc = dict(doc)
        if "hidden_sizes" in doc:
            doc["hidden_sizes"] = tuple(doc["hidden_sizes"])
        return cls(**doc)


@dataclass
class QNetworkPair:
    """Online network plus its periodically synchronized frozen copy."""

    online: Mlp
    target: Mlp
    optimizer: Adam
    update_freq: int = 100
    updates: int = 0

    @classmethod
    def create(cls, state_dim, n_actions, hidden_sizes, learning_rate, rng, update_freq=100) -> "QNetworkPair":
        online = Mlp.initialize((state_dim, *hidden_sizes, n_actions), rng)
        return cls(online, online.copy(), Adam(learning_rate), update_freq)

    @property
    def n_actions(self) -> int:
        return self.online.layer_sizes[-1]

    def sync(self) -> None:
        self.target = self.online.copy()


@dataclass(frozen=True)
class LearnReport:
    loss: float
    epsilon: float
    synced: bool


def select_action(qnets: QNetworkPair, state, schedule: ExplorationSchedule, rng: np.random.Generator) -> int:
    """Epsilon-greedy: explore uniformly, otherwise argmax of the online net.

    Ties break toward the lowest action index.
    """
    if rng.random() < schedule.epsilon:
        return int(rng.integers(qnets.n_actions))
    q = qnets.online.predict(state)
    if not np.isfinite(q).all():
        raise ValueError(f"non-finite Q-values: {q}")
    return int(np.argmax(q))


def td_targets(batch, qnets: QNetworkPair, gamma: float) -> np.ndarray:
    """y_j = r_j for terminal transitions, else r_j + gamma * max_a Q_target."""
    if not batch:
        raise ValueError("empty batch")
    y = np.array([t.reward for t in batch], dtype=np.float64)
    nonterminal = ~np.array([t.terminal for t in batch], dtype=bool)
    if nonterminal.any():
        nxt = np.stack([t.next_state for t in batch if not t.terminal])
        y[nonterminal] += gamma * qnets.target.predict(nxt).max(axis=1)
    return y


def learn_step(
    qnets: QNetworkPair,
    memory: ReplayMemory,
    schedule: ExplorationSchedule,
    config: AgentConfig,
    rng: np.random.Generator,
) -> LearnReport:
    """One replayed gradient update of the online network.

    Squared TD error on the taken action only; advances the epsilon schedule
    and copies online to target every update_freq-th call.
    """
    batch = memory.sample(config.batch_size, rng)
    y = td_targets(batch, qnets, config.gamma)
    states = np.stack([t.state for t in batch])
    actions = np.array([t.action for t in batch], dtype=int)

    pred, cache = qnets.online.forward(states)
    rows = np.arange(len(batch))
    err = pred[rows, actions] - y
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise ValueError("non-finite learning loss")

    grad_out = np.zeros_like(pred)
    grad_out[rows, actions] = 2.0 * err / len(batch)
    grads = backward(qnets.online, cache, grad_out)
    qnets.optimizer.step(qnets.online.parameters(), grads)

    schedule.advance()
    qnets.updates += 1
    synced = qnets.updates % qnets.update_freq == 0
    if synced:
        qnets.sync()
    return LearnReport(loss, schedule.epsilon, synced)


def greedy_policy(qnets: QNetworkPair):
    """Deterministic argmax policy over a frozen snapshot of the online net."""
    snapshot = qnets.online.copy()

    def policy(state) -> int:
        q = snapshot.predict(state)
        if not np.isfinite(q).all():
            raise ValueError(f"non-finite Q-values: {q}")
        return int(np.argmax(q))

    return policy


def episode_return(rewards, gamma: float) -> float:
    """Discounted return of a reward sequence: sum_k gamma^k * rewards[k]."""
    return float(sum(r * gamma**k for k, r in enumerate(rewards)))


class DqnAgent:
    """Bundles networks, replay memory, exploration state, and the rng.

    Single-writer: select/record/learn mutate internal state and must not run
    concurrently on one instance.
    """

    def __init__(self, config: AgentConfig = None, rng: np.random.Generator = None, init_rng: np.random.Generator = None):
        self.config = config or AgentConfig()
        self.rng = rng if rng is not None else np.random.default_rng(self.config.seed)
        self.qnets = QNetworkPair.create(
            self.config.state_dim,
            self.config.n_actions,
            self.config.hidden_sizes,
            self.config.learning_rate,
            init_rng if init_rng is not None else self.rng,
            self.config.update_freq,
        )
        self.memory = ReplayMemory(self.config.replay_capacity)
        self.schedule = ExplorationSchedule(
            self.config.epsilon_start, self.config.epsilon_decay, self.config.epsilon_min
        )

    @property
    def ready_to_learn(self) -> bool:
        return len(self.memory) >= max(self.config.replay_init, self.config.batch_size)

    def select_action(self, state) -> int:
        return select_action(self.qnets, state, self.schedule, self.rng)

    def random_action(self) -> int:
        return int(self.rng.integers(self.config.n_actions))

    def record(self, transition: Transition) -> None:
        self.memory.push(transition)

    def learn(self) -> LearnReport:
        return learn_step(self.qnets, self.memory, self.schedule, self.config, self.rng)

    def greedy_policy(self):
        return greedy_policy(self.qnets)

    def save(self, path) -> None:
        save_agent(path, self.qnets, self.schedule, self.config)

    @classmethod
    def load(cls, path, rng: np.random.Generator = None) -> "DqnAgent":
        qnets, schedule, config = load_agent(path)
        agent = cls.__new__(cls)
        agent.config = config
        agent.rng = rng if rng is not None else np.random.default_rng(config.seed)
        agent.qnets = qnets
        agent.memory = ReplayMemory(config.replay_capacity)
        agent.schedule = schedule
        return agent


def save_agent(path, qnets: QNetworkPair, schedule: ExplorationSchedule, config: AgentConfig) -> None:
    """Checkpoint networks, optimizer state, and counters. Replay memory is
    deliberately ephemeral and not stored."""
    doc = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "online": qnets.online.to_dict(),
        "target": qnets.target.to_dict(),
        "optimizer": qnets.optimizer.to_dict(),
        "updates": qnets.updates,
        "schedule_updates": schedule.updates,
        "epsilon": schedule.epsilon,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_agent(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    config = AgentConfig.from_dict(doc["config"])
    qnets = QNetworkPair(
        online=Mlp.from_dict(doc["online"]),
        target=Mlp.from_dict(doc["target"]),
        optimizer=Adam.from_dict(doc["optimizer"]),
        update_freq=config.update_freq,
        updates=doc["updates"],
    )
    schedule = ExplorationSchedule(
        config.epsilon_start, config.epsilon_decay, config.epsilon_min, doc["schedule_updates"]
    )
    return qnets, schedule, config
