"""Online learning lifecycle and evaluation tables.

Each lifecycle round senses a fingerprint and gates it through the detector:
a normal verdict skips the round, an abnormal verdict triggers an episode of
act / sense afterstate / reward / learn until mitigation or the step cap.
Episode rewards come exclusively from detector verdicts; true labels are read
only by the evaluation functions.
"""

import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .agent import ActionId, DqnAgent, Transition, action_label, episode_return
from .detector import AutoencoderModel, classify, reward_of
from .env import NORMAL, afterstate_label

MOVING_AVG_WINDOW = 100

# A detector that never fires would spin the training loop forever; this cap
# turns that misconfiguration into a loud error.
_MAX_CONSECUTIVE_SKIPS = 100_000


@dataclass(frozen=True)
class StepRecord:
    state_label: str
    action: int
    reward: int


@dataclass
class EpisodeRecord:
    index: int
    start_label: str
    steps: list
    total_reward: int
    discounted_return: float
    mitigated: bool
    epsilon: float  # at episode start

    @property
    def skipped(self) -> bool:
        """True for rounds gated off by a normal verdict (zero steps)."""
        return not self.steps


@dataclass
class RunMetrics:
    records: list  # every round, gated skips included
    moving_avg: list  # aligned with records; None on skipped rows
    learn_updates: int
    duration_s: float

    @property
    def triggered(self) -> list:
        return [r for r in self.records if r.steps]

    @property
    def final_moving_avg(self) -> float:
        values = [m for m in self.moving_avg if m is not None]
        if not values:
            raise ValueError("run produced no triggered episodes")
        return values[-1]


def run_episode(env, model: AutoencoderModel, agent: DqnAgent, rng: np.random.Generator, index: int = 0) -> EpisodeRecord:
    """One lifecycle round.

    The detector gates the start: a normal verdict yields a zero-step record
    and no learning. Otherwise the agent acts until the detector reports
    normal (+1, terminal) or the step cap is hit. If the start was a detector
    false positive on truly normal behavior the episode still proceeds; an
    MTD on a clean device leaves it clean, so afterstates keep sampling
    normal behavior.
    """
    obs = env.reset(rng)
    epsilon0 = agent.schedule.epsilon
    if not classify(model, obs.fingerprint).abnormal:
        return EpisodeRecord(index, obs.true_label, [], 0, 0.0, False, epsilon0)

    steps = []
    rewards = []
    state = obs.fingerprint
    label = obs.true_label
    mitigated = False
    for _ in range(agent.config.max_steps):
        action = agent.select_action(state)
        if label == NORMAL:
            nxt = env.observe(NORMAL, rng)
        else:
            nxt = env.step(label, action, rng)
        reward = reward_of(classify(model, nxt.fingerprint))
        terminal = reward == 1
        agent.record(Transition(state, action, reward, nxt.fingerprint, terminal))
        if agent.ready_to_learn:
            agent.learn()
        steps.append(StepRecord(label, action, reward))
        rewards.append(reward)
        state = nxt.fingerprint
        label = nxt.true_label
        if terminal:
            mitigated = True
            break
    return EpisodeRecord(
        index,
        obs.true_label,
        steps,
        sum(rewards),
        episode_return(rewards, agent.config.gamma),
        mitigated,
        epsilon0,
    )


def prefill_replay(env, model: AutoencoderModel, agent: DqnAgent, rng: np.random.Generator) -> int:
    """Gather the initial replay transitions with a pure random policy.

    No learning happens and nothing is recorded in the run metrics.
    """
    pushed = 0
    skips = 0
    while len(agent.memory) < agent.config.replay_init:
        obs = env.reset(rng)
        if not classify(model, obs.fingerprint).abnormal:
            skips += 1
            if skips > _MAX_CONSECUTIVE_SKIPS:
                raise RuntimeError("detector never flags anything; cannot prefill replay")
            continue
        skips = 0
        state = obs.fingerprint
        label = obs.true_label
        for _ in range(agent.config.max_steps):
            action = agent.random_action()
            nxt = env.observe(NORMAL, rng) if label == NORMAL else env.step(label, action, rng)
            reward = reward_of(classify(model, nxt.fingerprint))
            terminal = reward == 1
            agent.record(Transition(state, action, reward, nxt.fingerprint, terminal))
            pushed += 1
            state = nxt.fingerprint
            label = nxt.true_label
            if terminal or len(agent.memory) >= agent.config.replay_init:
                break
    return pushed


def train(env, model: AutoencoderModel, agent: DqnAgent, episodes: int, rng: np.random.Generator) -> RunMetrics:
    """Pre-fill the replay memory, then run the given number of triggered
    episodes.

    Rounds gated off by a normal verdict are recorded (so the 80/20 start mix
    stays auditable) but do not count toward the episode budget, and the
    moving-average learning curve is computed over triggered episodes only.
    Fully deterministic for fixed (env, agent, rng) state.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    start = time.perf_counter()
    prefill_replay(env, model, agent, rng)

    records = []
    moving = []
    window = deque(maxlen=MOVING_AVG_WINDOW)
    triggered = 0
    consecutive_skips = 0
    updates_before = agent.qnets.updates
    index = 0
    while triggered < episodes:
        rec = run_episode(env, model, agent, rng, index=index)
        records.append(rec)
        index += 1
        if rec.skipped:
            moving.append(None)
            consecutive_skips += 1
            if consecutive_skips > _MAX_CONSECUTIVE_SKIPS:
                raise RuntimeError("detector never flags anything; training cannot progress")
        else:
            triggered += 1
            consecutive_skips = 0
            window.append(rec.total_reward)
            moving.append(float(np.mean(window)))
    return RunMetrics(
        records,
        moving,
        agent.qnets.updates - updates_before,
        time.perf_counter() - start,
    )


@dataclass(frozen=True)
class PolicyRow:
    behavior: str
    accuracy: float
    target_actions: tuple  # action labels


@dataclass(frozen=True)
class DetectorRow:
    behavior: str
    accuracy: float
    target: str  # "normal" | "abnormal"


def _policy_behaviors(env):
    """Attack and wrong-afterstate rows with their target action sets."""
    rows = []
    for attack in env.attacks:
        targets = env.mitigating(attack)
        rows.append((attack, targets))
        for act in ActionId:
            if act not in targets:
                rows.append((afterstate_label(attack, act), targets))
    return rows


def evaluate_policy(env, policy, n_per_behavior: int, rng: np.random.Generator) -> list:
    """Greedy-selection accuracy per attack and per attack+wrong-MTD row.

    Accuracy is the fraction of sampled fingerprints for which the policy
    picks any action in the base attack's mitigating set.
    """
    if n_per_behavior < 1:
        raise ValueError("n_per_behavior must be >= 1")
    rows = []
    for behavior, targets in _policy_behaviors(env):
        hits = 0
        for _ in range(n_per_behavior):
            obs = env.observe(behavior, rng)
            if ActionId(policy(obs.fingerprint)) in targets:
                hits += 1
        rows.append(
            PolicyRow(behavior, hits / n_per_behavior, tuple(sorted(action_label(a) for a in targets)))
        )
    return rows


def evaluate_detector(env, model: AutoencoderModel, n_per_behavior: int, rng: np.random.Generator) -> list:
    """Verdict accuracy per behavior, states and afterstates alike.

    Normal behavior and correct-MTD afterstates target "normal"; attacks and
    wrong-MTD afterstates target "abnormal".
    """
    if n_per_behavior < 1:
        raise ValueError("n_per_behavior must be >= 1")
    behaviors = [(NORMAL, NORMAL, "normal")]
    for attack in env.attacks:
        behaviors.append((attack, attack, "abnormal"))
        for act in ActionId:
            shown = afterstate_label(attack, act)
            if act in env.mitigating(attack):
                behaviors.append((shown, NORMAL, "normal"))
            else:
                behaviors.append((shown, shown, "abnormal"))
    rows = []
    for shown, sampled, target in behaviors:
        hits = 0
        for _ in range(n_per_behavior):
            obs = env.observe(sampled, rng)
            verdict = classify(model, obs.fingerprint)
            if verdict.label == target:
                hits += 1
        rows.append(DetectorRow(shown, hits / n_per_behavior, target))
    return rows


def write_metrics_csv(path, metrics: RunMetrics) -> None:
    """One row per lifecycle round; skipped rounds have zero steps and an
    empty moving average cell."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("index,start_label,steps,total_reward,discounted_return,mitigated,epsilon,moving_avg\n")
        for rec, mov in zip(metrics.records, metrics.moving_avg):
            fh.write(
                ",".join(
                    [
                        str(rec.index),
                        rec.start_label,
                        str(len(rec.steps)),
                        str(rec.total_reward),
                        repr(rec.discounted_return),
                        "true" if rec.mitigated else "false",
                        repr(rec.epsilon),
                        "" if mov is None else repr(mov),
                    ]
                )
                + "\n"
            )


def write_policy_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("behavior,accuracy,target_actions\n")
        for r in rows:
            fh.write(f"{r.behavior},{repr(r.accuracy)},{'|'.join(r.target_actions)}\n")


def write_detector_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("behavior,accuracy,target_state\n")
        for r in rows:
            fh.write(f"{r.behavior},{repr(r.accuracy)},{r.target}\n")


def format_policy_table(rows) -> str:
    """Pretty text table: behavior, greedy accuracy, target action set."""
    width = max(len("Behavior"), *(len(r.behavior) for r in rows))
    lines = [f"{'Behavior':<{width}}  {'Accuracy':>8}  Target Action"]
    lines.append("-" * len(lines[0]))
    for r in rows:
        lines.append(f"{r.behavior:<{width}}  {100 * r.accuracy:>7.2f}%  {', '.join(r.target_actions)}")
    return "\n".join(lines) + "\n"


def format_detector_table(rows) -> str:
    """Pretty text table: behavior, verdict accuracy, target state."""
    width = max(len("Behavior"), *(len(r.behavior) for r in rows))
    lines = [f"{'Behavior':<{width}}  {'Accuracy':>8}  Target State"]
    lines.append("-" * len(lines[0]))
    for r in rows:
        lines.append(f"{r.behavior:<{width}}  {100 * r.accuracy:>7.2f}%  {r.target}")
    return "\n".join(lines) + "\n"
