"""Exact checks of the occupancy-measure value bounds on finite models.

Everything here is dense linear algebra on small tabular MDPs/POMDPs:
occupancies and values come from linear solves, divergences are evaluated in
closed form, and each bound is checked with a fixed slack tolerance.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import rel_entr

from .envs.tabular import (
    TabularMDP,
    TabularPOMDP,
    perturb_transition,
    random_pomdp,
    random_stochastic,
    random_tabular,
)

TOL = 1e-9
DIST_TOL = 1e-9


# ---------------------------------------------------------------------------
# basic quantities


def check_policy(policy: np.ndarray, mdp: TabularMDP) -> np.ndarray:
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy shape {policy.shape} != {(mdp.n_states, mdp.n_actions)}")
    if np.any(policy < 0) or np.max(np.abs(policy.sum(axis=1) - 1.0)) > 1e-12:
        raise ValueError("policy rows must be probability vectors")
    return policy


def policy_transition(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """State-to-state kernel ``P_pi[s, s'] = sum_a pi(a|s) T(s'|s,a)``."""
    return np.einsum("sa,sat->st", policy, mdp.transition)


def state_occupancy(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    policy = check_policy(policy, mdp)
    p = policy_transition(mdp, policy)
    a = np.eye(mdp.n_states) - mdp.gamma * p.T
    b = (1.0 - mdp.gamma) * mdp.initial
    try:
        d = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"occupancy system is singular: {exc}") from None
    return d


def occupancy(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """Normalized discounted state-action visitation ``rho[s, a]``."""
    d = state_occupancy(mdp, policy)
    return d[:, None] * np.asarray(policy)


def occupancy_residual(mdp: TabularMDP, policy: np.ndarray, rho: np.ndarray) -> float:
    d = rho.sum(axis=1)
    p = policy_transition(mdp, policy)
    return float(np.max(np.abs(d - (1.0 - mdp.gamma) * mdp.initial - mdp.gamma * p.T @ d)))


def state_values(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    policy = check_policy(policy, mdp)
    p = policy_transition(mdp, policy)
    r = np.sum(policy * mdp.reward, axis=1)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p, r)


def exact_value(mdp: TabularMDP, policy: np.ndarray) -> float:
    """Expected discounted return from the initial distribution."""
    return float(mdp.initial @ state_values(mdp, policy))


def occupancy_value(mdp: TabularMDP, policy: np.ndarray) -> float:
    """The same return written as ``<rho, r> / (1 - gamma)``."""
    return float(np.sum(occupancy(mdp, policy) * mdp.reward) / (1.0 - mdp.gamma))


def _check_distribution(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < -DIST_TOL) or abs(p.sum() - 1.0) > DIST_TOL:
        raise ValueError(f"{name} is not a probability distribution (sum={p.sum():.12f})")
    return p


def tv_distance(p, q) -> float:
    """Total variation ``0.5 * sum |p - q|`` between two distributions of equal shape."""
    p = _check_distribution(p, "p")
    q = _check_distribution(q, "q")
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    return float(min(1.0, 0.5 * np.abs(p - q).sum()))


def kl_divergence(p, q) -> float:
    p = _check_distribution(p, "p")
    q = _check_distribution(q, "q")
    return float(np.sum(rel_entr(p, q)))


def _tv_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 0.5 * np.abs(a - b).sum(axis=-1)


def _kl_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return rel_entr(a, b).sum(axis=-1)


def soft_optimal_policy(mdp: TabularMDP, temperature: float = 0.1, tol: float = 1e-12,
                        max_iter: int = 100_000) -> np.ndarray:
    """``softmax(Q* / temperature)`` with Q* from value iteration."""
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        q_new = mdp.reward + mdp.gamma * mdp.transition @ q.max(axis=1)
        if np.max(np.abs(q_new - q)) < tol:
            q = q_new
            break
        q = q_new
    z = (q - q.max(axis=1, keepdims=True)) / temperature
    pi = np.exp(z)
    return pi / pi.sum(axis=1, keepdims=True)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int) -> np.ndarray:
    return random_stochastic(rng, (n_states, n_actions))


# ---------------------------------------------------------------------------
# bound entries


@dataclass
class BoundEntry:
    instance: str
    lhs: float
    terms: dict[str, float]
    checks: dict[str, bool] = field(default_factory=dict)
    info: dict[str, float] = field(default_factory=dict)

    @property
    def rhs(self) -> float:
        return float(sum(self.terms.values()))

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs + TOL and all(self.checks.values())


@dataclass
class BoundReport:
    name: str
    entries: list[BoundEntry] = field(default_factory=list)

    @property
    def n_failed(self) -> int:
        return sum(not e.passed for e in self.entries)

    @property
    def passed(self) -> bool:
        return self.n_failed == 0

    @property
    def min_slack(self) -> float:
        return min((e.slack for e in self.entries), default=float("nan"))

    def summary(self) -> str:
        return (f"{self.name}: {len(self.entries)} instances, {self.n_failed} violations, "
                f"min slack {self.min_slack:.3e}")

    def write_csv(self, path) -> None:
        term_keys = sorted({k for e in self.entries for k in e.terms})
        check_keys = sorted({k for e in self.entries for k in e.checks})
        info_keys = sorted({k for e in self.entries for k in e.info})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["instance", "lhs", *term_keys, "rhs", "slack", *check_keys,
                        *info_keys, "pass"])
            for e in self.entries:
                w.writerow([e.instance, repr(e.lhs), *(repr(e.terms.get(k, 0.0)) for k in term_keys),
                            repr(e.rhs), repr(e.slack), *(int(e.checks.get(k, True)) for k in check_keys),
                            *(repr(e.info.get(k, float("nan"))) for k in info_keys),
                            int(e.passed)])


def verify_prop1(mdp: TabularMDP, policy, other_policy, other_mdp: TabularMDP,
                 instance: str = "") -> BoundEntry:
    """|V(pi, M) - V(pi', M')| <= 2 Rmax / (1-gamma) * TV(rho(pi, M), rho(pi', M'))."""
    if (other_mdp.n_states, other_mdp.n_actions) != (mdp.n_states, mdp.n_actions):
        raise ValueError("both MDPs must share state and action spaces")
    if other_mdp.gamma != mdp.gamma or not np.array_equal(other_mdp.reward, mdp.reward):
        raise ValueError("both MDPs must share gamma and rewards")
    rho = occupancy(mdp, policy)
    rho2 = occupancy(other_mdp, other_policy)
    lhs = abs(exact_value(mdp, policy) - exact_value(other_mdp, other_policy))
    scale = 2.0 * mdp.r_max / (1.0 - mdp.gamma)
    return BoundEntry(instance, lhs, {"distribution_matching": scale * tv_distance(rho, rho2)},
                      info={"occupancy_mass": float(rho.sum())})


def model_mismatch(true_mdp: TabularMDP, model_mdp: TabularMDP, policy) -> float:
    """E_{rho(pi, model)}[TV(T(.|s,a), T_hat(.|s,a))]."""
    rho_hat = occupancy(model_mdp, policy)
    return float(np.sum(rho_hat * _tv_rows(true_mdp.transition, model_mdp.transition)))


def verify_thm1(mdp: TabularMDP, model_mdp: TabularMDP, expert, policy,
                instance: str = "") -> BoundEntry:
    """Expert-gap bound: distribution matching in the model plus model mismatch.

    Also checks the simulation-lemma step
    ``|V(pi, M_hat) - V(pi, M)| <= gamma Rmax / (1-gamma)^2 * E[TV]``.
    """
    if model_mdp.transition.shape != mdp.transition.shape:
        raise ValueError(f"state/action spaces differ: {mdp.transition.shape} vs "
                         f"{model_mdp.transition.shape}")
    if model_mdp.gamma != mdp.gamma or not np.array_equal(model_mdp.reward, mdp.reward) \
            or not np.array_equal(model_mdp.initial, mdp.initial):
        raise ValueError("true and model MDP may differ only in their transitions")
    g, rmax = mdp.gamma, mdp.r_max
    v_expert = exact_value(mdp, expert)
    v_pi = exact_value(mdp, policy)
    v_pi_model = exact_value(model_mdp, policy)
    rho_pi_model = occupancy(model_mdp, policy)
    rho_expert = occupancy(mdp, expert)
    dm = 2.0 * rmax / (1.0 - g) * tv_distance(rho_pi_model, rho_expert)
    mm_raw = float(np.sum(rho_pi_model * _tv_rows(mdp.transition, model_mdp.transition)))
    mm = g * rmax / (1.0 - g) ** 2 * mm_raw
    sim_lhs = abs(v_pi_model - v_pi)
    return BoundEntry(
        instance,
        abs(v_expert - v_pi),
        {"distribution_matching": dm, "model_mismatch": mm},
        checks={"simulation_lemma": sim_lhs <= mm + TOL},
        info={"simulation_lemma_lhs": sim_lhs, "simulation_lemma_slack": mm - sim_lhs,
              "tv_occupancy": dm * (1.0 - g) / (2.0 * rmax), "expected_tv_transition": mm_raw},
    )


# ---------------------------------------------------------------------------
# POMDP one-step observation prediction


def filter_belief(pomdp: TabularPOMDP, observations, actions) -> np.ndarray:
    """Exact posterior over ``s_t`` given ``x_0..x_t`` and ``a_0..a_{t-1}``.

    Raises ``ValueError`` if the history has zero probability under ``pomdp``.
    """
    mdp, u = pomdp.mdp, pomdp.observation
    b = mdp.initial * u[:, observations[0]]
    for k in range(1, len(observations)):
        z = b.sum()
        if z <= 0.0:
            raise ValueError(f"history has zero probability at step {k - 1}")
        b = (b / z) @ mdp.transition[:, actions[k - 1], :]
        b = b * u[:, observations[k]]
    z = b.sum()
    if z <= 0.0:
        raise ValueError(f"history has zero probability at step {len(observations) - 1}")
    return b / z


def predict_observation(pomdp: TabularPOMDP, belief: np.ndarray, action: int) -> np.ndarray:
    return belief @ pomdp.mdp.transition[:, action, :] @ pomdp.observation


def verify_thm2(pomdp: TabularPOMDP, other: TabularPOMDP, observations, actions,
                instance: str = "") -> list[BoundEntry]:
    """Next-observation divergence vs. latent transition divergence.

    ``observations`` is ``x_0..x_t`` and ``actions`` is ``a_0..a_t`` (the last
    action is the one being predicted through).  Both predictive
    distributions are formed from the belief filtered under ``pomdp``; the
    right side is the belief-weighted transition divergence at ``a_t``.
    Returns one entry per divergence (``tv`` and ``kl``).  The TV entry also
    checks the max over supported states, and both record the gap obtained
    when each model filters its own belief (diagnostic only).
    """
    observations = [int(x) for x in observations]
    actions = [int(a) for a in actions]
    if len(actions) != len(observations):
        raise ValueError("need one action per observation (a_t included)")
    if pomdp.mdp.transition.shape != other.mdp.transition.shape or \
            not np.array_equal(pomdp.observation, other.observation) or \
            not np.array_equal(pomdp.mdp.initial, other.mdp.initial):
        raise ValueError("the two POMDPs may differ only in their transitions")
    b = filter_belief(pomdp, observations, actions)
    b_other = filter_belief(other, observations, actions)
    a = actions[-1]
    t_rows = pomdp.mdp.transition[:, a, :]
    t_rows_other = other.mdp.transition[:, a, :]
    p = predict_observation(pomdp, b, a)
    q_shared = predict_observation(other, b, a)
    q_own = predict_observation(other, b_other, a)
    support = b > 0
    out = []
    for name, div_rows, div in (("tv", _tv_rows, tv_distance), ("kl", _kl_rows, kl_divergence)):
        row_div = div_rows(t_rows, t_rows_other)
        rhs_avg = float(np.sum(b[support] * row_div[support]))
        rhs_max = float(np.max(row_div[support]))
        lhs = div(p, q_shared)
        checks = {}
        if name == "tv":
            checks["supported_max"] = lhs <= rhs_max + TOL
        out.append(BoundEntry(
            f"{instance}:{name}", lhs, {"transition_divergence": rhs_avg}, checks=checks,
            info={"rhs_supported_max": rhs_max, "lhs_separate_filters": div(p, q_own)},
        ))
    return out


# ---------------------------------------------------------------------------
# suites


def prop1_suite(n: int = 1000, seed: int = 0, max_states: int = 8, max_actions: int = 4) -> BoundReport:
    report = BoundReport("prop1")
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        s, a = int(rng.integers(1, max_states + 1)), int(rng.integers(1, max_actions + 1))
        gamma = float(rng.uniform(0.5, 0.99))
        mdp = random_tabular(int(rng.integers(2**31)), s, a, gamma)
        other = mdp.with_transition(perturb_transition(rng, mdp.transition, rng.uniform(0, 1)))
        entry = verify_prop1(mdp, random_policy(rng, s, a), random_policy(rng, s, a), other,
                             instance=f"prop1-{i}")
        report.entries.append(entry)
    return report


def thm1_suite(n: int = 1000, seed: int = 0, rates=(0.01, 0.1, 0.3), max_states: int = 8,
               max_actions: int = 4) -> BoundReport:
    report = BoundReport("thm1")
    for i in range(n):
        rng = np.random.default_rng([seed, i, 1])
        rate = rates[i % len(rates)]
        s, a = int(rng.integers(1, max_states + 1)), int(rng.integers(1, max_actions + 1))
        gamma = float(rng.uniform(0.5, 0.99))
        mdp = random_tabular(int(rng.integers(2**31)), s, a, gamma)
        model = mdp.with_transition(perturb_transition(rng, mdp.transition, rate))
        expert = soft_optimal_policy(mdp)
        mix = rng.uniform()
        policy = mix * expert + (1.0 - mix) * random_policy(rng, s, a)
        entry = verify_thm1(mdp, model, expert, policy, instance=f"thm1-{i}-eta{rate}")
        report.entries.append(entry)
    return report


def sample_history(pomdp: TabularPOMDP, length: int, rng: np.random.Generator):
    """Simulate ``length`` observations and actions (uniform random actions)."""
    mdp, u = pomdp.mdp, pomdp.observation
    s = rng.choice(mdp.n_states, p=mdp.initial)
    obs, acts = [], []
    for k in range(length):
        obs.append(int(rng.choice(pomdp.n_obs, p=u[s])))
        acts.append(int(rng.integers(mdp.n_actions)))
        if k < length - 1:
            s = rng.choice(mdp.n_states, p=mdp.transition[s, acts[-1]])
    return obs, acts


def thm2_suite(n: int = 500, seed: int = 0, max_states: int = 5, max_obs: int = 4,
               max_actions: int = 3, max_history: int = 3) -> BoundReport:
    report = BoundReport("thm2")
    for i in range(n):
        rng = np.random.default_rng([seed, i, 2])
        s = int(rng.integers(1, max_states + 1))
        o = int(rng.integers(1, max_obs + 1))
        a = int(rng.integers(1, max_actions + 1))
        pomdp = random_pomdp(int(rng.integers(2**31)), s, a, o)
        other = pomdp.with_transition(
            perturb_transition(rng, pomdp.mdp.transition, float(rng.uniform(0.0, 1.0))))
        obs, acts = sample_history(pomdp, int(rng.integers(1, max_history + 1)), rng)
        report.entries.extend(verify_thm2(pomdp, other, obs, acts, instance=f"thm2-{i}"))
    return report


@dataclass
class GapRow:
    instance: int
    step: int
    weight: float
    oracle_gap: float
    distribution_matching: float
    model_mismatch: float

    @property
    def bound(self) -> float:
        return self.distribution_matching + self.model_mismatch

    @property
    def passed(self) -> bool:
        return self.oracle_gap <= self.bound + TOL


GAP_HEADER = ["instance", "step", "weight", "oracle_gap", "distribution_matching",
              "model_mismatch", "bound", "slack", "pass"]


def tabular_gap_suite(seed: int = 0, n: int = 10, steps: int = 11, rate: float = 0.1,
                      n_states: int = 6, n_actions: int = 3, gamma: float = 0.9) -> list[GapRow]:
    """Exact bound terms along a policy path that moves from random to the expert.

    For each of ``n`` instances the policy is ``(1-w) pi_random + w pi_expert``
    for ``steps`` evenly spaced ``w`` in [0, 1]; the model MDP is the true one
    with rows perturbed at ``rate``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rows = []
    for i in range(n):
        rng = np.random.default_rng([seed, i, 3])
        mdp = random_tabular(int(rng.integers(2**31)), n_states, n_actions, gamma)
        model = mdp.with_transition(perturb_transition(rng, mdp.transition, rate)) if rate > 0 else mdp
        expert = soft_optimal_policy(mdp)
        start = random_policy(rng, n_states, n_actions)
        for k, w in enumerate(np.linspace(0.0, 1.0, steps)):
            pi = (1.0 - w) * start + w * expert
            e = verify_thm1(mdp, model, expert, pi)
            rows.append(GapRow(i, k, float(w), e.lhs, e.terms["distribution_matching"],
                               e.terms["model_mismatch"]))
    return rows


def write_gap_csv(rows: list[GapRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GAP_HEADER)
        for r in rows:
            w.writerow([r.instance, r.step, repr(r.weight), repr(r.oracle_gap),
                        repr(r.distribution_matching), repr(r.model_mismatch), repr(r.bound),
                        repr(r.bound - r.oracle_gap), int(r.passed)])


def normalize_series(values) -> np.ndarray:
    """Rescale to [0, 1] (min -> 0, max -> 1); a constant series maps to zeros."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = np.min(v), np.max(v)
    if hi - lo <= 0:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


SUITES = ("prop1", "thm1", "thm2", "gap-curves")


def run_suite(name: str, out_dir=None, seed: int = 0):
    """Run a named suite; returns ``(passed, summary_text)`` and writes a CSV if asked."""
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    if name == "gap-curves":
        rows = tabular_gap_suite(seed=seed)
        n_bad = sum(not r.passed for r in rows)
        if out_dir is not None:
            write_gap_csv(rows, Path(out_dir) / "gap-curves.csv")
        return n_bad == 0, f"gap-curves: {len(rows)} rows, {n_bad} violations"
    builders = {"prop1": prop1_suite, "thm1": thm1_suite, "thm2": thm2_suite}
    if name not in builders:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    report = builders[name](seed=seed)
    if out_dir is not None:
        report.write_csv(Path(out_dir) / f"{name}.csv")
    return report.passed, report.summary()
