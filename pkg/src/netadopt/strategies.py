"""Executable strategies: threshold tables, the staged line protocol, and
two-child root rules mapped from continuous adoption scores.

A strategy answers adopt_probability(ctx) with the chance it adopts in the
current period, given its own belief and the adoption times of observed
neighbors strictly before the period.  Strategies are immutable and
stateless across runs; anything they need they recompute from the context.
Two declared attributes drive quiescence detection in the engine:

- spontaneous_until: last period the strategy might adopt with no neighbor
  having adopted (-1 if it never adopts unprompted).
- max_reaction_lag: latest adoption is (last neighbor adoption) + lag;
  None if unbounded.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

from .common import NEVER, as_fraction, is_never

HALF = Fraction(1, 2)


class Strategy:
    """Base class; subclasses override adopt_probability."""

    spontaneous_until: float = 0
    max_reaction_lag: float | None = 0

    def adopt_probability(self, ctx):
        raise NotImplementedError


def canonical_history(ctx) -> tuple:
    """Canonical observation-history key: (period, sorted adopted pairs)."""
    pairs = tuple(
        sorted((j, ctx.times[j]) for j in ctx.times.neighbors if ctx.times[j] < ctx.period)
    )
    return (ctx.period, pairs)


def history_key_to_text(key: tuple) -> str:
    t, pairs = key
    body = ",".join(f"({j},{int(tau)})" for j, tau in pairs) or "-"
    return f"t={t};{body}"


def history_key_from_text(text: str) -> tuple:
    head, _, body = text.partition(";")
    if not head.startswith("t="):
        raise ValueError(f"bad history key {text!r}")
    t = int(head[2:])
    if body == "-":
        return (t, ())
    pairs = []
    for chunk in body.split("),("):
        chunk = chunk.strip("()")
        j, _, tau = chunk.partition(",")
        pairs.append((int(j), int(tau)))
    return (t, tuple(sorted(pairs)))


@dataclass(frozen=True)
class ThresholdRule(Strategy):
    """History-indexed belief thresholds with optional mixing at the cut.

    entries maps (agent, history key) to (threshold, mix_prob); agent None
    is a wildcard matched after the specific agent.  At a matched entry the
    strategy adopts when belief > threshold, adopts with chance mix_prob
    when belief == threshold, and stays out below.  Histories without an
    entry never adopt.
    """

    entries: dict = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        norm = {}
        for (agent, key), (thr, mix) in self.entries.items():
            if agent is not None:
                agent = int(agent)
            t, pairs = key
            key = (int(t), tuple(sorted((int(j), int(tau)) for j, tau in pairs)))
            thr = as_fraction(thr)
            mix = as_fraction(mix)
            if not 0 <= mix <= 1:
                raise ValueError(f"mix_prob {mix} outside [0, 1]")
            norm[(agent, key)] = (thr, mix)
        object.__setattr__(self, "entries", norm)

    @property
    def spontaneous_until(self) -> int:
        return max((key[0] for _, key in self.entries), default=-1)

    @property
    def max_reaction_lag(self) -> int:
        return max(self.spontaneous_until, 0)

    def lookup(self, agent: int, key: tuple):
        hit = self.entries.get((agent, key))
        if hit is None:
            hit = self.entries.get((None, key))
        return hit

    def adopt_probability(self, ctx):
        hit = self.lookup(ctx.agent, canonical_history(ctx))
        if hit is None:
            return Fraction(0)
        threshold, mix = hit
        belief = as_fraction(ctx.belief)
        if belief > threshold:
            return Fraction(1)
        if belief == threshold:
            return mix
        return Fraction(0)

    def to_text(self) -> str:
        lines = ["# agent\thistory\tthreshold\tmix_prob"]
        def sort_key(item):
            (agent, key), _ = item
            return (agent if agent is not None else -1, key)
        for (agent, key), (thr, mix) in sorted(self.entries.items(), key=sort_key):
            who = "*" if agent is None else str(agent)
            lines.append(f"{who}\t{history_key_to_text(key)}\t{thr}\t{mix}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ThresholdRule":
        entries = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"line {lineno}: expected 4 tab-separated fields")
            who, key_text, thr, mix = parts
            agent = None if who == "*" else int(who)
            entries[(agent, history_key_from_text(key_text))] = (
                Fraction(thr), Fraction(mix))
        return cls(entries=entries)


def myopic_rule(model) -> ThresholdRule:
    """Adopt at period 0 on belief >= 1/2 (weakly), never afterwards."""
    del model  # the rule is model-free; accepted for interface symmetry
    return ThresholdRule(
        entries={(None, (0, ())): (HALF, Fraction(1))},
        label="myopic",
    )


@dataclass(frozen=True)
class FollowRule(Strategy):
    """Adopt one period after the first adoption among designated neighbors.

    tree_neighbors maps each agent to the neighbors it reacts to (normally
    its neighbors in a spanning tree of the observation network).
    """

    tree_neighbors: dict

    spontaneous_until = -1
    max_reaction_lag = 1

    def __post_init__(self):
        norm = {int(a): tuple(sorted(int(j) for j in js))
                for a, js in self.tree_neighbors.items()}
        object.__setattr__(self, "tree_neighbors", norm)

    def adopt_probability(self, ctx):
        watched = self.tree_neighbors.get(ctx.agent, ())
        first = min((ctx.times[j] for j in watched), default=NEVER)
        return Fraction(1) if not is_never(first) and ctx.period == first + 1 else Fraction(0)


def follow_tree_neighbors(network, tree=None) -> FollowRule:
    """Follow rule on a spanning tree of the network.

    tree defaults to the network itself (sensible when it is already a
    tree); when given, every tree edge must be an observation edge.
    """
    tree = tree if tree is not None else network
    for i, j in tree.edges:
        if (i, j) not in network.edges:
            raise ValueError(f"tree edge ({i}, {j}) is not an observation edge")
    neighbor_map = {i: tree.out_neighbors(i) for i in network.agents}
    return FollowRule(tree_neighbors=neighbor_map)


def sigma_eta_k_step(tau_prev, k: int, x: int, mid=HALF):
    """One case-table step of the staged line protocol.

    Given the adoption period tau_prev of the triggering neighbor, the
    agent's own indicator x (1 when its belief is at least 1/2), and the
    decode acceptance cut mid, returns this agent's adoption period or
    NEVER.  Stages: early adopters relay at +k+x (encoding), the agent whose
    trigger lands in [(k-1)k, k^2) decodes the relayed fraction against mid,
    and everything at or past k^2 spreads at unit speed.
    """
    if not isinstance(k, int) or k < 3:
        raise ValueError(f"invalid protocol parameter: k must be an int >= 3, got {k!r}")
    if x not in (0, 1):
        raise ValueError(f"indicator x must be 0 or 1, got {x!r}")
    if is_never(tau_prev):
        return NEVER
    tau_prev = int(tau_prev)
    if tau_prev < 0:
        raise ValueError(f"adoption period must be >= 0, got {tau_prev}")
    if tau_prev < (k - 1) * k:
        return tau_prev + k + x
    if tau_prev < k * k:
        share = Fraction(tau_prev - (k - 1) * k + x, k)
        return k * k if share > as_fraction(mid) else NEVER
    return tau_prev + 1


@dataclass(frozen=True)
class ProtocolSigma(Strategy):
    """Staged seed/encode/decode/spread protocol on a labeled line or ring.

    Each agent independently adopts at period 0 with probability eta (the
    seeds).  A non-seed applies the case table of sigma_eta_k_step to the
    earliest-adopting line neighbor, with ties broken toward the left
    neighbor (lower index, wrapping on rings); the commitment is absorbing,
    so a committed "never" stands even if the other side adopts later.
    orientation "both" races the two sides; "ltr" reacts only to the left
    neighbor (waves travel left to right) and "rtl" only to the right.
    """

    eta: Fraction
    k: int
    mid: Fraction = HALF
    orientation: str = "both"

    spontaneous_until = 0

    def __post_init__(self):
        eta = as_fraction(self.eta)
        if not 0 < eta < 1:
            raise ValueError(f"seed probability eta must be in (0, 1), got {self.eta}")
        if not isinstance(self.k, int) or self.k < 3:
            raise ValueError(f"invalid protocol parameter: k must be an int >= 3, got {self.k!r}")
        if self.orientation not in ("both", "ltr", "rtl"):
            raise ValueError(f"orientation must be both/ltr/rtl, got {self.orientation!r}")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "mid", as_fraction(self.mid))

    @property
    def max_reaction_lag(self) -> int:
        return self.k + 1

    def _line_sides(self, ctx):
        """(left neighbor id or None, right neighbor id or None)."""
        n = ctx.network.n
        i = ctx.agent
        neighbors = set(ctx.times.neighbors)
        ring = (0, n - 1) in ctx.network.edges or (n - 1, 0) in ctx.network.edges
        left = (i - 1) % n if ring else i - 1
        right = (i + 1) % n if ring else i + 1
        if not neighbors <= {left, right}:
            raise ValueError(
                f"protocol requires a labeled line or ring; agent {i} observes {sorted(neighbors)}"
            )
        return (left if left in neighbors else None,
                right if right in neighbors else None)

    def adopt_probability(self, ctx):
        if ctx.period == 0:
            return self.eta
        left, right = self._line_sides(ctx)
        if self.orientation == "ltr":
            right = None
        elif self.orientation == "rtl":
            left = None
        candidates = []
        for priority, j in enumerate((left, right)):
            if j is None:
                continue
            tau = ctx.times[j]
            if tau < ctx.period:
                candidates.append((tau, priority))
        if not candidates:
            return Fraction(0)
        tau_u, _ = min(candidates)
        x = 1 if as_fraction(ctx.belief) >= HALF else 0
        my_tau = sigma_eta_k_step(tau_u, self.k, x, self.mid)
        return Fraction(1) if ctx.period == my_tau else Fraction(0)


@dataclass(frozen=True)
class AuxDiscreteStrategy:
    """Declarative two-child root rule: family, cutoff time r, and delta.

    r must lie on the geometric grid {1 - delta**n} union {1}; off-grid
    values snap down to the previous grid point with a warning.  Family 1
    adopts right after the first child when that child is late (past r),
    and otherwise waits for the second child or the cutoff, whichever is
    later.  Family 2 adopts at the cutoff exactly when the first child is
    late, the second child was early, and its own belief favors the high
    state strictly; otherwise it shadows the first child.
    """

    family: int
    r: Fraction
    delta: Fraction

    def __post_init__(self):
        if self.family not in (1, 2):
            raise ValueError(f"family must be 1 or 2, got {self.family!r}")
        delta = as_fraction(self.delta)
        if not 0 < delta < 1:
            raise ValueError(f"delta must be in (0, 1), got {self.delta!r}")
        r = as_fraction(self.r)
        if not 0 <= r <= 1:
            raise ValueError(f"cutoff r must be in [0, 1], got {self.r!r}")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "r", r)

    @property
    def cutoff_period(self):
        """Grid index m with r = 1 - delta**m; NEVER when r = 1."""
        return grid_index_of_time(self.r, self.delta)


def grid_index_of_time(r, delta):
    """Largest m with 1 - delta**m <= r (NEVER when r = 1), warning off-grid."""
    r = as_fraction(r)
    delta = as_fraction(delta)
    if r == 1:
        return NEVER
    m = 0
    power = Fraction(1)
    while True:
        next_power = power * delta
        if 1 - next_power > r:
            break
        power = next_power
        m += 1
    if 1 - power != r:
        warnings.warn(
            f"cutoff {float(r):.6g} is off the geometric grid; snapped down to "
            f"1 - delta**{m}",
            stacklevel=2,
        )
    return m


def aux_family_action(family: int, r, t1, t2, belief_high: bool):
    """Continuous adoption score chosen by a family rule.

    Times live in [0, 1] with 1 meaning never; the returned score a shares
    that scale.  Family 1: a = t1 when t1 > r, else max(t2, r).  Family 2:
    a = r when t1 > r, t2 <= r and the belief strictly favors the high
    state; otherwise a = t1.
    """
    return _aux_action_raw(family, as_fraction(r), as_fraction(t1), as_fraction(t2), belief_high)


def _aux_action_raw(family: int, r, t1, t2, belief_high: bool):
    # Shared case table without coercion; callers guarantee r, t1 and t2
    # share comparable arithmetic.
    if family == 1:
        return t1 if t1 > r else max(t2, r)
    if family == 2:
        return r if (t1 > r and t2 <= r and belief_high) else t1
    raise ValueError(f"family must be 1 or 2, got {family!r}")


def continuous_time_to_period(a, delta):
    """Map a continuous adoption score to the discrete period after the lag.

    Grid scores 1 - delta**m map exactly to period m + 1; off-grid scores
    round up to the next period; a = 1 maps to NEVER.
    """
    a = as_fraction(a)
    delta = as_fraction(delta)
    if not 0 <= a <= 1:
        raise ValueError(f"adoption score must be in [0, 1], got {float(a)}")
    if a == 1:
        return NEVER
    x = math.log(float(1 - a)) / math.log(float(delta))
    nearest = round(x)
    if abs(x - nearest) < 1e-9:
        m = int(nearest)
    else:
        m = math.ceil(x)
    return m + 1


@dataclass(frozen=True)
class AuxRootRule(Strategy):
    """Executable form of AuxDiscreteStrategy for a root observing two children.

    The rule never peeks at same-period actions: the period-t decision uses
    child adoptions strictly before t, so every mapped adoption lands one
    period after the information that triggered it.
    """

    spec: AuxDiscreteStrategy

    spontaneous_until = -1

    @property
    def max_reaction_lag(self):
        m = self.spec.cutoff_period
        return (int(m) + 1) if not is_never(m) else 1

    def adopt_probability(self, ctx):
        neighbors = sorted(ctx.times.neighbors)
        if len(neighbors) != 2:
            raise ValueError(
                f"two-child root rule needs exactly 2 observed children, agent "
                f"{ctx.agent} has {len(neighbors)}"
            )
        c1, c2 = neighbors
        t = ctx.period
        t1, t2 = ctx.times[c1], ctx.times[c2]
        m = self.spec.cutoff_period  # NEVER encodes r = 1
        if self.spec.family == 1:
            if not is_never(t1) and not is_never(m) and t1 > m:
                fire = t == t1 + 1
            elif not is_never(t1):  # first child was early (or r = 1)
                if is_never(m):
                    fire = False
                elif not is_never(t2) and t2 <= m:
                    fire = t == m + 1
                elif not is_never(t2):
                    fire = t == t2 + 1
                else:
                    fire = False
            else:
                fire = False
        else:
            at_cutoff = (
                not is_never(m)
                and t == m + 1
                and (is_never(t1) or t1 > m)
                and not is_never(t2)
                and t2 <= m
                and as_fraction(ctx.belief) > HALF
            )
            fire = at_cutoff or (not is_never(t1) and t == t1 + 1)
        return Fraction(1) if fire else Fraction(0)


def aux_to_discrete(aux: AuxDiscreteStrategy) -> AuxRootRule:
    """Executable one-period-lag root rule for a declarative family spec."""
    return AuxRootRule(spec=aux)


@dataclass(frozen=True)
class CenterBayesRule(Strategy):
    """Defer, then adopt at a fixed period on the exact posterior.

    Intended for a hub whose observed neighbors all play the myopic rule:
    at the decision period the posterior pools the agent's own signal with
    one adopt/stay indicator per neighbor, each weighted by the model's
    period-0 indicator likelihoods.  Adopts on posterior >= 1/2 exactly
    once; all other periods stay out.
    """

    model: object
    period: int = 1

    def __post_init__(self):
        if self.period < 0:
            raise ValueError(f"decision period must be >= 0, got {self.period}")

    @property
    def spontaneous_until(self) -> int:
        return self.period

    @property
    def max_reaction_lag(self) -> int:
        return max(self.period, 1)

    def adopt_probability(self, ctx):
        if ctx.period != self.period:
            return Fraction(0)
        p_high, p_low = self.model.indicator_probs()
        idx = ctx.atom
        lh, ll = self.model.atoms[idx]
        odds_h, odds_l = lh, ll
        for j in ctx.times.neighbors:
            adopted = ctx.times[j] < ctx.period
            odds_h *= p_high if adopted else (1 - p_high)
            odds_l *= p_low if adopted else (1 - p_low)
        return Fraction(1) if odds_h >= odds_l else Fraction(0)


def strategy_from_spec(spec, model, delta=None):
    """Build a strategy from a config fragment.

    Accepts "myopic", {"sigma": {"eta": ..., "k": ..., ...}},
    {"aux": {"family": ..., "r": ..., "delta": ...}},
    {"center_bayes": {"period": ...}} or
    {"threshold_table_text": "..."} (the CLI resolves file paths to text).
    """
    if spec == "myopic" or spec == {"myopic": {}}:
        return myopic_rule(model)
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ValueError(f"strategy spec must be 'myopic' or a one-key mapping, got {spec!r}")
    kind, body = next(iter(spec.items()))
    body = body or {}
    if kind == "sigma":
        mid = body.get("mid")
        if mid is None:
            p_high, p_low = model.indicator_probs()
            mid = (p_high + p_low) / 2
        return ProtocolSigma(
            eta=as_fraction(body["eta"]),
            k=int(body["k"]),
            mid=as_fraction(mid),
            orientation=body.get("orientation", "both"),
        )
    if kind == "aux":
        if delta is None and "delta" not in body:
            raise ValueError("aux strategy needs delta")
        aux = AuxDiscreteStrategy(
            family=int(body["family"]),
            r=as_fraction(body["r"]),
            delta=as_fraction(body.get("delta", delta)),
        )
        return aux_to_discrete(aux)
    if kind == "center_bayes":
        return CenterBayesRule(model=model, period=int(body.get("period", 1)))
    if kind == "threshold_table_text":
        return ThresholdRule.from_text(body)
    raise ValueError(f"unknown strategy spec kind {kind!r}")
