"""Per-slot resource slicing as an overlapping coalition game, with solvers.

A slot presents each service with a slice: the energy every node commits to
that service plus the offload fractions routing workload between neighbors.
Payoffs are transferable and contribution-based: the sender of workload
keeps the full payment for every request of its own that gets served within
the deadline, wherever it was processed.  The welfare solver looks for the
joint energy split and offload pattern maximizing the summed payoff of all
nodes; the core checker then probes whether any small coalition could do
strictly better for every member on its own.

Offload fractions for one slice are found by block-coordinate ascent: each
sender in turn gets the row of fractions maximizing its served workload
subject to every deadline and capacity staying feasible, via an exact
water-filling step on the marginal delay price.  A grid-search oracle
(oracles module) backstops the whole pipeline on desk-size instances.
"""

from __future__ import annotations

import itertools
import math
import shlex
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .model import FogNodeSpec, NetworkSpec, ServiceTypeSpec, SlicingAgreement, Violation

# Destinations always keep this much residual capacity (requests/s); far above
# the 1e-9 saturation tolerance, far below any economically relevant load.
RESIDUAL_FLOOR = 1e-6
FEAS_TOL = 1e-9


class InfeasibleOffload(ValueError):
    """An offload matrix violating slice constraints, with the violations."""

    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


@dataclass(frozen=True)
class SliceInstance:
    """One service's view of a slot: committed energy and offered workload.

    Node indices are local to the instance.  ``energy[i]`` is the integer
    energy node i committed to this service; its capacity is
    unit_rate * rate_factor * floor(energy / unit_energy).
    """

    service: ServiceTypeSpec
    nodes: tuple[FogNodeSpec, ...]
    energy: np.ndarray
    arrivals: np.ndarray
    neighbors: tuple[frozenset[int], ...]
    rtt: np.ndarray

    def __post_init__(self):
        n = len(self.nodes)
        energy = np.asarray(self.energy)
        arrivals = np.asarray(self.arrivals, dtype=float)
        rtt = np.asarray(self.rtt, dtype=float)
        if energy.shape != (n,) or arrivals.shape != (n,) or rtt.shape != (n, n):
            raise ValueError("energy, arrivals and rtt must align with nodes")
        for arr in (energy, arrivals, rtt):
            arr.setflags(write=False)
        object.__setattr__(self, "energy", energy)
        object.__setattr__(self, "arrivals", arrivals)
        object.__setattr__(self, "rtt", rtt)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def capacities(self) -> np.ndarray:
        units = np.array(
            [int(e) // nd.unit_energy for e, nd in zip(self.energy, self.nodes)]
        )
        w = np.array([self.service.unit_rate * nd.rate_factor for nd in self.nodes])
        return w * units

    def support(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(np.asarray(self.energy) > 0))

    def allowed(self) -> np.ndarray:
        """Boolean (n x n): sender i may place workload on destination m.

        Edges whose round trip alone meets or exceeds the deadline are
        closed: a request forwarded there can never return in time, no
        matter how small its share of the sender's mix.
        """
        n = self.n_nodes
        mask = np.eye(n, dtype=bool)
        theta = self.service.deadline
        for i, nbrs in enumerate(self.neighbors):
            for m in nbrs:
                if self.rtt[i, m] < theta:
                    mask[i, m] = True
        return mask


@dataclass(frozen=True)
class GameInstance:
    """A whole slot: the network, realized arrivals and per-node energy budgets."""

    network: NetworkSpec
    arrivals: np.ndarray
    budgets: np.ndarray

    def __post_init__(self):
        arrivals = np.asarray(self.arrivals, dtype=float)
        budgets = np.asarray(self.budgets)
        n, k = self.network.n_nodes, self.network.n_services
        if arrivals.shape != (n, k) or budgets.shape != (n,):
            raise ValueError("arrivals/budgets do not match the network")
        arrivals.setflags(write=False)
        budgets.setflags(write=False)
        object.__setattr__(self, "arrivals", arrivals)
        object.__setattr__(self, "budgets", budgets)

    def slice_for(self, service_idx: int, energy: np.ndarray) -> SliceInstance:
        net = self.network
        return SliceInstance(
            service=net.services[service_idx],
            nodes=net.nodes,
            energy=np.asarray(energy, dtype=int),
            arrivals=self.arrivals[:, service_idx],
            neighbors=net.neighbors,
            rtt=net.rtt,
        )


def response_times(alpha: np.ndarray, arrivals: np.ndarray, caps: np.ndarray, rtt: np.ndarray) -> np.ndarray:
    """Per-sender weighted response time; inf where a used destination saturates."""
    loads = alpha.T @ arrivals
    residual = caps - loads
    used = alpha > 0
    delay = np.full(len(caps), np.inf)
    ok = residual > FEAS_TOL
    delay[ok] = 1.0 / residual[ok]
    with np.errstate(invalid="ignore"):
        terms = alpha * (rtt + delay[None, :])
    terms[~used] = 0.0
    return terms.sum(axis=1)


def slice_worth(instance: SliceInstance, alpha: np.ndarray, tol: float = FEAS_TOL) -> float:
    """Total payoff of a slice under an offload matrix (Eq.-style sender sum).

    Every sender's served workload counts, whether or not it committed
    energy itself; forwarding-only members earn for workload their
    neighbors process.

    Raises:
        InfeasibleOffload: If the matrix breaks any slice constraint.
    """
    alpha = np.asarray(alpha, dtype=float)
    n = instance.n_nodes
    if alpha.shape != (n, n):
        raise ValueError(f"alpha must be {n}x{n}")
    violations: list[Violation] = []
    allowed = instance.allowed()
    lam = instance.arrivals
    caps = instance.capacities()
    if np.any(alpha < -tol):
        i = int(np.argwhere(alpha < -tol)[0][0])
        violations.append(Violation("allocation", i, None, "negative fraction"))
    stray = (~allowed) & (np.abs(alpha) > tol)
    if np.any(stray):
        i = int(np.argwhere(stray)[0][0])
        violations.append(Violation("allocation", i, None, "offload outside forwarding graph"))
    rows = alpha.sum(axis=1)
    for i in np.flatnonzero(rows > 1.0 + tol):
        violations.append(Violation("allocation", int(i), None, f"row sum {rows[i]:.6f} > 1"))
    loads = alpha.T @ lam
    for m in np.flatnonzero(loads > caps + tol):
        violations.append(Violation("capacity", int(m), None, f"load {loads[m]:.6f} > {caps[m]:.6f}"))
    if not violations:
        pis = response_times(alpha, lam, caps, instance.rtt)
        theta = instance.service.deadline
        for i in range(n):
            if rows[i] > tol and pis[i] > theta + tol:
                violations.append(
                    Violation("deadline", i, None, f"response {pis[i]:.6f} > {theta:.6f}")
                )
    if violations:
        raise InfeasibleOffload(violations)
    return float(instance.service.reward * np.sum(lam * rows))


def slice_rewards(instance: SliceInstance, alpha: np.ndarray) -> np.ndarray:
    """Per-sender payoff: reward * own arrivals * own served fraction."""
    return instance.service.reward * instance.arrivals * np.asarray(alpha).sum(axis=1)


INSTANCE_HEADER = "fogslice-instance 1"


def dump_instance(game: GameInstance, path) -> None:
    """Write one slot instance as line-oriented text.

    One ``demand`` record per node per service.  Floats are written with
    repr so a load/dump cycle reproduces the file byte for byte; that makes
    dumped instances usable as golden fixtures and for oracle replay.
    """
    net = game.network
    lines = [INSTANCE_HEADER]
    for k, svc in enumerate(net.services):
        lines.append(
            "service %d %s %r %r %r"
            % (k, shlex.quote(svc.name), svc.deadline, svc.reward, svc.unit_rate)
        )
    for i, nd in enumerate(net.nodes):
        lines.append(
            "node %d %d %d %d %r %s"
            % (
                i,
                nd.max_units,
                nd.unit_energy,
                nd.battery_cap,
                nd.rate_factor,
                shlex.quote(nd.name),
            )
        )
    for i, nbrs in enumerate(net.neighbors):
        lines.append("neighbors %d%s" % (i, "".join(" %d" % j for j in sorted(nbrs))))
    for i in range(net.n_nodes):
        lines.append("rtt %d %s" % (i, " ".join(repr(float(v)) for v in net.rtt[i])))
    for i in range(net.n_nodes):
        lines.append("budget %d %d" % (i, int(game.budgets[i])))
    for i in range(net.n_nodes):
        for k in range(net.n_services):
            lines.append("demand %d %d %r" % (i, k, float(game.arrivals[i, k])))
    Path(path).write_text("\n".join(lines) + "\n")


def load_instance(path) -> GameInstance:
    """Read an instance written by dump_instance.

    Raises ValueError naming the first offending line on malformed input.
    """
    text = Path(path).read_text()
    raw = text.splitlines()
    if not raw or raw[0].strip() != INSTANCE_HEADER:
        raise ValueError(f"{path}: missing '{INSTANCE_HEADER}' header")
    services: dict[int, ServiceTypeSpec] = {}
    nodes: dict[int, FogNodeSpec] = {}
    neighbors: dict[int, frozenset[int]] = {}
    rtt_rows: dict[int, list[float]] = {}
    budgets: dict[int, int] = {}
    demand: dict[tuple[int, int], float] = {}
    for lineno, line in enumerate(raw[1:], start=2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            fields = shlex.split(line)
            kind = fields[0]
            if kind == "service":
                k = int(fields[1])
                services[k] = ServiceTypeSpec(
                    name=fields[2],
                    deadline=float(fields[3]),
                    reward=float(fields[4]),
                    unit_rate=float(fields[5]),
                )
            elif kind == "node":
                i = int(fields[1])
                nodes[i] = FogNodeSpec(
                    max_units=int(fields[2]),
                    unit_energy=int(fields[3]),
                    battery_cap=int(fields[4]),
                    rate_factor=float(fields[5]),
                    name=fields[6] if len(fields) > 6 else "",
                )
            elif kind == "neighbors":
                neighbors[int(fields[1])] = frozenset(int(j) for j in fields[2:])
            elif kind == "rtt":
                rtt_rows[int(fields[1])] = [float(v) for v in fields[2:]]
            elif kind == "budget":
                budgets[int(fields[1])] = int(fields[2])
            elif kind == "demand":
                demand[(int(fields[1]), int(fields[2]))] = float(fields[3])
            else:
                raise ValueError(f"unknown record kind {kind!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: bad record: {exc}") from exc
    n, k_n = len(nodes), len(services)
    if sorted(nodes) != list(range(n)) or sorted(services) != list(range(k_n)):
        raise ValueError(f"{path}: node/service indices must be 0..count-1")
    missing = [i for i in range(n) if len(rtt_rows.get(i, ())) != n]
    if missing:
        raise ValueError(f"{path}: missing or short rtt rows for nodes {missing}")
    net = NetworkSpec(
        services=tuple(services[k] for k in range(k_n)),
        nodes=tuple(nodes[i] for i in range(n)),
        neighbors=tuple(neighbors.get(i, frozenset()) for i in range(n)),
        rtt=np.array([rtt_rows[i] for i in range(n)]),
    )
    arrivals = np.zeros((n, k_n))
    for (i, k), lam in demand.items():
        arrivals[i, k] = lam
    return GameInstance(
        network=net,
        arrivals=arrivals,
        budgets=np.array([budgets.get(i, 0) for i in range(n)], dtype=int),
    )


# ---------------------------------------------------------------------------
# Offload solver: water-filling on the marginal delay price, per sender.


@dataclass(frozen=True)
class OffloadOptions:
    passes: int = 60
    tol: float = 1e-10
    outer_rounds: int = 12
    joint_max_senders: int = 8
    polish: bool = True
    polish_max_nodes: int = 8


@dataclass(frozen=True)
class OffloadSolution:
    alpha: np.ndarray
    response_times: np.ndarray
    welfare: float
    passes: int
    converged: bool


def _waterfill(tau, cap, box, lam, theta):
    """Maximize sum(a) over 0 <= a <= box, sum(a) <= 1 and total delay <= theta.

    The delay of destination m is g_m(a) = a*tau_m + a/(cap_m - lam*a),
    strictly convex and increasing, so the optimum equalizes the marginal
    price phi_m(a) = tau_m + cap_m/(cap_m - lam*a)^2 across destinations in
    use; the common price is found by bisection.
    """
    full = np.zeros_like(cap)
    active = (box > 1e-15) & (cap > RESIDUAL_FLOOR)
    if not np.any(active) or lam <= 0:
        return full
    t = tau[active]
    c = cap[active]
    b = box[active]
    phi0 = t + 1.0 / c

    def alloc(mu):
        inner = np.maximum(mu - t, 1e-300)
        a = (c - np.sqrt(c / inner)) / lam
        a = np.clip(a, 0.0, b)
        a[mu <= phi0] = 0.0
        return a

    def feasible(mu):
        a = alloc(mu)
        resid = np.maximum(c - lam * a, 1e-300)
        g = float((a * t + a / resid).sum())
        return (a.sum() <= 1.0 + 1e-15) and (g <= theta + 1e-15), a

    resid_box = np.maximum(c - lam * b, 1e-300)
    hi = float((t + c / resid_box**2).max()) * 2.0 + 1.0
    ok_hi, a_hi = feasible(hi)
    if ok_hi:
        full[active] = a_hi
        return full
    lo = float(phi0.min())
    best = np.zeros_like(c)
    for _ in range(130):
        mid = math.sqrt(lo * hi)
        good, a = feasible(mid)
        if good:
            lo, best = mid, a
        else:
            hi = mid
    best[best < 1e-12] = 0.0
    full[active] = best
    return full


class _SliceWork:
    """Mutable solver scratch for one slice."""

    def __init__(self, instance: SliceInstance):
        self.instance = instance
        self.n = instance.n_nodes
        self.lam = instance.arrivals.astype(float)
        self.caps = instance.capacities().astype(float)
        self.tau = instance.rtt.astype(float)
        self.allowed = instance.allowed()
        self.theta = instance.service.deadline
        self.senders = [i for i in range(self.n) if self.lam[i] > 0]

    def welfare(self, alpha):
        # served requests only; the reward rate is applied after the solve
        # so scaling it cannot perturb the search path
        return float(np.sum(self.lam * alpha.sum(axis=1)))

    def max_violation(self, alpha):
        """Largest constraint excess: > 0 means infeasible.

        Only destinations actually carrying load are held to the residual
        floor; an idle zero-capacity node violates nothing.
        """
        loads = alpha.T @ self.lam
        used = loads > 1e-12
        worst = -np.inf
        if used.any():
            worst = float(np.max(loads[used] - (self.caps[used] - RESIDUAL_FLOOR / 2)))
        pis = response_times(alpha, self.lam, self.caps, self.tau)
        for i in self.senders:
            if alpha[i].sum() > 0:
                worst = max(worst, (pis[i] - self.theta) / max(self.theta, 1e-9))
        rows = alpha.sum(axis=1)
        worst = max(worst, float(rows.max(initial=0.0)) - 1.0)
        return worst


def _row_boxes(work: _SliceWork, alpha: np.ndarray, i: int):
    """Free capacity and per-destination allocation bound for sender i."""
    lam_i = work.lam[i]
    loads = alpha.T @ work.lam
    mine = alpha[i] * lam_i
    others = loads - mine
    free = work.caps - others
    pis = response_times(alpha, work.lam, work.caps, work.tau)
    box = np.zeros(work.n)
    for m in range(work.n):
        if not work.allowed[i, m]:
            continue
        room = (free[m] - RESIDUAL_FLOOR) / lam_i
        if room <= 0:
            box[m] = alpha[i, m]
            continue
        # other senders already on m tolerate only so much extra delay there
        extra = np.inf
        for j in work.senders:
            if j == i or alpha[j, m] <= 0:
                continue
            slack = max(work.theta - pis[j], 0.0)
            extra = min(extra, slack / alpha[j, m])
        if np.isfinite(extra):
            cur_resid = work.caps[m] - loads[m]
            if cur_resid <= 0:
                box[m] = alpha[i, m]
                continue
            delay_max = 1.0 / cur_resid + extra
            room = min(room, (work.caps[m] - 1.0 / delay_max - others[m]) / lam_i)
        box[m] = min(1.0, max(room, alpha[i, m]))
    return free, box


def _update_row(work: _SliceWork, alpha: np.ndarray, i: int):
    free, box = _row_boxes(work, alpha, i)
    candidate = _waterfill(work.tau[i], free, box, work.lam[i], work.theta)
    old = alpha[i].copy()
    alpha[i] = candidate
    if work.max_violation(alpha) <= FEAS_TOL:
        return
    # multi-destination interactions can overshoot other senders' deadlines;
    # the feasible set is convex, so back off along the segment to the old row
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = (lo + hi) / 2
        alpha[i] = old + mid * (candidate - old)
        if work.max_violation(alpha) <= FEAS_TOL:
            lo = mid
        else:
            hi = mid
    alpha[i] = old + lo * (candidate - old)
    alpha[i][alpha[i] < 1e-12] = 0.0
    if work.max_violation(alpha) > FEAS_TOL:
        alpha[i] = old


def _polish_priority(work: _SliceWork, alpha: np.ndarray):
    """Shift welfare-neutral mass toward the diagonal, then lower indices.

    Among equal-payoff solutions the local share is preferred, then the
    lower destination index; transfers keep every row total unchanged and
    are accepted only if the full slice stays feasible.
    """
    for i in work.senders:
        order = [i] + sorted(m for m in range(work.n) if work.allowed[i, m] and m != i)
        for ti, target in enumerate(order):
            for source in reversed(order[ti + 1 :]):
                avail = alpha[i, source]
                if avail <= 1e-12:
                    continue
                lo, hi = 0.0, avail
                base = alpha[i].copy()

                def shifted(d):
                    row = base.copy()
                    row[source] -= d
                    row[target] += d
                    return row

                alpha[i] = shifted(hi)
                if work.max_violation(alpha) <= FEAS_TOL:
                    continue  # full transfer accepted
                best = 0.0
                for _ in range(50):
                    mid = (lo + hi) / 2
                    alpha[i] = shifted(mid)
                    if work.max_violation(alpha) <= FEAS_TOL:
                        lo, best = mid, mid
                    else:
                        hi = mid
                alpha[i] = shifted(best) if best > 1e-12 else base


def _ascent(work: _SliceWork, alpha: np.ndarray, opt: OffloadOptions) -> int:
    """Row updates until a full pass stops improving; returns passes used."""
    prev = work.welfare(alpha)
    for passes in range(1, opt.passes + 1):
        for i in work.senders:
            _update_row(work, alpha, i)
        current = work.welfare(alpha)
        if current - prev <= opt.tol * max(1.0, abs(current)):
            return passes
        prev = current
    return opt.passes


def _swap_pass(work: _SliceWork, alpha: np.ndarray) -> bool:
    """Move load at each destination to the sender with cheaper access.

    A swap keeps every destination's load (hence every queueing delay) and
    the total served workload unchanged, but frees deadline budget on the
    expensive sender, which the next ascent pass can spend.  Swapping only
    strictly-cheaper directions makes total transport cost a decreasing
    potential, so passes terminate.
    """
    moved = False
    for m in range(work.n):
        loads = alpha.T @ work.lam
        resid = work.caps[m] - loads[m]
        if resid <= RESIDUAL_FLOOR / 2 and loads[m] <= 0:
            continue
        delta_m = 1.0 / resid if resid > 0 else np.inf
        donors = sorted(
            (j for j in work.senders if alpha[j, m] > 1e-12),
            key=lambda j: -work.tau[j, m],
        )
        for j in donors:
            receivers = sorted(
                (
                    i
                    for i in work.senders
                    if i != j
                    and work.allowed[i, m]
                    and work.tau[i, m] < work.tau[j, m] - 1e-12
                ),
                key=lambda i: work.tau[i, m],
            )
            for i in receivers:
                pis = response_times(alpha, work.lam, work.caps, work.tau)
                load_avail = alpha[j, m] * work.lam[j]
                row_room = max(0.0, 1.0 - alpha[i].sum()) * work.lam[i]
                slack_i = max(0.0, work.theta - (pis[i] if alpha[i].sum() > 0 else 0.0))
                price_i = (work.tau[i, m] + delta_m) / work.lam[i]
                budget_room = slack_i / price_i if price_i > 0 else np.inf
                d = min(load_avail, row_room, budget_room) * (1 - 1e-12)
                if d <= 1e-9:
                    continue
                alpha[j, m] -= d / work.lam[j]
                alpha[i, m] += d / work.lam[i]
                if alpha[j, m] < 1e-12:
                    alpha[j, m] = 0.0
                moved = True
    return moved


def _joint_refine(work: _SliceWork, alpha: np.ndarray) -> np.ndarray:
    """Polish all rows at once with a smooth NLP; keep the best feasible point.

    The coupled deadline constraints make the problem non-convex, so a few
    deterministic starts are tried and the incumbent always survives.
    """
    from scipy.optimize import minimize

    pairs = [
        (i, m)
        for i in work.senders
        for m in range(work.n)
        if work.allowed[i, m] and work.caps[m] > RESIDUAL_FLOOR
    ]
    if not pairs:
        return alpha

    def unpack(x):
        a = np.zeros((work.n, work.n))
        for v, (i, m) in zip(x, pairs):
            a[i, m] = v
        return a

    lam_of = np.array([work.lam[i] for i, _ in pairs])
    obj = lambda x: -float(np.dot(lam_of, x))
    bounds = [
        (0.0, min(1.0, (work.caps[m] - RESIDUAL_FLOOR) / work.lam[i])) for i, m in pairs
    ]
    constraints = []
    for m in set(m for _, m in pairs):
        idx = [p for p, (_, pm) in enumerate(pairs) if pm == m]
        lam_m = np.array([work.lam[pairs[p][0]] for p in idx])
        cap_m = work.caps[m] - RESIDUAL_FLOOR

        def cap_fun(x, idx=idx, lam_m=lam_m, cap_m=cap_m):
            return cap_m - np.dot(lam_m, x[idx])

        constraints.append({"type": "ineq", "fun": cap_fun})
    for i in work.senders:
        idx = [p for p, (pi, _) in enumerate(pairs) if pi == i]

        def row_fun(x, idx=idx):
            return 1.0 - float(np.sum(x[idx]))

        def deadline_fun(x, i=i, idx=idx):
            a = unpack(x)
            loads = a.T @ work.lam
            resid = np.maximum(work.caps - loads, 1e-9)
            row = a[i]
            return work.theta - float(np.sum(row * (work.tau[i] + 1.0 / resid)))

        constraints.append({"type": "ineq", "fun": row_fun})
        constraints.append({"type": "ineq", "fun": deadline_fun})

    def pack(a):
        return np.array([a[i, m] for i, m in pairs])

    def local_start():
        a = np.zeros((work.n, work.n))
        for i in work.senders:
            cap = work.caps[i]
            if cap <= RESIDUAL_FLOOR:
                continue
            frac = min(1.0, max(0.0, cap / work.lam[i] - 1.0 / (work.theta * work.lam[i])))
            a[i, i] = min(frac, (cap - RESIDUAL_FLOOR) / work.lam[i])
        return a

    best = alpha
    best_w = work.welfare(alpha)
    for start in (alpha, local_start(), np.zeros((work.n, work.n))):
        with warnings.catch_warnings():
            # SLSQP steps outside its own box and clips; harmless here
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(
                obj,
                pack(start),
                method="SLSQP",
                bounds=bounds,
                constraints=constraints,
                options={"maxiter": 300, "ftol": 1e-12},
            )
        cand = unpack(np.clip(res.x, 0.0, None))
        cand[cand < 1e-12] = 0.0
        # tiny constraint overshoot from the NLP: pull back toward feasible
        if work.max_violation(cand) > FEAS_TOL:
            lo, hi = 0.0, 1.0
            for _ in range(60):
                mid = (lo + hi) / 2
                if work.max_violation(cand * mid) <= FEAS_TOL:
                    lo = mid
                else:
                    hi = mid
            cand = cand * lo
        w = work.welfare(cand)
        if w > best_w + 1e-12 and work.max_violation(cand) <= FEAS_TOL:
            best, best_w = cand, w
    return best.copy()


def solve_offload(instance: SliceInstance, options: OffloadOptions | None = None) -> OffloadSolution:
    """Best offload fractions for one slice.

    Alternates block-coordinate ascent on sender rows with load swaps
    toward cheaper access paths, then polishes all rows jointly with a
    smooth NLP on small slices.  The objective (total slice payoff) never
    decreases across stages.
    """
    opt = options or OffloadOptions()
    work = _SliceWork(instance)
    alpha = np.zeros((work.n, work.n))
    passes = 0
    converged = False
    prev = -np.inf
    for _ in range(opt.outer_rounds):
        passes += _ascent(work, alpha, opt)
        current = work.welfare(alpha)
        if current - prev <= opt.tol * max(1.0, abs(current)):
            converged = True
            break
        prev = current
        if not _swap_pass(work, alpha):
            converged = True
            break
    # the NLP cannot improve a lone queue (the row update is exact there)
    # or a slice already serving every request
    full = not work.senders or work.welfare(alpha) >= work.lam[work.senders].sum() - 1e-9
    if work.n > 1 and not full and len(work.senders) <= opt.joint_max_senders:
        alpha = _joint_refine(work, alpha)
    if opt.polish and work.n <= opt.polish_max_nodes:
        _polish_priority(work, alpha)
    alpha[alpha < 1e-12] = 0.0
    pis = response_times(alpha, work.lam, work.caps, work.tau)
    pis = np.where(alpha.sum(axis=1) > 0, pis, 0.0)
    return OffloadSolution(
        alpha=alpha,
        response_times=pis,
        welfare=instance.service.reward * work.welfare(alpha),
        passes=passes,
        converged=converged,
    )


# ---------------------------------------------------------------------------
# Energy split of one node across services.


def _split_value_table(node: FogNodeSpec, services, arrivals, budget: int, demands=None):
    """values[k][e]: payoff of giving service k exactly e energy, alone.

    ``demands`` widens the served-workload target beyond the node's own
    arrivals (used to provision for inbound forwarding).
    """
    from . import queueing

    budget = int(budget)
    tables = []
    for k, svc in enumerate(services):
        lam = float(arrivals[k])
        values = np.zeros(budget + 1)
        w = svc.unit_rate * node.rate_factor
        for e in range(budget + 1):
            units = e // node.unit_energy
            cap = w * units
            if demands is None:
                if lam <= 0 or cap <= 0:
                    continue
                frac = min(1.0, max(0.0, cap / lam - 1.0 / (svc.deadline * lam)))
                values[e] = svc.reward * lam * frac
            else:
                served = min(max(0.0, cap - 1.0 / svc.deadline), float(demands[k]))
                values[e] = svc.reward * served
        tables.append(values)
    return tables


def solve_energy_split(
    node: FogNodeSpec,
    services: tuple[ServiceTypeSpec, ...],
    arrivals,
    budget: int,
    require_full: bool = True,
):
    """Best integer split of an energy budget across services for one node alone.

    Maximizes the summed closed-form payoff of serving the node's own
    arrivals.  Ties prefer the balanced split (smallest sum of squares); in
    slack mode (require_full=False) a smaller total outranks balance, so
    useless energy is left unspent.

    Returns:
        (split, value): integer energy per service and the summed payoff.
    """
    budget = int(budget)
    if budget < 0:
        raise ValueError("budget must be >= 0")
    k_n = len(services)
    caps = [min(budget, node.max_units * node.unit_energy) for _ in services]
    if require_full and sum(caps) < budget:
        raise ValueError(
            f"budget {budget} cannot be fully allocated under the per-service unit cap"
        )
    tables = _split_value_table(node, services, arrivals, budget)
    # dp[b] = best (value, -sum_sq, split) committing exactly b energy
    dp: list[tuple[float, float, tuple[int, ...]] | None] = [None] * (budget + 1)
    dp[0] = (0.0, 0.0, ())
    for k in range(k_n):
        nxt: list[tuple[float, float, tuple[int, ...]] | None] = [None] * (budget + 1)
        for b, entry in enumerate(dp):
            if entry is None:
                continue
            value, neg_sq, split = entry
            for e in range(0, min(caps[k], budget - b) + 1):
                cand = (value + tables[k][e], neg_sq - e * e, split + (e,))
                cur = nxt[b + e]
                if cur is None or cand[:2] > cur[:2]:
                    nxt[b + e] = cand
        dp = nxt
    if require_full:
        best = dp[budget]
        if best is None:
            raise ValueError("budget cannot be split under the caps")
    else:
        best = None
        for b in range(budget + 1):
            entry = dp[b]
            if entry is None:
                continue
            key = (entry[0], -b, entry[1])
            if best is None or key > best[0]:
                best = (key, entry)
        best = best[1]
    value, _, split = best
    return np.array(split, dtype=int), float(value)


# ---------------------------------------------------------------------------
# Social welfare over all slices of a slot.


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-6
    max_rounds: int = 200
    exhaustive_nodes: int = 3
    exhaustive_vectors: int = 4000
    refine_rounds: int = 0
    offload: OffloadOptions = field(default_factory=OffloadOptions)


@dataclass(frozen=True)
class WelfareSolution:
    agreement: SlicingAgreement
    welfare: float
    status: str  # exhaustive | converged | max_rounds | heuristic
    certified: bool
    rounds: int


def _service_caps(game: GameInstance) -> np.ndarray:
    """Per node, per service energy ceiling from the unit cap (n x K)."""
    return np.array(
        [[nd.max_units * nd.unit_energy] * game.network.n_services for nd in game.network.nodes]
    )


def _assemble(game: GameInstance, energy: np.ndarray, alphas: list[np.ndarray]) -> SlicingAgreement:
    n, k_n = game.network.n_nodes, game.network.n_services
    rewards = np.zeros((n, k_n))
    offload = np.zeros((k_n, n, n))
    for k in range(k_n):
        offload[k] = alphas[k]
        rewards[:, k] = (
            game.network.services[k].reward * game.arrivals[:, k] * alphas[k].sum(axis=1)
        )
    return SlicingAgreement(energy=energy.astype(int), offload=offload, rewards=rewards)


def _exhaustive_vector_count(game: GameInstance) -> int:
    caps = _service_caps(game)
    count = 1
    for i in range(game.network.n_nodes):
        count *= int(min(game.budgets[i], caps[i, 0])) + 1
        if count > 10**9:
            break
    return count


def _solve_exhaustive(game: GameInstance, opt: SolverOptions) -> WelfareSolution:
    """Exact welfare by enumerating every per-service energy vector.

    Services decouple once the split is fixed, so each service's best
    offload is computed once per energy vector and the joint split is
    assembled by a search over vector combinations under the budgets.
    """
    net = game.network
    n, k_n = net.n_nodes, net.n_services
    caps = _service_caps(game)
    per_service: list[dict[tuple[int, ...], tuple[float, np.ndarray]]] = []
    for k in range(k_n):
        ranges = [range(int(min(game.budgets[i], caps[i, k])) + 1) for i in range(n)]
        table: dict[tuple[int, ...], tuple[float, np.ndarray]] = {}
        for vec in itertools.product(*ranges):
            sol = solve_offload(game.slice_for(k, np.array(vec)), opt.offload)
            table[vec] = (sol.welfare, sol.alpha)
        per_service.append(table)

    budgets = tuple(int(b) for b in game.budgets)
    memo: dict[tuple[int, tuple[int, ...]], tuple[float, tuple]] = {}

    def best_from(k: int, remaining: tuple[int, ...]) -> tuple[float, tuple]:
        if k == k_n:
            return 0.0, ()
        key = (k, remaining)
        if key in memo:
            return memo[key]
        best = (-np.inf, ())
        for vec, (welfare, _) in per_service[k].items():
            if any(e > r for e, r in zip(vec, remaining)):
                continue
            rest = tuple(r - e for r, e in zip(remaining, vec))
            sub_w, sub_vecs = best_from(k + 1, rest)
            total = welfare + sub_w
            if total > best[0]:
                best = (total, (vec,) + sub_vecs)
        memo[key] = best
        return best

    welfare, vecs = best_from(0, budgets)
    energy = np.array(vecs, dtype=int).T if vecs else np.zeros((n, k_n), dtype=int)
    alphas = [per_service[k][vecs[k]][1] for k in range(k_n)]
    energy, alphas = _trim_energy(game, energy, alphas)
    return WelfareSolution(
        agreement=_assemble(game, energy, alphas),
        welfare=welfare,
        status="exhaustive",
        certified=True,
        rounds=0,
    )


def _isolated_candidate(game: GameInstance):
    """Every node alone: slack-mode split plus the closed-form local fraction."""
    net = game.network
    n, k_n = net.n_nodes, net.n_services
    energy = np.zeros((n, k_n), dtype=int)
    alphas = [np.zeros((n, n)) for _ in range(k_n)]
    for i, nd in enumerate(net.nodes):
        split, _ = solve_energy_split(
            nd, net.services, game.arrivals[i], int(game.budgets[i]), require_full=False
        )
        energy[i] = split
        for k, svc in enumerate(net.services):
            lam = game.arrivals[i, k]
            if lam <= 0 or split[k] <= 0:
                continue
            units = split[k] // nd.unit_energy
            cap = svc.unit_rate * nd.rate_factor * units
            # largest admissible share under the per-request deadline mix
            frac = min(1.0, svc.deadline * cap / (1.0 + svc.deadline * lam))
            alphas[k][i, i] = frac
    welfare = _total_welfare(game, alphas)
    return energy, alphas, welfare


def _total_welfare(game: GameInstance, alphas) -> float:
    total = 0.0
    for k, svc in enumerate(game.network.services):
        total += svc.reward * float(np.sum(game.arrivals[:, k] * alphas[k].sum(axis=1)))
    return total


def _slack_split(tables, budget: int, caps, step: int) -> np.ndarray:
    """Best whole-unit energy split of ``budget`` over the value tables.

    Unlike the per-node split used for isolated play, nothing forces the
    budget to be spent; ties prefer committing less.
    """
    neg = -1e18
    dp = np.full(budget + 1, neg)
    dp[0] = 0.0
    picks = []
    for k, table in enumerate(tables):
        ndp = np.full(budget + 1, neg)
        pick = np.zeros(budget + 1, dtype=int)
        for prev in range(budget + 1):
            if dp[prev] <= neg / 2:
                continue
            for e in range(0, caps[k] + 1, max(step, 1)):
                total = prev + e
                if total > budget:
                    break
                value = dp[prev] + table[e]
                if value > ndp[total] + 1e-12:
                    ndp[total] = value
                    pick[total] = e
        dp = ndp
        picks.append(pick)
    best_total = max(range(budget + 1), key=lambda t: (dp[t], -t))
    split = np.zeros(len(tables), dtype=int)
    total = best_total
    for k in reversed(range(len(tables))):
        split[k] = picks[k][total]
        total -= split[k]
    return split


def _demand_candidate(game: GameInstance, opt: SolverOptions):
    """Provision capacity for own plus potential inbound workload, then route."""
    net = game.network
    n, k_n = net.n_nodes, net.n_services
    inbound = np.zeros((n, k_n))
    for j in range(n):
        for m in net.neighbors[j]:
            inbound[m] += game.arrivals[j]
    energy = np.zeros((n, k_n), dtype=int)
    for i, nd in enumerate(net.nodes):
        demands = game.arrivals[i] + inbound[i]
        budget = int(game.budgets[i])
        tables = _split_value_table(nd, net.services, game.arrivals[i], budget, demands=demands)
        caps = [min(budget, nd.max_units * nd.unit_energy) for _ in net.services]
        # the demand-driven value curves are flat for the first units (the
        # deadline floor eats them), so a marginal greedy stalls; a small
        # exact split over whole units does not
        energy[i] = _slack_split(tables, budget, caps, nd.unit_energy)
    alphas = []
    for k in range(k_n):
        sol = solve_offload(game.slice_for(k, energy[:, k]), opt.offload)
        alphas.append(sol.alpha)
    energy, alphas = _trim_energy(game, energy, alphas)
    return energy, alphas, _total_welfare(game, alphas)


def _trim_energy(game: GameInstance, energy: np.ndarray, alphas):
    """Drop committed energy that supports no allocation.

    Whole units are removed while every response time stays within its
    deadline; sub-unit remainders activate nothing and are always dropped.
    The offload matrices, and hence all payoffs, are unchanged.
    """
    net = game.network
    energy = energy.copy()
    for i, nd in enumerate(net.nodes):
        for k in range(net.n_services):
            energy[i, k] -= energy[i, k] % nd.unit_energy
    for k, svc in enumerate(net.services):
        alpha = alphas[k]
        lam = game.arrivals[:, k]
        loads = alpha.T @ lam
        for i, nd in enumerate(net.nodes):
            while energy[i, k] >= nd.unit_energy:
                trial = energy[:, k].copy()
                trial[i] -= nd.unit_energy
                caps = np.array(
                    [
                        svc.unit_rate * node.rate_factor * (int(e) // node.unit_energy)
                        for e, node in zip(trial, net.nodes)
                    ]
                )
                if loads[i] > caps[i] - RESIDUAL_FLOOR:
                    break
                pis = response_times(alpha, lam, caps, net.rtt)
                rows = alpha.sum(axis=1)
                if np.any((rows > 0) & (pis > svc.deadline + FEAS_TOL)):
                    break
                energy[i, k] = trial[i]
    return energy, alphas


def solve_social_welfare(game: GameInstance, options: SolverOptions | None = None) -> WelfareSolution:
    """Energy splits and offload matrices maximizing total slot payoff.

    Small instances are solved exactly by enumerating energy vectors per
    service (services decouple given the split).  Larger ones build two
    candidates, isolated play and demand-driven provisioning with routed
    offload, optionally refined by single-unit energy shifts, and keep the
    better; the isolated candidate guarantees cooperation never pays less
    than going it alone.
    """
    opt = options or SolverOptions()
    n = game.network.n_nodes
    if n <= opt.exhaustive_nodes and _exhaustive_vector_count(game) <= opt.exhaustive_vectors:
        return _solve_exhaustive(game, opt)

    iso_energy, iso_alphas, iso_welfare = _isolated_candidate(game)
    coop_energy, coop_alphas, coop_welfare = _demand_candidate(game, opt)
    if coop_welfare >= iso_welfare - 1e-12:
        energy, alphas, welfare = coop_energy, coop_alphas, coop_welfare
    else:
        energy, alphas, welfare = iso_energy, iso_alphas, iso_welfare

    status = "heuristic"
    certified = False
    rounds = 0
    if opt.refine_rounds > 0:
        energy, alphas, welfare, rounds, converged = _refine_shifts(
            game, energy, alphas, welfare, opt
        )
        status = "converged" if converged else "max_rounds"
        certified = converged
    return WelfareSolution(
        agreement=_assemble(game, energy, alphas),
        welfare=welfare,
        status=status,
        certified=certified,
        rounds=rounds,
    )


def _refine_shifts(game: GameInstance, energy, alphas, welfare, opt: SolverOptions):
    """Hill-climb on single-unit energy shifts, re-routing affected slices."""
    net = game.network
    n, k_n = net.n_nodes, net.n_services
    caps = _service_caps(game)
    rounds = min(opt.refine_rounds, opt.max_rounds)
    converged = False
    for rnd in range(1, rounds + 1):
        improved = 0.0
        for i, nd in enumerate(net.nodes):
            step = nd.unit_energy
            moves = []
            for k_from in range(-1, k_n):  # -1: draw from unspent budget
                for k_to in range(k_n):
                    if k_from == k_to:
                        continue
                    moves.append((k_from, k_to))
            for k_from, k_to in moves:
                trial = energy.copy()
                if k_from >= 0:
                    if trial[i, k_from] < step:
                        continue
                    trial[i, k_from] -= step
                else:
                    if trial[i].sum() + step > game.budgets[i]:
                        continue
                if trial[i, k_to] + step > caps[i, k_to]:
                    continue
                trial[i, k_to] += step
                trial_alphas = list(alphas)
                for k in {k_from, k_to} - {-1}:
                    sol = solve_offload(game.slice_for(k, trial[:, k]), opt.offload)
                    trial_alphas[k] = sol.alpha
                trial_welfare = _total_welfare(game, trial_alphas)
                if trial_welfare > welfare + 1e-12:
                    improved += trial_welfare - welfare
                    energy, alphas, welfare = trial, trial_alphas, trial_welfare
        if improved <= opt.tol * max(1.0, abs(welfare)):
            converged = True
            break
    energy, alphas = _trim_energy(game, energy, alphas)
    return energy, alphas, welfare, rnd, converged


# ---------------------------------------------------------------------------
# Conservative core check by bounded enumeration.


@dataclass(frozen=True)
class CoreOptions:
    n_max: int = 4
    grid: float = 0.05
    max_checks: int = 2_000_000
    # a deviation must beat the standing reward by more than the offload
    # solver's own convergence tolerance, or it is numerical noise
    strict_eps: float = 1e-6


@dataclass(frozen=True)
class Deviation:
    members: tuple[int, ...]
    energy: np.ndarray  # |N| x K
    alphas: tuple[np.ndarray, ...]  # per service, |N| x |N| (local indices)
    rewards: np.ndarray  # |N|


@dataclass(frozen=True)
class CoreResult:
    deviation: Deviation | None
    certified: bool
    checked_subsets: int
    truncated_sizes: tuple[int, ...]
    grid: float


def _member_upper_bound(game: GameInstance, members: tuple[int, ...], i_local: int) -> float:
    """Optimistic payoff of one member inside a deviating coalition.

    Every other member's full budget is assumed available to every service
    at once with no competing load; a genuine upper bound on anything the
    coalition can actually arrange.
    """
    net = game.network
    i = members[i_local]
    total = 0.0
    for k, svc in enumerate(net.services):
        lam = float(game.arrivals[i, k])
        if lam <= 0:
            continue
        dests = [
            m
            for m in members
            if m == i or (m in net.neighbors[i] and net.rtt[i, m] < svc.deadline)
        ]
        cap = np.array(
            [
                svc.unit_rate * net.nodes[m].rate_factor * (int(game.budgets[m]) // net.nodes[m].unit_energy)
                for m in dests
            ],
            dtype=float,
        )
        tau = np.array([net.rtt[i, m] for m in dests])
        box = np.maximum((cap - RESIDUAL_FLOOR) / lam, 0.0)
        row = _waterfill(tau, cap, np.minimum(box, 1.0), lam, svc.deadline)
        total += svc.reward * lam * float(row.sum())
    return total


def _grid_rows(lam, caps, tau_row, dest_idx, grid, theta):
    """Candidate allocation rows on the grid for one sender and service.

    Per-destination loads beyond capacity can never become feasible, so
    those entries are cut before enumeration.
    """
    if lam <= 0:
        return [tuple(0 for _ in dest_idx)]
    steps = int(round(1.0 / grid))
    max_per_dest = []
    for d, m in enumerate(dest_idx):
        top = min(steps, int((caps[d] - FEAS_TOL) / (lam * grid)) if caps[d] > 0 else 0)
        if tau_row[d] >= theta:
            top = 0  # the rtt alone already breaks the deadline on this path
        max_per_dest.append(max(top, 0))
    rows = []

    def rec(d, left, acc):
        if d == len(dest_idx):
            rows.append(tuple(acc))
            return
        for units in range(min(max_per_dest[d], left) + 1):
            rec(d + 1, left - units, acc + [units])

    rec(0, steps, [])
    return rows


def check_core(
    game: GameInstance, agreement: SlicingAgreement, options: CoreOptions | None = None
) -> CoreResult:
    """Search for a coalition whose members all strictly beat their payoff.

    Deviating coalitions are conservative: they keep only their own members'
    energy and workload and re-split on integer units, with offload
    fractions restricted to the grid.  Subsets up to ``n_max`` nodes are
    enumerated; exceeding the check budget truncates the search for that
    subset size and is reported rather than certified.
    """
    opt = options or CoreOptions()
    net = game.network
    n, k_n = net.n_nodes, net.n_services
    current = agreement.total_rewards()
    full_service = np.array(
        [
            sum(net.services[k].reward * game.arrivals[i, k] for k in range(k_n))
            for i in range(n)
        ]
    )
    checked = 0
    truncated: list[int] = []
    budget_left = opt.max_checks
    for size in range(1, min(opt.n_max, n) + 1):
        for members in itertools.combinations(range(n), size):
            checked += 1
            if any(current[i] >= full_service[i] - opt.strict_eps for i in members):
                continue
            bounds_ok = all(
                _member_upper_bound(game, members, li) > current[m] + opt.strict_eps
                for li, m in enumerate(members)
            )
            if not bounds_ok:
                continue
            found, spent = _search_subset(game, members, current, opt, budget_left)
            budget_left -= spent
            if found is not None:
                return CoreResult(found, False, checked, tuple(truncated), opt.grid)
            if budget_left <= 0:
                truncated.append(size)
                return CoreResult(None, False, checked, tuple(truncated), opt.grid)
    return CoreResult(None, True, checked, tuple(truncated), opt.grid)


def _search_subset(game, members, current, opt: CoreOptions, budget: int):
    """Grid search one subset for an all-strict-gain agreement."""
    net = game.network
    k_n = net.n_services
    size = len(members)
    local = {m: li for li, m in enumerate(members)}
    dest_sets = [
        [local[m] for m in members if m == i or m in net.neighbors[i]] for i in members
    ]
    split_sets = []
    for m in members:
        nd = net.nodes[m]
        budget_m = int(game.budgets[m])
        cap_per = min(budget_m, nd.max_units * nd.unit_energy)
        splits = [
            s
            for s in itertools.product(range(0, cap_per + 1, nd.unit_energy), repeat=k_n)
            if sum(s) <= budget_m
        ]
        # more energy never hurts: keep only splits not dominated elementwise
        splits = [
            s
            for s in splits
            if not any(all(o[k] >= s[k] for k in range(k_n)) and o != s for o in splits)
        ]
        split_sets.append(splits)

    spent = 0
    grid = opt.grid
    for split_combo in itertools.product(*split_sets):
        caps = np.zeros((size, k_n))
        for li, m in enumerate(members):
            nd = net.nodes[m]
            for k in range(k_n):
                caps[li, k] = (
                    net.services[k].unit_rate
                    * nd.rate_factor
                    * (split_combo[li][k] // nd.unit_energy)
                )
        # candidate row bundles per member: joint rows over services, with
        # the member's total payoff, kept only if strictly above current
        bundles = []
        feasible_subset = True
        for li, m in enumerate(members):
            dests = dest_sets[li]
            per_service_rows = []
            for k in range(k_n):
                lam = float(game.arrivals[m, k])
                tau_row = [net.rtt[m, members[d]] for d in dests]
                rows = _grid_rows(
                    lam, [caps[d, k] for d in dests], tau_row, dests, grid, net.services[k].deadline
                )
                per_service_rows.append(rows)
            combos = []
            for combo in itertools.product(*per_service_rows):
                reward = sum(
                    net.services[k].reward
                    * game.arrivals[m, k]
                    * (sum(combo[k]) * grid)
                    for k in range(k_n)
                )
                if reward > current[m] + opt.strict_eps:
                    combos.append((reward, combo))
            if not combos:
                feasible_subset = False
                break
            combos.sort(key=lambda rc: -rc[0])
            bundles.append(combos)
        if not feasible_subset:
            continue

        found = _dfs_rows(game, members, dest_sets, caps, bundles, grid, opt, spent, budget)
        spent = found[1]
        if found[0] is not None:
            split_energy = np.array(split_combo, dtype=int)
            return (
                Deviation(
                    members=members,
                    energy=split_energy,
                    alphas=found[0][0],
                    rewards=found[0][1],
                ),
                spent,
            )
        if spent >= budget:
            return None, spent
    return None, spent


def _dfs_rows(game, members, dest_sets, caps, bundles, grid, opt, spent, budget):
    net = game.network
    k_n = net.n_services
    size = len(members)
    lam = np.array([[game.arrivals[m, k] for k in range(k_n)] for m in members])
    chosen: list = [None] * size

    def feasible_leaf():
        for k in range(k_n):
            alpha = np.zeros((size, size))
            for li in range(size):
                for d, dest in enumerate(dest_sets[li]):
                    alpha[li, dest] = chosen[li][k][d] * grid
            loads = alpha.T @ lam[:, k]
            resid = caps[:, k] - loads
            used = alpha > 0
            if np.any(used.any(axis=0) & (resid <= FEAS_TOL)):
                return None
            delay = np.where(resid > FEAS_TOL, 1.0 / np.maximum(resid, 1e-300), np.inf)
            for li in range(size):
                row = alpha[li]
                if row.sum() <= 0:
                    continue
                tau = np.array([net.rtt[members[li], members[m]] for m in range(size)])
                pi = float(np.sum(row * (tau + delay), where=row > 0))
                if pi > net.services[k].deadline + FEAS_TOL:
                    return None
        alphas = []
        for k in range(k_n):
            a = np.zeros((size, size))
            for li in range(size):
                for d, dest in enumerate(dest_sets[li]):
                    a[li, dest] = chosen[li][k][d] * grid
            alphas.append(a)
        rewards = np.array(
            [
                sum(
                    net.services[k].reward * lam[li, k] * alphas[k][li].sum()
                    for k in range(k_n)
                )
                for li in range(size)
            ]
        )
        return tuple(alphas), rewards

    def rec(li, spent):
        if spent >= budget:
            return None, spent
        if li == size:
            leaf = feasible_leaf()
            return (leaf, spent + 1) if leaf is not None else (None, spent + 1)
        for reward, combo in bundles[li]:
            chosen[li] = combo
            result, spent = rec(li + 1, spent + 1)
            if result is not None or spent >= budget:
                chosen[li] = None
                return result, spent
        chosen[li] = None
        return None, spent

    return rec(0, spent)
