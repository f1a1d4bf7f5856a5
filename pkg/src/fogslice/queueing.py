"""M/M/1 response times for sliced fog nodes and the closed-form offload optimum.

A node that activates p processing units for a service behaves as an M/M/1
server with service rate w*p for that service; response time of admitted
workload alpha*lam is 1/(w*p - alpha*lam).  Forwarded workload additionally
pays the round-trip time to its destination, weighted by the forwarded
fraction.
"""

from __future__ import annotations

import numpy as np

SATURATION_TOL = 1e-9


class UnstableError(ValueError):
    """Offered load reaches or exceeds service capacity; queue diverges."""


class DegenerateArrival(ValueError):
    """Operation undefined for a zero arrival rate."""


def response_time_local(alpha: float, arrival_rate: float, service_rate: float) -> float:
    """Expected response time when a node serves alpha of its load locally.

    Args:
        alpha: Admitted fraction of the arriving workload, in [0, 1].
        arrival_rate: Workload arrival rate lam, requests/s.
        service_rate: Activated capacity w*p, requests/s.

    Returns:
        1 / (service_rate - alpha * arrival_rate), seconds.

    Raises:
        UnstableError: If the admitted load reaches capacity (within 1e-9).
    """
    if alpha < 0 or arrival_rate < 0:
        raise ValueError("alpha and arrival_rate must be >= 0")
    residual = service_rate - alpha * arrival_rate
    if residual <= SATURATION_TOL:
        raise UnstableError(
            f"load {alpha * arrival_rate:.6f} saturates capacity {service_rate:.6f}"
        )
    return 1.0 / residual


def response_time_forwarding(
    alpha: np.ndarray,
    arrivals: np.ndarray,
    capacities: np.ndarray,
    rtt: np.ndarray,
    sender: int | None = None,
):
    """Response time of offloaded workload under forwarding, per sender.

    Each destination m serves the aggregate load sum_j alpha[j, m] * arrivals[j]
    from one queue; a sender's workload forwarded to m pays rtt[sender, m] on
    top of the queueing delay, weighted by the forwarded fraction:

        pi_i = sum_m alpha[i, m] * (rtt[i, m] + 1 / (capacities[m] - load_m))

    Args:
        alpha: Offload fraction matrix (n x n), row per sender.
        arrivals: Arrival rate per node (n,), requests/s.
        capacities: Activated capacity per node (n,), requests/s.
        rtt: Round-trip times (n x n), zero diagonal.
        sender: Node whose response time is wanted; None returns all senders.

    Raises:
        UnstableError: If a destination carrying load of the requested
            sender(s) has no residual capacity (within 1e-9).
    """
    alpha = np.asarray(alpha, dtype=float)
    arrivals = np.asarray(arrivals, dtype=float)
    capacities = np.asarray(capacities, dtype=float)
    rtt = np.asarray(rtt, dtype=float)
    loads = alpha.T @ arrivals
    residual = capacities - loads
    used = alpha > 0
    relevant = used[sender] if sender is not None else used.any(axis=0)
    bad = relevant & (residual <= SATURATION_TOL)
    if np.any(bad):
        m = int(np.argmax(bad))
        raise UnstableError(
            f"destination {m}: load {loads[m]:.6f} saturates capacity {capacities[m]:.6f}"
        )
    delay = np.zeros_like(residual)
    ok = residual > SATURATION_TOL
    delay[ok] = 1.0 / residual[ok]
    per_path = rtt + delay[None, :]
    if sender is not None:
        return float(np.sum(alpha[sender] * per_path[sender], where=used[sender]))
    return np.sum(alpha * per_path, axis=1, where=used)


def optimal_local_fraction(
    energy: float,
    unit_energy: int,
    unit_rate: float,
    arrival_rate: float,
    deadline: float,
    whole_units: bool = True,
) -> float:
    """Largest admissible local offload fraction for one node and service.

    The fraction solving response_time_local(alpha) == deadline, clamped to
    [0, 1]:

        alpha* = clamp(w * e / (lam * e_unit) - 1 / (deadline * lam), 0, 1)

    With whole_units (the default) capacity counts only fully activated
    processing units, w * floor(e / e_unit); the continuous relaxation
    (whole_units=False) uses w * e / e_unit directly.

    Raises:
        DegenerateArrival: If arrival_rate is zero.
    """
    if arrival_rate == 0:
        raise DegenerateArrival("no workload: offload fraction undefined")
    if arrival_rate < 0 or energy < 0:
        raise ValueError("arrival_rate and energy must be >= 0")
    if deadline <= 0:
        raise ValueError("deadline must be > 0")
    if whole_units:
        capacity = unit_rate * (int(energy) // int(unit_energy))
    else:
        capacity = unit_rate * energy / unit_energy
    alpha = capacity / arrival_rate - 1.0 / (deadline * arrival_rate)
    return float(min(1.0, max(0.0, alpha)))
