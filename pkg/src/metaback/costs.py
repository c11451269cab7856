"""Communication and computation cost accounting.

Transfers are priced with a Shannon-capacity link model: sending one model of
d elements takes bits_per_element * d / rate seconds at the configured
transmit power. Compute cost is tracked as a hardware-independent gradient
evaluation count plus an energy figure derived from a wall-time value times
a device wattage; callers choose whether that wall time is measured or an
analytic, reproducible estimate (see EnergyConfig.timing).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

TIMING_MODES = ("analytic", "measured")


@dataclass(frozen=True)
class ChannelConfig:
    """AWGN link parameters plus transfer-size and accounting conventions.

    With `per_agent_broadcast` the server downlink is charged as one unicast
    transfer per agent (the conservative default); otherwise a broadcast
    costs a single transfer.
    """

    bandwidth_hz: float = 5000.0
    tx_power_w: float = 2.0
    noise_psd: float = 1e-4
    bits_per_element: int = 32
    per_agent_broadcast: bool = True

    def __post_init__(self) -> None:
        if self.bandwidth_hz <= 0 or self.tx_power_w <= 0 or self.noise_psd <= 0:
            raise ValueError("bandwidth, power, and noise density must be positive")
        if self.bits_per_element < 1:
            raise ValueError("bits_per_element must be positive")

    def broadcast_transfers(self, n_agents: int) -> int:
        return n_agents if self.per_agent_broadcast else 1


@dataclass(frozen=True)
class EnergyConfig:
    """Compute-energy accounting: device wattage and the timing source.

    timing="analytic" prices compute time as grad_evals * seconds_per_grad_eval,
    which keeps cost outputs bit-reproducible across runs; timing="measured"
    uses monotonic wall-clock time around the compute sections instead.
    """

    device_watts: float = 15.0
    seconds_per_grad_eval: float = 1e-3
    timing: str = "analytic"

    def __post_init__(self) -> None:
        if self.device_watts <= 0 or self.seconds_per_grad_eval <= 0:
            raise ValueError("device_watts and seconds_per_grad_eval must be positive")
        if self.timing not in TIMING_MODES:
            raise ValueError(f"timing must be one of {TIMING_MODES}")

    def wall_time(self, grad_evals: int, measured_s: float) -> float:
        if self.timing == "measured":
            return measured_s
        return grad_evals * self.seconds_per_grad_eval


def shannon_rate(ch: ChannelConfig) -> float:
    """Link rate in bits/s: B * log2(1 + P / (N0 * B))."""
    return ch.bandwidth_hz * math.log2(1.0 + ch.tx_power_w / (ch.noise_psd * ch.bandwidth_hz))


def transfer_cost(d: int, ch: ChannelConfig) -> tuple[float, float]:
    """(seconds, joules) to send one d-element model over the link."""
    if d < 1:
        raise ValueError("model size must be positive")
    tau = ch.bits_per_element * d / shannon_rate(ch)
    return tau, ch.tx_power_w * tau


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    uplink_bits: int
    downlink_bits: int
    comm_time_s: float
    comm_energy_j: float
    grad_evals: int
    wall_time_s: float
    compute_energy_j: float


@dataclass
class CostLedger:
    """Per-round cost records with exactly-summing totals.

    Totals use compensated summation (math.fsum), so they are invariant to
    the order in which rounds were recorded.
    """

    channel: ChannelConfig = field(default_factory=ChannelConfig)
    rounds: list[RoundRecord] = field(default_factory=list)

    def record_round(
        self,
        round_index: int,
        uplinks: int,
        downlinks: int,
        d: int,
        grad_evals: int,
        wall_time_s: float,
        device_watts: float,
    ) -> RoundRecord:
        """Append one round's costs. Counts are numbers of model transfers."""
        if min(uplinks, downlinks, grad_evals) < 0:
            raise ValueError("counts must be non-negative")
        if wall_time_s < 0:
            raise ValueError("wall_time_s must be non-negative")
        bits_each = self.channel.bits_per_element * d
        up_bits = uplinks * bits_each
        down_bits = downlinks * bits_each
        comm_time = (up_bits + down_bits) / shannon_rate(self.channel)
        record = RoundRecord(
            round_index=round_index,
            uplink_bits=up_bits,
            downlink_bits=down_bits,
            comm_time_s=comm_time,
            comm_energy_j=self.channel.tx_power_w * comm_time,
            grad_evals=grad_evals,
            wall_time_s=wall_time_s,
            compute_energy_j=wall_time_s * device_watts,
        )
        self.rounds.append(record)
        return record

    @property
    def total_bits(self) -> int:
        return sum(r.uplink_bits + r.downlink_bits for r in self.rounds)

    @property
    def total_comm_time_s(self) -> float:
        return math.fsum(r.comm_time_s for r in self.rounds)

    @property
    def total_comm_energy_j(self) -> float:
        return math.fsum(r.comm_energy_j for r in self.rounds)

    @property
    def total_grad_evals(self) -> int:
        return sum(r.grad_evals for r in self.rounds)

    @property
    def total_wall_time_s(self) -> float:
        return math.fsum(r.wall_time_s for r in self.rounds)

    @property
    def total_compute_energy_j(self) -> float:
        return math.fsum(r.compute_energy_j for r in self.rounds)

    def write_csv(self, path: str | Path) -> None:
        """Canonical per-round cost table, one row per recorded round."""
        lines = ["round,bits,time_s,comm_j,grad_evals,compute_j"]
        for r in self.rounds:
            lines.append(
                f"{r.round_index},{r.uplink_bits + r.downlink_bits},"
                f"{r.comm_time_s!r},{r.comm_energy_j!r},{r.grad_evals},"
                f"{r.compute_energy_j!r}"
            )
        Path(path).write_text("\n".join(lines) + "\n")
