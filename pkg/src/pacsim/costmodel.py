"""Cycle, activation-traffic and energy accounting for all-digital vs hybrid schemes.

Energy constants are per binary (1b/1b) operation and are derived from
efficiency figures: ``energy_per_op = 1 / (TOPS/W * 1e12)`` joules. Cache and
DRAM constants are per access and get divided by the access width.
"""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from pacsim.encoder import counter_width
from pacsim.errors import PacsimError

DCIM_TOPS_PER_W = 235.01
PCU_TOPS_PER_W = 2945.92
SRAM_PJ_PER_ACCESS = 30.375
DRAM_PJ_PER_ACCESS = 200.0
DEFAULT_ACCESS_WIDTH = 64

FJ = 1e-15
PJ = 1e-12


@dataclass(frozen=True)
class EnergyParams:
    """Energy constants in joules.

    Defaults: D-CiM 235.01 TOPS/W and PCU + accumulator 2945.92 TOPS/W (0.6 V),
    512 KB SRAM cache at 30.375 pJ/access, DRAM at 200 pJ/access, 64-bit accesses.
    """

    e_dcim_1b_op: float = 1.0 / (DCIM_TOPS_PER_W * 1e12)
    e_pcu_op: float = 1.0 / (PCU_TOPS_PER_W * 1e12)
    e_sram_access: float = SRAM_PJ_PER_ACCESS * PJ
    e_dram_access: float = DRAM_PJ_PER_ACCESS * PJ
    access_width_bits: int = DEFAULT_ACCESS_WIDTH

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise PacsimError(f"{f.name} must be positive")

    @property
    def e_sram_bit(self):
        return self.e_sram_access / self.access_width_bits

    @property
    def e_dram_bit(self):
        return self.e_dram_access / self.access_width_bits

    @classmethod
    def from_file(cls, path):
        """Load overrides from JSON.

        Recognised keys (all optional): ``e_dcim_1b_op_fj``, ``e_pcu_op_fj``
        (femtojoules per op), ``dcim_tops_per_w``, ``pcu_tops_per_w``,
        ``e_sram_access_pj``, ``e_dram_access_pj`` (picojoules per access) and
        ``access_width_bits``.
        """
        raw = json.loads(Path(path).read_text())
        kw = {}
        if "dcim_tops_per_w" in raw:
            kw["e_dcim_1b_op"] = 1.0 / (float(raw.pop("dcim_tops_per_w")) * 1e12)
        if "pcu_tops_per_w" in raw:
            kw["e_pcu_op"] = 1.0 / (float(raw.pop("pcu_tops_per_w")) * 1e12)
        units = {"e_dcim_1b_op_fj": ("e_dcim_1b_op", FJ), "e_pcu_op_fj": ("e_pcu_op", FJ),
                 "e_sram_access_pj": ("e_sram_access", PJ), "e_dram_access_pj": ("e_dram_access", PJ)}
        for key, (name, unit) in units.items():
            if key in raw:
                kw[name] = float(raw.pop(key)) * unit
        if "access_width_bits" in raw:
            kw["access_width_bits"] = int(raw.pop("access_width_bits"))
        if raw:
            raise PacsimError(f"unknown energy parameter keys: {sorted(raw)}")
        return cls(**kw)

    def to_json(self):
        return json.dumps({
            "e_dcim_1b_op_fj": self.e_dcim_1b_op / FJ,
            "e_pcu_op_fj": self.e_pcu_op / FJ,
            "e_sram_access_pj": self.e_sram_access / PJ,
            "e_dram_access_pj": self.e_dram_access / PJ,
            "access_width_bits": self.access_width_bits,
        }, indent=2)


def count_cycles(P=8, Q=8, approx_bits=0, dynamic_avg=None):
    """Digital cycles and sparsity-domain ops per output MAC.

    ``dynamic_avg`` replaces the static digital count with a measured average.
    """
    if not 0 <= approx_bits <= min(P, Q):
        raise PacsimError(f"approx_bits must be in [0, {min(P, Q)}]")
    total = P * Q
    digital = (P - approx_bits) * (Q - approx_bits) if dynamic_avg is None else dynamic_avg
    if not 0 <= digital <= total:
        raise PacsimError(f"digital cycle count {digital} outside [0, {total}]")
    return digital, total - digital


def cycle_reduction_pct(P, Q, digital):
    return 100.0 * (1.0 - digital / (P * Q))


@dataclass(frozen=True)
class LayerGeometry:
    """Activation tensor written by one layer: ``groups`` encoder groups of ``channels`` values.

    CONV outputs have one group per pixel (``groups = H * W``); a LINEAR output
    is a single group.
    """

    groups: int
    channels: int

    @property
    def values(self):
        return self.groups * self.channels


@dataclass(frozen=True)
class TrafficReport:
    baseline_bits: int
    pacim_bits: float
    baseline_bits_per_value: float
    pacim_bits_per_value: float
    reduction_pct: float


def memory_traffic(geometry, P=8, approx_bits=4):
    """Activation cache traffic (write + read) for the baseline and hybrid schemes.

    Baseline moves every P-bit value. The hybrid scheme moves the MSB part
    (P - approx_bits bits) plus one set of P counters per encoder group.
    """
    n = geometry.channels
    if n < 1 or geometry.groups < 1:
        raise PacsimError("geometry needs at least one group of at least one channel")
    words = P * counter_width(n)
    baseline = 2 * geometry.values * P
    pacim = 2 * (geometry.values * (P - approx_bits) + geometry.groups * words)
    return TrafficReport(
        baseline_bits=baseline,
        pacim_bits=pacim,
        baseline_bits_per_value=float(P),
        pacim_bits_per_value=(P - approx_bits) + words / n,
        reduction_pct=100.0 * (1.0 - pacim / baseline),
    )


@dataclass
class CostReport:
    """Cost of ``macs`` output MACs of length ``n`` under one scheme."""

    scheme: str
    n: int
    macs: int
    digital_cycles: float
    sparsity_ops: float
    traffic_bits_baseline: float
    traffic_bits_pacim: float
    reduction_pct: float
    energy_breakdown: dict = field(default_factory=dict)

    @property
    def energy_total(self):
        return sum(self.energy_breakdown.values())

    @property
    def binary_ops(self):
        """1b/1b operations an all-digital engine would perform for the same work."""
        return self.macs * self.n * (self.digital_cycles + self.sparsity_ops)

    @property
    def compute_energy(self):
        return self.energy_breakdown.get("dcim", 0.0) + self.energy_breakdown.get("pcu", 0.0)

    def efficiency_tops_w(self, bits=1):
        """Compute efficiency in TOPS/W; ``bits=1`` counts 1b/1b ops, ``bits=8`` counts 8b/8b MACs."""
        e = self.compute_energy
        if e == 0:
            return math.nan
        ops = self.binary_ops if bits == 1 else self.macs * self.n
        return ops / e / 1e12

    def as_row(self):
        row = {k: v for k, v in asdict(self).items() if k != "energy_breakdown"}
        for k in ("dcim", "pcu", "sram", "dram"):
            row[f"energy_{k}_j"] = self.energy_breakdown.get(k, 0.0)
        row["energy_total_j"] = self.energy_total
        row["tops_w_1b"] = self.efficiency_tops_w(1)
        row["tops_w_8b"] = self.efficiency_tops_w(8)
        return row


def energy_estimate(n, macs, digital_cycles, sparsity_ops, params=None, traffic=None,
                    weight_bits_dram=0, scheme="custom"):
    """Energy of ``macs`` MACs of length ``n``.

    Digital cycles cost ``n`` binary ops each, every sparsity-domain cycle costs
    one PCU op. ``traffic`` (a :class:`TrafficReport`) adds cache energy for the
    scheme's activation bits; ``weight_bits_dram`` adds a DRAM term.
    """
    params = params or EnergyParams()
    breakdown = {
        "dcim": macs * digital_cycles * n * params.e_dcim_1b_op,
        "pcu": macs * sparsity_ops * params.e_pcu_op,
        "sram": 0.0,
        "dram": weight_bits_dram * params.e_dram_bit,
    }
    base_bits = pac_bits = 0.0
    red = 0.0
    if traffic is not None:
        base_bits, pac_bits, red = traffic.baseline_bits, traffic.pacim_bits, traffic.reduction_pct
        breakdown["sram"] = (pac_bits if sparsity_ops else base_bits) * params.e_sram_bit
    return CostReport(scheme, n, macs, digital_cycles, sparsity_ops, base_bits, pac_bits, red, breakdown)


def compare_schemes(n, macs=1, P=8, Q=8, approx_bits=4, dynamic_avg=None, geometry=None, params=None):
    """Cost reports for the all-digital baseline and the hybrid scheme on one workload."""
    traffic = memory_traffic(geometry, P, approx_bits) if geometry is not None else None
    base_d, base_s = count_cycles(P, Q, 0)
    hyb_d, hyb_s = count_cycles(P, Q, approx_bits, dynamic_avg)
    return [
        energy_estimate(n, macs, base_d, base_s, params, traffic, scheme="baseline"),
        energy_estimate(n, macs, hyb_d, hyb_s, params, traffic, scheme="hybrid"),
    ]


def reports_to_csv(reports, comments=()):
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    rows = [r.as_row() for r in reports]
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def format_table(reports):
    lines = [f"{'scheme':<10}{'digital':>9}{'sparse':>8}{'energy(pJ)':>12}{'TOPS/W 1b':>11}{'TOPS/W 8b':>11}{'traffic red.%':>15}"]
    for r in reports:
        lines.append(
            f"{r.scheme:<10}{r.digital_cycles:>9g}{r.sparsity_ops:>8g}{r.energy_total / PJ:>12.3f}"
            f"{r.efficiency_tops_w(1):>11.2f}{r.efficiency_tops_w(8):>11.3f}{r.reduction_pct:>15.2f}"
        )
    return "\n".join(lines)
