"""Problem data model: deterministic parameters, first-stage plans, generators.

An :class:`Instance` carries everything outside the uncertain demand: set sizes,
capacity and production economics, adjustment limits, eligibility, energy data,
and the two policy targets (green-penetration share ``tau`` and service level).

Unit conventions (documented in the JSON schema below): monetary *investment*
fields are stored in 1e6 currency units; per-product production/shortage costs
are stored in raw currency and normalized on load to 1e6-currency-per-1e4-products
(the demand unit), so the whole model runs in one unit system.  Raw values are
kept on the instance so serialization round-trips bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

DEMAND_UNIT = 1e4   # products per demand unit
MONEY_UNIT = 1e6    # currency per money unit
COST_NORM = DEMAND_UNIT / MONEY_UNIT  # raw cost/product -> model cost/demand-unit


class InvalidDecisionError(ValueError):
    """A first-stage plan violates the capacity-balance constraints."""


@dataclass(frozen=True)
class Violation:
    field: str
    indices: tuple
    rule: str

    def __str__(self):
        return f"{self.field}{list(self.indices)}: {self.rule}"


@dataclass
class Instance:
    """Deterministic data for one planning problem.

    Arrays are indexed by factory ``i``, capacity type ``j``, product ``k``,
    period ``t``; ineligible (j, k) cells hold zeros and are masked by
    ``eligible``.
    """

    name: str
    factories: list[str]
    capacity_types: list[str]
    products: list[str]
    periods: int

    expand_cost: np.ndarray       # (I, J), 1e6 units
    terminate_cost: np.ndarray    # (I, J), 1e6 units, may be negative (residual value)
    upgrade_cost: np.ndarray      # (I, J), 1e6 units
    pv_invest_cost: np.ndarray    # (I,), 1e6 units
    pv_kw: np.ndarray             # (I,), installed PV capacity in kW

    adjust_up: np.ndarray         # (I, J), int lines/period
    adjust_down: np.ndarray       # (I, J), int lines/period
    initial_lines: np.ndarray     # (I, J), int
    initial_green_lines: np.ndarray  # (I, J), int

    eligible: np.ndarray          # (J, K), bool
    use_rate_old: np.ndarray      # (J, K), capacity units/product
    use_rate_new: np.ndarray      # (J, K)
    lines_output_old: np.ndarray  # (J,), products (1e4) per line per period
    lines_output_new: np.ndarray  # (J,)
    prod_cost_old_raw: np.ndarray  # (I, J, K), raw currency/product
    prod_cost_new_raw: np.ndarray  # (I, J, K)
    shortage_penalty_raw: np.ndarray  # (K,), raw currency/product
    energy_per_unit: np.ndarray   # (J, K), kWh/product

    tau: float                    # green penetration target in [0, 1]
    service_level: float          # demand fraction that must be met, in [0, 1]
    m_big: int | None = None      # upper bound on lines; default derived from balance
    ambiguity_scale: float = 1.0  # box-width multiplier applied by the clustering stage
    nominal_demand: np.ndarray | None = None  # (K, T), 1e4 products, for sampling

    # -- derived ------------------------------------------------------------

    @property
    def n_factories(self):
        return len(self.factories)

    @property
    def n_capacity(self):
        return len(self.capacity_types)

    @property
    def n_products(self):
        return len(self.products)

    @property
    def big_m(self) -> int:
        if self.m_big is not None:
            return int(self.m_big)
        return int(np.max(self.initial_lines + self.periods * self.adjust_up))

    @property
    def prod_cost_old(self) -> np.ndarray:
        """Normalized (1e6-currency per 1e4-products) conventional production cost."""
        return self.prod_cost_old_raw * COST_NORM

    @property
    def prod_cost_new(self) -> np.ndarray:
        return self.prod_cost_new_raw * COST_NORM

    @property
    def shortage_penalty(self) -> np.ndarray:
        return self.shortage_penalty_raw * COST_NORM

    def eligibility_bound(self) -> np.ndarray:
        """The 'sufficiently large' per-line production cap b[j, k].

        Tightest bound implied by the line-capacity rows: number of products a
        single line can make in one period under either technology; 0 when
        ineligible.
        """
        J, K = self.n_capacity, self.n_products
        b = np.zeros((J, K))
        for j in range(J):
            for k in range(K):
                if self.eligible[j, k]:
                    old = self.lines_output_old[j] / self.use_rate_old[j, k]
                    new = self.lines_output_new[j] / self.use_rate_new[j, k]
                    b[j, k] = float(np.ceil(max(old, new)))
        return b

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return serialize(self) == serialize(other)


# ---------------------------------------------------------------------------
# First-stage plans


@dataclass
class FirstStageDecision:
    """Integer capacity plan.  Arrays (I, J, T) except ``pv_built`` (I,)."""

    lines: np.ndarray        # X
    added: np.ndarray        # X+
    removed: np.ndarray      # X-
    old_lines: np.ndarray    # X^O
    green_lines: np.ndarray  # X^N
    upgraded: np.ndarray     # X^N+
    pv_built: np.ndarray     # X^BR, binary (I,)

    def copy(self) -> "FirstStageDecision":
        return FirstStageDecision(*(a.copy() for a in (
            self.lines, self.added, self.removed, self.old_lines,
            self.green_lines, self.upgraded, self.pv_built)))


def decision_to_json(x: FirstStageDecision) -> dict:
    return {"lines": x.lines.tolist(), "added": x.added.tolist(),
            "removed": x.removed.tolist(), "old_lines": x.old_lines.tolist(),
            "green_lines": x.green_lines.tolist(), "upgraded": x.upgraded.tolist(),
            "pv_built": x.pv_built.tolist()}


def decision_from_json(doc: dict) -> FirstStageDecision:
    return FirstStageDecision(
        lines=np.asarray(doc["lines"], dtype=int),
        added=np.asarray(doc["added"], dtype=int),
        removed=np.asarray(doc["removed"], dtype=int),
        old_lines=np.asarray(doc["old_lines"], dtype=int),
        green_lines=np.asarray(doc["green_lines"], dtype=int),
        upgraded=np.asarray(doc["upgraded"], dtype=int),
        pv_built=np.asarray(doc["pv_built"], dtype=int))


def no_op_plan(inst: Instance) -> FirstStageDecision:
    """Hold the initial configuration: no adjustments, upgrades, or PV."""
    I, J, T = inst.n_factories, inst.n_capacity, inst.periods
    lines = np.repeat(inst.initial_lines[:, :, None], T, axis=2).astype(int)
    green = np.repeat(inst.initial_green_lines[:, :, None], T, axis=2).astype(int)
    z = np.zeros((I, J, T), dtype=int)
    return FirstStageDecision(lines=lines, added=z.copy(), removed=z.copy(),
                              old_lines=lines - green, green_lines=green,
                              upgraded=z.copy(), pv_built=np.zeros(I, dtype=int))


def validate_decision(inst: Instance, x: FirstStageDecision) -> list[Violation]:
    """Check the capacity-balance system exactly (integer arithmetic)."""
    out = []
    I, J, T = inst.n_factories, inst.n_capacity, inst.periods
    arrays = {"lines": x.lines, "added": x.added, "removed": x.removed,
              "old_lines": x.old_lines, "green_lines": x.green_lines,
              "upgraded": x.upgraded}
    for name, a in arrays.items():
        if a.shape != (I, J, T):
            out.append(Violation(name, (), f"shape {a.shape} != {(I, J, T)}"))
            return out
        if (a < 0).any():
            out.append(Violation(name, tuple(np.argwhere(a < 0)[0]), "negative entry"))
    if ((x.pv_built != 0) & (x.pv_built != 1)).any():
        out.append(Violation("pv_built", (), "must be binary"))
    if (x.lines[:, :, 0] != inst.initial_lines).any():
        out.append(Violation("lines", (0,), "period-1 lines must equal initial configuration"))
    if (x.green_lines[:, :, 0] != inst.initial_green_lines).any():
        out.append(Violation("green_lines", (0,), "period-1 green lines must equal initial"))
    for t in range(T - 1):
        bad = x.lines[:, :, t + 1] != x.lines[:, :, t] + x.added[:, :, t] - x.removed[:, :, t]
        for i, j in np.argwhere(bad):
            out.append(Violation("lines", (i, j, t + 1), "capacity balance violated"))
        badg = x.green_lines[:, :, t + 1] != x.green_lines[:, :, t] + x.upgraded[:, :, t]
        for i, j in np.argwhere(badg):
            out.append(Violation("green_lines", (i, j, t + 1), "green balance violated"))
    for i, j, t in np.argwhere(x.added > inst.adjust_up[:, :, None]):
        out.append(Violation("added", (i, j, t), "exceeds expansion limit"))
    for i, j, t in np.argwhere(x.removed > inst.adjust_down[:, :, None]):
        out.append(Violation("removed", (i, j, t), "exceeds termination limit"))
    for i, j, t in np.argwhere(x.old_lines + x.green_lines != x.lines):
        out.append(Violation("old_lines", (i, j, t), "old + green != total lines"))
    m0 = inst.big_m
    for i, j, t in np.argwhere(x.upgraded > m0 * x.pv_built[:, None, None]):
        out.append(Violation("upgraded", (i, j, t), "upgrade without renewable investment"))
    tot_upg = x.upgraded.sum(axis=(1, 2))
    for (i,) in np.argwhere(x.pv_built > tot_upg):
        out.append(Violation("pv_built", (i,), "renewable investment without any upgrade"))
    return out


def strategic_cost_breakdown(inst: Instance, x: FirstStageDecision) -> dict:
    bad = validate_decision(inst, x)
    if bad:
        raise InvalidDecisionError("; ".join(str(v) for v in bad[:5]))
    adjust = float(np.sum(inst.expand_cost[:, :, None] * x.added)
                   + np.sum(inst.terminate_cost[:, :, None] * x.removed))
    upgrade = float(np.sum(inst.upgrade_cost[:, :, None] * x.upgraded))
    renewable = float(np.sum(inst.pv_invest_cost * x.pv_built))
    return {"adjustment": adjust, "upgrade": upgrade, "renewable": renewable,
            "total": adjust + upgrade + renewable}


def strategic_cost(inst: Instance, x: FirstStageDecision) -> float:
    return strategic_cost_breakdown(inst, x)["total"]


# ---------------------------------------------------------------------------
# Flat layout of the first-stage variable vector, shared by the recourse
# matrices and the master-problem builders.

_X_BLOCKS = ("X", "XP", "XM", "XO", "XN", "XNP")


class XLayout:
    """Canonical flattening of first-stage variables: six (I,J,T) blocks then X^BR."""

    def __init__(self, inst: Instance):
        self.I, self.J, self.T = inst.n_factories, inst.n_capacity, inst.periods
        self.block_size = self.I * self.J * self.T
        self.size = 6 * self.block_size + self.I

    def index(self, block: str, i: int, j: int = 0, t: int = 0) -> int:
        if block == "XBR":
            return 6 * self.block_size + i
        b = _X_BLOCKS.index(block)
        return b * self.block_size + (i * self.J + j) * self.T + t

    def to_vector(self, x: FirstStageDecision) -> np.ndarray:
        v = np.concatenate([
            x.lines.ravel(), x.added.ravel(), x.removed.ravel(),
            x.old_lines.ravel(), x.green_lines.ravel(), x.upgraded.ravel(),
            x.pv_built.ravel()])
        return v.astype(float)

    def from_vector(self, v: np.ndarray) -> FirstStageDecision:
        s = self.block_size
        shape = (self.I, self.J, self.T)
        ints = np.rint(v).astype(int)
        return FirstStageDecision(
            lines=ints[0:s].reshape(shape), added=ints[s:2 * s].reshape(shape),
            removed=ints[2 * s:3 * s].reshape(shape), old_lines=ints[3 * s:4 * s].reshape(shape),
            green_lines=ints[4 * s:5 * s].reshape(shape), upgraded=ints[5 * s:6 * s].reshape(shape),
            pv_built=ints[6 * s:6 * s + self.I])


# ---------------------------------------------------------------------------
# Validation


def validate(inst: Instance) -> list[Violation]:
    """Return all invariant violations; empty list means the instance is sound."""
    out: list[Violation] = []
    for fname in ("adjust_up", "adjust_down", "initial_lines", "initial_green_lines"):
        a = getattr(inst, fname)
        if (a < 0).any():
            out.append(Violation(fname, tuple(np.argwhere(a < 0)[0]), "must be nonnegative"))
        if not np.issubdtype(a.dtype, np.integer):
            if not np.all(a == np.rint(a)):
                out.append(Violation(fname, (), "must be integer-valued"))
    if (inst.initial_green_lines > inst.initial_lines).any():
        i, j = np.argwhere(inst.initial_green_lines > inst.initial_lines)[0]
        out.append(Violation("initial_green_lines", (i, j), "exceeds initial lines"))
    if inst.m_big is not None:
        needed = int(np.max(inst.initial_lines + inst.periods * inst.adjust_up))
        if inst.m_big < 0 or inst.m_big != int(inst.m_big):
            out.append(Violation("m_big", (), "must be a nonnegative integer"))
        elif inst.m_big < needed:
            out.append(Violation("m_big", (), f"must be >= {needed} (initial + horizon expansions)"))
    if not (0.0 <= inst.tau <= 1.0):
        out.append(Violation("tau", (), "must lie in [0, 1]"))
    if not (0.0 <= inst.service_level <= 1.0):
        out.append(Violation("service_level", (), "must lie in [0, 1]"))
    c_old, c_new = inst.prod_cost_old, inst.prod_cost_new
    c_u = inst.shortage_penalty
    for j in range(inst.n_capacity):
        for k in range(inst.n_products):
            if inst.eligible[j, k]:
                if inst.use_rate_old[j, k] <= 0 or inst.use_rate_new[j, k] <= 0:
                    out.append(Violation("use_rate", (j, k), "must be positive where eligible"))
                for i in range(inst.n_factories):
                    if c_old[i, j, k] < c_u[k] or c_new[i, j, k] < c_u[k]:
                        out.append(Violation(
                            "prod_cost", (i, j, k),
                            "production cost below shortage penalty breaks recourse monotonicity"))
    if (inst.lines_output_old <= 0).any() or (inst.lines_output_new <= 0).any():
        out.append(Violation("lines_output", (), "must be positive"))
    return out


# ---------------------------------------------------------------------------
# Serialization.  One JSON document per instance, with explicit labels;
# (j, k) cells absent from "production" are ineligible.


def serialize(inst: Instance) -> dict:
    I, J, K = inst.n_factories, inst.n_capacity, inst.products and inst.n_products
    doc = {
        "name": inst.name,
        "factories": list(inst.factories),
        "capacity_types": list(inst.capacity_types),
        "products": list(inst.products),
        "periods": int(inst.periods),
        "tau": float(inst.tau),
        "service_level": float(inst.service_level),
        "ambiguity_scale": float(inst.ambiguity_scale),
        "factory_data": {},
        "line_throughput": {},
        "production": {},
        "shortage_penalty": {k: float(inst.shortage_penalty_raw[ki])
                             for ki, k in enumerate(inst.products)},
    }
    if inst.m_big is not None:
        doc["m_big"] = int(inst.m_big)
    for fi, f in enumerate(inst.factories):
        doc["factory_data"][f] = {
            "pv_kw": float(inst.pv_kw[fi]),
            "pv_invest_cost": float(inst.pv_invest_cost[fi]),
            "initial_lines": {j: int(inst.initial_lines[fi, ji])
                              for ji, j in enumerate(inst.capacity_types)},
            "initial_green_lines": {j: int(inst.initial_green_lines[fi, ji])
                                    for ji, j in enumerate(inst.capacity_types)},
            "adjust_up": {j: int(inst.adjust_up[fi, ji])
                          for ji, j in enumerate(inst.capacity_types)},
            "adjust_down": {j: int(inst.adjust_down[fi, ji])
                            for ji, j in enumerate(inst.capacity_types)},
            "expand_cost": {j: float(inst.expand_cost[fi, ji])
                            for ji, j in enumerate(inst.capacity_types)},
            "terminate_cost": {j: float(inst.terminate_cost[fi, ji])
                               for ji, j in enumerate(inst.capacity_types)},
            "upgrade_cost": {j: float(inst.upgrade_cost[fi, ji])
                             for ji, j in enumerate(inst.capacity_types)},
        }
    for ji, j in enumerate(inst.capacity_types):
        doc["line_throughput"][j] = {
            "conventional": float(inst.lines_output_old[ji]),
            "green": float(inst.lines_output_new[ji]),
        }
        cells = {}
        for ki, k in enumerate(inst.products):
            if inst.eligible[ji, ki]:
                cells[k] = {
                    "use_rate_conventional": float(inst.use_rate_old[ji, ki]),
                    "use_rate_green": float(inst.use_rate_new[ji, ki]),
                    "cost_conventional": [float(v) for v in inst.prod_cost_old_raw[:, ji, ki]],
                    "cost_green": [float(v) for v in inst.prod_cost_new_raw[:, ji, ki]],
                    "energy_per_unit": float(inst.energy_per_unit[ji, ki]),
                }
        doc["production"][j] = cells
    if inst.nominal_demand is not None:
        doc["nominal_demand"] = {k: [float(v) for v in inst.nominal_demand[ki]]
                                 for ki, k in enumerate(inst.products)}
    return doc


def deserialize(doc: dict) -> Instance:
    factories = list(doc["factories"])
    ctypes = list(doc["capacity_types"])
    products = list(doc["products"])
    I, J, K, T = len(factories), len(ctypes), len(products), int(doc["periods"])
    z_ij = np.zeros((I, J))
    zi_ij = np.zeros((I, J), dtype=int)
    inst = Instance(
        name=doc.get("name", "instance"),
        factories=factories, capacity_types=ctypes, products=products, periods=T,
        expand_cost=z_ij.copy(), terminate_cost=z_ij.copy(), upgrade_cost=z_ij.copy(),
        pv_invest_cost=np.zeros(I), pv_kw=np.zeros(I),
        adjust_up=zi_ij.copy(), adjust_down=zi_ij.copy(),
        initial_lines=zi_ij.copy(), initial_green_lines=zi_ij.copy(),
        eligible=np.zeros((J, K), dtype=bool),
        use_rate_old=np.zeros((J, K)), use_rate_new=np.zeros((J, K)),
        lines_output_old=np.zeros(J), lines_output_new=np.zeros(J),
        prod_cost_old_raw=np.zeros((I, J, K)), prod_cost_new_raw=np.zeros((I, J, K)),
        shortage_penalty_raw=np.array([float(doc["shortage_penalty"][k]) for k in products]),
        energy_per_unit=np.zeros((J, K)),
        tau=float(doc["tau"]), service_level=float(doc["service_level"]),
        m_big=int(doc["m_big"]) if "m_big" in doc else None,
        ambiguity_scale=float(doc.get("ambiguity_scale", 1.0)),
    )
    for fi, f in enumerate(factories):
        fd = doc["factory_data"][f]
        inst.pv_kw[fi] = float(fd["pv_kw"])
        inst.pv_invest_cost[fi] = float(fd["pv_invest_cost"])
        for ji, j in enumerate(ctypes):
            inst.initial_lines[fi, ji] = int(fd["initial_lines"].get(j, 0))
            inst.initial_green_lines[fi, ji] = int(fd.get("initial_green_lines", {}).get(j, 0))
            inst.adjust_up[fi, ji] = int(fd["adjust_up"].get(j, 0))
            inst.adjust_down[fi, ji] = int(fd["adjust_down"].get(j, 0))
            inst.expand_cost[fi, ji] = float(fd["expand_cost"].get(j, 0.0))
            inst.terminate_cost[fi, ji] = float(fd["terminate_cost"].get(j, 0.0))
            inst.upgrade_cost[fi, ji] = float(fd["upgrade_cost"].get(j, 0.0))
    for ji, j in enumerate(ctypes):
        th = doc["line_throughput"][j]
        inst.lines_output_old[ji] = float(th["conventional"])
        inst.lines_output_new[ji] = float(th["green"])
        for ki, k in enumerate(products):
            cell = doc["production"].get(j, {}).get(k)
            if cell is None:
                continue  # absent cell => ineligible
            inst.eligible[ji, ki] = True
            inst.use_rate_old[ji, ki] = float(cell["use_rate_conventional"])
            inst.use_rate_new[ji, ki] = float(cell["use_rate_green"])
            co, cn = cell["cost_conventional"], cell["cost_green"]
            co = [co] * I if np.isscalar(co) else co
            cn = [cn] * I if np.isscalar(cn) else cn
            inst.prod_cost_old_raw[:, ji, ki] = [float(v) for v in co]
            inst.prod_cost_new_raw[:, ji, ki] = [float(v) for v in cn]
            inst.energy_per_unit[ji, ki] = float(cell["energy_per_unit"])
    if "nominal_demand" in doc:
        inst.nominal_demand = np.array([[float(v) for v in doc["nominal_demand"][k]]
                                        for k in products])
    return inst


def save(inst: Instance, path) -> None:
    with open(path, "w") as fh:
        json.dump(serialize(inst), fh, indent=1, sort_keys=True)


def load(path) -> Instance:
    with open(path) as fh:
        return deserialize(json.load(fh))


# ---------------------------------------------------------------------------
# Random family generation (perturbations of a base instance) and demand sampling.


def perturb(inst: Instance, seed, cost_factor_range=(0.8, 1.2),
            tau_range=(0.01, 0.20), ambiguity_scale_range=(1.0, 4.0)) -> Instance:
    """New instance with every cost coefficient scaled by an independent draw.

    Deterministic in ``seed``.  The ambiguity scale factor is recorded on the
    instance and applied later when the clustering stage builds demand boxes.
    """
    rng = np.random.default_rng(seed)

    def scaled(a):
        return a * rng.uniform(cost_factor_range[0], cost_factor_range[1], size=a.shape)

    out = replace(
        inst,
        expand_cost=scaled(inst.expand_cost),
        terminate_cost=scaled(inst.terminate_cost),
        upgrade_cost=scaled(inst.upgrade_cost),
        pv_invest_cost=scaled(inst.pv_invest_cost),
        prod_cost_old_raw=scaled(inst.prod_cost_old_raw),
        prod_cost_new_raw=scaled(inst.prod_cost_new_raw),
        shortage_penalty_raw=scaled(inst.shortage_penalty_raw),
        tau=float(rng.uniform(tau_range[0], tau_range[1])),
        ambiguity_scale=float(rng.uniform(ambiguity_scale_range[0], ambiguity_scale_range[1])),
    )
    out.name = f"{inst.name}-perturbed-{seed}"
    # Zero out cost entries for ineligible cells so masks stay consistent.
    mask = ~inst.eligible
    out.prod_cost_old_raw[:, mask] = 0.0
    out.prod_cost_new_raw[:, mask] = 0.0
    return out


def sample_demand(nominal_kt: np.ndarray, count: int, seed) -> np.ndarray:
    """Demand samples around nominal values: per cell, a 50/50 mixture of
    uniform (+-20% of nominal) and Gaussian (sigma = 10% of nominal), floored
    at zero.  Returns (count, K, T); deterministic in seed."""
    rng = np.random.default_rng(seed)
    nominal = np.asarray(nominal_kt, dtype=float)
    shape = (count,) + nominal.shape
    pick = rng.random(shape) < 0.5
    uni = rng.uniform(nominal * 0.8, np.maximum(nominal * 1.2, nominal * 0.8 + 1e-12), size=shape)
    gau = rng.normal(nominal, np.maximum(0.10 * nominal, 1e-12), size=shape)
    return np.maximum(np.where(pick, uni, gau), 0.0)


def base_case() -> Instance:
    """The shipped three-factory, three-capacity, three-product reference case."""
    from importlib import resources

    with resources.files("greencap.data").joinpath("base_case.json").open() as fh:
        return deserialize(json.load(fh))
