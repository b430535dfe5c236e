"""Network data model, case-file schema and the built-in 9-bus restoration cases.

Powers are in MW throughout, frequency deviations in rad/s. Branch admittances
are per-unit susceptance magnitudes on ``base_mva``, so the DC flow on a branch
is ``base_mva * admittance * (theta_from - theta_to)`` MW.

The generator dynamics are tabulated with MW-based units. A quick consistency
check: for unit 1, ``J * omega_nom = 0.0203 * 314.16 = 6.38 MW s/rad`` while a
5 s inertia constant on 200 MVA gives ``2 H S / omega_nom = 6.37`` in the same
units, so the swing equation is evaluated with MW powers and rad/s speeds.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from functools import cached_property
from importlib import resources

LINE, TRANSFORMER = "line", "transformer"
BSU, NBSU = "BSU", "NBSU"
LOAD, GENERATOR = "load", "generator"
BRANCH_KINDS = (LINE, TRANSFORMER)
GEN_KINDS = (BSU, NBSU)


class CaseError(ValueError):
    """Invalid case document. ``path`` locates the offending entry."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.message = message


@dataclass(frozen=True)
class Bus:
    id: int
    is_slack: bool = False


@dataclass(frozen=True)
class Branch:
    id: str
    kind: str
    from_bus: int
    to_bus: int
    admittance: float
    flow_min: float
    flow_max: float

    @property
    def buses(self) -> tuple[int, int]:
        return (self.from_bus, self.to_bus)


@dataclass(frozen=True)
class GenDynamics:
    J: float
    D: float
    K: float
    T_m: float
    T_gov: float
    sigma: float

    @property
    def denominator(self) -> float:
        # steady-state gain denominator of the droop loop
        return self.K + self.sigma * self.D


@dataclass(frozen=True)
class Generator:
    id: str
    bus: int
    kind: str
    p_min: float
    p_max: float
    dynamics: GenDynamics

    @property
    def buses(self) -> tuple[int]:
        return (self.bus,)

    @property
    def black_start(self) -> bool:
        return self.kind == BSU


@dataclass(frozen=True)
class Load:
    id: str
    bus: int
    p_nominal: float

    @property
    def buses(self) -> tuple[int]:
        return (self.bus,)


@dataclass(frozen=True)
class PowerNetwork:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]
    base_mva: float = 100.0
    f_nominal_hz: float = 50.0
    name: str = ""

    @property
    def omega_nom(self) -> float:
        return 2.0 * math.pi * self.f_nominal_hz

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def slack_bus(self) -> int:
        return next(b.id for b in self.buses if b.is_slack)

    @cached_property
    def leader(self) -> Generator:
        """The leading black-start unit: the BSU on the slack bus."""
        return next(g for g in self.generators if g.black_start and g.bus == self.slack_bus)

    @cached_property
    def components(self) -> dict:
        """Every component by id: generators, branches and loads."""
        out = {}
        for c in (*self.generators, *self.branches, *self.loads):
            out[c.id] = c
        return out

    @cached_property
    def gen_index(self) -> dict[str, int]:
        return {g.id: i for i, g in enumerate(self.generators)}

    @property
    def bsus(self) -> tuple[Generator, ...]:
        return tuple(g for g in self.generators if g.black_start)

    @property
    def nbsus(self) -> tuple[Generator, ...]:
        return tuple(g for g in self.generators if not g.black_start)

    @property
    def total_load(self) -> float:
        return sum(d.p_nominal for d in self.loads)

    def kind_of(self, cid: str) -> str:
        c = self.components[cid]
        if isinstance(c, Load):
            return LOAD
        if isinstance(c, Generator):
            return GENERATOR
        return c.kind

    def switchable(self) -> tuple[str, ...]:
        """Ids of components the restoration may switch (everything but BSUs)."""
        return tuple(cid for cid, c in self.components.items()
                     if not (isinstance(c, Generator) and c.black_start))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "base_mva": self.base_mva,
            "f_nominal_hz": self.f_nominal_hz,
            "buses": [asdict(b) for b in self.buses],
            "branches": [asdict(b) for b in self.branches],
            "generators": [asdict(g) for g in self.generators],
            "loads": [asdict(d) for d in self.loads],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def to_per_unit(p: float, net: PowerNetwork) -> float:
    return p / net.base_mva


def from_per_unit(p: float, net: PowerNetwork) -> float:
    return p * net.base_mva


# -- loading and validation -------------------------------------------------

_TOP_KEYS = ("base_mva", "f_nominal_hz", "buses", "branches", "generators", "loads")


def _get(obj, key, path, kind=None):
    if not isinstance(obj, dict):
        raise CaseError(path, "expected an object")
    if key not in obj:
        raise CaseError(f"{path}.{key}" if path else key, "missing field")
    v = obj[key]
    p = f"{path}.{key}" if path else key
    if kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise CaseError(p, f"expected a finite number, got {v!r}")
        return float(v)
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise CaseError(p, f"expected an integer, got {v!r}")
        return v
    if kind is str:
        if not isinstance(v, str) or not v:
            raise CaseError(p, f"expected a non-empty string, got {v!r}")
        return v
    if kind is bool:
        if not isinstance(v, bool):
            raise CaseError(p, f"expected a boolean, got {v!r}")
        return v
    if kind is list:
        if not isinstance(v, list):
            raise CaseError(p, "expected a list")
        return v
    return v


def _flow_bound(obj, key, path):
    v = obj.get(key, None)
    if v is None:
        return -math.inf if key == "flow_min" else math.inf
    if isinstance(v, str) and v in ("inf", "-inf"):
        return float(v)
    return _get(obj, key, path, float)


def load_case(text) -> PowerNetwork:
    """Parse and validate a case document (JSON text or an already-decoded dict)."""
    if isinstance(text, (str, bytes)):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CaseError("", f"not valid JSON: {exc}") from exc
    else:
        doc = text
    if not isinstance(doc, dict):
        raise CaseError("", "case document must be an object")
    for k in _TOP_KEYS:
        if k not in doc:
            raise CaseError(k, "missing field")
    base = _get(doc, "base_mva", "", float)
    fnom = _get(doc, "f_nominal_hz", "", float)
    if base <= 0:
        raise CaseError("base_mva", "must be positive")
    if fnom <= 0:
        raise CaseError("f_nominal_hz", "must be positive")

    buses = []
    seen_bus = set()
    for i, b in enumerate(_get(doc, "buses", "", list)):
        p = f"buses[{i}]"
        bid = _get(b, "id", p, int)
        if bid in seen_bus:
            raise CaseError(f"{p}.id", f"duplicate id {bid}")
        seen_bus.add(bid)
        buses.append(Bus(bid, _get(b, "is_slack", p, bool) if "is_slack" in b else False))
    if not buses:
        raise CaseError("buses", "at least one bus is required")
    slack = [b for b in buses if b.is_slack]
    if len(slack) != 1:
        raise CaseError("buses", f"exactly one slack bus required, found {len(slack)}")

    ids = set()

    def claim(cid, p):
        if cid in ids:
            raise CaseError(p, f"duplicate id {cid!r}")
        ids.add(cid)

    def bus_ref(v, p):
        if v not in seen_bus:
            raise CaseError(p, f"dangling bus reference {v}")
        return v

    branches = []
    for i, br in enumerate(_get(doc, "branches", "", list)):
        p = f"branches[{i}]"
        cid = _get(br, "id", p, str)
        claim(cid, f"{p}.id")
        kind = _get(br, "kind", p, str)
        if kind not in BRANCH_KINDS:
            raise CaseError(f"{p}.kind", f"unknown branch kind {kind!r}")
        fb = bus_ref(_get(br, "from_bus", p, int), f"{p}.from_bus")
        tb = bus_ref(_get(br, "to_bus", p, int), f"{p}.to_bus")
        if fb == tb:
            raise CaseError(p, "branch connects a bus to itself")
        y = _get(br, "admittance", p, float)
        if y <= 0:
            raise CaseError(f"{p}.admittance", "must be positive")
        fmin, fmax = _flow_bound(br, "flow_min", p), _flow_bound(br, "flow_max", p)
        if not fmin <= 0 <= fmax:
            raise CaseError(p, "flow limits must satisfy flow_min <= 0 <= flow_max")
        branches.append(Branch(cid, kind, fb, tb, y, fmin, fmax))

    gens = []
    for i, g in enumerate(_get(doc, "generators", "", list)):
        p = f"generators[{i}]"
        cid = _get(g, "id", p, str)
        claim(cid, f"{p}.id")
        kind = _get(g, "kind", p, str)
        if kind not in GEN_KINDS:
            raise CaseError(f"{p}.kind", f"unknown generator kind {kind!r}")
        bus = bus_ref(_get(g, "bus", p, int), f"{p}.bus")
        pmin, pmax = _get(g, "p_min", p, float), _get(g, "p_max", p, float)
        if pmin > pmax:
            raise CaseError(p, "p_min exceeds p_max")
        dp = f"{p}.dynamics"
        dyn_doc = _get(g, "dynamics", p)
        dyn = GenDynamics(*(_get(dyn_doc, k, dp, float) for k in ("J", "D", "K", "T_m", "T_gov", "sigma")))
        for k in ("J", "K", "T_m", "T_gov", "sigma"):
            if getattr(dyn, k) <= 0:
                raise CaseError(f"{dp}.{k}", "must be positive")
        if dyn.D < 0:
            raise CaseError(f"{dp}.D", "must be non-negative")
        if dyn.denominator <= 0:
            raise CaseError(dp, "K + sigma*D must be positive")
        gens.append(Generator(cid, bus, kind, pmin, pmax, dyn))
    if not any(g.kind == BSU for g in gens):
        raise CaseError("generators", "no black-start unit (BSU) in case")
    slack_id = slack[0].id
    if not any(g.kind == BSU and g.bus == slack_id for g in gens):
        raise CaseError("buses", "the slack bus must host a black-start unit")

    loads = []
    for i, d in enumerate(_get(doc, "loads", "", list)):
        p = f"loads[{i}]"
        cid = _get(d, "id", p, str)
        claim(cid, f"{p}.id")
        bus = bus_ref(_get(d, "bus", p, int), f"{p}.bus")
        pn = _get(d, "p_nominal", p, float)
        if pn <= 0:
            raise CaseError(f"{p}.p_nominal", "must be positive")
        loads.append(Load(cid, bus, pn))

    net = PowerNetwork(tuple(buses), tuple(branches), tuple(gens), tuple(loads),
                       base, fnom, doc.get("name", "") or "")
    _check_connected(net)
    return net


def _check_connected(net: PowerNetwork):
    adj = {b.id: set() for b in net.buses}
    for br in net.branches:
        adj[br.from_bus].add(br.to_bus)
        adj[br.to_bus].add(br.from_bus)
    seen = {net.slack_bus}
    stack = [net.slack_bus]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    missing = sorted(set(adj) - seen)
    if missing:
        raise CaseError("branches", f"network is not connected; unreachable buses {missing}")


VARIANTS = ("three-loads", "two-loads")


def builtin_ieee9(variant: str = "three-loads") -> PowerNetwork:
    """The 9-bus restoration case with loads split into equal steps."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    fname = f"ieee9_{variant.replace('-', '_')}.json"
    text = resources.files("psrestore").joinpath("cases").joinpath(fname).read_text()
    return load_case(text)
