"""Radial feeder model and backward/forward sweep power flow.

All internal quantities are per-unit on the feeder's ``base_kva`` and
``base_kv``.  Injections follow the generator convention: a positive real
part is power flowing *into* the grid at that node.

Node indices: the head is index 0, the remaining ``N`` nodes are 1..N in the
order they appear in the feeder document.  Per-node arrays returned by this
module have length ``N`` and are indexed by ``index - 1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Mapping, Sequence

import numpy as np

NodeId = Hashable

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100

BUNDLED_DIR = Path(__file__).parent / "data"


class FeederError(ValueError):
    """Invalid feeder document or topology."""


@dataclass(frozen=True)
class Line:
    from_node: NodeId
    to_node: NodeId
    r: float
    x: float


@dataclass(frozen=True, eq=False)
class FeederModel:
    """Validated radial feeder, per-unit.

    ``lines`` are stored oriented away from the head, so ``lines[k].to_node``
    is the child node of the branch.
    """

    nodes: tuple
    lines: tuple
    loads: dict
    der_capacity: dict
    measured_nodes: tuple
    base_kva: float
    base_kv: float
    head_voltage: float = 1.0
    name: str = ""
    _index: dict = field(init=False, repr=False)
    _parent: np.ndarray = field(init=False, repr=False)
    _z: np.ndarray = field(init=False, repr=False)
    _path: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        index = {n: k for k, n in enumerate(self.nodes)}
        n_bus = len(self.nodes)
        parent = np.zeros(n_bus, dtype=int)
        z = np.zeros(n_bus, dtype=complex)
        for line in self.lines:
            child = index[line.to_node]
            parent[child] = index[line.from_node]
            z[child] = complex(line.r, line.x)
        parent[0] = -1
        # path[b, n] = 1 iff branch feeding node b lies on the head -> n path
        path = np.zeros((n_bus - 1, n_bus - 1))
        for n in range(1, n_bus):
            k = n
            while k != 0:
                path[k - 1, n - 1] = 1.0
                k = parent[k]
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_parent", parent)
        object.__setattr__(self, "_z", z[1:])
        object.__setattr__(self, "_path", path)

    @property
    def n(self) -> int:
        """Number of non-head nodes."""
        return len(self.nodes) - 1

    @property
    def head(self) -> NodeId:
        return self.nodes[0]

    @property
    def der_nodes(self) -> tuple:
        return tuple(self.der_capacity)

    @property
    def z_base(self) -> float:
        return self.base_kv**2 / (self.base_kva / 1000.0)

    def index(self, node: NodeId) -> int:
        """Index of ``node`` in 0..N (head is 0)."""
        try:
            return self._index[node]
        except KeyError:
            raise FeederError(f"unknown node {node!r}") from None

    def positions(self, nodes: Sequence[NodeId]) -> np.ndarray:
        """Zero-based positions of ``nodes`` into per-node (length N) arrays."""
        return np.array([self.index(n) - 1 for n in nodes], dtype=int)

    @property
    def path_matrix(self) -> np.ndarray:
        return self._path.copy()

    @property
    def branch_impedance(self) -> np.ndarray:
        """Series impedance of the branch feeding each node, length N."""
        return self._z.copy()

    def common_path_impedance(self) -> np.ndarray:
        """Z[n, m] = sum of branch impedances shared by the head->n and head->m paths."""
        return self._path.T @ (self._z[:, None] * self._path)

    def load_vector(self) -> np.ndarray:
        s = np.zeros(self.n, dtype=complex)
        for node, value in self.loads.items():
            s[self.index(node) - 1] += value
        return s


@dataclass
class PowerFlowSolution:
    voltages: np.ndarray  # complex, length N
    head_power: complex
    iterations: int
    converged: bool
    branch_currents: np.ndarray = None  # current in the branch feeding each node
    mismatch: float = np.inf

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.voltages)

    def losses(self, feeder: FeederModel) -> complex:
        return complex(np.sum(feeder.branch_impedance * np.abs(self.branch_currents) ** 2))


def _require(doc: Mapping, key: str, where: str):
    if key not in doc:
        raise FeederError(f"{where}: missing field '{key}'")
    return doc[key]


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise FeederError(f"{where}: expected a number, got {value!r}")
    value = float(value)
    if not np.isfinite(value):
        raise FeederError(f"{where}: value must be finite")
    return value


def feeder_from_dict(doc: Mapping) -> FeederModel:
    """Build and validate a :class:`FeederModel` from a parsed feeder document."""
    if not isinstance(doc, Mapping):
        raise FeederError("feeder document must be a JSON object")
    base_kva = _number(_require(doc, "base_kva", "feeder"), "base_kva")
    base_kv = _number(_require(doc, "base_kv", "feeder"), "base_kv")
    head_v = _number(doc.get("head_voltage_pu", 1.0), "head_voltage_pu")
    if base_kva <= 0 or base_kv <= 0:
        raise FeederError("base_kva and base_kv must be positive")
    if head_v <= 0:
        raise FeederError("head_voltage_pu must be positive")
    z_base = base_kv**2 / (base_kva / 1000.0)

    nodes = list(_require(doc, "nodes", "feeder"))
    if not nodes:
        raise FeederError("nodes: at least the head node is required")
    if len(set(nodes)) != len(nodes):
        raise FeederError("nodes: duplicate node ids")
    node_set = set(nodes)
    head = nodes[0]

    raw_lines = _require(doc, "lines", "feeder")
    if len(raw_lines) != len(nodes) - 1:
        if len(raw_lines) > len(nodes) - 1:
            raise FeederError(
                f"lines: {len(raw_lines)} lines for {len(nodes)} nodes forms a cycle"
            )
        raise FeederError(
            f"lines: {len(raw_lines)} lines for {len(nodes)} nodes leaves the feeder disconnected"
        )
    adjacency: dict = {n: [] for n in nodes}
    impedance = {}
    for k, line in enumerate(raw_lines):
        where = f"lines[{k}]"
        a = _require(line, "from", where)
        b = _require(line, "to", where)
        for end in (a, b):
            if end not in node_set:
                raise FeederError(f"{where}: unknown node {end!r}")
        if a == b:
            raise FeederError(f"{where}: self-loop at node {a!r}")
        r = _number(_require(line, "r_ohm", where), f"{where}.r_ohm")
        x = _number(_require(line, "x_ohm", where), f"{where}.x_ohm")
        if r < 0 or x < 0:
            raise FeederError(f"{where}: negative impedance r={r}, x={x}")
        key = frozenset((a, b))
        if key in impedance:
            raise FeederError(f"{where}: duplicate line {a!r}-{b!r} forms a cycle")
        impedance[key] = (r / z_base, x / z_base)
        adjacency[a].append(b)
        adjacency[b].append(a)

    # orient lines away from the head; n-1 edges + connected => tree
    oriented = []
    seen = {head}
    stack = [head]
    while stack:
        u = stack.pop()
        for v in adjacency[u]:
            if v in seen:
                continue
            seen.add(v)
            r, x = impedance[frozenset((u, v))]
            oriented.append(Line(u, v, r, x))
            stack.append(v)
    if len(seen) != len(nodes):
        missing = [n for n in nodes if n not in seen]
        raise FeederError(f"lines: feeder contains a cycle and is disconnected at {missing[:5]!r}")

    loads: dict = {}
    for k, item in enumerate(doc.get("loads", [])):
        where = f"loads[{k}]"
        node = _require(item, "node", where)
        if node not in node_set:
            raise FeederError(f"{where}: unknown node {node!r}")
        if node == head:
            raise FeederError(f"{where}: the head node cannot carry load")
        p = _number(item.get("p_kw", 0.0), f"{where}.p_kw")
        q = _number(item.get("q_kvar", 0.0), f"{where}.q_kvar")
        loads[node] = loads.get(node, 0j) + complex(p, q) / base_kva

    ders: dict = {}
    for k, item in enumerate(doc.get("ders", [])):
        where = f"ders[{k}]"
        node = _require(item, "node", where)
        if node not in node_set:
            raise FeederError(f"{where}: unknown node {node!r}")
        if node == head:
            raise FeederError(f"{where}: the head node cannot host a DER")
        if node in ders:
            raise FeederError(f"{where}: duplicate DER at node {node!r}")
        cap = _number(_require(item, "capacity_kva", where), f"{where}.capacity_kva")
        if cap <= 0:
            raise FeederError(f"{where}: capacity_kva must be positive")
        ders[node] = cap / base_kva

    measured = list(doc.get("measured_nodes", []))
    for node in measured:
        if node not in node_set or node == head:
            raise FeederError(f"measured_nodes: {node!r} is not a non-head node")
    if len(set(measured)) != len(measured):
        raise FeederError("measured_nodes: duplicates")

    # keep the document's node order, lines re-sorted by child position
    order = {n: k for k, n in enumerate(nodes)}
    oriented.sort(key=lambda ln: order[ln.to_node])
    return FeederModel(
        nodes=tuple(nodes),
        lines=tuple(oriented),
        loads=loads,
        der_capacity=ders,
        measured_nodes=tuple(measured),
        base_kva=base_kva,
        base_kv=base_kv,
        head_voltage=head_v,
        name=str(doc.get("name", "")),
    )


def parse_feeder(text: str) -> FeederModel:
    """Parse a JSON feeder document (see ``docs/formats.md``)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FeederError(f"parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return feeder_from_dict(doc)


def load_feeder(path) -> FeederModel:
    """Load a feeder file; ``bundled:<name>`` resolves to the packaged data."""
    path = str(path)
    if path.startswith("bundled:"):
        path = BUNDLED_DIR / f"{path.split(':', 1)[1]}.json"
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"feeder file not found: {path}")
    return parse_feeder(path.read_text())


def feeder_to_dict(feeder: FeederModel) -> dict:
    """Inverse of :func:`feeder_from_dict` (ohms/kW units)."""
    zb = feeder.z_base
    return {
        "name": feeder.name,
        "base_kva": feeder.base_kva,
        "base_kv": feeder.base_kv,
        "head_voltage_pu": feeder.head_voltage,
        "nodes": list(feeder.nodes),
        "lines": [
            {"from": ln.from_node, "to": ln.to_node, "r_ohm": ln.r * zb, "x_ohm": ln.x * zb}
            for ln in feeder.lines
        ],
        "loads": [
            {"node": n, "p_kw": s.real * feeder.base_kva, "q_kvar": s.imag * feeder.base_kva}
            for n, s in feeder.loads.items()
        ],
        "ders": [{"node": n, "capacity_kva": c * feeder.base_kva} for n, c in feeder.der_capacity.items()],
        "measured_nodes": list(feeder.measured_nodes),
    }


def net_injection(
    feeder: FeederModel,
    der_setpoints: Mapping[NodeId, tuple] | None = None,
    loads: np.ndarray | None = None,
) -> np.ndarray:
    """Per-node complex injection ``S_n = (P_n - P_l,n) + j(Q_n - Q_l,n)``.

    ``loads`` overrides the feeder's nominal load vector (length N, complex).
    """
    s = -(feeder.load_vector() if loads is None else np.asarray(loads, dtype=complex))
    for node, (p, q) in (der_setpoints or {}).items():
        if node not in feeder.der_capacity:
            raise FeederError(f"setpoint given for node {node!r}, which hosts no DER")
        s[feeder.index(node) - 1] += complex(p, q)
    return s


def solve_power_flow(
    feeder: FeederModel,
    injections: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    v_init: np.ndarray | None = None,
) -> PowerFlowSolution:
    """Backward/forward sweep for a constant-power radial feeder.

    Backward sweep aggregates nodal currents into branch currents through the
    path matrix; the forward sweep propagates voltage drops from the head.
    Convergence is declared when the largest nodal complex-power mismatch
    falls below ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    s = np.asarray(injections, dtype=complex)
    if s.shape != (feeder.n,):
        raise FeederError(f"injections must have length {feeder.n}, got {s.shape}")
    path = feeder._path
    z = feeder._z
    v0 = complex(feeder.head_voltage)
    v = np.full(feeder.n, v0) if v_init is None else np.array(v_init, dtype=complex)

    mismatch = np.inf
    branch = np.zeros(feeder.n, dtype=complex)
    for it in range(1, max_iter + 1):
        current = np.conj(s / v)
        branch = -(path @ current)
        v_new = v0 - path.T @ (z * branch)
        if not np.all(np.isfinite(v_new)) or np.min(np.abs(v_new)) < 1e-6:
            return PowerFlowSolution(v_new, complex(np.nan, np.nan), it, False, branch, np.inf)
        # the network currents implied by v_new are exactly conj(s / v)
        mismatch = float(np.max(np.abs(s * (v_new / v - 1.0)), initial=0.0))
        v = v_new
        if mismatch < tol:
            branch = -(path @ np.conj(s / v))
            return PowerFlowSolution(v, _head_power(feeder, branch), it, True, branch, mismatch)
    return PowerFlowSolution(v, _head_power(feeder, branch), max_iter, False, branch, mismatch)


def _head_power(feeder: FeederModel, branch: np.ndarray) -> complex:
    roots = feeder._parent[1:] == 0
    return complex(feeder.head_voltage * np.conj(np.sum(branch[roots])))
