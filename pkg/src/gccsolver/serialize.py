"""Model files, CSV tables and JSON reports.

Model files use the ``gccsolver-model-v1`` JSON layout::

    {"schema": "gccsolver-model-v1", "horizon": 1.0,
     "nodes": [{"id": "r", "time": 0, "parent": null, "prob": null, "dS": []}, ...],
     "processes": [{"name": "X", "values": {"r": 0.0, ...}}, ...],
     "claims": [{"name": "H", "values": {"u": 1.0, ...}}, ...],
     "defaults": {"x": "X", "y": "X + 0.1"}}

``prob`` and ``dS`` describe the branch from the parent into the node.
Process and claim values may also be lists in node (resp. terminal) order.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .lattice import ContractError, EventTree, ModelError, canonical_rule, from_parents

SCHEMA = "gccsolver-model-v1"


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return value


def write_csv(path, header, rows) -> Path:
    """Comma separated with a header row; floats keep 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if np.isfinite(value) else str(value)
    return obj


def write_json(path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# -- tables ---------------------------------------------------------------------

def value_process_rows(tree: EventTree, values):
    return [(tree.ids[i], int(tree.time[i]), values[i]) for i in range(tree.n_nodes)]


def write_value_process(path, tree, values):
    return write_csv(path, ["node", "time", "value"], value_process_rows(tree, values))


def write_snell_table(path, tree, L, V, rule):
    rows = [(tree.ids[i], int(tree.time[i]), L[i], V[i], bool(rule[i])) for i in range(tree.n_nodes)]
    return write_csv(path, ["node", "time", "L", "V", "stopFlag"], rows)


def write_diagnostics(path, tree, lambdas, theta, weights):
    """Per node: tilt coefficients, optimal holdings and dual weights of the step."""
    d = theta.shape[1]
    b = weights.shape[1]
    header = (["node", "time"] + [f"lambda{j}" for j in range(d)]
              + [f"theta{j}" for j in range(d)] + [f"w{j}" for j in range(b)])
    rows = []
    for i in tree.nonterminals:
        rows.append([tree.ids[i], int(tree.time[i]), *lambdas[i], *theta[i], *weights[i]])
    return write_csv(path, header, rows)


def write_trace(path, result):
    from .dynkin import rule_hash
    rows = [(e.iteration, e.player, rule_hash(e.response.rule), e.j_value) for e in result.trace]
    return write_csv(path, ["iter", "player", "ruleHash", "jValue"], rows)


# -- rules as node lists ---------------------------------------------------------------

def rule_to_ids(tree: EventTree, rule) -> list:
    """Non-terminal nodes where the rule stops first (every marked node on a lattice)."""
    rule = canonical_rule(tree, rule)
    if tree.recombining:
        first = rule
    else:
        first = rule.copy()
        nonroot = tree.parent >= 0
        first[nonroot] &= ~rule[tree.parent[nonroot]]
    return [tree.ids[i] for i in np.flatnonzero(first & ~tree.is_terminal)]


def ids_to_rule(tree: EventTree, ids) -> np.ndarray:
    index = {str(k): i for i, k in enumerate(tree.ids)}
    rule = tree.is_terminal.copy()
    for node_id in ids:
        key = str(node_id)
        if key not in index:
            raise ContractError(f"unknown node id {node_id!r} in rule")
        rule[index[key]] = True
    return canonical_rule(tree, rule)


def read_rules(path, tree):
    """``(tau, sigma)`` from a JSON file with ``buyerRule`` and ``sellerRule`` id lists."""
    with open(path) as fh:
        data = json.load(fh)
    try:
        return ids_to_rule(tree, data["buyerRule"]), ids_to_rule(tree, data["sellerRule"])
    except KeyError as exc:
        raise ContractError(f"rules file lacks {exc.args[0]!r}") from None


# -- model files ----------------------------------------------------------------------------

def _values_by(spec, keys, label):
    if isinstance(spec, list):
        if len(spec) != len(keys):
            raise ModelError(f"{label}: expected {len(keys)} values, got {len(spec)}")
        return np.asarray(spec, dtype=float)
    if isinstance(spec, dict):
        lookup = {str(k): v for k, v in spec.items()}
        missing = [k for k in keys if str(k) not in lookup]
        if missing:
            raise ModelError(f"{label}: missing values for nodes {missing[:5]}")
        return np.array([float(lookup[str(k)]) for k in keys])
    raise ModelError(f"{label}: values must be a list or an object keyed by node id")


def load_model(path):
    """Read a model file; returns ``(tree, processes, claims, defaults)``."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelError(f"cannot read model file {path}: {exc}") from None
    if data.get("schema") != SCHEMA:
        raise ModelError(f"model file must declare schema {SCHEMA!r}")
    nodes = data.get("nodes")
    if not nodes:
        raise ModelError("model file has no nodes")
    ids = [str(n["id"]) for n in nodes]
    if len(set(ids)) != len(ids):
        raise ModelError("node ids must be unique")
    pos = {k: i for i, k in enumerate(ids)}
    time, parent, prob, inc = [], [], [], []
    dims = {len(n.get("dS") or []) for n in nodes if n.get("parent") is not None}
    if len(dims) > 1:
        raise ModelError("every branch must carry the same number of asset increments")
    d = dims.pop() if dims else 0
    for n in nodes:
        time.append(int(n["time"]))
        par = n.get("parent")
        if par is None:
            parent.append(-1)
            prob.append(0.0)
            inc.append([0.0] * d)
        else:
            if str(par) not in pos:
                raise ModelError(f"node {n['id']!r} has unknown parent {par!r}")
            parent.append(pos[str(par)])
            prob.append(float(n["prob"]))
            inc.append([float(v) for v in (n.get("dS") or [])])
    tree = from_parents(time, parent, prob, np.asarray(inc, dtype=float).reshape(len(nodes), d),
                        float(data.get("horizon", 1.0)), ids)
    processes = {"t": tree.years()}
    for proc in data.get("processes", []):
        processes[proc["name"]] = _values_by(proc["values"], tree.ids, f"process {proc['name']}")
    term_ids = [tree.ids[i] for i in tree.terminals]
    claims = {}
    for claim in data.get("claims", []):
        claims[claim["name"]] = _values_by(claim["values"], term_ids, f"claim {claim['name']}")
    return tree, processes, claims, dict(data.get("defaults", {}))


def save_model(path, tree: EventTree, processes=None, claims=None, defaults=None) -> Path:
    """Write a full tree (one parent per node) as a model file."""
    tree.require_full("save_model")
    par = tree.parent
    records = []
    for i in range(tree.n_nodes):
        rec = {"id": tree.ids[i], "time": int(tree.time[i]), "parent": None, "prob": None, "dS": []}
        if par[i] >= 0:
            slot = int(np.flatnonzero(tree.children[par[i]] == i)[0])
            rec.update(parent=tree.ids[par[i]], prob=float(tree.prob[par[i], slot]),
                       dS=[float(v) for v in tree.increments[par[i], slot]])
        records.append(rec)
    term_ids = [tree.ids[i] for i in tree.terminals]
    payload = {
        "schema": SCHEMA,
        "horizon": tree.horizon,
        "nodes": records,
        "processes": [{"name": k, "values": dict(zip(map(str, tree.ids), np.asarray(v, float).tolist()))}
                      for k, v in (processes or {}).items() if k != "t"],
        "claims": [{"name": k, "values": dict(zip(map(str, term_ids), np.asarray(v, float).tolist()))}
                   for k, v in (claims or {}).items()],
    }
    if defaults:
        payload["defaults"] = defaults
    return write_json(path, payload)
