"""JSON scenario documents: loading, schema validation, serialization."""

from __future__ import annotations

import json
import re
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .problem import (ConstraintProfile, CostProfile, InstanceError, ProblemInstance,
                      RoleSchedule, TradingNetwork, build_instance)

__all__ = ["scenario_path", "schema", "validate_document", "instance_from_dict",
           "instance_to_dict", "load_instance", "dump_instance", "dumps_document"]

_COEFFS = ("a", "b_trade", "b_fee", "b_rep", "c")


def scenario_path(name: str) -> Path:
    """Path of a scenario shipped with the package, e.g. ``"six_prosumer"``."""
    fname = name if name.endswith(".json") else name + ".json"
    return Path(str(resources.files("dynap2p") / "scenarios" / fname))


def schema() -> dict:
    return json.loads(scenario_path("instance.schema").read_text())


def validate_document(doc: dict) -> None:
    """Raise :class:`InstanceError` naming the failing field."""
    try:
        jsonschema.validate(doc, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise InstanceError(f"schema violation at {where}: {exc.message}") from None


def _sides(value, T, where):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1:
        arr = np.stack([arr, arr])
    if arr.shape != (2, T):
        raise InstanceError(f"{where}: expected {T} values per period (or a pair of such arrays)")
    return arr


def instance_from_dict(doc: dict) -> ProblemInstance:
    validate_document(doc)
    ids = list(doc["prosumers"])
    index = {pid: k for k, pid in enumerate(ids)}
    m = len(ids)
    T = len(doc["roles"])
    if "horizon" in doc and doc["horizon"] != T:
        raise InstanceError(f"horizon {doc['horizon']} disagrees with {T} role periods")

    def idx(pid, where):
        if pid not in index:
            raise InstanceError(f"{where}: unknown prosumer id {pid}")
        return index[pid]

    edges, tables, loss = [], {k: {} for k in _COEFFS}, {}
    for n_edge, e in enumerate(doc["edges"]):
        where = f"edges/{n_edge}"
        i, j = (idx(pid, where) for pid in e["pair"])
        edges.append((i, j))
        for key in _COEFFS:
            if key in e:
                both = _sides(e[key], T, f"{where}/{key}")
                tables[key][(i, j)] = both[0]
                tables[key][(j, i)] = both[1]
        if "loss" in e:
            loss[(i, j)] = np.asarray(e["loss"], dtype=float)

    network = TradingNetwork(m, tuple(edges))
    sellers = [[idx(pid, f"roles/{t}") for pid in row] for t, row in enumerate(doc["roles"])]
    roles = RoleSchedule(m, tuple(frozenset(s) for s in sellers))

    p_min = np.empty((m, T))
    p_max = np.empty((m, T))
    for pid in ids:
        entry = doc["bounds"].get(str(pid))
        if entry is None:
            raise InstanceError(f"bounds/{pid}: missing")
        for arr, key in ((p_min, "min"), (p_max, "max")):
            vals = np.asarray(entry[key], dtype=float)
            if vals.shape != (T,):
                raise InstanceError(f"bounds/{pid}/{key}: expected {T} values")
            arr[index[pid]] = vals
    for key in doc["bounds"]:
        if int(key) not in index:
            raise InstanceError(f"bounds/{key}: unknown prosumer id")

    costs = CostProfile(a=tables["a"], b_trade=tables["b_trade"], b_fee=tables["b_fee"],
                        b_rep=tables["b_rep"], c=tables["c"])
    return build_instance(network, T, roles, costs, ConstraintProfile(p_min, p_max, loss),
                          ids=ids)


def load_instance(path) -> ProblemInstance:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InstanceError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: "
                            f"{exc.msg}") from None
    return instance_from_dict(doc)


def instance_to_dict(instance: ProblemInstance, name: str | None = None) -> dict:
    ids = list(instance.ids)
    T = instance.horizon
    costs = instance.costs
    doc = {}
    if name:
        doc["name"] = name
    doc["horizon"] = T
    doc["prosumers"] = ids
    doc["roles"] = [[ids[i] for i in sorted(s)] for s in instance.roles.sellers]
    doc["bounds"] = {str(ids[i]): {"min": instance.constraints.p_min[i].tolist(),
                                   "max": instance.constraints.p_max[i].tolist()}
                     for i in range(instance.m)}
    edges = []
    for e, (i, j) in enumerate(instance.edges):
        entry = {"pair": [ids[i], ids[j]]}
        for key in _COEFFS:
            table = getattr(costs, key)
            if (i, j) in table or (j, i) in table:
                u = np.asarray(table.get((i, j), np.zeros(T)), dtype=float)
                v = np.asarray(table.get((j, i), np.zeros(T)), dtype=float)
                entry[key] = u.tolist() if np.array_equal(u, v) else [u.tolist(), v.tolist()]
        entry["loss"] = instance.edge_loss()[e].tolist()
        edges.append(entry)
    doc["edges"] = edges
    return doc


_FLAT_ARRAY = re.compile(r"\[\s*([-+0-9.eE,\s]+?)\s*\]")


def dumps_document(doc: dict) -> str:
    """Indented JSON with every innermost numeric array kept on one line."""
    text = json.dumps(doc, indent=2)
    return _FLAT_ARRAY.sub(
        lambda mt: "[" + ", ".join(x.strip() for x in mt.group(1).split(",")) + "]", text)


def dump_instance(instance: ProblemInstance, path, name: str | None = None) -> None:
    Path(path).write_text(dumps_document(instance_to_dict(instance, name)) + "\n")
