"""Instance files: one JSON object per problem, schema version "format": 1.

Every check runs at parse time, so a parsed Instance is consistent: sizes
agree, the point lies in the declared polytope, and a combination recomposes
to the point. See doc/INSTANCE_FORMAT.md for the fields.
"""

import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from logger import setup_logger
from module.matroid import GraphicMatroid, Matroid, MatroidError, matroid_from_json
from module.polytope import (
    ConvexCombination,
    InvalidCombinationError,
    Mode,
    as_point,
    check_membership,
)
from module.solvers import PackingSystem, TargetVector
from module.submodular import SubmodularFunction, function_from_json

logger = setup_logger(__name__)

FORMAT_VERSION = 1


class InstanceError(ValueError):
    """A field of an instance file is missing, malformed or inconsistent."""

    def __init__(self, field_name: str, reason: str):
        super().__init__(f"{field_name}: {reason}")
        self.field = field_name
        self.reason = reason


@dataclass(eq=False)
class Instance:
    matroid: Matroid
    mode: Mode = Mode.B
    name: str = ""
    point: Optional[np.ndarray] = None
    combination: Optional[ConvexCombination] = None
    functions: List[SubmodularFunction] = field(default_factory=list)
    packing: Optional[PackingSystem] = None
    targets: Optional[TargetVector] = None
    cuts: Optional[List[List[int]]] = None
    tail_weights: Optional[np.ndarray] = None
    scale: float = 1.0

    @property
    def n(self) -> int:
        return self.matroid.n

    def require(self, attribute: str, command: str):
        value = getattr(self, attribute)
        if value is None or (isinstance(value, list) and not value):
            raise InstanceError(attribute, f"required by {command} but absent")
        return value


def _vector(data, name: str, n: int) -> np.ndarray:
    try:
        vector = np.asarray(data, dtype=float)
    except (TypeError, ValueError):
        raise InstanceError(name, "must be a list of numbers") from None
    if vector.shape != (n,):
        raise InstanceError(name, f"has {vector.size} entries, expected {n}")
    if not np.isfinite(vector).all():
        raise InstanceError(name, "contains a non-finite value")
    return vector


def instance_from_json(data) -> Instance:
    if not isinstance(data, dict):
        raise InstanceError("instance", "must be a JSON object")
    if data.get("format") != FORMAT_VERSION:
        raise InstanceError("format", f"expected {FORMAT_VERSION}, got {data.get('format')!r}")
    if "matroid" not in data:
        raise InstanceError("matroid", "missing")
    try:
        matroid = matroid_from_json(data["matroid"])
    except MatroidError as error:
        raise InstanceError("matroid", str(error)) from None
    n = matroid.n

    try:
        mode = Mode(data.get("polytope", "B"))
    except ValueError:
        raise InstanceError("polytope", f"must be 'B' or 'P', got {data.get('polytope')!r}") from None
    instance = Instance(matroid, mode, name=str(data.get("name", "")))

    if "combination" in data:
        try:
            combination = ConvexCombination.from_json(data["combination"])
            combination.validate(matroid, mode)
        except (InvalidCombinationError, MatroidError) as error:
            raise InstanceError("combination", str(error)) from None
        instance.combination = combination
    if "point" in data:
        point = _vector(data["point"], "point", n)
        if not check_membership(matroid, point, mode):
            raise InstanceError("point", f"not in {mode.value}(M)")
        if instance.combination is not None:
            gap = float(np.abs(instance.combination.point(n) - point).max())
            if gap > 1e-9:
                raise InstanceError("combination", f"recomposes to a point {gap:.3g} away from 'point'")
        instance.point = point
    elif instance.combination is not None:
        instance.point = instance.combination.point(n)

    functions = data.get("functions", [])
    if not isinstance(functions, list):
        raise InstanceError("functions", "must be a list")
    for index, spec in enumerate(functions):
        try:
            f = function_from_json(spec)
        except (ValueError, MatroidError) as error:
            raise InstanceError(f"functions[{index}]", str(error)) from None
        if f.n != n:
            raise InstanceError(f"functions[{index}]", f"is over {f.n} elements, matroid over {n}")
        instance.functions.append(f)

    if "packing" in data:
        spec = data["packing"]
        if not isinstance(spec, dict) or "A" not in spec or "b" not in spec:
            raise InstanceError("packing", "needs fields A and b")
        try:
            packing = PackingSystem(spec["A"], spec["b"], spec.get("c"))
        except (ValueError, MatroidError) as error:
            raise InstanceError("packing", str(error)) from None
        if packing.n != n:
            raise InstanceError("packing", f"has {packing.n} columns, matroid has {n} elements")
        instance.packing = packing

    if "targets" in data:
        try:
            instance.targets = TargetVector(data["targets"])
        except (ValueError, MatroidError) as error:
            raise InstanceError("targets", str(error)) from None
        if instance.targets.k != len(instance.functions):
            raise InstanceError("targets", f"{instance.targets.k} targets for {len(instance.functions)} functions")

    if "cuts" in data:
        if not isinstance(matroid, GraphicMatroid):
            raise InstanceError("cuts", "only apply to graphic matroids")
        cuts = data["cuts"]
        if not isinstance(cuts, list) or not all(isinstance(c, list) for c in cuts):
            raise InstanceError("cuts", "must be a list of vertex lists")
        for index, cut in enumerate(cuts):
            if any(not isinstance(v, int) or not 0 <= v < matroid.vertex_count for v in cut):
                raise InstanceError(f"cuts[{index}]", "names a vertex outside the graph")
        instance.cuts = [sorted(set(c)) for c in cuts]

    if "tail_weights" in data:
        weights = _vector(data["tail_weights"], "tail_weights", n)
        if ((weights < 0) | (weights > 1)).any():
            raise InstanceError("tail_weights", "entries must lie in [0, 1]")
        instance.tail_weights = weights

    scale = data.get("scale", 1.0)
    if not isinstance(scale, (int, float)) or not scale > 0:
        raise InstanceError("scale", f"must be a positive number, got {scale!r}")
    instance.scale = float(scale)
    return instance


def parse_instance(path: str) -> Instance:
    try:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
    except FileNotFoundError:
        raise InstanceError("path", f"no such file {path}") from None
    except UnicodeDecodeError as error:
        raise InstanceError("path", f"not UTF-8: {error}") from None
    except json.JSONDecodeError as error:
        raise InstanceError("json", f"line {error.lineno}: {error.msg}") from None
    instance = instance_from_json(data)
    logger.info(f"Loaded {instance.matroid.kind} instance over {instance.n} elements from {path}")
    return instance


def serialize_instance(instance: Instance) -> dict:
    payload = {
        "format": FORMAT_VERSION,
        "matroid": instance.matroid.to_json(),
        "polytope": instance.mode.value,
    }
    if instance.name:
        payload["name"] = instance.name
    if instance.point is not None:
        payload["point"] = [float(v) for v in as_point(instance.point, instance.n)]
    if instance.combination is not None:
        payload["combination"] = instance.combination.to_json()
    if instance.functions:
        payload["functions"] = [f.to_json() for f in instance.functions]
    if instance.packing is not None:
        payload["packing"] = instance.packing.to_json()
    if instance.targets is not None:
        payload["targets"] = instance.targets.values.tolist()
    if instance.cuts is not None:
        payload["cuts"] = instance.cuts
    if instance.tail_weights is not None:
        payload["tail_weights"] = instance.tail_weights.tolist()
    if instance.scale != 1.0:
        payload["scale"] = instance.scale
    return payload
