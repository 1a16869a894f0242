"""JSON model files: parsing, validation and canonical emission."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ModelError, ParseError, SchemaError, ValidationError
from .expr import Expr, ExprError
from .geometry import IFSModel, compose, from_params
from .harmonic import HarmonicTemplate, ParamSpec
from .spectral import GDMeasure, natural_measure
from .structure import BoundarySpec, Edge, FractalModel, GraphConstruction

TOP_FIELDS = {"name", "description", "states", "edges", "root", "boundary", "aux",
              "ifs", "parameters", "harmonic", "measure"}
MAP_FIELDS = {"scale", "rotation_deg", "reflect", "translate", "compose"}
HARMONIC_FIELDS = {"laplacians", "factors", "constraints", "restrictions"}


@dataclass
class ModelBundle:
    model: FractalModel
    template: HarmonicTemplate | None
    measure: GDMeasure | None
    data: dict  # normalized document
    harmonic_free: bool = False

    @property
    def name(self) -> str:
        return self.model.name


def _num(value, where):
    try:
        return Expr(value)({})
    except (ExprError, KeyError, ValueError, ZeroDivisionError) as exc:
        raise SchemaError(f"{where}: expected a constant number or expression, got {value!r}") from exc


def _point(value, where):
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise SchemaError(f"{where}: expected a point [x, y], got {value!r}")
    return [_num(value[0], f"{where}[0]"), _num(value[1], f"{where}[1]")]


def _unknown(d: dict, allowed: set, where: str):
    extra = sorted(set(d) - allowed)
    if extra:
        raise SchemaError(f"{where}: unknown field(s) {', '.join(map(repr, extra))}")


def _map(spec, where, named: dict):
    """A map entry: {scale, rotation_deg, reflect, translate} or {"compose": [names...]}."""
    if isinstance(spec, str):
        if spec not in named:
            raise SchemaError(f"{where}: unknown map name {spec!r}")
        return named[spec]
    if not isinstance(spec, dict):
        raise SchemaError(f"{where}: map must be an object or a map name")
    _unknown(spec, MAP_FIELDS, where)
    if "compose" in spec:
        if len(spec) != 1 or not isinstance(spec["compose"], list) or not spec["compose"]:
            raise SchemaError(f"{where}: 'compose' must be a nonempty list and stand alone")
        out = None
        for k, part in enumerate(spec["compose"]):
            m = _map(part, f"{where}.compose[{k}]", named)
            out = m if out is None else compose(out, m)
        return out
    reflect = spec.get("reflect", False)
    if not isinstance(reflect, bool):
        raise SchemaError(f"{where}.reflect: expected true/false")
    try:
        return from_params(_num(spec.get("scale", 1), f"{where}.scale"),
                           _num(spec.get("rotation_deg", 0), f"{where}.rotation_deg"),
                           reflect, _point(spec.get("translate", [0, 0]), f"{where}.translate"))
    except ValueError as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def _state_index(ref, states, where):
    if isinstance(ref, bool):
        raise SchemaError(f"{where}: state reference must be a label or index")
    if isinstance(ref, int):
        if not 0 <= ref < len(states):
            raise ValidationError(f"{where}: state index {ref} out of range")
        return ref
    if isinstance(ref, str):
        if ref not in states:
            raise ValidationError(f"{where}: undeclared state {ref!r}")
        return states.index(ref)
    raise SchemaError(f"{where}: state reference must be a label or index")


def _per_state(section, states, where, default):
    out = [copy.deepcopy(default) for _ in states]
    if section is None:
        return out
    if not isinstance(section, dict):
        raise SchemaError(f"{where}: expected an object keyed by state")
    for key, val in section.items():
        out[_state_index(key, states, f"{where}.{key}")] = val
    return out


def parse_model(doc) -> ModelBundle:
    """Validate a decoded JSON document and build the model objects."""
    if not isinstance(doc, dict) or not doc:
        raise ParseError("model document must be a nonempty JSON object")
    _unknown(doc, TOP_FIELDS, "model")
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise SchemaError("model.name: required nonempty string")

    # IFS maps (optional); names f1..fN usable in edge maps
    named = {}
    ifs = None
    if "ifs" in doc:
        if not isinstance(doc["ifs"], list):
            raise SchemaError("model.ifs: expected a list of maps")
        maps = [_map(s, f"ifs[{k}]", named) for k, s in enumerate(doc["ifs"])]
        try:
            ifs = IFSModel(maps)
        except ValueError as exc:
            raise ValidationError(f"model.ifs: {exc}") from exc
        named = {f"f{k + 1}": mp for k, mp in enumerate(maps)}

    if "edges" in doc:
        states = doc.get("states")
        if not isinstance(states, list) or not states or not all(isinstance(s, str) for s in states):
            raise SchemaError("model.states: required list of state labels")
        if len(set(states)) != len(states):
            raise ValidationError("model.states: duplicate labels")
        if not isinstance(doc["edges"], list):
            raise SchemaError("model.edges: expected a list")
        edges = []
        for k, e in enumerate(doc["edges"]):
            where = f"edges[{k}]"
            if not isinstance(e, dict):
                raise SchemaError(f"{where}: expected an object")
            _unknown(e, {"from", "to", "map", "label"}, where)
            for req in ("from", "to", "map"):
                if req not in e:
                    raise SchemaError(f"{where}: missing field {req!r}")
            edges.append(Edge(_state_index(e["from"], states, f"{where}.from"),
                              _state_index(e["to"], states, f"{where}.to"),
                              _map(e["map"], f"{where}.map", named)))
    elif ifs is not None:
        states = doc.get("states", ["K"])
        if not isinstance(states, list) or len(states) != 1:
            raise ValidationError("model.states: an IFS-only model has exactly one state")
        edges = [Edge(0, 0, mp) for mp in ifs.maps]
    else:
        raise SchemaError("model: needs 'edges' or 'ifs'")
    root = _state_index(doc.get("root", 0), states, "model.root")
    g = GraphConstruction(states, edges, root)

    bnd = _per_state(doc.get("boundary"), states, "boundary", [])
    aux = _per_state(doc.get("aux"), states, "aux", [])
    for name_, lists in (("boundary", bnd), ("aux", aux)):
        for s, pts in enumerate(lists):
            if not isinstance(pts, list):
                raise SchemaError(f"{name_}.{states[s]}: expected a list of points")
            lists[s] = [_point(p, f"{name_}.{states[s]}[{i}]") for i, p in enumerate(pts)]
    model = FractalModel(name, g, BoundarySpec([np.array(b).reshape(-1, 2) for b in bnd],
                                               [np.array(a).reshape(-1, 2) for a in aux]),
                         ifs=ifs)

    params = doc.get("parameters", {})
    if not isinstance(params, dict):
        raise SchemaError("model.parameters: expected an object")
    pspecs = {}
    for p, v in params.items():
        where = f"parameters.{p}"
        try:
            if v == "free":
                pspecs[p] = ParamSpec(p, "free")
            elif isinstance(v, dict):
                _unknown(v, {"value", "free"}, where)
                if not isinstance(v.get("free", False), bool):
                    raise SchemaError(f"{where}.free: expected true/false")
                pspecs[p] = ParamSpec(p, "free" if v.get("free") else "fixed", Expr(v["value"]))
            else:
                pspecs[p] = ParamSpec(p, "fixed", Expr(v))
        except (ExprError, KeyError) as exc:
            raise SchemaError(f"{where}: {exc}") from exc
    model.parameters = {p: v for p, v in params.items()}

    template, free_section = None, False
    harm = doc.get("harmonic")
    if harm == "free":
        free_section = True
        template = _free_template(model)
    elif harm is not None:
        template = _parse_harmonic(harm, model, pspecs)

    measure = None
    if "measure" in doc:
        measure = _parse_measure(doc["measure"], model)

    norm = json.loads(json.dumps(doc))
    return ModelBundle(model, template, measure, norm, free_section)


def _parse_harmonic(harm, model: FractalModel, pspecs: dict) -> HarmonicTemplate:
    if not isinstance(harm, dict):
        raise SchemaError("harmonic: expected an object or \"free\"")
    _unknown(harm, HARMONIC_FIELDS, "harmonic")
    g = model.g
    states = g.states
    laps = _per_state(harm.get("laplacians"), states, "harmonic.laplacians", None)
    terms = []
    used: set[str] = set()
    for s, entries in enumerate(laps):
        where = f"harmonic.laplacians.{states[s]}"
        if entries is None:
            raise ValidationError(f"{where}: missing Laplacian for state")
        nv = len(model.vertices(s, True))
        st = []
        for k, t in enumerate(entries):
            if not isinstance(t, list) or len(t) != 3:
                raise SchemaError(f"{where}[{k}]: expected [i, j, conductance]")
            i, j, c = t
            for v in (i, j):
                if isinstance(v, bool) or not isinstance(v, (int, str)):
                    raise SchemaError(f"{where}[{k}]: vertex must be an index or node name")
                if isinstance(v, int) and not 0 <= v < nv:
                    raise ValidationError(f"{where}[{k}]: vertex index {v} out of range (0..{nv - 1})")
            if i == j:
                raise ValidationError(f"{where}[{k}]: self-loop")
            try:
                ex = Expr(c)
            except ExprError as exc:
                raise SchemaError(f"{where}[{k}]: {exc}") from exc
            used |= ex.names
            st.append((i, j, ex))
        terms.append(st)
    fac = harm.get("factors")
    if not isinstance(fac, dict):
        raise SchemaError("harmonic.factors: expected an object keyed by edge index")
    exprs = [None] * len(g.edges)
    for key, val in fac.items():
        try:
            k = int(key)
        except ValueError:
            raise SchemaError(f"harmonic.factors: bad edge index {key!r}") from None
        if not 0 <= k < len(g.edges):
            raise ValidationError(f"harmonic.factors: edge index {k} out of range")
        try:
            exprs[k] = Expr(val)
        except ExprError as exc:
            raise SchemaError(f"harmonic.factors.{key}: {exc}") from exc
        used |= exprs[k].names
    missing = [k for k, e in enumerate(exprs) if e is None]
    if missing:
        raise ValidationError(f"harmonic.factors: no factor for edges {missing}")
    cons = harm.get("constraints", [])
    if not isinstance(cons, list) or not all(isinstance(c, str) for c in cons):
        raise SchemaError("harmonic.constraints: expected a list of strings")
    for c in cons:
        if "=" in c:
            for side in c.split("=", 1):
                try:
                    used |= Expr(side).names
                except ExprError as exc:
                    raise SchemaError(f"harmonic.constraints: {exc}") from exc
        elif not c.strip().startswith("homogeneous"):
            raise SchemaError(f"harmonic.constraints: cannot parse {c!r}")
    for spec in pspecs.values():
        if spec.expr is not None:
            used |= spec.expr.names
    unknown = sorted(used - set(pspecs))
    if unknown:
        raise ValidationError(f"harmonic: undeclared parameter(s) {', '.join(unknown)}")
    restr = None
    if "restrictions" in harm:
        restr = _per_state(harm["restrictions"], states, "harmonic.restrictions", None)
        for s, subs in enumerate(restr):
            if subs is None:
                continue
            nv = len(model.vertices(s, True))
            for sub in subs:
                if (not isinstance(sub, list) or len(sub) < 2
                        or not all(isinstance(i, int) and 0 <= i < nv for i in sub)):
                    raise ValidationError(f"harmonic.restrictions.{states[s]}: bad subset {sub!r}")
    return HarmonicTemplate(pspecs, terms, exprs, list(cons), restr)


def _free_template(model: FractalModel) -> HarmonicTemplate:
    """Complete-graph template with every conductance and factor unknown, gauge pinned."""
    params, terms = {}, []
    for s in range(model.M):
        nv = len(model.vertices(s, True))
        st = []
        for i in range(nv):
            for j in range(i + 1, nv):
                p = f"c{s}_{i}_{j}"
                if not st:
                    # one conductance per state pinned to 1 (the scale freedom)
                    params[p] = ParamSpec(p, "fixed", Expr("1"))
                else:
                    params[p] = ParamSpec(p, "free")
                st.append((i, j, Expr(p)))
        terms.append(st)
    exprs = []
    for k in range(len(model.g.edges)):
        p = f"r{k}"
        params[p] = ParamSpec(p, "free")
        exprs.append(Expr(p))
    return HarmonicTemplate(params, terms, exprs, [])


def _parse_measure(meas, model: FractalModel) -> GDMeasure:
    g = model.g
    if meas == "natural":
        return natural_measure(model)[0]
    if not isinstance(meas, dict):
        raise SchemaError("measure: expected \"natural\" or an object keyed by edge index")
    vals = list(meas.values())
    if any(v == "natural" for v in vals):
        if not all(v == "natural" for v in vals):
            raise ValidationError("measure: cannot mix \"natural\" with explicit weights")
        return natural_measure(model)[0]
    w = [None] * len(g.edges)
    for key, val in meas.items():
        try:
            k = int(key)
        except ValueError:
            raise SchemaError(f"measure: bad edge index {key!r}") from None
        if not 0 <= k < len(g.edges):
            raise ValidationError(f"measure: edge index {k} out of range")
        w[k] = _num(val, f"measure.{key}")
    if any(v is None for v in w):
        raise ValidationError("measure: every edge needs a weight")
    try:
        return GDMeasure(w, g)
    except ModelError as exc:
        raise ValidationError(f"measure: {exc}") from exc


def parse_model_file(text: str) -> ModelBundle:
    if not isinstance(text, str) or not text.strip():
        raise ParseError("empty model document")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_model(doc)


def emit_model(bundle_or_doc) -> str:
    """Canonical JSON text (sorted keys, two-space indent)."""
    doc = bundle_or_doc.data if isinstance(bundle_or_doc, ModelBundle) else bundle_or_doc
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def builtin_models() -> list[str]:
    root = resources.files("frgd") / "models"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def model_text(ref: str) -> str:
    """Text of a model given a path, or the name of a bundled model."""
    p = Path(ref)
    if p.is_file():
        return p.read_text(encoding="utf-8")
    name = p.name[:-5] if p.name.endswith(".json") else p.name
    res = resources.files("frgd") / "models" / f"{name}.json"
    if res.is_file():
        return res.read_text(encoding="utf-8")
    raise FileNotFoundError(f"no model file or bundled model named {ref!r}")


def load_model(ref: str) -> ModelBundle:
    return parse_model_file(model_text(ref))
