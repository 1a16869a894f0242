"""Command line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import __version__
from .errors import FrgdError, ParseError
from .harmonic import assemble_level, check_regular, renorm_residual, solve_harmonic
from .modelfile import ModelBundle, builtin_models, load_model
from .network import effective_resistance
from .overlap import (audit_json, max_chain_length, neighbor_maps,
                      propose_decomposition)
from .render import RenderSpec, render_svg
from .spectral import counting_exponent, discrete_spectrum, natural_measure, solve_delta
from .structure import check_boundary_consistency, validate_construction

log = logging.getLogger("frgd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def fmt(x) -> str:
    return f"{float(x):.17g}"


def _point(text: str):
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"expected a point 'x,y', got {text!r}") from None
    return np.array([x, y])


def _structure(b: ModelBundle, tol: float = 1e-9, seeds: int = 64):
    """Harmonic structure from the closed form if complete, else from the solver."""
    tpl = b.template
    if tpl is None:
        raise FrgdError(f"model {b.name!r} has no harmonic section")
    if not tpl.unresolved:
        return tpl.closed_form(b.model)
    log.info("no closed form for %s; solving", ", ".join(tpl.unresolved))
    res = solve_harmonic(b.model, tpl, seeds=seeds, tol=tol)
    if not res.success:
        raise FrgdError(f"solver failed: {res.message}")
    return res.structure


def cmd_validate(a, out) -> int:
    b = load_model(a.model)
    m = b.model
    rep = validate_construction(m.g)
    problems = list(rep.violations)
    if any(len(m.vertices(s, False)) for s in range(m.M)):
        cons = check_boundary_consistency(m, a.depth)
        problems += cons.violations
    if problems:
        print("invalid", file=out)
        for p in problems:
            print(f"  - {p}", file=out)
        return 1
    print("valid", file=out)
    for n in rep.notes:
        print(f"  note: {n}", file=out)
    return 0


def cmd_solve(a, out) -> int:
    b = load_model(a.model)
    if b.template is None:
        raise FrgdError(f"model {b.name!r} has no harmonic section")
    res = solve_harmonic(b.model, b.template, seeds=a.seeds, tol=a.tol)
    print(f"converged: {str(res.success).lower()} ({res.message})", file=out)
    print(f"residual = {fmt(res.residual)}", file=out)
    print(f"constraint_residual = {fmt(res.constraint_residual)}", file=out)
    for k in sorted(res.values):
        print(f"{k} = {fmt(res.values[k])}", file=out)
    if res.structure is not None:
        for k, f in enumerate(res.structure.factors):
            print(f"factor[{k}] = {fmt(f)}", file=out)
    return 0 if res.success else 1


def cmd_verify(a, out) -> int:
    b = load_model(a.model)
    tpl = b.template
    if tpl is None:
        raise FrgdError(f"model {b.name!r} has no harmonic section")
    if tpl.unresolved:
        print(f"no closed form for {', '.join(tpl.unresolved)}; use solve", file=out)
        return 1
    h = tpl.closed_form(b.model)
    res = float(np.max(np.abs(renorm_residual(b.model, h))))
    reg = check_regular(b.model, h)
    ok = res < a.tol
    print(f"residual = {fmt(res)}", file=out)
    print(f"regular = {str(reg.regular).lower()}", file=out)
    print(f"rho1 = {fmt(reg.rho1)}", file=out)
    print(f"rho2 = {fmt(reg.rho2)}", file=out)
    print("ok" if ok else f"FAILED (tolerance {a.tol:g})", file=out)
    return 0 if ok else 1


def cmd_resist(a, out) -> int:
    b = load_model(a.model)
    h = _structure(b)
    net = assemble_level(b.model, h, b.model.g.root, a.level)
    i, j = net.locate(_point(a.src), tol=a.snap), net.locate(_point(a.dst), tol=a.snap)
    print(fmt(effective_resistance(net, i, j)), file=out)
    return 0


def _measure(b: ModelBundle):
    return b.measure if b.measure is not None else natural_measure(b.model)[0]


def cmd_delta(a, out) -> int:
    b = load_model(a.model)
    h = _structure(b)
    print(fmt(solve_delta(b.model, h, _measure(b))), file=out)
    return 0


def cmd_spectrum(a, out) -> int:
    b = load_model(a.model)
    h = _structure(b)
    s = discrete_spectrum(b.model, h, _measure(b), a.level, a.bc)
    with open(a.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(s.to_csv())
    print(f"eigenvalues = {len(s.eigenvalues)}", file=out)
    try:
        slope, win, rms = counting_exponent(s)
        print(f"counting_exponent = {fmt(slope)}", file=out)
        print(f"fit_window = {fmt(win[0])},{fmt(win[1])}", file=out)
        print(f"fit_rms = {fmt(rms)}", file=out)
    except ValueError as exc:
        log.info("no exponent fit: %s", exc)
    return 0


def cmd_overlap(a, out) -> int:
    b = load_model(a.model)
    ifs = b.model.ifs
    if ifs is None:
        raise FrgdError(f"model {b.name!r} declares no IFS")
    delta = a.delta if a.delta is not None else ifs.min_ratio
    reports = [neighbor_maps(ifs, a.depth), max_chain_length(ifs, delta, a.depth)]
    if a.propose:
        reports.append(propose_decomposition(ifs, a.propose[0], a.propose[1],
                                             audit_depth=min(a.depth, 4)))
    if a.json:
        out.write(audit_json(*reports) + "\n")
    else:
        print("\n\n".join(str(r) for r in reports), file=out)
    return 0


def cmd_render(a, out) -> int:
    b = load_model(a.model)
    svg = render_svg(b.model, RenderSpec(depth=a.depth, overlay=a.overlay))
    with open(a.output, "wb") as fh:
        fh.write(svg)
    log.info("wrote %s (%d bytes)", a.output, len(svg))
    return 0


def cmd_models(a, out) -> int:
    for n in builtin_models():
        print(n, file=out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="frgd", description="Graph-directed fractal models: structure, "
                                         "harmonic analysis, spectra and overlap audits.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def model_cmd(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("model", help="model file or bundled model name")
        sp.set_defaults(func=func)
        return sp

    sp = model_cmd("validate", cmd_validate, "check graph and boundary consistency")
    sp.add_argument("--depth", type=int, default=2)
    sp = model_cmd("solve", cmd_solve, "solve the renormalization equations")
    sp.add_argument("--tol", type=float, default=1e-9)
    sp.add_argument("--seeds", type=int, default=64)
    sp = model_cmd("verify", cmd_verify, "check the closed-form harmonic structure")
    sp.add_argument("--tol", type=float, default=1e-9)
    sp = model_cmd("resist", cmd_resist, "effective resistance on the level-n network")
    sp.add_argument("--level", type=int, required=True)
    sp.add_argument("--from", dest="src", required=True, metavar="X,Y")
    sp.add_argument("--to", dest="dst", required=True, metavar="X,Y")
    sp.add_argument("--snap", type=float, default=1e-6, help="vertex matching tolerance")
    model_cmd("delta", cmd_delta, "exponent delta with spectral radius of M_delta one")
    sp = model_cmd("spectrum", cmd_spectrum, "discrete Laplacian eigenvalues to CSV")
    sp.add_argument("--level", type=int, required=True)
    sp.add_argument("--bc", choices=["dirichlet", "neumann"], default="dirichlet")
    sp.add_argument("--out", required=True)
    sp = model_cmd("overlap", cmd_overlap, "neighbor-map and chain audits of the IFS")
    sp.add_argument("--depth", type=int, required=True)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--propose", type=float, nargs=2, metavar=("L0", "L1"),
                    help="also propose a decomposition at cut scales L0 > L1")
    sp.add_argument("--json", action="store_true")
    sp = model_cmd("render", cmd_render, "SVG point render")
    sp.add_argument("--depth", type=int, required=True)
    sp.add_argument("--overlay", type=int)
    sp.add_argument("-o", "--output", required=True)
    sp = sub.add_parser("models", help="list bundled models")
    sp.set_defaults(func=cmd_models)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s: %(message)s",
                        level=logging.WARNING - 10 * min(a.verbose, 2))
    try:
        return a.func(a, out)
    except (UsageError, ParseError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FrgdError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
