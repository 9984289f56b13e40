"""Stage orchestration shared by the command line and the case book.

Every ``run_*`` function returns a :class:`Report`: a JSON-ready dict of
stage sections plus an exit status.  Stage verdicts are one of
``pass | fail | vacuous | skipped | basis-insufficient``.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import sympy as sp

from .errors import (
    BasisInsufficientError,
    HamPerturbError,
    PreconditionError,
)
from .hydro import is_hydro_integrable, solve_claws0, tsarev_check, verify_chart
from .jets import LocalFunctional, poisson_bracket
from .kernel import render, sampling_seed, zero_test
from .manifest import SCHEMA_VERSION, Setup
from .perturbation import (
    Perturbation,
    extend_claw,
    first_order_check,
    first_order_trivialize,
    quasi_trivialize,
    reduce_first_order,
    second_order_check,
    second_order_extension_solve,
)

__all__ = ["Report", "EXIT_PASS", "EXIT_FAIL", "EXIT_INPUT", "EXIT_BASIS", "EXIT_INTERNAL",
           "run_check", "run_trivialize", "run_extend", "STAGES"]

EXIT_PASS, EXIT_FAIL, EXIT_INPUT, EXIT_BASIS, EXIT_INTERNAL = 0, 1, 2, 3, 4
STAGES = ("hydro", "first", "second", "all")
_OK = ("pass", "vacuous")


@dataclass
class Report:
    command: str
    name: str
    seed: int
    sections: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def verdicts(self) -> dict:
        return {k: v["verdict"] for k, v in self.sections.items()}

    @property
    def verdict(self) -> str:
        vs = list(self.verdicts.values())
        if any(v == "fail" for v in vs):
            return "fail"
        if any(v == "basis-insufficient" for v in vs):
            return "basis-insufficient"
        if any(v == "skipped" for v in vs):
            return "fail"
        return "pass"

    @property
    def exit_code(self) -> int:
        return {"pass": EXIT_PASS, "fail": EXIT_FAIL, "basis-insufficient": EXIT_BASIS}[self.verdict]

    def to_dict(self, timing: bool = False) -> dict:
        out = {"schema_version": SCHEMA_VERSION, "command": self.command, "case": self.name,
               "seed": self.seed, "verdict": self.verdict, "exit_code": self.exit_code,
               "stages": self.sections, "warnings": self.warnings}
        out.update(self.extra)
        if timing:
            out["timing"] = {k: round(v, 3) for k, v in self.timing.items()}
        return out

    def to_json(self, timing: bool = False) -> str:
        return json.dumps(self.to_dict(timing), indent=2, sort_keys=True, ensure_ascii=True) + "\n"

    def summary(self) -> str:
        lines = [f"{self.command} {self.name}: {self.verdict.upper()} (exit {self.exit_code})"]
        for key, sec in self.sections.items():
            line = f"  {key}: {sec['verdict']}"
            if sec.get("mode") == "probabilistic":
                line += " [probabilistic]"
            lines.append(line)
            w = sec.get("witness")
            if isinstance(w, dict):
                lines.append(f"    witness {w.get('name')}: {w.get('expression')}")
            for item in sec.get("items", []):
                extra = f"  F2 = {item['F2']}" if item.get("verdict") == "pass" and "F2" in item else ""
                lines.append(f"    {item['f0']}: {item['verdict']}{extra}")
                if "witness" in item:
                    lines.append(f"      witness {item['witness']['name']}: "
                                 f"{item['witness']['expression']}")
        for w in self.warnings:
            lines.append(f"  warning: {w}")
        return "\n".join(lines) + "\n"


class _Clock:
    def __init__(self, report: Report):
        self.report = report

    def __call__(self, key):
        clock = self

        class _Ctx:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                clock.report.timing[key] = clock.report.timing.get(key, 0.0) + time.perf_counter() - self.t
                return False

        return _Ctx()


def _mat(M, ws):
    return [[render(M[i, j], ws) for j in range(M.cols)] for i in range(M.rows)]


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------

def _stage_hydro(setup: Setup, rep: Report) -> bool:
    sys = setup.system
    ws = setup.ws
    h = is_hydro_integrable(sys)
    eta_res = sys.eta_symmetry_residuals()
    sec = {"variables": list(ws.names), "h0": render(sys.h0, ws),
           "velocity_matrix": _mat(sys.A, ws),
           "eta_symmetric": all(zero_test(e, ws).zero for _, e in eta_res),
           "haantjes": h.to_dict()}
    sec["verdict"] = "pass" if h.integrable and sec["eta_symmetric"] else "fail"
    sec["mode"] = h.mode
    if not h.integrable:
        sec["witness"] = {"name": f"Haantjes entry {tuple(i + 1 for i in h.witness_index)}",
                          "expression": h.witness}
    rep.sections["hydro"] = sec
    ch = setup.chart
    if ch is None:
        rep.sections["chart"] = {"verdict": "skipped",
                                 "reason": "no chart given (charts are built for n = 2 only)"}
        return False
    rws = ch.rws
    cr = verify_chart(sys, ch)
    ts = tsarev_check(ch)
    csec = {"source": "solved" if setup.chart_solved else "manifest",
            "variables": list(rws.names),
            "forward": [render(f, ws) for f in ch.forward],
            "inverse": [render(f, rws) for f in ch.inverse],
            "lambdas": [render(f, rws) for f in ch.lambdas],
            "lambda_ii": [render(ch.lam_d[i][i], rws) for i in range(ch.n)],
            "verification": cr.to_dict(), "tsarev": ts.to_dict()}
    csec["verdict"] = "pass" if cr.ok and ts.ok else "fail"
    csec["mode"] = "probabilistic" if "probabilistic" in (cr.mode, ts.mode) else "exact"
    bad = cr.first_failure()
    if bad is not None:
        csec["witness"] = {"name": bad.name, "expression": bad.test.residual}
    rep.sections["chart"] = csec
    return sec["verdict"] == "pass" and csec["verdict"] == "pass"


def _stage_first(setup: Setup, rep: Report, trivialize: bool = False):
    pert = setup.perturbation
    rws = setup.rws
    try:
        fo = first_order_check(pert)
    except PreconditionError as exc:
        rep.sections["first"] = {"verdict": "fail", "error": str(exc)}
        return None
    sec = fo.to_dict(setup.ws, rws)
    sec["h1"] = render(pert.H1.density, pert.H1.space.ws) if pert.H1 is not None else "0"
    w = fo.first_failure()
    if w is not None:
        sec["witness"] = {"name": f"triple {tuple(i + 1 for i in w[0])}", "expression": w[1].residual}
    rep.sections["first"] = sec
    if not fo.ok or not trivialize:
        return fo
    return _trivialize_first(setup, rep)


def _trivialize_first(setup: Setup, rep: Report):
    pert = setup.perturbation
    if pert.H1 is None:
        rep.sections["k0"] = {"verdict": "pass", "k0": "0"}
        return None
    try:
        basis = setup.basis("k0") if "k0" in setup.manifest.bases else []
        fo = first_order_trivialize(pert, basis)
    except BasisInsufficientError as exc:
        rep.sections["k0"] = {"verdict": "basis-insufficient", "reason": str(exc)}
        return None
    rep.sections["k0"] = {"verdict": "pass", "k0": render(fo.k0, setup.ws),
                          "k0_chart": render(fo.k0_R, setup.rws),
                          "bracket_check": fo.bracket_check.to_dict()}
    return fo


def _reduced(setup: Setup, rep: Report) -> Perturbation | None:
    """The perturbation with H1 removed (or kept, with a warning, when no basis suffices)."""
    pert = setup.perturbation
    if pert.H1 is None:
        return pert
    basis = setup.basis("k0") if "k0" in setup.manifest.bases else []
    try:
        new, fo = reduce_first_order(pert, basis)
    except BasisInsufficientError:
        rep.warnings.append("H1 could not be trivialized over the k0 basis; second-order "
                            "analysis uses the untransformed H2")
        return pert
    rep.extra["h2_after_first_order_reduction"] = render(new.H2.density, setup.ws) \
        if new.H2 is not None else "0"
    return new


def _stage_second(setup: Setup, rep: Report, pert: Perturbation):
    rws = setup.rws
    try:
        so = second_order_check(pert)
    except PreconditionError as exc:
        rep.sections["second"] = {"verdict": "fail", "error": str(exc)}
        return None
    sec = so.to_dict(rws)
    sec["h2_chart"] = render(pert.H2_R.density, rws)
    if so.ok and so.phi is None:
        sec["verdict"] = "fail"
        sec["error"] = so.phi_error
    rep.sections["second"] = sec
    return so


def _prefix(setup: Setup, rep: Report, clock, want_first: bool, trivialize: bool = False):
    """hydro -> chart -> first; returns (ok so far, first-order report)."""
    with clock("hydro"):
        ok = _stage_hydro(setup, rep)
    if not want_first:
        return ok, None
    if not ok:
        rep.sections["first"] = {"verdict": "skipped", "reason": "hydrodynamic stage failed"}
        return False, None
    with clock("first"):
        fo = _stage_first(setup, rep, trivialize)
    return rep.sections["first"]["verdict"] in _OK, fo


def run_check(setup: Setup, stage: str = "all") -> Report:
    if stage not in STAGES:
        raise HamPerturbError(f"unknown stage {stage!r}")
    rep = Report("check", setup.manifest.name, setup.manifest.seed)
    rep.extra["stage"] = stage
    clock = _Clock(rep)
    with sampling_seed(setup.manifest.seed):
        ok, _ = _prefix(setup, rep, clock, stage in ("first", "second", "all"))
        if stage in ("second", "all"):
            if not ok:
                rep.sections["second"] = {"verdict": "skipped", "reason": "earlier stage failed"}
            else:
                with clock("second"):
                    pert = _reduced(setup, rep)
                    _stage_second(setup, rep, pert)
    return rep


def run_trivialize(setup: Setup) -> Report:
    rep = Report("trivialize", setup.manifest.name, setup.manifest.seed)
    clock = _Clock(rep)
    with sampling_seed(setup.manifest.seed):
        ok, fo = _prefix(setup, rep, clock, True, trivialize=True)
        if not ok:
            rep.sections["second"] = {"verdict": "skipped", "reason": "earlier stage failed"}
            return rep
        if rep.sections.get("k0", {}).get("verdict") == "basis-insufficient":
            rep.sections["second"] = {"verdict": "skipped", "reason": "H1 not trivialized"}
            return rep
        with clock("second"):
            pert = _reduced(setup, rep)
            so = _stage_second(setup, rep, pert)
        if so is None or not so.ok or so.phi is None:
            rep.sections["K1"] = {"verdict": "skipped",
                                  "reason": "second-order conditions fail; no quasi-trivialization"}
            return rep
        with clock("K1"):
            q = quasi_trivialize(pert, so)
        rep.sections["K1"] = q.to_dict(setup.rws)
    return rep


def _f0_list(setup: Setup, f0: str, rep: Report) -> list:
    if f0 in setup.manifest.bases:
        census = solve_claws0(setup.system, setup.chart, setup.basis(f0))
        rep.sections["census"] = dict(census.to_dict(setup.ws), verdict="pass")
        return list(census.densities)
    from .parsing import parse_expr
    return [parse_expr(f0, setup.ws)]


def run_extend(setup: Setup, f0: str, require_generic: bool = False) -> Report:
    """Extend ``f0`` (expression text, or the name of a basis whose census is used)."""
    rep = Report("extend", setup.manifest.name, setup.manifest.seed)
    rep.extra["f0"] = f0
    clock = _Clock(rep)
    with sampling_seed(setup.manifest.seed):
        ok, _ = _prefix(setup, rep, clock, True)
        if not ok:
            rep.sections["extension"] = {"verdict": "skipped", "reason": "earlier stage failed"}
            return rep
        dens = _f0_list(setup, f0, rep)
        with clock("second"):
            pert = _reduced(setup, rep)
            try:
                so = second_order_check(pert)
            except PreconditionError as exc:
                rep.sections["extension"] = {"verdict": "fail", "error": str(exc)}
                return rep
        trivial = None
        if so.ok and so.phi is not None:
            trivial = quasi_trivialize(pert, so)
        items = []
        with clock("extension"):
            for d in dens:
                ext = second_order_extension_solve(pert, d, require_generic)
                item = ext.to_dict(setup.ws, setup.rws)
                if trivial is not None:
                    gen = extend_claw(pert, d, trivial, require_generic)
                    item["generator_route"] = {"verdict": gen.verdict,
                                               "F2": render(gen.F2, setup.rws),
                                               "route_agreement": gen.route_agreement.to_dict()}
                items.append(item)
        verdict = "pass" if all(i["verdict"] == "pass" for i in items) else "fail"
        rep.sections["extension"] = {"verdict": verdict, "items": items,
                                     "pass_vector": [i["verdict"] for i in items]}
    return rep


def bracket_with_h0(setup: Setup, f0) -> LocalFunctional:
    """``{H0, F0}`` on the state jet space (independent of the Hessian route)."""
    sys = setup.system
    return poisson_bracket(sys.H0, LocalFunctional(sp.sympify(f0), sys.space), sys.metric)
