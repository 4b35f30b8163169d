"""necklab command line: config file first, flags override, deterministic outputs.

Exit codes: 0 every verdict passed, 1 some verdict failed or a numerical
failure, 2 usage or configuration error.  Errors go to stderr as one JSON line.
Summaries go to stdout as JSON; with --out the same summary and the CSV or
plot-data files are written to that directory.
"""

import os

_threads = os.environ.get("NECKLAB_THREADS")
if _threads and _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import hashlib  # noqa: E402
import json  # noqa: E402
import platform  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import jsonschema  # noqa: E402
import mpmath  # noqa: E402
import numpy as np  # noqa: E402
import scipy  # noqa: E402

from . import __version__  # noqa: E402
from .s3 import UnderResolvedError  # noqa: E402

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

_num = {"type": "number"}
_int = {"type": "integer"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}
_path = {"type": ["string", "null"]}

SCHEMAS = {
    "certify": {"L": _pos, "n_switch": _posint, "precision_bits": {"type": "integer", "minimum": 24}},
    "falsify": {"L": _pos, "samples": _posint, "n_max": _posint, "seed": _int},
    "solve": {"problem": _path, "seed": _int, "count": _posint, "eta": _pos, "L": _pos,
              "nann": {"type": "integer", "minimum": 3}, "N": _posint},
    "pohozaev": {"field": _path, "test_field": {"enum": [None, "geodesic", "rotating", "normalized"]},
                 "variant": {"enum": ["extrinsic", "intrinsic-laplace", "intrinsic-hessian"]},
                 "seed": _int, "T0": _num, "T1": _num, "nbands": _posint, "p": {"type": "integer", "minimum": 8},
                 "tol": _pos, "constraint_tol": _pos},
    "decay": {"field": _path, "seed": _int, "eps": _pos, "T0": _num, "T1": _num,
              "anchors": {"type": "array", "items": _num}, "one_sided": {"type": "boolean"},
              "T_top": _num, "coefficient": {"oneOf": [{"const": "sharp"}, _pos]}, "ds": _pos},
    "neck": {"experiment": {"enum": ["noneck", "energy-identity", "removable"]},
             "family": {"type": "object"}, "removable": {"type": "object"},
             "trend_start": _posint, "threshold": _pos},
}

DEFAULTS = {
    "certify": {"L": 3.0, "n_switch": 10_000, "precision_bits": 53},
    "falsify": {"L": 3.0, "samples": 100_000, "n_max": 32, "seed": 0},
    "solve": {"problem": None, "seed": 0, "count": 1, "eta": 1e-3, "L": 3.0, "nann": 12, "N": 3},
    "pohozaev": {"field": None, "test_field": None, "variant": "extrinsic", "seed": 0, "T0": -4.0, "T1": 0.0,
                 "nbands": 4, "p": 24, "tol": 1e-7, "constraint_tol": 1e-5},
    "decay": {"field": None, "seed": 0, "eps": 0.1, "T0": -24.0, "T1": 0.0, "anchors": [-12.0, -6.0],
              "one_sided": False, "T_top": 0.0, "coefficient": "sharp", "ds": 0.01},
    "neck": {"experiment": "noneck", "family": {}, "removable": {}, "trend_start": 2, "threshold": 1e-2},
}


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("usage", message)
        sys.exit(EXIT_USAGE)


def _emit_error(kind: str, message: str, **extra) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True) + "\n")


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def load_config(command: str, path: str | None, overrides: dict) -> dict:
    """Defaults, then the config file, then flags; validated against the command schema."""
    cfg = dict(DEFAULTS[command])
    if path is not None:
        try:
            text = Path(path).read_text()
            doc = json.loads(text) if text.strip() else None
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        schema = {
            "type": "object",
            "properties": {"command": {"const": command}, **SCHEMAS[command]},
            "required": ["command"],
            "additionalProperties": False,
        }
        try:
            jsonschema.validate(doc, schema)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"config {path}: {exc.message}") from exc
        cfg.update({k: v for k, v in doc.items() if k != "command"})
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    try:
        jsonschema.validate(cfg, {"type": "object", "properties": SCHEMAS[command]})
    except jsonschema.ValidationError as exc:
        raise ConfigError(exc.message) from exc
    return cfg


def provenance(command: str, cfg: dict) -> dict:
    return {
        "command": command,
        "config_sha256": hashlib.sha256(_canonical(cfg).encode()).hexdigest(),
        "necklab": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "mpmath": mpmath.__version__,
        "python": platform.python_version(),
    }


def _csv_header(prov: dict) -> str:
    return "".join(f"# {k}={prov[k]}\n" for k in sorted(prov))


class Output:
    """Collects files for --out and writes them in a fixed order."""

    def __init__(self, out_dir: str | None, prov: dict):
        self.dir = None if out_dir is None else Path(out_dir)
        self.prov = prov
        self.files: dict[str, str] = {}

    def csv(self, name: str, body: str) -> None:
        self.files[name] = _csv_header(self.prov) + body

    def raw(self, name: str, body: str) -> None:
        self.files[name] = body

    def finish(self, summary: dict) -> None:
        doc = {"provenance": self.prov, **summary}
        text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)
            for name in sorted(self.files):
                (self.dir / name).write_text(self.files[name])
            (self.dir / "summary.json").write_text(text)
        sys.stdout.write(text)


# ---------------------------------------------------------------- commands

def cmd_certify(cfg: dict, out: Output) -> int:
    from .three_circle import certify_theorem

    cert = certify_theorem(L=cfg["L"], n_switch=cfg["n_switch"], bits=cfg["precision_bits"])
    out.raw("certificate.json", json.dumps(cert.to_dict(), sort_keys=True, indent=2) + "\n")
    out.finish({"verdict": "Pass" if cert.certified else "Fail", "certificate": cert.to_dict()})
    return EXIT_PASS if cert.certified else EXIT_FAIL


def cmd_falsify(cfg: dict, out: Output) -> int:
    from .three_circle import falsify_inequality

    rep = falsify_inequality(L=cfg["L"], n_max=cfg["n_max"], samples=cfg["samples"], seed=cfg["seed"])
    d = rep.to_dict()
    d.pop("runtime_s", None)
    lines = ["n,sup_ratio"] + [f"{n},{v!r}" for n, v in enumerate(d["sup_by_degree"], start=1)]
    out.csv("sup_by_degree.csv", "\n".join(lines) + "\n")
    out.finish({"verdict": "Pass" if rep.passed else "Fail", "report": d})
    return EXIT_PASS if rep.passed else EXIT_FAIL


def cmd_solve(cfg: dict, out: Output) -> int:
    from .approx_biharmonic import ApproxProblem, neck_function, random_problem, solve_bvp, trichotomy_test

    if cfg["problem"] is not None:
        problems = [ApproxProblem.from_json(Path(cfg["problem"]).read_text())]
    else:
        rng = np.random.default_rng(cfg["seed"])
        problems = [random_problem(rng, eta=cfg["eta"], L=cfg["L"], nann=cfg["nann"], N=cfg["N"])
                    for _ in range(cfg["count"])]
    rows, summaries, ok = [], [], True
    for k, pr in enumerate(problems):
        v = trichotomy_test(neck_function(solve_bvp(pr)), pr.chain)
        ok = ok and v.all_hold
        body = v.to_csv().splitlines()
        if not rows:
            rows.append("problem," + body[0])
        rows.extend(f"{k},{line}" for line in body[1:])
        summaries.append(v.summary())
    out.csv("trichotomy.csv", "\n".join(rows) + "\n")
    out.finish({"verdict": "Pass" if ok else "Fail", "problems": summaries})
    return EXIT_PASS if ok else EXIT_FAIL


def _pohozaev_field(cfg: dict):
    from .pohozaev import geodesic_circle_field, normalized_field, rotating_sphere_field
    from .spectral_core import BiharmonicField, synthesize
    from .tgrid import ChebBands

    bands = ChebBands.uniform(cfg["T0"], cfg["T1"], cfg["nbands"], cfg["p"])
    kind = cfg["test_field"]
    if kind is None and cfg["variant"] != "extrinsic":
        kind = "rotating"
    if kind == "geodesic":
        return geodesic_circle_field(bands), False
    if kind == "rotating":
        return rotating_sphere_field(bands), False
    rng = np.random.default_rng(cfg["seed"])
    if kind == "normalized":
        perts = [BiharmonicField.random(rng, 2, 3, branches="AC") for _ in range(2)]
        return normalized_field(bands, perts, amplitude=0.1, N=4), False
    fld = (BiharmonicField.from_json(Path(cfg["field"]).read_text()) if cfg["field"] is not None
           else BiharmonicField.random(rng, 4, 6, branches="ABCD", mean=True))
    return synthesize(fld, bands), True


def cmd_pohozaev(cfg: dict, out: Output) -> int:
    from .pohozaev import ode_residual

    cf, biharmonic = _pohozaev_field(cfg)
    rep = ode_residual(cf, cfg["variant"], anchor="left", work=not biharmonic, constraint_tol=cfg["constraint_tol"])
    ok = rep.max_residual <= cfg["tol"] * max(rep.scale, np.finfo(float).tiny)
    out.csv("pohozaev.csv", rep.to_csv())
    for name, x, y in (("Q", rep.t, rep.Q), ("Theta", rep.t, rep.Theta), ("residual", rep.t, rep.ode_residual)):
        out.raw(f"{name}_{rep.variant}.dat", "".join(f"{a!r} {b!r}\n" for a, b in zip(x, y)))
    out.finish({"verdict": "Pass" if ok else "Fail", "variant": rep.variant, "max_residual": rep.max_residual,
                "scale": rep.scale, "Q_drift": rep.Q_drift, "work_subtracted": not biharmonic})
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_decay(cfg: dict, out: Output) -> int:
    from . import decay_ode as D
    from .spectral_core import BiharmonicField

    T0, T1, eps = cfg["T0"], cfg["T1"], cfg["eps"]
    fld = (BiharmonicField.from_json(Path(cfg["field"]).read_text()) if cfg["field"] is not None
           else D.synthetic_neck(np.random.default_rng(cfg["seed"]), eps, T0, T1))
    coef = D.SHARP_COEFFICIENT if cfg["coefficient"] == "sharp" else float(cfg["coefficient"])
    certs, margins, ok = [], ["t0,s,margin"], True
    K1 = D.forcing_constant(fld, T0, cfg["T_top"], eps, one_sided=True) if cfg["one_sided"] else None
    for t0 in cfg["anchors"]:
        t0 = float(t0)
        try:
            if cfg["one_sided"]:
                curve = D.window_energy(fld, t0, cfg["T_top"] - t0 - 1.0, ds=cfg["ds"], domain=(T0, cfg["T_top"]))
                cert = D.one_sided_bound(curve, K=K1, forcing=D.one_sided_forcing(1.0, eps, t0), eps=eps,
                                         T_top=cfg["T_top"], coefficient=coef)
            else:
                d = min(T1 - t0, t0 - T0)
                curve = D.window_energy(fld, t0, d, ds=cfg["ds"], domain=(T0, T1))
                G = D.measured_forcing(fld, t0, curve.s)
                cert = D.two_sided_bound(curve, (T0, T1), forcing=G, eps=eps, coefficient=coef)
        except ValueError as exc:
            if isinstance(exc, UnderResolvedError):
                raise
            ok = False
            certs.append({"t0": t0, "verdict": "Fail", "reason": str(exc)})
            continue
        ok = ok and cert.passed
        certs.append(cert.to_dict())
        margins.extend(f"{t0!r},{s!r},{m!r}" for s, m in zip(cert.check.s, cert.check.margin))
    out.csv("margins.csv", "\n".join(margins) + "\n")
    out.raw("certificates.json", json.dumps(certs, sort_keys=True, indent=2) + "\n")
    out.finish({"verdict": "Pass" if ok else "Fail", "coefficient": coef, "certificates": certs})
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_neck(cfg: dict, out: Output) -> int:
    from .neck_lab import noneck_report, removable_singularity_experiment, synth_family

    exp = cfg["experiment"]
    if exp == "removable":
        rep = removable_singularity_experiment(cfg["removable"])
        out.csv("removable.csv", rep.to_csv())
        d = rep.to_dict()
        out.finish({"verdict": d["verdict"], "experiment": exp, "report": d})
        return EXIT_PASS if rep.passed else EXIT_FAIL
    fam = synth_family(cfg["family"])
    rep = noneck_report(fam)
    trends = rep.trends(cfg["trend_start"], cfg["threshold"])
    key = "oscillation" if exp == "noneck" else "neck_energy"
    ok = trends[key]["passed"]
    out.csv("neck.csv", rep.to_csv())
    out.raw(f"{key}.dat", "".join(f"{r['i']} {r[key]!r}\n" for r in rep.rows))
    out.finish({"verdict": "Pass" if ok else "Fail", "experiment": exp, "trends": trends,
                "rows": rep.rows, "note": "synthetic family, not solved biharmonic maps"})
    return EXIT_PASS if ok else EXIT_FAIL


COMMANDS = {"certify": cmd_certify, "falsify": cmd_falsify, "solve": cmd_solve, "pohozaev": cmd_pohozaev,
            "decay": cmd_decay, "neck": cmd_neck}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="necklab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"necklab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", help="directory for output files")
        return sp

    s = common(sub.add_parser("certify", help="certify the three-circle matrices for all degrees"))
    s.add_argument("--L", type=float)
    s.add_argument("--n-switch", dest="n_switch", type=int)
    s.add_argument("--precision-bits", dest="precision_bits", type=int)

    s = common(sub.add_parser("falsify", help="random search for violations of the energy inequality"))
    s.add_argument("--L", type=float)
    s.add_argument("--samples", type=int)
    s.add_argument("--n-max", dest="n_max", type=int)
    s.add_argument("--seed", type=int)

    s = common(sub.add_parser("solve", help="solve approximately biharmonic problems and test the trichotomy"))
    s.add_argument("--problem")
    s.add_argument("--seed", type=int)
    s.add_argument("--count", type=int)
    s.add_argument("--eta", type=float)

    s = common(sub.add_parser("pohozaev", help="conserved bracket and radial ODE identity"))
    s.add_argument("--field")
    s.add_argument("--test-field", dest="test_field", choices=["geodesic", "rotating", "normalized"])
    s.add_argument("--variant", choices=["extrinsic", "intrinsic-laplace", "intrinsic-hessian"])
    s.add_argument("--seed", type=int)

    s = common(sub.add_parser("decay", help="certified exponential decay of window energies"))
    s.add_argument("--field")
    s.add_argument("--seed", type=int)
    s.add_argument("--one-sided", dest="one_sided", action="store_true", default=None)
    s.add_argument("--eps", type=float)

    s = common(sub.add_parser("neck", help="neck experiments on synthetic families"))
    s.add_argument("--experiment", choices=["noneck", "energy-identity", "removable"])
    return p


def main(argv=None) -> int:
    threads = os.environ.get("NECKLAB_THREADS")
    if threads is not None and not (threads.isdigit() and int(threads) > 0):
        _emit_error("config", "NECKLAB_THREADS must be a positive integer")
        return EXIT_USAGE
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    command = args.command
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "out")}
    try:
        cfg = load_config(command, args.config, overrides)
        out = Output(args.out, provenance(command, cfg))
        return COMMANDS[command](cfg, out)
    except ConfigError as exc:
        _emit_error("config", str(exc))
        return EXIT_USAGE
    except UnderResolvedError as exc:
        _emit_error("under-resolved", str(exc))
        return EXIT_FAIL
    except (ArithmeticError, RuntimeError) as exc:
        _emit_error("numerical", str(exc))
        return EXIT_FAIL
    except (ValueError, OSError, KeyError) as exc:
        _emit_error("config", str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
