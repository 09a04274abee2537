"""Batch command line front-end.

    tsc <command> --config run.json [--out DIR] [--hbar H]

The config document holds ``schema_version``, ``command``, ``model`` and
``parameters``.  Every run writes ``results.json`` (and ``table.csv`` for
scans) plus a separate ``manifest.json`` carrying the resolved config and
run metadata, so the data files are byte-identical across repeated runs.
"""

import argparse
import csv
import io
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .coarse_records import build_ec, detect_record, minimal_pec, record_factorization_check
from .errors import TscError, ValidationError
from .extremal import enumerate_extremals
from .models import HomogeneousMetricPoint, homogeneous_geodesic, model_from_dict, sym_to_vec, vec_to_sym
from .oracle import ProductStateSpec, compare_ring, hartle_check, integrate_geodesic_ode, lattice_state, ring_lattice
from .semiclassics import interference_intensity, kernel_between, screen_conservation, semiclassical_kernel

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TOP_KEYS = {"schema_version", "command", "model", "parameters"}

# allowed parameter keys per command; the tuple lists the required ones
PARAMETERS = {
    "solve-extremals": ({"qi", "qf", "tag_i", "tag_f", "n_seeds", "include_samples"}, ("qi", "qf")),
    "kernel": ({"qi", "qf", "tag_i", "tag_f", "method"}, ("qi", "qf")),
    "interference-scan": ({"qi", "n_points", "theta_min", "theta_max"}, ()),
    "records": ({"start", "record", "end", "tags", "hbars", "mode", "window_radius"}, ("start", "record", "end")),
    "conservation": ({"source", "screen_min", "screen_max", "n_screen", "cell", "sub_screen"}, ("source",)),
    "gravity-geodesic": ({"g0", "h", "times", "steps"}, ("g0", "h")),
    "hartle": ({"c", "N", "n"}, ("c", "N")),
    "oracle-compare": ({"theta_i", "theta_f", "hbars", "band_velocity"}, ("hbars",)),
    "minimal-pec": ({"start", "end", "epsilon", "max_order"}, ("start", "end", "epsilon")),
}
NEEDS_MODEL = set(PARAMETERS) - {"hartle", "gravity-geodesic"}


# ---------------------------------------------------------------------------
# config handling


def validate_config(doc, command=None):
    """Check a config document and return (command, model_doc, parameters).

    Collects every violated field before raising.
    """
    problems = []
    if not isinstance(doc, dict):
        raise ValidationError("config must be a JSON object", fields=["<root>"])
    unknown = sorted(set(doc) - TOP_KEYS)
    problems += [f"unknown key: {k}" for k in unknown]
    if doc.get("schema_version") != SCHEMA_VERSION:
        problems.append(f"schema_version must be {SCHEMA_VERSION}")
    cmd = doc.get("command") or command
    if command and doc.get("command") and doc["command"] != command:
        problems.append(f"command: config says {doc['command']!r}, invocation says {command!r}")
    if not cmd:
        problems.append("command: missing or empty")
    elif cmd not in PARAMETERS:
        problems.append(f"command: unknown {cmd!r}")
    params = doc.get("parameters", {})
    if not isinstance(params, dict):
        problems.append("parameters: must be an object")
        params = {}
    if cmd in PARAMETERS:
        allowed, required = PARAMETERS[cmd]
        problems += [f"parameters.{k}: unknown" for k in sorted(set(params) - allowed)]
        problems += [f"parameters.{k}: required" for k in required if k not in params]
        if cmd in NEEDS_MODEL and "model" not in doc:
            problems.append("model: required")
    if problems:
        raise ValidationError("invalid config", fields=problems)
    return cmd, doc.get("model"), params


def load_model(model_doc, hbar=None):
    try:
        model = model_from_dict(model_doc)
    except TypeError as exc:
        raise ValidationError("bad model parameter", detail=str(exc)) from None
    if hbar is not None:
        model = model.with_hbar(hbar)
    return model


# ---------------------------------------------------------------------------
# serialization


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def dumps(doc):
    return json.dumps(_plain(doc), sort_keys=True, indent=2, allow_nan=True) + "\n"


def write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    writer.writerow(["schema_version", *header])
    for row in rows:
        writer.writerow([SCHEMA_VERSION] + [repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _workers():
    try:
        return max(1, int(os.environ.get("TSC_THREADS", "1")))
    except ValueError:
        raise ValidationError("TSC_THREADS must be an integer", field="TSC_THREADS") from None


def _ordered_map(func, items):
    items = list(items)
    n = _workers()
    if n == 1 or len(items) < 2:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(func, items))


# ---------------------------------------------------------------------------
# commands


def _point(model, coords, tag=None):
    return model.point(np.atleast_1d(np.asarray(coords, dtype=float)), tag=tag)


def cmd_solve_extremals(model, p):
    qi = _point(model, p["qi"], p.get("tag_i"))
    qf = _point(model, p["qf"], p.get("tag_f"))
    paths = enumerate_extremals(model, qi, qf, n_seeds=int(p.get("n_seeds", 5)))
    inc = bool(p.get("include_samples", False))
    return {"n_paths": len(paths), "paths": [q.to_dict(include_samples=inc) for q in paths]}, None


def cmd_kernel(model, p):
    qi = _point(model, p["qi"], p.get("tag_i"))
    qf = _point(model, p["qf"], p.get("tag_f"))
    k = kernel_between(model, qi, qf, method=p.get("method", "jacobi"))
    out = k.to_dict()
    out["intensity"] = interference_intensity(k).total
    return out, None


def cmd_interference_scan(model, p):
    if not model.periodic or model.dimension != 1:
        raise ValidationError("interference-scan needs a ring model", field="model.kind")
    n = int(p.get("n_points", 64))
    lo = float(p.get("theta_min", 0.0))
    hi = float(p.get("theta_max", 2 * np.pi))
    thetas = lo + (hi - lo) * np.arange(n) / n
    qi = _point(model, p.get("qi", [0.0]), 0 if model.with_weg else None)

    def one(theta):
        qf = _point(model, [theta], 0 if model.with_weg else None)
        paths = enumerate_extremals(model, qi, qf)
        k = semiclassical_kernel(model, paths)
        by_label = {d["label"]: d for d in k.details}
        row = [float(theta)]
        for lab in (0, -1):
            d = by_label.get(lab)
            row.append(d["action"] if d else float("nan"))
        for lab in (0, -1):
            d = by_label.get(lab)
            row.append(d["vanvleck"] if d else float("nan"))
        row.append(interference_intensity(k).total)
        return row

    rows = _ordered_map(one, thetas)
    header = ["theta_f", "S1", "S2", "vanvleck1", "vanvleck2", "intensity"]
    return {"n_points": n, "rows": rows, "columns": header}, (header, rows)


def cmd_records(model, p):
    tags = p.get("tags", [None, None, None])
    start = _point(model, p["start"], tags[0])
    record = _point(model, p["record"], tags[1])
    end = _point(model, p["end"], tags[2])
    paths = enumerate_extremals(model, start, end)
    ec = build_ec(model, paths)
    cert = detect_record(model, ec, record)
    out = {"ec": ec.to_dict(), "certificate": cert.to_dict()}
    if cert.contained_in_all:
        rep = record_factorization_check(
            model,
            start,
            record,
            end,
            hbars=p.get("hbars"),
            mode=p.get("mode", "auto"),
            window_radius=float(p.get("window_radius", 0.7)),
        )
        cert.factorization_residual = rep.residuals[0]
        out["certificate"] = cert.to_dict()
        out["factorization"] = rep.to_dict()
    return out, None


def cmd_conservation(model, p):
    source = _point(model, p["source"])
    out = {}
    if model.periodic and model.dimension == 1:
        lat = ring_lattice(model)
        psi = lattice_state(lat, int(lat.site_of(source.coords[0])))
        prob = np.abs(psi) ** 2
        out["lattice_full_screen"] = float(np.sum(prob))
        sub = p.get("sub_screen")
        if sub is not None:
            idx = [int(lat.site_of(t)) for t in sub]
            out["lattice_sub_screen"] = float(np.sum(prob[sorted(set(idx))]))
    else:
        lo = float(p.get("screen_min", -4.0))
        hi = float(p.get("screen_max", 4.0))
        n = int(p.get("n_screen", 401))
        xs = np.linspace(lo, hi, n)
        w = np.full(n, (hi - lo) / (n - 1))
        w[[0, -1]] *= 0.5
        pts = [_point(model, [x]) for x in xs]
        out["semiclassical_screen"] = screen_conservation(model, source, pts, w, cell=float(p.get("cell", model.hbar)))
    return out, None


def _sym(x):
    a = np.asarray(x, dtype=float)
    return vec_to_sym(a) if a.shape == (6,) else a


def cmd_gravity_geodesic(model, p):
    g0 = HomogeneousMetricPoint(_sym(p["g0"]))
    h = _sym(p["h"])
    times = [float(t) for t in p.get("times", [0.0, 0.25, 0.5, 0.75, 1.0])]
    steps = int(p.get("steps", 1000))
    rows = []
    for t in times:
        closed = homogeneous_geodesic(g0, h, t).g
        ode = integrate_geodesic_ode(g0, h, t, steps=steps).g if t > 0 else g0.g
        rows.append([t, *sym_to_vec(closed).tolist(), float(np.max(np.abs(closed - ode)))])
    header = ["t", "g00", "g11", "g22", "g01", "g02", "g12", "ode_error"]
    return {"rows": rows, "columns": header, "max_ode_error": max(r[-1] for r in rows)}, (header, rows)


def _amplitudes(c):
    out = []
    for v in c:
        out.append(complex(v[0], v[1]) if isinstance(v, (list, tuple)) else complex(v))
    return out


def cmd_hartle(model, p):
    state = ProductStateSpec(tuple(_amplitudes(p["c"])), int(p["N"]))
    return hartle_check(state, int(p.get("n", 1))).to_dict(), None


def cmd_oracle_compare(model, p):
    kw = {}
    if "band_velocity" in p:
        kw["band_velocity"] = float(p["band_velocity"])
    rows = compare_ring(model, float(p.get("theta_i", 0.0)), float(p.get("theta_f", np.pi)), p["hbars"], **kw)
    header = ["hbar", "sites", "semiclassical_re", "semiclassical_im", "lattice_re", "lattice_im", "rel_error"]
    table = [
        [r["hbar"], r["sites"], r["semiclassical"].real, r["semiclassical"].imag, r["lattice"].real, r["lattice"].imag, r["rel_error"]]
        for r in rows
    ]
    errs = [r["rel_error"] for r in rows]
    monotone = all(b < a for a, b in zip(errs[:-1], errs[1:]))
    return {"rows": table, "columns": header, "monotone": monotone}, (header, table)


def cmd_minimal_pec(model, p):
    start = _point(model, p["start"])
    end = _point(model, p["end"])
    pec = minimal_pec(model, start, end, float(p["epsilon"]), int(p.get("max_order", 2)))
    return pec.to_dict(), None


COMMANDS = {
    "solve-extremals": cmd_solve_extremals,
    "kernel": cmd_kernel,
    "interference-scan": cmd_interference_scan,
    "records": cmd_records,
    "conservation": cmd_conservation,
    "gravity-geodesic": cmd_gravity_geodesic,
    "hartle": cmd_hartle,
    "oracle-compare": cmd_oracle_compare,
    "minimal-pec": cmd_minimal_pec,
}


# ---------------------------------------------------------------------------
# entry point


def run(doc, out_dir, command=None, hbar=None):
    """Execute one config document; returns the results document."""
    cmd, model_doc, params = validate_config(doc, command)
    model = load_model(model_doc, hbar) if model_doc is not None else None
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    result, table = COMMANDS[cmd](model, params)
    elapsed = time.perf_counter() - t0
    results = {"schema_version": SCHEMA_VERSION, "command": cmd, "result": result}
    if model is not None:
        results["model"] = model.to_dict()
    with open(os.path.join(out_dir, "results.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(results))
    if table is not None:
        write_csv(os.path.join(out_dir, "table.csv"), *table)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config": doc,
        "resolved": {"command": cmd, "hbar_override": hbar, "parameters": params},
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "threads": _workers(),
        "elapsed_s": elapsed,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(manifest))
    return results


def build_parser():
    parser = argparse.ArgumentParser(prog="tsc", description="Timeless semiclassical path-integral engine")
    parser.add_argument("command", choices=sorted(COMMANDS) + ["run"])
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=".")
    parser.add_argument("--hbar", type=float, default=None)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    command = None if args.command == "run" else args.command
    try:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        err = {"error": "validation", "message": f"cannot read config: {exc}", "fields": ["--config"]}
        sys.stderr.write(dumps(err))
        return 2
    try:
        run(doc, args.out, command=command, hbar=args.hbar)
    except TscError as exc:
        err = exc.to_dict()
        sys.stderr.write(dumps(err))
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "error.json"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps(err))
        return 2 if isinstance(exc, ValidationError) else 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
