"""Command-line interface.

Commands: ``extremile``, ``fit``, ``fit-ssl``, ``ordinary`` and ``simulate``.
Results go to stdout as JSON (or aligned text with ``--format text``).  With
``--out-dir`` the command also writes JSON and CSV files plus a
``manifest.json`` sidecar recording options, input digests and timing.

Exit codes: 0 success, 1 other failure, 2 input error, 3 design error,
4 schema error, 5 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .data import LabeledData, UnlabeledData
from .errors import (ConfigError, DesignError, DomainError, ExtremileError, SchemaError,
                     SingularMatrixError)
from .estimators import DEFAULT_TAUS, fit_ordinary, fit_semisupervised, fit_supervised
from .inference import standard_errors
from .qrcm import FitOptions
from .simlab import SCHEMA_VERSION, SimConfig, format_table, run_replications
from .weights import sample_extremile

EXIT_OK, EXIT_OTHER, EXIT_INPUT, EXIT_DESIGN, EXIT_SCHEMA, EXIT_CONFIG = 0, 1, 2, 3, 4, 5
INTERCEPT = "(intercept)"


class InputError(ExtremileError):
    """Unreadable or malformed input file or column."""


def read_csv(path: str | Path, allow_empty: bool = False) -> tuple[list[str], np.ndarray]:
    """Parse a headed, comma-separated UTF-8 file of numbers."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not valid UTF-8 ({exc.reason})") from None
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        if allow_empty:
            return [], np.zeros((0, 0))
        raise InputError(f"{path}: empty file; a header row is required")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header) or any(not h for h in header):
        raise InputError(f"{path}: header must contain distinct, non-empty names")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InputError(f"{path}, line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            values.append([float(c) for c in row])
        except ValueError:
            bad = next(c for c in row if not _is_float(c))
            raise InputError(f"{path}, line {lineno}: non-numeric cell {bad!r}") from None
    M = np.array(values, dtype=float).reshape(len(values), len(header))
    if not np.all(np.isfinite(M)):
        raise InputError(f"{path}: non-finite values are not allowed")
    if M.shape[0] == 0 and not allow_empty:
        raise InputError(f"{path}: no data rows")
    return header, M


def _is_float(c: str) -> bool:
    try:
        float(c)
        return True
    except ValueError:
        return False


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _taus(text: str | None) -> list[float]:
    if text is None:
        return list(DEFAULT_TAUS)
    try:
        taus = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise InputError(f"cannot parse levels {text!r}") from None
    if not taus or any(not 0.0 < t < 1.0 for t in taus):
        raise InputError("levels must be a comma-separated list of values in (0, 1)")
    return taus


def _column(header, M, name, path):
    if name not in header:
        raise InputError(f"{path}: column {name!r} not found; available: {header}")
    return M[:, header.index(name)]


def _design(header, M, response, covariates, intercept, path):
    if covariates:
        names = [c.strip() for c in covariates.split(",")]
        for c in names:
            if c not in header:
                raise InputError(f"{path}: covariate {c!r} not found")
    else:
        names = [h for h in header if h != response]
    X = M[:, [header.index(c) for c in names]]
    if intercept:
        X = np.column_stack([np.ones(M.shape[0]), X])
        names = [INTERCEPT] + names
    return names, X


def _labeled(args):
    header, M = read_csv(args.input)
    y = _column(header, M, args.response, args.input)
    names, X = _design(header, M, args.response, args.covariates, not args.no_intercept, args.input)
    data = LabeledData(X, y)
    try:
        data.check_rank()
    except DesignError as exc:
        cols = [names[c] for c in exc.columns]
        raise DesignError(f"design matrix is rank deficient; collinear columns: {cols}", exc.columns) from None
    return names, data


def _fit_options(args) -> FitOptions:
    return FitOptions(grid=args.grid)


def _estimate_block(fit, names) -> dict:
    return {
        "taus": list(fit.taus),
        "coefficients": names,
        "beta": [fit.beta[t].tolist() for t in fit.taus],
        "alpha": fit.alpha_hat.tolist(),
        "vec_alpha": fit.alpha_hat.ravel(order="F").tolist(),
        "basis": fit.qrcm.basis.name,
    }


def _diagnostics(fit) -> dict:
    d = {k: (v if not isinstance(v, (np.floating, np.integer)) else v.item())
         for k, v in fit.diagnostics.items()}
    d["monotonicity_worst"] = [list(w) for w in fit.qrcm.monotonicity.worst]
    return d


def _se_block(covs) -> dict:
    return {"se": [covs[t].se.tolist() for t in covs], "cov": [covs[t].cov.tolist() for t in covs]}


def _beta_rows(result: dict) -> list[list]:
    est = result["estimates"]
    se = result.get("standard_errors", {}).get("se")
    rows = []
    for i, t in enumerate(est["taus"]):
        for j, name in enumerate(est["coefficients"]):
            row = [t, name, est["beta"][i][j]]
            if se is not None:
                row.append(se[i][j])
                if "sl_standard_errors" in result:
                    row.append(result["sl_standard_errors"]["se"][i][j])
            rows.append(row)
    return rows


def _text_fit(result: dict) -> str:
    rows = _beta_rows(result)
    head = ["tau", "coefficient", "beta"]
    if rows and len(rows[0]) > 3:
        head.append("se")
    if rows and len(rows[0]) > 4:
        head.append("se_SL")
    lines = ["".join(f"{h:>14}" for h in head)]
    for r in rows:
        lines.append("".join(f"{v:>14.6g}" if isinstance(v, float) else f"{v:>14}" for v in r))
    return "\n".join(lines)


def cmd_extremile(args) -> dict:
    header, M = read_csv(args.input)
    y = _column(header, M, args.column, args.input)
    taus = _taus(args.taus)
    vals = [sample_extremile(y, t) for t in taus]
    return {"command": "extremile", "column": args.column, "n": int(y.size),
            "taus": taus, "extremiles": vals}


def cmd_fit(args) -> dict:
    names, data = _labeled(args)
    fit = fit_supervised(data, args.basis, _taus(args.taus), _fit_options(args))
    out = {"command": "fit", "mode": "SL", "estimates": _estimate_block(fit, names),
           "diagnostics": _diagnostics(fit)}
    if args.se:
        out["standard_errors"] = _se_block(standard_errors(fit, data))
    return out


def cmd_fit_ssl(args) -> dict:
    names, data = _labeled(args)
    uh, UM = read_csv(args.unlabeled, allow_empty=True)
    covs = [c for c in names if c != INTERCEPT]
    if UM.size == 0 and UM.shape[0] == 0:
        Xu = np.zeros((0, data.p))
    else:
        missing = [c for c in covs if c not in uh]
        extra = [c for c in uh if c not in covs and c != args.response]
        if missing or extra:
            raise SchemaError(f"unlabeled columns do not match the labeled covariates "
                              f"(missing {missing}, unexpected {extra})")
        Xu = UM[:, [uh.index(c) for c in covs]]
        if INTERCEPT in names:
            Xu = np.column_stack([np.ones(Xu.shape[0]), Xu])
    unlabeled = UnlabeledData(Xu)
    taus = _taus(args.taus)
    fit = fit_semisupervised(data, unlabeled, args.zmap, args.basis, taus, _fit_options(args))
    out = {"command": "fit-ssl", "mode": "SSL", "estimates": _estimate_block(fit, names),
           "diagnostics": _diagnostics(fit)}
    if args.se:
        out["standard_errors"] = _se_block(
            standard_errors(fit, data, unlabeled if unlabeled.N else None, args.zmap))
        sl = fit_supervised(data, args.basis, taus, _fit_options(args))
        out["sl_standard_errors"] = _se_block(standard_errors(sl, data))
    return out


def cmd_ordinary(args) -> dict:
    names, data = _labeled(args)
    tau = _taus(str(args.tau))[0]
    res = fit_ordinary(data, tau, args.bandwidth, args.kernel)
    return {
        "command": "ordinary",
        "tau": tau,
        "coefficients": names,
        "beta": res.beta.tolist(),
        "bandwidth": None if res.bandwidth is None else np.atleast_1d(res.bandwidth).tolist(),
        "kernel": res.kernel,
        "n_clipped": res.n_clipped,
    }


_DESIGNS = {"A": "model-A", "B": "model-B", "model-A": "model-A", "model-B": "model-B"}


def _sim_config(args) -> SimConfig:
    fields = {}
    if args.config:
        try:
            fields = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise InputError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}", "config") from None
        if not isinstance(fields, dict):
            raise ConfigError("config file must hold a JSON object", "config")
    flags = {
        "design": args.design, "error": args.error, "sigma_mode": args.sigma, "n": args.n,
        "N": args.N, "taus": args.taus, "reps": args.reps, "base_seed": args.seed,
        "basis": args.basis, "methods": args.methods,
    }
    fields.update({k: v for k, v in flags.items() if v is not None})
    if "design" in fields:
        if fields["design"] not in _DESIGNS:
            raise ConfigError(f"unknown design {fields['design']!r}; use A or B", "design")
        fields["design"] = _DESIGNS[fields["design"]]
    for key in ("N", "taus", "methods"):
        if isinstance(fields.get(key), str):
            parts = [p.strip() for p in fields[key].split(",") if p.strip()]
            try:
                fields[key] = parts if key == "methods" else [
                    int(p) if key == "N" else float(p) for p in parts]
            except ValueError:
                raise ConfigError(f"cannot parse {key}={fields[key]!r}", key) from None
    known = set(SimConfig.__dataclass_fields__)
    unknown = sorted(set(fields) - known)
    if unknown:
        raise ConfigError(f"unknown configuration fields {unknown}", unknown[0])
    try:
        return SimConfig(**fields)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid configuration: {exc}") from None


def cmd_simulate(args) -> dict:
    errors = args.errors.split(",") if args.errors else None
    base = _sim_config(args)
    configs = [base] if not errors else [SimConfig(**{**base.to_dict(), "error": e,
                                                      "methods": base.methods}) for e in errors]
    summaries = [run_replications(c, args.workers) for c in configs]
    args._summaries = summaries
    return {
        "command": "simulate",
        "schema_version": SCHEMA_VERSION,
        "summaries": [json.loads(s.to_json()) for s in summaries],
        "table": format_table(summaries),
    }


def _write_outputs(args, result: dict, started: float, inputs: list[str]) -> None:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"result.json": json.dumps({"schema_version": SCHEMA_VERSION, **result}, indent=2) + "\n"}
    if "estimates" in result:
        buf = [",".join(["tau", "coefficient", "beta"]
                        + (["se"] if "standard_errors" in result else [])
                        + (["se_SL"] if "sl_standard_errors" in result else []))]
        buf += [",".join(repr(v) if isinstance(v, float) else str(v) for v in r) for r in _beta_rows(result)]
        files["beta.csv"] = "\n".join(buf) + "\n"
        est = result["estimates"]
        alpha = ["row," + ",".join(f"b{j + 1}" for j in range(len(est["alpha"][0])))]
        alpha += [f"{name}," + ",".join(repr(v) for v in row)
                  for name, row in zip(est["coefficients"], est["alpha"])]
        files["alpha.csv"] = "\n".join(alpha) + "\n"
    if result.get("command") == "simulate":
        files["summary.csv"] = "".join(s.to_csv() for s in args._summaries)
        files["table.txt"] = result["table"] + "\n"
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")
    opts = {k: v for k, v in vars(args).items() if not k.startswith("_") and k != "func"}
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": args.command,
        "options": opts,
        "inputs": {p: _digest(p) for p in inputs},
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "wall_clock_seconds": round(time.time() - started, 3),
        "outputs": sorted(files),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8")


def _render(result: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps({"schema_version": SCHEMA_VERSION, **result}, indent=2)
    cmd = result["command"]
    if cmd == "extremile":
        return "\n".join(f"{t:>8g} {v:>16.10g}" for t, v in zip(result["taus"], result["extremiles"]))
    if cmd in ("fit", "fit-ssl"):
        return _text_fit(result)
    if cmd == "ordinary":
        return "\n".join(f"{n:>14} {b:>16.10g}" for n, b in zip(result["coefficients"], result["beta"]))
    return result["table"]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="extremile", description="Linear extremile regression tools")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--format", choices=("json", "text"), default="json")
        if out:
            sp.add_argument("--out-dir", help="write result files and a manifest here")

    def design(sp):
        sp.add_argument("--response", required=True)
        sp.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
        sp.add_argument("--no-intercept", action="store_true")

    sp = sub.add_parser("extremile", help="sample extremiles of one column")
    sp.add_argument("input")
    sp.add_argument("--column", required=True)
    sp.add_argument("--taus", default="0.1,0.3,0.5,0.7,0.9")
    common(sp)
    sp.set_defaults(func=cmd_extremile)

    for name, fn, hlp in (("fit", cmd_fit, "supervised extremile regression"),
                          ("fit-ssl", cmd_fit_ssl, "semi-supervised extremile regression")):
        sp = sub.add_parser(name, help=hlp)
        sp.add_argument("input", help="labeled CSV")
        if name == "fit-ssl":
            sp.add_argument("unlabeled", help="unlabeled CSV with the same covariate columns")
            sp.add_argument("--zmap", default="quadratic", choices=("constant", "linear", "quadratic"))
        design(sp)
        sp.add_argument("--basis", default="polynomial:3")
        sp.add_argument("--taus", default="0.1,0.3,0.5,0.7,0.9")
        sp.add_argument("--grid", default="gl:99")
        sp.add_argument("--se", action="store_true", help="add sandwich standard errors")
        common(sp)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("ordinary", help="kernel-weighted least-squares baseline")
    sp.add_argument("input")
    design(sp)
    sp.add_argument("--tau", type=float, required=True)
    sp.add_argument("--bandwidth", type=float)
    sp.add_argument("--kernel", default="gaussian", choices=("gaussian", "epanechnikov"))
    common(sp)
    sp.set_defaults(func=cmd_ordinary)

    sp = sub.add_parser("simulate", help="Monte Carlo replications")
    sp.add_argument("--config", help="JSON file of configuration fields")
    sp.add_argument("--design")
    sp.add_argument("--error")
    sp.add_argument("--errors", help="comma-separated error laws, one block each")
    sp.add_argument("--sigma")
    sp.add_argument("--n", type=int)
    sp.add_argument("--N")
    sp.add_argument("--taus")
    sp.add_argument("--reps", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--basis")
    sp.add_argument("--methods")
    sp.add_argument("--workers", type=int, help="process count (default: EXTREMILE_WORKERS or 1)")
    common(sp)
    sp.set_defaults(func=cmd_simulate)
    return p


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, SchemaError):
        return EXIT_SCHEMA
    if isinstance(exc, (DesignError, SingularMatrixError)):
        return EXIT_DESIGN
    if isinstance(exc, (InputError, DomainError)):
        return EXIT_INPUT
    return EXIT_OTHER


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.time()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = _show_warning
            result = args.func(args)
    except ExtremileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    if getattr(args, "out_dir", None):
        inputs = [getattr(args, k) for k in ("input", "unlabeled", "config") if getattr(args, k, None)]
        _write_outputs(args, result, started, inputs)
    print(_render(result, args.format))
    return EXIT_OK


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
