"""Markdown summary of a run directory."""
from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from pathlib import Path

from .experiments import RunManifest, atomic_write


class ArtifactError(ValueError):
    pass


def _read_csv(path: Path, required) -> list[dict]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in required if c not in (reader.fieldnames or [])]
            if missing:
                raise ArtifactError(f"missing column(s) {', '.join(missing)}")
            rows = list(reader)
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise ArtifactError(str(exc)) from None
    for i, row in enumerate(rows, start=2):
        if None in row or any(v is None for v in row.values()):
            raise ArtifactError(f"line {i}: wrong number of fields")
    return rows


def _num(row, key):
    v = row[key]
    if v == "":
        return None
    try:
        return float(v)
    except ValueError:
        raise ArtifactError(f"column {key!r}: not a number: {v!r}") from None


def _fmt(v, digits=4):
    if v is None:
        return "-"
    if isinstance(v, str):
        return v
    if v == 0 or (1e-3 <= abs(v) < 1e5):
        return f"{v:.{digits}f}"
    return f"{v:.{digits}g}"


def _table(header, rows) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join(_fmt(c) for c in row) + " |" for row in rows]
    return out


def _load_json(man, stage, name):
    path = man.artifact_path(stage, name)
    if path is None or not path.exists():
        return {}
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except ValueError:
        return {}


# each section returns markdown lines; a raised ArtifactError becomes a diagnostic


def _kl_section(rows, meta):
    body = [[r["case"], r["model"], _num(r, "h"), _num(r, "h_oracle"), _num(r, "abs_diff"), r["within"]]
            for r in rows]
    return _table(["case", "model", "h", "oracle", "abs diff", "within 3x err"], body)


def _equipartition_section(rows, meta):
    groups = defaultdict(list)
    for r in rows:
        groups[(r["model"], int(_num(r, "n")))].append(abs(_num(r, "deviation")))
    body = []
    for (model, n), devs in sorted(groups.items()):
        devs.sort()
        m = len(devs)
        med = devs[m // 2] if m % 2 else 0.5 * (devs[m // 2 - 1] + devs[m // 2])
        slope = meta.get(model, {}).get("loglog_slope")
        body.append([model, str(n), med, max(devs), slope])
    return _table(["model", "n", "median abs dev", "max abs dev", "log-log slope"], body)


def _posterior_mass_section(rows, meta):
    body = [[str(int(_num(r, "replicate"))), str(int(_num(r, "n"))), _num(r, "eps_n"), _num(r, "pi_N_eps_n"),
             _num(r, "pi_N_fixed"), _num(r, "posterior_mean_h")] for r in rows]
    return _table(["rep", "n", "eps_n", "pi(N_eps_n)", f"pi(N_{meta.get('fixed_eps', '?')})", "mean h"], body)


def _rate_section(rows, meta):
    J = meta.get("J")
    body = []
    for r in rows:
        p = _num(r, "pi_A")
        n = _num(r, "n")
        floor = 1.0 / _num(r, "ess_A")
        val = math.log(p) / n if p and p >= floor else f"< 1/ESS ({floor:.1e})"
        body.append([str(int(_num(r, "replicate"))), str(int(n)), p, val, -J if J is not None else None])
    lines = _table(["rep", "n", "pi(A)", "log pi(A)/n", "-J(A)"], body)
    for d in meta.get("rate_diagnostics", []):
        lines.append(f"- replicate {d['replicate']}: verdict {d['verdict']}, slope {_fmt(d['slope'])}")
    return lines


def _predictive_section(rows, meta):
    body = [[str(int(_num(r, "replicate"))), str(int(_num(r, "n"))), _num(r, "x"), _num(r, "hellinger2"),
             _num(r, "tv")] for r in rows]
    return _table(["rep", "n", "x", "rho_H^2", "rho_TV"], body)


def _sieve_section(rows, meta):
    body = [[str(int(_num(r, "n"))), _num(r, "complement_mass"), _num(r, "ci_hi"),
             _num(r, "target_exp_minus_beta_n")] for r in rows]
    lines = _table(["n", "pi(G_n^c)", "upper CI", "exp(-beta n)"], body)
    if meta:
        lines.append(f"- fitted log-decay slope: {_fmt(meta.get('log_decay_slope'))}")
    return lines


def _bounds_section(rows, meta):
    body = [[r["check"], _num(r, "t"), _num(r, "empirical"), _num(r, "ci_hi"), _num(r, "bound"), r["verdict"],
             r["role"]] for r in rows]
    return _table(["check", "t", "empirical", "upper CI", "bound", "verdict", "role"], body)


SECTIONS = [
    ("KL rates: closed form vs oracle", "kl-rate", "kl_rate.csv", "kl_rate.json",
     ("case", "model", "h", "h_oracle", "abs_diff", "within"), _kl_section),
    ("Equipartition: deviations vs n", "equipartition", "equipartition.csv", "equipartition.json",
     ("model", "n", "deviation"), _equipartition_section),
    ("Posterior mass of N_eps_n vs n", "posterior", "posterior.csv", "posterior.json",
     ("replicate", "n", "eps_n", "pi_N_eps_n", "pi_N_fixed", "posterior_mean_h"), _posterior_mass_section),
    ("Rate: log pi(A|Y_n)/n vs -J(A)", "posterior", "posterior.csv", "posterior.json",
     ("replicate", "n", "pi_A", "ess_A"), _rate_section),
    ("Predictive distance vs n", "predictive", "predictive.csv", "predictive.json",
     ("replicate", "n", "x", "hellinger2", "tv"), _predictive_section),
    ("Sieve complement mass vs bound", "sieve-mass", "sieve_mass.csv", "sieve_mass.json",
     ("n", "complement_mass", "ci_hi", "target_exp_minus_beta_n"), _sieve_section),
    ("Concentration-bound checks", "bounds", "bounds.csv", "bounds.json",
     ("check", "t", "empirical", "ci_hi", "bound", "verdict", "role"), _bounds_section),
]


def emit_report(manifest, out_path=None) -> str:
    """Write ``report.md`` next to the manifest and return its text.

    ``manifest`` is a :class:`RunManifest` or a run directory.
    """
    man = manifest if isinstance(manifest, RunManifest) else RunManifest.load(manifest)
    lines = ["# Run report", ""]
    cfg = man.config
    lines.append(f"model `{cfg.get('model')}`, truth `{cfg.get('truth')}`, master seed {cfg.get('master_seed')}, "
                 f"code version {man.code_version}")
    lines.append("")
    for title, stage, csv_name, json_name, required, render in SECTIONS:
        lines += [f"## {title}", ""]
        st = man.stages.get(stage)
        path = man.artifact_path(stage, csv_name)
        if st is None or st.get("status") != "completed" or path is None:
            status = "not run" if st is None else f"not run ({st.get('status')}: {st.get('error', '')})"
            lines += [f"_{status}_", ""]
            continue
        if not path.exists():
            lines += [f"_not run (artifact {csv_name} missing)_", ""]
            continue
        try:
            rows = _read_csv(path, required)
            lines += render(rows, _load_json(man, stage, json_name))
        except ArtifactError as exc:
            lines.append(f"**parse error in {csv_name}:** {exc}")
        lines.append("")
    text = "\n".join(lines)
    atomic_write(Path(out_path) if out_path else Path(man.out_dir) / "report.md", text.encode("utf-8"))
    return text
