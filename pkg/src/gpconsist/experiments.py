"""Study runners: each study writes CSV and JSON artifacts and records itself in a manifest.

Artifacts depend only on the configuration (and master seed); wall-clock
times live in ``manifest.json`` alone, so repeated runs give byte-identical
CSV files.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import check_bernstein_laplace, check_hanson_wright, check_hoeffding, check_poisson_subexponential
from .config import ExperimentConfig
from .domain import CovariateSpace, FieldFunction, Quadrature, TruthSpec, sample_covariates, uniform_axes
from .equipartition import equipartition_trace
from .kl import SetSpec, eps_schedule, estimate_h_Theta, j_rate, kl_rate, kl_rate_oracle
from .models import Binary, Poisson, Theta, simulate_responses
from .posterior import (
    UNDERFLOW,
    concentration_rate_diagnostic,
    hellinger_tv,
    posterior_predictive,
    posterior_set_probability,
    run_mcmc,
    true_predictive,
)
from .prior import estimate_sieve_complement_mass, fit_log_decay_slope, sample_gp_path
from .rng import RngContract

STUDIES = ("kl-rate", "equipartition", "sieve-mass", "posterior", "predictive", "bounds")
MANIFEST = "manifest.json"
# floating-point evaluation error allowed for a closed-form rate
ROUNDOFF = 64 * np.finfo(float).eps


class StudyError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# artifact io


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if v is None:
        return ""
    return str(v)


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_value(v) for v in row])
    return buf.getvalue().encode("utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def json_bytes(obj) -> bytes:
    return (json.dumps(_jsonable(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    out_dir: Path
    config: dict
    code_version: str = __version__
    stages: dict = field(default_factory=dict)

    @property
    def path(self) -> Path:
        return Path(self.out_dir) / MANIFEST

    def experiment_config(self) -> ExperimentConfig:
        return ExperimentConfig.from_dict(self.config)

    def artifact_path(self, stage: str, name: str) -> Path | None:
        st = self.stages.get(stage)
        if not st or name not in st.get("artifacts", {}):
            return None
        return Path(self.out_dir) / name

    def to_dict(self) -> dict:
        return {"config": self.config, "code_version": self.code_version, "stages": self.stages}

    def save(self) -> None:
        atomic_write(self.path, json_bytes(self.to_dict()))

    @classmethod
    def load(cls, out_dir) -> "RunManifest":
        out_dir = Path(out_dir)
        if out_dir.is_file():
            out_dir = out_dir.parent
        data = json.loads((out_dir / MANIFEST).read_text(encoding="utf-8"))
        return cls(out_dir, data["config"], data.get("code_version", ""), data.get("stages", {}))


def _open_manifest(config: ExperimentConfig, out_dir: Path) -> RunManifest:
    if (out_dir / MANIFEST).exists():
        try:
            man = RunManifest.load(out_dir)
        except (OSError, ValueError, KeyError):
            man = RunManifest(out_dir, config.to_dict())
        if man.config != config.to_dict():
            # a different configuration invalidates earlier stages
            man = RunManifest(out_dir, config.to_dict())
        return man
    return RunManifest(out_dir, config.to_dict())


def run_experiment(config: ExperimentConfig, study: str, out_dir=None) -> RunManifest:
    """Run one study, write its artifacts under ``out_dir`` and update the manifest.

    A failing study is recorded with status ``failed`` (earlier stages are
    kept) and re-raised as :class:`StudyError`.
    """
    if study not in STUDIES:
        raise ValueError(f"unknown study {study!r}; valid: {', '.join(STUDIES)}")
    config.validate()
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = _open_manifest(config, out)
    rng = RngContract(int(config.master_seed)).child(study)
    t0 = time.perf_counter()
    try:
        artifacts = _RUNNERS[study](config, rng)
    except Exception as exc:
        man.stages[study] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}",
                             "wall_clock_s": time.perf_counter() - t0, "artifacts": {}}
        man.save()
        raise StudyError(f"{study} failed: {exc}") from exc
    hashes = {}
    for name, data in artifacts.items():
        atomic_write(out / name, data)
        hashes[name] = hashlib.sha256(data).hexdigest()
    man.stages[study] = {"status": "completed", "artifacts": hashes, "wall_clock_s": time.perf_counter() - t0}
    man.save()
    return man


# ---------------------------------------------------------------------------
# studies


def _constant_theta(model, case: dict, key: str, sigma_key: str, dim: int):
    """Constant field whose mean parameter (p or lambda) or location equals ``case[key]``."""
    mean = float(case[key])
    eta = float(model.link.inverse(mean)) if isinstance(model, (Binary, Poisson)) else mean
    sigma = case.get(sigma_key) if model.needs_sigma else None
    return Theta(FieldFunction.constant(eta, dim), None if sigma is None else float(sigma))


def _constant_truth(config, model, case: dict):
    th = _constant_theta(model, case, "truth_mean", "sigma0", config.dim)
    return TruthSpec(f"constant({th.eta.values.flat[0]:.6g})", th.eta, th.sigma, True, 0.0)


def _study_kl_rate(config: ExperimentConfig, rng: RngContract) -> dict:
    st = config.kl_rate
    quad = Quadrature(st.panels, st.order)
    header = ["case", "model", "kind", "theta_mean", "truth_mean", "sigma", "sigma0",
              "h", "h_err", "h_oracle", "oracle_err", "abs_diff", "tolerance", "within"]
    rows = []

    def record(case_id, name, kind, tm, t0m, theta, truth, model):
        est = kl_rate(model, theta, truth, quad)
        orc = kl_rate_oracle(model, theta, truth, quad)
        tol = 3 * (est.err + orc.err + ROUNDOFF * (abs(est.value) + 1))
        diff = abs(est.value - orc.value)
        rows.append([case_id, name, kind, tm, t0m, theta.sigma, truth.sigma0,
                     est.value, est.err, orc.value, orc.err, diff, tol, diff <= tol])

    for i, case in enumerate(st.cases):
        model = config.observation_model(case["model"])
        theta = _constant_theta(model, case, "theta_mean", "sigma", config.dim)
        truth = _constant_truth(config, model, case)
        record(f"const-{i}", model.name, "constant", case["theta_mean"], case["truth_mean"], theta, truth, model)
    for name in ("binary", "poisson", "gaussian", "laplace"):
        model = config.observation_model(name)
        prior = config.prior_spec(name)
        truth = config.truth_spec(model=name)
        for j in range(st.random_thetas):
            gen = rng.child("random", name, j).generator()
            eta = sample_gp_path(prior, uniform_axes(config.dim), gen, config.dim)
            sigma = float(prior.sigma_prior.sample(gen)) if model.needs_sigma else None
            record(f"random-{j}", name, "gp-draw", None, None, Theta(eta, sigma), truth, model)
    summary = {
        "quadrature": {"panels": st.panels, "order": st.order},
        "all_within_tolerance": all(r[-1] for r in rows),
        "max_abs_diff": max(r[11] for r in rows),
    }
    return {"kl_rate.csv": csv_bytes(header, rows), "kl_rate.json": json_bytes(summary)}


def _study_equipartition(config: ExperimentConfig, rng: RngContract) -> dict:
    st = config.equipartition
    rows, summary = [], {}
    for i, case in enumerate(st.cases):
        model = config.observation_model(case["model"])
        theta = _constant_theta(model, case, "theta_mean", "sigma", config.dim)
        truth = _constant_truth(config, model, case)
        trace = equipartition_trace(model, theta, truth, st.n_values, st.replicates, rng.child(i, model.name),
                                    config.covariate_scheme)
        rows.extend(trace.rows())
        summary[model.name] = {"h": trace.h, "n_values": list(trace.n_values),
                               "median_abs_deviation": trace.medians(), "loglog_slope": trace.slope()}
    header = ["model", "n", "replicate", "deviation"]
    return {"equipartition.csv": csv_bytes(header, rows), "equipartition.json": json_bytes(summary)}


def _study_sieve_mass(config: ExperimentConfig, rng: RngContract) -> dict:
    st = config.sieve_mass
    sieve = config.sieve_spec()
    prior = config.prior_spec()
    ns = [int(n) for n in st.n_values]
    est = estimate_sieve_complement_mass(prior, sieve, ns, st.draws, rng.child("draws"), config.dim)
    probs = [p for p, _ in est]
    rows = [[n, p, lo, hi, float(sieve.threshold(n)), math.exp(-sieve.beta * n)]
            for n, (p, (lo, hi)) in zip(ns, est)]
    summary = {
        "draws": st.draws,
        "non_increasing": bool(all(b <= a for a, b in zip(probs, probs[1:]))),
        "min_upper_ci": min(hi for _, (_, hi) in est),
        "log_decay_slope": fit_log_decay_slope(ns, probs),
        "beta": sieve.beta,
    }
    header = ["n", "complement_mass", "ci_lo", "ci_hi", "threshold", "target_exp_minus_beta_n"]
    return {"sieve_mass.csv": csv_bytes(header, rows), "sieve_mass.json": json_bytes(summary)}


def _nested_data(config, model, truth, rng: RngContract, rep: int):
    n_max = max(config.n_schedule)
    gen = rng.child("data", rep).generator()
    xs = sample_covariates(n_max, config.covariate_scheme, CovariateSpace(config.dim), gen)
    return simulate_responses(model, truth, xs, gen)


def _study_posterior(config: ExperimentConfig, rng: RngContract) -> dict:
    st = config.posterior
    model = config.observation_model()
    prior = config.prior_spec()
    truth = config.truth_spec()
    quad = Quadrature()
    hT = estimate_h_Theta(model, prior, truth, st.j_budget, rng.child("h-Theta"), quad)
    rate_set = SetSpec.parse(st.rate_set)
    J = j_rate(rate_set, hT.value, model, prior, truth, st.j_budget, rng.child("J"), quad)
    ns = list(config.n_schedule)
    eps = eps_schedule(ns, config.eps_schedule.c, config.eps_schedule.gamma)
    fixed = SetSpec("N-epsilon", (st.fixed_eps,))
    rows, diagnostics = [], []
    for r in range(config.replicates):
        full = _nested_data(config, model, truth, rng, r)
        probs, floors = [], []
        for n, e in zip(ns, eps):
            samples = run_mcmc(model, full.head(n), prior, config.mcmc_config(), rng.child("mcmc", r, n))
            h = samples.h_values(truth)
            pe = posterior_set_probability(samples, SetSpec("N-epsilon", (float(e),)), hT.value, truth)
            pf = posterior_set_probability(samples, fixed, hT.value, truth)
            pa = posterior_set_probability(samples, rate_set, hT.value, truth)
            probs.append(pa.prob)
            floors.append(1.0 / pa.ess)
            rows.append([r, n, float(e), pe.prob, pe.mcse, pf.prob, pf.mcse, pa.prob, pa.mcse, pa.ess, pa.resolved,
                         float(np.mean(h)), samples.stats.get("sigma_acceptance")])
        diag = concentration_rate_diagnostic(probs, ns, J, floors)
        diagnostics.append({"replicate": r, "slope": diag.slope, "verdict": diag.verdict, "band": list(diag.band)})
    header = ["replicate", "n", "eps_n", "pi_N_eps_n", "pi_N_eps_n_mcse", "pi_N_fixed", "pi_N_fixed_mcse",
              "pi_A", "pi_A_mcse", "ess_A", "pi_A_resolved", "posterior_mean_h", "sigma_acceptance"]
    by_rep = {}
    for row in rows:
        by_rep.setdefault(row[0], []).append(row)
    n_rep = len(by_rep)
    summary = {
        "h_Theta": hT.value,
        "h_Theta_certificate": hT.certificate,
        "rate_set": str(rate_set),
        "J": J,
        "fixed_eps": st.fixed_eps,
        "rate_diagnostics": diagnostics,
        "frac_fixed_mass_increases": sum(rs[-1][5] > rs[0][5] for rs in by_rep.values()) / n_rep,
        "frac_mean_h_decreasing": sum(
            all(b[11] < a[11] for a, b in zip(rs, rs[1:])) for rs in by_rep.values()) / n_rep,
        "underflow_message": UNDERFLOW,
    }
    return {"posterior.csv": csv_bytes(header, rows), "posterior.json": json_bytes(summary)}


def _study_predictive(config: ExperimentConfig, rng: RngContract) -> dict:
    st = config.predictive
    model = config.observation_model()
    prior = config.prior_spec()
    truth = config.truth_spec(st.truth)
    rows = []
    for r in range(config.replicates):
        full = _nested_data(config, model, truth, rng, r)
        for n in config.n_schedule:
            samples = run_mcmc(model, full.head(n), prior, config.mcmc_config(), rng.child("mcmc", r, n))
            for x in st.x:
                pred = posterior_predictive(samples, model, x)
                best = true_predictive(model, truth, x, like=pred)
                h2, tv = hellinger_tv(pred, best)
                mean_pred = float(np.arange(len(pred.probs)) @ pred.probs) if pred.kind != "density" else None
                identity = h2 <= tv + 1e-10 and tv <= math.sqrt(2 * h2) + 1e-10
                rows.append([r, n, float(np.atleast_1d(x)[0]), h2, tv, identity, mean_pred])
    header = ["replicate", "n", "x", "hellinger2", "tv", "h2_le_tv_le_sqrt2h2", "predictive_mean"]
    n_lo, n_hi = min(config.n_schedule), max(config.n_schedule)
    decreases = []
    for r in range(config.replicates):
        for x in st.x:
            a = [row[3] for row in rows if row[0] == r and row[1] == n_lo and row[2] == float(np.atleast_1d(x)[0])]
            b = [row[3] for row in rows if row[0] == r and row[1] == n_hi and row[2] == float(np.atleast_1d(x)[0])]
            decreases.append(b[0] < a[0])
    summary = {
        "truth": truth.name,
        "predictive": "covariate-conditional law at fixed x, compared with the true conditional law",
        "frac_hellinger_decreasing": sum(decreases) / len(decreases),
        "max_hellinger_at_largest_n": max(row[3] for row in rows if row[1] == n_hi),
        "identity_holds": all(row[5] for row in rows),
    }
    return {"predictive.csv": csv_bytes(header, rows), "predictive.json": json_bytes(summary)}


def _study_bounds(config: ExperimentConfig, rng: RngContract) -> dict:
    st = config.bounds
    reports = [
        check_hoeffding(st.hoeffding_range, st.hoeffding_n, samples=st.samples, rng=rng.child("hoeffding")),
        check_poisson_subexponential((st.poisson_lambda, st.poisson_lambda0), samples=st.mgf_samples,
                                     rng=rng.child("poisson")),
        check_hanson_wright(st.hanson_wright_n, samples=st.samples, rng=rng.child("hanson-wright")),
        check_bernstein_laplace(st.bernstein_sigma0, st.bernstein_n, samples=st.samples, rng=rng.child("bernstein")),
    ]
    header = ["check", "t", "empirical", "ci_hi", "bound", "verdict", "role"]
    rows = [row for rep in reports for row in rep.rows()]
    summary = {
        rep.kind: {"validation_passed": rep.validation_passed(), "constant": rep.constant, "params": rep.params,
                   **{k: v for k, v in rep.extra.items() if k != "se"}}
        for rep in reports
    }
    return {"bounds.csv": csv_bytes(header, rows), "bounds.json": json_bytes(summary)}


_RUNNERS = {
    "kl-rate": _study_kl_rate,
    "equipartition": _study_equipartition,
    "sieve-mass": _study_sieve_mass,
    "posterior": _study_posterior,
    "predictive": _study_predictive,
    "bounds": _study_bounds,
}
