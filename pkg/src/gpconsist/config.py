"""Experiment configuration: JSON files, presets, validation and object builders."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from importlib import resources

from .domain import truth_catalog
from .kl import SetSpec
from .models import MODEL_NAMES, LinkSpec, make_model
from .posterior import McmcConfig
from .prior import KernelSpec, LogNormalPrior, PriorSpec, SieveSpec

PRESETS = ("smoke", "paper-desk")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class LinkConfig:
    binary_base: str = "logistic-cdf"
    poisson_base: str = "softplus"
    kappa_B: float = 0.05
    kappa_P: float = 0.1


@dataclass
class PriorConfig:
    lengthscale: float = 0.2
    amplitude: float = 1.0
    jitter: float = 1e-9
    sigma_location: float = 0.0
    sigma_scale: float = 1.0


@dataclass
class SieveConfig:
    beta: float = 1.0
    exponent_form: str = "quartic-root"
    includes_sigma_band: bool = False


@dataclass
class EpsConfig:
    c: float = 1.0
    gamma: float = 0.8


@dataclass
class McmcSection:
    iterations: int = 10_000
    burn_in: int = 2_000
    thin: int = 4
    sigma_step: float = 0.3


def _default_cases():
    return [
        {"model": "binary", "theta_mean": 0.25, "truth_mean": 0.5},
        {"model": "poisson", "theta_mean": 2.0, "truth_mean": 1.0},
        {"model": "gaussian", "theta_mean": 0.0, "truth_mean": 0.0, "sigma": 2.0, "sigma0": 1.0},
        {"model": "laplace", "theta_mean": 1.0, "truth_mean": 0.0, "sigma": 1.0, "sigma0": 1.0},
    ]


def _equipartition_cases():
    return [
        {"model": "binary", "theta_mean": 0.25, "truth_mean": 0.5},
        {"model": "poisson", "theta_mean": 2.0, "truth_mean": 1.0},
        {"model": "gaussian", "theta_mean": 0.5, "truth_mean": 0.0, "sigma": 1.5, "sigma0": 1.0},
        {"model": "laplace", "theta_mean": 1.0, "truth_mean": 0.0, "sigma": 1.0, "sigma0": 1.0},
    ]


@dataclass
class KlRateStudy:
    cases: list = field(default_factory=_default_cases)
    random_thetas: int = 20
    panels: int = 8
    order: int = 8


@dataclass
class EquipartitionStudy:
    cases: list = field(default_factory=_equipartition_cases)
    n_values: list = field(default_factory=lambda: [100, 1000, 10000])
    replicates: int = 50


@dataclass
class SieveMassStudy:
    n_values: list = field(default_factory=lambda: list(range(1, 11)))
    draws: int = 10_000


@dataclass
class PosteriorStudy:
    fixed_eps: float = 0.1
    rate_set: str = "h-above(0.2)"
    j_budget: int = 10_000


@dataclass
class PredictiveStudy:
    truth: str = "step-jump"
    x: list = field(default_factory=lambda: [0.25])


@dataclass
class BoundsStudy:
    hoeffding_n: int = 100
    hoeffding_range: float = 1.0
    poisson_lambda: float = 2.0
    poisson_lambda0: float = 1.0
    hanson_wright_n: int = 100
    bernstein_n: int = 100
    bernstein_sigma0: float = 1.0
    samples: int = 100_000
    mgf_samples: int = 200_000


@dataclass
class ExperimentConfig:
    model: str = "binary"
    truth: str = "smooth-sin"
    sigma0: float = 1.0
    dim: int = 1
    covariate_scheme: str = "iid"
    link: LinkConfig = field(default_factory=LinkConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    sieve: SieveConfig = field(default_factory=SieveConfig)
    n_schedule: list = field(default_factory=lambda: [50, 200, 800])
    eps_schedule: EpsConfig = field(default_factory=EpsConfig)
    mcmc: McmcSection = field(default_factory=McmcSection)
    replicates: int = 5
    master_seed: int = 20261016
    output_dir: str = "runs/default"
    kl_rate: KlRateStudy = field(default_factory=KlRateStudy)
    equipartition: EquipartitionStudy = field(default_factory=EquipartitionStudy)
    sieve_mass: SieveMassStudy = field(default_factory=SieveMassStudy)
    posterior: PosteriorStudy = field(default_factory=PosteriorStudy)
    predictive: PredictiveStudy = field(default_factory=PredictiveStudy)
    bounds: BoundsStudy = field(default_factory=BoundsStudy)

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        cfg = _build(cls, data, "")
        cfg.validate()
        return cfg

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        if self.model not in MODEL_NAMES:
            raise ConfigError("model", f"unknown model {self.model!r}; valid: {', '.join(MODEL_NAMES)}")
        try:
            truth_catalog(self.truth, self.dim)
        except ValueError as exc:
            raise ConfigError("truth", str(exc)) from None
        if self.dim < 1:
            raise ConfigError("dim", "must be >= 1")
        if self.sigma0 <= 0:
            raise ConfigError("sigma0", "must be positive")
        if self.covariate_scheme not in ("iid", "fixed-grid"):
            raise ConfigError("covariate_scheme", "must be 'iid' or 'fixed-grid'")
        if not self.n_schedule:
            raise ConfigError("n_schedule", "n_schedule must be nonempty")
        if any(int(n) < 1 for n in self.n_schedule) or sorted(self.n_schedule) != list(self.n_schedule):
            raise ConfigError("n_schedule", "must be increasing positive integers")
        if not 0 < self.eps_schedule.gamma < 1:
            raise ConfigError("eps_schedule.gamma", "must lie in (0, 1) so that eps_n -> 0 and n eps_n -> inf")
        if self.eps_schedule.c <= 0:
            raise ConfigError("eps_schedule.c", "must be positive")
        if self.replicates < 1:
            raise ConfigError("replicates", "must be >= 1")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigError("master_seed", "must be an unsigned 64-bit integer")
        for name, builder in (("link", self.link_spec), ("prior", self.prior_spec), ("sieve", self.sieve_spec),
                              ("mcmc", self.mcmc_config)):
            try:
                builder()
            except ValueError as exc:
                raise ConfigError(name, str(exc)) from None
        for i, case in enumerate(self.kl_rate.cases + self.equipartition.cases):
            if case.get("model") not in MODEL_NAMES:
                raise ConfigError(f"cases[{i}].model", f"unknown model {case.get('model')!r}")
        if not self.equipartition.n_values or not self.sieve_mass.n_values:
            raise ConfigError("n_values", "study n_values must be nonempty")
        try:
            truth_catalog(self.predictive.truth, self.dim)
        except ValueError as exc:
            raise ConfigError("predictive.truth", str(exc)) from None
        try:
            SetSpec.parse(self.posterior.rate_set)
        except ValueError as exc:
            raise ConfigError("posterior.rate_set", str(exc)) from None
        if self.sieve_mass.draws < 1000:
            raise ConfigError("sieve_mass.draws", "must be >= 1000")

    # -- builders ----------------------------------------------------------

    def link_spec(self, model: str | None = None) -> LinkSpec | None:
        model = model or self.model
        if model == "binary":
            return LinkSpec(self.link.binary_base, "binary", self.link.kappa_B, self.link.kappa_P)
        if model == "poisson":
            return LinkSpec(self.link.poisson_base, "poisson", self.link.kappa_B, self.link.kappa_P)
        return None

    def observation_model(self, model: str | None = None):
        model = model or self.model
        return make_model(model, self.link_spec(model))

    def prior_spec(self, model: str | None = None) -> PriorSpec:
        model = model or self.model
        k = KernelSpec(self.prior.lengthscale, self.prior.amplitude, self.prior.jitter)
        sig = LogNormalPrior(self.prior.sigma_location, self.prior.sigma_scale) if model in ("gaussian", "laplace") else None
        return PriorSpec(k, sig)

    def sieve_spec(self) -> SieveSpec:
        return SieveSpec(self.sieve.beta, self.sieve.exponent_form, self.sieve.includes_sigma_band)

    def mcmc_config(self, extra_sites=()) -> McmcConfig:
        m = self.mcmc
        return McmcConfig(m.iterations, m.burn_in, m.thin, m.sigma_step, extra_sites=tuple(extra_sites))

    def truth_spec(self, name: str | None = None, model: str | None = None):
        model = model or self.model
        sigma0 = self.sigma0 if model in ("gaussian", "laplace") else None
        return truth_catalog(name or self.truth, self.dim, sigma0)


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigError(prefix or "<root>", "expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(prefix + sorted(unknown)[0], "unknown field")
    kwargs = {}
    defaults = cls()
    for name, f in known.items():
        if name not in data:
            continue
        value = data[name]
        current = getattr(defaults, name)
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{prefix}{name}.")
        else:
            kwargs[name] = _coerce(value, current, prefix + name)
    return cls(**kwargs)


def _coerce(value, default, name):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(name, "expected a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, "expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, "expected a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(name, "expected a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(name, "expected a list")
        return copy.deepcopy(value)
    return value


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; valid: {', '.join(PRESETS)}")
    text = resources.files("gpconsist").joinpath("presets", f"{name}.json").read_text()
    return json.loads(text)


def load_config(path=None, preset: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Merge preset, then file, then flag overrides (later wins)."""
    data: dict = {}
    if preset:
        data = _merge(data, load_preset(preset))
    if path:
        try:
            with open(path) as fh:
                data = _merge(data, json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"{path}: invalid JSON ({exc})") from None
        except OSError as exc:
            raise ConfigError("config", f"{path}: {exc.strerror}") from None
    if overrides:
        data = _merge(data, overrides)
    return ExperimentConfig.from_dict(data)


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out
