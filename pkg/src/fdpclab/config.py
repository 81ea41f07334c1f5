"""JSON experiment configuration: schema validation and object construction.

A config describes one channel instance plus Monte Carlo settings.  It can
start from a named reference channel (``ref``) and override fields, or
specify everything explicitly.  Unknown fields are rejected.
"""

import hashlib
import json

import jsonschema
import numpy as np

from .errors import ConfigurationError
from .lab import default_quantized_csit, reference_channel
from .model import (COMPLEX, REAL, ChannelSpec, CorrelatedRayleigh, Dimensions,
                    IidComplexGaussian, IidRealGaussian, IidUniformComplex,
                    NoCsit, PerfectCsit, QuantizedCsit, random_psd,
                    scaled_identity)

_MATRIX = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "ref": {"type": "string"},
        "t": {"type": "integer", "minimum": 1},
        "r": {"type": "integer", "minimum": 1},
        "m": {"type": "integer", "minimum": 1},
        "snr_db": {"type": "number"},
        "q_over_p": {"type": "number", "minimum": 0},
        "n": {"type": "number", "exclusiveMinimum": 0},
        "field": {"enum": [REAL, COMPLEX]},
        "fading": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "variant": {"enum": ["iid_real", "iid_complex", "uniform_complex",
                                     "correlated_rayleigh"]},
                "r_rx": _MATRIX,
                "r_tx": _MATRIX,
                "rho_rx": {"type": "number"},
                "rho_tx": {"type": "number"},
            },
            "required": ["variant"],
        },
        "csit": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "variant": {"enum": ["perfect", "none", "quantized"]},
                "bits": {"type": "integer", "minimum": 1, "maximum": 6},
                "step": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["variant"],
        },
        "sigma_s": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["zero", "scaled_identity", "random_rank", "matrix"]},
                "rank": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "matrix": _MATRIX,
            },
            "required": ["kind"],
        },
        "sigma_x": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["scaled_identity", "factor"]},
                "matrix": _MATRIX,
            },
            "required": ["kind"],
        },
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_outer": {"type": "integer", "minimum": 1},
                "n_inner": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
            },
        },
    },
}

DEFAULT_MC = {"n_outer": 200, "n_inner": 20000, "seed": 0}


def validate_config(raw):
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigurationError(f"invalid configuration: {exc.message}") from None
    return raw


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read configuration {path}: {exc}") from None
    return validate_config(raw)


def config_hash(raw):
    """Short provenance hash of the resolved configuration."""
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def _fading_from_config(cfg, t, r):
    variant = cfg["variant"]
    if variant == "iid_real":
        return IidRealGaussian()
    if variant == "iid_complex":
        return IidComplexGaussian()
    if variant == "uniform_complex":
        return IidUniformComplex()
    if variant == "correlated_rayleigh":
        def corr(n, mat_key, rho_key):
            if mat_key in cfg:
                return np.asarray(cfg[mat_key], dtype=complex)
            if rho_key in cfg:
                rho = cfg[rho_key]
                idx = np.arange(n)
                return (rho ** np.abs(idx[:, None] - idx[None, :])).astype(complex)
            return np.eye(n, dtype=complex)

        return CorrelatedRayleigh(r_rx=corr(r, "r_rx", "rho_rx"),
                                  r_tx=corr(t, "r_tx", "rho_tx"))
    raise ConfigurationError(f"unknown fading variant {variant!r}")


def _csit_from_config(cfg, model):
    variant = cfg["variant"]
    if variant == "perfect":
        return PerfectCsit()
    if variant == "none":
        return NoCsit()
    if variant == "quantized":
        bits = cfg.get("bits", 1)
        if "step" in cfg:
            return QuantizedCsit(bits=bits, step=cfg["step"])
        return default_quantized_csit(model, bits)
    raise ConfigurationError(f"unknown CSIT variant {variant!r}")


def _sigma_s_from_config(cfg, t, q, field):
    kind = cfg["kind"]
    if q == 0.0:
        return np.zeros((t, t))  # q_over_p = 0 forces zero interference
    if kind == "zero":
        raise ConfigurationError("sigma_s kind 'zero' requires q_over_p = 0")
    if kind == "scaled_identity":
        return scaled_identity(t, q, field)
    if kind == "random_rank":
        if "rank" not in cfg or "seed" not in cfg:
            raise ConfigurationError("sigma_s random_rank needs 'rank' and 'seed'")
        return random_psd(t, cfg["rank"], cfg["seed"], q, field)
    if kind == "matrix":
        mat = np.asarray(cfg["matrix"], dtype=float)
        tr = float(np.trace(mat))
        if tr <= 0:
            raise ConfigurationError("sigma_s matrix must have positive trace")
        return mat * (q / tr)
    raise ConfigurationError(f"unknown sigma_s kind {kind!r}")


def _factor_from_config(cfg, t, m, p, field):
    kind = cfg["kind"]
    if kind == "scaled_identity":
        return np.sqrt(p / m) * np.eye(t, m)
    if kind == "factor":
        mat = np.asarray(cfg["matrix"], dtype=float)
        if mat.shape != (t, m):
            raise ConfigurationError(f"sigma_x factor has shape {mat.shape}, expected {(t, m)}")
        tr = float(np.trace(mat @ mat.T))
        if tr <= 0:
            raise ConfigurationError("sigma_x factor must have positive power")
        return mat * np.sqrt(p / tr)
    raise ConfigurationError(f"unknown sigma_x kind {kind!r}")


class Experiment:
    """Resolved configuration: base spec, fading model, CSIT, MC settings."""

    def __init__(self, base_spec, model, csit, q_over_p, snr_db, mc, raw):
        self.base_spec = base_spec
        self.model = model
        self.csit = csit
        self.q_over_p = q_over_p
        self.snr_db = snr_db
        self.mc = mc
        self.raw = raw

    @property
    def hash(self):
        return config_hash(self.raw)

    def spec_at(self, snr_db=None):
        snr = self.snr_db if snr_db is None else snr_db
        return self.base_spec.at_snr_db(snr, self.q_over_p)


def build_experiment(raw, overrides=None):
    """Turn a validated config dict (plus CLI overrides) into objects."""
    raw = dict(raw)
    overrides = overrides or {}
    for key, val in overrides.items():
        if val is None:
            continue
        if key in ("n_outer", "n_inner", "seed"):
            raw.setdefault("mc", {})
            raw["mc"] = dict(raw.get("mc", {}))
            raw["mc"][key] = val
        else:
            raw[key] = val
    validate_config(raw)

    mc = dict(DEFAULT_MC)
    mc.update(raw.get("mc", {}))

    if "ref" in raw:
        ref = reference_channel(raw["ref"])
        base, model = ref.spec, ref.model
        q_over_p = raw.get("q_over_p", ref.q_over_p)
        snr_db = raw.get("snr_db", 0.0)
        csit_cfg = raw.get("csit", {"variant": "none"})
        csit = _csit_from_config(csit_cfg, model)
        return Experiment(base, model, csit, q_over_p, snr_db, mc, raw)

    required = ("t", "r", "m", "field", "fading")
    missing = [k for k in required if k not in raw]
    if missing:
        raise ConfigurationError(f"configuration missing fields: {', '.join(missing)}")
    t, r, m = raw["t"], raw["r"], raw["m"]
    field = raw["field"]
    n = raw.get("n", float(r))
    q_over_p = raw.get("q_over_p", 0.0)
    snr_db = raw.get("snr_db", 0.0)
    p0 = n  # base spec at 0 dB; rescaled per snr_db downstream
    q0 = q_over_p * p0

    model = _fading_from_config(raw["fading"], t, r)
    if model.field != field:
        raise ConfigurationError(
            f"fading variant {raw['fading']['variant']!r} conflicts with field {field!r}"
        )
    sigma_s = _sigma_s_from_config(raw.get("sigma_s", {"kind": "scaled_identity"}),
                                   t, q0, field)
    T = _factor_from_config(raw.get("sigma_x", {"kind": "scaled_identity"}),
                            t, m, p0, field)
    sigma_z = scaled_identity(r, n, field)
    base = ChannelSpec.create(Dimensions(t, r, m), T=T, sigma_s=sigma_s,
                              sigma_z=sigma_z, field=field)
    csit = _csit_from_config(raw.get("csit", {"variant": "none"}), model)
    return Experiment(base, model, csit, q_over_p, snr_db, mc, raw)
