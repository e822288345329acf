"""Experiment documents: JSON schema validation and mapping onto domain objects.

All quantities are SI base units.  Unknown keys are rejected.  Omitted
fields fall back to the dataclass defaults.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any

import jsonschema

from .core import ConfigError, EmulatorConfig
from .devices import CcciiParams, MosPair, OtaParams, cccii_rx

log = logging.getLogger(__name__)

EXPERIMENTS = ("run", "sweep", "mc", "am", "compose")

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_NUM = {"type": "number"}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required)}


_OTA = _obj({"k": _POS, "Vth": _NUM, "Vss": {"type": "number", "exclusiveMaximum": 0},
             "Vdd": _POS, "omega_a": _POS, "tau": _NONNEG, "Ro": _POS, "Co": _NONNEG,
             "Ci": _NONNEG})
_GAIN = {"type": "number", "exclusiveMinimum": 0, "maximum": 1.1}
_CONV_FIELDS = {"Lx": _NONNEG, "Ry": _POS, "Cy": _NONNEG, "Rz": _POS, "Cz": _NONNEG,
                "beta0": _GAIN, "alpha0": _GAIN, "omega_beta": _POS, "omega_alpha": _POS}
_MOS = _obj({"mu_cox_n": _POS, "aspect_n": _POS, "mu_cox_p": _POS, "aspect_p": _POS})

EMULATOR_SCHEMA = _obj({
    "topology": {"enum": ["grounded", "floating"]},
    "mode": {"enum": ["incremental", "decremental"]},
    "fidelity": {"enum": ["simplified", "full_ideal", "non_ideal"]},
    "R1": _POS, "C1": _POS, "C2": _POS,
    "Vb3": _NUM, "Vb4": _NUM, "Ib": _POS,
    "ota": _OTA,
    "ccii1": _obj({"Rx": _NONNEG, **_CONV_FIELDS}),
    "cccii2": _obj({"Rx": _NONNEG, "mos": _MOS, **_CONV_FIELDS}),
})

_TONE = _obj({"amplitude": _NONNEG, "frequency": _POS, "phase": _NUM}, ["amplitude", "frequency"])

SOURCE_SCHEMA = _obj({
    "kind": {"enum": ["sine", "multitone", "samples"]},
    "amplitude": _NONNEG, "frequency": _POS, "phase": _NUM,
    "tones": {"type": "array", "items": _TONE, "minItems": 1},
    "dt": _POS,
    "values": {"type": "array", "items": _NUM, "minItems": 2},
    "dc_flux_removal": {"type": "boolean"},
})

_SIGMA_PAIR = {"type": "array", "items": _NONNEG, "minItems": 2, "maxItems": 2}
_BIQUAD = _obj({"f0": _POS, "Q": _POS})

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "emulator": EMULATOR_SCHEMA,
        "source": SOURCE_SCHEMA,
        "sim": _obj({"t_end": _POS, "dt": _POS,
                     "steady_periods": {"type": "integer", "minimum": 1}}),
        "run": _obj({}),
        "sweep": _obj({
            "frequencies": {"type": "array", "items": _POS, "minItems": 3},
            "hold": {"enum": ["C1f_const", "C_fixed"]},
            "c1f_product": _POS,
        }, ["frequencies"]),
        "mc": _obj({
            "n_runs": {"type": "integer", "minimum": 1},
            "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
            "threshold": _POS,
            "deviations": _obj({k: _SIGMA_PAIR for k in
                                ("tox", "Vth", "L", "W", "Cjn", "Cjswn", "Cjswgn", "Cgon", "hdifn")}),
            "geometry": _obj({"tox": _POS, "W": _POS, "L": _POS}),
        }),
        "am": _obj({
            "Am": _NONNEG, "fm": _POS, "Ac": _NONNEG, "fc": _POS, "A_L": _NONNEG,
            "lo_phase": _NUM, "bpf": _BIQUAD, "lpf": _BIQUAD,
            "n_periods": {"type": "integer", "minimum": 1},
        }),
        "compose": _obj({
            "wiring": {"enum": ["parallel_same_polarity", "series_same_polarity"]},
            "second": EMULATOR_SCHEMA,
        }, ["wiring"]),
    },
    "required": ["emulator"],
    "oneOf": [{"required": [e]} for e in EXPERIMENTS],
}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


class SchemaError(ConfigError):
    """One or more schema violations; ``problems`` holds (path, message)."""

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        super().__init__("; ".join(f"{p}: {m}" for p, m in problems))


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else "/"


def _message(err: jsonschema.ValidationError) -> str:
    v = err.validator
    if v == "exclusiveMinimum":
        return f"must be > {err.validator_value}"
    if v == "minimum":
        return f"must be >= {err.validator_value}"
    if v == "exclusiveMaximum":
        return f"must be < {err.validator_value}"
    if v == "maximum":
        return f"must be <= {err.validator_value}"
    if v == "type":
        return f"must be of type {err.validator_value}"
    if v == "enum":
        return "must be one of " + ", ".join(map(str, err.validator_value))
    if v == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        return "unknown key(s): " + ", ".join(extra)
    if v == "required":
        return err.message
    if v == "oneOf" and not err.path:
        present = [e for e in EXPERIMENTS if e in err.instance]
        return f"exactly one experiment block ({', '.join(EXPERIMENTS)}) is required, found {present or 'none'}"
    return err.message


def validate(doc: Any) -> None:
    errs = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: (list(map(str, e.path)), e.validator))
    if errs:
        raise SchemaError([(_pointer(e.path), _message(e)) for e in errs])


@dataclass
class ExperimentConfig:
    doc: dict
    experiment: str
    emulator: EmulatorConfig
    source: Any = None
    sim: dict = field(default_factory=dict)
    block: dict = field(default_factory=dict)
    ignored: tuple = ()

    @property
    def config_hash(self) -> str:
        return config_hash(self.doc)


def canonical(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(doc: dict) -> str:
    return hashlib.sha256(canonical(doc).encode()).hexdigest()


def build_emulator(d: dict) -> EmulatorConfig:
    base = EmulatorConfig()
    ota_kw = dict(d.get("ota", {}))
    ota3 = replace(base.ota3, **ota_kw, Vb=d.get("Vb3", base.ota3.Vb))
    ota4 = replace(base.ota4, **ota_kw, Vb=d.get("Vb4", base.ota4.Vb))
    ccii1 = replace(base.ccii1, **d.get("ccii1", {}))
    c2 = dict(d.get("cccii2", {}))
    mos = MosPair(**c2.pop("mos", {}))
    rx2 = c2.pop("Rx", None)
    if rx2 is None:
        rx2 = cccii_rx(d.get("Ib", 20e-6), mos)
    elif "Ib" in d:
        log.warning("cccii2.Rx given explicitly; Ib is ignored")
    cccii2 = CcciiParams(Rx=rx2, **c2)
    kw = {k: d[k] for k in ("topology", "mode", "fidelity", "R1", "C1", "C2") if k in d}
    return EmulatorConfig(ota3=ota3, ota4=ota4, ccii1=ccii1, cccii2=cccii2, **kw)


def build_source(d: dict):
    from .engine import SourceSpec

    kind = d.get("kind", "sine")
    flag = d.get("dc_flux_removal", True)
    if kind == "sine":
        if "tones" in d or "values" in d:
            raise ConfigError("/source: sine takes amplitude/frequency/phase only")
        if "frequency" not in d:
            raise ConfigError("/source/frequency: required for a sine source")
        return SourceSpec.sine(d.get("amplitude", 0.14), d["frequency"], d.get("phase", 0.0),
                               dc_flux_removal=flag)
    if kind == "multitone":
        if "tones" not in d:
            raise ConfigError("/source/tones: required for a multitone source")
        tones = [(t["amplitude"], t["frequency"], t.get("phase", 0.0)) for t in d["tones"]]
        return SourceSpec.multitone(tones, dc_flux_removal=flag)
    if "dt" not in d or "values" not in d:
        raise ConfigError("/source: samples source needs dt and values")
    return SourceSpec.samples(d["dt"], d["values"], dc_flux_removal=flag)


def from_document(doc: dict) -> ExperimentConfig:
    validate(doc)
    exp = next(e for e in EXPERIMENTS if e in doc)
    emu = build_emulator(doc["emulator"])
    src = None
    if "source" in doc:
        src = build_source(doc["source"])
    elif exp != "am":
        raise SchemaError([("/source", "required for the " + exp + " experiment")])
    ignored = ()
    if exp == "mc":
        dev = doc["mc"].get("deviations", {})
        from .montecarlo import IGNORED_PARAMS

        ignored = tuple(k for k in IGNORED_PARAMS if k in dev)
        if ignored:
            log.warning("deviation rows %s have no behavioral carrier and are ignored", ", ".join(ignored))
    return ExperimentConfig(doc=doc, experiment=exp, emulator=emu, source=src,
                            sim=dict(doc.get("sim", {})), block=dict(doc[exp]), ignored=ignored)


def parse_config(text: bytes | str) -> ExperimentConfig:
    """Parse and validate a UTF-8 JSON experiment document."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigError(f"config is not UTF-8: {exc}") from exc
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return from_document(doc)


def _reject_constant(name):
    raise ConfigError(f"non-finite number {name} is not allowed")


def emulator_to_document(cfg: EmulatorConfig) -> dict:
    """Full emulator block reproducing ``cfg`` (shared OTA device parameters)."""
    if {k: v for k, v in cfg.ota3.__dict__.items() if k != "Vb"} != \
            {k: v for k, v in cfg.ota4.__dict__.items() if k != "Vb"}:
        raise ConfigError("OTA3 and OTA4 differ beyond their bias; not expressible as one block")
    ota = {k: v for k, v in cfg.ota3.__dict__.items() if k != "Vb"}
    return {
        "topology": cfg.topology.value, "mode": cfg.mode.value, "fidelity": cfg.fidelity.value,
        "R1": cfg.R1, "C1": cfg.C1, "C2": cfg.C2, "Vb3": cfg.ota3.Vb, "Vb4": cfg.ota4.Vb,
        "ota": ota, "ccii1": dict(cfg.ccii1.__dict__), "cccii2": dict(cfg.cccii2.__dict__),
    }

