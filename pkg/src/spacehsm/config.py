"""Scenario configuration.

Documents are YAML mappings. Every field is optional; omitted fields take
the defaults below. Unknown keys are rejected. Example::

    seed: 7
    duration_s: 5400
    stations:
      - id: svalbard
    link: {loss_probability: 0.01}
    workload:
      - {at: 30, count: 10, interval_s: 25}
    adversary:
      - {action: steal_key, at: 100}
      - {action: forge_request, at: 120}
"""

from __future__ import annotations

from typing import Annotated, Literal, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .link import LinkConfig
from .messages import CSR_DEFAULT_SIZE, CSR_OVERHEAD
from .power import PowerConfig

_STRICT = ConfigDict(extra="forbid", frozen=True)


class StationDef(BaseModel):
    model_config = _STRICT

    id: str = Field(min_length=1, max_length=6, pattern=r"^[A-Za-z0-9]+$")
    pass_offset_s: float = Field(0.0, ge=0)


class HsmConfig(BaseModel):
    model_config = _STRICT

    scheme: Literal["rsa2048", "standin"] = "rsa2048"
    fault_rate: float = Field(0.0, ge=0, le=1)
    retry_limit: int = Field(3, ge=0)
    beacon_period_s: float = Field(60.0, gt=0)


class GroundConfig(BaseModel):
    model_config = _STRICT

    log_submit_delay_s: float = Field(0.5, ge=0)
    response_timeout_s: float = Field(10.0, gt=0)
    max_retries: int = Field(3, ge=0)
    # None: no grace on a loss-free link, otherwise the stations' whole retry budget
    monitor_grace_s: float | None = Field(None, ge=0)
    reset_delay_s: float | None = Field(30.0, ge=0)
    broadcast_certificates: bool = False


class RequestDef(BaseModel):
    model_config = _STRICT

    at: float = Field(ge=0)
    csr_size: int = Field(CSR_DEFAULT_SIZE, ge=CSR_OVERHEAD)
    station: str | None = None
    count: int = Field(1, ge=1)
    interval_s: float = Field(0.0, ge=0)


class StealKey(BaseModel):
    model_config = _STRICT
    action: Literal["steal_key"]
    at: float = Field(ge=0)


class ForgeRequest(BaseModel):
    model_config = _STRICT
    action: Literal["forge_request"]
    at: float = Field(ge=0)
    csr_size: int = Field(CSR_DEFAULT_SIZE, ge=CSR_OVERHEAD)


class SuppressLogSubmission(BaseModel):
    model_config = _STRICT
    action: Literal["suppress_log_submission"]
    request: int = Field(ge=0, description="index into the expanded workload")


class SpoofBeacon(BaseModel):
    model_config = _STRICT
    action: Literal["spoof_beacon"]
    at: float = Field(ge=0)
    station: str | None = Field(None, description="station in range of the spoofer; default the first")


class InjectFaults(BaseModel):
    model_config = _STRICT
    action: Literal["inject_faults"]
    rate: float = Field(ge=0, le=1)
    start: float = Field(ge=0)
    end: float = Field(ge=0)


AdversaryAction = Annotated[
    Union[StealKey, ForgeRequest, SuppressLogSubmission, SpoofBeacon, InjectFaults],
    Field(discriminator="action"),
]


class AttestationDef(BaseModel):
    model_config = _STRICT

    at: float = Field(ge=0)
    peers: int = Field(1, ge=1)


class ScenarioConfig(BaseModel):
    model_config = _STRICT

    seed: int = Field(0, ge=0, lt=2**64)
    duration_s: float = Field(5400.0, gt=0)
    stations: list[StationDef] = Field(default_factory=lambda: [StationDef(id="GS1")], min_length=1)
    link: LinkConfig = Field(default_factory=LinkConfig)
    power: PowerConfig = Field(default_factory=PowerConfig)
    hsm: HsmConfig = Field(default_factory=HsmConfig)
    ground: GroundConfig = Field(default_factory=GroundConfig)
    workload: list[RequestDef] = Field(default_factory=list)
    adversary: list[AdversaryAction] = Field(default_factory=list)
    attestation: AttestationDef | None = None
    consensus_threshold: int = Field(1, ge=1)
    consensus_window_s: float = Field(600.0, gt=0)

    @model_validator(mode="after")
    def _check(self) -> "ScenarioConfig":
        ids = [s.id for s in self.stations]
        if len(set(ids)) != len(ids):
            raise ConfigError("stations", "station ids must be unique")
        if self.consensus_threshold > len(ids):
            raise ConfigError("consensus_threshold", "exceeds number of stations")
        if abs(self.power.daylight_s + self.power.eclipse_s - self.link.orbit_period_s) > 1e-9:
            raise ConfigError("power", "daylight_s + eclipse_s must equal link.orbit_period_s")
        for i, r in enumerate(self.workload):
            last = r.at + (r.count - 1) * r.interval_s
            if last > self.duration_s:
                raise ConfigError(f"workload[{i}].at", "request scheduled after duration_s")
            if r.station is not None and r.station not in ids:
                raise ConfigError(f"workload[{i}].station", f"unknown station {r.station!r}")
        n_requests = sum(r.count for r in self.workload)
        for i, a in enumerate(self.adversary):
            times = {"at": getattr(a, "at", None), "start": getattr(a, "start", None),
                     "end": getattr(a, "end", None)}
            for name, t in times.items():
                if t is not None and t > self.duration_s:
                    raise ConfigError(f"adversary[{i}].{name}", "outside [0, duration_s]")
            if isinstance(a, InjectFaults) and a.end < a.start:
                raise ConfigError(f"adversary[{i}].end", "end before start")
            if isinstance(a, SpoofBeacon) and a.station is not None and a.station not in ids:
                raise ConfigError(f"adversary[{i}].station", f"unknown station {a.station!r}")
            if isinstance(a, SuppressLogSubmission) and a.request >= n_requests:
                raise ConfigError(f"adversary[{i}].request", "no such workload request")
        if self.attestation and self.attestation.at > self.duration_s:
            raise ConfigError("attestation.at", "outside [0, duration_s]")
        return self

    def requests(self) -> list[tuple[float, int, str | None]]:
        """Workload expanded to (time, csr_size, station) in index order."""
        out = []
        for r in self.workload:
            out.extend((r.at + k * r.interval_s, r.csr_size, r.station) for k in range(r.count))
        return out


def _path(loc: tuple) -> str:
    out = ""
    for part in loc:
        if isinstance(part, int):
            out += f"[{part}]"
        elif part in {"steal_key", "forge_request", "suppress_log_submission",
                      "spoof_beacon", "inject_faults"}:
            continue  # discriminator tag pydantic inserts into the location
        else:
            out += ("." if out else "") + str(part)
    return out


def config_from_dict(data: dict | None) -> ScenarioConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("", "configuration must be a mapping")
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        ctx_err = (err.get("ctx") or {}).get("error")
        if isinstance(ctx_err, ConfigError):
            raise ctx_err from None
        raise ConfigError(_path(err["loc"]), err["msg"]) from None
    except ConfigError:
        raise


def parse_config(text: bytes | str) -> ScenarioConfig:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigError("", f"not UTF-8: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"invalid YAML: {exc}") from None
    return config_from_dict(data)


def serialize_config(config: ScenarioConfig) -> str:
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=True)


def load_config(path) -> ScenarioConfig:
    with open(path, "rb") as fh:
        return parse_config(fh.read())
