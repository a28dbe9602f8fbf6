"""Market trace ingestion, synthesis, and program statistics.

Two CSV layouts mirror the upstream market sources: a market file with
``timestamp,rt_price,coin_price`` rows and a long-format ancillary-service
file with ``timestamp,program_id,price,epsilon`` rows (epsilon may be
blank when a deployment observation is missing). Records join on timestamp
and one record is one hourly slot.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInputError, ModelViolationError, TraceFormatError
from .fleet import FleetSpec, MachineType, canonicalize, mining_revenue_rate, net_reward
from .programs import ProgramSpec
from .regulation import RegJointModel, TruncatedExponential, fit_lambda, sample_joint
from .single_machine import ProgramStats

MARKET_HEADER = ["timestamp", "rt_price", "coin_price"]
AS_HEADER = ["timestamp", "program_id", "price", "epsilon"]


@dataclass(frozen=True)
class TraceRecord:
    """One hourly market observation across all configured programs."""

    timestamp: datetime
    rt_price: float
    coin_price: float
    program_ids: tuple[str, ...]
    as_prices: tuple[float, ...]
    deployment: tuple[Optional[float], ...]

    def deployment_array(self) -> tuple[np.ndarray, np.ndarray]:
        """(eps array with zeros at holes, boolean missing mask)."""
        missing = np.array([d is None for d in self.deployment])
        eps = np.array([0.0 if d is None else d for d in self.deployment])
        return eps, missing


@dataclass(frozen=True)
class PriceResponsiveModel:
    """All-or-nothing deployment triggered by the real-time price."""

    threshold: float

    def __post_init__(self):
        if not math.isfinite(self.threshold):
            raise InvalidInputError(f"threshold must be finite, got {self.threshold}")


def price_responsive_eps(model: PriceResponsiveModel, rt_price: float) -> float:
    """1.0 when the real-time price strictly exceeds the threshold, else 0.0."""
    return 1.0 if rt_price > model.threshold else 0.0


def _parse_timestamp(raw: str, path, line: int) -> datetime:
    try:
        ts = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    except ValueError:
        raise TraceFormatError(path, line, f"bad timestamp {raw!r}") from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _parse_price(raw: str, field: str, path, line: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise TraceFormatError(path, line, f"bad {field} {raw!r}") from None
    if not math.isfinite(value):
        raise TraceFormatError(path, line, f"{field} must be finite, got {raw!r}")
    return value


def _format_ts(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def load_traces(market_path, as_path, program_ids: Sequence[str] | None = None) -> list[TraceRecord]:
    """Read and join the market and ancillary-service CSV files.

    Every market timestamp must carry a price row for every program.
    Records come back in timestamp order; an out-of-order file triggers a
    warning and gets sorted.
    """
    market: dict[datetime, tuple[float, float]] = {}
    with open(market_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MARKET_HEADER:
            raise TraceFormatError(market_path, 1, f"expected header {MARKET_HEADER}, got {header}")
        prev = None
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise TraceFormatError(market_path, line, f"expected 3 fields, got {len(row)}")
            ts = _parse_timestamp(row[0], market_path, line)
            if ts in market:
                raise TraceFormatError(market_path, line, f"duplicate timestamp {row[0]}")
            if prev is not None and ts < prev:
                warnings.warn(f"{market_path}:{line}: timestamps out of order; sorting")
            prev = ts
            market[ts] = (
                _parse_price(row[1], "rt_price", market_path, line),
                _parse_price(row[2], "coin_price", market_path, line),
            )

    as_rows: dict[tuple[datetime, str], tuple[float, Optional[float]]] = {}
    seen_ids: list[str] = []
    with open(as_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != AS_HEADER:
            raise TraceFormatError(as_path, 1, f"expected header {AS_HEADER}, got {header}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise TraceFormatError(as_path, line, f"expected 4 fields, got {len(row)}")
            ts = _parse_timestamp(row[0], as_path, line)
            pid = row[1]
            if pid not in seen_ids:
                seen_ids.append(pid)
            price = _parse_price(row[2], "price", as_path, line)
            eps: Optional[float] = None
            if row[3] != "":
                eps = _parse_price(row[3], "epsilon", as_path, line)
                if not 0.0 <= eps <= 1.0:
                    raise TraceFormatError(
                        as_path, line, f"epsilon must be in [0,1], got {row[3]}"
                    )
            key = (ts, pid)
            if key in as_rows:
                raise TraceFormatError(as_path, line, f"duplicate (timestamp, program) {row[:2]}")
            as_rows[key] = (price, eps)

    ids = tuple(program_ids) if program_ids is not None else tuple(sorted(seen_ids))
    records = []
    for ts in sorted(market):
        rt, coin = market[ts]
        prices, deps = [], []
        for pid in ids:
            if (ts, pid) not in as_rows:
                raise TraceFormatError(
                    as_path, 0, f"missing program {pid!r} at {_format_ts(ts)}"
                )
            price, eps = as_rows[(ts, pid)]
            prices.append(price)
            deps.append(eps)
        records.append(
            TraceRecord(
                timestamp=ts,
                rt_price=rt,
                coin_price=coin,
                program_ids=ids,
                as_prices=tuple(prices),
                deployment=tuple(deps),
            )
        )
    return records


def write_traces(records: Sequence[TraceRecord], market_path, as_path):
    """Write the two-file CSV representation; floats keep full precision."""
    if not records:
        raise InvalidInputError("cannot write an empty record list")
    if any(r.program_ids != records[0].program_ids for r in records):
        raise InvalidInputError("all records must share the same program ids")
    with open(market_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MARKET_HEADER)
        for rec in records:
            writer.writerow([_format_ts(rec.timestamp), repr(rec.rt_price), repr(rec.coin_price)])
    with open(as_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AS_HEADER)
        for rec in records:
            for pid, price, eps in zip(rec.program_ids, rec.as_prices, rec.deployment):
                writer.writerow(
                    [_format_ts(rec.timestamp), pid, repr(price), "" if eps is None else repr(eps)]
                )


# ── Synthesis ────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class PriceBlock:
    """Clipped-normal hourly price model: mean varies by hour of day."""

    hourly_mean: tuple[float, ...]
    sd: float = 0.0
    lo: float = 0.0
    hi: float = math.inf

    @classmethod
    def from_config(cls, cfg: dict, name: str) -> "PriceBlock":
        if "hourly_mean" in cfg:
            means = tuple(float(x) for x in cfg["hourly_mean"])
            if len(means) != 24:
                raise InvalidInputError(f"{name}: hourly_mean needs 24 entries")
        elif "mean" in cfg:
            means = (float(cfg["mean"]),) * 24
        else:
            raise InvalidInputError(f"{name}: need 'mean' or 'hourly_mean'")
        return cls(
            hourly_mean=means,
            sd=float(cfg.get("sd", 0.0)),
            lo=float(cfg.get("min", 0.0)),
            hi=float(cfg.get("max", math.inf)),
        )

    def draw(self, rng: np.random.Generator, hour: int) -> float:
        # Always consume a draw so the stream layout is sd-independent.
        x = float(rng.normal(self.hourly_mean[hour], self.sd))
        return min(max(x, self.lo), self.hi)


@dataclass(frozen=True)
class SynthProgram:
    id: str
    direction: str
    price: PriceBlock
    eps_kind: str
    eps_param: float


@dataclass(frozen=True)
class SynthesisSpec:
    start: datetime
    hours: int
    coin_price: PriceBlock
    rt_price: PriceBlock
    programs: tuple[SynthProgram, ...]
    joint_theta: float | None = None
    joint_up: str | None = None
    joint_down: str | None = None


def load_synthesis_spec(path) -> SynthesisSpec:
    with open(path) as fh:
        cfg = json.load(fh)
    try:
        programs = []
        for p in cfg["programs"]:
            eps = p["eps"]
            kind = eps["kind"]
            if kind == "truncexp":
                param = float(eps["lambda"]) if "lambda" in eps else fit_lambda(float(eps["mean"]))
            elif kind == "price_responsive":
                param = float(eps["threshold"])
            elif kind == "bernoulli":
                param = float(eps["prob"])
            elif kind == "constant":
                param = float(eps["value"])
            else:
                raise InvalidInputError(f"unknown eps kind {kind!r}")
            programs.append(
                SynthProgram(
                    id=str(p["id"]),
                    direction=str(p.get("direction", "up")),
                    price=PriceBlock.from_config(p["price"], f"program {p['id']}"),
                    eps_kind=kind,
                    eps_param=param,
                )
            )
        joint = cfg.get("joint")
        return SynthesisSpec(
            start=_parse_timestamp(cfg["start"], path, 0),
            hours=int(cfg["hours"]),
            coin_price=PriceBlock.from_config(cfg["coin_price"], "coin_price"),
            rt_price=PriceBlock.from_config(cfg["rt_price"], "rt_price"),
            programs=tuple(programs),
            joint_theta=float(joint["theta"]) if joint else None,
            joint_up=str(joint["up"]) if joint else None,
            joint_down=str(joint["down"]) if joint else None,
        )
    except KeyError as exc:
        raise InvalidInputError(f"{path}: missing synthesis field {exc}") from None


def synthesize_traces(spec: SynthesisSpec, seed: int) -> list[TraceRecord]:
    """Deterministic synthetic trace: one record per hour from ``spec.start``.

    Regulation pairs named in the joint block draw through the mixed
    reg-up/down model; price-responsive programs derive their deployment
    from the drawn real-time price.
    """
    if spec.hours < 1:
        raise InvalidInputError(f"synthesis needs at least one hour, got {spec.hours}")
    rng = np.random.default_rng(seed)
    by_id = {p.id: i for i, p in enumerate(spec.programs)}
    joint_model = None
    if spec.joint_theta is not None:
        if spec.joint_up not in by_id or spec.joint_down not in by_id:
            raise InvalidInputError("joint block names unknown program ids")
        up = spec.programs[by_id[spec.joint_up]]
        dn = spec.programs[by_id[spec.joint_down]]
        if up.eps_kind != "truncexp" or dn.eps_kind != "truncexp":
            raise InvalidInputError("joint programs must use truncexp deployment models")
        joint_model = RegJointModel(
            theta=spec.joint_theta,
            up=TruncatedExponential(up.eps_param),
            down=TruncatedExponential(dn.eps_param),
        )

    records = []
    for h in range(spec.hours):
        ts = spec.start + timedelta(hours=h)
        hour = ts.hour
        rt = spec.rt_price.draw(rng, hour)
        coin = spec.coin_price.draw(rng, hour)
        prices = [p.price.draw(rng, hour) for p in spec.programs]
        eps: list[Optional[float]] = [None] * len(spec.programs)
        if joint_model is not None:
            e_up, e_dn = sample_joint(joint_model, rng)
            eps[by_id[spec.joint_up]] = float(e_up)
            eps[by_id[spec.joint_down]] = float(e_dn)
        for i, p in enumerate(spec.programs):
            if eps[i] is not None:
                continue
            if p.eps_kind == "truncexp":
                eps[i] = float(TruncatedExponential(p.eps_param).sample(rng))
            elif p.eps_kind == "bernoulli":
                eps[i] = float(rng.random() < p.eps_param)
            elif p.eps_kind == "constant":
                eps[i] = p.eps_param
            else:  # price_responsive
                eps[i] = price_responsive_eps(PriceResponsiveModel(p.eps_param), rt)
        records.append(
            TraceRecord(
                timestamp=ts,
                rt_price=rt,
                coin_price=coin,
                program_ids=tuple(p.id for p in spec.programs),
                as_prices=tuple(prices),
                deployment=tuple(eps),
            )
        )
    return records


# ── Statistics and per-slot model building ──────────────────────────────


def estimate_stats(records: Sequence[TraceRecord], program_index: int) -> ProgramStats:
    """Sample mean/unbiased variance of a program's observed deployment."""
    eps = [
        r.deployment[program_index]
        for r in records
        if r.deployment[program_index] is not None
    ]
    if len(eps) < 2:
        raise InvalidInputError(
            f"need at least 2 deployment observations for program {program_index}, got {len(eps)}"
        )
    arr = np.array(eps)
    prices = np.array([r.as_prices[program_index] for r in records])
    n = arr.size
    return ProgramStats(
        price=float(prices.mean()),
        mean_eps=float(arr.mean()),
        var_eps=float(arr.var(ddof=1)),
        var_slack=1.0 / (n - 1),
    )


def per_slot_rewards(
    record: TraceRecord,
    fleet_config: Sequence[MachineType],
    clamp_negative: bool = False,
) -> FleetSpec:
    """Canonical fleet for one slot from coin economics and the RT price."""
    machines = []
    for m in fleet_config:
        if m.energy_intensity is None:
            raise InvalidInputError(f"machine {m.id!r} has no energy_intensity")
        r = net_reward(
            mining_revenue_rate(record.coin_price, m.energy_intensity), record.rt_price
        )
        if r < 0:
            if not clamp_negative:
                raise ModelViolationError(
                    f"machine {m.id!r} has negative net reward {r:.3f} at "
                    f"{_format_ts(record.timestamp)}; pass clamp_negative to floor at 0"
                )
            r = 0.0
        machines.append(
            MachineType(
                id=m.id,
                capacity_mw=m.capacity_mw,
                energy_intensity=m.energy_intensity,
                reward=r,
            )
        )
    return canonicalize(machines)


def programs_for_record(
    record: TraceRecord, base_programs: Sequence[ProgramSpec]
) -> list[ProgramSpec]:
    """Bind per-slot prices from a record onto configured program specs."""
    idx = {pid: i for i, pid in enumerate(record.program_ids)}
    out = []
    for p in base_programs:
        if p.id not in idx:
            raise InvalidInputError(f"record has no program {p.id!r}")
        out.append(ProgramSpec(id=p.id, price=record.as_prices[idx[p.id]], direction=p.direction))
    return out
