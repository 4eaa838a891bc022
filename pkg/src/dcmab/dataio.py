"""Synthetic auction logs, the line-delimited log format and its reader.

File layout (UTF-8, ``\\n`` line endings)::

    #rtblog v1 request_id consumer_id timestamp n_candidates candidates
    <request_id>\\t<consumer_id>\\t<timestamp>\\t<n>\\t<cand>;<cand>;...

Each ``<cand>`` is ``merchant_id,base_bid,pctr,pcvr,pcvr_avg,ppb``. Currency
fields carry 4 fractional digits, probabilities 6, timestamps 3. Every record,
including the last, ends with a newline; a missing terminator or a candidate
count that disagrees with ``n`` is reported as truncation.
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Iterator, List, Optional

import numpy as np

HEADER = "#rtblog v1 request_id consumer_id timestamp n_candidates candidates"
CURRENCY_DIGITS = 4
PROB_DIGITS = 6
TIME_DIGITS = 3
PROB_FLOOR = 10.0 ** -PROB_DIGITS


class LogFormatError(ValueError):
    pass


@dataclass
class LogCandidate:
    merchant_id: int
    base_bid: float
    pctr: float
    pcvr: float
    pcvr_avg: float
    ppb: float


@dataclass
class AuctionLogRecord:
    request_id: int
    consumer_id: int
    timestamp: float
    candidates: List[LogCandidate] = field(default_factory=list)


@dataclass
class GeneratorConfig:
    """Knobs of the synthetic market.

    Merchants (bids, prices, quality, popularity) are drawn from
    ``market_seed`` so that logs generated with different request seeds share
    one merchant universe, the way two days of traffic do.
    """
    merchants: int = 300
    consumers: int = 1000
    requests: int = 20000
    candidates_per_request: int = 20
    duration: float = 10800.0
    market_seed: int = 7
    bid_mean: float = 1.0
    bid_sigma: float = 0.4
    ppb_mean: float = 40.0
    ppb_sigma: float = 0.6
    quality_sigma: float = 1.0
    popularity_exponent: float = 0.8
    consumer_sigma: float = 0.8
    activity_sigma: float = 1.0
    base_ctr: float = 0.04
    base_cvr: float = 0.05
    concentration: float = 40.0

    def validate(self):
        if min(self.merchants, self.consumers) < 1:
            raise ValueError("need at least one merchant and one consumer")
        if self.requests < 0:
            raise ValueError("requests must be >= 0")
        if not 1 <= self.candidates_per_request <= self.merchants:
            raise ValueError("candidates_per_request must be in [1, merchants]")
        for name in ("bid_mean", "ppb_mean", "base_ctr", "base_cvr", "concentration", "duration"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("bid_sigma", "ppb_sigma", "quality_sigma", "consumer_sigma", "activity_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.base_ctr >= 1 or self.base_cvr >= 1:
            raise ValueError("base rates must be < 1")


def _quantize(values, digits):
    # exact round trip through the decimal text representation
    return np.char.mod(f"%.{digits}f", np.atleast_1d(values)).astype(float)


def _lognormal(rng, mean, sigma, size):
    # parametrised by the mean of the distribution, not of the underlying normal
    return rng.lognormal(np.log(mean) - 0.5 * sigma ** 2, sigma, size)


def _beta_around(rng, mean, concentration):
    mean = np.clip(mean, 1e-4, 0.95)
    return rng.beta(mean * concentration, (1.0 - mean) * concentration)


def generate_records(cfg: GeneratorConfig, seed: int) -> List[AuctionLogRecord]:
    """Draw a synthetic log. Values are quantised to the file precision."""
    cfg.validate()
    mrng = np.random.default_rng(cfg.market_seed)
    n, l = cfg.merchants, cfg.consumers
    base_bid = _quantize(np.maximum(_lognormal(mrng, cfg.bid_mean, cfg.bid_sigma, n), 0.01), CURRENCY_DIGITS)
    ppb = _quantize(_lognormal(mrng, cfg.ppb_mean, cfg.ppb_sigma, n), CURRENCY_DIGITS)
    quality = _lognormal(mrng, 1.0, cfg.quality_sigma, n)
    ctr_m = cfg.base_ctr * np.sqrt(quality)
    cvr_m = cfg.base_cvr * np.sqrt(quality)
    popularity = quality ** cfg.popularity_exponent
    popularity /= popularity.sum()
    propensity = _lognormal(mrng, 1.0, cfg.consumer_sigma, l)
    activity = _lognormal(mrng, 1.0, cfg.activity_sigma, l)
    activity /= activity.sum()

    rng = np.random.default_rng(seed)
    times = _quantize(np.sort(rng.uniform(0.0, cfg.duration, cfg.requests)), TIME_DIGITS)
    consumers = rng.choice(l, size=cfg.requests, p=activity)
    nc = cfg.candidates_per_request
    raw = []
    for r in range(cfg.requests):
        c = consumers[r]
        ms = np.sort(rng.choice(n, size=nc, replace=False, p=popularity))
        affinity = rng.lognormal(0.0, 0.3, nc)
        pctr = _beta_around(rng, ctr_m[ms] * affinity, cfg.concentration)
        pcvr = _beta_around(rng, cvr_m[ms] * propensity[c], cfg.concentration)
        pctr = _quantize(np.maximum(pctr, PROB_FLOOR), PROB_DIGITS)
        pcvr = _quantize(np.maximum(pcvr, PROB_FLOOR), PROB_DIGITS)
        raw.append((ms, pctr, pcvr))

    # pcvr_avg: the merchant's mean pcvr over this log
    sums = np.zeros(n)
    counts = np.zeros(n)
    for ms, _, pcvr in raw:
        np.add.at(sums, ms, pcvr)
        np.add.at(counts, ms, 1)
    avg = _quantize(np.maximum(sums / np.maximum(counts, 1), PROB_FLOOR), PROB_DIGITS)

    records = []
    for r, (ms, pctr, pcvr) in enumerate(raw):
        cands = [LogCandidate(int(m), float(base_bid[m]), float(p), float(v), float(avg[m]), float(ppb[m]))
                 for m, p, v in zip(ms, pctr, pcvr)]
        records.append(AuctionLogRecord(r, int(consumers[r]), float(times[r]), cands))
    return records


def _fmt(x: float, digits: int) -> str:
    return f"{x:.{digits}f}"


def format_record(rec: AuctionLogRecord) -> str:
    cands = ";".join(
        f"{c.merchant_id},{_fmt(c.base_bid, CURRENCY_DIGITS)},{_fmt(c.pctr, PROB_DIGITS)},"
        f"{_fmt(c.pcvr, PROB_DIGITS)},{_fmt(c.pcvr_avg, PROB_DIGITS)},{_fmt(c.ppb, CURRENCY_DIGITS)}"
        for c in rec.candidates)
    return (f"{rec.request_id}\t{rec.consumer_id}\t{_fmt(rec.timestamp, TIME_DIGITS)}"
            f"\t{len(rec.candidates)}\t{cands}\n")


def write_log(records, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(HEADER + "\n")
        for rec in records:
            fh.write(format_record(rec))


def generate_synthetic_log(cfg: GeneratorConfig, seed: int, path) -> List[AuctionLogRecord]:
    """Generate a log, write it to ``path`` and return the records."""
    records = generate_records(cfg, seed)
    write_log(records, path)
    return records


def _check_prob(value, lineno, name):
    if not 0.0 <= value <= 1.0:
        raise LogFormatError(f"line {lineno}: {name}={value} outside [0, 1]")


def parse_record(line: str, lineno: int) -> AuctionLogRecord:
    if not line.endswith("\n"):
        raise LogFormatError(f"line {lineno}: truncated record (no line terminator)")
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 5:
        raise LogFormatError(f"line {lineno}: expected 5 tab-separated fields, got {len(parts)}")
    try:
        rid, cid, ts, n = int(parts[0]), int(parts[1]), float(parts[2]), int(parts[3])
        chunks = parts[4].split(";") if parts[4] else []
        cands = []
        for chunk in chunks:
            f = chunk.split(",")
            if len(f) != 6:
                raise LogFormatError(f"line {lineno}: candidate has {len(f)} fields, expected 6")
            cands.append(LogCandidate(int(f[0]), float(f[1]), float(f[2]), float(f[3]),
                                      float(f[4]), float(f[5])))
    except ValueError as exc:
        if isinstance(exc, LogFormatError):
            raise
        raise LogFormatError(f"line {lineno}: {exc}") from None
    if len(cands) != n:
        raise LogFormatError(f"line {lineno}: truncated record ({len(cands)} of {n} candidates)")
    if n < 1:
        raise LogFormatError(f"line {lineno}: record without candidates")
    for c in cands:
        _check_prob(c.pctr, lineno, "pctr")
        _check_prob(c.pcvr, lineno, "pcvr")
        if not 0.0 < c.pcvr_avg <= 1.0:
            raise LogFormatError(f"line {lineno}: pcvr_avg={c.pcvr_avg} outside (0, 1]")
        if c.base_bid <= 0 or c.ppb < 0:
            raise LogFormatError(f"line {lineno}: invalid base_bid/ppb for merchant {c.merchant_id}")
    return AuctionLogRecord(rid, cid, ts, cands)


def replay_log(path) -> Iterator[AuctionLogRecord]:
    """Stream records from ``path`` in file order, validating each one."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = fh.readline()
        if header.rstrip("\n") != HEADER:
            raise LogFormatError(f"line 1: unknown header {header.strip()!r}")
        last_ts = -np.inf
        for lineno, line in enumerate(fh, start=2):
            rec = parse_record(line, lineno)
            if rec.timestamp < last_ts:
                raise LogFormatError(f"line {lineno}: timestamp decreases")
            last_ts = rec.timestamp
            yield rec


class AuctionLog:
    """Columnar view of a log, candidates stored CSR-style by request."""

    def __init__(self, records):
        records = list(records)
        self.n_requests = len(records)
        self.request_id = np.array([r.request_id for r in records], dtype=np.int64)
        self.consumer_id = np.array([r.consumer_id for r in records], dtype=np.int64)
        self.timestamp = np.array([r.timestamp for r in records], dtype=float)
        counts = np.array([len(r.candidates) for r in records], dtype=np.int64)
        self.req_ptr = np.zeros(self.n_requests + 1, dtype=np.int64)
        np.cumsum(counts, out=self.req_ptr[1:])
        flat = [c for r in records for c in r.candidates]
        mids = np.array([c.merchant_id for c in flat], dtype=np.int64)
        self.merchant_ids = np.unique(mids)
        self.cand_midx = np.searchsorted(self.merchant_ids, mids).astype(np.int64)
        self.cand_base_bid = np.array([c.base_bid for c in flat], dtype=float)
        self.cand_pctr = np.array([c.pctr for c in flat], dtype=float)
        self.cand_pcvr = np.array([c.pcvr for c in flat], dtype=float)
        self.cand_pcvr_avg = np.array([c.pcvr_avg for c in flat], dtype=float)
        self.cand_ppb = np.array([c.ppb for c in flat], dtype=float)
        self.cand_bratio = self.cand_pcvr / self.cand_pcvr_avg
        self.cand_request = np.repeat(np.arange(self.n_requests), counts)
        self.consumer_ids = np.unique(self.consumer_id)
        self.req_cidx = np.searchsorted(self.consumer_ids, self.consumer_id).astype(np.int64)
        # per-merchant constants, last value seen wins
        self.merchant_base_bid = np.zeros(len(self.merchant_ids))
        self.merchant_ppb = np.zeros(len(self.merchant_ids))
        self.merchant_base_bid[self.cand_midx] = self.cand_base_bid
        self.merchant_ppb[self.cand_midx] = self.cand_ppb

    @classmethod
    def from_file(cls, path) -> "AuctionLog":
        return cls(replay_log(path))

    @property
    def n_merchants(self) -> int:
        return len(self.merchant_ids)

    @property
    def n_consumers(self) -> int:
        return len(self.consumer_ids)

    def records(self) -> Iterator[AuctionLogRecord]:
        for r in range(self.n_requests):
            lo, hi = self.req_ptr[r], self.req_ptr[r + 1]
            cands = [LogCandidate(int(self.merchant_ids[self.cand_midx[c]]), float(self.cand_base_bid[c]),
                                  float(self.cand_pctr[c]), float(self.cand_pcvr[c]),
                                  float(self.cand_pcvr_avg[c]), float(self.cand_ppb[c]))
                     for c in range(lo, hi)]
            yield AuctionLogRecord(int(self.request_id[r]), int(self.consumer_id[r]),
                                   float(self.timestamp[r]), cands)

    def slice_bounds(self, n_slices: int) -> np.ndarray:
        """Request-index boundaries splitting the log into ``n_slices`` equal parts in time order."""
        return np.linspace(0, self.n_requests, n_slices + 1).round().astype(np.int64)


def log_to_string(records) -> str:
    buf = io.StringIO()
    buf.write(HEADER + "\n")
    for rec in records:
        buf.write(format_record(rec))
    return buf.getvalue()


def load_or_generate(path, cfg: GeneratorConfig, seed: int) -> AuctionLog:
    if not os.path.exists(path):
        generate_synthetic_log(cfg, seed, path)
    return AuctionLog.from_file(path)
