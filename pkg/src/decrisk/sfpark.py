"""Pilot pricing data: ingestion, cleaning, and parameter estimation.

Input frames use the canonical columns block_id, date, weekday,
window_start, window_end, rate_usd, occupancy_frac. Raw exports carrying
total_time_occupied / total_time_available are normalized on load. Dates
only need to sort correctly (integer day indices or ISO strings both work);
weekday values are opaque group labels.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .distributions import BaseDistribution, DistributionMap, EnvironmentState
from .errors import ContractViolation, DegenerateProblem, IngestionError
from .geometry import ConstraintSet
from .losses import LossModel

CANONICAL_COLUMNS = [
    "block_id",
    "date",
    "weekday",
    "window_start",
    "window_end",
    "rate_usd",
    "occupancy_frac",
]

MAX_RATE_USD = 8.0  # posted city-wide hourly cap


@dataclass
class OccupancyRecord:
    """One block-day-window observation."""

    block_id: str
    date: object
    weekday: object
    window_start: int
    window_end: int
    rate: float
    occupancy: float

    def as_row(self):
        return {
            "block_id": self.block_id,
            "date": self.date,
            "weekday": self.weekday,
            "window_start": self.window_start,
            "window_end": self.window_end,
            "rate_usd": self.rate,
            "occupancy_frac": self.occupancy,
        }


def records_frame(records):
    """DataFrame with the canonical columns from OccupancyRecord objects."""
    return pd.DataFrame([r.as_row() for r in records], columns=CANONICAL_COLUMNS)


def load_records(source, column_map=None):
    """Load a pilot CSV (or pass a frame through), normalizing occupancy.

    column_map renames arbitrary export headers onto the canonical names.
    Frames with total_time_occupied / total_time_available get
    occupancy_frac computed from the ratio.
    """
    frame = source.copy() if isinstance(source, pd.DataFrame) else pd.read_csv(source)
    if column_map:
        frame = frame.rename(columns=column_map)
    if "occupancy_frac" not in frame.columns:
        if {"total_time_occupied", "total_time_available"} <= set(frame.columns):
            frame["occupancy_frac"] = (
                frame["total_time_occupied"] / frame["total_time_available"]
            )
        else:
            raise IngestionError("no occupancy_frac or total-time columns to derive it")
    missing = [c for c in CANONICAL_COLUMNS if c not in frame.columns]
    if missing:
        raise IngestionError(f"missing canonical columns: {missing}")
    occ = frame["occupancy_frac"]
    bad = occ.notna() & ((occ < 0.0) | (occ > 1.0))
    if bad.any():
        raise IngestionError("occupancy_frac outside [0, 1] after normalization")
    return frame[CANONICAL_COLUMNS + [c for c in frame.columns if c not in CANONICAL_COLUMNS]]


def fill_missing_rates(frame):
    """Fill missing rates only when the surrounding rates agree.

    Returns (filled frame, excluded block ids). A run of missing rates is
    filled with the shared value of the nearest present rates before and
    after it; any other gap marks the whole block excluded. Idempotent.
    """
    frame = frame.copy()
    excluded = set()
    group_cols = ["block_id", "window_start", "window_end"]
    for keys, idx in frame.groupby(group_cols).groups.items():
        block = keys[0]
        sub = frame.loc[idx].sort_values("date")
        rates = sub["rate_usd"].to_numpy(dtype=float)
        filled = rates.copy()
        i = 0
        ok = True
        while i < len(rates):
            if not math.isnan(rates[i]):
                i += 1
                continue
            j = i
            while j < len(rates) and math.isnan(rates[j]):
                j += 1
            before = rates[i - 1] if i > 0 else math.nan
            after = rates[j] if j < len(rates) else math.nan
            if math.isnan(before) or math.isnan(after) or before != after:
                ok = False
                break
            filled[i:j] = before
            i = j
        if ok:
            frame.loc[sub.index, "rate_usd"] = filled
        else:
            excluded.add(block)
    return frame, excluded


def _block_window(frame, block, window):
    sub = frame[
        (frame["block_id"] == block)
        & (frame["window_start"] == window[0])
        & (frame["window_end"] == window[1])
    ]
    if sub.empty:
        raise IngestionError(f"no records for block {block!r} in window {window}")
    return sub.sort_values("date")


def _leading_run(sub):
    """Rows before the first rate change."""
    rates = sub["rate_usd"].to_numpy(dtype=float)
    if math.isnan(rates[0]):
        raise IngestionError("leading rate is missing; clean the records first")
    cut = len(rates)
    for i, r in enumerate(rates):
        if r != rates[0]:
            cut = i
            break
    return sub.iloc[:cut]


def _final_week(sub):
    """Rows on the last seven distinct dates."""
    dates = sub["date"].drop_duplicates().sort_values()
    last = set(dates.iloc[-7:])
    return sub[sub["date"].isin(last)]


def estimate_sensitivity(frame, block, window):
    """Price sensitivity: occupancy change per dollar, initial to final steady state."""
    sub = _block_window(frame, block, window)
    if sub["rate_usd"].isna().any():
        raise IngestionError("missing rates present; clean the records first")
    lead = _leading_run(sub)
    initial_rate = float(lead["rate_usd"].iloc[0])
    initial_occ = float(lead["occupancy_frac"].mean())
    final_rate = float(sub["rate_usd"].iloc[-1])
    if final_rate == initial_rate:
        raise DegenerateProblem("final rate equals the initial rate; sensitivity undefined")
    final = _final_week(sub)
    final = final[final["rate_usd"] == final_rate]
    final_occ = float(final["occupancy_frac"].mean())
    return (final_occ - initial_occ) / (final_rate - initial_rate)


@dataclass
class PriceEpisode:
    """One posted rate and the weekly occupancies while it was in effect."""

    rate: float
    weeks: int
    weekly_occupancies: list
    prev_fixed_point: float | None = None
    fixed_point: float | None = None
    weekday: object = None

    def __post_init__(self):
        if self.weeks < 1:
            raise ContractViolation("an episode spans at least one week")
        if len(self.weekly_occupancies) != self.weeks:
            raise ContractViolation("need one weekly occupancy per week in effect")
        if self.fixed_point is None:
            # the week before the next announcement stands in for the fixed point
            self.fixed_point = float(self.weekly_occupancies[-1])


def episodes_from_records(frame, block, window):
    """Per-weekday price episodes for one block and rate window."""
    sub = _block_window(frame, block, window)
    if sub["rate_usd"].isna().any():
        raise IngestionError("missing rates present; clean the records first")
    episodes = []
    for weekday, day_rows in sub.groupby("weekday"):
        day_rows = day_rows.sort_values("date")
        rates = day_rows["rate_usd"].to_numpy(dtype=float)
        occs = day_rows["occupancy_frac"].to_numpy(dtype=float)
        start = 0
        prev_fp = None
        for i in range(1, len(rates) + 1):
            if i == len(rates) or rates[i] != rates[start]:
                weekly = occs[start:i].tolist()
                episode = PriceEpisode(
                    rate=float(rates[start]),
                    weeks=len(weekly),
                    weekly_occupancies=weekly,
                    prev_fixed_point=prev_fp,
                    weekday=weekday,
                )
                episodes.append(episode)
                prev_fp = episode.fixed_point
                start = i
    return episodes


@dataclass
class LambdaEstimate:
    """Fitted decay rate with provenance; degenerate when unidentifiable."""

    value: float
    degenerate: bool = False
    per_weekday: dict = field(default_factory=dict)
    objective_histories: dict = field(default_factory=dict)


def _decay_objective(lam, terms):
    total = 0.0
    for a, b, zs in terms:
        for k, z in enumerate(zs, start=1):
            resid = lam**k * a + (1.0 - lam**k) * b - z
            total += resid * resid
    return total


def _decay_gradient(lam, terms):
    total = 0.0
    for a, b, zs in terms:
        for k, z in enumerate(zs, start=1):
            resid = lam**k * a + (1.0 - lam**k) * b - z
            total += 2.0 * resid * k * lam ** (k - 1) * (a - b)
    return total


def _fit_decay(terms, init=0.5, step=0.01, max_iter=10_000, hi=1.0 - 1e-6):
    """Projected gradient descent on the decay objective.

    The base step is halved within an iteration whenever it would increase
    the objective, so the recorded objective path is non-increasing.
    """
    lam = init
    f = _decay_objective(lam, terms)
    history = [f]
    for _ in range(max_iter):
        g = _decay_gradient(lam, terms)
        s = step
        cand, fc = lam, f
        while s >= 1e-14:
            trial = min(max(lam - s * g, 0.0), hi)
            ft = _decay_objective(trial, terms)
            if ft <= f:
                cand, fc = trial, ft
                break
            s *= 0.5
        if abs(cand - lam) < 1e-13:
            break
        lam, f = cand, fc
        history.append(f)
    return lam, history


def estimate_lambda(episodes, init=0.5, step=0.01, max_iter=10_000):
    """Decay rate fitted to the weekly approach toward each episode's fixed point.

    Episodes are grouped by their weekday tag, fitted per group, and the
    group values averaged. Episodes without a preceding fixed point are
    skipped. When every usable episode starts at its own fixed point the
    decay rate is unidentifiable and the result is flagged degenerate.
    """
    groups = {}
    for ep in episodes:
        if ep.prev_fixed_point is None:
            continue
        groups.setdefault(ep.weekday, []).append(
            (float(ep.prev_fixed_point), float(ep.fixed_point), ep.weekly_occupancies)
        )
    if not groups:
        raise ContractViolation("need at least one episode with a preceding fixed point")
    identifiable = any(
        abs(a - b) > 1e-15 for terms in groups.values() for a, b, _ in terms
    )
    if not identifiable:
        return LambdaEstimate(value=math.nan, degenerate=True)
    per_weekday = {}
    histories = {}
    for weekday, terms in groups.items():
        lam, history = _fit_decay(terms, init=init, step=step, max_iter=max_iter)
        per_weekday[weekday] = lam
        histories[weekday] = history
    value = float(np.mean(list(per_weekday.values())))
    return LambdaEstimate(
        value=value,
        degenerate=False,
        per_weekday=per_weekday,
        objective_histories=histories,
    )


def estimate_lambda_from_records(frame, block, window, **kwargs):
    return estimate_lambda(episodes_from_records(frame, block, window), **kwargs)


def synthesize_episodes(
    lam,
    fixed_points,
    weeks,
    initial_state,
    rates=None,
    noise_sd=0.0,
    rng=None,
    weekday=None,
):
    """Episodes whose weekly means follow the decay recursion exactly.

    Each episode relaxes from the carried mean toward its own fixed point;
    the carried mean continues from wherever the previous episode actually
    ended, so the fitted model is exact at the true decay rate. Episode
    anchors hold the true fixed points, unlike records-derived episodes
    whose anchors are read off the final observed week.
    """
    if not 0.0 <= lam < 1.0:
        raise ContractViolation("decay rate must lie in [0, 1)")
    n = len(fixed_points)
    if n == 0:
        raise ContractViolation("need at least one fixed point")
    week_counts = [weeks] * n if np.isscalar(weeks) else list(weeks)
    if len(week_counts) != n:
        raise ContractViolation("need one week count per episode")
    if rates is None:
        rates = [1.0 + i for i in range(n)]
    if noise_sd > 0.0 and rng is None:
        rng = np.random.default_rng(0)
    episodes = []
    state = float(initial_state)
    for i, fp in enumerate(fixed_points):
        fp = float(fp)
        prev = state
        weekly = []
        for k in range(1, week_counts[i] + 1):
            mean = lam**k * prev + (1.0 - lam**k) * fp
            obs = mean if noise_sd == 0.0 else mean + noise_sd * rng.standard_normal()
            weekly.append(float(obs))
            state = mean
        episodes.append(
            PriceEpisode(
                rate=float(rates[i]),
                weeks=week_counts[i],
                weekly_occupancies=weekly,
                prev_fixed_point=prev,
                fixed_point=fp,
                weekday=weekday,
            )
        )
    return episodes


def estimate_block_params(frame, block, window):
    """The per-block parameter summary {A, lambda, nominal_rate, n_p0_samples}."""
    filled, excluded = fill_missing_rates(frame)
    if block in excluded:
        raise IngestionError(f"block {block!r} excluded: rates could not be filled")
    sub = _block_window(filled, block, window)
    lead = _leading_run(sub)
    est = estimate_lambda_from_records(filled, block, window)
    return {
        "block_id": block,
        "window": [int(window[0]), int(window[1])],
        "A": estimate_sensitivity(filled, block, window),
        "lambda": est.value,
        "lambda_degenerate": est.degenerate,
        "nominal_rate": float(lead["rate_usd"].iloc[0]),
        "n_p0_samples": int(len(lead)),
    }


def build_semi_synthetic(frame, block, window, nu, set_bounds=None, max_rate=MAX_RATE_USD):
    """Environment, loss, and constraint set for one block.

    p0 is the empirical occupancy at the nominal (initial) rate; the map
    shifts it by the estimated sensitivity times the price change; the set
    is the price-change interval [-nominal, max_rate - nominal] unless
    set_bounds overrides it.
    """
    filled, excluded = fill_missing_rates(frame)
    if block in excluded:
        raise IngestionError(f"block {block!r} excluded: rates could not be filled")
    sub = _block_window(filled, block, window)
    lead = _leading_run(sub)
    nominal = float(lead["rate_usd"].iloc[0])
    p0_samples = lead["occupancy_frac"].to_numpy(dtype=float)[:, None]
    A = estimate_sensitivity(filled, block, window)
    est = estimate_lambda_from_records(filled, block, window)
    if est.degenerate or math.isnan(est.value):
        raise DegenerateProblem("decay rate unidentifiable for this block")
    base = BaseDistribution.empirical(p0_samples)
    dist_map = DistributionMap(base, A=[[A]], clip_range=(0.0, 1.0))
    env = EnvironmentState(dist_map, base, est.value)
    model = LossModel.quadratic_occupancy(1, nu=nu)
    if set_bounds is None:
        set_bounds = (-nominal, max_rate - nominal)
    cs = ConstraintSet.box([set_bounds[0]], [set_bounds[1]])
    return env, model, cs


def build_group_semi_synthetic(
    frame, blocks, window, nu, set_bounds=None, max_rate=MAX_RATE_USD
):
    """Joint environment over several adjacent blocks.

    Decisions and occupancies are stacked per block with a diagonal
    sensitivity matrix. The shared decay rate is the slowest (largest)
    per-block estimate; per-block values are returned in the params list.
    """
    filled, excluded = fill_missing_rates(frame)
    params = []
    leads = []
    for block in blocks:
        if block in excluded:
            raise IngestionError(f"block {block!r} excluded: rates could not be filled")
        params.append(estimate_block_params(filled, block, window))
        sub = _block_window(filled, block, window)
        leads.append(_leading_run(sub)[["date", "occupancy_frac"]])
    n_joint = min(len(ld) for ld in leads)
    joint = np.column_stack(
        [ld["occupancy_frac"].to_numpy(dtype=float)[:n_joint] for ld in leads]
    )
    A = np.diag([p["A"] for p in params])
    lam = max(p["lambda"] for p in params)
    base = BaseDistribution.empirical(joint)
    dist_map = DistributionMap(base, A=A, clip_range=(0.0, 1.0))
    env = EnvironmentState(dist_map, base, lam)
    model = LossModel.quadratic_occupancy(len(blocks), nu=nu)
    if set_bounds is None:
        lower = [-p["nominal_rate"] for p in params]
        upper = [max_rate - p["nominal_rate"] for p in params]
    else:
        lower, upper = set_bounds
    cs = ConstraintSet.box(lower, upper)
    return env, model, cs, params


def synthesize_pilot_records(
    block_id,
    A,
    lam,
    schedule,
    base_occupancy,
    nominal_rate,
    rng=None,
    noise_sd=0.0,
    weekday_offsets=None,
    window=(1200, 1500),
    mode="decay",
    missing_dates=(),
):
    """Generate daily pilot records with known ground truth.

    schedule is a list of (rate, n_weeks) pairs, the first entry at the
    nominal rate. mode "decay" evolves each weekday's weekly occupancy one
    geometric step per week toward the current rate's fixed point; mode
    "steady" pins every week at the fixed point, which identifies the
    sensitivity exactly and fits a near-zero decay rate. Occupancies are
    clipped to [0, 1].
    """
    if not schedule or schedule[0][0] != nominal_rate:
        raise ContractViolation("the schedule must start at the nominal rate")
    if mode not in ("decay", "steady"):
        raise ContractViolation(f"unknown synthesis mode {mode!r}")
    offsets = [0.0] * 7 if weekday_offsets is None else list(weekday_offsets)
    if len(offsets) != 7:
        raise ContractViolation("need one offset per weekday")
    missing = set(missing_dates)
    rows = []
    week = 0
    state = [None] * 7  # weekly occupancy per weekday
    for rate, n_weeks in schedule:
        fps = [
            base_occupancy + off + A * (rate - nominal_rate) for off in offsets
        ]
        for _ in range(int(n_weeks)):
            for wd in range(7):
                if mode == "steady" or state[wd] is None:
                    state[wd] = fps[wd]
                else:
                    state[wd] = lam * state[wd] + (1.0 - lam) * fps[wd]
                occ = state[wd]
                if noise_sd > 0.0:
                    occ += rng.normal(0.0, noise_sd)
                date = week * 7 + wd
                rows.append(
                    OccupancyRecord(
                        block_id=block_id,
                        date=date,
                        weekday=wd,
                        window_start=window[0],
                        window_end=window[1],
                        rate=math.nan if date in missing else float(rate),
                        occupancy=float(np.clip(occ, 0.0, 1.0)),
                    )
                )
            week += 1
    return records_frame(rows)
