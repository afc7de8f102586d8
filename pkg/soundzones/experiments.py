"""
The sound-speed robustness experiment.

Zone IRs are simulated at a design speed and at the true speed. Three filter
sets are designed over a sweep of VAST ranks:

* GT: from the true-speed IRs (the best achievable),
* NC: from the design-speed IRs, no correction,
* SICER: from the design-speed IRs corrected to the true speed,

and all three are evaluated against the true-speed IRs.
"""
import logging
from pathlib import Path
from typing import List, Optional, Union

import numpy
import pandas
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from .acoustics.room import (
    PRESET_SCALES,
    default_paper_geometry,
    scale_tier,
    simulate_zones,
    virtual_source_index,
)
from .acoustics.sicer import parse_antialias, sicer_grid
from .config import ConfigError, parse_configs, resolve, room_from_config
from .control.metrics import evaluate
from .control.vast import DesignConfig, RankTooLarge, design_sweep
from .readers.wav import read_excitation
from .settings import compute
from .utils import InvalidInput, NumericalFailure


logger = logging.getLogger(__name__)

CASES = ("GT", "NC", "SICER")
REPORT_COLUMNS = ["case", "rank", "metric", "domain", "freq_hz", "value_db"]
REPORT_NAME = "report.csv"
# Fixed precision keeps repeated runs byte-identical.
FLOAT_FORMAT = "%.10g"
DEFAULT_SWEEP_COUNT = 100


class ExperimentConfig(BaseModel):
    """
    preset is "paper", "desk" or the path of a room configuration file.
    ranks is an explicit list, a comma-separated string, or "sweep:<count>".
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    preset: str = "desk"
    c_design: float = 343.0
    c_true: float = 333.0
    mu: float = 1.0
    j: Optional[int] = None
    ranks: Union[List[int], str] = f"sweep:{DEFAULT_SWEEP_COUNT}"
    antialias: Union[float, str] = "auto"
    virtual_source: Optional[int] = None
    modeling_delay: int = 0
    excitation: Optional[Path] = None
    fft_len: Optional[int] = None
    output_dir: Optional[Path] = None

    @field_validator("c_design", "c_true")
    @classmethod
    def _positive_speed(cls, value):
        if not value > 0:
            raise ValueError(f"sound speeds must be positive, not {value}")
        return value

    @field_validator("mu")
    @classmethod
    def _nonnegative_mu(cls, value):
        if value < 0:
            raise ValueError(f"mu must be >= 0, not {value}")
        return value

    @field_validator("j", "virtual_source", "fft_len")
    @classmethod
    def _positive_int(cls, value):
        if value is not None and value < 1:
            raise ValueError(f"must be >= 1, not {value}")
        return value

    @field_validator("modeling_delay")
    @classmethod
    def _nonnegative_delay(cls, value):
        if value < 0:
            raise ValueError(f"modeling_delay must be >= 0, not {value}")
        return value

    @field_validator("antialias")
    @classmethod
    def _antialias(cls, value):
        return parse_antialias(value)

    @field_validator("ranks")
    @classmethod
    def _ranks(cls, value):
        # Full range checks need L·J, which is known only after simulation.
        if isinstance(value, str):
            _split_ranks(value)
        elif not value or min(value) < 1:
            raise ValueError(f"ranks must be a non-empty list of integers >= 1, not {value}")
        return value

    @model_validator(mode="after")
    def _filter_length_known(self):
        if self.j is None:
            raise ValueError(
                "The filter length j is not set; give it in the config file or "
                "as a flag (presets set it)."
            )
        return self


def _split_ranks(text):
    "Parse the rank syntax without bounds: ('sweep', count) or ('list', [..])."
    text = text.strip()
    if text.startswith("sweep"):
        _, _, count = text.partition(":")
        try:
            count = int(count) if count else DEFAULT_SWEEP_COUNT
        except ValueError:
            raise InvalidInput(f"Cannot parse the sweep count in {text!r}.") from None
        if count < 1:
            raise InvalidInput(f"The sweep count must be >= 1, not {count}.")
        return "sweep", count
    try:
        ranks = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise InvalidInput(
            f"ranks must look like 'sweep:100' or '1,5,9', not {text!r}."
        ) from None
    if not ranks or min(ranks) < 1:
        raise InvalidInput(f"ranks must be integers >= 1, not {text!r}.")
    return "list", ranks


def rank_sweep(lj, count=DEFAULT_SWEEP_COUNT):
    """
    About count ranks spread evenly over [1, LJ], rounded and de-duplicated.
    The first is 1 and, for count >= 2, the last is LJ.
    """
    if lj < 1 or count < 1:
        raise InvalidInput(f"Need LJ >= 1 and count >= 1, got {lj}, {count}.")
    return sorted(set(int(rank) for rank in numpy.round(numpy.linspace(1, lj, count))))


def parse_ranks(ranks, lj):
    "Resolve a rank specification against the problem size LJ."
    if isinstance(ranks, str):
        kind, value = _split_ranks(ranks)
        if kind == "sweep":
            return rank_sweep(lj, value)
        ranks = value
    ranks = sorted(set(int(rank) for rank in ranks))
    if ranks[0] < 1:
        raise InvalidInput(f"Ranks must be >= 1, not {ranks[0]}.")
    if ranks[-1] > lj:
        raise RankTooLarge(f"Rank {ranks[-1]} exceeds L*J={lj}.")
    return ranks


def panel_ranks(lj):
    "Ranks of the frequency-domain panels: ACC, LJ/4 and pressure matching."
    return sorted({1, max(1, lj // 4), lj})


def preset_values(preset):
    "Defaults a preset contributes before the config file and the flags."
    if preset in PRESET_SCALES:
        tier = scale_tier(PRESET_SCALES[preset])
        return {"preset": preset, "j": tier.filter_len_j, "mu": 1.0}
    room_config = parse_configs(preset)
    values = {"preset": preset}
    if "filter_len_j" in room_config:
        values["j"] = int(room_config["filter_len_j"])
    return values


def experiment_config(config_path=None, **flags):
    """
    Build an ExperimentConfig from a preset, an optional config file and
    flags, in increasing order of precedence.
    """
    file_values = parse_configs(config_path) if config_path is not None else {}
    preset = flags.get("preset") or file_values.get("preset") or "desk"
    return ExperimentConfig(**resolve(preset_values(preset), file_values, flags))


def scenario_geometry(preset, sound_speed_mps):
    "(RoomSpec, ArraySpec) of a preset name or room file at the given speed."
    if preset in PRESET_SCALES:
        return default_paper_geometry(PRESET_SCALES[preset], sound_speed_mps)
    room, array = room_from_config(parse_configs(preset))
    return room.with_sound_speed(sound_speed_mps), array


def scenario_grids(cfg):
    """
    Simulate and correct the zone grids.

    Returns ({case: (bright, dark)}, (true_bright, true_dark)).
    """
    room, array = scenario_geometry(cfg.preset, cfg.c_design)
    try:
        stale = simulate_zones(room, array)
        if cfg.c_true == cfg.c_design:
            true = stale
        else:
            true = simulate_zones(room.with_sound_speed(cfg.c_true), array)
    except InvalidInput as err:
        raise type(err)(f"Room simulation failed: {err}") from err
    try:
        corrected = tuple(
            sicer_grid(grid, cfg.c_true, antialias=cfg.antialias) for grid in stale
        )
    except InvalidInput as err:
        raise type(err)(f"SICER correction failed: {err}") from err
    return {"GT": true, "NC": stale, "SICER": corrected}, true


def _case_frame(case, rank, report, keep_td, keep_fd):
    frame = report.to_frame()
    keep = numpy.zeros(len(frame), dtype=bool)
    if keep_td:
        keep |= (frame["domain"] == "td").to_numpy()
    if keep_fd:
        keep |= (frame["domain"] == "fd").to_numpy()
    frame = frame[keep].copy()
    frame.insert(0, "rank", rank)
    frame.insert(0, "case", case)
    return frame


def sort_report(report):
    "Rows ordered by (case, rank, domain, freq_hz, metric), independent of work order."
    return report.sort_values(
        ["case", "rank", "domain", "freq_hz", "metric"],
        kind="mergesort",
        na_position="first",
    ).reset_index(drop=True)[REPORT_COLUMNS]


def evaluate_ranks(case, banks, bright_true, dark_true, ranks, panels, excitation, fft_len):
    """
    Evaluate {rank: filter bank} against the true grids in parallel.

    Time-domain rows are kept for ranks, frequency-domain rows for panels.
    """
    import dask

    wanted = sorted(set(ranks) | set(panels))
    reports = compute(
        *(
            dask.delayed(evaluate)(bright_true, dark_true, banks[rank], excitation, fft_len)
            for rank in wanted
        )
    )
    return [
        _case_frame(case, rank, report, rank in ranks, rank in panels)
        for rank, report in zip(wanted, reports)
    ]


def run_scenario(cfg):
    """
    Run the GT / NC / SICER comparison and return the long-format report.

    When cfg.output_dir is set, report.csv and the plot data are written there.
    """
    grids, (bright_true, dark_true) = scenario_grids(cfg)
    n_speakers = bright_true.n_speakers
    lj = n_speakers * cfg.j
    ranks = parse_ranks(cfg.ranks, lj)
    panels = panel_ranks(lj)
    design_cfg = DesignConfig(
        filter_len_j=cfg.j,
        mu=cfg.mu,
        rank_v=1,
        virtual_source_index=(
            cfg.virtual_source
            if cfg.virtual_source is not None
            else virtual_source_index(n_speakers)
        ),
        modeling_delay=cfg.modeling_delay,
    )
    excitation = (
        read_excitation(cfg.excitation, bright_true.sample_rate_hz)
        if cfg.excitation is not None
        else None
    )
    logger.info(
        "Scenario %s: c_design=%.3f c_true=%.3f LJ=%d, %d ranks",
        cfg.preset,
        cfg.c_design,
        cfg.c_true,
        lj,
        len(ranks),
    )
    frames = []
    for case in CASES:
        bright, dark = grids[case]
        try:
            banks = design_sweep(bright, dark, design_cfg, sorted(set(ranks) | set(panels)))
            frames.extend(
                evaluate_ranks(
                    case, banks, bright_true, dark_true, ranks, panels, excitation, cfg.fft_len
                )
            )
        except (InvalidInput, NumericalFailure) as err:
            raise type(err)(f"Case {case}: {err}") from err
        logger.info("Case %s done", case)
    report = sort_report(pandas.concat(frames, ignore_index=True))
    if cfg.output_dir is not None:
        write_report(report, Path(cfg.output_dir) / REPORT_NAME)
        emit_plot_data(report, cfg.output_dir)
    return report


def sweep_report(
    bright, dark, cfg, ranks, bright_true=None, dark_true=None, excitation=None, fft_len=None
):
    """
    TD AC and nSDP per rank for one pair of design grids, evaluated on the
    true grids (the design grids themselves by default).

    Returns a frame with columns rank, ac_db, nsdp_db.
    """
    bright_true = bright if bright_true is None else bright_true
    dark_true = dark if dark_true is None else dark_true
    ranks = parse_ranks(ranks, bright.n_speakers * cfg.filter_len_j)
    banks = design_sweep(bright, dark, cfg, ranks)
    frames = evaluate_ranks(
        "design", banks, bright_true, dark_true, ranks, [], excitation, fft_len
    )
    wide = _wide(pandas.concat(frames, ignore_index=True), ["rank"])
    return wide.sort_values("rank", kind="mergesort")[["rank", "ac_db", "nsdp_db"]]


def write_report(report, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def _wide(rows, index):
    wide = (
        rows.set_index(index + ["metric"])["value_db"]
        .unstack("metric")
        .reset_index()
        .rename(columns={"ac": "ac_db", "nsdp": "nsdp_db"})
    )
    wide.columns.name = None
    return wide


def emit_plot_data(report, directory):
    """
    Write td_vs_rank.csv (rank, case, ac_db, nsdp_db) and one
    fd_rank_<V>.csv (freq_hz, case, ac_db, nsdp_db) per frequency-domain
    panel rank. Returns the written paths.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    missing = set(REPORT_COLUMNS) - set(report.columns)
    if missing:
        raise ConfigError(f"The report lacks the columns {sorted(missing)}.")
    paths = []
    td = report[report["domain"] == "td"]
    td = _wide(td, ["rank", "case"]).sort_values(["rank", "case"], kind="mergesort")
    path = directory / "td_vs_rank.csv"
    td[["rank", "case", "ac_db", "nsdp_db"]].to_csv(
        path, index=False, float_format=FLOAT_FORMAT
    )
    paths.append(path)
    fd = report[report["domain"] == "fd"]
    for rank in sorted(fd["rank"].unique()):
        panel = _wide(fd[fd["rank"] == rank], ["freq_hz", "case"]).sort_values(
            ["case", "freq_hz"], kind="mergesort"
        )
        path = directory / f"fd_rank_{int(rank)}.csv"
        panel[["freq_hz", "case", "ac_db", "nsdp_db"]].to_csv(
            path, index=False, float_format=FLOAT_FORMAT
        )
        paths.append(path)
    logger.info("Wrote %d plot data files to %s", len(paths), directory)
    return paths
