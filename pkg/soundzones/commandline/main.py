import contextlib
import logging
from pathlib import Path
from typing import Optional

import typer


# Exit codes: 0 success, 1 invalid input, 2 numerical failure.
EXIT_INVALID_INPUT = 1
EXIT_NUMERICAL_FAILURE = 2

cli_app = typer.Typer(no_args_is_help=True)


@cli_app.callback()
def _main(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log progress at INFO level."),
):
    "Design and evaluate sound zone control filters robust to sound-speed change."
    if verbose:
        logging.basicConfig(
            level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
        )


@contextlib.contextmanager
def _exit_codes():
    "Translate library errors into the CLI's exit codes."
    from pydantic import ValidationError

    from ..utils import InvalidInput, NumericalFailure

    try:
        yield
    except (InvalidInput, ValidationError, FileNotFoundError) as err:
        typer.echo(f"Error: {err}", err=True)
        raise typer.Exit(code=EXIT_INVALID_INPUT)
    except NumericalFailure as err:
        typer.echo(f"Numerical failure: {err}", err=True)
        raise typer.Exit(code=EXIT_NUMERICAL_FAILURE)


@cli_app.command("speed")
def speed(
    temp_c: float = typer.Option(..., "--temp-c", help="Air temperature in °C."),
    rh: float = typer.Option(0.0, "--rh", help="Relative humidity in percent."),
    pressure_kpa: float = typer.Option(101.325, "--pressure-kpa"),
):
    "Print the speed of sound in m/s."
    from ..acoustics.atmo import AtmoState, speed_of_sound

    with _exit_codes():
        c = speed_of_sound(AtmoState(temp_c, rh, pressure_kpa))
    typer.echo(f"{c:.3f}")


@cli_app.command("simulate")
def simulate(
    out: Path = typer.Option(..., "--out", help="Directory to hold bright/ and dark/."),
    config: Optional[Path] = typer.Option(None, "--config", help="Room configuration file."),
    preset: Optional[str] = typer.Option(None, "--preset", help="paper or desk"),
    c: Optional[float] = typer.Option(None, "--c", help="Override the sound speed (m/s)."),
):
    "Simulate the bright and dark zone IR grids of a room."
    from ..acoustics.room import PRESET_SCALES, default_paper_geometry, simulate_zones
    from ..config import ConfigError, parse_configs, room_from_config
    from ..readers.grid import save_grid

    with _exit_codes():
        if (config is None) == (preset is None):
            raise ConfigError("Give exactly one of --config and --preset.")
        if config is not None:
            room, array = room_from_config(parse_configs(config))
        elif preset in PRESET_SCALES:
            room, array = default_paper_geometry(PRESET_SCALES[preset])
        else:
            raise ConfigError(f"Unknown preset {preset!r}; choose from {sorted(PRESET_SCALES)}.")
        if c is not None:
            room = room.with_sound_speed(c)
        bright, dark = simulate_zones(room, array)
        save_grid(bright, out / "bright")
        save_grid(dark, out / "dark")
    typer.echo(f"Wrote {out / 'bright'} and {out / 'dark'}")


@cli_app.command("import-wav")
def import_wav(
    manifest: Path = typer.Option(..., "--manifest", help="YAML listing K×L WAV files."),
    out: Path = typer.Option(..., "--out", help="Grid directory to write."),
):
    "Convert measured WAV impulse responses into a grid directory."
    from ..readers.grid import save_grid
    from ..readers.wav import grid_from_manifest

    with _exit_codes():
        grid = grid_from_manifest(manifest)
        save_grid(grid, out)
    typer.echo(f"Wrote {out} (K={grid.n_mics}, L={grid.n_speakers}, N={grid.n_samples})")


@cli_app.command("correct")
def correct(
    grid_in: Path = typer.Option(..., "--in", help="Grid directory to correct."),
    c_new: float = typer.Option(..., "--c-new", help="Target sound speed (m/s)."),
    out: Path = typer.Option(..., "--out"),
    antialias: str = typer.Option("auto", "--antialias", help="auto, off, or a cutoff in (0, 1]."),
    out_len: Optional[int] = typer.Option(None, "--out-len"),
    method: str = typer.Option("dense", "--method", help="dense or truncated"),
):
    "Resample a grid's IRs to a new speed of sound."
    from ..acoustics.sicer import sicer_grid
    from ..readers.grid import load_grid, save_grid

    with _exit_codes():
        grid = load_grid(grid_in)
        corrected = sicer_grid(
            grid, c_new, antialias=antialias, output_len=out_len, method=method
        )
        save_grid(corrected, out)
    typer.echo(f"Wrote {out}")


@cli_app.command("design")
def design(
    bz: Path = typer.Option(..., "--bz", help="Bright zone grid directory."),
    dz: Path = typer.Option(..., "--dz", help="Dark zone grid directory."),
    j: int = typer.Option(..., "--j", help="Filter length per loudspeaker."),
    out: Path = typer.Option(..., "--out", help="filters.bin to write."),
    mu: float = typer.Option(1.0, "--mu"),
    rank: int = typer.Option(1, "--rank"),
    virtual_source: Optional[int] = typer.Option(
        None, "--virtual-source", help="1-based loudspeaker index; default ceil(L/2)."
    ),
    modeling_delay: int = typer.Option(0, "--modeling-delay"),
):
    "Design a VAST control filter bank."
    from ..acoustics.room import virtual_source_index
    from ..control.vast import DesignConfig, design as vast_design
    from ..readers.grid import load_grid

    with _exit_codes():
        bright = load_grid(bz)
        dark = load_grid(dz)
        cfg = DesignConfig(
            filter_len_j=j,
            mu=mu,
            rank_v=rank,
            virtual_source_index=(
                virtual_source
                if virtual_source is not None
                else virtual_source_index(bright.n_speakers)
            ),
            modeling_delay=modeling_delay,
        )
        bank = vast_design(bright, dark, cfg)
        bank.write(out)
    typer.echo(f"Wrote {out}")


@cli_app.command("evaluate")
def evaluate(
    filters: Path = typer.Option(..., "--filters"),
    bz_true: Path = typer.Option(..., "--bz-true"),
    dz_true: Path = typer.Option(..., "--dz-true"),
    out: Path = typer.Option(..., "--out", help="CSV report to write."),
    excitation: Optional[Path] = typer.Option(None, "--excitation", help="Mono WAV."),
    fft_len: Optional[int] = typer.Option(None, "--fft-len"),
):
    "Evaluate a filter bank on (true) zone IRs."
    from ..control.metrics import evaluate as evaluate_filters
    from ..experiments import write_report
    from ..readers.grid import load_grid
    from ..readers.wav import read_excitation
    from ..structures.filters import ControlFilterBank

    with _exit_codes():
        bank = ControlFilterBank.read(filters)
        bright = load_grid(bz_true)
        dark = load_grid(dz_true)
        signal = (
            read_excitation(excitation, bright.sample_rate_hz)
            if excitation is not None
            else None
        )
        report = evaluate_filters(bright, dark, bank, excitation=signal, fft_len=fft_len)
        write_report(report.to_frame(), out)
    typer.echo(f"TD AC {report.td_ac_db:.3f} dB, TD nSDP {report.td_nsdp_db:.3f} dB")


@cli_app.command("sweep-ranks")
def sweep_ranks(
    bz: Path = typer.Option(..., "--bz"),
    dz: Path = typer.Option(..., "--dz"),
    j: int = typer.Option(..., "--j"),
    out: Path = typer.Option(..., "--out", help="CSV with rank, ac_db, nsdp_db."),
    bz_true: Optional[Path] = typer.Option(None, "--bz-true", help="Default: --bz."),
    dz_true: Optional[Path] = typer.Option(None, "--dz-true", help="Default: --dz."),
    mu: float = typer.Option(1.0, "--mu"),
    ranks: str = typer.Option("sweep:100", "--ranks", help="sweep:<count> or 1,5,9"),
    virtual_source: Optional[int] = typer.Option(None, "--virtual-source"),
    modeling_delay: int = typer.Option(0, "--modeling-delay"),
):
    "TD metrics of VAST filters over a range of ranks."
    from ..acoustics.room import virtual_source_index
    from ..control.vast import DesignConfig
    from ..experiments import sweep_report, write_report
    from ..readers.grid import load_grid

    with _exit_codes():
        bright = load_grid(bz)
        dark = load_grid(dz)
        cfg = DesignConfig(
            filter_len_j=j,
            mu=mu,
            virtual_source_index=(
                virtual_source
                if virtual_source is not None
                else virtual_source_index(bright.n_speakers)
            ),
            modeling_delay=modeling_delay,
        )
        report = sweep_report(
            bright,
            dark,
            cfg,
            ranks,
            bright_true=load_grid(bz_true) if bz_true is not None else None,
            dark_true=load_grid(dz_true) if dz_true is not None else None,
        )
        write_report(report, out)
    typer.echo(f"Wrote {len(report)} ranks to {out}")


@cli_app.command("scenario")
def scenario(
    out: Path = typer.Option(..., "--out", help="Directory for report.csv and plot data."),
    config: Optional[Path] = typer.Option(None, "--config", help="Experiment config file."),
    preset: Optional[str] = typer.Option(None, "--preset", help="paper, desk or a room file."),
    c_design: Optional[float] = typer.Option(None, "--c-design"),
    c_true: Optional[float] = typer.Option(None, "--c-true"),
    mu: Optional[float] = typer.Option(None, "--mu"),
    j: Optional[int] = typer.Option(None, "--j"),
    ranks: Optional[str] = typer.Option(None, "--ranks", help="sweep:<count> or 1,5,9"),
    antialias: Optional[str] = typer.Option(None, "--antialias"),
    virtual_source: Optional[int] = typer.Option(None, "--virtual-source"),
    modeling_delay: Optional[int] = typer.Option(None, "--modeling-delay"),
    excitation: Optional[Path] = typer.Option(None, "--excitation"),
    fft_len: Optional[int] = typer.Option(None, "--fft-len"),
    seed: Optional[int] = typer.Option(
        None, "--seed", help="Accepted for scripting; the pipeline is deterministic."
    ),
):
    "Compare GT, NC and SICER filters across VAST ranks."
    from ..experiments import REPORT_NAME, experiment_config, run_scenario

    with _exit_codes():
        cfg = experiment_config(
            config,
            preset=preset,
            c_design=c_design,
            c_true=c_true,
            mu=mu,
            j=j,
            ranks=ranks,
            antialias=antialias,
            virtual_source=virtual_source,
            modeling_delay=modeling_delay,
            excitation=excitation,
            fft_len=fft_len,
            output_dir=out,
        )
        report = run_scenario(cfg)
    typer.echo(f"Wrote {len(report)} rows to {out / REPORT_NAME}")


main = cli_app
if __name__ == "__main__":
    main()
