"""Command-line interface for the Nelson infrared simulator."""
import json
import sys
import traceback
from pathlib import Path
from typing import Optional

import click
import numpy as np
from dotenv import load_dotenv

from . import console
from .artifact_store import (
    CHECKPOINT_MAGIC,
    GROUND_STATE_MAGIC,
    KERNEL_MAGIC,
    csv_text,
    read_binary,
    write_binary,
)
from .config_parser import ConfigParser, build_config
from .errors import SimulationError
from .field_gaussian import FieldSampleSpec, GaussianTestFunction, g_hat, sample_field_at_times
from .kernels import KernelTable, build_kernel_table, pair_kernel_momentum
from .models import ModelParams, PathConfig, PotentialSpec
from .path_gibbs import make_stream
from .pipeline import EXPERIMENTS, ExperimentPipeline
from .schrodinger import solve_ground_state

# Load environment variables from .env file (NIRSIM_THREADS)
load_dotenv()

EXIT_ASSERT = 2


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
        console.ok(f"Written: {out}")
    else:
        click.echo(text, nl=False)


def _guard(action, assert_checks: bool = False):
    """Run an action, mapping errors to exit code 1 and failed checks (with --assert) to 2."""
    try:
        summary = action()
    except FileNotFoundError as e:
        click.echo(click.style(f"Error: {e}", fg='red'), err=True)
        sys.exit(1)
    except ValueError as e:
        click.echo(click.style(f"Validation Error: {e}", fg='red'), err=True)
        sys.exit(1)
    except SimulationError as e:
        click.echo(click.style(f"Simulation Error: {e}", fg='red'), err=True)
        sys.exit(1)
    except Exception as e:
        click.echo(click.style(f"Pipeline Error: {e}", fg='red'), err=True)
        traceback.print_exc()
        sys.exit(1)

    if isinstance(summary, dict) and "acceptance" in summary:
        if assert_checks and not summary["acceptance"]["overall_passed"]:
            click.echo(click.style("✗ Acceptance checks failed", fg='red', bold=True), err=True)
            sys.exit(EXIT_ASSERT)
    return summary


def _path_from_checkpoint(checkpoint: Optional[str], cfg: PathConfig) -> np.ndarray:
    if checkpoint is None:
        return np.zeros((cfg.n_beads, cfg.d))
    _, arrays = read_binary(checkpoint, CHECKPOINT_MAGIC)
    path = arrays["path"]
    if path.shape != (cfg.n_beads, cfg.d):
        raise ValueError(f"checkpoint path has shape {path.shape}, grid needs ({cfg.n_beads}, {cfg.d})")
    return path


@click.group()
@click.option('--quiet', is_flag=True, help='Silence progress output (warnings still print)')
def main(quiet: bool):
    """
    Nelson Infrared Simulator

    Path-integral Monte Carlo for the massless Nelson model.

    Example:
        python -m src run experiments/nelson_d3/run.cfg divergence
    """
    console.set_quiet(quiet)


@main.command()
@click.argument('config_path', type=click.Path(exists=True, dir_okay=False))
@click.argument('experiment', type=str)
@click.option('--output', default=None, help='Output root (default: output_dir from the config)')
@click.option('--assert', 'assert_checks', is_flag=True, help='Exit with code 2 when an acceptance check fails')
def run(config_path: str, experiment: str, output: Optional[str], assert_checks: bool):
    """
    Run EXPERIMENT with the configuration in CONFIG_PATH.

    EXPERIMENT is one of kernels, ir-scan, sample, divergence, convergence,
    localization, decay, spectral.
    """
    _guard(lambda: ExperimentPipeline(Path(config_path), output).run(experiment), assert_checks)
    click.echo(click.style("\n✓ Experiment completed successfully!", fg='green', bold=True))


@main.command()
@click.argument('name', type=click.Choice(EXPERIMENTS))
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), default=None,
              help='Config file (default: built-in defaults)')
@click.option('--output', default=None, help='Output root')
@click.option('--assert', 'assert_checks', is_flag=True, help='Exit with code 2 when an acceptance check fails')
def diagnose(name: str, config_path: Optional[str], output: Optional[str], assert_checks: bool):
    """Run the diagnostic NAME and emit its CSV and summary.json."""
    def action():
        cfg = ConfigParser.parse(config_path) if config_path else build_config({})
        return ExperimentPipeline(cfg, output).run(name)

    _guard(action, assert_checks)


@main.command()
@click.option('--T', 'T', type=float, default=8.0, help='Half-width of the time window')
@click.option('--dt', type=float, default=0.05, help='Time step')
@click.option('--d', 'd', type=int, default=3, help='Dimension')
@click.option('--e', 'e', type=float, default=0.3, help='Coupling')
@click.option('--sigma', type=float, default=1.0, help='Charge width')
@click.option('--alpha', type=float, default=2.0, help='Potential exponent')
@click.option('--chains', type=int, default=4)
@click.option('--steps', type=int, default=4000)
@click.option('--seed', type=int, default=12345)
@click.option('--out', default='output', help='Output root')
@click.option('--assert', 'assert_checks', is_flag=True, help='Exit with code 2 when an acceptance check fails')
def sample(T, dt, d, e, sigma, alpha, chains, steps, seed, out, assert_checks):
    """Sample the finite-volume Gibbs measure and report path observables."""
    def action():
        cfg = build_config({
            "T": T, "dt": dt, "d": d, "e": e, "sigma": sigma, "pot_alpha": alpha,
            "chains": chains, "steps": steps, "seed": seed, "burn_in": min(1000, steps // 4),
            "output_dir": out,
        })
        return ExperimentPipeline(cfg).run("sample")

    _guard(action, assert_checks)


@main.group()
def kernels():
    """Pair-potential tables and probes."""


def _model_options(f):
    for option in reversed([
        click.option('--d', 'd', type=int, default=3, help='Dimension'),
        click.option('--e', 'e', type=float, default=0.3, help='Coupling'),
        click.option('--sigma', type=float, default=1.0, help='Charge width'),
    ]):
        f = option(f)
    return f


@kernels.command("table")
@_model_options
@click.option('--r-max', type=float, default=10.0)
@click.option('--t-max', type=float, default=64.0)
@click.option('--resolution', type=int, default=256)
@click.option('--tol', type=float, default=1e-6)
@click.option('--out', required=True, help='NIRK1 file to write')
def kernels_table(d, e, sigma, r_max, t_max, resolution, tol, out):
    """Tabulate W(r, t) and write it as NIRK1."""
    def action():
        table = build_kernel_table(ModelParams(d=d, e=e, sigma=sigma), r_max, t_max, resolution, tol)
        header, arrays = table.to_arrays()
        write_binary(out, KERNEL_MAGIC, header, arrays)
        console.ok(f"Kernel table written: {out} (probe error {table.max_probe_error:.2e})")

    _guard(action)


@kernels.command("probe")
@_model_options
@click.option('--r', 'r_list', default='0,0.5,1,2,4', help='Comma-separated separations')
@click.option('--t', 't_list', default='0,0.5,1,2,4', help='Comma-separated time gaps')
@click.option('--table', 'table_path', type=click.Path(exists=True, dir_okay=False), default=None,
              help='Interpolate from a NIRK1 table instead of direct quadrature')
@click.option('--out', default=None, help='CSV file (default: stdout)')
def kernels_probe(d, e, sigma, r_list, t_list, table_path, out):
    """Emit CSV rows (r, t, W)."""
    def action():
        params = ModelParams(d=d, e=e, sigma=sigma)
        if table_path:
            table = KernelTable.from_arrays(*read_binary(table_path, KERNEL_MAGIC))
            evaluate = lambda r, t: float(table(r, t))
        else:
            evaluate = lambda r, t: pair_kernel_momentum(r, t, params)
        rows = [(r, t, evaluate(r, t)) for r in _floats(r_list) for t in _floats(t_list)]
        _emit(csv_text(("r", "t", "W"), rows), out)

    _guard(action)


@main.group()
def schrodinger():
    """Radial ground state of the particle Hamiltonian."""


@schrodinger.command("solve")
@click.option('--d', 'd', type=int, default=3)
@click.option('--C', 'pot_C', type=float, default=1.0, help='Potential scale')
@click.option('--alpha', type=float, default=2.0, help='Potential exponent')
@click.option('--grid-points', type=int, default=2000)
@click.option('--out', default=None, help='NIRG1 file to write')
def schrodinger_solve(d, pot_C, alpha, grid_points, out):
    """Print {E_p, r_max, grid step, residual} as JSON."""
    def action():
        gs = solve_ground_state(PotentialSpec(pot_C=pot_C, pot_alpha=alpha), d, grid_points)
        if out:
            header, arrays = gs.to_arrays()
            write_binary(out, GROUND_STATE_MAGIC, header, arrays)
        click.echo(json.dumps({"E_p": gs.E_p, "r_max": gs.r_max, "step": gs.step, "residual": gs.residual},
                              indent=2))

    _guard(action)


@main.group()
def field():
    """Conditional field means and Gaussian field samples (d = 3)."""


def _field_options(f):
    for option in reversed([
        click.option('--T', 'T', type=float, default=8.0),
        click.option('--dt', type=float, default=0.05),
        click.option('--e', 'e', type=float, default=0.3),
        click.option('--sigma', type=float, default=1.0),
        click.option('--checkpoint', type=click.Path(exists=True, dir_okay=False), default=None,
                     help='NIRC1 checkpoint whose path is used (default: q = 0)'),
        click.option('--out', default=None, help='CSV file (default: stdout)'),
    ]):
        f = option(f)
    return f


@field.command("mean")
@_field_options
@click.option('--k', 'k_list', default='0.1,0.2,0.5,1,2,5', help='|k| values along the first axis')
@click.option('--t', 't', type=float, default=0.0, help='Bead time')
def field_mean_cmd(T, dt, e, sigma, checkpoint, out, k_list, t):
    """Emit CSV (k, Re g, Im g) of the conditional mean."""
    def action():
        params = ModelParams(d=3, e=e, sigma=sigma)
        cfg = PathConfig(T=T, dt=dt, d=3)
        path = _path_from_checkpoint(checkpoint, cfg)
        ks = np.array([[k, 0.0, 0.0] for k in _floats(k_list)])
        values = g_hat(ks, t, path, cfg, params)
        rows = [(float(k[0]), float(v.real), float(v.imag)) for k, v in zip(ks, values)]
        _emit(csv_text(("k", "re_g", "im_g"), rows), out)

    _guard(action)


@field.command("sample")
@_field_options
@click.option('--times', default='0,1,2', help='Comma-separated bead times')
@click.option('--width', type=float, default=1.0, help='Width of the Gaussian test function')
@click.option('--count', type=int, default=100)
@click.option('--seed', type=int, default=12345)
def field_sample_cmd(T, dt, e, sigma, checkpoint, out, times, width, count, seed):
    """Emit joint field samples with a header naming test functions and times."""
    def action():
        params = ModelParams(d=3, e=e, sigma=sigma)
        cfg = PathConfig(T=T, dt=dt, d=3)
        path = _path_from_checkpoint(checkpoint, cfg)
        t_list = _floats(times)
        spec = FieldSampleSpec(tuple(GaussianTestFunction(width) for _ in t_list), tuple(t_list))
        draws = sample_field_at_times(spec, path, cfg, params, make_stream(seed), count)
        _emit(csv_text(spec.names, [tuple(map(float, row)) for row in draws]), out)

    _guard(action)


if __name__ == '__main__':
    main()
