"""Command line front end: run, replay, serve, demo."""

from __future__ import annotations

import json
import sys

import click

from . import sim, telemetry


def _apply_overrides(data: dict, dt: float | None, duration: float | None,
                     seed: int | None) -> dict:
    if dt is not None:
        data["dt"] = dt
    if duration is not None:
        data["duration"] = duration
    if seed is not None:
        data["seed"] = seed
    return data


def _load(path: str, dt, duration, seed) -> sim.Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise click.ClickException(f"{path}:{e.lineno}: {e.msg}") from e
    try:
        return sim.load_scenario(_apply_overrides(data, dt, duration, seed))
    except sim.ScenarioError as e:
        raise click.ClickException(str(e)) from e


def _load_demo(name: str, dt, duration, seed) -> sim.Scenario:
    try:
        base = sim.load_packaged_scenario(name)
    except sim.ScenarioError as e:
        raise click.ClickException(str(e)) from e
    data = _apply_overrides(dict(base.raw), dt, duration, seed)
    return sim.load_scenario(data)


def _run_to(scenario: sim.Scenario, out: str) -> None:
    click.echo(f"simulating {scenario.name!r}: "
               f"{scenario.duration} s at dt={scenario.dt:.6f}")
    try:
        stats = sim.run(scenario, out)
    except Exception as e:
        raise click.ClickException(f"simulation aborted: {e}") from e
    click.echo(
        f"wrote {out}: {stats['frames']} frames, "
        f"mean {stats['mean_step_ms']:.2f} ms/step, "
        f"max {stats['max_step_ms']:.2f} ms, "
        f"contacts {stats['contacts_total']}"
    )
    click.echo(f"hash {stats['hash']}")


_dt_opt = click.option("--dt", type=float, default=None,
                       help="Timestep override in seconds.")
_duration_opt = click.option("--duration", type=float, default=None,
                             help="Run length override in seconds.")
_seed_opt = click.option("--seed", type=int, default=None,
                         help="Seed override.")


@click.group()
@click.version_option(package_name="reflexrig")
def main() -> None:
    """Hybrid kinematic/physical character runs, recorded or live."""


@main.command()
@click.argument("scenario", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", default="run.ndjson", show_default=True,
              help="Telemetry output path.")
@_dt_opt
@_duration_opt
@_seed_opt
def run(scenario: str, out: str, dt, duration, seed) -> None:
    """Simulate a scenario file to a telemetry file."""
    _run_to(_load(scenario, dt, duration, seed), out)


@main.command()
@click.argument("telemetry_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--verify", is_flag=True,
              help="Re-simulate from the header and compare hashes.")
def replay(telemetry_file: str, verify: bool) -> None:
    """Inspect a telemetry file; optionally verify it reproduces."""
    try:
        header, frames, summary = telemetry.load_run(telemetry_file)
    except telemetry.TelemetryError as e:
        raise click.ClickException(str(e)) from e
    name = header.get("scenario", {}).get("name", "?")
    click.echo(f"scenario {name!r}: {len(frames)} frames")
    if summary is not None:
        for key in ("mean_step_ms", "max_step_ms", "contacts_total", "fault"):
            if key in summary:
                click.echo(f"  {key}: {summary[key]}")
    if not verify:
        return
    try:
        ok, stored, fresh = sim.verify_replay(telemetry_file)
    except (telemetry.TelemetryError, sim.ScenarioError) as e:
        raise click.ClickException(str(e)) from e
    if ok:
        click.echo(f"verify OK {stored}")
    else:
        click.echo(f"verify FAILED\n  recorded   {stored}\n  recomputed {fresh}")
        sys.exit(1)


@main.command()
@click.argument("scenario", type=click.Path(exists=True, dir_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8765, show_default=True, type=int)
@click.option("--pace", default=1.0, show_default=True, type=float,
              help="Sim-to-wall-clock rate; 0 runs unpaced.")
@click.option("--record", type=click.Path(dir_okay=False), default=None,
              help="Also write telemetry to this path.")
@_dt_opt
@_duration_opt
@_seed_opt
def serve(scenario: str, host: str, port: int, pace: float, record,
          dt, duration, seed) -> None:
    """Host a live-steered session on a WebSocket."""
    from . import server

    sc = _load(scenario, dt, duration, seed)
    try:
        click.echo(f"serving {sc.name!r} on ws://{host}:{port}/ws")
        server.serve(sc, host=host, port=port, pace=pace, record_path=record)
    except (sim.ScenarioError, ValueError) as e:
        raise click.ClickException(str(e)) from e


@main.command()
@click.argument("name", required=False)
@click.option("-o", "--out", default=None,
              help="Telemetry output path [default: <name>.ndjson].")
@click.option("--list", "list_only", is_flag=True, help="List bundled demos.")
@_dt_opt
@_duration_opt
@_seed_opt
def demo(name, out, list_only, dt, duration, seed) -> None:
    """Run one of the bundled demo scenarios."""
    if list_only or name is None:
        for n in sim.packaged_scenarios():
            click.echo(n)
        if name is None and not list_only:
            raise click.ClickException("pick a demo name (or --list)")
        return
    sc = _load_demo(name, dt, duration, seed)
    _run_to(sc, out if out is not None else f"{name}.ndjson")


if __name__ == "__main__":
    main()
