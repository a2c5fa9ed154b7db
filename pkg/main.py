import argparse  # command-line surface
import logging
import os
import sys
import traceback

from core.errors import ConfigError, PlatoonScopeError
from core.logger import Logger, configure_console
from core.settings_manager import SettingsManager

console = logging.getLogger("platoonscope")

# Run log used by the exception hook; set once the output directory is known
_run_log = None


def handle_exception(exc_type, exc_value, exc_traceback):
    """Global exception handler.

    Assigned to `sys.excepthook` so an unexpected crash still leaves its
    formatted traceback in the run log before the process exits with 1.
    """
    error_msg = "".join(traceback.format_exception(exc_type, exc_value, exc_traceback))
    if _run_log is not None:
        try:
            _run_log.log_error(error_msg, action_type="Crash")
        except OSError:
            pass
    sys.stderr.write(f"Unhandled exception: {error_msg}")


def check_requirements(out_dir):
    """Ensure the output directory exists before anything writes to it."""
    os.makedirs(out_dir, exist_ok=True)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="platoonscope",
        description="Detect spontaneous truck platoons in GPS trajectories and cost their fuel savings.",
    )
    parser.add_argument("--config", default="settings.json", help="settings JSON file")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (default: physical cores)")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_network(p):
        p.add_argument("--network", default=None, help="directory holding nodes.csv and edges.csv")
        return p

    match = with_network(sub.add_parser("match", help="map-match raw trajectories"))
    match.add_argument("--trajectories", default=None, help="raw trajectory CSV")
    with_network(sub.add_parser("resample", help="resample matched points onto the time grid"))
    with_network(sub.add_parser("cluster", help="detect co-driving sets per timestep"))
    sub.add_parser("mine", help="mine closed platoon patterns")
    sub.add_parser("fuel", help="estimate fuel savings of the mined patterns")
    with_network(sub.add_parser("report", help="fleet metrics and segment hotspots"))
    run = with_network(sub.add_parser("run", help="every stage in order"))
    run.add_argument("--trajectories", default=None, help="raw trajectory CSV")

    synth = sub.add_parser("synth", help="write a synthetic scenario")
    synth.add_argument("--scenario", default=None, help="scenario JSON overriding the synth settings")
    synth.add_argument("--seed", type=int, default=None)

    fd = with_network(sub.add_parser("fd", help="explain the following distance of two positions"))
    fd.add_argument("a", help="segment_id:r:dir of the first truck")
    fd.add_argument("b", help="segment_id:r:dir of the second truck")

    config = sub.add_parser("config", help="print the effective configuration")
    config.add_argument("--show", action="store_true", help="include provenance tags")
    config.add_argument("--write", default=None, help="save the effective settings to this path")
    return parser


def load_settings(args):
    settings = SettingsManager(args.config)
    settings.load()
    if args.threads is not None:
        settings.set("pipeline.threads", args.threads)
    if args.out is not None:
        settings.set("pipeline.out_dir", args.out)
    if getattr(args, "network", None):
        settings.set("pipeline.network_dir", args.network)
    if getattr(args, "trajectories", None):
        settings.set("pipeline.trajectories", args.trajectories)
    return settings


def _parse_position(text):
    from core.road_graph import Direction

    try:
        seg_id, r, direction = text.rsplit(":", 2)
        return seg_id, float(r), Direction(int(direction))
    except ValueError:
        raise PlatoonScopeError(f"expected segment_id:r:dir, got {text!r}") from None


def cmd_config(args, settings):
    for key, value, tag in settings.provenance_rows():
        print(f"{key} = {value!r}" + (f"  [{tag}]" if args.show else ""))
    print(f"# config hash {settings.config_hash()}")
    if args.write:
        settings.save(args.write)
    return 0


def cmd_synth(args, settings, out_dir):
    import json

    from core.synth import ScenarioSpec, write_scenario

    data = dict(settings.get("synth"))
    if args.scenario:
        try:
            with open(args.scenario, "r", encoding="utf-8") as f:
                data.update(json.load(f))
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot read scenario {args.scenario}: {e}") from e
    if args.seed is not None:
        data["seed"] = args.seed
    spec = ScenarioSpec.from_dict(data)
    _, trajectories, truth = write_scenario(spec, out_dir, settings.get("pipeline.dt_grid_s"))
    console.info("Scenario written to %s: %d trucks, %d planted patterns",
                 out_dir, len(trajectories), len(truth.patterns))
    return 0


def cmd_fd(args, config):
    from core.following_distance import SnapshotTruck, following_verdict
    from core.map_matcher import MatchedPoint
    from core.pipeline import Pipeline

    graph = Pipeline(config, run_log=_run_log).graph
    trucks = []
    for name, text in (("a", args.a), ("b", args.b)):
        seg_id, r, direction = _parse_position(text)
        if seg_id not in graph.segments:
            raise PlatoonScopeError(f"unknown segment {seg_id!r}")
        point = MatchedPoint(name, 0.0, seg_id, r, direction, graph.interpolate(seg_id, r))
        trucks.append(SnapshotTruck.from_matched(point, graph))
    verdict = following_verdict(trucks[0], trucks[1], graph, config.cluster.eps_m, config.cluster.ete_cutoff_m)
    print(f"FD = {verdict.distance_m:.3f} m" if verdict.following else "FD = inf")
    if verdict.following:
        print(f"leader {verdict.leader}, follower {verdict.follower}")
    for reason in verdict.reasons:
        print(f"  - {reason}")
    return 0


def main(argv=None):
    global _run_log

    sys.excepthook = handle_exception
    args = build_parser().parse_args(argv)
    configure_console(args.verbose)

    try:
        settings = load_settings(args)
        if args.command == "config":
            return cmd_config(args, settings)

        out_dir = settings.get("pipeline.out_dir")
        check_requirements(out_dir)
        if args.command == "synth":
            return cmd_synth(args, settings, out_dir)

        from core.pipeline import RUN_LOG, Pipeline

        _run_log = Logger(os.path.join(out_dir, RUN_LOG))
        config = settings.to_config()
        if args.command == "fd":
            return cmd_fd(args, config)

        pipeline = Pipeline(config, run_log=_run_log, config_hash=settings.config_hash())
        if args.command == "run":
            pipeline.run()
            console.info("Run complete, artifacts in %s", out_dir)
        else:
            pipeline.run_stage(args.command)
        return 0
    except PlatoonScopeError as e:
        console.error("%s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
