"""Command-line front end.

Subcommands: `keyrate` (one configuration, printed term breakdown),
`sweep-distance` and `sweep-blocksize` (CSV output), `bounds-demo`
(pmf/CDF comparison table), `optimize` (best parameters at one distance)
and `mc-run` (seeded Monte Carlo rounds with containment diagnostics).

Configuration is a flat ``key = value`` file with ``#`` comments; unknown
keys are rejected with the offending line number. Exit codes: 0 success,
1 protocol abort, 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields, replace

from .channel import (
    ChannelConfig,
    ConfigError,
    ProtocolConfig,
    expected_counts,
    photon_number_yield,
    sample_counts,
)
from .decoy import estimate_all
from .experiments import (
    DEFAULT_DISTANCES_KM,
    DEFAULT_TIMES_S,
    OptimizationSpec,
    blocksize_sweep,
    bounds_demo,
    distance_sweep,
    evaluate_config,
    optimize_parameters,
    write_sweep_csv,
)
from .channel import EstimationAbort
from .keyrate import protocol_report

EXIT_OK = 0
EXIT_ABORT = 1
EXIT_CONFIG = 2


@dataclass(frozen=True)
class RunConfig:
    """Flat view of the channel, protocol, optimizer and sweep settings."""

    # channel
    fiber_length_km: float = 50.0
    attenuation_db_per_km: float = 0.2
    detector_efficiency: float = 0.225
    dark_count_prob: float = 2.1e-5
    afterpulse_prob: float = 0.05
    receiver_loss_db: float = 3.0
    misalignment_error: float = 0.015
    num_detectors: int = 2
    # protocol
    clock_rate_hz: float = 1e9
    acquisition_time_s: float = 1200.0
    p_x: float = 0.036
    p_signal: float = 0.935
    p_decoy: float = 0.028
    intensity_signal: float = 0.415
    intensity_decoy: float = 0.05
    intensity_vacuum: float = 1e-4
    gamma: float = 1.0
    eps_sec: float = 1e-10
    eps_ver: float = 1e-15
    q_tol_cap: float = 0.5
    photon_cutoff: int = 9
    ec_efficiency: float = 1.16
    z1_dominance_ratio: float = 10.0
    # optimizer
    opt_seed: int = 0
    opt_max_evals: int = 2500
    opt_starts: int = 8
    opt_box_p_x: tuple[float, float] = (0.005, 0.5)
    opt_box_p_u: tuple[float, float] = (0.2, 0.99)
    opt_box_p_v: tuple[float, float] = (0.005, 0.5)
    opt_box_u: tuple[float, float] = (0.1, 0.9)
    opt_box_v: tuple[float, float] = (0.01, 0.2)
    # sweeps
    sweep_distances_km: tuple[float, ...] = DEFAULT_DISTANCES_KM
    sweep_times_s: tuple[float, ...] = DEFAULT_TIMES_S

    def channel(self) -> ChannelConfig:
        return ChannelConfig(
            fiber_length_km=self.fiber_length_km,
            attenuation_db_per_km=self.attenuation_db_per_km,
            detector_efficiency=self.detector_efficiency,
            dark_count_prob=self.dark_count_prob,
            afterpulse_prob=self.afterpulse_prob,
            receiver_loss_db=self.receiver_loss_db,
            misalignment_error=self.misalignment_error,
            num_detectors=self.num_detectors,
        )

    def protocol(self) -> ProtocolConfig:
        p_vacuum = 1.0 - self.p_signal - self.p_decoy
        return ProtocolConfig(
            clock_rate_hz=self.clock_rate_hz,
            acquisition_time_s=self.acquisition_time_s,
            p_z=1.0 - self.p_x,
            class_probs=(self.p_signal, self.p_decoy, p_vacuum),
            intensities=(
                self.intensity_signal,
                self.intensity_decoy,
                self.intensity_vacuum,
            ),
            gamma=self.gamma,
            eps_sec=self.eps_sec,
            eps_ver=self.eps_ver,
            q_tol_cap=self.q_tol_cap,
            photon_cutoff=self.photon_cutoff,
            ec_efficiency=self.ec_efficiency,
            z1_dominance_ratio=self.z1_dominance_ratio,
        )

    def optimization(self) -> OptimizationSpec:
        return OptimizationSpec(
            boxes={
                "p_x": self.opt_box_p_x,
                "p_u": self.opt_box_p_u,
                "p_v": self.opt_box_p_v,
                "u": self.opt_box_u,
                "v": self.opt_box_v,
            },
            seed=self.opt_seed,
            max_evals=self.opt_max_evals,
            n_starts=self.opt_starts,
        )

    def render(self) -> str:
        """Effective configuration as a parseable key = value document."""
        lines = ["# finitekey configuration"]
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                text = ",".join(repr(v) for v in value)
            else:
                text = repr(value)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"


def _parse_value(name: str, raw: str, kind) -> object:
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    # tuple of floats
    parts = [p for p in raw.split(",") if p.strip()]
    return tuple(float(p) for p in parts)


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    """Parse a flat key = value document into a RunConfig.

    Raises ConfigError with a line-precise message on unknown keys,
    malformed lines or unparseable values; the RunConfig is built only
    after the whole document validated, so a rejected file leaves no
    partially applied state.
    """
    defaults = RunConfig()
    kinds = {}
    for f in fields(RunConfig):
        default = getattr(defaults, f.name)
        kinds[f.name] = tuple if isinstance(default, tuple) else type(default)
    known = set(kinds)
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _parse_value(key, raw, kinds[key])
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    return RunConfig(**values)


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return parse_config_text(text, source=path)


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    updates = {}
    if getattr(args, "distance", None) is not None:
        updates["fiber_length_km"] = args.distance
    if getattr(args, "time", None) is not None:
        updates["acquisition_time_s"] = args.time
    if getattr(args, "eps_sec", None) is not None:
        updates["eps_sec"] = args.eps_sec
    if getattr(args, "eps_ver", None) is not None:
        updates["eps_ver"] = args.eps_ver
    if getattr(args, "seed", None) is not None:
        updates["opt_seed"] = args.seed
    return replace(cfg, **updates) if updates else cfg


def _cmd_keyrate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    report = evaluate_config(cfg.channel(), cfg.protocol())
    text = report.to_text()
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return EXIT_ABORT if report.abort else EXIT_OK


def _cmd_sweep_distance(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    result = distance_sweep(
        cfg.sweep_distances_km, cfg.channel(), cfg.protocol(), cfg.optimization()
    )
    out = args.out or "distance_sweep.csv"
    write_sweep_csv(result, out)
    for point in result.points:
        print(
            f"distance_km={point.axis_value!r} rate_bps={point.report.rate_bps!r} "
            f"n_sec={point.report.n_sec}"
        )
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_sweep_blocksize(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    result = blocksize_sweep(
        cfg.sweep_times_s, cfg.channel(), cfg.protocol(), cfg.optimization()
    )
    out = args.out or "blocksize_sweep.csv"
    write_sweep_csv(result, out)
    for point in result.points:
        print(
            f"time_s={point.axis_value!r} block={point.report.block_size} "
            f"rate_bps={point.report.rate_bps!r} q_tol_x={point.report.q_tol_x!r}"
        )
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_bounds_demo(args) -> int:
    table = bounds_demo(args.N, args.n, args.K, args.eps)
    out = args.out or "bounds_demo.csv"
    table.write_csv(out)
    print(f"mode = {table.mode}")
    print(f"selected_lower_bound_branch = {table.lower_bound_source}")
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_optimize(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    outcome = optimize_parameters(cfg.channel(), cfg.protocol(), cfg.optimization())
    best = outcome.config
    print(f"rate_bps = {outcome.report.rate_bps!r}")
    print(f"n_sec = {outcome.report.n_sec}")
    print(f"p_x = {best.p_x!r}")
    print(f"p_signal = {best.class_probs[0]!r}")
    print(f"p_decoy = {best.class_probs[1]!r}")
    print(f"p_vacuum = {best.class_probs[2]!r}")
    print(f"intensity_signal = {best.intensities[0]!r}")
    print(f"intensity_decoy = {best.intensities[1]!r}")
    print(f"evaluations = {outcome.evaluations}")
    return EXIT_ABORT if outcome.report.abort else EXIT_OK


def _cmd_mc_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    ch, pr = cfg.channel(), cfg.protocol()
    y1_true = photon_number_yield(ch, 1)
    aborted = 0
    for i in range(args.repeats):
        seed = args.seed + i
        counts = sample_counts(ch, pr, seed)
        contained = ""
        try:
            est = estimate_all(counts, pr)
        except EstimationAbort as exc:
            report = protocol_report(counts, pr)
            print(f"round={i} seed={seed} abort=True reason={exc.reason!r}")
            aborted += 1
            continue
        report = protocol_report(counts, pr)
        z = est.z_basis
        contained = z.y1_low <= y1_true <= z.y1_high
        if report.abort:
            aborted += 1
        print(
            f"round={i} seed={seed} abort={report.abort} "
            f"y1_z_true={y1_true!r} y1_z_low={z.y1_low!r} y1_z_high={z.y1_high!r} "
            f"contained={contained} n_sec={report.n_sec}"
        )
    print(f"rounds={args.repeats} aborted={aborted} "
          f"p_abort_estimate={aborted / args.repeats!r}")
    return EXIT_ABORT if aborted else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="finitekey",
        description="Finite-key security calculator for decoy-state BB84",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--distance", type=float, help="fiber length in km")
        p.add_argument("--time", type=float, help="acquisition time in seconds")
        p.add_argument("--seed", type=int, help="random/optimizer seed")
        p.add_argument("--out", help="output file path")
        p.add_argument("--eps-sec", dest="eps_sec", type=float,
                       help="secrecy failure budget")
        p.add_argument("--eps-ver", dest="eps_ver", type=float,
                       help="verification failure budget")

    common(sub.add_parser("keyrate", help="key-length report for one configuration"))
    common(sub.add_parser("sweep-distance", help="rate versus fiber length (CSV)"))
    common(sub.add_parser("sweep-blocksize", help="rate versus block size (CSV)"))
    common(sub.add_parser("optimize", help="optimize protocol parameters"))

    demo = sub.add_parser("bounds-demo", help="pmf/CDF bound comparison table (CSV)")
    common(demo)
    demo.add_argument("--N", type=int, required=True, help="population size")
    demo.add_argument("--n", type=int, required=True, help="number of draws")
    demo.add_argument("--K", type=int, required=True, help="successes in population")
    demo.add_argument("--eps", type=float, default=1e-6,
                      help="per-side failure probability for the branch report")

    mc = sub.add_parser("mc-run", help="seeded Monte Carlo protocol rounds")
    common(mc)
    mc.add_argument("--repeats", type=int, default=1, help="number of rounds")
    mc.set_defaults(seed=0)

    return parser


_COMMANDS = {
    "keyrate": _cmd_keyrate,
    "sweep-distance": _cmd_sweep_distance,
    "sweep-blocksize": _cmd_sweep_blocksize,
    "bounds-demo": _cmd_bounds_demo,
    "optimize": _cmd_optimize,
    "mc-run": _cmd_mc_run,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seed", None) is None:
        args.seed = 0
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
