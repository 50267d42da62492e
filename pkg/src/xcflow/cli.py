"""Config files, subcommand dispatch, and reproducible run directories.

The config format is flat ``key = value`` text, one pair per line, with
``#`` starting a comment.  Parsing is fail closed: unknown keys, duplicate
keys, and missing required keys are all errors, so a config that parses
describes the run completely.  Serialisation writes every field in a fixed
order with round-tripping floats, and the run directory is named from the
hash of that canonical text; identical configs land in identical
directories and, with the order-fixed reductions used everywhere in the
stepper, produce bitwise identical diagnostics.

Exit codes: 0 on success, 1 when a requested check fails or the flow
itself breaks down, 2 for configuration and usage errors.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .boundary import LambdaSpec, make_boundary_spec
from .chart import (MAGIC_METRIC, ChartSpec, MetricField, make_chart,
                    read_snapshot, write_snapshot)
from .curvature import (check_mu_identity, compute_bundle, cross_variant,
                        riemann_symmetry_residuals, sectional_report)
from .errors import ConfigError, XcflowError
from .evolve import make_state, run
from .oracles import (dense_eig_oracle, fourier_symbol_probe,
                      gauge_stretched_hyperbolic, scaling_ode_oracle,
                      spaceform_metric, spaceform_phi)
from .pullback import GaugeTracker, xcf_residual
from .symbol import (combined_symbol, gauge_directions, sigma_dx, sigma_dy,
                     spectrum)

INITIAL_PRESETS = ("hyperbolic-halfspace", "sphere-stereographic",
                   "sphere-hopf", "flat", "snapshot-file")
BACKGROUND_KINDS = ("flat", "initial-metric")
BOUNDARY_KINDS = ("umbilic", "dirichlet-g0")

_REQUIRED = ("nx", "ny", "nz", "initial", "sign", "t_end")


@dataclass(frozen=True)
class RunConfig:
    """Complete, validated description of one run."""

    nx: int
    ny: int
    nz: int
    initial: str
    sign: int
    t_end: float
    lx: float = 1.0
    ly: float = 1.0
    z_min: float = 1.0
    z_max: float = 2.0
    initial_path: str = ""
    background: str = "initial-metric"
    boundary: str = "umbilic"
    lam: str = "constant:1.0"
    cfl: float = 0.2
    cadence: int = 50
    seed: int = 0
    force_sign: bool = False
    out_root: str = "runs"
    diagnostics: str = "diagnostics.tsv"
    snapshot: str = "final.xcf"

    def chart(self) -> ChartSpec:
        return make_chart(self.nx, self.ny, self.nz, lx=self.lx, ly=self.ly,
                          z_min=self.z_min, z_max=self.z_max)

    def lambda_spec(self) -> LambdaSpec:
        return LambdaSpec.parse(self.lam)


def _parse_bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ConfigError(f"expected true or false, got {text!r}")


def _convert(name: str, kind, text: str):
    try:
        if kind is bool:
            return _parse_bool(text)
        return kind(text)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {name}: {exc}") from None


def parse_config(path) -> RunConfig:
    """Read and validate a config file.  Fail closed on anything unknown."""
    known = {f.name: f.type for f in fields(RunConfig)}
    kinds = {"nx": int, "ny": int, "nz": int, "sign": int, "cadence": int,
             "seed": int, "t_end": float, "lx": float, "ly": float,
             "z_min": float, "z_max": float, "cfl": float,
             "force_sign": bool}
    seen: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, _, value = body.partition("=")
        key, value = key.strip(), value.strip()
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in seen:
            raise ConfigError(f"{path}:{lineno}: duplicate config key {key!r}")
        seen[key] = _convert(key, kinds.get(key, str), value)
    missing = [k for k in _REQUIRED if k not in seen]
    if missing:
        raise ConfigError(f"{path}: missing required keys: {', '.join(missing)}")
    cfg = RunConfig(**seen)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    cfg.chart()
    if cfg.initial not in INITIAL_PRESETS:
        raise ConfigError(f"unknown initial preset {cfg.initial!r}")
    if cfg.initial == "snapshot-file" and not cfg.initial_path:
        raise ConfigError("initial = snapshot-file needs initial_path")
    if cfg.initial_path and cfg.initial != "snapshot-file":
        raise ConfigError("initial_path only applies to initial = snapshot-file")
    if cfg.sign not in (1, -1):
        raise ConfigError("sign must be +1 or -1")
    if cfg.background not in BACKGROUND_KINDS:
        raise ConfigError(f"unknown background kind {cfg.background!r}")
    if cfg.boundary not in BOUNDARY_KINDS:
        raise ConfigError(f"unknown boundary kind {cfg.boundary!r}")
    cfg.lambda_spec()
    if not cfg.cfl > 0.0:
        raise ConfigError("cfl must be positive")
    if cfg.t_end < 0.0:
        raise ConfigError("t_end must be nonnegative")
    if cfg.cadence < 0:
        raise ConfigError("cadence must be nonnegative")
    if cfg.seed < 0:
        raise ConfigError("seed must be nonnegative")
    for name in ("out_root", "diagnostics", "snapshot"):
        if not getattr(cfg, name):
            raise ConfigError(f"{name} must not be empty")


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form; parse(serialize(cfg)) returns an equal config."""
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if f.name == "initial_path" and not v:
            continue
        if f.name == "sign":
            text = f"{v:+d}"
        elif isinstance(v, bool):
            text = "true" if v else "false"
        elif isinstance(v, float):
            text = repr(v)
        else:
            text = str(v)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:12]


def run_dir(cfg: RunConfig) -> Path:
    return Path(cfg.out_root) / config_hash(cfg)


def _apply_thread_cap() -> None:
    """Honour XCF_THREADS as an upper bound on kernel worker threads."""
    raw = os.environ.get("XCF_THREADS")
    if not raw:
        return
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError("XCF_THREADS must be an integer") from None
    if cap < 1:
        raise ConfigError("XCF_THREADS must be at least 1")
    try:
        import numba
    except ImportError:
        return
    numba.set_num_threads(min(cap, numba.config.NUMBA_NUM_THREADS))


def load_initial(cfg: RunConfig) -> MetricField:
    chart = cfg.chart()
    if cfg.initial == "flat":
        return MetricField.constant(chart, np.eye(3))
    if cfg.initial == "snapshot-file":
        file_chart, g_phys, _ = read_snapshot(cfg.initial_path, MAGIC_METRIC)
        if file_chart != chart:
            raise ConfigError("snapshot chart disagrees with the config chart")
        field = MetricField(chart, np.zeros(chart.shape_total + (6,)))
        field.phys[...] = g_phys
        return field
    return spaceform_metric(cfg.initial, chart)


def build_boundary(cfg: RunConfig, g0: MetricField):
    if cfg.boundary == "umbilic":
        return make_boundary_spec("umbilic", lam=cfg.lambda_spec())
    return make_boundary_spec("dirichlet-g0", g0=g0)


def enforce_sign(cfg: RunConfig, field: MetricField) -> None:
    """Check the flow orientation against the initial curvature class.

    The short-time theory wants the orientation matched to a definite
    curvature sign; indefinite data gets a warning and the benefit of the
    doubt.
    """
    rep = sectional_report(compute_bundle(field))
    label = rep["classification"]
    want = {"all-negative-sectional": 1, "all-positive-sectional": -1}.get(label)
    if want is None:
        print(f"warning: initial data is {label}; the curvature-sign "
              "hypothesis does not fix the orientation", file=sys.stderr)
        return
    if cfg.sign != want and not cfg.force_sign:
        raise ConfigError(
            f"sign {cfg.sign:+d} violates the curvature-sign hypothesis: "
            f"the initial metric is {label}, which wants {want:+d} "
            "(pass --force-sign to override)")


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if args.force_sign:
        cfg = replace(cfg, force_sign=True)
    field = load_initial(cfg)
    spec = build_boundary(cfg, field)
    state = make_state(field, cfg.sign, cfg.background, spec, cfl=cfg.cfl)
    enforce_sign(cfg, state.g)
    rd = run_dir(cfg)
    rd.mkdir(parents=True, exist_ok=True)
    (rd / "config.txt").write_text(serialize_config(cfg))
    write_snapshot(rd / "initial.xcf", state.g.chart, state.g.phys.copy())
    with open(rd / cfg.diagnostics, "w") as fh:
        state = run(state, cfg.t_end, cadence=cfg.cadence, diag=fh)
    write_snapshot(rd / cfg.snapshot, state.g.chart, state.g.phys.copy())
    print(f"run {config_hash(cfg)}: t = {state.t:g}, outputs in {rd}")
    return 0


# --- golden symbol snapshot -------------------------------------------------

GOLDEN_E = np.diag([2.0, 0.75, 0.5])


def _fmt_matrix(m: np.ndarray) -> str:
    return "\n".join("  " + " ".join(f"{v: .12e}" for v in row) for row in m)


def _fmt_vector(v: np.ndarray) -> str:
    return " ".join(f"{x: .12e}" for x in np.asarray(v, dtype=np.float64))


def _closed_form_dx(e: np.ndarray) -> np.ndarray:
    # Row content at the identity metric for the first axis covector.
    out = np.zeros((6, 6))
    out[0, 3:] = (e[1, 1], e[2, 2], 2.0 * e[1, 2])
    out[1, 3:] = (-e[0, 1], 0.0, -e[0, 2])
    out[2, 3:] = (0.0, -e[0, 2], -e[0, 1])
    return out


def golden_symbol_report() -> tuple[str, bool]:
    """Render the golden example and its checks; returns (text, all_passed)."""
    e_hi = GOLDEN_E
    ginv = np.eye(3)
    zeta = np.array([1.0, 0.0, 0.0])
    mdx = sigma_dx(e_hi, zeta)
    mdy = sigma_dy(ginv, zeta)
    mc = combined_symbol(e_hi, ginv, zeta, sign=1)

    checks = []
    checks.append(("dx_pattern_err",
                   float(np.max(np.abs(mdx - _closed_form_dx(e_hi)))), 1e-14))
    checks.append(("combined_lower_triangle",
                   float(np.max(np.abs(np.tril(mc, -1)))), 1e-14))
    q = float(zeta @ e_hi @ zeta)
    want = np.sort(np.array([1.0, 1.0, 1.0, q, q, q]))
    eigs = spectrum(mc)
    checks.append(("spectrum_err",
                   float(np.max(np.abs(eigs.real - want))
                        + np.max(np.abs(eigs.imag))), 1e-10))
    checks.append(("dense_oracle_err",
                   float(np.max(np.abs(dense_eig_oracle(mc) - want))), 1e-9))
    kern = gauge_directions(zeta)
    checks.append(("gauge_kernel_err",
                   float(np.max(np.abs(mdx @ kern))), 1e-13))
    checks.append(("gauge_unit_err",
                   float(np.max(np.abs(mc @ kern - kern))), 1e-12))

    ok = True
    lines = [
        "golden principal symbol",
        "metric identity, E = diag(2.0, 0.75, 0.5), covector along axis 1, sign +1",
        "sigma_dx:",
        _fmt_matrix(mdx),
        "sigma_dy:",
        _fmt_matrix(mdy),
        "combined:",
        _fmt_matrix(mc),
        f"spectrum(sigma_dx): {_fmt_vector(spectrum(mdx).real)}",
        f"spectrum(combined): {_fmt_vector(eigs.real)}",
        f"expected(combined): {_fmt_vector(want)}",
        "checks:",
    ]
    for name, err, tol in checks:
        good = err <= tol
        ok = ok and good
        lines.append(f"  {name} = {err:.3e} (tol {tol:.0e}) "
                     f"{'PASS' if good else 'FAIL'}")
    return "\n".join(lines) + "\n", ok


def _cmd_check_symbol(args) -> int:
    text, ok = golden_symbol_report()
    sys.stdout.write(text)
    if args.write:
        Path(args.write).write_text(text)
    if args.snapshot:
        committed = Path(args.snapshot).read_text()
        if committed != text:
            print("snapshot mismatch", file=sys.stderr)
            return 1
    return 0 if ok else 1


# --- identity verification --------------------------------------------------

VERIFY_PRESETS = ("flat", "hyperbolic-halfspace", "sphere-stereographic",
                  "sphere-hopf", "random")


def _random_field(chart: ChartSpec, seed: int) -> MetricField:
    """Smooth seeded SPD metric with every component exercised."""
    rng = np.random.default_rng(seed)
    amp = 0.25 * rng.uniform(0.5, 1.0, size=(3, 3))
    amp = 0.5 * (amp + amp.T)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(3, 3, 3))

    def fn(x, y, z):
        tx = 2.0 * np.pi * x / chart.lx
        ty = 2.0 * np.pi * y / chart.ly
        tz = 2.0 * np.pi * (z - chart.z_min) / (chart.z_max - chart.z_min)
        shape = np.broadcast_shapes(np.shape(x), np.shape(y), np.shape(z))
        out = np.zeros(shape + (3, 3))
        for i in range(3):
            for j in range(i, 3):
                base = 2.0 if i == j else 0.0
                wob = amp[i, j] * (np.sin(tx + phase[i, j, 0])
                                   * np.cos(ty + phase[i, j, 1])
                                   + 0.5 * np.sin(tz + phase[i, j, 2]))
                out[..., i, j] = out[..., j, i] = base + wob
        return out

    return MetricField.from_callable(chart, fn)


def _verify_field(preset: str, n: int, seed: int) -> MetricField:
    if preset == "flat":
        return MetricField.constant(make_chart(n, n, n + 1), np.eye(3))
    if preset == "hyperbolic-halfspace":
        return spaceform_metric(preset, make_chart(n, n, n + 1, z_min=1.0, z_max=2.0))
    if preset == "sphere-stereographic":
        return spaceform_metric(preset, make_chart(n, n, n + 1))
    if preset == "sphere-hopf":
        return spaceform_metric(preset, make_chart(n, n, n + 1, lx=2.0 * np.pi,
                                                   ly=2.0 * np.pi,
                                                   z_min=0.5, z_max=1.0))
    if preset == "random":
        return _random_field(make_chart(n, n, n + 1), seed)
    raise ConfigError(f"unknown verification preset {preset!r}")


def identity_report(field: MetricField) -> list[tuple[str, float, float]]:
    """(name, relative residual, tolerance) rows for the tensor identities."""
    b = compute_bundle(field)
    rows = [(k, v, 1e-9) for k, v in riemann_symmetry_residuals(b).items()]
    rows.append(("mu_identity", check_mu_identity(b), 1e-8))
    scale = max(float(np.max(np.abs(b.cross))), 1e-30)
    for which in ("mu2", "triple"):
        diff = float(np.max(np.abs(cross_variant(b, which) - b.cross))) / scale
        rows.append((f"cross_route_{which}", diff, 1e-9))
    return rows


def _cmd_verify(args) -> int:
    field = _verify_field(args.preset, args.size, args.seed)
    ok = True
    for name, err, tol in identity_report(field):
        good = err <= tol
        ok = ok and good
        print(f"{name} = {err:.3e} (tol {tol:.0e}) {'PASS' if good else 'FAIL'}")
    return 0 if ok else 1


# --- closed-form scaling oracle ---------------------------------------------

def _cmd_oracle(args) -> int:
    ok = True
    for label, k, sign in (("negative curvature", -1.0, +1),
                           ("positive curvature", +1.0, -1)):
        closed = float(spaceform_phi(k, sign, args.t))
        stepped = scaling_ode_oracle(k, sign, args.t)
        err = abs(stepped - closed)
        good = err <= 1e-6
        ok = ok and good
        print(f"{label}: closed {closed:.12f}  stepped {stepped:.12f}  "
              f"err {err:.3e} {'PASS' if good else 'FAIL'}")
    return 0 if ok else 1


# --- plane-wave response versus the symbol ----------------------------------

def _torus_field(chart: ChartSpec) -> MetricField:
    """Smooth positive metric, periodic along all three axes, curved enough
    to keep the curvature block away from zero everywhere."""
    span = chart.z_max - chart.z_min

    def fn(x, y, z):
        tx = 2.0 * np.pi * x / chart.lx
        ty = 2.0 * np.pi * y / chart.ly
        tz = 2.0 * np.pi * (z - chart.z_min) / span
        shape = np.broadcast_shapes(np.shape(x), np.shape(y), np.shape(z))
        out = np.zeros(shape + (3, 3))
        out[..., 0, 0] = 2.0 + 0.25 * np.sin(tx) * np.cos(ty) + 0.1 * np.cos(tz)
        out[..., 1, 1] = 2.0 - 0.25 * np.cos(tx) * np.sin(tz)
        out[..., 2, 2] = 2.0 + 0.25 * np.sin(ty + tz)
        out[..., 0, 1] = out[..., 1, 0] = 0.05 * np.sin(tx) * np.cos(tz)
        out[..., 0, 2] = out[..., 2, 0] = 0.04 * np.cos(ty)
        out[..., 1, 2] = out[..., 2, 1] = 0.03 * np.sin(tx) * np.cos(ty) * np.sin(tz)
        return out

    return MetricField.from_callable(chart, fn)


def _mode_triple(text: str):
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("mode must be three comma separated integers")
    return tuple(int(p) for p in parts)


def _cmd_linearize(args) -> int:
    chart = make_chart(args.size, args.size, args.size, periodic_z=True)
    field = _torus_field(chart)
    lo = fourier_symbol_probe(field, args.coarse)
    hi = fourier_symbol_probe(field, args.fine)
    ratio = lo["deviation"] / hi["deviation"]
    good = ratio >= args.ratio and hi["deviation"] < 0.5
    print(f"deviation {args.coarse} = {lo['deviation']:.4e}")
    print(f"deviation {args.fine} = {hi['deviation']:.4e}")
    print(f"ratio = {ratio:.3f} (need >= {args.ratio:g}) "
          f"{'PASS' if good else 'FAIL'}")
    return 0 if good else 1


# --- gauge inversion smoke test ---------------------------------------------

def _cmd_pullback(args) -> int:
    n = args.size
    chart = make_chart(n, n, n + 1, z_min=1.0, z_max=2.0)
    hook = gauge_stretched_hyperbolic
    field = hook(chart, 0.0)
    spec = make_boundary_spec("dirichlet-exact", exact=hook)
    state = make_state(field, 1, "flat", spec)
    tracker = GaugeTracker(state)
    eps = 0.05 * args.t_end
    caps = []
    for tt in (args.t_end - eps, args.t_end, args.t_end + eps):
        state = run(state, tt, cadence=0, observer=tracker)
        caps.append(tracker.capture(state))
    res = xcf_residual(caps[0], caps[1], caps[2], state.sign)
    good = res <= args.tol
    print(f"xcf_residual = {res:.4e} at {n}^3, t = {args.t_end:g} "
          f"(tol {args.tol:g}) {'PASS' if good else 'FAIL'}")
    return 0 if good else 1


# --- dispatch ---------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xcflow",
        description="Cross curvature flow runs and self checks.")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("run", help="integrate a configured flow")
    p.add_argument("config", help="path to a key = value config file")
    p.add_argument("--force-sign", action="store_true",
                   help="run even when the orientation disagrees with the "
                        "initial curvature class")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("check-symbol",
                       help="print the golden symbol matrices and spectra")
    p.add_argument("--snapshot", help="compare the output against this file")
    p.add_argument("--write", help="also write the output to this file")
    p.set_defaults(fn=_cmd_check_symbol)

    p = sub.add_parser("verify-identities",
                       help="tensor identity residuals on a preset metric")
    p.add_argument("preset", nargs="?", default="hyperbolic-halfspace",
                   choices=VERIFY_PRESETS)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("oracle-spaceform",
                       help="stepped scaling law against the closed form")
    p.add_argument("--t", type=float, default=0.05)
    p.set_defaults(fn=_cmd_oracle)

    p = sub.add_parser("linearize-check",
                       help="plane-wave response against the symbol prediction")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--coarse", type=_mode_triple, default=(2, 1, 1))
    p.add_argument("--fine", type=_mode_triple, default=(4, 2, 2))
    p.add_argument("--ratio", type=float, default=1.4,
                   help="required coarse/fine deviation ratio")
    p.set_defaults(fn=_cmd_linearize)

    p = sub.add_parser("pullback-check",
                       help="recover the unfixed flow from a gauged run")
    p.add_argument("--size", type=int, default=12)
    p.add_argument("--t-end", type=float, default=0.02)
    p.add_argument("--tol", type=float, default=0.2,
                   help="residual bound; tighten when raising --size")
    p.set_defaults(fn=_cmd_pullback)

    return parser


def dispatch(argv) -> int:
    """Parse arguments and execute one subcommand, mapping errors to codes."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "command", None) is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        _apply_thread_cap()
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except XcflowError as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
