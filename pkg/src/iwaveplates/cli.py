"""Command-line front end.

Angles are given in degrees, lengths in millimetres and wavelengths in
nanometres; they are converted to radians and metres once, here.

Exit codes: 0 success, 2 invalid input, 3 numerical non-convergence. Errors
are reported on stderr as a single JSON object.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import characterization as chz
from . import fabrication as fab
from . import tomography as tomo
from . import waveguide as wg
from .algebra import (
    PlateCascade,
    PlateSpec,
    canonicalize,
    cascade_evaluate,
    decompose_sandwich,
    distance_up_to_phase,
)
from .device import (
    CoincidenceRecord,
    CountRecord,
    TwoPhotonState,
    expected_coincidences,
    expected_single_counts,
    simulate_counts,
    simulate_single_counts,
    werner_state,
)
from .jones import LABELS, DomainError, PolarizationState, StokesVector, waveplate_matrix

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NONCONVERGED = 3

SYNTHESIS_TOL = 1e-10
_BUNDLED = {"calibrate": "calibration_synthetic.csv", "tomography": "psi_minus_seed42.json"}


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind, self.message = code, kind, message


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_INVALID, "usage", f"{self.prog}: {message}")


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("iwaveplates") / "data" / name))


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _positive(kind):
    def conv(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
        return v
    return conv


def _finite(text):
    v = float(text)
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be finite, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _read_csv(path: Path) -> List[Dict[str, str]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DomainError(f"{path} has no data rows")
    return rows


def _column(rows, name, path, optional=False):
    if name not in rows[0]:
        if optional:
            return [None] * len(rows)
        raise DomainError(f"{path} lacks column {name!r}")
    return [float(r[name]) if r[name].strip() != "" else None for r in rows]


# synthesize ---------------------------------------------------------------

def cmd_synthesize(args) -> int:
    theta, delta = math.radians(args.theta), math.radians(args.delta)
    b, lam = args.birefringence, args.wavelength * 1e-9
    canon, phase = canonicalize(PlateSpec(theta, delta))
    if canon.theta == 0.0:
        cascade = PlateCascade([PlateSpec(0.0, canon.delta)])
    else:
        cascade = decompose_sandwich(canon)
    residual = distance_up_to_phase(waveplate_matrix(theta, delta), cascade_evaluate(cascade))
    plates = [
        {
            "tilt_deg": math.degrees(p.theta),
            "retardance_deg": math.degrees(p.delta),
            "length_mm": wg.length_for_retardance(p.delta, b, lam) * 1e3,
        }
        for p in cascade
    ]
    total_mm = sum(p["length_mm"] for p in plates)
    loss = wg.loss_db(len(plates), total_mm * 1e-3)
    report = {
        "target": {"theta_deg": args.theta, "delta_deg": args.delta},
        "canonical": {"theta_deg": math.degrees(canon.theta), "delta_deg": math.degrees(canon.delta)},
        "global_phase_rad": phase,
        "single_segment": len(plates) == 1,
        "plates": plates,
        "total_length_mm": total_mm,
        "loss_db": loss,
        "transmittance": 10 ** (-loss / 10),
        "residual": residual,
        "birefringence": b,
        "wavelength_nm": args.wavelength,
    }
    if args.json:
        _emit(args, _dumps(report))
    else:
        lines = [
            f"target     theta {args.theta:.6f} deg   delta {args.delta:.6f} deg",
            f"canonical  theta {report['canonical']['theta_deg']:.6f} deg   "
            f"delta {report['canonical']['delta_deg']:.6f} deg   phase {phase:.6f} rad",
        ]
        if report["single_segment"]:
            lines.append("single segment, no sandwich needed")
        for i, p in enumerate(plates, 1):
            lines.append(f"plate {i}    tilt {p['tilt_deg']:+.6f} deg   retardance "
                         f"{p['retardance_deg']:.6f} deg   length {p['length_mm']:.6f} mm")
        lines.append(f"total      {total_mm:.6f} mm   loss {loss:.4f} dB")
        lines.append(f"residual   {residual:.3e}")
        _emit(args, "\n".join(lines) + "\n")
    if residual > SYNTHESIS_TOL:
        raise CliError(EXIT_NONCONVERGED, "synthesis", f"residual {residual:.3e} exceeds {SYNTHESIS_TOL}")
    return EXIT_OK


# curves -------------------------------------------------------------------

def cmd_curves(args) -> int:
    b, lam, tilt = args.birefringence, args.wavelength * 1e-9, math.radians(args.tilt)
    if args.lengths:
        lengths_mm = list(args.lengths)
    else:
        top = args.length_max if args.length_max is not None else (
            2 * wg.half_wave_length(b, lam) * 1e3 if args.total_length is None else args.total_length)
        lengths_mm = np.linspace(0.0, top, args.points).tolist()
    if any(v < 0 for v in lengths_mm):
        raise DomainError("lengths must be >= 0")
    lengths = [v * 1e-3 for v in lengths_mm]
    if args.total_length is not None:
        points = wg.two_segment_curves(tilt, b, lam, args.total_length * 1e-3, lengths)
    else:
        points = wg.transfer_curves(tilt, b, lam, lengths)
    if args.json:
        rows = [{"length_mm": p.length * 1e3, "p_H": p.p_H, "p_V": p.p_V, "p_D": p.p_D, "p_A": p.p_A}
                for p in points]
        _emit(args, _dumps({"tilt_deg": args.tilt, "birefringence": b,
                            "wavelength_nm": args.wavelength, "rows": rows}))
    else:
        _emit(args, wg.curves_to_csv(points))
    return EXIT_OK


# calibrate ----------------------------------------------------------------

def cmd_calibrate(args) -> int:
    path = bundled_path(_BUNDLED["calibrate"]) if args.example else args.input
    if path is None:
        raise DomainError("give --input CSV or --example")
    rows = _read_csv(Path(path))
    s = _column(rows, "s_mm", path)
    th = _column(rows, "theta_deg", path)
    if any(v is None for v in s + th):
        raise DomainError("calibration CSV has empty cells")
    model = fab.fit_calibration([(a, math.radians(t)) for a, t in zip(s, th)])
    out = model.to_json()
    if args.tilts:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", fab.TiltRangeWarning)
            out["offsets"] = [
                {"tilt_deg": t,
                 "lens_shift_mm": fab.lens_shift_for_tilt(model, math.radians(t)),
                 "lateral_offset_um": fab.lateral_offset_um(model, math.radians(t))}
                for t in args.tilts
            ]
    if args.json:
        _emit(args, _dumps(out))
    else:
        lines = [f"C    {model.C:.6f} 1/mm", f"s0   {model.s0:.6f} mm", f"rms  {out['rms_deg']:.6f} deg"]
        for o in out.get("offsets", []):
            lines.append(f"tilt {o['tilt_deg']:.3f} deg   lens shift {o['lens_shift_mm']:.6f} mm   "
                         f"lateral offset {o['lateral_offset_um']:.3f} um")
        _emit(args, "\n".join(lines) + "\n")
    if not model.converged:
        raise CliError(EXIT_NONCONVERGED, "calibration", "calibration fit did not converge")
    return EXIT_OK


# characterize -------------------------------------------------------------

def _axis_samples(path) -> List[chz.PolarimetrySample]:
    rows = _read_csv(Path(path))
    if "input" not in rows[0]:
        raise DomainError(f"{path} lacks column 'input'")
    cols = [_column(rows, k, path) for k in ("s0", "s1", "s2", "s3")]
    return [
        chz.PolarimetrySample(PolarizationState.from_label(r["input"].strip()), StokesVector(*vals))
        for r, vals in zip(rows, zip(*cols))
    ]


def _scan_samples(path) -> List[chz.LengthScanSample]:
    rows = _read_csv(Path(path))
    lengths = _column(rows, "length_mm", path)
    ps = [_column(rows, f"p_{k}", path, optional=True) for k in "HVDA"]
    return [chz.LengthScanSample(length * 1e-3, *vals) for length, *vals in zip(lengths, *ps)]


def cmd_characterize(args) -> int:
    lam = args.wavelength * 1e-9
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if args.mode == "axis":
            fit = chz.fit_axis_and_retardance(_axis_samples(args.input))
            out = fit.to_json(args.length * 1e-3 if args.length else None, lam)
        else:
            fit = chz.fit_tilt_from_scan(_scan_samples(args.input), args.birefringence, lam,
                                         fit_birefringence=args.fit_birefringence)
            out = fit.to_json()
    out["converged"] = bool(fit.converged)
    out["warnings"] = [str(w.message) for w in caught]
    if args.json:
        _emit(args, _dumps(out))
    else:
        lines = [f"theta  {out['theta_deg']:.6f} deg"]
        if "delta_rad" in out:
            lines.append(f"delta  {out['delta_rad']:.6f} rad")
        if "b" in out:
            lines.append(f"b      {out['b']:.6e}")
        lines.append(f"rms    {out['rms']:.3e}")
        lines += [f"warning: {w}" for w in out["warnings"]]
        _emit(args, "\n".join(lines) + "\n")
    if not fit.converged:
        raise CliError(EXIT_NONCONVERGED, "characterization", "fit did not converge")
    return EXIT_OK


# simulate -----------------------------------------------------------------

def _two_photon_state(name: str, visibility: float):
    key = name.lower()
    if key in ("psi-", "psi_minus"):
        return TwoPhotonState.psi_minus() if visibility == 1 else werner_state(visibility)
    if len(name) == 2 and all(c in LABELS for c in name):
        return TwoPhotonState.product(PolarizationState.from_label(name[0]),
                                      PolarizationState.from_label(name[1]))
    raise DomainError(f"unknown two-photon state {name!r}; use psi- or two labels such as HV")


def cmd_simulate(args) -> int:
    if not 0 <= args.visibility <= 1:
        raise DomainError("visibility must lie in [0, 1]")
    if not 0 < args.detector_efficiency <= 1:
        raise DomainError("detector efficiency must lie in (0, 1]")
    sides = tomo.chip_sides(args.seed, args.residual_distance)
    if args.single:
        side = sides["AB".index(args.side)]
        if args.noiseless:
            mu = expected_single_counts(args.single, side, args.pairs, args.detector_efficiency)
            rec = CountRecord(tuple(float(m) for m in mu), args.pairs, args.seed)
        else:
            rec = simulate_single_counts(args.single, side, args.pairs, args.seed, args.detector_efficiency)
        if args.json:
            _emit(args, _dumps({"seed": rec.seed, "total": rec.total, "labels": list(rec.labels),
                                "counts": list(rec.counts)}))
        else:
            _emit(args, rec.to_csv())
        return EXIT_OK
    state = _two_photon_state(args.state, args.visibility)
    if args.noiseless:
        mu = expected_coincidences(state, sides, args.pairs, args.detector_efficiency, args.accidentals)
        rec = CoincidenceRecord(mu, args.pairs, args.seed)
    else:
        rec = simulate_counts(state, sides, args.pairs, args.seed, args.detector_efficiency,
                              args.accidentals)
    _emit(args, rec.to_json() + "\n")
    return EXIT_OK


# tomography ---------------------------------------------------------------

def _load_counts(path: Path):
    text = path.read_text()
    if path.suffix.lower() == ".csv":
        return CountRecord.from_csv(text)
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DomainError(f"{path}: not valid JSON ({exc.msg})") from None
    if isinstance(obj, dict) and np.asarray(obj.get("counts")).shape == (6,):
        unknown = set(obj) - {"seed", "total", "labels", "counts"}
        if unknown:
            raise DomainError(f"unknown keys in count record: {sorted(unknown)}")
        return CountRecord(obj["counts"], obj.get("total", 0), obj.get("seed"),
                           tuple(obj.get("labels", LABELS)))
    return CoincidenceRecord.from_json(obj)


def _experiment(args) -> int:
    config = tomo.ExperimentConfig(
        n_pairs=args.pairs, seed=args.seed, noiseless=args.noiseless,
        residual_prefix_distance=args.residual_distance, single_photon=not args.no_single,
        two_photon=not args.no_two_photon, n_montecarlo=args.montecarlo, method=args.method,
        detector_efficiency=args.detector_efficiency, visibility=args.visibility,
    )
    result = tomo.run_full_experiment(config)
    if args.json:
        _emit(args, _dumps(result.to_dict()))
    else:
        parts = []
        if result.single:
            parts.append(result.fidelity_table())
            parts.append(f"mean single-photon fidelity {result.mean_single_fidelity:.6f}")
        if result.two_photon is not None:
            parts.append(_tomography_text(result.two_photon))
        _emit(args, "\n".join(parts) + "\n")
    runs = [r for _, _, r in result.single] + ([result.two_photon] if result.two_photon else [])
    if not all(r.converged for r in runs):
        raise CliError(EXIT_NONCONVERGED, "mle", "maximum-likelihood refinement did not converge")
    return EXIT_OK


def _tomography_text(r: tomo.TomographyResult) -> str:
    lines = [f"method {r.method}   physical {str(r.physical).lower()}"]
    if r.fidelity is not None:
        sig = f" +- {r.fidelity_sigma:.6f}" if r.fidelity_sigma is not None else ""
        lines.append(f"fidelity {r.fidelity:.6f}{sig}")
    lines.append(f"log-likelihood {r.log_likelihood:.6f}")
    lines.append(tomo.render_bars(r.rho))
    return "\n".join(lines)


def cmd_tomography(args) -> int:
    if args.experiment:
        return _experiment(args)
    path = bundled_path(_BUNDLED["tomography"]) if args.example else args.input
    if path is None:
        raise DomainError("give --input FILE, --example or --experiment")
    counts = _load_counts(Path(path))
    target = args.target
    if target is None and isinstance(counts, CoincidenceRecord):
        target = "psi-"
    if target is not None and target.lower() == "none":
        target = None
    result = tomo.tomography(counts, target, args.method, args.montecarlo, args.seed)
    if args.json:
        _emit(args, _dumps(result.to_dict()))
    else:
        _emit(args, _tomography_text(result) + "\n")
    if not result.converged:
        raise CliError(EXIT_NONCONVERGED, "mle", "maximum-likelihood refinement did not converge")
    return EXIT_OK


# parser -------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file whose keys are this command's option names")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.add_argument("--out", help="write output to this path instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="iwaveplates", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synthesize", help="decompose a waveplate into restricted-tilt segments")
    p.add_argument("--theta", type=_finite, required=True, help="target axis angle, deg")
    p.add_argument("--delta", type=_finite, required=True, help="target retardance, deg")
    p.add_argument("--birefringence", type=_positive(float), default=wg.MEAN_BIREFRINGENCE)
    p.add_argument("--wavelength", type=_positive(float), default=wg.WAVELENGTH * 1e9, help="nm")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("curves", help="output powers versus tilted-segment length (CSV)")
    p.add_argument("--tilt", type=_finite, default=22.5, help="axis tilt, deg")
    p.add_argument("--birefringence", type=_positive(float), default=wg.MEAN_BIREFRINGENCE)
    p.add_argument("--wavelength", type=_positive(float), default=wg.WAVELENGTH * 1e9, help="nm")
    p.add_argument("--length-max", type=_positive(float), help="mm, default two half-wave lengths")
    p.add_argument("--points", type=_positive(int), default=41)
    p.add_argument("--lengths", type=float, nargs="+", help="explicit lengths, mm")
    p.add_argument("--total-length", type=_positive(float),
                   help="mm; model a fixed-length device whose last part is tilted")
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("calibrate", help="fit the lens-shift to tilt calibration")
    p.add_argument("--input", help="CSV with columns s_mm, theta_deg")
    p.add_argument("--example", action="store_true", help="use the bundled synthetic data")
    p.add_argument("--tilts", type=_finite, nargs="+", help="also tabulate lens shift and offset, deg")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("characterize", help="fit axis angle and retardance of a device")
    p.add_argument("--mode", choices=("axis", "scan"), default="axis")
    p.add_argument("--input", required=True,
                   help="axis: CSV input,s0,s1,s2,s3; scan: CSV length_mm,p_H,p_V,p_D,p_A")
    p.add_argument("--length", type=_positive(float), help="device length, mm (axis mode, to report b)")
    p.add_argument("--birefringence", type=_positive(float), default=wg.MEAN_BIREFRINGENCE)
    p.add_argument("--fit-birefringence", action="store_true")
    p.add_argument("--wavelength", type=_positive(float), default=wg.WAVELENGTH * 1e9, help="nm")
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("simulate", help="simulate detector counts of the analysis chip")
    p.add_argument("--state", default="psi-", help="psi- or two labels such as HV")
    p.add_argument("--single", choices=LABELS, help="single-photon input state instead of a pair")
    p.add_argument("--side", choices=("A", "B"), default="A")
    p.add_argument("--pairs", type=_positive(int), default=100_000, help="pairs (or photons)")
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--visibility", type=float, default=1.0)
    p.add_argument("--residual-distance", type=float, default=0.0,
                   help="up-to-phase distance of a random uncompensated prefix")
    p.add_argument("--detector-efficiency", type=float, default=1.0)
    p.add_argument("--accidentals", type=float, default=0.0, help="mean accidentals per cell")
    p.add_argument("--noiseless", action="store_true", help="write expected means")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tomography", help="reconstruct a density matrix from counts")
    p.add_argument("--input", help="coincidence JSON or single-qubit CSV (label,count)")
    p.add_argument("--example", action="store_true", help="use the bundled singlet record")
    p.add_argument("--target", help="psi-, a label such as D, or none")
    p.add_argument("--method", choices=("mle", "linear"), default="mle")
    p.add_argument("--montecarlo", type=_nonneg_int, default=0, help="bootstrap trials (>= 50)")
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--experiment", action="store_true", help="run the simulated full experiment")
    p.add_argument("--pairs", type=_positive(int), default=10_000)
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("--residual-distance", type=float, default=0.0)
    p.add_argument("--visibility", type=float, default=1.0)
    p.add_argument("--detector-efficiency", type=float, default=1.0)
    p.add_argument("--no-single", action="store_true")
    p.add_argument("--no-two-photon", action="store_true")
    p.set_defaults(func=cmd_tomography)

    for p in sub.choices.values():
        _common(p)
    parser.subcommands = sub.choices
    return parser


def _config_tokens(sub: argparse.ArgumentParser, path: str) -> List[str]:
    """Translate a JSON config into command-line tokens for ``sub``."""
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DomainError(f"{path}: not valid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise DomainError("config must be a JSON object")
    actions = {a.dest: a for a in sub._actions if a.option_strings and a.dest not in ("help", "config")}
    unknown = sorted(set(obj) - set(actions))
    if unknown:
        raise DomainError(f"unknown config keys: {unknown}")
    tokens = []
    for key, value in obj.items():
        act = actions[key]
        flag = act.option_strings[-1]
        if isinstance(act, argparse._StoreTrueAction):
            if not isinstance(value, bool):
                raise DomainError(f"config key {key!r} must be true or false")
            if value:
                tokens.append(flag)
        elif act.nargs == "+":
            if not isinstance(value, list) or not value:
                raise DomainError(f"config key {key!r} must be a non-empty list")
            tokens += [flag] + [str(v) for v in value]
        else:
            if isinstance(value, (list, dict)) or value is None:
                raise DomainError(f"config key {key!r} must be a scalar")
            tokens += [flag, str(value).lower() if isinstance(value, bool) else str(value)]
    return tokens


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("command", nargs="?")
        pre.add_argument("--config")
        early, _ = pre.parse_known_args(argv)
        if early.config and early.command in parser.subcommands:
            tokens = _config_tokens(parser.subcommands[early.command], early.config)
            # explicit flags come last so they override the file
            argv = [argv[0]] + tokens + argv[1:]
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        err = exc
    except (DomainError, ValueError, OSError) as exc:
        err = CliError(EXIT_INVALID, type(exc).__name__, str(exc))
    sys.stderr.write(json.dumps({"error": err.kind, "message": err.message, "exit_code": err.code},
                                sort_keys=True) + "\n")
    return err.code


if __name__ == "__main__":
    sys.exit(main())
