import argparse
import csv
import io
import json
import sys

import numpy as np

from errors import NumericalError, ValidationError
from field import LEFT, RIGHT, solve_field, symmetrizing_amplitude
from log import LogManager
from modes import pt_pair_check, reflectionless_modes, trace_exceptional_point
from perturb import (
    CENTERS,
    EDGES,
    DesignProblem,
    design_strengths,
    epsilon_sweep,
    pairing_check,
    ptr_window,
    shift_table,
)
from potential import StructureSpec, resolve_positions, structure_from_dict
from retry_handler import create_continuation_retry_handler
from settings import SolverSettings
from transfer import find_ptrs, locate_peak, nth_band, transmission

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

COMMANDS = ("spectrum", "ptrs", "field", "shift", "design", "pairs", "modes", "sweep", "ep-trace")


def fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def parse_int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"{flag} expects comma-separated integers, got {text!r}") from None


def parse_positions(text: str) -> tuple[str, list[float]]:
    kind, sep, values = text.partition(":")
    if not sep or kind not in (CENTERS, EDGES, "abs"):
        raise ValidationError(f"--positions expects centers:p,... | edges:p,... | abs:x,..., got {text!r}")
    try:
        numbers = [float(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"--positions has a non-numeric entry: {text!r}") from None
    if not numbers:
        raise ValidationError("--positions lists no positions")
    return kind, numbers


def parse_fixed(text: str) -> dict[int, float]:
    fixed = {}
    for item in text.split(","):
        name, sep, value = item.strip().partition("=")
        if not sep or not name.startswith("c") or not name[1:].isdigit():
            raise ValidationError(f"--fix expects cI=value entries, got {item!r}")
        try:
            fixed[int(name[1:]) - 1] = float(value)
        except ValueError:
            raise ValidationError(f"--fix value for {name} is not a number: {value!r}") from None
    return fixed


def parse_seeds(text: str) -> list[complex]:
    try:
        return [complex(v.strip().replace(" ", "")) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"--seeds expects re+imj values, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="main.py",
        description="Perfect transmission resonances of finite periodic structures and their protection.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--input", required=True, help="structure JSON")
    parser.add_argument("--out", help="output file (stdout when omitted)")
    parser.add_argument("--kmin", type=float)
    parser.add_argument("--kmax", type=float)
    parser.add_argument("--points", type=int)
    parser.add_argument("--epsilon", type=float)
    parser.add_argument("--protect")
    parser.add_argument("--positions")
    parser.add_argument("--fix")
    parser.add_argument("--seeds")
    parser.add_argument("--side", choices=(LEFT, RIGHT), default=LEFT)
    parser.add_argument("--d", type=float, default=1.0, help="rescale outputs to a cell period d")
    return parser


class RunController:
    """Runs one CLI command with settings, logging and output handling."""

    def __init__(self, args, settings=None, stderr=None):
        self.args = args
        self.settings = settings or SolverSettings()
        self.stderr = stderr or sys.stderr
        self.log_manager = LogManager(history_file=self.settings.get_history_file(),
                                      max_history_entries=self.settings.get_history_max_entries())
        self.log_manager.log_updated.connect(self._echo)
        self.log_manager.run_completed.connect(self._summarize)
        if args.d <= 0:
            raise ValidationError(f"--d must be > 0, got {args.d!r}")

    def _echo(self, message, level):
        print(f"{level:<8} {message}", file=self.stderr)

    def _summarize(self, run):
        artifacts = ", ".join(run.get("artifacts") or []) or "stdout"
        print(f"{'DONE':<8} {run['command']} {run['status']} in {run['duration']} -> {artifacts}",
              file=self.stderr)

    # Input ----------------------------------------------------------------------

    def load_structure(self) -> StructureSpec:
        try:
            with open(self.args.input, "r", encoding="utf-8") as f:
                data = json.load(f)
        except OSError as e:
            raise ValidationError(f"cannot read --input {self.args.input!r}: {e.strerror}") from None
        except json.JSONDecodeError as e:
            raise ValidationError(f"--input is not valid JSON: {e}") from None
        spec = structure_from_dict(data)
        if self.args.epsilon is not None and self.args.command in ("spectrum", "modes", "field"):
            spec = spec.with_epsilon(self.args.epsilon)
        return spec

    def require(self, *names):
        for name in names:
            if getattr(self.args, name) is None:
                raise ValidationError(f"{self.args.command} needs --{name}")

    def unperturbed_ptrs(self, spec):
        cell, n_cells = spec.cell, spec.n_cells
        density = self.settings.get_scan_density()
        if self.args.kmin is not None and self.args.kmax is not None and self.args.command == "ptrs":
            band = (self.args.kmin, self.args.kmax)
        else:
            band = nth_band(cell, 1, density, self.settings.get_edge_tolerance())
        return find_ptrs(cell, n_cells, band, density=density, log_manager=self.log_manager)

    def protect_indices(self):
        self.require("protect")
        indices = parse_int_list(self.args.protect, "--protect")
        if not indices:
            raise ValidationError("--protect lists no PTR index")
        return indices

    def first_protect(self) -> int:
        return self.protect_indices()[0]

    def design(self, spec0, ptrs):
        self.require("positions", "fix", "protect")
        kind, values = parse_positions(self.args.positions)
        positions = resolve_positions(spec0, kind, values)
        problem = DesignProblem(spec0, tuple(positions), parse_fixed(self.args.fix), tuple(self.protect_indices()),
                                tuple(ptrs))
        result = design_strengths(problem, self.settings.get_max_condition(), self.log_manager)
        return kind, result

    # Output ---------------------------------------------------------------------

    def emit(self, header, rows):
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
        self._write(buffer.getvalue())

    def emit_json(self, payload):
        self._write(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    def _write(self, text):
        if self.args.out:
            with open(self.args.out, "w", encoding="utf-8", newline="\n") as f:
                f.write(text)
        else:
            sys.stdout.write(text)

    def k_out(self, k):
        return k / self.args.d

    def x_out(self, x):
        return x * self.args.d

    # Commands -------------------------------------------------------------------

    def run_spectrum(self):
        spec = self.load_structure()
        self.require("kmin", "kmax")
        points = self.args.points or self.settings.get_spectrum_points()
        if points < 2 or not 0 < self.args.kmin < self.args.kmax:
            raise ValidationError("spectrum needs 0 < --kmin < --kmax and --points >= 2")
        ks = np.linspace(self.args.kmin, self.args.kmax, points)
        values = transmission(spec, ks)
        self.emit(("k", "T_N"), ((self.k_out(k), t) for k, t in zip(ks, values)))

    def run_ptrs(self):
        spec = self.load_structure()
        ptrs = self.unperturbed_ptrs(spec)
        self.emit(("band", "n", "phi_n", "k", "T_N", "kind"),
                  ((p.band_index, p.n, p.phi_n, self.k_out(p.k), p.transmission, p.kind) for p in ptrs))

    def run_field(self):
        spec = self.load_structure()
        spec0 = spec.unperturbed
        if self.args.protect is not None:
            n = self.first_protect()
            ptrs = self.unperturbed_ptrs(spec0)
            ptr = next((p for p in ptrs if p.n == n and p.kind == "bloch"), None)
            if ptr is None:
                raise ValidationError(f"--protect {n}: no such PTR")
            k = ptr.k
            if spec.epsilon > 0:
                window = ptr_window(spec0, ptr, ptrs)
                k, T = locate_peak(spec, k - window, k + window)
                self.log_manager.log("INFO", f"tracked peak at k = {k:.12g} with T = {T:.12g}")
            amplitude = symmetrizing_amplitude(k, spec.total_length, n)
        else:
            self.require("kmin")
            k, amplitude = self.args.kmin, 1.0
        wave = solve_field(spec, k, self.args.side, amplitude,
                           self.settings.get_field_min_samples(), self.settings.get_field_samples_per_phase())
        self.emit(("x", "re_psi", "im_psi", "abs_psi", "re_dpsi", "im_dpsi"),
                  ((self.x_out(x), *rest) for x, *rest in wave.rows()))

    def run_shift(self):
        spec = self.load_structure()
        spec0 = spec.unperturbed
        ptrs = [p for p in self.unperturbed_ptrs(spec0) if p.kind == "bloch"]
        table = shift_table(spec0, ptrs, spec.perturbation, self.settings.get_protect_tolerance())
        self.emit(("n", "k0", "re_k1", "im_k1", "protected"),
                  ((s.n, self.k_out(s.k0), self.k_out(s.k1.real), self.k_out(s.k1.imag), s.protected)
                   for s in table))

    def run_design(self):
        spec0 = self.load_structure().unperturbed
        _, result = self.design(spec0, self.unperturbed_ptrs(spec0))
        payload = result.as_dict()
        payload["positions"] = [self.x_out(x) for x in result.positions]
        payload["strengths"] = [c / self.args.d for c in result.strengths]
        self.emit_json(payload)

    def run_pairs(self):
        spec0 = self.load_structure().unperturbed
        ptrs = self.unperturbed_ptrs(spec0)
        kind, result = self.design(spec0, ptrs)
        if kind not in (CENTERS, EDGES):
            raise ValidationError("pairs needs --positions centers:... or edges:...")
        report = pairing_check(spec0, kind, result, result.targets[0], ptrs,
                               self.settings.get_protect_tolerance(), self.log_manager)
        self.emit(("n", "k0", "re_k1", "im_k1", "protected", "expected"),
                  ((s.n, self.k_out(s.k0), self.k_out(s.k1.real), self.k_out(s.k1.imag), s.protected,
                    s.n in report.expected) for s in report.table))

    def run_modes(self):
        spec = self.load_structure()
        if self.args.seeds is not None:
            seeds = parse_seeds(self.args.seeds)
        else:
            seeds = [complex(p.k) for p in self.unperturbed_ptrs(spec.unperturbed) if p.kind == "bloch"]
        modes = reflectionless_modes(spec, seeds, self.settings.get_newton_max_iterations(),
                                     self.settings.get_newton_tolerance(), self.settings.get_newton_step_scale(),
                                     self.log_manager)
        report = pt_pair_check(modes, spec)
        self.log_manager.log("INFO" if report.closed or not report.applicable else "WARNING", report.message)
        self.emit(("re_k", "im_k", "residual", "is_real"),
                  ((self.k_out(m.k.real), self.k_out(m.k.imag), m.residual, m.is_real) for m in modes))

    def run_sweep(self):
        spec = self.load_structure()
        spec0 = spec.unperturbed
        self.require("epsilon")
        n = self.first_protect()
        points = self.args.points or 40
        if self.args.epsilon <= 0 or points < 2:
            raise ValidationError("sweep needs --epsilon > 0 and --points >= 2")
        ptrs = [p for p in self.unperturbed_ptrs(spec0) if p.kind == "bloch"]
        ptr = next((p for p in ptrs if p.n == n), None)
        if ptr is None:
            raise ValidationError(f"--protect {n}: no such PTR")
        grid = np.geomspace(self.args.epsilon / 10, self.args.epsilon, points)
        result = epsilon_sweep(spec0, spec.perturbation, ptr, grid, ptrs, self.log_manager)
        self.log_manager.log("INFO", f"fitted slope {result.fitted_slope:.6g}")
        self.emit(("epsilon", "peak_k", "peak_T", "one_minus_T"),
                  ((e, self.k_out(k), t, q) for e, k, t, q in result.rows()))

    def run_ep_trace(self):
        spec = self.load_structure()
        spec0 = spec.unperturbed
        self.require("epsilon")
        points = self.args.points or 41
        if self.args.epsilon <= 0 or points < 2:
            raise ValidationError("ep-trace needs --epsilon > 0 and --points >= 2")
        if self.args.seeds is not None:
            seeds = parse_seeds(self.args.seeds)
        else:
            wanted = self.protect_indices()
            ptrs = self.unperturbed_ptrs(spec0)
            seeds = [complex(p.k) for n in wanted for p in ptrs if p.n == n and p.kind == "bloch"]
        if len(seeds) != 2:
            raise ValidationError("ep-trace needs exactly two modes (--protect n1,n2 or --seeds)")
        handler = create_continuation_retry_handler(self.settings.get_max_halvings(), self.log_manager)
        grid = np.linspace(0.0, self.args.epsilon, points)
        trace = trace_exceptional_point(spec0, spec.perturbation, seeds, grid,
                                        max_iterations=self.settings.get_newton_max_iterations(),
                                        tol=self.settings.get_newton_tolerance(),
                                        step_scale=self.settings.get_newton_step_scale(),
                                        retry_handler=handler, log_manager=self.log_manager)
        self.emit(("epsilon", "re_ka", "im_ka", "re_kb", "im_kb", "gap"),
                  ((e, self.k_out(a), self.k_out(b), self.k_out(c), self.k_out(d), self.k_out(g))
                   for e, a, b, c, d, g in trace.rows()))

    def run(self) -> int:
        self.log_manager.start_run_session(self.args.command, self.args.input)
        handler = getattr(self, "run_" + self.args.command.replace("-", "_"))
        try:
            handler()
        except ValidationError as e:
            self.log_manager.complete_run_session(False, str(e))
            return EXIT_VALIDATION
        except NumericalError as e:
            self.log_manager.complete_run_session(False, str(e))
            return EXIT_NUMERICAL
        self.log_manager.complete_run_session(True, artifacts=[self.args.out] if self.args.out else None)
        return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_VALIDATION
    try:
        controller = RunController(args)
    except ValidationError as e:
        print(f"ERROR    {e}", file=sys.stderr)
        return EXIT_VALIDATION
    return controller.run()


if __name__ == "__main__":
    sys.exit(main())
