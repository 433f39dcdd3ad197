import os

from PyQt6.QtCore import QSettings


SETTINGS_ENV = "PTR_DESIGN_SETTINGS"


class SolverSettings:
    """Typed accessors for solver defaults using QSettings."""

    ORG = "PTRDesign"
    APP = "Solver"

    def __init__(self, path: str | None = None):
        path = path or os.environ.get(SETTINGS_ENV)
        if path:
            self._qs = QSettings(path, QSettings.Format.IniFormat)
        else:
            self._qs = QSettings(SolverSettings.ORG, SolverSettings.APP)

    def file_name(self) -> str:
        return self._qs.fileName()

    def sync(self) -> None:
        self._qs.sync()

    # Band scan
    def get_scan_density(self) -> int:
        return int(self._qs.value("scan/points_per_unit_k", 2048))

    def set_scan_density(self, points: int) -> None:
        self._qs.setValue("scan/points_per_unit_k", max(64, min(65536, int(points))))

    def get_edge_tolerance(self) -> float:
        return float(self._qs.value("scan/edge_tolerance", 1e-12))

    def set_edge_tolerance(self, tol: float) -> None:
        self._qs.setValue("scan/edge_tolerance", max(1e-15, min(1e-6, float(tol))))

    # Field sampling
    def get_field_min_samples(self) -> int:
        return int(self._qs.value("field/min_samples", 64))

    def set_field_min_samples(self, samples: int) -> None:
        self._qs.setValue("field/min_samples", max(8, min(100000, int(samples))))

    def get_field_samples_per_phase(self) -> int:
        return int(self._qs.value("field/samples_per_phase", 16))

    def set_field_samples_per_phase(self, samples: int) -> None:
        self._qs.setValue("field/samples_per_phase", max(2, min(4096, int(samples))))

    # Newton solver for reflectionless modes
    def get_newton_max_iterations(self) -> int:
        return int(self._qs.value("newton/max_iterations", 100))

    def set_newton_max_iterations(self, iterations: int) -> None:
        self._qs.setValue("newton/max_iterations", max(5, min(10000, int(iterations))))

    def get_newton_tolerance(self) -> float:
        return float(self._qs.value("newton/tolerance", 1e-12))

    def set_newton_tolerance(self, tol: float) -> None:
        self._qs.setValue("newton/tolerance", max(1e-15, min(1e-6, float(tol))))

    def get_newton_step_scale(self) -> float:
        return float(self._qs.value("newton/step_scale", 1e-7))

    def set_newton_step_scale(self, scale: float) -> None:
        self._qs.setValue("newton/step_scale", max(1e-10, min(1e-3, float(scale))))

    # Perturbation and design
    def get_protect_tolerance(self) -> float:
        return float(self._qs.value("perturb/protect_tolerance", 1e-10))

    def set_protect_tolerance(self, tol: float) -> None:
        self._qs.setValue("perturb/protect_tolerance", max(1e-15, min(1e-3, float(tol))))

    def get_max_condition(self) -> float:
        return float(self._qs.value("perturb/max_condition", 1e12))

    def set_max_condition(self, cond: float) -> None:
        self._qs.setValue("perturb/max_condition", max(1e3, min(1e16, float(cond))))

    def get_max_halvings(self) -> int:
        return int(self._qs.value("continuation/max_halvings", 8))

    def set_max_halvings(self, halvings: int) -> None:
        self._qs.setValue("continuation/max_halvings", max(0, min(30, int(halvings))))

    # Output
    def get_spectrum_points(self) -> int:
        return int(self._qs.value("output/spectrum_points", 2000))

    def set_spectrum_points(self, points: int) -> None:
        self._qs.setValue("output/spectrum_points", max(2, min(10_000_000, int(points))))

    # Run history
    def get_history_max_entries(self) -> int:
        return int(self._qs.value("history/max_entries", 50))

    def set_history_max_entries(self, entries: int) -> None:
        self._qs.setValue("history/max_entries", max(1, min(10000, int(entries))))

    def get_history_file(self) -> str:
        default = os.path.join(os.path.dirname(self.file_name()) or ".", "run_history.json")
        return str(self._qs.value("history/file", default))

    def set_history_file(self, path: str) -> None:
        self._qs.setValue("history/file", str(path))

    def reset_to_defaults(self) -> None:
        """Drop every stored value so the getters fall back to defaults."""
        self._qs.clear()
        self._qs.sync()
