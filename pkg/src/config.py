"""
Multiscale Registration - Configuration Module
Manages SHARED settings, paths and constants, plus the per-run configuration
loaded from JSON and overridden by command-line flags
"""

import json
import platform
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path
from typing import Any, Dict, List, Optional

from src.core.errors import ConfigError, ParseError, ShapeError
from src.core.integrator import Scheme
from src.core.kernels import ScaleConfig
from src.core.shooting import OptimizerOptions, StepPolicy


class Config:
    """Main configuration class for SHARED application settings"""

    # ============== PATHS ==============
    PROJECT_ROOT = Path(__file__).parent.parent
    SRC_DIR = PROJECT_ROOT / "src"
    DATA_DIR = PROJECT_ROOT / "data"

    INPUT_DIR = DATA_DIR / "input"
    PROBLEMS_DIR = INPUT_DIR / "problems"
    CONFIGS_DIR = INPUT_DIR / "configs"
    OUTPUT_DIR = DATA_DIR / "output"

    RULES_DIR = DATA_DIR / "rules"

    # ============== NUMERICAL DEFAULTS ==============
    DEFAULT_SCHEME = "rk4"
    DEFAULT_STEPS = 50
    DEFAULT_DATA_WEIGHT = 1.0
    DEFAULT_SEED = 0
    DEFAULT_GRID_RESOLUTION = 11

    # ============== OUTPUT FORMAT ==============
    # 17 significant digits round-trip every double
    FLOAT_FORMAT = "%.17g"
    JSON_INDENT = 2

    RESULT_FILES = {
        'momenta': 'momenta.json',
        'trajectory': 'trajectory.csv',
        'sim_trajectory': 'sim_trajectory.csv',
        'history': 'history.csv',
        'report': 'report.json',
        'probes': 'probes.csv',
        'plot': 'trajectory.html',
        'check': 'check_report.csv',
    }

    # ============== EXIT CODES ==============
    EXIT_CODES = {
        'success': 0,
        'invariant_failure': 1,
        'shape_error': 2,
        'config_error': 3,
        'stagnation': 4,
        'divergence': 5,
    }

    # ============== STATUS GLYPHS ==============
    STATUS_ICONS = {
        'success': '✅',
        'warning': '⚠️',
        'failure': '❌',
        'target': '🎯',
        'stats': '📊',
        'search': '🔍',
    }

    # ============== RULES ENGINE CONFIGURATION ==============
    RULES_FILES = {
        'invariants': 'invariant_rules.json',
    }

    CHECK_SUITES = ['kernels', 'sim', 'hamiltonian', 'integrator', 'momentum', 'shooting']

    # ============== HELPER METHODS ==============
    @classmethod
    def create_directories(cls):
        """Create all required directories if they don't exist"""
        for directory in [cls.DATA_DIR, cls.INPUT_DIR, cls.PROBLEMS_DIR, cls.CONFIGS_DIR,
                          cls.OUTPUT_DIR, cls.RULES_DIR]:
            directory.mkdir(parents=True, exist_ok=True)

    @classmethod
    def get_rules_path(cls, rules_type: str) -> Optional[Path]:
        """Get path to a specific rules file"""
        if rules_type in cls.RULES_FILES:
            return cls.RULES_DIR / cls.RULES_FILES[rules_type]
        return None

    @classmethod
    def load_rules_engine(cls, rules_type: str = 'invariants'):
        """Load a specific rules engine"""
        from src.core.rules_engine import RulesEngine

        rules_path = cls.get_rules_path(rules_type)
        if rules_path is None or not rules_path.exists():
            raise ConfigError(f"Rules file not found: {rules_type}")
        return RulesEngine(str(rules_path))

    @classmethod
    def get_environment_info(cls) -> Dict[str, Any]:
        """Get current environment information"""
        import joblib
        import numpy
        import pandas
        import scipy

        return {
            'python': platform.python_version(),
            'platform': platform.platform(),
            'numpy': numpy.__version__,
            'scipy': scipy.__version__,
            'pandas': pandas.__version__,
            'joblib': joblib.__version__,
            'rules_files': {
                name: cls.get_rules_path(name).exists() for name in cls.RULES_FILES
            },
        }


# ============== RUN CONFIGURATION ==============

SCHEMES = tuple(s.value for s in Scheme)
STEP_POLICIES = tuple(p.value for p in StepPolicy)

_OPTIMIZER = OptimizerOptions()


@dataclass
class ScaleSettings:
    sigmas: List[float] = field(default_factory=lambda: [1.0])
    d: Optional[int] = None


@dataclass
class IntegratorSettings:
    scheme: str = Config.DEFAULT_SCHEME
    n_steps: int = Config.DEFAULT_STEPS
    project_rotation: bool = False


@dataclass
class OptimizerSettings:
    """Defaults are those of the shooting optimizer itself"""
    max_iters: int = _OPTIMIZER.max_iters
    grad_tol: float = _OPTIMIZER.grad_tol
    armijo_c: float = _OPTIMIZER.armijo_c
    initial_step: float = _OPTIMIZER.initial_step
    step_policy: str = _OPTIMIZER.step_policy.value
    max_halvings: int = _OPTIMIZER.max_halvings
    multi_start: int = _OPTIMIZER.multi_start
    multi_start_scale: float = _OPTIMIZER.multi_start_scale


@dataclass
class ProbeGridSettings:
    bounds: Optional[List[List[float]]] = None
    resolution: int = Config.DEFAULT_GRID_RESOLUTION
    scale: Optional[int] = None


@dataclass
class RunConfig:
    """Everything one command invocation needs besides the points file"""
    scales: ScaleSettings = field(default_factory=ScaleSettings)
    integrator: IntegratorSettings = field(default_factory=IntegratorSettings)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    probes: ProbeGridSettings = field(default_factory=ProbeGridSettings)
    data_weight: float = Config.DEFAULT_DATA_WEIGHT
    data_scales: Optional[List[int]] = None
    sim_enabled: bool = False
    output_dir: str = str(Config.OUTPUT_DIR)
    seed: int = Config.DEFAULT_SEED
    threads: int = 1

    _SECTIONS = {
        'scales': ScaleSettings,
        'integrator': IntegratorSettings,
        'optimizer': OptimizerSettings,
        'probes': ProbeGridSettings,
    }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("Run configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown configuration keys: {sorted(unknown)}")

        kwargs = {}
        for key, value in data.items():
            section = cls._SECTIONS.get(key)
            if section is None:
                kwargs[key] = value
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"Section '{key}' must be an object")
            section_keys = {f.name for f in fields(section)}
            bad = set(value) - section_keys
            if bad:
                raise ConfigError(f"Unknown keys in '{key}': {sorted(bad)}")
            kwargs[key] = section(**value)
        config = cls(**kwargs)
        config.validate()
        return config

    def validate(self) -> "RunConfig":
        """Check every setting; raises ConfigError on the first violation"""
        sigmas = self.scales.sigmas
        if not isinstance(sigmas, list) or not sigmas:
            raise ConfigError(f"Kernel widths must be a non-empty list, got {sigmas!r}")
        if any(not _is_number(s) or s <= 0 for s in sigmas):
            raise ConfigError(f"Kernel widths must be positive numbers, got {sigmas}")
        if any(b >= a for a, b in zip(sigmas, sigmas[1:])):
            raise ConfigError(f"Kernel widths must be strictly decreasing, got {sigmas}")
        if self.scales.d is not None and (not _is_int(self.scales.d) or self.scales.d < 1):
            raise ConfigError(f"Dimension must be a positive integer, got {self.scales.d!r}")

        if self.integrator.scheme not in SCHEMES:
            raise ConfigError(f"Scheme must be one of {SCHEMES}, got {self.integrator.scheme!r}")
        if not _is_int(self.integrator.n_steps) or self.integrator.n_steps < 1:
            raise ConfigError(f"Step count must be an integer >= 1, got {self.integrator.n_steps!r}")
        if not isinstance(self.integrator.project_rotation, bool):
            raise ConfigError(f"project_rotation must be true or false, got {self.integrator.project_rotation!r}")

        opt = self.optimizer
        if opt.step_policy not in STEP_POLICIES:
            raise ConfigError(f"Step policy must be one of {STEP_POLICIES}, got {opt.step_policy!r}")
        for name in ('max_iters', 'max_halvings', 'multi_start'):
            if not _is_int(getattr(opt, name)):
                raise ConfigError(f"optimizer.{name} must be an integer, got {getattr(opt, name)!r}")
        for name in ('grad_tol', 'armijo_c', 'initial_step', 'multi_start_scale'):
            if not _is_number(getattr(opt, name)):
                raise ConfigError(f"optimizer.{name} must be a number, got {getattr(opt, name)!r}")
        if opt.max_iters < 0:
            raise ConfigError(f"max_iters must be a non-negative integer, got {opt.max_iters}")
        if not opt.grad_tol > 0 or not 0 < opt.armijo_c < 1 or not opt.initial_step > 0:
            raise ConfigError("Optimizer requires grad_tol > 0, 0 < armijo_c < 1 and initial_step > 0")
        if opt.max_halvings < 0 or opt.multi_start < 1 or opt.multi_start_scale < 0:
            raise ConfigError("Optimizer requires max_halvings >= 0, multi_start >= 1, multi_start_scale >= 0")

        if not _is_number(self.data_weight) or not self.data_weight > 0:
            raise ConfigError(f"Data weight must be positive, got {self.data_weight!r}")
        if self.data_scales is not None and (
                not isinstance(self.data_scales, list) or not self.data_scales
                or not all(_is_int(s) and 1 <= s <= len(sigmas) for s in self.data_scales)):
            raise ConfigError(f"Data scales must be a non-empty list of scales in 1..{len(sigmas)}, "
                              f"got {self.data_scales!r}")
        if not isinstance(self.sim_enabled, bool):
            raise ConfigError(f"sim_enabled must be true or false, got {self.sim_enabled!r}")

        grid = self.probes
        if grid.bounds is not None:
            if not isinstance(grid.bounds, list) or any(
                    not isinstance(pair, list) or len(pair) != 2 or not all(_is_number(v) for v in pair)
                    for pair in grid.bounds):
                raise ConfigError(f"Probe grid bounds must be a list of [low, high] number pairs, got {grid.bounds!r}")
            if any(not lo < hi for lo, hi in grid.bounds):
                raise ConfigError(f"Probe grid bounds must be well ordered, got {grid.bounds}")
        if not _is_int(grid.resolution) or grid.resolution < 1:
            raise ConfigError(f"Probe grid resolution must be an integer >= 1, got {grid.resolution!r}")
        if grid.scale is not None and (not _is_int(grid.scale) or not 1 <= grid.scale <= len(sigmas)):
            raise ConfigError(f"Probe scale {grid.scale!r} out of range 1..{len(sigmas)}")

        if not isinstance(self.output_dir, str):
            raise ConfigError(f"output_dir must be a path string, got {self.output_dir!r}")
        if not _is_int(self.seed):
            raise ConfigError(f"Seed must be an integer, got {self.seed!r}")
        if not _is_int(self.threads) or self.threads < 1:
            raise ConfigError(f"Thread count must be >= 1, got {self.threads!r}")
        return self

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        """New config with dotted keys ('optimizer.max_iters') replaced; None values are skipped"""
        data = self.to_dict()
        for key, value in overrides.items():
            if value is None:
                continue
            target = data
            parts = key.split('.')
            for part in parts[:-1]:
                target = target[part]
            target[parts[-1]] = value
        return RunConfig.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON serialization"""
        return asdict(self)

    def scale_config(self, d: int):
        """ScaleConfig for points of dimension d"""
        if self.scales.d is not None and self.scales.d != d:
            raise ShapeError(f"Configuration declares d={self.scales.d} but the points have d={d}")
        return ScaleConfig(d, tuple(self.scales.sigmas))

    def optimizer_options(self):
        """OptimizerOptions for the shooting optimizer"""
        opt = self.optimizer
        return OptimizerOptions(
            max_iters=opt.max_iters,
            grad_tol=opt.grad_tol,
            armijo_c=opt.armijo_c,
            initial_step=opt.initial_step,
            step_policy=StepPolicy(opt.step_policy),
            max_halvings=opt.max_halvings,
            multi_start=opt.multi_start,
            multi_start_scale=opt.multi_start_scale,
            seed=self.seed,
            n_jobs=self.threads,
        )


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def load_run_config(path: Optional[str] = None) -> RunConfig:
    """Load and validate a run configuration; defaults when no path is given"""
    if path is None:
        return RunConfig().validate()
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        data = json.loads(config_path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path=str(config_path), line=e.lineno) from e
    return RunConfig.from_dict(data)


# Create directories on import
Config.create_directories()

PROJECT_ROOT = Config.PROJECT_ROOT
DATA_DIR = Config.DATA_DIR
